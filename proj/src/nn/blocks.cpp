#include "saii/nn/blocks.hpp"

#include "saii/error.hpp"

namespace saii::nn {

int default_groups(int channels) {
  for (int g : {8, 4, 2})
    if (channels % g == 0 && channels >= 2 * g) return g;
  return 1;
}

// ---------------------------------------------------------------------------
// ResBlock

ResBlock::ResBlock(int cin, int cout, int temb_dim, std::mt19937_64& rng)
    : cin_(cin), cout_(cout), temb_dim_(temb_dim),
      gn1_(cin, default_groups(cin)), gn2_(cout, default_groups(cout)),
      conv1_(cin, cout, 3, 1, rng), conv2_(cout, cout, 3, 1, rng, 0.0f) {
  if (temb_dim > 0) temb_proj_.emplace(temb_dim, cout, rng);
  if (cin != cout) skip_.emplace(cin, cout, 1, 1, rng);
}

template <class Self>
Tensor ResBlock::run(Self& self, const Tensor& x, const Tensor* temb) {
  Tensor h = run_layer(self.gn1_, x);
  h = run_layer(self.act1_, h);
  h = run_layer(self.conv1_, h);
  if (self.temb_proj_) {
    if (!temb) throw DimensionError("ResBlock: time embedding required");
    const Tensor p = run_layer(*self.temb_proj_, run_layer(self.act_t_, *temb));
    for (int i = 0; i < h.n(); ++i)
      for (int c = 0; c < h.c(); ++c) {
        const float b = p.sample(i)[c];
        float* d = h.channel(i, c);
        for (std::size_t k = 0; k < h.plane(); ++k) d[k] += b;
      }
  }
  h = run_layer(self.gn2_, h);
  h = run_layer(self.act2_, h);
  h = run_layer(self.conv2_, h);
  if (self.skip_) {
    h += run_layer(*self.skip_, x);
  } else {
    h += x;
  }
  return h;
}

Tensor ResBlock::forward(const Tensor& x, const Tensor* temb) const { return run(*this, x, temb); }
Tensor ResBlock::forward_train(const Tensor& x, const Tensor* temb) { return run(*this, x, temb); }

Tensor ResBlock::backward(const Tensor& gy, Tensor* gtemb) {
  Tensor g = conv2_.backward(gy);
  g = act2_.backward(g);
  g = gn2_.backward(g);
  if (temb_proj_) {
    Tensor gp(g.n(), g.c(), 1, 1);
    for (int i = 0; i < g.n(); ++i)
      for (int c = 0; c < g.c(); ++c) {
        const float* s = g.channel(i, c);
        double acc = 0.0;
        for (std::size_t k = 0; k < g.plane(); ++k) acc += s[k];
        gp.sample(i)[c] = static_cast<float>(acc);
      }
    const Tensor ge = act_t_.backward(temb_proj_->backward(gp));
    if (gtemb) *gtemb += ge;
  }
  g = conv1_.backward(g);
  g = act1_.backward(g);
  g = gn1_.backward(g);
  if (skip_) {
    g += skip_->backward(gy);
  } else {
    g += gy;
  }
  return g;
}

void ResBlock::visit(const std::string& prefix, const Visitor& fn) {
  gn1_.visit(prefix + "gn1.", fn);
  conv1_.visit(prefix + "conv1.", fn);
  if (temb_proj_) temb_proj_->visit(prefix + "temb.", fn);
  gn2_.visit(prefix + "gn2.", fn);
  conv2_.visit(prefix + "conv2.", fn);
  if (skip_) skip_->visit(prefix + "skip.", fn);
}

// ---------------------------------------------------------------------------
// UNet

void UNetConfig::validate() const {
  if (in_channels < 1 || out_channels < 1) throw ParameterError("UNet: channel counts must be >= 1");
  if (base_width < 4) throw ParameterError("UNet: base_width must be >= 4");
  if (mults.empty()) throw ParameterError("UNet: mults must be non-empty");
  for (int m : mults)
    if (m < 1) throw ParameterError("UNet: mults must be >= 1");
}

nlohmann::json UNetConfig::to_json() const {
  return {{"in_channels", in_channels}, {"out_channels", out_channels}, {"base_width", base_width},
          {"mults", mults}, {"time_conditioned", time_conditioned}};
}

UNetConfig UNetConfig::from_json(const nlohmann::json& j) {
  UNetConfig c;
  c.in_channels = j.at("in_channels").get<int>();
  c.out_channels = j.at("out_channels").get<int>();
  c.base_width = j.at("base_width").get<int>();
  c.mults = j.at("mults").get<std::vector<int>>();
  c.time_conditioned = j.at("time_conditioned").get<bool>();
  return c;
}

UNet::UNet(const UNetConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  cfg_.validate();
  const int levels = static_cast<int>(cfg_.mults.size());
  std::vector<int> w;
  for (int m : cfg_.mults) w.push_back(cfg_.base_width * m);
  if (cfg_.time_conditioned) {
    temb_dim_ = 4 * cfg_.base_width;
    temb1_.emplace(cfg_.base_width, temb_dim_, rng);
    temb2_.emplace(temb_dim_, temb_dim_, rng);
  }
  conv_in_ = Conv2d(cfg_.in_channels, w[0], 3, 1, rng);
  int prev = w[0];
  for (int i = 0; i < levels; ++i) {
    down_.push_back(std::make_unique<ResBlock>(prev, w[static_cast<std::size_t>(i)], temb_dim_, rng));
    prev = w[static_cast<std::size_t>(i)];
    if (i + 1 < levels) downsample_.emplace_back(prev, prev, 3, 2, rng);
  }
  mid_ = std::make_unique<ResBlock>(prev, prev, temb_dim_, rng);
  for (int i = 0; i + 1 < levels; ++i) {
    const int below = w[static_cast<std::size_t>(i + 1)], here = w[static_cast<std::size_t>(i)];
    up_.push_back(std::make_unique<ResBlock>(below + here, here, temb_dim_, rng));
  }
  norm_out_ = GroupNorm(w[0], default_groups(w[0]));
  conv_out_ = Conv2d(w[0], cfg_.out_channels, 3, 1, rng, 0.0f);
}

template <class Self>
Tensor UNet::run(Self& self, const Tensor& x, std::span<const float> t) {
  const int levels = static_cast<int>(self.cfg_.mults.size());
  const int div = 1 << (levels - 1);
  if (x.c() != self.cfg_.in_channels) throw DimensionError("UNet: input channel mismatch");
  if (x.h() % div != 0 || x.w() % div != 0)
    throw DimensionError("UNet: spatial dims must be divisible by " + std::to_string(div));

  Tensor emb;
  const Tensor* embp = nullptr;
  if (self.cfg_.time_conditioned) {
    if (t.size() != static_cast<std::size_t>(x.n())) throw DimensionError("UNet: one timestep per sample required");
    emb = run_layer(*self.temb1_, timestep_embedding(t, self.cfg_.base_width));
    emb = run_layer(*self.temb2_, run_layer(self.temb_act_, emb));
    embp = &emb;
  }

  Tensor h = run_layer(self.conv_in_, x);
  std::vector<Tensor> skips;
  for (int i = 0; i < levels; ++i) {
    h = run_layer(like<Self>(*self.down_[static_cast<std::size_t>(i)]), h, embp);
    if (i + 1 < levels) {
      skips.push_back(h);
      h = run_layer(self.downsample_[static_cast<std::size_t>(i)], h);
    }
  }
  h = run_layer(like<Self>(*self.mid_), h, embp);
  for (int i = levels - 2; i >= 0; --i) {
    const Tensor up = upsample2x(h);
    const Tensor* parts[] = {&up, &skips[static_cast<std::size_t>(i)]};
    h = run_layer(like<Self>(*self.up_[static_cast<std::size_t>(i)]), concat_channels(parts), embp);
  }
  h = run_layer(self.norm_out_, h);
  h = run_layer(self.act_out_, h);
  return run_layer(self.conv_out_, h);
}

Tensor UNet::forward(const Tensor& x, std::span<const float> t) const { return run(*this, x, t); }
Tensor UNet::forward_train(const Tensor& x, std::span<const float> t) { return run(*this, x, t); }

Tensor UNet::backward(const Tensor& gy) {
  const int levels = static_cast<int>(cfg_.mults.size());
  Tensor gemb;
  Tensor* gembp = nullptr;
  if (cfg_.time_conditioned) {
    gemb = Tensor(gy.n(), temb_dim_, 1, 1);
    gembp = &gemb;
  }
  Tensor g = conv_out_.backward(gy);
  g = act_out_.backward(g);
  g = norm_out_.backward(g);

  std::vector<Tensor> gskips(static_cast<std::size_t>(std::max(0, levels - 1)));
  for (int i = 0; i + 1 < levels; ++i) {
    g = up_[static_cast<std::size_t>(i)]->backward(g, gembp);
    const int below = cfg_.base_width * cfg_.mults[static_cast<std::size_t>(i + 1)];
    const int here = cfg_.base_width * cfg_.mults[static_cast<std::size_t>(i)];
    const int sizes[] = {below, here};
    auto parts = split_channels(g, sizes);
    gskips[static_cast<std::size_t>(i)] = std::move(parts[1]);
    g = upsample2x_backward(parts[0]);
  }
  g = mid_->backward(g, gembp);
  for (int i = levels - 1; i >= 0; --i) {
    if (i + 1 < levels) {
      g = downsample_[static_cast<std::size_t>(i)].backward(g);
      g += gskips[static_cast<std::size_t>(i)];
    }
    g = down_[static_cast<std::size_t>(i)]->backward(g, gembp);
  }
  g = conv_in_.backward(g);

  if (cfg_.time_conditioned) temb1_->backward(temb_act_.backward(temb2_->backward(gemb)));
  return g;
}

void UNet::visit(const std::string& prefix, const Visitor& fn) {
  if (temb1_) {
    temb1_->visit(prefix + "temb1.", fn);
    temb2_->visit(prefix + "temb2.", fn);
  }
  conv_in_.visit(prefix + "conv_in.", fn);
  for (std::size_t i = 0; i < down_.size(); ++i) down_[i]->visit(prefix + "down" + std::to_string(i) + ".", fn);
  for (std::size_t i = 0; i < downsample_.size(); ++i)
    downsample_[i].visit(prefix + "downsample" + std::to_string(i) + ".", fn);
  mid_->visit(prefix + "mid.", fn);
  for (std::size_t i = 0; i < up_.size(); ++i) up_[i]->visit(prefix + "up" + std::to_string(i) + ".", fn);
  norm_out_.visit(prefix + "norm_out.", fn);
  conv_out_.visit(prefix + "conv_out.", fn);
}

}  // namespace saii::nn
