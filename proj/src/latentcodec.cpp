#include "saii/latentcodec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "saii/error.hpp"
#include "saii/io.hpp"
#include "saii/nn/checkpoint.hpp"
#include "saii/nn/optim.hpp"

namespace saii::codec {

// ---------------------------------------------------------------------------
// Config

int CodecConfig::levels() const {
  int l = 0;
  for (int f = downsample_factor; f > 1; f /= 2) ++l;
  return l;
}

void CodecConfig::validate() const {
  if (downsample_factor != 2 && downsample_factor != 4 && downsample_factor != 8)
    throw ValidationError("codec.downsample_factor must be 2, 4 or 8");
  if (codebook_size < 16) throw ValidationError("codec.codebook_size must be >= 16");
  if (latent_channels < 1) throw ValidationError("codec.latent_channels must be >= 1");
  if (base_width < 4) throw ValidationError("codec.base_width must be >= 4");
  if (!(commitment_beta > 0.0)) throw ValidationError("codec.commitment_beta must be > 0");
  if (!(lr > 0.0)) throw ValidationError("codec.lr must be > 0");
  if (epochs < 0 || batch_size < 1) throw ValidationError("codec.epochs >= 0 and batch_size >= 1 required");
  if (adversarial_weight < 0.0) throw ValidationError("codec.adversarial_weight must be >= 0");
}

nlohmann::json CodecConfig::to_json() const {
  return {{"downsample_factor", downsample_factor},
          {"latent_channels", latent_channels},
          {"codebook_size", codebook_size},
          {"base_width", base_width},
          {"commitment_beta", commitment_beta},
          {"use_adversarial", use_adversarial},
          {"adversarial_weight", adversarial_weight},
          {"adversarial_start_epoch", adversarial_start_epoch},
          {"quantize_on_decode", quantize_on_decode},
          {"lr", lr},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"grad_clip", grad_clip},
          {"seed", seed}};
}

CodecConfig CodecConfig::from_json(const nlohmann::json& j) {
  CodecConfig c;
  c.downsample_factor = j.value("downsample_factor", c.downsample_factor);
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.codebook_size = j.value("codebook_size", c.codebook_size);
  c.base_width = j.value("base_width", c.base_width);
  c.commitment_beta = j.value("commitment_beta", c.commitment_beta);
  c.use_adversarial = j.value("use_adversarial", c.use_adversarial);
  c.adversarial_weight = j.value("adversarial_weight", c.adversarial_weight);
  c.adversarial_start_epoch = j.value("adversarial_start_epoch", c.adversarial_start_epoch);
  c.quantize_on_decode = j.value("quantize_on_decode", c.quantize_on_decode);
  c.lr = j.value("lr", c.lr);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.seed = j.value("seed", c.seed);
  return c;
}

// ---------------------------------------------------------------------------
// Quantization

int Codebook::nearest(const double* v) const {
  if (size < 1) throw ParameterError("quantize: empty codebook");
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < size; ++k) {
    const float* e = row(k);
    double d = 0.0;
    for (int c = 0; c < dim; ++c) {
      const double diff = v[c] - e[c];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

QuantizeResult quantize(const LatentTensor& z_e, const Codebook& book) {
  if (book.size < 1) throw ParameterError("quantize: empty codebook");
  if (z_e.channels != book.dim) throw DimensionError("quantize: latent channels differ from codebook dim");
  QuantizeResult r;
  r.z_q = z_e.zeros_like();
  const int hw = z_e.height * z_e.width;
  r.indices.resize(static_cast<std::size_t>(hw));
  std::vector<double> v(static_cast<std::size_t>(book.dim));
  double sq = 0.0;
  for (int p = 0; p < hw; ++p) {
    for (int c = 0; c < book.dim; ++c) v[static_cast<std::size_t>(c)] = z_e.values[static_cast<std::size_t>(c) * hw + p];
    const int k = book.nearest(v.data());
    r.indices[static_cast<std::size_t>(p)] = k;
    for (int c = 0; c < book.dim; ++c) {
      const double e = book.row(k)[c];
      r.z_q.values[static_cast<std::size_t>(c) * hw + p] = e;
      sq += (v[static_cast<std::size_t>(c)] - e) * (v[static_cast<std::size_t>(c)] - e);
    }
  }
  const double mean = z_e.size() ? sq / static_cast<double>(z_e.size()) : 0.0;
  r.vq_loss = mean;
  r.commit_loss = mean;
  return r;
}

// ---------------------------------------------------------------------------
// Networks

namespace {
int width_at(const CodecConfig& cfg, int level) { return cfg.base_width << level; }
}  // namespace

Encoder::Encoder(const CodecConfig& cfg, std::mt19937_64& rng) {
  const int levels = cfg.levels();
  conv_in_ = nn::Conv2d(1, width_at(cfg, 0), 3, 1, rng);
  for (int i = 0; i < levels; ++i) {
    blocks_.push_back(std::make_unique<nn::ResBlock>(width_at(cfg, i), width_at(cfg, i), 0, rng));
    downs_.emplace_back(width_at(cfg, i), width_at(cfg, i + 1), 3, 2, rng);
  }
  const int top = width_at(cfg, levels);
  mid_ = std::make_unique<nn::ResBlock>(top, top, 0, rng);
  norm_out_ = nn::GroupNorm(top, nn::default_groups(top));
  conv_out_ = nn::Conv2d(top, cfg.latent_channels, 3, 1, rng);
}

template <class Self>
nn::Tensor Encoder::run(Self& self, const nn::Tensor& x) {
  nn::Tensor h = nn::run_layer(self.conv_in_, x);
  for (std::size_t i = 0; i < self.blocks_.size(); ++i) {
    h = nn::run_layer(nn::like<Self>(*self.blocks_[i]), h, nullptr);
    h = nn::run_layer(self.downs_[i], h);
  }
  h = nn::run_layer(nn::like<Self>(*self.mid_), h, nullptr);
  h = nn::run_layer(self.norm_out_, h);
  h = nn::run_layer(self.act_out_, h);
  return nn::run_layer(self.conv_out_, h);
}

nn::Tensor Encoder::forward(const nn::Tensor& x) const { return run(*this, x); }
nn::Tensor Encoder::forward_train(const nn::Tensor& x) { return run(*this, x); }

void Encoder::backward(const nn::Tensor& gy) {
  nn::Tensor g = conv_out_.backward(gy);
  g = act_out_.backward(g);
  g = norm_out_.backward(g);
  g = mid_->backward(g, nullptr);
  for (std::size_t i = blocks_.size(); i-- > 0;) {
    g = downs_[i].backward(g);
    g = blocks_[i]->backward(g, nullptr);
  }
  conv_in_.backward(g);
}

void Encoder::visit(const std::string& prefix, const nn::Visitor& fn) {
  conv_in_.visit(prefix + "conv_in.", fn);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i]->visit(prefix + "block" + std::to_string(i) + ".", fn);
    downs_[i].visit(prefix + "down" + std::to_string(i) + ".", fn);
  }
  mid_->visit(prefix + "mid.", fn);
  norm_out_.visit(prefix + "norm_out.", fn);
  conv_out_.visit(prefix + "conv_out.", fn);
}

Decoder::Decoder(const CodecConfig& cfg, std::mt19937_64& rng) {
  const int levels = cfg.levels();
  const int top = width_at(cfg, levels);
  conv_in_ = nn::Conv2d(cfg.latent_channels, top, 3, 1, rng);
  mid_ = std::make_unique<nn::ResBlock>(top, top, 0, rng);
  for (int i = 0; i < levels; ++i) {
    ups_.emplace_back(width_at(cfg, i + 1), width_at(cfg, i), 3, 1, rng);
    blocks_.push_back(std::make_unique<nn::ResBlock>(width_at(cfg, i), width_at(cfg, i), 0, rng));
  }
  norm_out_ = nn::GroupNorm(width_at(cfg, 0), nn::default_groups(width_at(cfg, 0)));
  conv_out_ = nn::Conv2d(width_at(cfg, 0), 1, 3, 1, rng);
}

template <class Self>
nn::Tensor Decoder::run(Self& self, const nn::Tensor& z) {
  nn::Tensor h = nn::run_layer(self.conv_in_, z);
  h = nn::run_layer(nn::like<Self>(*self.mid_), h, nullptr);
  for (std::size_t i = self.blocks_.size(); i-- > 0;) {
    h = nn::run_layer(self.ups_[i], nn::upsample2x(h));
    h = nn::run_layer(nn::like<Self>(*self.blocks_[i]), h, nullptr);
  }
  h = nn::run_layer(self.norm_out_, h);
  h = nn::run_layer(self.act_out_, h);
  return nn::run_layer(self.conv_out_, h);
}

nn::Tensor Decoder::forward(const nn::Tensor& z) const { return run(*this, z); }
nn::Tensor Decoder::forward_train(const nn::Tensor& z) { return run(*this, z); }

nn::Tensor Decoder::backward(const nn::Tensor& gy) {
  nn::Tensor g = conv_out_.backward(gy);
  g = act_out_.backward(g);
  g = norm_out_.backward(g);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    g = blocks_[i]->backward(g, nullptr);
    g = nn::upsample2x_backward(ups_[i].backward(g));
  }
  g = mid_->backward(g, nullptr);
  return conv_in_.backward(g);
}

void Decoder::visit(const std::string& prefix, const nn::Visitor& fn) {
  conv_in_.visit(prefix + "conv_in.", fn);
  mid_->visit(prefix + "mid.", fn);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    ups_[i].visit(prefix + "up" + std::to_string(i) + ".", fn);
    blocks_[i]->visit(prefix + "block" + std::to_string(i) + ".", fn);
  }
  norm_out_.visit(prefix + "norm_out.", fn);
  conv_out_.visit(prefix + "conv_out.", fn);
}

Discriminator::Discriminator(std::mt19937_64& rng, int width)
    : c1_(1, width, 3, 2, rng), c2_(width, 2 * width, 3, 2, rng), c3_(2 * width, 1, 3, 1, rng), bn2_(2 * width) {}

nn::Tensor Discriminator::forward_train(const nn::Tensor& x) {
  nn::Tensor h = a1_.forward_train(c1_.forward_train(x));
  h = a2_.forward_train(bn2_.forward_train(c2_.forward_train(h)));
  return c3_.forward_train(h);
}

nn::Tensor Discriminator::backward(const nn::Tensor& gy) {
  nn::Tensor g = c3_.backward(gy);
  g = c2_.backward(bn2_.backward(a2_.backward(g)));
  return c1_.backward(a1_.backward(g));
}

void Discriminator::visit(const std::string& prefix, const nn::Visitor& fn) {
  c1_.visit(prefix + "c1.", fn);
  c2_.visit(prefix + "c2.", fn);
  bn2_.visit(prefix + "bn2.", fn);
  c3_.visit(prefix + "c3.", fn);
}

// ---------------------------------------------------------------------------
// Codec

Codec::Codec(const CodecConfig& cfg, const data::Normalization& norm)
    : cfg_(cfg), norm_(norm), codebook_(cfg.codebook_size, cfg.latent_channels) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  encoder_ = std::make_unique<Encoder>(cfg_, rng);
  decoder_ = std::make_unique<Decoder>(cfg_, rng);
  const float bound = 1.0f / static_cast<float>(cfg_.codebook_size);
  std::uniform_real_distribution<float> u(-bound, bound);
  for (float& v : codebook_.vectors.value) v = u(rng);
}

LatentTensor Codec::encode(const Array2D& x_normalized, LatentSpace space) const {
  for (double v : x_normalized.values())
    if (!std::isfinite(v)) throw DomainError("encode: non-finite input");
  const Array2D padded = pad_reflect_to_multiple(x_normalized, static_cast<std::size_t>(cfg_.downsample_factor));
  LatentTensor z = LatentTensor::from_tensor(encoder_->forward(to_tensor(padded)), 0, space);
  z.source_rows = x_normalized.rows();
  z.source_cols = x_normalized.cols();
  return z;
}

nn::Tensor Codec::quantize_batch(const nn::Tensor& z, std::vector<int>* indices) const {
  if (z.c() != codebook_.dim) throw DimensionError("quantize: latent channels differ from codebook dim");
  nn::Tensor out = z.zeros_like();
  const std::size_t plane = z.plane();
  if (indices) indices->assign(static_cast<std::size_t>(z.n()) * plane, 0);
  std::vector<double> v(static_cast<std::size_t>(codebook_.dim));
  for (int i = 0; i < z.n(); ++i)
    for (std::size_t p = 0; p < plane; ++p) {
      for (int c = 0; c < codebook_.dim; ++c) v[static_cast<std::size_t>(c)] = z.channel(i, c)[p];
      const int k = codebook_.nearest(v.data());
      if (indices) (*indices)[static_cast<std::size_t>(i) * plane + p] = k;
      for (int c = 0; c < codebook_.dim; ++c) out.channel(i, c)[p] = codebook_.row(k)[c];
    }
  return out;
}

nn::Tensor Codec::decode_batch(const nn::Tensor& z) const {
  return cfg_.quantize_on_decode ? decoder_->forward(quantize_batch(z)) : decoder_->forward(z);
}

Array2D Codec::decode(const LatentTensor& z) const {
  if (z.channels != cfg_.latent_channels) throw DimensionError("decode: latent channel mismatch");
  const Array2D full = from_tensor(decode_batch(z.to_tensor()));
  const std::size_t r = z.source_rows ? z.source_rows : full.rows();
  const std::size_t c = z.source_cols ? z.source_cols : full.cols();
  if (r > full.rows() || c > full.cols()) throw DimensionError("decode: recorded source dims exceed decoded grid");
  return crop(full, r, c);
}

std::string Codec::serialize() const {
  nlohmann::json header{{"config", cfg_.to_json()},
                        {"normalization",
                         {{"imp_min", norm_.imp_min}, {"imp_max", norm_.imp_max}, {"seis_scale", norm_.seis_scale}}},
                        {"latent_scale", latent_scale_},
                        {"usage_counts", codebook_.usage_counts}};
  nn::BlobMap blobs = nn::state_dict(*encoder_, "encoder.");
  blobs.merge(nn::state_dict(*decoder_, "decoder."));
  blobs["codebook.vectors"] = codebook_.vectors.value;
  return nn::serialize_container(kCodecFormat, header, blobs);
}

std::string Codec::hash() const { return io::sha256_hex(serialize()); }

void Codec::save(const fs::path& path) const { io::atomic_write(path, serialize()); }

Codec Codec::load(const fs::path& path) {
  const auto c = nn::load_container(path, kCodecFormat);
  const auto& h = c.header;
  const auto& n = h.at("normalization");
  Codec codec(CodecConfig::from_json(h.at("config")),
              {n.at("imp_min").get<double>(), n.at("imp_max").get<double>(), n.at("seis_scale").get<double>()});
  nn::load_state(*codec.encoder_, c.blobs, "encoder.");
  nn::load_state(*codec.decoder_, c.blobs, "decoder.");
  const auto it = c.blobs.find("codebook.vectors");
  if (it == c.blobs.end() || it->second.size() != codec.codebook_.vectors.value.size())
    throw CheckpointMismatch("codec checkpoint codebook does not match its config");
  codec.codebook_.vectors.value = it->second;
  codec.codebook_.usage_counts = h.value("usage_counts", codec.codebook_.usage_counts);
  codec.latent_scale_ = h.at("latent_scale").get<double>();
  return codec;
}

nlohmann::json CodecHistory::to_json() const {
  return {{"l1", l1}, {"vq", vq}, {"commit", commit}, {"adv_g", adv_g}, {"codes_used", codes_used}};
}

// ---------------------------------------------------------------------------
// Training

namespace {

nn::Tensor gather_batch(const nn::Tensor& data, std::span<const std::size_t> idx) {
  nn::Tensor b(static_cast<int>(idx.size()), data.c(), data.h(), data.w());
  for (std::size_t i = 0; i < idx.size(); ++i) nn::copy_sample(data, static_cast<int>(idx[i]), b, static_cast<int>(i));
  return b;
}

}  // namespace

CodecTrainResult train_codec(const std::vector<Array2D>& fields, const data::Normalization& norm,
                             const CodecConfig& cfg) {
  cfg.validate();
  if (fields.empty()) throw ValidationError("train_codec: no training fields");
  const auto rows = fields.front().rows(), cols = fields.front().cols();
  const auto f = static_cast<std::size_t>(cfg.downsample_factor);
  if (rows % f != 0 || cols % f != 0) throw DimensionError("train_codec: field dims must be divisible by f");
  nn::Tensor data(static_cast<int>(fields.size()), 1, static_cast<int>(rows), static_cast<int>(cols));
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (fields[i].rows() != rows || fields[i].cols() != cols) throw DimensionError("train_codec: ragged fields");
    std::transform(fields[i].data(), fields[i].data() + fields[i].size(), data.sample(static_cast<int>(i)),
                   [](double v) { return static_cast<float>(v); });
  }

  CodecTrainResult out{Codec(cfg, norm), {}};
  Codec& codec = out.codec;
  std::mt19937_64 rng(io::mix_seed(cfg.seed, 17));
  auto params = nn::trainable_params(codec.encoder());
  for (auto* p : nn::trainable_params(codec.decoder())) params.push_back(p);
  params.push_back(&codec.codebook().vectors);
  nn::Adam opt(params, {.lr = cfg.lr, .grad_clip = cfg.grad_clip});

  std::unique_ptr<Discriminator> disc;
  std::unique_ptr<nn::Adam> opt_d;
  if (cfg.use_adversarial) {
    disc = std::make_unique<Discriminator>(rng);
    opt_d = std::make_unique<nn::Adam>(nn::trainable_params(*disc), nn::AdamConfig{.lr = cfg.lr, .grad_clip = cfg.grad_clip});
  }

  const auto n = fields.size();
  const int dim = cfg.latent_channels;
  auto& book = codec.codebook();

  // Codebook initialised from encoder outputs so every code starts in the data range.
  {
    std::vector<std::size_t> idx(std::min<std::size_t>(n, 64));
    std::iota(idx.begin(), idx.end(), 0);
    const nn::Tensor ze = codec.encode_batch(gather_batch(data, idx));
    std::uniform_int_distribution<std::size_t> pick_s(0, idx.size() - 1), pick_p(0, ze.plane() - 1);
    std::normal_distribution<float> jitter(0.0f, 1e-3f);
    for (int k = 0; k < book.size; ++k) {
      const int s = static_cast<int>(pick_s(rng));
      const std::size_t p = pick_p(rng);
      for (int c = 0; c < dim; ++c)
        book.vectors.value[static_cast<std::size_t>(k) * dim + c] = ze.channel(s, c)[p] + jitter(rng);
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::fill(book.usage_counts.begin(), book.usage_counts.end(), 0);
    double sum_l1 = 0.0, sum_vq = 0.0, sum_adv = 0.0;
    std::size_t batches = 0;
    nn::Tensor last_ze;
    const bool adversarial = disc && epoch >= cfg.adversarial_start_epoch;

    for (std::size_t b0 = 0; b0 < n; b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t b1 = std::min(n, b0 + static_cast<std::size_t>(cfg.batch_size));
      const nn::Tensor x = gather_batch(data, std::span(order).subspan(b0, b1 - b0));

      const nn::Tensor ze = codec.encoder().forward_train(x);
      std::vector<int> indices;
      const nn::Tensor zq = codec.quantize_batch(ze, &indices);
      const nn::Tensor xr = codec.decoder().forward_train(zq);

      const double inv_n = 1.0 / static_cast<double>(x.size());
      double l1 = 0.0;
      nn::Tensor gxr = xr.zeros_like();
      for (std::size_t i = 0; i < x.size(); ++i) {
        const float d = xr.data()[i] - x.data()[i];
        l1 += std::abs(d);
        gxr.data()[i] = static_cast<float>((d > 0.0f ? 1.0 : (d < 0.0f ? -1.0 : 0.0)) * inv_n);
      }
      l1 *= inv_n;

      if (adversarial) {
        // Generator hinge term: -w * mean D(x_hat).
        const nn::Tensor logits = disc->forward_train(xr);
        nn::Tensor g(logits.n(), logits.c(), logits.h(), logits.w(),
                     static_cast<float>(-cfg.adversarial_weight / static_cast<double>(logits.size())));
        double adv = 0.0;
        for (float v : logits.values()) adv -= v;
        sum_adv += cfg.adversarial_weight * adv / static_cast<double>(logits.size());
        gxr += disc->backward(g);
        opt_d->zero_grad();
        // Discriminator hinge: relu(1 - D(x)) + relu(1 + D(x_hat)).
        using Side = std::pair<const nn::Tensor*, float>;
        for (const auto& [input, sign] : {Side{&x, 1.0f}, Side{&xr, -1.0f}}) {
          const nn::Tensor lo = disc->forward_train(*input);
          nn::Tensor gl = lo.zeros_like();
          for (std::size_t i = 0; i < lo.size(); ++i)
            if (1.0f - sign * lo.data()[i] > 0.0f) gl.data()[i] = -sign / static_cast<float>(lo.size());
          disc->backward(gl);
        }
        opt_d->step();
      }

      nn::Tensor gze = codec.decoder().backward(gxr);  // straight-through
      const double m = static_cast<double>(ze.size());
      double sq = 0.0;
      for (std::size_t i = 0; i < ze.size(); ++i) {
        const double d = ze.data()[i] - zq.data()[i];
        sq += d * d;
        gze.data()[i] += static_cast<float>(2.0 * cfg.commitment_beta * d / m);
      }
      const double vq = sq / m;
      const std::size_t plane = ze.plane();
      for (int i = 0; i < ze.n(); ++i)
        for (std::size_t p = 0; p < plane; ++p) {
          const int k = indices[static_cast<std::size_t>(i) * plane + p];
          ++book.usage_counts[static_cast<std::size_t>(k)];
          for (int c = 0; c < dim; ++c)
            book.vectors.grad[static_cast<std::size_t>(k) * dim + c] +=
                static_cast<float>(2.0 * (zq.channel(i, c)[p] - ze.channel(i, c)[p]) / m);
        }
      codec.encoder().backward(gze);

      if (!std::isfinite(l1) || !std::isfinite(vq))
        throw NumericalError("codec training diverged at epoch " + std::to_string(epoch) + " (loss " +
                             std::to_string(l1) + ")");
      opt.step();
      sum_l1 += l1;
      sum_vq += vq;
      ++batches;
      last_ze = ze;
    }

    // Restart dead codes on random encoder outputs from the last batch.
    int used = 0;
    std::uniform_int_distribution<int> pick_s(0, last_ze.n() - 1);
    std::uniform_int_distribution<std::size_t> pick_p(0, last_ze.plane() - 1);
    std::normal_distribution<float> jitter(0.0f, 1e-3f);
    for (int k = 0; k < book.size; ++k) {
      if (book.usage_counts[static_cast<std::size_t>(k)] > 0) {
        ++used;
        continue;
      }
      if (epoch + 1 == cfg.epochs) continue;
      const int s = pick_s(rng);
      const std::size_t p = pick_p(rng);
      for (int c = 0; c < dim; ++c)
        book.vectors.value[static_cast<std::size_t>(k) * dim + c] = last_ze.channel(s, c)[p] + jitter(rng);
    }

    const double nb = static_cast<double>(batches);
    out.history.l1.push_back(sum_l1 / nb);
    out.history.vq.push_back(sum_vq / nb);
    out.history.commit.push_back(sum_vq / nb);
    out.history.adv_g.push_back(sum_adv / nb);
    out.history.codes_used.push_back(used);
    spdlog::info("codec epoch {}/{}: l1 {:.5f} vq {:.5f} codes {}", epoch + 1, cfg.epochs, sum_l1 / nb, sum_vq / nb,
                 used);
  }

  // Global latent scale so diffusion sees roughly unit variance.
  double s1 = 0.0, s2 = 0.0, count = 0.0;
  for (std::size_t b0 = 0; b0 < n; b0 += 32) {
    std::vector<std::size_t> idx;
    for (std::size_t i = b0; i < std::min(n, b0 + 32); ++i) idx.push_back(i);
    const nn::Tensor ze = codec.encode_batch(gather_batch(data, idx));
    for (float v : ze.values()) {
      s1 += v;
      s2 += static_cast<double>(v) * v;
      count += 1.0;
    }
  }
  const double mean = s1 / count;
  const double sd = std::sqrt(std::max(1e-12, s2 / count - mean * mean));
  codec.set_latent_scale(1.0 / sd);
  return out;
}

CodecTrainResult train_codec(const data::DatasetManifest& manifest, const fs::path& dataset_dir,
                             const CodecConfig& cfg) {
  cfg.validate();
  if (manifest.entries.empty()) throw ValidationError("train_codec: manifest has no entries");
  std::vector<Array2D> fields;
  fields.reserve(manifest.entries.size());
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    fields.push_back(manifest.normalization.normalize_impedance(io::read_f32(dataset_dir / e.impedance_path, e.rows, e.cols)));
  }
  return train_codec(fields, manifest.normalization, cfg);
}

double reconstruction_psnr(const Codec& codec, const std::vector<Array2D>& fields) {
  if (fields.empty()) return 0.0;
  double total = 0.0;
  for (const auto& x : fields) {
    const Array2D r = codec.decode(codec.encode(x));
    double mse = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) mse += (r.data()[i] - x.data()[i]) * (r.data()[i] - x.data()[i]);
    mse /= static_cast<double>(x.size());
    const double range = x.max() - x.min();
    total += mse > 0.0 ? std::min(200.0, 10.0 * std::log10(range * range / mse)) : 200.0;
  }
  return total / static_cast<double>(fields.size());
}

}  // namespace saii::codec
