#include "saii/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <type_traits>

#include <spdlog/spdlog.h>

#include "saii/error.hpp"
#include "saii/io.hpp"
#include "saii/nn/checkpoint.hpp"

namespace saii::diff {

// ---------------------------------------------------------------------------
// Schedule

double NoiseSchedule::beta_at(int t) const {
  if (t < 1 || t > T) throw ParameterError("beta_at: t out of range");
  return beta[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar_at(int t) const {
  if (t == 0) return 1.0;
  if (t < 0 || t > T) throw ParameterError("alpha_bar_at: t out of range");
  return alpha_bar[static_cast<std::size_t>(t - 1)];
}

void NoiseSchedule::validate() const {
  if (T < 2) throw ValidationError("schedule: T must be >= 2");
  const auto n = static_cast<std::size_t>(T);
  if (beta.size() != n || alpha.size() != n || alpha_bar.size() != n)
    throw ValidationError("schedule: array lengths must equal T");
  for (double b : beta)
    if (!(b > 0.0 && b < 1.0)) throw ValidationError("schedule: beta must lie in (0, 1)");
  for (std::size_t i = 1; i < n; ++i)
    if (!(alpha_bar[i] < alpha_bar[i - 1])) throw ValidationError("schedule: alpha_bar must decrease");
}

nlohmann::json NoiseSchedule::to_json() const {
  return {{"type", "linear"}, {"T", T}, {"beta_start", beta.front()}, {"beta_end", beta.back()}};
}

NoiseSchedule NoiseSchedule::from_json(const nlohmann::json& j) {
  if (j.value("type", std::string("linear")) != "linear") throw ValidationError("schedule: unsupported type");
  return make_linear_schedule(j.at("T").get<int>(), j.at("beta_start").get<double>(), j.at("beta_end").get<double>());
}

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
  if (T < 2) throw ParameterError("schedule: T must be >= 2");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw ParameterError("schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  const auto n = static_cast<std::size_t>(T);
  s.beta.resize(n);
  s.alpha.resize(n);
  s.alpha_bar.resize(n);
  double prod = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    s.beta[i] = beta_start + (beta_end - beta_start) * static_cast<double>(i) / static_cast<double>(n - 1);
    s.alpha[i] = 1.0 - s.beta[i];
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Forward noising

LatentTensor q_sample(const LatentTensor& z0, int t, const LatentTensor& eps, const NoiseSchedule& s) {
  require_same_shape(z0, eps, "q_sample");
  const double ab = s.alpha_bar_at(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  LatentTensor out = z0;
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = a * z0.values[i] + b * eps.values[i];
  return out;
}

ForwardNoising draw_forward_noising(const nn::Tensor& z0, const NoiseSchedule& s, std::mt19937_64& rng,
                                    std::optional<int> fixed_t) {
  if (fixed_t && (*fixed_t < 1 || *fixed_t > s.T)) throw ParameterError("draw_forward_noising: t out of range");
  ForwardNoising out{std::vector<int>(static_cast<std::size_t>(z0.n())), z0.zeros_like(), z0.zeros_like()};
  std::uniform_int_distribution<int> pick_t(1, s.T);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t per = z0.size() / static_cast<std::size_t>(std::max(1, z0.n()));
  for (int i = 0; i < z0.n(); ++i) {
    const int t = fixed_t ? *fixed_t : pick_t(rng);
    out.t[static_cast<std::size_t>(i)] = t;
    const double ab = s.alpha_bar_at(t);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    const float* x = z0.sample(i);
    float* e = out.eps.sample(i);
    float* z = out.z_t.sample(i);
    for (std::size_t k = 0; k < per; ++k) {
      const double ek = normal(rng);
      e[k] = static_cast<float>(ek);
      z[k] = static_cast<float>(a * x[k] + b * ek);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Denoiser

void DenoiserConfig::validate() const {
  if (latent_channels < 1) throw ValidationError("denoiser: latent_channels must be >= 1");
  if (shwt.latent_channels != latent_channels)
    throw ValidationError("denoiser: shwt.latent_channels must equal latent_channels");
  shwt.validate();
  nn::UNetConfig{3 * latent_channels, latent_channels, base_width, mults, true}.validate();
}

nlohmann::json DenoiserConfig::to_json() const {
  return {{"latent_channels", latent_channels}, {"base_width", base_width}, {"mults", mults}, {"shwt", shwt.to_json()}};
}

DenoiserConfig DenoiserConfig::from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.base_width = j.value("base_width", c.base_width);
  c.mults = j.value("mults", c.mults);
  if (j.contains("shwt")) c.shwt = cond::ShwtConfig::from_json(j.at("shwt"));
  c.shwt.latent_channels = c.latent_channels;
  return c;
}

Denoiser::Denoiser(const DenoiserConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(io::mix_seed(seed, 0xd1ff));
  unet_ = std::make_unique<nn::UNet>(
      nn::UNetConfig{3 * cfg_.latent_channels, cfg_.latent_channels, cfg_.base_width, cfg_.mults, true}, rng);
  shwt_ = std::make_unique<cond::ShwtHead>(cfg_.shwt, rng);
}

nn::Tensor Denoiser::forward(const nn::Tensor& z_t, std::span<const float> t, const nn::Tensor& l_z,
                             const nn::Tensor& d) const {
  const nn::Tensor dz = std::as_const(*shwt_).forward(d);
  const nn::Tensor* parts[] = {&z_t, &l_z, &dz};
  return std::as_const(*unet_).forward(nn::concat_channels(parts), t);
}

nn::Tensor Denoiser::forward_train(const nn::Tensor& z_t, std::span<const float> t, const nn::Tensor& l_z,
                                   const nn::Tensor& d) {
  const nn::Tensor dz = shwt_->forward_train(d);
  const nn::Tensor* parts[] = {&z_t, &l_z, &dz};
  return unet_->forward_train(nn::concat_channels(parts), t);
}

void Denoiser::backward(const nn::Tensor& g_eps) {
  const nn::Tensor gx = unet_->backward(g_eps);
  const int c = cfg_.latent_channels;
  const int sizes[] = {c, c, c};
  const auto parts = nn::split_channels(gx, sizes);
  shwt_->backward(parts[2]);
}

LatentTensor Denoiser::condition(const Array2D& d_normalized) const {
  LatentTensor dz = cond::shwt_forward(d_normalized, *shwt_);
  dz.space = LatentSpace::Seismic;
  return dz;
}

LatentTensor Denoiser::predict_eps(const LatentTensor& z_t, int t, const LatentTensor& l_z,
                                   const LatentTensor& d_z) const {
  require_same_shape(z_t, l_z, "predict_eps");
  require_same_shape(z_t, d_z, "predict_eps");
  const nn::Tensor a = z_t.to_tensor(), b = l_z.to_tensor(), c = d_z.to_tensor();
  const nn::Tensor* parts[] = {&a, &b, &c};
  const float tf = static_cast<float>(t);
  LatentTensor out = LatentTensor::from_tensor(std::as_const(*unet_).forward(nn::concat_channels(parts), {&tf, 1}), 0);
  out.source_rows = z_t.source_rows;
  out.source_cols = z_t.source_cols;
  return out;
}

void Denoiser::visit(const std::string& prefix, const nn::Visitor& fn) {
  unet_->visit(prefix + "unet.", fn);
  shwt_->visit(prefix + "shwt.", fn);
}

std::size_t Denoiser::unet_parameter_count() const { return nn::parameter_count(*unet_); }
std::size_t Denoiser::shwt_parameter_count() const { return nn::parameter_count(*shwt_); }

// ---------------------------------------------------------------------------
// Config

void DiffusionConfig::validate() const {
  net.validate();
  make_linear_schedule(T, beta_start, beta_end);
  if (!(lr > 0.0)) throw ValidationError("diffusion: lr must be > 0");
  if (epochs < 0) throw ValidationError("diffusion: epochs must be >= 0");
  if (batch_size < 1) throw ValidationError("diffusion: batch_size must be >= 1");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ValidationError("diffusion: ema_decay must lie in [0, 1)");
}

nlohmann::json DiffusionConfig::to_json() const {
  return {{"net", net.to_json()},     {"T", T},          {"beta_start", beta_start},
          {"beta_end", beta_end},     {"lr", lr},        {"epochs", epochs},
          {"batch_size", batch_size}, {"ema_decay", ema_decay}, {"grad_clip", grad_clip},
          {"seed", seed}};
}

DiffusionConfig DiffusionConfig::from_json(const nlohmann::json& j) {
  DiffusionConfig c;
  if (j.contains("net")) c.net = DenoiserConfig::from_json(j.at("net"));
  c.T = j.value("T", c.T);
  c.beta_start = j.value("beta_start", c.beta_start);
  c.beta_end = j.value("beta_end", c.beta_end);
  c.lr = j.value("lr", c.lr);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.ema_decay = j.value("ema_decay", c.ema_decay);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.seed = j.value("seed", c.seed);
  return c;
}

// ---------------------------------------------------------------------------
// Data

namespace {

nn::Tensor stack(const std::vector<Array2D>& fields) {
  const auto& f0 = fields.front();
  nn::Tensor t(static_cast<int>(fields.size()), 1, static_cast<int>(f0.rows()), static_cast<int>(f0.cols()));
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (!fields[i].same_shape(f0)) throw DimensionError("diffusion data: ragged entries");
    std::transform(fields[i].data(), fields[i].data() + fields[i].size(), t.sample(static_cast<int>(i)),
                   [](double v) { return static_cast<float>(v); });
  }
  return t;
}

nn::Tensor encode_scaled(const codec::Codec& codec, const nn::Tensor& x) {
  constexpr int kChunk = 16;
  nn::Tensor out;
  for (int b0 = 0; b0 < x.n(); b0 += kChunk) {
    const int b1 = std::min(x.n(), b0 + kChunk);
    nn::Tensor xb(b1 - b0, x.c(), x.h(), x.w());
    for (int i = b0; i < b1; ++i) nn::copy_sample(x, i, xb, i - b0);
    const nn::Tensor z = codec.encode_batch(xb);
    if (out.size() == 0) out = nn::Tensor(x.n(), z.c(), z.h(), z.w());
    for (int i = b0; i < b1; ++i) nn::copy_sample(z, i - b0, out, i);
  }
  out *= static_cast<float>(codec.latent_scale());
  return out;
}

nn::Tensor gather(const nn::Tensor& data, std::span<const std::size_t> idx) {
  nn::Tensor b(static_cast<int>(idx.size()), data.c(), data.h(), data.w());
  for (std::size_t i = 0; i < idx.size(); ++i) nn::copy_sample(data, static_cast<int>(idx[i]), b, static_cast<int>(i));
  return b;
}

}  // namespace

DiffusionData prepare_diffusion_data(const data::DatasetManifest& manifest, const fs::path& dataset_dir,
                                     const codec::Codec& codec) {
  if (manifest.entries.empty()) throw ValidationError("prepare_diffusion_data: empty manifest");
  const auto f = static_cast<std::size_t>(codec.config().downsample_factor);
  std::vector<Array2D> x, l, d;
  const auto& norm = manifest.normalization;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto e = data::load_entry(manifest, dataset_dir, i);
    if (e.impedance.values.rows() % f != 0 || e.impedance.values.cols() % f != 0)
      throw DimensionError("prepare_diffusion_data: patch dims must be divisible by the codec factor");
    x.push_back(norm.normalize_impedance(e.impedance.values));
    l.push_back(norm.normalize_impedance(e.lowfreq.values));
    d.push_back(norm.normalize_seismic(e.seismic));
  }
  return {encode_scaled(codec, stack(x)), encode_scaled(codec, stack(l)), stack(d)};
}

// ---------------------------------------------------------------------------
// Training

LossResult training_loss(const TrainingBatch& batch, const NoiseSchedule& s, const EpsPredictor& predictor,
                         std::mt19937_64& rng, std::optional<int> fixed_t) {
  if (!batch.z0.same_shape(batch.l_z)) throw DimensionError("training_loss: z0 and l_z differ in shape");
  if (batch.d.n() != batch.z0.n()) throw DimensionError("training_loss: batch sizes differ");
  LossResult out;
  out.noising = draw_forward_noising(batch.z0, s, rng, fixed_t);
  std::vector<float> tf(out.noising.t.begin(), out.noising.t.end());
  out.eps_hat = predictor(out.noising.z_t, tf, batch.l_z, batch.d);
  if (!out.eps_hat.same_shape(out.noising.eps)) throw DimensionError("training_loss: predictor output shape");
  double acc = 0.0;
  const float* e = out.noising.eps.data();
  const float* p = out.eps_hat.data();
  for (std::size_t i = 0; i < out.eps_hat.size(); ++i) {
    const double r = static_cast<double>(p[i]) - e[i];
    acc += r * r;
  }
  out.loss = acc / static_cast<double>(out.eps_hat.size());
  return out;
}

double training_step(const TrainingBatch& batch, const NoiseSchedule& s, Denoiser& net, nn::Adam& opt,
                     std::mt19937_64& rng) {
  LossResult r = training_loss(
      batch, s,
      [&net](const nn::Tensor& z, std::span<const float> t, const nn::Tensor& l, const nn::Tensor& d) {
        return net.forward_train(z, t, l, d);
      },
      rng);
  if (!std::isfinite(r.loss)) throw NumericalError("training_step: non-finite loss");
  nn::Tensor g = r.eps_hat.zeros_like();
  const float scale = 2.0f / static_cast<float>(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = scale * (r.eps_hat.data()[i] - r.noising.eps.data()[i]);
  net.backward(g);
  opt.step();
  return r.loss;
}

// ---------------------------------------------------------------------------
// Model

DiffusionModel::DiffusionModel(const DiffusionConfig& cfg, std::string codec_hash)
    : cfg_(cfg),
      schedule_(make_linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end)),
      net_(std::make_unique<Denoiser>(cfg.net, cfg.seed)),
      codec_hash_(std::move(codec_hash)) {}

void DiffusionModel::require_codec(const codec::Codec& codec) const {
  const std::string h = codec.hash();
  if (h != codec_hash_)
    throw CheckpointMismatch("diffusion checkpoint was trained with codec " + codec_hash_.substr(0, 12) +
                             ", got " + h.substr(0, 12));
}

void DiffusionModel::save(const fs::path& path, const nn::BlobMap& extra, const nlohmann::json& extra_header) const {
  nlohmann::json header = extra_header.is_object() ? extra_header : nlohmann::json::object();
  header["config"] = cfg_.to_json();
  header["schedule"] = schedule_.to_json();
  header["codec_hash"] = codec_hash_;
  header["loss_history"] = loss_history_;
  nn::BlobMap blobs = nn::state_dict(*net_, "net.");
  for (const auto& [k, v] : extra) blobs.emplace(k, v);
  nn::save_container(path, kDiffusionFormat, header, blobs);
}

DiffusionModel DiffusionModel::load(const fs::path& path, nn::BlobMap* extra, nlohmann::json* header) {
  nn::Container c = nn::load_container(path, kDiffusionFormat);
  try {
    DiffusionModel m(DiffusionConfig::from_json(c.header.at("config")), c.header.at("codec_hash").get<std::string>());
    nn::load_state(*m.net_, c.blobs, "net.");
    m.loss_history_ = c.header.value("loss_history", std::vector<double>{});
    if (extra) *extra = std::move(c.blobs);
    if (header) *header = std::move(c.header);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("diffusion checkpoint " + path.string() + ": bad header: " + e.what());
  }
}

namespace {

void write_training_checkpoint(const fs::path& path, DiffusionModel& model, nn::Ema& ema, const nn::Adam& opt,
                               int epochs_done) {
  nn::BlobMap extra;
  for (auto& [k, v] : nn::state_dict(model.denoiser(), "live.")) extra.emplace(k, std::move(v));
  for (auto& [k, v] : opt.state()) extra.emplace("adam." + k, std::move(v));
  const nlohmann::json state = {{"train_state", {{"epochs_done", epochs_done}, {"adam_steps", opt.steps()}}}};
  ema.swap();
  try {
    model.save(path, extra, state);
  } catch (...) {
    ema.swap();
    throw;
  }
  ema.swap();
}

}  // namespace

DiffusionTrainResult train_diffusion(const DiffusionData& data, const std::string& codec_hash,
                                     const DiffusionConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  if (data.size() == 0) throw ValidationError("train_diffusion: no training data");
  if (data.z0.c() != cfg.net.latent_channels) throw DimensionError("train_diffusion: latent channel mismatch");
  const int f = 1 << cfg.net.shwt.levels;
  if (data.d.h() != data.z0.h() * f || data.d.w() != data.z0.w() * f)
    throw DimensionError("train_diffusion: seismic grid does not match latent grid");

  DiffusionTrainResult out{DiffusionModel(cfg, codec_hash), {}, {}, 0};
  DiffusionModel& model = out.model;
  Denoiser& net = model.denoiser();
  const auto params = nn::trainable_params(net);
  nn::Adam opt(params, {.lr = cfg.lr, .grad_clip = cfg.grad_clip});
  nn::Ema ema(params, cfg.ema_decay);

  int start_epoch = 0;
  if (opts.resume_from) {
    nn::BlobMap blobs;
    nlohmann::json header;
    DiffusionModel saved = DiffusionModel::load(*opts.resume_from, &blobs, &header);
    if (saved.codec_hash() != codec_hash) throw CheckpointMismatch("train_diffusion: resume checkpoint codec differs");
    if (saved.config().to_json()["net"] != cfg.to_json()["net"])
      throw CheckpointMismatch("train_diffusion: resume checkpoint architecture differs");
    nn::load_state(net, blobs, "net.");
    for (std::size_t i = 0; i < params.size(); ++i) ema.shadow()[i] = params[i]->value;
    nn::load_state(net, blobs, "live.");
    nn::BlobMap adam;
    for (const auto& [k, v] : blobs)
      if (k.rfind("adam.", 0) == 0) adam.emplace(k.substr(5), v);
    const auto& ts = header.at("train_state");
    opt.load_state(adam, ts.at("adam_steps").get<long>());
    start_epoch = ts.at("epochs_done").get<int>();
    model.loss_history() = saved.loss_history();
  }

  const auto n = data.size();
  int end_epoch = cfg.epochs;
  if (opts.max_epochs_this_run >= 0) end_epoch = std::min(end_epoch, start_epoch + opts.max_epochs_this_run);
  std::vector<std::size_t> order(n);

  for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
    std::mt19937_64 rng(io::mix_seed(cfg.seed, 0xe90c0000ULL + static_cast<std::uint64_t>(epoch)));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < n; b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t b1 = std::min(n, b0 + static_cast<std::size_t>(cfg.batch_size));
      const auto idx = std::span(order).subspan(b0, b1 - b0);
      const TrainingBatch batch{gather(data.z0, idx), gather(data.l_z, idx), gather(data.d, idx)};
      const double loss = training_step(batch, model.schedule(), net, opt, rng);
      ema.update();
      out.step_losses.push_back(loss);
      sum += loss;
      ++batches;
    }
    const double mean = sum / static_cast<double>(batches);
    out.losses.push_back(mean);
    model.loss_history().push_back(mean);
    out.epochs_done = epoch + 1;
    spdlog::info("diffusion epoch {}/{}: loss {:.5f}", epoch + 1, cfg.epochs, mean);
    if (opts.checkpoint_path && opts.checkpoint_every > 0 && (epoch + 1) % opts.checkpoint_every == 0)
      write_training_checkpoint(*opts.checkpoint_path, model, ema, opt, epoch + 1);
  }
  if (out.epochs_done == 0) out.epochs_done = start_epoch;
  if (opts.checkpoint_path) write_training_checkpoint(*opts.checkpoint_path, model, ema, opt, out.epochs_done);
  ema.swap();  // sampling uses the averaged weights
  return out;
}

DiffusionTrainResult train_diffusion(const data::DatasetManifest& manifest, const fs::path& dataset_dir,
                                     const codec::Codec& codec, const DiffusionConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  if (cfg.net.latent_channels != codec.config().latent_channels)
    throw ValidationError("train_diffusion: latent_channels must match the codec");
  if ((1 << cfg.net.shwt.levels) != codec.config().downsample_factor)
    throw ValidationError("train_diffusion: shwt.levels must equal log2 of the codec factor");
  return train_diffusion(prepare_diffusion_data(manifest, dataset_dir, codec), codec.hash(), cfg, opts);
}

// ---------------------------------------------------------------------------
// Marginal property check

namespace {

// q_sample and the training draw expose no conditioning parameter.
constexpr bool kUnconditionalInterface =
    std::is_same_v<decltype(&q_sample),
                   LatentTensor (*)(const LatentTensor&, int, const LatentTensor&, const NoiseSchedule&)> &&
    std::is_same_v<decltype(&draw_forward_noising),
                   ForwardNoising (*)(const nn::Tensor&, const NoiseSchedule&, std::mt19937_64&, std::optional<int>)>;

}  // namespace

bool MarginalReport::pass() const {
  return static_check && !checks.empty() &&
         std::all_of(checks.begin(), checks.end(), [](const MarginalCheck& c) { return c.pass; });
}

nlohmann::json MarginalReport::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : checks)
    arr.push_back({{"t", c.t}, {"mean", c.mean}, {"variance", c.variance}, {"mean_tol", c.mean_tol},
                   {"var_tol", c.var_tol}, {"pass", c.pass}});
  return {{"static_check", static_check}, {"checks", arr}, {"pass", pass()}};
}

MarginalReport conditional_marginal_property_check(const NoiseSchedule& s, int n_draws, std::uint64_t seed) {
  s.validate();
  if (n_draws < 2) throw ParameterError("property check: n_draws must be >= 2");
  constexpr int kC = 3, kH = 4, kW = 4, kChunk = 2048;
  std::mt19937_64 rng(io::mix_seed(seed, 0x9a7));
  std::normal_distribution<double> normal(0.0, 1.0);

  // Fixed z0; conditioning tensors are random and vary per draw.
  std::vector<float> z0(static_cast<std::size_t>(kC) * kH * kW);
  for (std::size_t k = 0; k < z0.size(); ++k) z0[k] = static_cast<float>(1.5 * std::sin(0.7 * static_cast<double>(k) + 0.3));

  MarginalReport report;
  report.static_check = kUnconditionalInterface;
  for (int t : {1, s.T / 2, s.T}) {
    const double ab = s.alpha_bar_at(t);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    double s1 = 0.0, s2 = 0.0, count = 0.0;
    for (int done = 0; done < n_draws; done += kChunk) {
      const int m = std::min(kChunk, n_draws - done);
      TrainingBatch batch{nn::Tensor(m, kC, kH, kW), nn::Tensor(m, kC, kH, kW), nn::Tensor(m, 1, 4 * kH, 4 * kW)};
      for (int i = 0; i < m; ++i) std::copy(z0.begin(), z0.end(), batch.z0.sample(i));
      for (float& v : batch.l_z.values()) v = static_cast<float>(normal(rng));
      for (float& v : batch.d.values()) v = static_cast<float>(normal(rng));
      const EpsPredictor recorder = [](const nn::Tensor& z, std::span<const float>, const nn::Tensor&,
                                       const nn::Tensor&) { return z.zeros_like(); };
      const LossResult r = training_loss(batch, s, recorder, rng, t);
      for (int i = 0; i < m; ++i) {
        const float* zt = r.noising.z_t.sample(i);
        for (std::size_t k = 0; k < z0.size(); ++k) {
          const double u = (static_cast<double>(zt[k]) - a * z0[k]) / b;
          s1 += u;
          s2 += u * u;
          count += 1.0;
        }
      }
    }
    MarginalCheck c;
    c.t = t;
    c.mean = s1 / count;
    c.variance = s2 / count - c.mean * c.mean;
    c.mean_tol = 3.0 / std::sqrt(count);
    c.var_tol = 3.0 * std::sqrt(2.0 / count);
    c.pass = std::abs(c.mean) <= c.mean_tol && std::abs(c.variance - 1.0) <= c.var_tol;
    report.checks.push_back(c);
  }
  return report;
}

}  // namespace saii::diff
