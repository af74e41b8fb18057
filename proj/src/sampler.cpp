#include "saii/sampler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <spdlog/spdlog.h>

#include "saii/error.hpp"
#include "saii/io.hpp"

namespace saii::sampling {

void SamplerConfig::validate(int T) const {
  if (num_steps < 1 || num_steps > T) throw ValidationError("sampler: num_steps must lie in [1, T]");
  if (!(eta >= 0.0 && eta <= 1.0)) throw ValidationError("sampler: eta must lie in [0, 1]");
  if (interval < 1) throw ValidationError("sampler: interval must be >= 1");
  if (!(gamma > 0.0)) throw ValidationError("sampler: gamma must be > 0");
  if (inner_iters < 0) throw ValidationError("sampler: inner_iters must be >= 0");
  if (!(inner_lr > 0.0)) throw ValidationError("sampler: inner_lr must be > 0");
  if (!(early_stop_tol >= 0.0)) throw ValidationError("sampler: early_stop_tol must be >= 0");
}

nlohmann::json SamplerConfig::to_json() const {
  return {{"num_steps", num_steps},   {"eta", eta},
          {"interval", interval},     {"gamma", gamma},
          {"inner_iters", inner_iters}, {"inner_lr", inner_lr},
          {"early_stop_tol", early_stop_tol}, {"terminal_consistency", terminal_consistency},
          {"record_residuals", record_residuals}, {"seed", seed}};
}

SamplerConfig SamplerConfig::from_json(const nlohmann::json& j) {
  SamplerConfig c;
  c.num_steps = j.value("num_steps", c.num_steps);
  c.eta = j.value("eta", c.eta);
  c.interval = j.value("interval", c.interval);
  c.gamma = j.value("gamma", c.gamma);
  c.inner_iters = j.value("inner_iters", c.inner_iters);
  c.inner_lr = j.value("inner_lr", c.inner_lr);
  c.early_stop_tol = j.value("early_stop_tol", c.early_stop_tol);
  c.terminal_consistency = j.value("terminal_consistency", c.terminal_consistency);
  c.record_residuals = j.value("record_residuals", c.record_residuals);
  c.seed = j.value("seed", c.seed);
  return c;
}

std::vector<int> ddim_timesteps(int num_steps, int T) {
  if (T < 1 || num_steps < 1 || num_steps > T) throw ParameterError("ddim_timesteps: need 1 <= num_steps <= T");
  if (num_steps == 1) return {T};
  std::vector<int> ts(static_cast<std::size_t>(num_steps));
  for (int k = 0; k < num_steps; ++k) {
    const double pos = static_cast<double>(T - 1) * k / (num_steps - 1);
    ts[static_cast<std::size_t>(num_steps - 1 - k)] = 1 + static_cast<int>(std::lround(pos));
  }
  return ts;
}

double ddim_sigma(const NoiseSchedule& s, int t, int t_next, double eta) {
  if (!(t < t_next)) throw ParameterError("ddim_sigma: need t < t_next");
  const double ab_t = s.alpha_bar_at(t), ab_n = s.alpha_bar_at(t_next);
  return eta * std::sqrt((1.0 - ab_t) / (1.0 - ab_n)) * std::sqrt(1.0 - ab_n / ab_t);
}

LatentTensor predict_z0(const LatentTensor& z_t, const LatentTensor& eps_hat, int t, const NoiseSchedule& s) {
  require_same_shape(z_t, eps_hat, "predict_z0");
  const double ab = s.alpha_bar_at(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  LatentTensor out = z_t;
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = (z_t.values[i] - b * eps_hat.values[i]) / a;
  return out;
}

LatentTensor ddim_step(const LatentTensor& z_next, const LatentTensor& eps_hat, int t_next, int t,
                       const NoiseSchedule& s, double eta, std::mt19937_64& rng) {
  if (t < 0 || !(t < t_next)) throw ParameterError("ddim_step: need 0 <= t < t_next");
  const LatentTensor z0 = predict_z0(z_next, eps_hat, t_next, s);
  const double ab_t = s.alpha_bar_at(t);
  const double sigma = ddim_sigma(s, t, t_next, eta);
  const double dir = std::sqrt(std::max(0.0, 1.0 - ab_t - sigma * sigma));
  const double a = std::sqrt(ab_t);
  LatentTensor out = z_next;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = a * z0.values[i] + dir * eps_hat.values[i];
    if (sigma > 0.0) v += sigma * normal(rng);
    out.values[i] = v;
  }
  return out;
}

double kappa_sq(const NoiseSchedule& s, int t, double gamma) {
  if (t < 1) throw ParameterError("kappa_sq: t must be >= 1");
  const double ab_t = s.alpha_bar_at(t), ab_p = s.alpha_bar_at(t - 1);
  return gamma * ((1.0 - ab_p) / ab_t) * (1.0 - ab_t / ab_p);
}

ResampleMoments resample_moments(const NoiseSchedule& s, int t, double gamma) {
  const double k2 = kappa_sq(s, t, gamma);
  const double ab = s.alpha_bar_at(t);
  const double denom = k2 + 1.0 - ab;
  return {k2 * std::sqrt(ab) / denom, (1.0 - ab) / denom, k2 * (1.0 - ab) / denom};
}

LatentTensor stochastic_resample(const LatentTensor& z0p, const LatentTensor& z_t, int t, double gamma,
                                 const NoiseSchedule& s, std::mt19937_64& rng) {
  require_same_shape(z0p, z_t, "stochastic_resample");
  if (t == 0) return z0p;
  const ResampleMoments m = resample_moments(s, t, gamma);
  const double sd = std::sqrt(m.variance);
  std::normal_distribution<double> normal(0.0, 1.0);
  LatentTensor out = z_t;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.values[i] = m.weight_z0 * z0p.values[i] + m.weight_zt * z_t.values[i] + sd * normal(rng);
  return out;
}

// ---------------------------------------------------------------------------
// Data consistency

namespace {

LatentTensor scaled(LatentTensor z, double s) {
  for (double& v : z.values) v *= s;
  return z;
}

struct PixelObjective {
  const SeismicSection& d;
  const seis::Wavelet& w;
  const data::Normalization& norm;
  double floor_x;  // normalized value of the impedance floor

  Array2D impedance(const Array2D& x) const { return norm.denormalize_impedance(x); }
  double value(const Array2D& x) const { return seis::misfit(impedance(x), d, w); }
  seis::MisfitResult value_and_gradient(const Array2D& x) const {
    auto r = seis::misfit_and_gradient(impedance(x), d, w);
    const double h = norm.impedance_half_range();
    for (double& g : r.gradient.values()) g *= h;
    return r;
  }
  void project(Array2D& x) const {
    for (double& v : x.values()) v = std::max(v, floor_x);
  }
};

bool all_finite(const Array2D& a) {
  return std::all_of(a.values().begin(), a.values().end(), [](double v) { return std::isfinite(v); });
}

double impedance_floor_x(const data::Normalization& norm) {
  return -1.0 - 0.5 * norm.imp_min / norm.impedance_half_range();
}

}  // namespace

ConsistencyResult data_consistency_opt(const LatentTensor& z0_hat, const SeismicSection& d, const seis::Wavelet& w,
                                       const codec::Codec& codec, const SamplerConfig& cfg) {
  const double scale = codec.latent_scale();
  const auto& norm = codec.normalization();
  Array2D x = codec.decode(scaled(z0_hat, 1.0 / scale));
  if (!x.same_shape(d)) throw DimensionError("data_consistency_opt: decoded grid differs from the seismic section");
  const PixelObjective obj{d, w, norm, impedance_floor_x(norm)};
  obj.project(x);

  ConsistencyResult out;
  auto cur = obj.value_and_gradient(x);
  out.misfit_initial = cur.value;
  out.misfit_final = cur.value;
  if (!all_finite(cur.gradient) || !std::isfinite(cur.value)) {
    spdlog::warn("data_consistency_opt: non-finite gradient, keeping the prior estimate");
    out.z0 = z0_hat;
    out.warning = true;
    return out;
  }

  double gmax = 0.0;
  for (double g : cur.gradient.values()) gmax = std::max(gmax, std::abs(g));
  double step = gmax > 0.0 ? cfg.inner_lr / gmax : 0.0;
  Array2D x_prev, g_prev;

  for (int it = 0; it < cfg.inner_iters && cur.value > 0.0 && step > 0.0; ++it) {
    if (it > 0) {
      // Barzilai-Borwein (long) step from the last accepted move.
      double ss = 0.0, sy = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double si = x.data()[i] - x_prev.data()[i];
        const double yi = cur.gradient.data()[i] - g_prev.data()[i];
        ss += si * si;
        sy += si * yi;
      }
      if (sy > 0.0 && ss > 0.0) step = ss / sy;
    }
    bool accepted = false;
    Array2D trial(x.rows(), x.cols());
    double j_trial = 0.0;
    for (int bt = 0; bt < 40; ++bt) {
      for (std::size_t i = 0; i < x.size(); ++i) trial.data()[i] = x.data()[i] - step * cur.gradient.data()[i];
      obj.project(trial);
      j_trial = obj.value(trial);
      if (std::isfinite(j_trial) && j_trial <= cur.value) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    auto next = obj.value_and_gradient(trial);
    if (!all_finite(next.gradient)) {
      spdlog::warn("data_consistency_opt: non-finite gradient, keeping the prior estimate");
      out.z0 = z0_hat;
      out.warning = true;
      out.misfit_final = out.misfit_initial;
      return out;
    }
    const double rel = (cur.value - next.value) / std::max(cur.value, 1e-300);
    x_prev = std::move(x);
    g_prev = std::move(cur.gradient);
    x = std::move(trial);
    cur = std::move(next);
    out.iterations = it + 1;
    if (rel < cfg.early_stop_tol) break;
  }
  out.misfit_final = cur.value;
  out.z0 = scaled(codec.encode(x, LatentSpace::Impedance), scale);
  out.z0.space = z0_hat.space;
  return out;
}

// ---------------------------------------------------------------------------
// Inversion

nlohmann::json InversionResult::sidecar() const {
  nlohmann::json steps_j = nlohmann::json::array();
  for (const auto& s : steps)
    steps_j.push_back({{"step", s.step},
                       {"t_from", s.t_from},
                       {"t_to", s.t_to},
                       {"resampled", s.resampled},
                       {"residual", s.residual},
                       {"dc_misfit_initial", s.dc_misfit_initial},
                       {"dc_misfit_final", s.dc_misfit_final},
                       {"dc_iterations", s.dc_iterations},
                       {"dc_warning", s.dc_warning}});
  return {{"format", "saii-inversion/1"},
          {"rows", impedance.values.rows()},
          {"cols", impedance.values.cols()},
          {"dt", impedance.dt},
          {"dtype", "float32"},
          {"config", config.to_json()},
          {"seed", config.seed},
          {"codec_hash", codec_hash},
          {"wallclock_s", wallclock_s},
          {"final_residual", final_residual},
          {"steps", steps_j}};
}

void InversionResult::save(const fs::path& path) const {
  io::write_f32(path, impedance.values);
  io::write_json(fs::path(path.string() + ".json"), sidecar());
}

namespace {

double residual_norm(const Array2D& x_norm, const SeismicSection& d, const seis::Wavelet& w,
                     const data::Normalization& norm) {
  Array2D x = x_norm;
  const double floor_x = impedance_floor_x(norm);
  for (double& v : x.values()) v = std::max(v, floor_x);
  return std::sqrt(seis::misfit(norm.denormalize_impedance(x), d, w));
}

}  // namespace

InversionResult invert(const SeismicSection& d, const ImpedanceGrid& lowfreq, const seis::Wavelet& w,
                       const diff::DiffusionModel& model, const codec::Codec& codec, const SamplerConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  model.require_codec(codec);
  const auto& s = model.schedule();
  cfg.validate(s.T);
  lowfreq.validate();
  require_same_shape(d, lowfreq.values, "invert");
  const int f = codec.config().downsample_factor;
  const int unet_factor = 1 << (static_cast<int>(model.config().net.mults.size()) - 1);
  const auto latent_dim = [f](std::size_t n) { return static_cast<int>((n + static_cast<std::size_t>(f) - 1) / f); };
  if (latent_dim(d.rows()) % unet_factor != 0 || latent_dim(d.cols()) % unet_factor != 0)
    throw DimensionError("invert: section dims must be multiples of " + std::to_string(f * unet_factor));

  const auto& norm = codec.normalization();
  const double scale = codec.latent_scale();
  const auto& net = model.denoiser();
  const LatentTensor l_z = scaled(codec.encode(norm.normalize_impedance(lowfreq.values), LatentSpace::LowFrequency), scale);
  const LatentTensor d_z = net.condition(norm.normalize_seismic(d));

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  LatentTensor z = l_z.zeros_like();
  z.space = LatentSpace::Impedance;
  z.source_rows = l_z.source_rows;
  z.source_cols = l_z.source_cols;
  for (double& v : z.values) v = normal(rng);

  InversionResult out;
  out.config = cfg;
  out.codec_hash = codec.hash();
  const auto ts = ddim_timesteps(cfg.num_steps, s.T);
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const int step = static_cast<int>(k) + 1;
    const int t_next = ts[k];
    const int t = k + 1 < ts.size() ? ts[k + 1] : 0;
    const LatentTensor eps = net.predict_eps(z, t_next, l_z, d_z);
    LatentTensor z_new = ddim_step(z, eps, t_next, t, s, cfg.eta, rng);

    StepRecord rec{step, t_next, t};
    const bool gated = cfg.model_driven() && step % cfg.interval == 0;
    const bool terminal = t == 0 && cfg.model_driven() && cfg.terminal_consistency;
    const LatentTensor z0_hat = predict_z0(z, eps, t_next, s);
    if (gated || terminal) {
      const ConsistencyResult dc = data_consistency_opt(z0_hat, d, w, codec, cfg);
      z_new = stochastic_resample(dc.z0, z_new, t, cfg.gamma, s, rng);
      rec.resampled = true;
      rec.dc_misfit_initial = dc.misfit_initial;
      rec.dc_misfit_final = dc.misfit_final;
      rec.dc_iterations = dc.iterations;
      rec.dc_warning = dc.warning;
    }
    if (cfg.record_residuals) rec.residual = residual_norm(codec.decode(scaled(z0_hat, 1.0 / scale)), d, w, norm);
    out.steps.push_back(rec);
    z = std::move(z_new);
  }

  Array2D x = codec.decode(scaled(z, 1.0 / scale));
  const double floor_x = impedance_floor_x(norm);
  for (double& v : x.values()) v = std::max(v, floor_x);
  out.impedance = ImpedanceGrid{norm.denormalize_impedance(x), lowfreq.dt, "saii-cldm"};
  out.final_residual = std::sqrt(seis::misfit(out.impedance.values, d, w));
  out.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

InversionResult invert(const SeismicSection& d, const ImpedanceGrid& lowfreq, const seis::Wavelet& w,
                       const fs::path& diffusion_ckpt, const fs::path& codec_ckpt, const SamplerConfig& cfg) {
  const codec::Codec codec = codec::Codec::load(codec_ckpt);
  const diff::DiffusionModel model = diff::DiffusionModel::load(diffusion_ckpt);
  return invert(d, lowfreq, w, model, codec, cfg);
}

}  // namespace saii::sampling
