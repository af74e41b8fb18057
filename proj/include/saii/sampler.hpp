#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "saii/array2d.hpp"
#include "saii/diffcore.hpp"
#include "saii/latent.hpp"
#include "saii/latentcodec.hpp"
#include "saii/seisforward.hpp"

namespace saii::sampling {

namespace fs = std::filesystem;
using diff::NoiseSchedule;

struct SamplerConfig {
  int num_steps = 30;
  double eta = 0.0;
  int interval = 3;     ///< resample when the step counter is a multiple; > num_steps disables
  double gamma = 40.0;
  int inner_iters = 50;
  double inner_lr = 1e-2;
  double early_stop_tol = 1e-6;  ///< relative decrease that ends the inner loop
  bool terminal_consistency = true;
  bool record_residuals = true;
  std::uint64_t seed = 0;

  void validate(int T) const;
  bool model_driven() const { return interval <= num_steps; }
  nlohmann::json to_json() const;
  static SamplerConfig from_json(const nlohmann::json& j);
};

/// Descending timesteps t_S = T > ... > t_1 = 1, uniformly spaced over [1, T].
std::vector<int> ddim_timesteps(int num_steps, int T);

/// sigma = eta sqrt((1 - abar_t)/(1 - abar_next)) sqrt(1 - abar_next/abar_t).
double ddim_sigma(const NoiseSchedule& s, int t, int t_next, double eta);

/// z0_hat = (z_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t).
LatentTensor predict_z0(const LatentTensor& z_t, const LatentTensor& eps_hat, int t, const NoiseSchedule& s);

/// One DDIM update from t_next down to t (t may be 0).
LatentTensor ddim_step(const LatentTensor& z_next, const LatentTensor& eps_hat, int t_next, int t,
                       const NoiseSchedule& s, double eta, std::mt19937_64& rng);

/// kappa_t^2 = gamma (1 - abar_{t-1}) / abar_t (1 - abar_t / abar_{t-1}), t >= 1.
double kappa_sq(const NoiseSchedule& s, int t, double gamma);

struct ResampleMoments {
  double weight_z0 = 0.0;  ///< mean = weight_z0 * z0' + weight_zt * z_t
  double weight_zt = 0.0;
  double variance = 0.0;
};
ResampleMoments resample_moments(const NoiseSchedule& s, int t, double gamma);

/// Draws from the Gaussian blending z0' and z_t; t == 0 returns z0'.
LatentTensor stochastic_resample(const LatentTensor& z0p, const LatentTensor& z_t, int t, double gamma,
                                 const NoiseSchedule& s, std::mt19937_64& rng);

struct ConsistencyResult {
  LatentTensor z0;             ///< E(x_final), diffusion scale
  double misfit_initial = 0.0; ///< J(D(z0_hat))
  double misfit_final = 0.0;   ///< J(x_final)
  int iterations = 0;
  bool warning = false;        ///< non-finite gradient: z0_hat returned unchanged
};

/// Gradient descent on J(x) = |d - f(denormalize(x))|^2 starting from x = D(z0_hat),
/// with Barzilai-Borwein steps and backtracking so J never increases. Latents are
/// in diffusion scale (codec latent * latent_scale); d is in raw amplitude units.
ConsistencyResult data_consistency_opt(const LatentTensor& z0_hat, const SeismicSection& d, const seis::Wavelet& w,
                                       const codec::Codec& codec, const SamplerConfig& cfg);

struct StepRecord {
  int step = 0;        ///< 1-based DDIM step counter
  int t_from = 0;
  int t_to = 0;
  bool resampled = false;
  double residual = -1.0;  ///< |d - f(D(z0_hat))| after the step, -1 if not recorded
  double dc_misfit_initial = 0.0;
  double dc_misfit_final = 0.0;
  int dc_iterations = 0;
  bool dc_warning = false;
};

struct InversionResult {
  ImpedanceGrid impedance;
  std::vector<StepRecord> steps;
  SamplerConfig config;
  double wallclock_s = 0.0;
  std::string codec_hash;
  double final_residual = 0.0;

  nlohmann::json sidecar() const;
  /// Writes `path` (.f32) and `path` + ".json".
  void save(const fs::path& path) const;
};

/// Conditional DDIM sampling with periodic data-consistency resampling.
/// Throws CheckpointMismatch when the codec is not the one the model was trained with.
InversionResult invert(const SeismicSection& d, const ImpedanceGrid& lowfreq, const seis::Wavelet& w,
                       const diff::DiffusionModel& model, const codec::Codec& codec, const SamplerConfig& cfg);

InversionResult invert(const SeismicSection& d, const ImpedanceGrid& lowfreq, const seis::Wavelet& w,
                       const fs::path& diffusion_ckpt, const fs::path& codec_ckpt, const SamplerConfig& cfg);

}  // namespace saii::sampling
