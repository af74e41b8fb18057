#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "saii/conditioner.hpp"
#include "saii/datakit.hpp"
#include "saii/latent.hpp"
#include "saii/latentcodec.hpp"
#include "saii/nn/blocks.hpp"
#include "saii/nn/checkpoint.hpp"
#include "saii/nn/optim.hpp"

namespace saii::diff {

namespace fs = std::filesystem;

inline constexpr const char* kDiffusionFormat = "saii-diffusion/1";

/// beta/alpha/alpha_bar for t = 1..T, stored at index t-1. alpha_bar(0) == 1.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  double beta_at(int t) const;
  double alpha_bar_at(int t) const;  ///< t in [0, T]
  void validate() const;
  nlohmann::json to_json() const;
  static NoiseSchedule from_json(const nlohmann::json& j);
};

NoiseSchedule make_linear_schedule(int T = 1000, double beta_start = 1e-4, double beta_end = 2e-2);

/// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps. Takes no conditioning input.
LatentTensor q_sample(const LatentTensor& z0, int t, const LatentTensor& eps, const NoiseSchedule& s);

/// The forward-noising draw used by training: one t per sample (or `fixed_t`
/// for every sample), standard normal eps, and the resulting z_t.
struct ForwardNoising {
  std::vector<int> t;
  nn::Tensor eps;
  nn::Tensor z_t;
};
ForwardNoising draw_forward_noising(const nn::Tensor& z0, const NoiseSchedule& s, std::mt19937_64& rng,
                                    std::optional<int> fixed_t = std::nullopt);

struct DenoiserConfig {
  int latent_channels = 3;
  int base_width = 32;
  std::vector<int> mults{1, 2, 2};
  cond::ShwtConfig shwt;

  void validate() const;
  nlohmann::json to_json() const;
  static DenoiserConfig from_json(const nlohmann::json& j);
};

/// eps_hat = net([z_t, l_z, SHWT(d)], t): the UNet (theta) plus the SHWT head (phi).
class Denoiser : public nn::Module {
 public:
  Denoiser(const DenoiserConfig& cfg, std::uint64_t seed);

  /// d: normalized seismic [n, 1, H, W] on the pixel grid of the latents.
  nn::Tensor forward(const nn::Tensor& z_t, std::span<const float> t, const nn::Tensor& l_z,
                     const nn::Tensor& d) const;
  nn::Tensor forward_train(const nn::Tensor& z_t, std::span<const float> t, const nn::Tensor& l_z,
                           const nn::Tensor& d);
  void backward(const nn::Tensor& g_eps);

  /// d_z for a single section (computed once per inversion).
  LatentTensor condition(const Array2D& d_normalized) const;
  /// eps_hat for one latent with a precomputed d_z.
  LatentTensor predict_eps(const LatentTensor& z_t, int t, const LatentTensor& l_z, const LatentTensor& d_z) const;

  void visit(const std::string& prefix, const nn::Visitor& fn) override;
  const DenoiserConfig& config() const { return cfg_; }
  nn::UNet& unet() { return *unet_; }
  cond::ShwtHead& shwt() { return *shwt_; }
  std::size_t unet_parameter_count() const;
  std::size_t shwt_parameter_count() const;

 private:
  DenoiserConfig cfg_;
  std::unique_ptr<nn::UNet> unet_;
  std::unique_ptr<cond::ShwtHead> shwt_;
};

struct DiffusionConfig {
  DenoiserConfig net;
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
  double lr = 2e-4;
  int epochs = 50;
  int batch_size = 16;
  double ema_decay = 0.995;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static DiffusionConfig from_json(const nlohmann::json& j);
};

/// Pre-encoded training tensors: z0 and l_z in diffusion scale, d normalized pixels.
struct DiffusionData {
  nn::Tensor z0;
  nn::Tensor l_z;
  nn::Tensor d;
  std::size_t size() const { return static_cast<std::size_t>(z0.n()); }
};

/// Encodes impedance and low-frequency fields with the frozen codec. Throws
/// DimensionError when the dataset grid is incompatible with the codec.
DiffusionData prepare_diffusion_data(const data::DatasetManifest& manifest, const fs::path& dataset_dir,
                                     const codec::Codec& codec);

using EpsPredictor = std::function<nn::Tensor(const nn::Tensor& z_t, std::span<const float> t,
                                              const nn::Tensor& l_z, const nn::Tensor& d)>;

struct TrainingBatch {
  nn::Tensor z0;
  nn::Tensor l_z;
  nn::Tensor d;
};

struct LossResult {
  double loss = 0.0;
  ForwardNoising noising;
  nn::Tensor eps_hat;
};

/// Mean squared error between the drawn eps and predictor(z_t, t, l_z, d).
LossResult training_loss(const TrainingBatch& batch, const NoiseSchedule& s, const EpsPredictor& predictor,
                         std::mt19937_64& rng, std::optional<int> fixed_t = std::nullopt);

/// One optimisation step on theta and phi jointly. Throws NumericalError on NaN.
double training_step(const TrainingBatch& batch, const NoiseSchedule& s, Denoiser& net, nn::Adam& opt,
                     std::mt19937_64& rng);

/// Trained (EMA) denoiser + schedule + the hash of the codec it was trained with.
class DiffusionModel {
 public:
  DiffusionModel(const DiffusionConfig& cfg, std::string codec_hash);

  const DiffusionConfig& config() const { return cfg_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const Denoiser& denoiser() const { return *net_; }
  Denoiser& denoiser() { return *net_; }
  const std::string& codec_hash() const { return codec_hash_; }
  std::vector<double>& loss_history() { return loss_history_; }
  const std::vector<double>& loss_history() const { return loss_history_; }

  /// Throws CheckpointMismatch unless `codec` hashes to codec_hash().
  void require_codec(const codec::Codec& codec) const;

  void save(const fs::path& path, const nn::BlobMap& extra = {}, const nlohmann::json& extra_header = {}) const;
  static DiffusionModel load(const fs::path& path, nn::BlobMap* extra = nullptr, nlohmann::json* header = nullptr);

 private:
  DiffusionConfig cfg_;
  NoiseSchedule schedule_;
  std::unique_ptr<Denoiser> net_;
  std::string codec_hash_;
  std::vector<double> loss_history_;
};

struct TrainOptions {
  std::optional<fs::path> checkpoint_path;  ///< written every `checkpoint_every` epochs and at the end
  int checkpoint_every = 0;
  std::optional<fs::path> resume_from;
  int max_epochs_this_run = -1;  ///< stop early (for resume tests); -1 = run to cfg.epochs
};

struct DiffusionTrainResult {
  DiffusionModel model;       ///< EMA weights
  std::vector<double> losses;       ///< per-epoch mean training loss, this run
  std::vector<double> step_losses;  ///< per-batch loss, this run
  int epochs_done = 0;              ///< total, including resumed epochs
};

DiffusionTrainResult train_diffusion(const DiffusionData& data, const std::string& codec_hash,
                                     const DiffusionConfig& cfg, const TrainOptions& opts = {});

DiffusionTrainResult train_diffusion(const data::DatasetManifest& manifest, const fs::path& dataset_dir,
                                     const codec::Codec& codec, const DiffusionConfig& cfg,
                                     const TrainOptions& opts = {});

struct MarginalCheck {
  int t = 0;
  double mean = 0.0;      ///< of standardized (z_t - sqrt(abar) z0) / sqrt(1 - abar)
  double variance = 0.0;
  double mean_tol = 0.0;  ///< 3 standard errors
  double var_tol = 0.0;
  bool pass = false;
};

struct MarginalReport {
  bool static_check = false;
  std::vector<MarginalCheck> checks;
  bool pass() const;
  nlohmann::json to_json() const;
};

/// Verifies that the forward noising inside training_loss is the unconditional
/// Gaussian q(z_t | z0): statically (q_sample has no conditioning parameter) and
/// by moment tests at t in {1, T/2, T} with conditioning inputs present.
MarginalReport conditional_marginal_property_check(const NoiseSchedule& s, int n_draws, std::uint64_t seed = 0);

}  // namespace saii::diff
