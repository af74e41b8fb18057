#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "saii/array2d.hpp"
#include "saii/datakit.hpp"
#include "saii/nn/blocks.hpp"
#include "saii/seisforward.hpp"

namespace saii::base {

namespace fs = std::filesystem;

inline constexpr const char* kBaselineFormat = "saii-baseline/1";

// ---------------------------------------------------------------------------
// 2D total variation

struct TvConfig {
  double mu1 = 0.001;  ///< low-frequency fidelity weight
  double mu2 = 0.01;   ///< TV weight
  double tau = 0.35;   ///< primal step
  double sigma = 0.35; ///< dual step
  int iterations = 2000;
  bool operate_in_log_domain = true;
  bool accelerate = true;  ///< step adaptation from the strong convexity of the quadratic part
  int log_every = 50;      ///< 0 disables the log

  /// Throws ValidationError on negative weights or tau * sigma * ||grad||^2 > 1.
  void validate() const;
  nlohmann::json to_json() const;
  static TvConfig from_json(const nlohmann::json& j);
};

/// |grad|^2 bound for the forward-difference 2D gradient.
inline constexpr double kGradNormSq = 8.0;

/// Isotropic TV, sum over pixels of sqrt(dx^2 + dy^2) with forward differences
/// and zero flux at the far edges.
double tv2d(const Array2D& u);

struct TvLogEntry {
  int iteration = 0;
  double objective = 0.0;
  double data_term = 0.0;
  double prior_term = 0.0;
  double tv_term = 0.0;
  double gap = 0.0;
};

/// Everything needed to re-evaluate the objective outside the solver.
struct TvProblem {
  std::vector<std::vector<double>> G;  ///< per-trace m x m row-major forward operator
  Array2D data;                        ///< right-hand side in the solver's variable
  Array2D prior;                       ///< low-frequency model in the solver's variable
  double mu1 = 0.0;
  double mu2 = 0.0;

  double data_term(const Array2D& u) const;   ///< sum_c |data_c - G_c u_c|^2
  double prior_term(const Array2D& u) const;  ///< mu1 |u - prior|^2
  double tv_term(const Array2D& u) const;     ///< mu2 TV(u)
  double objective(const Array2D& u) const { return data_term(u) + prior_term(u) + tv_term(u); }
};

/// Linearized problem for seismic d and low-frequency model l. In the log domain
/// G = W D / 2 on u = ln z; otherwise G = W J_r(l) on z with the affine offset
/// folded into `data`.
TvProblem make_tv_problem(const SeismicSection& d, const ImpedanceGrid& l, const seis::Wavelet& w, const TvConfig& cfg);

struct TvResult {
  ImpedanceGrid impedance;
  Array2D solution;  ///< in the solver's variable
  TvProblem problem;
  std::vector<TvLogEntry> log;
  std::vector<Array2D> snapshots;  ///< iterate at every log entry
};

/// Chambolle-Pock primal-dual solve of |d - G u|^2 + mu1 |u - l|^2 + mu2 TV(u).
TvResult tv_invert(const SeismicSection& d, const ImpedanceGrid& l, const seis::Wavelet& w, const TvConfig& cfg);

// ---------------------------------------------------------------------------
// Learned baselines

struct NetTrainConfig {
  int base_width = 16;
  std::vector<int> mults{1, 2, 2};
  double lr = 1e-3;
  int epochs = 40;
  int batch_size = 8;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static NetTrainConfig from_json(const nlohmann::json& j);
};

/// A trained SDL or USDL network with the normalization it expects.
class BaselineNet {
 public:
  BaselineNet(std::string method, const NetTrainConfig& cfg, const data::Normalization& norm, int in_channels);

  const std::string& method() const { return method_; }
  const NetTrainConfig& config() const { return cfg_; }
  const data::Normalization& normalization() const { return norm_; }
  nn::UNet& net() { return *net_; }
  const nn::UNet& net() const { return *net_; }
  std::string dataset_hash;

  void save(const fs::path& path) const;
  static BaselineNet load(const fs::path& path);

 private:
  std::string method_;
  NetTrainConfig cfg_;
  data::Normalization norm_;
  std::unique_ptr<nn::UNet> net_;
};

struct SdlResult {
  BaselineNet model;
  std::vector<double> epoch_mse;
};

/// Supervised regression from stacked (d, l) to impedance (all normalized).
/// Throws ValidationError when the manifest lacks impedance labels.
SdlResult sdl_train(const data::DatasetManifest& manifest, const fs::path& dataset_dir, const NetTrainConfig& cfg);
SdlResult sdl_train(const std::vector<SeismicSection>& d, const std::vector<ImpedanceGrid>& l,
                    const std::vector<ImpedanceGrid>& labels, const data::Normalization& norm,
                    const NetTrainConfig& cfg);
ImpedanceGrid sdl_infer(const SeismicSection& d, const ImpedanceGrid& l, const BaselineNet& model);

struct UsdlConfig {
  NetTrainConfig net{.lr = 1e-3, .epochs = 300, .batch_size = 1};
  double mu1 = 1.0;
  double mu2 = 0.01;
  double tv_eps = 1e-3;  ///< TV smoothing

  void validate() const;
  nlohmann::json to_json() const;
  static UsdlConfig from_json(const nlohmann::json& j);
};

struct UsdlTerms {
  double data = 0.0;   ///< |d - f(z)|^2
  double prior = 0.0;  ///< mu1 |x - x_l|^2 on normalized impedance
  double tv = 0.0;     ///< mu2 smoothed TV of x
  double total() const { return data + prior + tv; }
};

/// The unsupervised loss for one prediction x (normalized impedance).
UsdlTerms usdl_terms(const Array2D& x, const SeismicSection& d, const ImpedanceGrid& l, const seis::Wavelet& w,
                     const data::Normalization& norm, const UsdlConfig& cfg);

struct UsdlResult {
  BaselineNet model;
  std::vector<UsdlTerms> epoch_terms;      ///< evaluated on the predictions at each epoch boundary
  std::vector<std::vector<Array2D>> epoch_predictions;  ///< normalized x per section, same boundaries
  std::vector<ImpedanceGrid> predictions;  ///< final
};

/// Trains T_phi on the test sections themselves (no labels). Throws NumericalError
/// on a non-finite loss.
UsdlResult usdl_train(const std::vector<SeismicSection>& d, const std::vector<ImpedanceGrid>& l,
                      const seis::Wavelet& w, const data::Normalization& norm, const UsdlConfig& cfg,
                      bool keep_epoch_predictions = false);
ImpedanceGrid usdl_infer(const SeismicSection& d, const BaselineNet& model);

}  // namespace saii::base
