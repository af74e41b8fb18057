#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "saii/baselines.hpp"
#include "saii/config.hpp"
#include "saii/evalkit.hpp"

namespace saii::exp {

namespace fs = std::filesystem;
using config::ExperimentConfig;

/// Dataset, codec and diffusion model, trained or loaded through the cache.
struct Stack {
  fs::path dataset_dir;
  data::DatasetManifest manifest;
  fs::path codec_path;
  std::unique_ptr<codec::Codec> codec;
  fs::path diffusion_path;
  std::unique_ptr<diff::DiffusionModel> model;
};

/// Builds (or reuses) the training set described by cfg.dataset; returns its dir.
/// Generates the configured synthetic corpus into `dir`.
data::DatasetManifest build_dataset(const ExperimentConfig& cfg, const fs::path& dir);

fs::path ensure_dataset(const ExperimentConfig& cfg);
/// Everything up to the diffusion model (skipped when need_diffusion is false).
Stack ensure_stack(const ExperimentConfig& cfg, bool need_diffusion = true);
/// SDL checkpoint trained on the stack's dataset (cached).
base::BaselineNet ensure_sdl(const ExperimentConfig& cfg, const Stack& stack);

/// Test condition; unset fields fall back to cfg.test.
struct Condition {
  std::optional<double> cutoff_hz;
  std::optional<double> snr_db;
  std::optional<double> wavelet_freq_hz;
  std::optional<double> phase_deg;
};

struct TestCase {
  std::size_t index = 0;
  ImpedanceGrid truth;
  ImpedanceGrid lowfreq;
  SeismicSection clean;
  SeismicSection observed;
  seis::Wavelet wavelet;
};

/// Patch `index` of the held-out family; `noise_seed` selects the noise draw.
TestCase make_test_case(const ExperimentConfig& cfg, const Condition& cond, std::size_t index,
                        std::uint64_t noise_seed);

struct Outcome {
  std::string arm;
  std::size_t patch = 0;
  std::uint64_t seed = 0;
  eval::MetricReport metrics;
  double residual = 0.0;  ///< |d - f(x_hat)|
  double seconds = 0.0;
};

/// Arms: "cldm", "ablation" (interval beyond num_steps), "tv", "sdl", "usdl".
std::vector<Outcome> run_condition(const ExperimentConfig& cfg, const Stack& stack, const Condition& cond,
                                   const std::vector<std::string>& arms, const std::vector<std::uint64_t>& seeds,
                                   const base::BaselineNet* sdl = nullptr, const fs::path& figure_dir = {});

/// Per arm: per-seed mean over patches, then the median over seeds.
struct ArmSummary {
  double psnr = 0.0;
  double ssim = 0.0;
  double pcc = 0.0;
  double rre = 0.0;
  double residual = 0.0;
};
std::map<std::string, ArmSummary> summarize(const std::vector<Outcome>& outcomes);

/// Fraction of patches on which arm `a`'s median-over-seeds residual is <= arm `b`'s.
double residual_win_fraction(const std::vector<Outcome>& outcomes, const std::string& a, const std::string& b);

std::vector<std::string> experiment_names();

/// Runs a canned experiment, writing results.json, report.json and figures under
/// cfg.paths.out. Returns the results document.
nlohmann::json run_experiment(const std::string& name, const ExperimentConfig& cfg);

nlohmann::json outcomes_to_json(const std::vector<Outcome>& outcomes);

}  // namespace saii::exp
