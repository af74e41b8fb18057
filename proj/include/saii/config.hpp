#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "saii/baselines.hpp"
#include "saii/datakit.hpp"
#include "saii/diffcore.hpp"
#include "saii/latentcodec.hpp"
#include "saii/sampler.hpp"

namespace saii::config {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kConfigFormat = "saii-config/1";

struct PathsSection {
  std::string out = "runs/default";
  std::string cache;           ///< empty: $SAII_CACHE, else <out>/cache
  std::string dataset;         ///< existing dataset dir; empty: build into the cache
  std::string codec_ckpt;      ///< empty: train (cached)
  std::string diffusion_ckpt;  ///< empty: train (cached)
  std::string sdl_ckpt;
  std::string seismic;         ///< inputs for `invert` / `baseline` / `eval` (.f32)
  std::string lowfreq;
  std::string truth;
  std::string estimate;
};

struct DatasetSection {
  int count = 200;  ///< synthetic models
  int depth = 64;
  int traces = 64;
  data::LayerStats stats;
  data::PatchSpec patch{64, 64, 64, 64};
  bool augment = false;
  data::AugmentationConfig augmentation;
  data::TrainingSetSpec training;
  std::uint64_t model_seed = 5000;
};

/// Held-out test patches (synthetic, drawn from the same model family).
struct TestSection {
  int count = 10;
  int depth = 64;
  int traces = 64;
  double cutoff_hz = 6.0;
  double snr_db = 15.0;
  double wavelet_freq_hz = 30.0;
  double phase_deg = 0.0;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::uint64_t model_seed = 900000;
  std::vector<std::size_t> well_traces{20, 44};
  bool run_sdl = true;
  bool run_usdl = false;
};

struct ExperimentConfig {
  std::string format_version = kConfigFormat;
  std::uint64_t seed = 0;
  std::string log_level = "info";
  PathsSection paths;
  DatasetSection dataset;
  codec::CodecConfig codec;
  diff::DiffusionConfig diffusion;
  sampling::SamplerConfig sampler;
  base::TvConfig tv;
  base::NetTrainConfig sdl;
  base::UsdlConfig usdl;
  TestSection test;

  json to_json() const;
  /// Strict: every key must exist in the default configuration.
  static ExperimentConfig from_json(const json& j);
  /// Validates every module section; throws ValidationError.
  void validate() const;
  /// sha256 of the canonical JSON.
  std::string hash() const;
  fs::path cache_dir() const;
};

/// The default configuration as JSON (the schema for key checking).
json defaults();

/// Throws ValidationError naming the first key of `user` absent from `schema`
/// or whose JSON type is incompatible.
void check_keys(const json& schema, const json& user, const std::string& where = "");

/// Recursive merge; arrays and scalars in `over` replace those in `base`.
json merge(json base, const json& over);

/// Loads JSON or YAML (by extension; .yaml/.yml parse as YAML).
json load_file(const fs::path& path);

/// Parses "a.b.c=value" (value as JSON when it parses, else as a string) into a
/// nested object.
json parse_override(const std::string& assignment);

/// defaults <- file <- --seed <- overrides, then strict parse and validation.
/// The global seed propagates to module seeds not set explicitly.
ExperimentConfig resolve(const std::optional<fs::path>& file, const std::vector<std::string>& overrides,
                         std::optional<std::uint64_t> seed, std::optional<std::string> out = std::nullopt);

json to_json(const data::PatchSpec& p);
json to_json(const data::AugmentationConfig& a);
json to_json(const data::TrainingSetSpec& t);

}  // namespace saii::config
