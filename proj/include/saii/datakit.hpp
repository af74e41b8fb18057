#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "saii/array2d.hpp"
#include "saii/seisforward.hpp"

namespace saii::data {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Patching

struct PatchSpec {
  std::size_t patch_height = 256;
  std::size_t patch_width = 256;
  std::size_t stride_v = 256;
  std::size_t stride_h = 256;

  void validate() const;
};

struct PatchAnchor {
  std::size_t row = 0;
  std::size_t col = 0;
  bool operator==(const PatchAnchor&) const = default;
};

/// Top-left corners of an edge-anchored tiling: regular strides from 0, plus a
/// final tile flush with the far boundary when the strides leave a gap.
std::vector<PatchAnchor> patch_anchors(std::size_t rows, std::size_t cols, const PatchSpec& spec);

std::vector<Array2D> extract_patches(const Array2D& model, const PatchSpec& spec);
std::vector<ImpedanceGrid> extract_patches(const ImpedanceGrid& model, const PatchSpec& spec);

/// Copies patches back to their anchors (later tiles overwrite earlier ones).
Array2D assemble_patches(const std::vector<Array2D>& patches, const std::vector<PatchAnchor>& anchors,
                         std::size_t rows, std::size_t cols);

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentationConfig {
  bool enable_hflip = true;
  bool enable_vflip = true;
  bool enable_elastic = true;
  int elastic_draws = 2;
  double elastic_alpha = 4.0;  ///< max displacement, samples
  double elastic_sigma = 6.0;  ///< smoothing width, samples
  std::uint64_t seed = 0;

  void validate() const;
};

Array2D hflip(const Array2D& a);
Array2D vflip(const Array2D& a);

/// Gaussian-smoothed random displacement field (max |displacement| == alpha),
/// bilinear resampling with reflective boundaries.
Array2D elastic_deform(const Array2D& a, double alpha, double sigma, std::uint64_t seed);

/// Per input patch: original, hflip, vflip, then `elastic_draws` deformed copies.
std::vector<ImpedanceGrid> augment(const std::vector<ImpedanceGrid>& patches, const AugmentationConfig& cfg);

// ---------------------------------------------------------------------------
// Filtering

/// One biquad in direct form II transposed: b0 b1 b2 / (1 a1 a2).
struct Biquad {
  double b0, b1, b2, a1, a2;
};

/// 4th-order Butterworth low-pass as two bilinear-transformed biquads.
std::vector<Biquad> butterworth_lowpass(double cutoff_hz, double dt);

/// Zero-phase (forward-backward) filtering with odd-extension padding and
/// steady-state initial conditions.
std::vector<double> filtfilt(const std::vector<Biquad>& sos, std::span<const double> x);

/// Trace-wise zero-phase low-pass; undershoots clamp to 1% of the input minimum.
ImpedanceGrid lowpass_impedance(const ImpedanceGrid& imp, double cutoff_hz, double dt);

// ---------------------------------------------------------------------------
// Synthetic models

struct LayerStats {
  double imp_min = 2500.0;
  double imp_max = 10500.0;
  int min_layers = 5;
  int max_layers = 14;
  double min_thickness = 3.0;   ///< samples
  double value_std = 0.12;      ///< layer-to-layer jitter as a fraction of the range
  double lateral_std = 0.03;    ///< smooth lateral variation within a layer, fraction of value
  double max_dip = 0.12;        ///< samples of depth per trace
  double undulation = 2.0;      ///< amplitude of smooth interface bending, samples
  double fault_probability = 0.3;
  double max_throw = 6.0;       ///< samples
  double gradient_fraction = 0.04;  ///< linear trend inside each layer, fraction of range

  void validate() const;
  nlohmann::json to_json() const;
  static LayerStats from_json(const nlohmann::json& j);
};

/// Piecewise-smooth layered impedance with lateral continuity, dips and an
/// optional fault offset. Values lie within [imp_min, imp_max].
ImpedanceGrid random_layered_model(std::size_t depth, std::size_t traces, const LayerStats& stats,
                                   std::uint64_t seed, double dt = 0.002);

// ---------------------------------------------------------------------------
// Dataset

struct Normalization {
  double imp_min = 0.0;
  double imp_max = 1.0;
  double seis_scale = 1.0;

  /// Impedance to [-1, 1].
  Array2D normalize_impedance(const Array2D& imp) const;
  Array2D denormalize_impedance(const Array2D& x) const;
  Array2D normalize_seismic(const Array2D& d) const;
  double impedance_half_range() const { return 0.5 * (imp_max - imp_min); }

  bool operator==(const Normalization&) const = default;
};

struct DatasetEntry {
  std::string impedance_path;
  std::string lowfreq_path;
  std::string seismic_path;
  double cutoff_hz = 0.0;
  double dominant_freq_hz = 0.0;
  double phase_deg = 0.0;
  int wavelet_half_length = 0;
  double snr_db = 0.0;
  double band_low_hz = 0.0;
  double band_high_hz = 0.0;
  std::uint64_t noise_seed = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  seis::Wavelet wavelet(double dt) const;
  bool operator==(const DatasetEntry&) const = default;
};

inline constexpr const char* kDatasetFormat = "saii-dataset/1";

struct DatasetManifest {
  std::vector<DatasetEntry> entries;
  Normalization normalization;
  double dt = 0.002;
  std::string format_version = kDatasetFormat;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
  bool operator==(const DatasetManifest&) const = default;
};

/// Writes `dir/manifest.json`.
void save_manifest(const DatasetManifest& m, const fs::path& dir);
/// Loads and checks that every referenced file exists with the declared size.
DatasetManifest load_manifest(const fs::path& dir);

struct LoadedEntry {
  ImpedanceGrid impedance;
  ImpedanceGrid lowfreq;
  SeismicSection seismic;
};
LoadedEntry load_entry(const DatasetManifest& m, const fs::path& dir, std::size_t index);

struct TrainingSetSpec {
  std::vector<double> wavelet_freqs{25.0, 30.0, 35.0};
  std::vector<double> cutoffs{3.0, 6.0, 12.0, 18.0};
  double snr_db = 20.0;
  double phase_deg = 0.0;
  std::optional<std::pair<double, double>> noise_band;  ///< default: wavelet -20 dB band
  double dt = 0.002;
  std::uint64_t seed = 0;
};

/// For each model: writes impedance, a low-pass condition (random cutoff) and a
/// noisy seismic record (random wavelet frequency). On any I/O failure all
/// files written so far are removed and IoError is rethrown.
DatasetManifest build_training_set(const std::vector<ImpedanceGrid>& models, const TrainingSetSpec& spec,
                                   const fs::path& out_dir);

/// The noise-free seismic for an entry, recomputed from its stored impedance.
SeismicSection resynthesize_clean(const DatasetManifest& m, const fs::path& dir, std::size_t index);

}  // namespace saii::data
