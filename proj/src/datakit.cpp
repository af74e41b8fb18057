#include "saii/datakit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "saii/error.hpp"
#include "saii/io.hpp"

namespace saii::data {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Patching

void PatchSpec::validate() const {
  if (patch_height < 8 || patch_width < 8) throw ParameterError("patch dimensions must be >= 8");
  if (stride_v < 1 || stride_h < 1) throw ParameterError("patch strides must be >= 1");
}

namespace {

std::vector<std::size_t> axis_positions(std::size_t extent, std::size_t patch, std::size_t stride) {
  if (extent < patch) {
    throw DimensionError("model extent " + std::to_string(extent) + " is smaller than patch " +
                         std::to_string(patch));
  }
  std::vector<std::size_t> pos;
  for (std::size_t p = 0; p + patch <= extent; p += stride) pos.push_back(p);
  if (pos.back() + patch < extent) pos.push_back(extent - patch);
  return pos;
}

}  // namespace

std::vector<PatchAnchor> patch_anchors(std::size_t rows, std::size_t cols, const PatchSpec& spec) {
  spec.validate();
  const auto rs = axis_positions(rows, spec.patch_height, spec.stride_v);
  const auto cs = axis_positions(cols, spec.patch_width, spec.stride_h);
  std::vector<PatchAnchor> out;
  out.reserve(rs.size() * cs.size());
  for (auto r : rs)
    for (auto c : cs) out.push_back({r, c});
  return out;
}

std::vector<Array2D> extract_patches(const Array2D& model, const PatchSpec& spec) {
  std::vector<Array2D> out;
  for (const auto& a : patch_anchors(model.rows(), model.cols(), spec))
    out.push_back(model.block(a.row, a.col, spec.patch_height, spec.patch_width));
  return out;
}

std::vector<ImpedanceGrid> extract_patches(const ImpedanceGrid& model, const PatchSpec& spec) {
  std::vector<ImpedanceGrid> out;
  for (auto& p : extract_patches(model.values, spec)) out.push_back({std::move(p), model.dt, model.origin_tag});
  return out;
}

Array2D assemble_patches(const std::vector<Array2D>& patches, const std::vector<PatchAnchor>& anchors,
                         std::size_t rows, std::size_t cols) {
  if (patches.size() != anchors.size()) throw DimensionError("assemble_patches: patch/anchor count mismatch");
  Array2D out(rows, cols, 0.0);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto& p = patches[i];
    for (std::size_t r = 0; r < p.rows(); ++r)
      for (std::size_t c = 0; c < p.cols(); ++c) out(anchors[i].row + r, anchors[i].col + c) = p(r, c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

void AugmentationConfig::validate() const {
  if (elastic_alpha < 0.0) throw ParameterError("elastic_alpha must be >= 0");
  if (!(elastic_sigma > 0.0)) throw ParameterError("elastic_sigma must be > 0");
  if (elastic_draws < 0) throw ParameterError("elastic_draws must be >= 0");
}

Array2D hflip(const Array2D& a) {
  Array2D out(a.rows(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(r, c) = a(r, a.cols() - 1 - c);
  return out;
}

Array2D vflip(const Array2D& a) {
  Array2D out(a.rows(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(r, c) = a(a.rows() - 1 - r, c);
  return out;
}

namespace {

// Reflect a continuous coordinate into [0, n-1].
double reflect_coord(double u, std::size_t n) {
  if (n == 1) return 0.0;
  const double last = static_cast<double>(n - 1);
  const double period = 2.0 * last;
  u = std::fmod(std::abs(u), period);
  return u > last ? period - u : u;
}

std::size_t reflect_index(long i, std::size_t n) {
  const long last = static_cast<long>(n) - 1;
  if (last == 0) return 0;
  const long period = 2 * last;
  i = std::abs(i) % period;
  return static_cast<std::size_t>(i > last ? period - i : i);
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * static_cast<std::size_t>(radius) + 1);
  double s = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    s += k[static_cast<std::size_t>(i + radius)];
  }
  for (double& v : k) v /= s;
  return k;
}

Array2D gaussian_smooth(const Array2D& a, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const long radius = static_cast<long>(k.size() / 2);
  Array2D tmp(a.rows(), a.cols()), out(a.rows(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) {
      double s = 0.0;
      for (long i = -radius; i <= radius; ++i)
        s += k[static_cast<std::size_t>(i + radius)] * a(r, reflect_index(static_cast<long>(c) + i, a.cols()));
      tmp(r, c) = s;
    }
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) {
      double s = 0.0;
      for (long i = -radius; i <= radius; ++i)
        s += k[static_cast<std::size_t>(i + radius)] * tmp(reflect_index(static_cast<long>(r) + i, a.rows()), c);
      out(r, c) = s;
    }
  return out;
}

double bilinear(const Array2D& a, double r, double c) {
  r = reflect_coord(r, a.rows());
  c = reflect_coord(c, a.cols());
  const auto r0 = static_cast<std::size_t>(std::floor(r));
  const auto c0 = static_cast<std::size_t>(std::floor(c));
  const std::size_t r1 = std::min(r0 + 1, a.rows() - 1), c1 = std::min(c0 + 1, a.cols() - 1);
  const double fr = r - static_cast<double>(r0), fc = c - static_cast<double>(c0);
  const double top = (1.0 - fc) * a(r0, c0) + fc * a(r0, c1);
  const double bot = (1.0 - fc) * a(r1, c0) + fc * a(r1, c1);
  return (1.0 - fr) * top + fr * bot;
}

}  // namespace

Array2D elastic_deform(const Array2D& a, double alpha, double sigma, std::uint64_t seed) {
  if (alpha < 0.0 || !(sigma > 0.0)) throw ParameterError("elastic_deform: need alpha >= 0, sigma > 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  Array2D dx(a.rows(), a.cols()), dy(a.rows(), a.cols());
  for (std::size_t i = 0; i < dx.size(); ++i) dx.data()[i] = uni(rng);
  for (std::size_t i = 0; i < dy.size(); ++i) dy.data()[i] = uni(rng);
  dx = gaussian_smooth(dx, sigma);
  dy = gaussian_smooth(dy, sigma);
  const double peak = std::max({std::abs(dx.min()), std::abs(dx.max()), std::abs(dy.min()), std::abs(dy.max())});
  const double scale = peak > 0.0 ? alpha / peak : 0.0;
  Array2D out(a.rows(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c)
      out(r, c) = bilinear(a, static_cast<double>(r) + scale * dy(r, c), static_cast<double>(c) + scale * dx(r, c));
  return out;
}

std::vector<ImpedanceGrid> augment(const std::vector<ImpedanceGrid>& patches, const AugmentationConfig& cfg) {
  cfg.validate();
  std::vector<ImpedanceGrid> out;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto& p = patches[i];
    out.push_back(p);
    if (cfg.enable_hflip) out.push_back({hflip(p.values), p.dt, p.origin_tag + "+hflip"});
    if (cfg.enable_vflip) out.push_back({vflip(p.values), p.dt, p.origin_tag + "+vflip"});
    if (cfg.enable_elastic) {
      for (int k = 0; k < cfg.elastic_draws; ++k) {
        const auto seed = io::mix_seed(cfg.seed, i * 1009 + static_cast<std::size_t>(k));
        out.push_back({elastic_deform(p.values, cfg.elastic_alpha, cfg.elastic_sigma, seed), p.dt,
                       p.origin_tag + "+elastic" + std::to_string(k)});
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Filtering

std::vector<Biquad> butterworth_lowpass(double cutoff_hz, double dt) {
  const double nyquist = 0.5 / dt;
  if (!(cutoff_hz > 0.0) || cutoff_hz >= nyquist) throw ParameterError("low-pass cutoff must lie in (0, Nyquist)");
  const double k = std::tan(std::numbers::pi * cutoff_hz * dt);
  std::vector<Biquad> sos;
  // Pole pairs of the normalized 4th-order prototype at angles 5pi/8 and 7pi/8.
  for (double theta : {5.0 * std::numbers::pi / 8.0, 7.0 * std::numbers::pi / 8.0}) {
    const double q = -2.0 * std::cos(theta);
    const double a0 = 1.0 + q * k + k * k;
    const double b0 = k * k / a0;
    sos.push_back({b0, 2.0 * b0, b0, 2.0 * (k * k - 1.0) / a0, (1.0 - q * k + k * k) / a0});
  }
  return sos;
}

namespace {

void sosfilt_inplace(const std::vector<Biquad>& sos, std::vector<double>& x) {
  // Steady-state initial conditions for a step of height x[0].
  double level = x.front();
  for (const auto& s : sos) {
    const double g = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    double z2 = (s.b2 - s.a2 * g) * level;
    double z1 = (g - s.b0) * level;
    for (double& v : x) {
      const double y = s.b0 * v + z1;
      z1 = s.b1 * v - s.a1 * y + z2;
      z2 = s.b2 * v - s.a2 * y;
      v = y;
    }
    level *= g;
  }
}

}  // namespace

std::vector<double> filtfilt(const std::vector<Biquad>& sos, std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 2) return {x.begin(), x.end()};
  const std::size_t padlen = std::min<std::size_t>(3 * (2 * sos.size() + 1), n - 1);
  std::vector<double> ext;
  ext.reserve(n + 2 * padlen);
  for (std::size_t i = padlen; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= padlen; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  sosfilt_inplace(sos, ext);
  std::reverse(ext.begin(), ext.end());
  sosfilt_inplace(sos, ext);
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(padlen), ext.begin() + static_cast<std::ptrdiff_t>(padlen + n)};
}

ImpedanceGrid lowpass_impedance(const ImpedanceGrid& imp, double cutoff_hz, double dt) {
  const auto sos = butterworth_lowpass(cutoff_hz, dt);
  const double floor = 0.01 * imp.values.min();
  ImpedanceGrid out{Array2D(imp.values.rows(), imp.values.cols()), imp.dt,
                    imp.origin_tag + "+lowpass" + std::to_string(cutoff_hz)};
  for (std::size_t c = 0; c < imp.values.cols(); ++c) {
    auto col = filtfilt(sos, imp.values.column(c));
    for (double& v : col) v = std::max(v, floor);
    out.values.set_column(c, col);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic models

void LayerStats::validate() const {
  if (!(imp_min > 0.0 && imp_min < imp_max)) throw ParameterError("LayerStats: need 0 < imp_min < imp_max");
  if (min_layers < 1 || max_layers < min_layers) throw ParameterError("LayerStats: invalid layer count range");
  if (value_std < 0 || lateral_std < 0 || max_dip < 0 || undulation < 0 || max_throw < 0 || min_thickness < 0)
    throw ParameterError("LayerStats: spreads must be >= 0");
  if (fault_probability < 0 || fault_probability > 1) throw ParameterError("LayerStats: fault_probability in [0,1]");
}

json LayerStats::to_json() const {
  return {{"imp_min", imp_min},         {"imp_max", imp_max},         {"min_layers", min_layers},
          {"max_layers", max_layers},   {"min_thickness", min_thickness}, {"value_std", value_std},
          {"lateral_std", lateral_std}, {"max_dip", max_dip},         {"undulation", undulation},
          {"fault_probability", fault_probability}, {"max_throw", max_throw},
          {"gradient_fraction", gradient_fraction}};
}

LayerStats LayerStats::from_json(const json& j) {
  LayerStats s;
  s.imp_min = j.value("imp_min", s.imp_min);
  s.imp_max = j.value("imp_max", s.imp_max);
  s.min_layers = j.value("min_layers", s.min_layers);
  s.max_layers = j.value("max_layers", s.max_layers);
  s.min_thickness = j.value("min_thickness", s.min_thickness);
  s.value_std = j.value("value_std", s.value_std);
  s.lateral_std = j.value("lateral_std", s.lateral_std);
  s.max_dip = j.value("max_dip", s.max_dip);
  s.undulation = j.value("undulation", s.undulation);
  s.fault_probability = j.value("fault_probability", s.fault_probability);
  s.max_throw = j.value("max_throw", s.max_throw);
  s.gradient_fraction = j.value("gradient_fraction", s.gradient_fraction);
  return s;
}

namespace {

// Smooth random curve in [-1, 1] along the trace axis.
std::vector<double> smooth_curve(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> out(n, 0.0);
  double peak = 0.0;
  for (int k = 1; k <= 3; ++k) {
    const double amp = uni(rng) / k;
    const double wavelength = (0.6 + 1.4 * uni(rng)) * static_cast<double>(n) / k;
    const double phase = 2.0 * std::numbers::pi * uni(rng);
    for (std::size_t x = 0; x < n; ++x)
      out[x] += amp * std::sin(2.0 * std::numbers::pi * static_cast<double>(x) / wavelength + phase);
  }
  for (double v : out) peak = std::max(peak, std::abs(v));
  if (peak > 0.0)
    for (double& v : out) v /= peak;
  return out;
}

}  // namespace

ImpedanceGrid random_layered_model(std::size_t depth, std::size_t traces, const LayerStats& stats,
                                   std::uint64_t seed, double dt) {
  if (depth < 32) throw ParameterError("random_layered_model: depth must be >= 32");
  if (traces < 1) throw ParameterError("random_layered_model: need at least one trace");
  stats.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  const double range = stats.imp_max - stats.imp_min;
  const double D = static_cast<double>(depth);
  const double mid_trace = 0.5 * static_cast<double>(traces - 1);
  const int n_layers = stats.min_layers + static_cast<int>(uni(rng) * (stats.max_layers - stats.min_layers + 1));
  const int n_interfaces = std::max(0, n_layers - 1);

  // Reference depths of the interfaces at the centre trace, kept min_thickness apart.
  std::vector<double> base(static_cast<std::size_t>(n_interfaces));
  for (double& b : base) b = (-0.1 + 1.2 * uni(rng)) * D;
  std::sort(base.begin(), base.end());
  for (std::size_t i = 1; i < base.size(); ++i) base[i] = std::max(base[i], base[i - 1] + stats.min_thickness);

  const double global_dip = (2.0 * uni(rng) - 1.0) * stats.max_dip;
  const auto bend = smooth_curve(traces, rng);
  const bool faulted = uni(rng) < stats.fault_probability;
  const double fault_x = (0.2 + 0.6 * uni(rng)) * static_cast<double>(traces);
  const double fault_slope = (2.0 * uni(rng) - 1.0) * 0.3;  // traces per sample of depth
  const double throw_ = (2.0 * uni(rng) - 1.0) * stats.max_throw;

  std::vector<double> dip(base.size()), bend_weight(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    dip[i] = global_dip + (2.0 * uni(rng) - 1.0) * 0.2 * stats.max_dip;
    bend_weight[i] = stats.undulation * (0.7 + 0.6 * uni(rng));
  }

  // Layer values follow a compaction-like trend with random jitter.
  const double trend_lo = 0.15 + 0.2 * uni(rng), trend_hi = 0.6 + 0.3 * uni(rng);
  std::vector<double> value(static_cast<std::size_t>(n_layers));
  std::vector<std::vector<double>> lateral(static_cast<std::size_t>(n_layers));
  for (int k = 0; k < n_layers; ++k) {
    const double top = k == 0 ? -0.1 * D : base[static_cast<std::size_t>(k - 1)];
    const double bot = k == n_interfaces ? 1.1 * D : base[static_cast<std::size_t>(k)];
    const double centre = std::clamp(0.5 * (top + bot) / D, 0.0, 1.0);
    const double v = stats.imp_min + range * (trend_lo + (trend_hi - trend_lo) * centre) +
                     stats.value_std * range * normal(rng);
    value[static_cast<std::size_t>(k)] = std::clamp(v, stats.imp_min, stats.imp_max);
    lateral[static_cast<std::size_t>(k)] = smooth_curve(traces, rng);
  }

  ImpedanceGrid out{Array2D(depth, traces), dt, "layered:" + std::to_string(seed)};
  std::vector<double> iface(base.size());
  for (std::size_t x = 0; x < traces; ++x) {
    const double xd = static_cast<double>(x);
    for (std::size_t i = 0; i < base.size(); ++i) {
      iface[i] = base[i] + dip[i] * (xd - mid_trace) + bend_weight[i] * bend[x];
      if (i > 0) iface[i] = std::max(iface[i], iface[i - 1]);
    }
    for (std::size_t r = 0; r < depth; ++r) {
      const double rd = static_cast<double>(r);
      double shift = 0.0;
      if (faulted && xd >= fault_x + fault_slope * (rd - 0.5 * D)) shift = throw_;
      const double probe = rd - shift;
      std::size_t k = 0;
      while (k < iface.size() && iface[k] <= probe) ++k;
      double v = value[k] * (1.0 + stats.lateral_std * lateral[k][x]);
      v += stats.gradient_fraction * range * (rd / D - 0.5);
      out.values(r, x) = std::clamp(v, stats.imp_min, stats.imp_max);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset

Array2D Normalization::normalize_impedance(const Array2D& imp) const {
  Array2D out = imp;
  const double s = 2.0 / (imp_max - imp_min);
  for (double& v : out.values()) v = (v - imp_min) * s - 1.0;
  return out;
}

Array2D Normalization::denormalize_impedance(const Array2D& x) const {
  Array2D out = x;
  const double h = impedance_half_range();
  for (double& v : out.values()) v = imp_min + (v + 1.0) * h;
  return out;
}

Array2D Normalization::normalize_seismic(const Array2D& d) const {
  Array2D out = d;
  for (double& v : out.values()) v /= seis_scale;
  return out;
}

seis::Wavelet DatasetEntry::wavelet(double dt) const {
  return seis::ricker(dominant_freq_hz, dt, wavelet_half_length, phase_deg);
}

json DatasetManifest::to_json() const {
  json entries_j = json::array();
  for (const auto& e : entries) {
    entries_j.push_back({{"impedance_path", e.impedance_path},
                         {"lowfreq_path", e.lowfreq_path},
                         {"seismic_path", e.seismic_path},
                         {"cutoff_hz", e.cutoff_hz},
                         {"dominant_freq_hz", e.dominant_freq_hz},
                         {"phase_deg", e.phase_deg},
                         {"wavelet_half_length", e.wavelet_half_length},
                         {"snr_db", std::isinf(e.snr_db) ? json("inf") : json(e.snr_db)},
                         {"band_hz", {e.band_low_hz, e.band_high_hz}},
                         {"noise_seed", e.noise_seed},
                         {"shape", {e.rows, e.cols}}});
  }
  return {{"format_version", format_version},
          {"dt", dt},
          {"seed", seed},
          {"normalization",
           {{"imp_min", normalization.imp_min},
            {"imp_max", normalization.imp_max},
            {"seis_scale", normalization.seis_scale}}},
          {"entries", entries_j}};
}

DatasetManifest DatasetManifest::from_json(const json& j) {
  DatasetManifest m;
  m.format_version = j.at("format_version").get<std::string>();
  if (m.format_version != kDatasetFormat) throw ValidationError("unsupported dataset format " + m.format_version);
  m.dt = j.at("dt").get<double>();
  m.seed = j.value("seed", std::uint64_t{0});
  const auto& n = j.at("normalization");
  m.normalization = {n.at("imp_min").get<double>(), n.at("imp_max").get<double>(), n.at("seis_scale").get<double>()};
  if (!(m.normalization.imp_min < m.normalization.imp_max)) throw ValidationError("manifest: imp_min >= imp_max");
  for (const auto& e : j.at("entries")) {
    DatasetEntry d;
    d.impedance_path = e.at("impedance_path").get<std::string>();
    d.lowfreq_path = e.at("lowfreq_path").get<std::string>();
    d.seismic_path = e.at("seismic_path").get<std::string>();
    d.cutoff_hz = e.at("cutoff_hz").get<double>();
    d.dominant_freq_hz = e.at("dominant_freq_hz").get<double>();
    d.phase_deg = e.value("phase_deg", 0.0);
    d.wavelet_half_length = e.value("wavelet_half_length", 0);
    const auto& snr = e.at("snr_db");
    d.snr_db = snr.is_string() ? seis::kNoiseFree : snr.get<double>();
    d.band_low_hz = e.at("band_hz").at(0).get<double>();
    d.band_high_hz = e.at("band_hz").at(1).get<double>();
    d.noise_seed = e.at("noise_seed").get<std::uint64_t>();
    d.rows = e.at("shape").at(0).get<std::size_t>();
    d.cols = e.at("shape").at(1).get<std::size_t>();
    m.entries.push_back(std::move(d));
  }
  return m;
}

void save_manifest(const DatasetManifest& m, const fs::path& dir) { io::write_json(dir / "manifest.json", m.to_json()); }

DatasetManifest load_manifest(const fs::path& dir) {
  DatasetManifest m = DatasetManifest::from_json(io::read_json(dir / "manifest.json"));
  for (const auto& e : m.entries) {
    const auto expected = static_cast<std::uintmax_t>(e.rows * e.cols * sizeof(float));
    for (const auto& p : {e.impedance_path, e.lowfreq_path, e.seismic_path}) {
      const fs::path full = dir / p;
      if (!fs::exists(full)) throw ValidationError("manifest references missing file " + full.string());
      if (fs::file_size(full) != expected) throw ValidationError("file size does not match declared shape: " + full.string());
    }
  }
  return m;
}

LoadedEntry load_entry(const DatasetManifest& m, const fs::path& dir, std::size_t index) {
  const auto& e = m.entries.at(index);
  return {ImpedanceGrid{io::read_f32(dir / e.impedance_path, e.rows, e.cols), m.dt, e.impedance_path},
          ImpedanceGrid{io::read_f32(dir / e.lowfreq_path, e.rows, e.cols), m.dt, e.lowfreq_path},
          io::read_f32(dir / e.seismic_path, e.rows, e.cols)};
}

DatasetManifest build_training_set(const std::vector<ImpedanceGrid>& models, const TrainingSetSpec& spec,
                                   const fs::path& out_dir) {
  if (models.empty() || spec.wavelet_freqs.empty() || spec.cutoffs.empty())
    throw ParameterError("build_training_set: models, wavelet_freqs and cutoffs must be non-empty");

  DatasetManifest m;
  m.dt = spec.dt;
  m.seed = spec.seed;
  std::vector<fs::path> written;
  double imp_min = std::numeric_limits<double>::infinity(), imp_max = -imp_min, seis_peak = 0.0;

  try {
    fs::create_directories(out_dir);
    for (std::size_t i = 0; i < models.size(); ++i) {
      const auto& model = models[i];
      model.validate();
      std::mt19937_64 rng(io::mix_seed(spec.seed, i));
      std::uniform_int_distribution<std::size_t> pick_f(0, spec.wavelet_freqs.size() - 1);
      std::uniform_int_distribution<std::size_t> pick_c(0, spec.cutoffs.size() - 1);
      const double f = spec.wavelet_freqs[pick_f(rng)];
      const double cutoff = spec.cutoffs[pick_c(rng)];

      DatasetEntry e;
      e.rows = model.values.rows();
      e.cols = model.values.cols();
      e.cutoff_hz = cutoff;
      e.dominant_freq_hz = f;
      e.phase_deg = spec.phase_deg;
      const auto w = seis::ricker(f, spec.dt, 0, spec.phase_deg);
      e.wavelet_half_length = w.half_length();
      const auto band = spec.noise_band.value_or(seis::default_noise_band(f, spec.dt));
      e.band_low_hz = band.first;
      e.band_high_hz = band.second;
      e.snr_db = spec.snr_db;
      e.noise_seed = io::mix_seed(spec.seed ^ 0x5eed, i);

      const auto low = lowpass_impedance(model, cutoff, spec.dt);
      const auto clean = seis::synthesize(model.values, w);
      const auto noisy =
          seis::add_bandpass_noise(clean, {e.snr_db, e.band_low_hz, e.band_high_hz, e.noise_seed}, spec.dt);

      char name[32];
      std::snprintf(name, sizeof name, "%05zu", i);
      e.impedance_path = std::string("impedance_") + name + ".f32";
      e.lowfreq_path = std::string("lowfreq_") + name + ".f32";
      e.seismic_path = std::string("seismic_") + name + ".f32";
      for (const auto& [path, arr] : {std::pair{e.impedance_path, &model.values}, std::pair{e.lowfreq_path, &low.values},
                                      std::pair{e.seismic_path, &noisy}}) {
        io::write_f32(out_dir / path, *arr);
        written.push_back(out_dir / path);
      }

      imp_min = std::min(imp_min, model.values.min());
      imp_max = std::max(imp_max, model.values.max());
      seis_peak = std::max({seis_peak, std::abs(noisy.min()), std::abs(noisy.max())});
      m.entries.push_back(std::move(e));
    }
    if (!(imp_min < imp_max)) imp_max = imp_min + 1.0;
    m.normalization = {imp_min, imp_max, seis_peak > 0.0 ? seis_peak : 1.0};
    save_manifest(m, out_dir);
  } catch (const std::exception& ex) {
    std::error_code ec;
    for (const auto& p : written) fs::remove(p, ec);
    throw IoError(std::string("build_training_set failed, partial output removed: ") + ex.what());
  }
  return m;
}

SeismicSection resynthesize_clean(const DatasetManifest& m, const fs::path& dir, std::size_t index) {
  const auto& e = m.entries.at(index);
  const auto imp = io::read_f32(dir / e.impedance_path, e.rows, e.cols);
  return seis::synthesize(imp, e.wavelet(m.dt));
}

}  // namespace saii::data
