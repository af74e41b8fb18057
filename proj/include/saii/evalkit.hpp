#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "saii/array2d.hpp"
#include "saii/seisforward.hpp"

namespace saii::eval {

namespace fs = std::filesystem;

inline constexpr const char* kReportFormat = "saii-report/1";
inline constexpr double kPsnrCap = 200.0;

/// 10 log10(peak^2 / mse), peak = max(x_true) - min(x_true). Identical inputs
/// give +infinity. Throws DimensionError on shape mismatch, DomainError for a
/// constant truth.
double psnr(const Array2D& x_hat, const Array2D& x_true);

/// psnr clipped to kPsnrCap for reports.
double psnr_capped(const Array2D& x_hat, const Array2D& x_true);

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean local SSIM over all valid (fully inside) Gaussian windows. The
/// stabilizers use L = dynamic range of x_true (1 if the truth is constant).
double ssim(const Array2D& x_hat, const Array2D& x_true, const SsimParams& p = {});

/// Pearson correlation. Throws DomainError on zero variance.
double pcc(std::span<const double> a, std::span<const double> b);
double pcc(const Array2D& a, const Array2D& b);

/// |x_hat - x_true|_2 / |x_true|_2.
double rre(const Array2D& x_hat, const Array2D& x_true);

/// PCC between f(x_hat) and the observed section.
double reconstruction_check(const Array2D& x_hat, const SeismicSection& d, const seis::Wavelet& w);

struct MetricReport {
  double psnr_db = 0.0;  ///< capped
  double ssim = 0.0;
  double pcc = 0.0;
  double rre = 0.0;
  std::vector<std::size_t> well_traces;
  std::vector<double> well_pcc;
  std::optional<double> reconstruction_pcc;

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
};

/// All metrics for one estimate. `d` and `w` enable the reconstruction PCC.
MetricReport evaluate(const Array2D& x_hat, const Array2D& x_true, const std::vector<std::size_t>& well_traces = {},
                      const SeismicSection* d = nullptr, const seis::Wavelet* w = nullptr);

// ---------------------------------------------------------------------------
// Figures

struct Series {
  std::string label;
  std::vector<double> y;
};

struct LineChart {
  std::string name;  ///< file stem
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<double> x;
  std::vector<Series> series;
};

struct FigureSet {
  std::optional<Array2D> truth;
  std::vector<std::pair<std::string, Array2D>> estimates;  ///< method name, impedance
  std::vector<std::size_t> well_traces;
  std::vector<LineChart> charts;
};

/// Writes section, residual (estimate - truth), trace-overlay and line-chart PNGs
/// plus `figures.json`; every panel's data is also written as raw float32 next to
/// its PNG. Returns the index.
nlohmann::json emit_figures(const FigureSet& set, const fs::path& out_dir);

/// RGB8 image written as PNG.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<unsigned char> rgb;

  Image(int w, int h, unsigned char fill = 255) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {}
  void set(int x, int y, unsigned char r, unsigned char g, unsigned char b);
};
void write_png(const fs::path& path, const Image& img);

}  // namespace saii::eval
