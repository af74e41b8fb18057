#include "saii/evalkit.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>

#include <png.h>

#include "saii/error.hpp"
#include "saii/io.hpp"

namespace saii::eval {

double psnr(const Array2D& x_hat, const Array2D& x_true) {
  require_same_shape(x_hat, x_true, "psnr");
  const double peak = x_true.max() - x_true.min();
  double mse = 0.0;
  for (std::size_t i = 0; i < x_true.size(); ++i) {
    const double e = x_hat.data()[i] - x_true.data()[i];
    mse += e * e;
  }
  mse /= static_cast<double>(x_true.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  if (!(peak > 0.0)) throw DomainError("psnr: truth has zero dynamic range");
  return 10.0 * std::log10(peak * peak / mse);
}

double psnr_capped(const Array2D& x_hat, const Array2D& x_true) { return std::min(kPsnrCap, psnr(x_hat, x_true)); }

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(size));
  const double c = 0.5 * (size - 1);
  double s = 0.0;
  for (int i = 0; i < size; ++i) {
    g[static_cast<std::size_t>(i)] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
    s += g[static_cast<std::size_t>(i)];
  }
  for (double& v : g) v /= s;
  return g;
}

// Separable "valid" filtering.
Array2D filter_valid(const Array2D& a, const std::vector<double>& g) {
  const std::size_t k = g.size();
  const std::size_t r = a.rows() - k + 1, c = a.cols() - k + 1;
  Array2D tmp(a.rows(), c);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < c; ++j) {
      double s = 0.0;
      for (std::size_t q = 0; q < k; ++q) s += g[q] * a(i, j + q);
      tmp(i, j) = s;
    }
  Array2D out(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      double s = 0.0;
      for (std::size_t q = 0; q < k; ++q) s += g[q] * tmp(i + q, j);
      out(i, j) = s;
    }
  return out;
}

Array2D product(const Array2D& a, const Array2D& b) {
  Array2D o(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) o.data()[i] = a.data()[i] * b.data()[i];
  return o;
}

}  // namespace

double ssim(const Array2D& x_hat, const Array2D& x_true, const SsimParams& p) {
  require_same_shape(x_hat, x_true, "ssim");
  if (p.window < 1 || static_cast<std::size_t>(p.window) > x_true.rows() ||
      static_cast<std::size_t>(p.window) > x_true.cols())
    throw DimensionError("ssim: image smaller than the window");
  const double range = x_true.max() - x_true.min();
  const double L = range > 0.0 ? range : 1.0;
  const double c1 = (p.k1 * L) * (p.k1 * L), c2 = (p.k2 * L) * (p.k2 * L);
  const auto g = gaussian_window(p.window, p.sigma);
  const Array2D mx = filter_valid(x_hat, g), my = filter_valid(x_true, g);
  const Array2D sxx = filter_valid(product(x_hat, x_hat), g), syy = filter_valid(product(x_true, x_true), g),
                sxy = filter_valid(product(x_hat, x_true), g);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double ux = mx.data()[i], uy = my.data()[i];
    const double vx = sxx.data()[i] - ux * ux, vy = syy.data()[i] - uy * uy, cxy = sxy.data()[i] - ux * uy;
    total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

double pcc(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("pcc: length mismatch");
  if (a.empty()) throw DimensionError("pcc: empty input");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) throw DomainError("pcc: undefined for zero variance");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double pcc(const Array2D& a, const Array2D& b) {
  require_same_shape(a, b, "pcc");
  return pcc(a.values(), b.values());
}

double rre(const Array2D& x_hat, const Array2D& x_true) {
  require_same_shape(x_hat, x_true, "rre");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x_true.size(); ++i) {
    const double e = x_hat.data()[i] - x_true.data()[i];
    num += e * e;
    den += x_true.data()[i] * x_true.data()[i];
  }
  if (!(den > 0.0)) throw DomainError("rre: zero reference norm");
  return std::sqrt(num / den);
}

double reconstruction_check(const Array2D& x_hat, const SeismicSection& d, const seis::Wavelet& w) {
  return pcc(seis::synthesize(x_hat, w), d);
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j{{"format", kReportFormat}, {"psnr_db", psnr_db}, {"ssim", ssim},
                   {"pcc", pcc},             {"rre", rre},         {"well_traces", well_traces},
                   {"well_pcc", well_pcc}};
  j["reconstruction_pcc"] = reconstruction_pcc ? nlohmann::json(*reconstruction_pcc) : nlohmann::json(nullptr);
  return j;
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != kReportFormat) throw ValidationError("metric report: unexpected format");
  MetricReport r;
  r.psnr_db = j.at("psnr_db").get<double>();
  r.ssim = j.at("ssim").get<double>();
  r.pcc = j.at("pcc").get<double>();
  r.rre = j.at("rre").get<double>();
  r.well_traces = j.value("well_traces", std::vector<std::size_t>{});
  r.well_pcc = j.value("well_pcc", std::vector<double>{});
  if (j.contains("reconstruction_pcc") && !j.at("reconstruction_pcc").is_null())
    r.reconstruction_pcc = j.at("reconstruction_pcc").get<double>();
  return r;
}

MetricReport evaluate(const Array2D& x_hat, const Array2D& x_true, const std::vector<std::size_t>& well_traces,
                      const SeismicSection* d, const seis::Wavelet* w) {
  MetricReport r;
  r.psnr_db = psnr_capped(x_hat, x_true);
  r.ssim = ssim(x_hat, x_true);
  r.pcc = pcc(x_hat, x_true);
  r.rre = rre(x_hat, x_true);
  r.well_traces = well_traces;
  for (std::size_t c : well_traces) {
    if (c >= x_true.cols()) throw DimensionError("evaluate: well trace out of range");
    r.well_pcc.push_back(pcc(x_hat.column(c), x_true.column(c)));
  }
  if (d && w) r.reconstruction_pcc = reconstruction_check(x_hat, *d, *w);
  return r;
}

// ---------------------------------------------------------------------------
// Rendering

void Image::set(int x, int y, unsigned char r, unsigned char g, unsigned char b) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  auto* p = rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  p[0] = r;
  p[1] = g;
  p[2] = b;
}

void write_png(const fs::path& path, const Image& img) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!fp) throw IoError("write_png: cannot open " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("write_png: libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("write_png: libpng error writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.rgb.data() + static_cast<std::size_t>(y) * img.width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

namespace {

using Rgb = std::array<unsigned char, 3>;

Rgb lerp(const Rgb& a, const Rgb& b, double t) {
  Rgb o;
  for (int k = 0; k < 3; ++k) o[static_cast<std::size_t>(k)] = static_cast<unsigned char>(std::lround(a[static_cast<std::size_t>(k)] + t * (b[static_cast<std::size_t>(k)] - a[static_cast<std::size_t>(k)])));
  return o;
}

Rgb ramp(const std::vector<Rgb>& stops, double t) {
  t = std::clamp(t, 0.0, 1.0) * static_cast<double>(stops.size() - 1);
  const auto i = std::min(static_cast<std::size_t>(t), stops.size() - 2);
  return lerp(stops[i], stops[i + 1], t - static_cast<double>(i));
}

const std::vector<Rgb> kSequential{{48, 18, 59}, {70, 107, 227}, {40, 188, 235}, {50, 241, 152},
                                   {164, 252, 60}, {238, 207, 58}, {251, 128, 34}, {122, 4, 3}};
const std::vector<Rgb> kDiverging{{5, 48, 97}, {67, 147, 195}, {247, 247, 247}, {214, 96, 77}, {103, 0, 31}};
const std::vector<Rgb> kSeriesColors{{31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40},
                                     {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127}};

constexpr int kScale = 4;

Image render_field(const Array2D& a, double vmin, double vmax, const std::vector<Rgb>& cmap) {
  Image img(static_cast<int>(a.cols()) * kScale, static_cast<int>(a.rows()) * kScale);
  const double span = vmax > vmin ? vmax - vmin : 1.0;
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) {
      const Rgb col = ramp(cmap, (a(r, c) - vmin) / span);
      for (int dy = 0; dy < kScale; ++dy)
        for (int dx = 0; dx < kScale; ++dx)
          img.set(static_cast<int>(c) * kScale + dx, static_cast<int>(r) * kScale + dy, col[0], col[1], col[2]);
    }
  return img;
}

void draw_line(Image& img, double x0, double y0, double x1, double y1, const Rgb& c) {
  const int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    img.set(static_cast<int>(std::lround(x0 + t * (x1 - x0))), static_cast<int>(std::lround(y0 + t * (y1 - y0))), c[0],
            c[1], c[2]);
  }
}

struct Plot {
  int width = 480, height = 320, margin = 32;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  double px(double x) const { return margin + (x - xmin) / (xmax - xmin) * (width - 2 * margin); }
  double py(double y) const { return height - margin - (y - ymin) / (ymax - ymin) * (height - 2 * margin); }
};

void pad_range(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  } else {
    const double m = 0.05 * (hi - lo);
    lo -= m;
    hi += m;
  }
}

Image render_chart(const Plot& p, const std::vector<std::pair<std::vector<double>, std::vector<double>>>& lines,
                   bool markers) {
  Image img(p.width, p.height);
  const Rgb axis{0, 0, 0};
  draw_line(img, p.margin, p.height - p.margin, p.width - p.margin, p.height - p.margin, axis);
  draw_line(img, p.margin, p.margin, p.margin, p.height - p.margin, axis);
  for (std::size_t s = 0; s < lines.size(); ++s) {
    const Rgb& c = kSeriesColors[s % kSeriesColors.size()];
    const auto& [xs, ys] = lines[s];
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (i > 0) draw_line(img, p.px(xs[i - 1]), p.py(ys[i - 1]), p.px(xs[i]), p.py(ys[i]), c);
      if (markers)
        for (int dy = -2; dy <= 2; ++dy)
          for (int dx = -2; dx <= 2; ++dx)
            img.set(static_cast<int>(std::lround(p.px(xs[i]))) + dx, static_cast<int>(std::lround(p.py(ys[i]))) + dy,
                    c[0], c[1], c[2]);
    }
  }
  return img;
}

}  // namespace

nlohmann::json emit_figures(const FigureSet& set, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("emit_figures: cannot create " + out_dir.string());
  nlohmann::json figures = nlohmann::json::array();

  auto panel = [&](const std::string& stem, const std::string& kind, const std::string& title, const Array2D& a,
                   double vmin, double vmax, const std::vector<Rgb>& cmap) {
    write_png(out_dir / (stem + ".png"), render_field(a, vmin, vmax, cmap));
    io::write_f32(out_dir / (stem + ".f32"), a);
    figures.push_back({{"file", stem + ".png"}, {"data", stem + ".f32"}, {"kind", kind}, {"title", title},
                       {"rows", a.rows()}, {"cols", a.cols()}, {"vmin", vmin}, {"vmax", vmax}});
  };

  double vmin = std::numeric_limits<double>::infinity(), vmax = -vmin;
  if (set.truth) {
    vmin = set.truth->min();
    vmax = set.truth->max();
  } else {
    for (const auto& [name, a] : set.estimates) {
      vmin = std::min(vmin, a.min());
      vmax = std::max(vmax, a.max());
    }
  }
  if (set.truth) panel("truth", "section", "True impedance", *set.truth, vmin, vmax, kSequential);
  for (const auto& [name, a] : set.estimates) {
    panel("section_" + name, "section", name + " impedance", a, vmin, vmax, kSequential);
    if (set.truth) {
      require_same_shape(a, *set.truth, "emit_figures");
      Array2D res(a.rows(), a.cols());
      double amax = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        res.data()[i] = a.data()[i] - set.truth->data()[i];
        amax = std::max(amax, std::abs(res.data()[i]));
      }
      panel("residual_" + name, "residual", name + " minus truth", res, -amax, amax, kDiverging);
    }
  }

  for (std::size_t well : set.well_traces) {
    Plot p;
    std::vector<std::pair<std::vector<double>, std::vector<double>>> lines;
    nlohmann::json labels = nlohmann::json::array();
    auto add = [&](const std::string& label, const Array2D& a) {
      if (well >= a.cols()) throw DimensionError("emit_figures: well trace out of range");
      std::vector<double> xs(a.rows());
      for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = static_cast<double>(i);
      lines.emplace_back(std::move(xs), a.column(well));
      labels.push_back(label);
    };
    if (set.truth) add("truth", *set.truth);
    for (const auto& [name, a] : set.estimates) add(name, a);
    if (lines.empty()) continue;
    p.xmin = 0;
    p.xmax = static_cast<double>(std::max<std::size_t>(1, lines.front().first.size() - 1));
    p.ymin = std::numeric_limits<double>::infinity();
    p.ymax = -p.ymin;
    for (const auto& l : lines)
      for (double v : l.second) {
        p.ymin = std::min(p.ymin, v);
        p.ymax = std::max(p.ymax, v);
      }
    pad_range(p.ymin, p.ymax);
    const std::string stem = "well_" + std::to_string(well);
    write_png(out_dir / (stem + ".png"), render_chart(p, lines, false));
    figures.push_back({{"file", stem + ".png"}, {"kind", "trace_overlay"}, {"trace", well}, {"series", labels},
                       {"x_label", "sample"}, {"y_label", "impedance"}});
  }

  for (const auto& chart : set.charts) {
    Plot p;
    std::vector<std::pair<std::vector<double>, std::vector<double>>> lines;
    nlohmann::json series = nlohmann::json::array();
    p.ymin = std::numeric_limits<double>::infinity();
    p.ymax = -p.ymin;
    for (const auto& s : chart.series) {
      if (s.y.size() != chart.x.size()) throw DimensionError("emit_figures: series length differs from x");
      lines.emplace_back(chart.x, s.y);
      series.push_back({{"label", s.label}, {"y", s.y}});
      for (double v : s.y) {
        p.ymin = std::min(p.ymin, v);
        p.ymax = std::max(p.ymax, v);
      }
    }
    if (chart.x.empty()) continue;
    p.xmin = *std::min_element(chart.x.begin(), chart.x.end());
    p.xmax = *std::max_element(chart.x.begin(), chart.x.end());
    pad_range(p.xmin, p.xmax);
    pad_range(p.ymin, p.ymax);
    write_png(out_dir / (chart.name + ".png"), render_chart(p, lines, true));
    figures.push_back({{"file", chart.name + ".png"}, {"kind", "line_chart"}, {"title", chart.title},
                       {"x_label", chart.x_label}, {"y_label", chart.y_label}, {"x", chart.x}, {"series", series}});
  }

  const nlohmann::json index{{"format", "saii-figures/1"}, {"figures", figures}};
  io::write_json(out_dir / "figures.json", index);
  return index;
}

}  // namespace saii::eval
