// Acceptance runner: one PASS/FAIL line per criterion.
//   saii_acceptance [--criteria 1,2,...] [--config FILE] [--override k=v]... [--out DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "saii/baselines.hpp"
#include "saii/conditioner.hpp"
#include "saii/config.hpp"
#include "saii/diffcore.hpp"
#include "saii/error.hpp"
#include "saii/evalkit.hpp"
#include "saii/experiments.hpp"
#include "saii/io.hpp"
#include "saii/sampler.hpp"
#include "saii/seisforward.hpp"

using namespace saii;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    if (!ok) pass = false;
    notes.push_back((ok ? "" : "!") + what);
  }
};

Array2D random_field(std::size_t m, std::size_t n, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Array2D a(m, n);
  for (double& v : a.values()) v = u(rng);
  return a;
}

double abar_oracle(int t, int T) {
  double a = 1.0;
  for (int k = 1; k <= t; ++k) a *= 1.0 - (1e-4 + (2e-2 - 1e-4) * (k - 1) / (T - 1.0));
  return a;
}

// ---------------------------------------------------------------------------

Verdict physics() {
  Verdict v;
  std::mt19937_64 rng(101);
  std::normal_distribution<double> g;
  double worst_dot = 0.0;
  for (double f : {20.0, 30.0, 40.0}) {
    const auto w = seis::ricker(f, 0.002, 0, 25.0);
    Array2D x(128, 16), y(128, 16);
    for (double& e : x.values()) e = g(rng);
    for (double& e : y.values()) e = g(rng);
    const Array2D ax = seis::convolve(x, w), aty = seis::correlate(y, w);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      lhs += ax.data()[i] * y.data()[i];
      rhs += x.data()[i] * aty.data()[i];
    }
    worst_dot = std::max(worst_dot, std::abs(lhs - rhs) / std::abs(lhs));
  }
  v.check(worst_dot <= 1e-10, fmt::format("adjoint rel {:.2e}", worst_dot));

  double worst_grad = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const auto w = seis::ricker(25.0 + 5.0 * (inst % 3), 0.002);
    const Array2D z = random_field(48, 6, rng, 2500.0, 9000.0);
    Array2D d(48, 6);
    for (double& e : d.values()) e = 0.05 * g(rng);
    const auto mg = seis::misfit_and_gradient(z, d, w);
    for (int probe = 0; probe < 3; ++probe) {
      Array2D dir(48, 6);
      for (std::size_t i = 0; i < dir.size(); ++i) dir.data()[i] = g(rng) * z.data()[i];
      const double h = 1e-4;
      Array2D zp = z, zm = z;
      double an = 0.0;
      for (std::size_t i = 0; i < dir.size(); ++i) {
        zp.data()[i] += h * dir.data()[i];
        zm.data()[i] -= h * dir.data()[i];
        an += mg.gradient.data()[i] * dir.data()[i];
      }
      const double fd = (seis::misfit(zp, d, w) - seis::misfit(zm, d, w)) / (2 * h);
      worst_grad = std::max(worst_grad, std::abs(fd - an) / std::abs(an));
    }
  }
  v.check(worst_grad <= 1e-5, fmt::format("gradient rel {:.2e} over 20 instances", worst_grad));

  const std::vector<double> two{2000.0, 3000.0};
  const double r = seis::reflectivity(two)[0];
  v.check(r == 0.2, fmt::format("reflectivity {:.17g}", r));
  return v;
}

Verdict transforms() {
  Verdict v;
  std::mt19937_64 rng(202);
  double rt = 0.0, en = 0.0;
  for (auto [m, n] : {std::pair<std::size_t, std::size_t>{64, 64}, {128, 48}, {33, 17}}) {
    const Array2D x = random_field(m, n, rng, -1.0, 1.0);
    const auto c = cond::hwt2d(x);
    const Array2D y = cond::ihwt2d(c);
    for (std::size_t i = 0; i < x.size(); ++i) rt = std::max(rt, std::abs(y.data()[i] - x.data()[i]));
    if (m % 2 == 0 && n % 2 == 0) {
      const double e = c.ll.sum_squares() + c.lh.sum_squares() + c.hl.sum_squares() + c.hh.sum_squares();
      en = std::max(en, std::abs(e - x.sum_squares()) / x.sum_squares());
    }
  }
  v.check(rt <= 1e-12, fmt::format("haar round-trip {:.2e}", rt));
  v.check(en <= 1e-10, fmt::format("haar energy rel {:.2e}", en));

  const auto s = diff::make_linear_schedule();
  std::normal_distribution<double> g;
  LatentTensor z0(3, 16, 16), eps(3, 16, 16);
  for (auto* t : {&z0, &eps})
    for (double& e : t->values) e = g(rng);
  double qs = 0.0;
  for (int t : {1, 10, 100, 500, 900, 999}) {
    const auto back = sampling::predict_z0(diff::q_sample(z0, t, eps, s), eps, t, s);
    for (std::size_t i = 0; i < z0.size(); ++i) qs = std::max(qs, std::abs(back.values[i] - z0.values[i]));
  }
  v.check(qs <= 1e-10, fmt::format("q_sample/predict_z0 {:.2e}", qs));
  return v;
}

Verdict sampling_statistics() {
  Verdict v;
  const int T = 1000;
  const auto s = diff::make_linear_schedule(T);
  const int n = 100000;
  const double gamma = 40.0;
  LatentTensor z0p(1, 1, n), zt(1, 1, n);
  std::mt19937_64 rng(303);
  std::normal_distribution<double> g;
  for (double& e : z0p.values) e = g(rng);
  for (double& e : zt.values) e = g(rng);
  for (int t : {20, 400, 900}) {
    // Independent moments from the resample formula.
    const double ab = abar_oracle(t, T), abp = abar_oracle(t - 1, T);
    const double k2 = gamma * (1 - abp) / ab * (1 - ab / abp);
    const double wz0 = k2 * std::sqrt(ab) / (k2 + 1 - ab), wzt = (1 - ab) / (k2 + 1 - ab);
    const double var = k2 * (1 - ab) / (k2 + 1 - ab);
    const auto out = sampling::stochastic_resample(z0p, zt, t, gamma, s, rng);
    double mean = 0.0, m2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double r = out.values[i] - (wz0 * z0p.values[i] + wzt * zt.values[i]);
      mean += r;
      m2 += r * r;
    }
    mean /= n;
    const double evar = m2 / n - mean * mean;
    const double se_mean = std::sqrt(var / n), se_var = var * std::sqrt(2.0 / (n - 1));
    v.check(std::abs(mean) <= 3 * se_mean && std::abs(evar - var) <= 3 * se_var,
            fmt::format("t={} mean {:.1f}se var {:.1f}se", t, std::abs(mean) / se_mean, std::abs(evar - var) / se_var));
  }

  double sig = 0.0;
  for (int tn = 2; tn <= T; tn += 37)
    for (int t : {0, tn / 2, tn - 1})
      for (double eta : {0.0, 0.3, 1.0}) {
        const double a = abar_oracle(t, T), b = abar_oracle(tn, T);
        const double ref = eta * std::sqrt((1 - a) / (1 - b)) * std::sqrt(1 - b / a);
        sig = std::max(sig, std::abs(sampling::ddim_sigma(s, t, tn, eta) - ref));
      }
  v.check(sig <= 1e-12, fmt::format("ddim sigma {:.2e}", sig));

  double lim = 0.0;
  for (int t : {20, 400, 900}) {
    const double ab = s.alpha_bar_at(t);
    const auto lo = sampling::resample_moments(s, t, 1e-12);
    const auto hi = sampling::resample_moments(s, t, 1e12);
    lim = std::max({lim, std::abs(lo.weight_zt - 1), std::abs(lo.weight_z0), std::abs(lo.variance),
                    std::abs(hi.weight_z0 - std::sqrt(ab)), std::abs(hi.weight_zt), std::abs(hi.variance - (1 - ab))});
  }
  v.check(lim <= 1e-6, fmt::format("gamma limits {:.2e}", lim));
  return v;
}

Verdict marginal() {
  Verdict v;
  const auto r = diff::conditional_marginal_property_check(diff::make_linear_schedule(), 100000, 404);
  v.check(r.static_check, "q_sample takes no conditioning input");
  for (const auto& c : r.checks)
    v.check(c.pass, fmt::format("t={} mean {:.4f} var {:.4f}", c.t, c.mean, c.variance));
  v.check(r.checks.size() == 3, "three timesteps");
  return v;
}

Verdict determinism() {
  Verdict v;
  const data::Normalization norm{2500.0, 10500.0, 0.3};
  codec::CodecConfig cc;
  cc.base_width = 8;
  cc.codebook_size = 32;
  const codec::Codec c(cc, norm);
  diff::DiffusionConfig dc;
  dc.net.base_width = 8;
  dc.net.mults = {1, 2};
  const diff::DiffusionModel m(dc, c.hash());
  const auto truth = data::random_layered_model(64, 64, {}, 505);
  const auto w = seis::ricker(30.0, 0.002);
  const auto d = seis::add_bandpass_noise(seis::synthesize(truth.values, w), {15.0, 10.0, 60.0, 5}, 0.002);
  const auto l = data::lowpass_impedance(truth, 6.0, 0.002);
  sampling::SamplerConfig sc;
  sc.eta = 0.0;
  sc.seed = 17;
  sc.num_steps = 10;
  sc.inner_iters = 10;
  const auto a = sampling::invert(d, l, w, m, c, sc);
  const auto b = sampling::invert(d, l, w, m, c, sc);
  v.check(a.impedance.values == b.impedance.values, "bitwise equal impedance");
  bool steps = a.steps.size() == b.steps.size();
  for (std::size_t i = 0; steps && i < a.steps.size(); ++i) steps = a.steps[i].residual == b.steps[i].residual;
  v.check(steps, "bitwise equal step residuals");
  return v;
}

Verdict baselines() {
  Verdict v;
  Array2D z(64, 16);
  for (std::size_t i = 0; i < 64; ++i)
    for (std::size_t j = 0; j < 16; ++j) {
      double e = 4000;
      if (i >= 12) e = 5500;
      if (i >= 28 + (j >= 8 ? 3 : 0)) e = 4800;
      if (i >= 44) e = 7000;
      if (i >= 54) e = 6200;
      z(i, j) = e;
    }
  const ImpedanceGrid truth{z, 0.002, "blocky"};
  const auto w = seis::ricker(30.0, 0.002);
  const auto d = seis::synthesize(z, w);
  const auto l = data::lowpass_impedance(truth, 6.0, 0.002);
  base::TvConfig tc;
  tc.mu1 = 0.001;
  tc.mu2 = 0.01;
  const auto r = base::tv_invert(d, l, w, tc);
  const double rre = eval::rre(r.impedance.values, z);
  const double decades = std::log10(r.log.front().gap / r.log.back().gap);
  v.check(rre < 0.05, fmt::format("tv rre {:.4f}", rre));
  v.check(decades >= 3.0, fmt::format("gap reduction {:.1f} decades", decades));

  const data::Normalization norm{2500.0, 10500.0, 0.3};
  base::UsdlConfig uc;
  std::mt19937_64 rng(808);
  double worst = 0.0;
  for (int k = 0; k < 5; ++k) {
    const Array2D x = random_field(64, 16, rng, -0.9, 0.9);
    const auto t = base::usdl_terms(x, d, l, w, norm, uc);
    const double data_term = seis::misfit(norm.denormalize_impedance(x), d, w);
    const Array2D xl = norm.normalize_impedance(l.values);
    double prior = 0.0, tv = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) prior += std::pow(x.data()[i] - xl.data()[i], 2);
    for (std::size_t i = 0; i < 64; ++i)
      for (std::size_t j = 0; j < 16; ++j) {
        const double dy = i + 1 < 64 ? x(i + 1, j) - x(i, j) : 0.0;
        const double dx = j + 1 < 16 ? x(i, j + 1) - x(i, j) : 0.0;
        tv += std::sqrt(dy * dy + dx * dx + uc.tv_eps * uc.tv_eps);
      }
    const double total = data_term + uc.mu1 * prior + uc.mu2 * tv;
    worst = std::max({worst, std::abs(t.data - data_term) / total, std::abs(t.prior - uc.mu1 * prior) / total,
                      std::abs(t.tv - uc.mu2 * tv) / total, std::abs(t.total() - total) / total});
  }
  v.check(worst <= 1e-8, fmt::format("usdl decomposition rel {:.2e}", worst));
  return v;
}

Verdict metrics() {
  Verdict v;
  std::mt19937_64 rng(909);
  const Array2D y = random_field(48, 40, rng, 3000.0, 8000.0);
  Array2D x = y;
  std::normal_distribution<double> g;
  for (double& e : x.values()) e += 300.0 * g(rng);
  // Sliding 11x11 Gaussian window, sigma 1.5, over every fully inside position.
  const int win = 11;
  std::vector<double> wt(win * win);
  double ws = 0.0;
  for (int a = 0; a < win; ++a)
    for (int b = 0; b < win; ++b) ws += wt[a * win + b] = std::exp(-((a - 5) * (a - 5) + (b - 5) * (b - 5)) / 4.5);
  for (double& e : wt) e /= ws;
  const double L = y.max() - y.min(), c1 = std::pow(0.01 * L, 2), c2 = std::pow(0.03 * L, 2);
  double acc = 0.0;
  std::size_t cnt = 0;
  for (std::size_t i = 0; i + win <= y.rows(); ++i)
    for (std::size_t j = 0; j + win <= y.cols(); ++j) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int a = 0; a < win; ++a)
        for (int b = 0; b < win; ++b) {
          mx += wt[a * win + b] * x(i + a, j + b);
          my += wt[a * win + b] * y(i + a, j + b);
        }
      for (int a = 0; a < win; ++a)
        for (int b = 0; b < win; ++b) {
          const double dx = x(i + a, j + b) - mx, dy = y(i + a, j + b) - my;
          sxx += wt[a * win + b] * dx * dx;
          syy += wt[a * win + b] * dy * dy;
          sxy += wt[a * win + b] * dx * dy;
        }
      acc += (2 * mx * my + c1) * (2 * sxy + c2) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
      ++cnt;
    }
  const double diff = std::abs(eval::ssim(x, y) - acc / cnt);
  v.check(diff <= 1e-9, fmt::format("ssim vs reference {:.2e}", diff));
  const auto id = eval::evaluate(y, y);
  v.check(id.psnr_db == eval::kPsnrCap && id.ssim == 1.0 && id.pcc == 1.0 && id.rre == 0.0,
          fmt::format("identity ({:g}, {:.17g}, {:.17g}, {:g})", id.psnr_db, id.ssim, id.pcc, id.rre));
  return v;
}

// ---------------------------------------------------------------------------

struct EndToEnd {
  config::ExperimentConfig cfg;
  std::optional<exp::Stack> stack;

  const exp::Stack& get() {
    if (!stack) stack = exp::ensure_stack(cfg);
    return *stack;
  }
};

Verdict ordering(EndToEnd& e2e) {
  Verdict v;
  const auto& stack = e2e.get();
  exp::Condition cond;
  cond.snr_db = e2e.cfg.test.snr_db;
  const auto out = exp::run_condition(e2e.cfg, stack, cond, {"cldm", "ablation", "tv"}, e2e.cfg.test.seeds, nullptr,
                                      fs::path(e2e.cfg.paths.out) / "figures");
  io::write_json(fs::path(e2e.cfg.paths.out) / "criterion6.json", exp::outcomes_to_json(out));
  const auto s = exp::summarize(out);
  const auto &c = s.at("cldm"), &a = s.at("ablation"), &t = s.at("tv");
  v.check(c.psnr >= a.psnr, fmt::format("psnr cldm {:.2f} >= ablation {:.2f}", c.psnr, a.psnr));
  v.check(c.ssim >= a.ssim, fmt::format("ssim cldm {:.3f} >= ablation {:.3f}", c.ssim, a.ssim));
  v.check(c.psnr >= t.psnr, fmt::format("psnr cldm {:.2f} >= tv {:.2f}", c.psnr, t.psnr));
  const double frac = exp::residual_win_fraction(out, "cldm", "ablation");
  v.check(frac >= 0.8, fmt::format("residual wins {:.0f}%", 100 * frac));
  return v;
}

Verdict lowfreq_trend(EndToEnd& e2e) {
  Verdict v;
  const auto& stack = e2e.get();
  std::vector<double> psnr;
  std::string row;
  for (double fc : {3.0, 6.0, 12.0, 18.0}) {
    exp::Condition cond;
    cond.cutoff_hz = fc;
    const auto out = exp::run_condition(e2e.cfg, stack, cond, {"cldm"}, e2e.cfg.test.seeds);
    psnr.push_back(exp::summarize(out).at("cldm").psnr);
    row += fmt::format("{}Hz {:.2f} ", fc, psnr.back());
  }
  v.check(std::is_sorted(psnr.begin(), psnr.end()), "non-decreasing: " + row);
  return v;
}

std::set<int> parse_list(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto dash = item.find('-');
    if (dash == std::string::npos) {
      out.insert(std::stoi(item));
    } else {
      for (int k = std::stoi(item.substr(0, dash)); k <= std::stoi(item.substr(dash + 1)); ++k) out.insert(k);
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"saii acceptance criteria"};
  std::string which = "1-9";
  std::optional<std::string> config_file;
  std::vector<std::string> overrides;
  std::string out = "acceptance-run";
  app.add_option("--criteria", which, "e.g. 1-5,8,9");
  app.add_option("--config", config_file)->check(CLI::ExistingFile);
  app.add_option("--override", overrides);
  app.add_option("--out", out);
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::warn);

  std::set<int> selected;
  try {
    selected = parse_list(which);
  } catch (const std::exception&) {
    std::cerr << "bad --criteria list\n";
    return 2;
  }

  EndToEnd e2e;
  if (selected.count(6) || selected.count(7)) {
    e2e.cfg = config::resolve(config_file ? std::optional<fs::path>(*config_file) : std::nullopt, overrides,
                              std::nullopt, out);
    spdlog::set_level(spdlog::level::info);
  }

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"physics exactness", physics},
      {"transform exactness", transforms},
      {"sampling statistics", sampling_statistics},
      {"forward-noising marginal", marginal},
      {"sampler determinism", determinism},
      {"end-to-end ordering", [&] { return ordering(e2e); }},
      {"low-frequency trend", [&] { return lowfreq_trend(e2e); }},
      {"baseline solvers", baselines},
      {"metric oracles", metrics},
  };

  // Runtime budgets in seconds (0: none).
  const std::vector<double> budget{10, 10, 120, 60, 0, 4 * 3600, 0, 300, 0};

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[k].second();
    } catch (const std::exception& e) {
      v.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (budget[k] > 0) v.check(secs < budget[k], fmt::format("runtime < {:g}s", budget[k]));
    std::string detail;
    for (const auto& n : v.notes) detail += (detail.empty() ? "" : "; ") + n;
    std::cout << fmt::format("criterion {}: {} {} ({:.1f}s) [{}]", id, v.pass ? "PASS" : "FAIL", criteria[k].first,
                             secs, detail)
              << std::endl;
    failed += !v.pass;
  }
  return failed == 0 ? 0 : 1;
}
