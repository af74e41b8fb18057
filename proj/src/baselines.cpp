#include "saii/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include "saii/error.hpp"
#include "saii/io.hpp"
#include "saii/latent.hpp"
#include "saii/nn/checkpoint.hpp"
#include "saii/nn/optim.hpp"

namespace saii::base {

// ---------------------------------------------------------------------------
// TV config

void TvConfig::validate() const {
  if (!(mu1 >= 0.0) || !(mu2 >= 0.0)) throw ValidationError("tv: mu1 and mu2 must be >= 0");
  if (!(tau > 0.0) || !(sigma > 0.0)) throw ValidationError("tv: step sizes must be > 0");
  if (tau * sigma * kGradNormSq > 1.0)
    throw ValidationError("tv: step sizes violate tau * sigma * ||K||^2 <= 1 (||K||^2 = 8)");
  if (iterations < 1) throw ValidationError("tv: iterations must be >= 1");
  if (log_every < 0) throw ValidationError("tv: log_every must be >= 0");
}

nlohmann::json TvConfig::to_json() const {
  return {{"mu1", mu1},           {"mu2", mu2},
          {"tau", tau},           {"sigma", sigma},
          {"iterations", iterations}, {"operate_in_log_domain", operate_in_log_domain},
          {"accelerate", accelerate}, {"log_every", log_every}};
}

TvConfig TvConfig::from_json(const nlohmann::json& j) {
  TvConfig c;
  c.mu1 = j.value("mu1", c.mu1);
  c.mu2 = j.value("mu2", c.mu2);
  c.tau = j.value("tau", c.tau);
  c.sigma = j.value("sigma", c.sigma);
  c.iterations = j.value("iterations", c.iterations);
  c.operate_in_log_domain = j.value("operate_in_log_domain", c.operate_in_log_domain);
  c.accelerate = j.value("accelerate", c.accelerate);
  c.log_every = j.value("log_every", c.log_every);
  return c;
}

// ---------------------------------------------------------------------------
// Gradient, divergence, TV

namespace {

struct Field2 {
  Array2D y;  // along rows (depth)
  Array2D x;  // along columns (traces)
};

Field2 grad(const Array2D& u) {
  const std::size_t m = u.rows(), n = u.cols();
  Field2 g{Array2D(m, n), Array2D(m, n)};
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i + 1 < m) g.y(i, j) = u(i + 1, j) - u(i, j);
      if (j + 1 < n) g.x(i, j) = u(i, j + 1) - u(i, j);
    }
  return g;
}

// Negative adjoint of grad.
Array2D div(const Field2& p) {
  const std::size_t m = p.y.rows(), n = p.y.cols();
  Array2D out(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double v = 0.0;
      if (i + 1 < m) v += p.y(i, j);
      if (i > 0) v -= p.y(i - 1, j);
      if (j + 1 < n) v += p.x(i, j);
      if (j > 0) v -= p.x(i, j - 1);
      out(i, j) = v;
    }
  return out;
}

double tv_of(const Field2& g) {
  double s = 0.0;
  for (std::size_t k = 0; k < g.y.size(); ++k) s += std::hypot(g.y.data()[k], g.x.data()[k]);
  return s;
}

}  // namespace

double tv2d(const Array2D& u) { return tv_of(grad(u)); }

// ---------------------------------------------------------------------------
// Problem

namespace {

void matvec(const std::vector<double>& M, std::size_t m, const double* x, double* y) {
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) acc += M[i * m + j] * x[j];
    y[i] = acc;
  }
}

}  // namespace

double TvProblem::data_term(const Array2D& u) const {
  const std::size_t m = u.rows();
  std::vector<double> col(m), pred(m);
  double s = 0.0;
  for (std::size_t c = 0; c < u.cols(); ++c) {
    for (std::size_t r = 0; r < m; ++r) col[r] = u(r, c);
    matvec(G[G.size() == 1 ? 0 : c], m, col.data(), pred.data());
    for (std::size_t r = 0; r < m; ++r) s += (data(r, c) - pred[r]) * (data(r, c) - pred[r]);
  }
  return s;
}

double TvProblem::prior_term(const Array2D& u) const {
  double s = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) s += (u.data()[k] - prior.data()[k]) * (u.data()[k] - prior.data()[k]);
  return mu1 * s;
}

double TvProblem::tv_term(const Array2D& u) const { return mu2 * tv2d(u); }

TvProblem make_tv_problem(const SeismicSection& d, const ImpedanceGrid& l, const seis::Wavelet& w,
                          const TvConfig& cfg) {
  l.validate();
  require_same_shape(d, l.values, "tv_invert");
  const std::size_t m = d.rows(), n = d.cols();
  const auto W = seis::ConvOperator(w, m).dense();
  TvProblem p;
  p.mu1 = cfg.mu1;
  p.mu2 = cfg.mu2;
  p.data = d;
  p.prior = Array2D(m, n);

  auto compose = [&](const std::vector<double>& J) {  // W * J
    std::vector<double> M(m * m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < m; ++k) {
        const double wik = W[i * m + k];
        if (wik == 0.0) continue;
        for (std::size_t j = 0; j < m; ++j) M[i * m + j] += wik * J[k * m + j];
      }
    return M;
  };

  if (cfg.operate_in_log_domain) {
    // r_j ~ (u_{j+1} - u_j) / 2, r_{m-1} = 0.
    std::vector<double> D(m * m, 0.0);
    for (std::size_t j = 0; j + 1 < m; ++j) {
      D[j * m + j] = -0.5;
      D[j * m + j + 1] = 0.5;
    }
    p.G.push_back(compose(D));
    for (std::size_t k = 0; k < l.values.size(); ++k) p.prior.data()[k] = std::log(l.values.data()[k]);
    return p;
  }

  // Linearization of f around l on the scaled variable v = z / s.
  const double s = std::accumulate(l.values.values().begin(), l.values.values().end(), 0.0) /
                   static_cast<double>(l.values.size());
  const SeismicSection fl = seis::synthesize(l.values, w);
  std::vector<double> lc(m), off(m);
  for (std::size_t c = 0; c < n; ++c) {
    std::vector<double> J(m * m, 0.0);
    for (std::size_t j = 0; j + 1 < m; ++j) {
      const double z0 = l.values(j, c), z1 = l.values(j + 1, c);
      const double q = (z0 + z1) * (z0 + z1);
      J[j * m + j] = -2.0 * z1 / q * s;
      J[j * m + j + 1] = 2.0 * z0 / q * s;
    }
    p.G.push_back(compose(J));
    for (std::size_t r = 0; r < m; ++r) lc[r] = l.values(r, c) / s;
    matvec(p.G.back(), m, lc.data(), off.data());
    for (std::size_t r = 0; r < m; ++r) {
      p.data(r, c) = d(r, c) - fl(r, c) + off[r];
      p.prior(r, c) = lc[r];
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Solver

namespace {

// Eigen-decomposition of A = G^T G + mu1 I for one distinct G.
struct QuadBlock {
  Eigen::MatrixXd Q;
  Eigen::VectorXd lam;
};

}  // namespace

TvResult tv_invert(const SeismicSection& d, const ImpedanceGrid& l, const seis::Wavelet& w, const TvConfig& cfg) {
  cfg.validate();
  TvResult out;
  out.problem = make_tv_problem(d, l, w, cfg);
  const TvProblem& P = out.problem;
  const std::size_t m = d.rows(), n = d.cols();
  const bool shared = P.G.size() == 1;

  std::vector<QuadBlock> blocks;
  for (const auto& g : P.G) {
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> Gm(
        g.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    Eigen::MatrixXd A = Gm.transpose() * Gm;
    A.diagonal().array() += P.mu1;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
    blocks.push_back({es.eigenvectors(), es.eigenvalues().cwiseMax(0.0)});
  }
  auto block = [&](std::size_t c) -> const QuadBlock& { return blocks[shared ? 0 : c]; };

  // b = G^T data + mu1 prior; c0 = |data|^2 + mu1 |prior|^2.
  Eigen::MatrixXd B(m, n);
  double c0 = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    const auto& g = P.G[shared ? 0 : c];
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) acc += g[i * m + j] * P.data(i, c);
      B(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)) = acc + P.mu1 * P.prior(j, c);
    }
    for (std::size_t i = 0; i < m; ++i) c0 += P.data(i, c) * P.data(i, c) + P.mu1 * P.prior(i, c) * P.prior(i, c);
  }
  double lam_min = std::numeric_limits<double>::infinity();
  for (const auto& b : blocks) lam_min = std::min(lam_min, b.lam.minCoeff());

  auto to_mat = [&](const Array2D& a) {
    Eigen::MatrixXd M(m, n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a(i, j);
    return M;
  };
  auto to_arr = [&](const Eigen::MatrixXd& M) {
    Array2D a(m, n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) a(i, j) = M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    return a;
  };
  // Column-wise f(A) v through the eigenbasis.
  auto apply_spectral = [&](const Eigen::MatrixXd& V, auto&& fn) {
    Eigen::MatrixXd R(m, n);
    for (std::size_t c = 0; c < n; ++c) {
      const auto& b = block(c);
      const Eigen::VectorXd coef = b.Q.transpose() * V.col(static_cast<Eigen::Index>(c));
      Eigen::VectorXd scaled(coef.size());
      for (Eigen::Index k = 0; k < coef.size(); ++k) scaled(k) = fn(b.lam(k)) * coef(k);
      R.col(static_cast<Eigen::Index>(c)) = b.Q * scaled;
    }
    return R;
  };

  // Quadratic part evaluated through A, b, c0 (independent of the residual form in TvProblem).
  auto quad_value = [&](const Eigen::MatrixXd& U) {
    const Eigen::MatrixXd AU = apply_spectral(U, [](double lam) { return lam; });
    return (U.array() * AU.array()).sum() - 2.0 * (B.array() * U.array()).sum() + c0;
  };
  auto dual_value = [&](const Field2& p) {
    if (!(lam_min > 1e-12)) return std::numeric_limits<double>::quiet_NaN();
    const Eigen::MatrixXd v = to_mat(div(p)) + 2.0 * B;
    const Eigen::MatrixXd Ainv_v = apply_spectral(v, [](double lam) { return 1.0 / lam; });
    return -(0.25 * (v.array() * Ainv_v.array()).sum() - c0);
  };

  Array2D u = P.prior;
  Array2D ubar = u;
  Field2 p{Array2D(m, n), Array2D(m, n)};
  double tau = cfg.tau, sigma = cfg.sigma;
  const double strong = 2.0 * lam_min;

  auto log_iterate = [&](int it) {
    const Field2 g = grad(u);
    TvLogEntry e;
    e.iteration = it;
    e.data_term = P.data_term(u);
    e.prior_term = P.prior_term(u);
    e.tv_term = P.tv_term(u);
    e.objective = quad_value(to_mat(u)) + P.mu2 * tv_of(g);
    e.gap = e.objective - dual_value(p);
    out.log.push_back(e);
    out.snapshots.push_back(u);
  };
  if (cfg.log_every > 0) log_iterate(0);

  for (int it = 1; it <= cfg.iterations; ++it) {
    // Dual ascent and projection onto the mu2 ball.
    const Field2 g = grad(ubar);
    for (std::size_t k = 0; k < p.y.size(); ++k) {
      const double py = p.y.data()[k] + sigma * g.y.data()[k];
      const double px = p.x.data()[k] + sigma * g.x.data()[k];
      const double nrm = std::hypot(py, px);
      const double s = nrm > P.mu2 ? (P.mu2 > 0.0 ? P.mu2 / nrm : 0.0) : 1.0;
      p.y.data()[k] = py * s;
      p.x.data()[k] = px * s;
    }
    // Primal prox of the quadratic: (I + 2 tau A)^{-1} (v + 2 tau b).
    const Array2D dv = div(p);
    Eigen::MatrixXd V(m, n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        V(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            u(i, j) + tau * dv(i, j) + 2.0 * tau * B(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    const double t2 = 2.0 * tau;
    const Array2D u_new = to_arr(apply_spectral(V, [t2](double lam) { return 1.0 / (1.0 + t2 * lam); }));

    double theta = 1.0;
    if (cfg.accelerate && strong > 0.0) {
      theta = 1.0 / std::sqrt(1.0 + 2.0 * strong * tau);
      tau *= theta;
      sigma /= theta;
    }
    for (std::size_t k = 0; k < u.size(); ++k)
      ubar.data()[k] = u_new.data()[k] + theta * (u_new.data()[k] - u.data()[k]);
    u = u_new;
    for (double v : u.values())
      if (!std::isfinite(v)) throw NumericalError("tv_invert: non-finite iterate");
    if (cfg.log_every > 0 && (it % cfg.log_every == 0 || it == cfg.iterations)) log_iterate(it);
  }

  out.solution = u;
  Array2D z(m, n);
  if (cfg.operate_in_log_domain) {
    for (std::size_t k = 0; k < z.size(); ++k) z.data()[k] = std::exp(u.data()[k]);
  } else {
    const double s = std::accumulate(l.values.values().begin(), l.values.values().end(), 0.0) /
                     static_cast<double>(l.values.size());
    const double floor = 0.01 * l.values.min();
    for (std::size_t k = 0; k < z.size(); ++k) z.data()[k] = std::max(floor, s * u.data()[k]);
  }
  out.impedance = ImpedanceGrid{std::move(z), l.dt, "tv2d"};
  return out;
}

// ---------------------------------------------------------------------------
// Learned baselines

void NetTrainConfig::validate() const {
  nn::UNetConfig{1, 1, base_width, mults, false}.validate();
  if (!(lr > 0.0)) throw ValidationError("baseline: lr must be > 0");
  if (epochs < 0) throw ValidationError("baseline: epochs must be >= 0");
  if (batch_size < 1) throw ValidationError("baseline: batch_size must be >= 1");
}

nlohmann::json NetTrainConfig::to_json() const {
  return {{"base_width", base_width}, {"mults", mults},         {"lr", lr},  {"epochs", epochs},
          {"batch_size", batch_size}, {"grad_clip", grad_clip}, {"seed", seed}};
}

NetTrainConfig NetTrainConfig::from_json(const nlohmann::json& j) {
  NetTrainConfig c;
  c.base_width = j.value("base_width", c.base_width);
  c.mults = j.value("mults", c.mults);
  c.lr = j.value("lr", c.lr);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.seed = j.value("seed", c.seed);
  return c;
}

void UsdlConfig::validate() const {
  net.validate();
  if (!(mu1 >= 0.0) || !(mu2 >= 0.0)) throw ValidationError("usdl: mu1 and mu2 must be >= 0");
  if (!(tv_eps > 0.0)) throw ValidationError("usdl: tv_eps must be > 0");
}

nlohmann::json UsdlConfig::to_json() const {
  return {{"net", net.to_json()}, {"mu1", mu1}, {"mu2", mu2}, {"tv_eps", tv_eps}};
}

UsdlConfig UsdlConfig::from_json(const nlohmann::json& j) {
  UsdlConfig c;
  if (j.contains("net")) c.net = NetTrainConfig::from_json(j.at("net"));
  c.mu1 = j.value("mu1", c.mu1);
  c.mu2 = j.value("mu2", c.mu2);
  c.tv_eps = j.value("tv_eps", c.tv_eps);
  return c;
}

BaselineNet::BaselineNet(std::string method, const NetTrainConfig& cfg, const data::Normalization& norm,
                         int in_channels)
    : method_(std::move(method)), cfg_(cfg), norm_(norm) {
  cfg_.validate();
  std::mt19937_64 rng(io::mix_seed(cfg_.seed, 0xba5e));
  net_ = std::make_unique<nn::UNet>(nn::UNetConfig{in_channels, 1, cfg_.base_width, cfg_.mults, false}, rng);
}

void BaselineNet::save(const fs::path& path) const {
  const nlohmann::json header{
      {"method", method_},
      {"config", cfg_.to_json()},
      {"in_channels", net_->config().in_channels},
      {"normalization", {{"imp_min", norm_.imp_min}, {"imp_max", norm_.imp_max}, {"seis_scale", norm_.seis_scale}}},
      {"dataset_hash", dataset_hash}};
  nn::save_container(path, kBaselineFormat, header, nn::state_dict(*net_, "net."));
}

BaselineNet BaselineNet::load(const fs::path& path) {
  const nn::Container c = nn::load_container(path, kBaselineFormat);
  try {
    const auto& h = c.header;
    const auto& nj = h.at("normalization");
    const data::Normalization norm{nj.at("imp_min").get<double>(), nj.at("imp_max").get<double>(),
                                   nj.at("seis_scale").get<double>()};
    BaselineNet b(h.at("method").get<std::string>(), NetTrainConfig::from_json(h.at("config")), norm,
                  h.at("in_channels").get<int>());
    nn::load_state(*b.net_, c.blobs, "net.");
    b.dataset_hash = h.value("dataset_hash", std::string());
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("baseline checkpoint " + path.string() + ": bad header: " + e.what());
  }
}

namespace {

void fill_channel(nn::Tensor& t, int sample, int channel, const Array2D& a) {
  std::transform(a.data(), a.data() + a.size(), t.channel(sample, channel),
                 [](double v) { return static_cast<float>(v); });
}

nn::Tensor gather(const nn::Tensor& data, std::span<const std::size_t> idx) {
  nn::Tensor b(static_cast<int>(idx.size()), data.c(), data.h(), data.w());
  for (std::size_t i = 0; i < idx.size(); ++i) nn::copy_sample(data, static_cast<int>(idx[i]), b, static_cast<int>(i));
  return b;
}

double impedance_floor_x(const data::Normalization& norm) {
  return -1.0 - 0.5 * norm.imp_min / norm.impedance_half_range();
}

}  // namespace

SdlResult sdl_train(const std::vector<SeismicSection>& d, const std::vector<ImpedanceGrid>& l,
                    const std::vector<ImpedanceGrid>& labels, const data::Normalization& norm,
                    const NetTrainConfig& cfg) {
  cfg.validate();
  if (labels.empty()) throw ValidationError("sdl_train: impedance labels are required");
  if (d.size() != labels.size() || l.size() != labels.size()) throw DimensionError("sdl_train: input counts differ");
  const int n = static_cast<int>(labels.size());
  const auto& s0 = labels.front().values;
  const int H = static_cast<int>(s0.rows()), W = static_cast<int>(s0.cols());
  nn::Tensor x(n, 2, H, W), y(n, 1, H, W);
  for (int i = 0; i < n; ++i) {
    const auto& lab = labels[static_cast<std::size_t>(i)].values;
    if (!lab.same_shape(s0) || !d[static_cast<std::size_t>(i)].same_shape(s0) ||
        !l[static_cast<std::size_t>(i)].values.same_shape(s0))
      throw DimensionError("sdl_train: ragged inputs");
    fill_channel(x, i, 0, norm.normalize_seismic(d[static_cast<std::size_t>(i)]));
    fill_channel(x, i, 1, norm.normalize_impedance(l[static_cast<std::size_t>(i)].values));
    fill_channel(y, i, 0, norm.normalize_impedance(lab));
  }

  SdlResult out{BaselineNet("sdl", cfg, norm, 2), {}};
  nn::UNet& net = out.model.net();
  nn::Adam opt(nn::trainable_params(net), {.lr = cfg.lr, .grad_clip = cfg.grad_clip});
  std::mt19937_64 rng(io::mix_seed(cfg.seed, 0x5d1));
  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
      const auto idx = std::span(order).subspan(b0, b1 - b0);
      const nn::Tensor xb = gather(x, idx), yb = gather(y, idx);
      const nn::Tensor pred = net.forward_train(xb);
      nn::Tensor g = pred.zeros_like();
      double mse = 0.0;
      for (std::size_t k = 0; k < g.size(); ++k) {
        const double r = static_cast<double>(pred.data()[k]) - yb.data()[k];
        mse += r * r;
        g.data()[k] = static_cast<float>(2.0 * r / static_cast<double>(g.size()));
      }
      mse /= static_cast<double>(g.size());
      if (!std::isfinite(mse)) throw NumericalError("sdl_train: non-finite loss");
      net.backward(g);
      opt.step();
      sum += mse * static_cast<double>(idx.size());
      count += idx.size();
    }
    out.epoch_mse.push_back(sum / static_cast<double>(count));
    spdlog::debug("sdl epoch {}: mse {:.5f}", epoch + 1, out.epoch_mse.back());
  }
  return out;
}

SdlResult sdl_train(const data::DatasetManifest& manifest, const fs::path& dataset_dir, const NetTrainConfig& cfg) {
  if (manifest.entries.empty()) throw ValidationError("sdl_train: empty manifest");
  std::vector<SeismicSection> d;
  std::vector<ImpedanceGrid> l, labels;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    if (manifest.entries[i].impedance_path.empty()) throw ValidationError("sdl_train: entry without impedance label");
    auto e = data::load_entry(manifest, dataset_dir, i);
    d.push_back(std::move(e.seismic));
    l.push_back(std::move(e.lowfreq));
    labels.push_back(std::move(e.impedance));
  }
  SdlResult r = sdl_train(d, l, labels, manifest.normalization, cfg);
  r.model.dataset_hash = io::sha256_hex(manifest.to_json().dump());
  return r;
}

ImpedanceGrid sdl_infer(const SeismicSection& d, const ImpedanceGrid& l, const BaselineNet& model) {
  if (model.method() != "sdl") throw CheckpointMismatch("sdl_infer: checkpoint method is " + model.method());
  require_same_shape(d, l.values, "sdl_infer");
  const auto& norm = model.normalization();
  nn::Tensor x(1, 2, static_cast<int>(d.rows()), static_cast<int>(d.cols()));
  fill_channel(x, 0, 0, norm.normalize_seismic(d));
  fill_channel(x, 0, 1, norm.normalize_impedance(l.values));
  Array2D xn = from_tensor(model.net().forward(x));
  const double floor_x = impedance_floor_x(norm);
  for (double& v : xn.values()) v = std::max(v, floor_x);
  return ImpedanceGrid{norm.denormalize_impedance(xn), l.dt, "sdl"};
}

// ---------------------------------------------------------------------------
// USDL

namespace {

// Smoothed TV sum sqrt(dy^2 + dx^2 + eps^2) and, optionally, its gradient.
double smoothed_tv(const Array2D& x, double eps, Array2D* gradient) {
  const std::size_t m = x.rows(), n = x.cols();
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double dy = i + 1 < m ? x(i + 1, j) - x(i, j) : 0.0;
      const double dx = j + 1 < n ? x(i, j + 1) - x(i, j) : 0.0;
      const double r = std::sqrt(dy * dy + dx * dx + eps * eps);
      s += r;
      if (gradient) {
        (*gradient)(i, j) -= (dy + dx) / r;
        if (i + 1 < m) (*gradient)(i + 1, j) += dy / r;
        if (j + 1 < n) (*gradient)(i, j + 1) += dx / r;
      }
    }
  return s;
}

struct UsdlEval {
  UsdlTerms terms;
  Array2D gradient;  // d total / d x
};

UsdlEval usdl_eval(const Array2D& x_raw, const SeismicSection& d, const Array2D& x_l, const seis::Wavelet& w,
                   const data::Normalization& norm, const UsdlConfig& cfg, bool want_grad) {
  const double floor_x = impedance_floor_x(norm);
  Array2D x = x_raw;
  for (double& v : x.values()) v = std::max(v, floor_x);
  UsdlEval e;
  e.gradient = Array2D(x.rows(), x.cols());
  if (want_grad) {
    auto r = seis::misfit_and_gradient(norm.denormalize_impedance(x), d, w);
    e.terms.data = r.value;
    const double h = norm.impedance_half_range();
    for (std::size_t k = 0; k < x.size(); ++k) e.gradient.data()[k] = r.gradient.data()[k] * h;
  } else {
    e.terms.data = seis::misfit(norm.denormalize_impedance(x), d, w);
  }
  double prior = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double r = x.data()[k] - x_l.data()[k];
    prior += r * r;
    if (want_grad) e.gradient.data()[k] += 2.0 * cfg.mu1 * r;
  }
  e.terms.prior = cfg.mu1 * prior;
  Array2D gtv(x.rows(), x.cols());
  e.terms.tv = cfg.mu2 * smoothed_tv(x, cfg.tv_eps, want_grad ? &gtv : nullptr);
  if (want_grad) {
    for (std::size_t k = 0; k < x.size(); ++k) {
      e.gradient.data()[k] += cfg.mu2 * gtv.data()[k];
      if (x_raw.data()[k] < floor_x) e.gradient.data()[k] = 0.0;
    }
  }
  return e;
}

}  // namespace

UsdlTerms usdl_terms(const Array2D& x, const SeismicSection& d, const ImpedanceGrid& l, const seis::Wavelet& w,
                     const data::Normalization& norm, const UsdlConfig& cfg) {
  require_same_shape(x, d, "usdl_terms");
  require_same_shape(x, l.values, "usdl_terms");
  return usdl_eval(x, d, norm.normalize_impedance(l.values), w, norm, cfg, false).terms;
}

UsdlResult usdl_train(const std::vector<SeismicSection>& d, const std::vector<ImpedanceGrid>& l,
                      const seis::Wavelet& w, const data::Normalization& norm, const UsdlConfig& cfg,
                      bool keep_epoch_predictions) {
  cfg.validate();
  if (d.empty() || d.size() != l.size()) throw DimensionError("usdl_train: need matching, non-empty d and l");
  const int n = static_cast<int>(d.size());
  const int H = static_cast<int>(d.front().rows()), W = static_cast<int>(d.front().cols());
  nn::Tensor x(n, 1, H, W);
  std::vector<Array2D> x_l;
  for (int i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    require_same_shape(d[ui], d.front(), "usdl_train");
    require_same_shape(d[ui], l[ui].values, "usdl_train");
    fill_channel(x, i, 0, norm.normalize_seismic(d[ui]));
    x_l.push_back(norm.normalize_impedance(l[ui].values));
  }

  UsdlResult out{BaselineNet("usdl", cfg.net, norm, 1), {}, {}, {}};
  nn::UNet& net = out.model.net();
  nn::Adam opt(nn::trainable_params(net), {.lr = cfg.net.lr, .grad_clip = cfg.net.grad_clip});
  std::mt19937_64 rng(io::mix_seed(cfg.net.seed, 0x05d1));

  auto boundary = [&]() {
    const nn::Tensor pred = std::as_const(net).forward(x);
    UsdlTerms sum;
    std::vector<Array2D> preds;
    for (int i = 0; i < n; ++i) {
      Array2D xi = from_tensor(pred, i);
      const auto t = usdl_eval(xi, d[static_cast<std::size_t>(i)], x_l[static_cast<std::size_t>(i)], w, norm, cfg,
                               false).terms;
      sum.data += t.data;
      sum.prior += t.prior;
      sum.tv += t.tv;
      if (keep_epoch_predictions) preds.push_back(std::move(xi));
    }
    if (!std::isfinite(sum.total())) throw NumericalError("usdl_train: non-finite loss");
    out.epoch_terms.push_back(sum);
    if (keep_epoch_predictions) out.epoch_predictions.push_back(std::move(preds));
  };
  boundary();

  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const double pixels = static_cast<double>(H) * W;
  for (int epoch = 0; epoch < cfg.net.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.net.batch_size)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.net.batch_size));
      const auto idx = std::span(order).subspan(b0, b1 - b0);
      const nn::Tensor pred = net.forward_train(gather(x, idx));
      nn::Tensor g = pred.zeros_like();
      for (std::size_t bi = 0; bi < idx.size(); ++bi) {
        const auto e = usdl_eval(from_tensor(pred, static_cast<int>(bi)), d[idx[bi]], x_l[idx[bi]], w, norm, cfg, true);
        if (!std::isfinite(e.terms.total())) throw NumericalError("usdl_train: non-finite loss");
        float* gp = g.sample(static_cast<int>(bi));
        for (std::size_t k = 0; k < e.gradient.size(); ++k)
          gp[k] = static_cast<float>(e.gradient.data()[k] / pixels);
      }
      net.backward(g);
      opt.step();
    }
    boundary();
  }

  const nn::Tensor pred = std::as_const(net).forward(x);
  const double floor_x = impedance_floor_x(norm);
  for (int i = 0; i < n; ++i) {
    Array2D xi = from_tensor(pred, i);
    for (double& v : xi.values()) v = std::max(v, floor_x);
    out.predictions.push_back(ImpedanceGrid{norm.denormalize_impedance(xi), l[static_cast<std::size_t>(i)].dt, "usdl"});
  }
  return out;
}

ImpedanceGrid usdl_infer(const SeismicSection& d, const BaselineNet& model) {
  if (model.method() != "usdl") throw CheckpointMismatch("usdl_infer: checkpoint method is " + model.method());
  const auto& norm = model.normalization();
  Array2D xn = from_tensor(model.net().forward(to_tensor(norm.normalize_seismic(d))));
  const double floor_x = impedance_floor_x(norm);
  for (double& v : xn.values()) v = std::max(v, floor_x);
  return ImpedanceGrid{norm.denormalize_impedance(xn), 0.002, "usdl"};
}

}  // namespace saii::base
