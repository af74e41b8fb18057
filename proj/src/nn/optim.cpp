#include "saii/nn/optim.hpp"

#include <cmath>

#include "saii/error.hpp"

namespace saii::nn {

Adam::Adam(std::vector<Param*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.lr > 0.0)) throw ParameterError("Adam: lr must be > 0");
  for (auto* p : params_) {
    m_.emplace_back(p->value.size(), 0.0f);
    v_.emplace_back(p->value.size(), 0.0f);
  }
}

void Adam::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

void Adam::check_finite() const {
  for (auto* p : params_)
    for (float g : p->grad)
      if (!std::isfinite(g)) throw NumericalError("non-finite gradient");
}

double Adam::step() {
  double sq = 0.0;
  for (auto* p : params_)
    for (float g : p->grad) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
  const double scale = (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const auto b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
  const auto step = static_cast<float>(cfg_.lr / bc1);
  const auto inv_bc2 = static_cast<float>(1.0 / bc2);
  const auto eps = static_cast<float>(cfg_.eps);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = *params_[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const float g = p.grad[i] * static_cast<float>(scale);
      m[i] = b1 * m[i] + (1.0f - b1) * g;
      v[i] = b2 * v[i] + (1.0f - b2) * g * g;
      p.value[i] -= step * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
    }
    p.zero_grad();
  }
  return norm;
}

std::map<std::string, std::vector<float>> Adam::state() const {
  std::map<std::string, std::vector<float>> out;
  for (std::size_t k = 0; k < m_.size(); ++k) {
    out["m." + std::to_string(k)] = m_[k];
    out["v." + std::to_string(k)] = v_[k];
  }
  return out;
}

void Adam::load_state(const std::map<std::string, std::vector<float>>& blobs, long steps) {
  for (std::size_t k = 0; k < m_.size(); ++k) {
    const auto im = blobs.find("m." + std::to_string(k)), iv = blobs.find("v." + std::to_string(k));
    if (im == blobs.end() || iv == blobs.end() || im->second.size() != m_[k].size() ||
        iv->second.size() != v_[k].size())
      throw CheckpointMismatch("optimizer state does not match parameters");
    m_[k] = im->second;
    v_[k] = iv->second;
  }
  t_ = steps;
}

Ema::Ema(std::vector<Param*> params, double decay) : params_(std::move(params)), decay_(decay) {
  if (decay < 0.0 || decay >= 1.0) throw ParameterError("EMA decay must lie in [0, 1)");
  for (auto* p : params_) shadow_.push_back(p->value);
}

void Ema::update() {
  const auto d = static_cast<float>(decay_);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& s = shadow_[k];
    const auto& v = params_[k]->value;
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = d * s[i] + (1.0f - d) * v[i];
  }
}

void Ema::swap() {
  for (std::size_t k = 0; k < params_.size(); ++k) std::swap(shadow_[k], params_[k]->value);
}

}  // namespace saii::nn
