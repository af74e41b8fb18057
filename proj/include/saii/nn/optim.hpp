#pragma once

#include <map>
#include <string>
#include <vector>

#include "saii/nn/layers.hpp"

namespace saii::nn {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;  ///< global-norm clip; <= 0 disables
};

class Adam {
 public:
  Adam(std::vector<Param*> params, AdamConfig cfg);

  /// Clips, applies one update and zeroes gradients. Returns the pre-clip norm.
  double step();
  void zero_grad();
  /// Throws NumericalError if any gradient is non-finite.
  void check_finite() const;

  AdamConfig& config() { return cfg_; }
  long steps() const { return t_; }

  /// Moment buffers keyed "m.<i>" / "v.<i>" for checkpointing.
  std::map<std::string, std::vector<float>> state() const;
  void load_state(const std::map<std::string, std::vector<float>>& blobs, long steps);

 private:
  std::vector<Param*> params_;
  AdamConfig cfg_;
  std::vector<std::vector<float>> m_, v_;
  long t_ = 0;
};

/// Exponential moving average of parameter values.
class Ema {
 public:
  Ema(std::vector<Param*> params, double decay);
  void update();
  /// Swaps the shadow weights with the live ones (call twice to restore).
  void swap();
  const std::vector<std::vector<float>>& shadow() const { return shadow_; }
  std::vector<std::vector<float>>& shadow() { return shadow_; }

 private:
  std::vector<Param*> params_;
  double decay_;
  std::vector<std::vector<float>> shadow_;
};

}  // namespace saii::nn
