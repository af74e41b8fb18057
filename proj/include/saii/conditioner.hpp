#pragma once

#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "saii/array2d.hpp"
#include "saii/latent.hpp"
#include "saii/nn/layers.hpp"

namespace saii::cond {

/// One level of the orthonormal 2D Haar transform. `rows/cols` keep the input
/// dims so odd sizes (reflect-padded before analysis) crop back exactly.
struct HaarCoeffs {
  Array2D ll, lh, hl, hh;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

/// For each 2x2 block [a b; c d]: LL=(a+b+c+d)/2, LH=(a+b-c-d)/2,
/// HL=(a-b+c-d)/2, HH=(a-b-c+d)/2.
HaarCoeffs hwt2d(const Array2D& x);
Array2D ihwt2d(const HaarCoeffs& c);

struct ShwtConfig {
  int levels = 2;           ///< log2 of the codec downsample factor
  int latent_channels = 3;
  int width = 8;            ///< channel cap after each conv
  bool use_batchnorm = true;

  void validate() const;
  nlohmann::json to_json() const;
  static ShwtConfig from_json(const nlohmann::json& j);
};

/// Haar analysis (channels x4) -> conv3x3 -> batch norm, repeated per level,
/// then a 1x1 conv to the latent channels and tanh.
class ShwtHead : public nn::Module {
 public:
  ShwtHead(const ShwtConfig& cfg, std::mt19937_64& rng);

  /// d: [n, 1, H, W] normalized seismic, H and W divisible by 2^levels.
  nn::Tensor forward(const nn::Tensor& d) const;
  nn::Tensor forward_train(const nn::Tensor& d);
  /// Accumulates parameter gradients; the input gradient is discarded.
  void backward(const nn::Tensor& gy);
  void visit(const std::string& prefix, const nn::Visitor& fn) override;

  /// Sets every conv to pass the leading channels through unchanged
  /// (the low-pass chain lands in output channel 0) and zeroes the rest.
  void init_identity();

  const ShwtConfig& config() const { return cfg_; }
  std::vector<int> level_channels() const;

 private:
  template <class Self>
  static nn::Tensor run(Self& self, const nn::Tensor& d);

  ShwtConfig cfg_;
  std::vector<nn::Conv2d> convs_;
  std::vector<nn::BatchNorm2d> norms_;
  nn::Conv2d proj_;
  nn::Tanh act_;
};

/// d_z = SHWT(d) for one normalized section; reflect-pads to a multiple of
/// 2^levels first so the grid matches the codec latent grid.
LatentTensor shwt_forward(const Array2D& d_normalized, const ShwtHead& head);

}  // namespace saii::cond
