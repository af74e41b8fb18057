#pragma once

#include <memory>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "saii/nn/layers.hpp"

namespace saii::nn {

int default_groups(int channels);

/// GN -> SiLU -> conv3x3 (+ projected time embedding) -> GN -> SiLU -> conv3x3,
/// plus identity or 1x1 skip.
class ResBlock : public Module {
 public:
  ResBlock(int cin, int cout, int temb_dim, std::mt19937_64& rng);

  Tensor forward(const Tensor& x, const Tensor* temb) const;
  Tensor forward_train(const Tensor& x, const Tensor* temb);
  /// Returns dL/dx; adds dL/dtemb into *gtemb when the block is time-conditioned.
  Tensor backward(const Tensor& gy, Tensor* gtemb);
  void visit(const std::string& prefix, const Visitor& fn) override;

 private:
  template <class Self>
  static Tensor run(Self& self, const Tensor& x, const Tensor* temb);

  int cin_, cout_, temb_dim_;
  GroupNorm gn1_, gn2_;
  SiLU act1_, act2_, act_t_;
  Conv2d conv1_, conv2_;
  std::optional<Linear> temb_proj_;
  std::optional<Conv2d> skip_;
};

struct UNetConfig {
  int in_channels = 1;
  int out_channels = 1;
  int base_width = 32;
  std::vector<int> mults{1, 2, 2};
  bool time_conditioned = false;

  void validate() const;
  nlohmann::json to_json() const;
  static UNetConfig from_json(const nlohmann::json& j);
};

/// Encoder-decoder with skip connections. Each level has one residual block;
/// levels are joined by stride-2 convolutions and nearest upsampling.
/// Spatial dims must be divisible by 2^(levels-1).
class UNet : public Module {
 public:
  UNet(const UNetConfig& cfg, std::mt19937_64& rng);

  Tensor forward(const Tensor& x, std::span<const float> t = {}) const;
  Tensor forward_train(const Tensor& x, std::span<const float> t = {});
  /// Returns dL/dx for the network input.
  Tensor backward(const Tensor& gy);
  void visit(const std::string& prefix, const Visitor& fn) override;

  const UNetConfig& config() const { return cfg_; }

 private:
  template <class Self>
  static Tensor run(Self& self, const Tensor& x, std::span<const float> t);

  UNetConfig cfg_;
  int temb_dim_ = 0;
  std::optional<Linear> temb1_, temb2_;
  SiLU temb_act_;
  Conv2d conv_in_;
  std::vector<std::unique_ptr<ResBlock>> down_;
  std::vector<Conv2d> downsample_;
  std::unique_ptr<ResBlock> mid_;
  std::vector<std::unique_ptr<ResBlock>> up_;  ///< indexed by level, size levels-1
  GroupNorm norm_out_;
  SiLU act_out_;
  Conv2d conv_out_;

};

}  // namespace saii::nn
