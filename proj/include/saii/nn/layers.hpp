#pragma once

#include <functional>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "saii/nn/tensor.hpp"

namespace saii::nn {

/// A learnable (or persistent, when !trainable) float buffer with its gradient.
struct Param {
  std::vector<float> value;
  std::vector<float> grad;
  bool trainable = true;

  Param() = default;
  explicit Param(std::size_t n, float fill = 0.0f, bool train = true)
      : value(n, fill), grad(train ? n : 0, 0.0f), trainable(train) {}
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }
};

using Visitor = std::function<void(const std::string& name, Param& p)>;

class Module {
 public:
  virtual ~Module() = default;
  /// Calls `fn` for every parameter and persistent buffer with a dotted name.
  virtual void visit(const std::string& prefix, const Visitor& fn) = 0;
};

std::vector<Param*> trainable_params(Module& m);
std::size_t parameter_count(Module& m);
void zero_grad(Module& m);

/// Dispatches to forward() on const layers and forward_train() on mutable
/// ones, so composite blocks share one body for inference and training.
template <class L, class... A>
decltype(auto) run_layer(L& layer, A&&... args) {
  if constexpr (std::is_const_v<L>) {
    return layer.forward(std::forward<A>(args)...);
  } else {
    return layer.forward_train(std::forward<A>(args)...);
  }
}

/// Carries the constness of `Self` over to objects reached through pointers.
template <class Self, class T>
auto& like(T& obj) {
  if constexpr (std::is_const_v<Self>) {
    return std::as_const(obj);
  } else {
    return obj;
  }
}

// ---------------------------------------------------------------------------

/// 2D convolution, square kernel, zero padding k/2 (so stride 1 keeps shape,
/// stride 2 halves even dims). Implemented as im2col + GEMM.
class Conv2d : public Module {
 public:
  Conv2d() = default;
  Conv2d(int cin, int cout, int kernel, int stride, std::mt19937_64& rng, float init_scale = 1.0f);

  Tensor forward(const Tensor& x) const;
  Tensor forward_train(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void visit(const std::string& prefix, const Visitor& fn) override;

  int in_channels() const { return cin_; }
  int out_channels() const { return cout_; }

  Param weight;  ///< [cout, cin, k, k]
  Param bias;    ///< [cout]

 private:
  int out_size(int n) const { return (n + 2 * pad_ - k_) / stride_ + 1; }
  int cin_ = 0, cout_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  Tensor x_;
};

class Linear : public Module {
 public:
  Linear() = default;
  Linear(int in, int out, std::mt19937_64& rng, float init_scale = 1.0f);

  /// x is [n, in, 1, 1].
  Tensor forward(const Tensor& x) const;
  Tensor forward_train(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void visit(const std::string& prefix, const Visitor& fn) override;

  Param weight;  ///< [out, in]
  Param bias;

 private:
  int in_ = 0, out_ = 0;
  Tensor x_;
};

class GroupNorm : public Module {
 public:
  GroupNorm() = default;
  GroupNorm(int channels, int groups, float eps = 1e-5f);

  Tensor forward(const Tensor& x) const;
  Tensor forward_train(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void visit(const std::string& prefix, const Visitor& fn) override;

  Param weight, bias;

 private:
  Tensor run(const Tensor& x, Tensor* xhat, std::vector<float>* inv_std) const;
  int c_ = 0, g_ = 1;
  float eps_ = 1e-5f;
  Tensor xhat_;
  std::vector<float> inv_std_;
};

/// Batch norm over (n, h, w). Training uses batch statistics and updates the
/// running averages; inference uses the running averages only.
class BatchNorm2d : public Module {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels, float momentum = 0.1f, float eps = 1e-5f);

  Tensor forward(const Tensor& x) const;
  Tensor forward_train(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void visit(const std::string& prefix, const Visitor& fn) override;

  Param weight, bias;
  Param running_mean, running_var;

 private:
  int c_ = 0;
  float momentum_ = 0.1f, eps_ = 1e-5f;
  Tensor xhat_;
  std::vector<float> inv_std_;
};

class SiLU {
 public:
  Tensor forward(const Tensor& x) const;
  Tensor forward_train(const Tensor& x);
  Tensor backward(const Tensor& gy) const;

 private:
  Tensor x_;
};

class Tanh {
 public:
  Tensor forward(const Tensor& x) const;
  Tensor forward_train(const Tensor& x);
  Tensor backward(const Tensor& gy) const;

 private:
  Tensor y_;
};

class LeakyReLU {
 public:
  explicit LeakyReLU(float slope = 0.2f) : slope_(slope) {}
  Tensor forward(const Tensor& x) const;
  Tensor forward_train(const Tensor& x);
  Tensor backward(const Tensor& gy) const;

 private:
  float slope_;
  Tensor x_;
};

/// Nearest-neighbour 2x upsampling and its adjoint.
Tensor upsample2x(const Tensor& x);
Tensor upsample2x_backward(const Tensor& gy);

/// Orthonormal 2x2 Haar analysis per channel: [n,c,h,w] -> [n,4c,h/2,w/2]
/// with output channels ordered (LL, LH, HL, HH) blocks of c. Requires even
/// h and w. The backward pass is the synthesis transform.
Tensor haar_down(const Tensor& x);
Tensor haar_down_backward(const Tensor& gy);

/// Sinusoidal embedding [n, dim, 1, 1] of (possibly fractional) timesteps.
Tensor timestep_embedding(std::span<const float> t, int dim);

}  // namespace saii::nn
