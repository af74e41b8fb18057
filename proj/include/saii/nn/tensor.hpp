#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace saii::nn {

/// Dense float32 activation tensor in NCHW layout.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w, float fill = 0.0f)
      : n_(n), c_(c), h_(h), w_(w), data_(static_cast<std::size_t>(n) * c * h * w, fill) {}

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h_) * w_; }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  float* sample(int i) { return data_.data() + static_cast<std::size_t>(i) * c_ * plane(); }
  const float* sample(int i) const { return data_.data() + static_cast<std::size_t>(i) * c_ * plane(); }
  float* channel(int i, int ch) { return sample(i) + static_cast<std::size_t>(ch) * plane(); }
  const float* channel(int i, int ch) const { return sample(i) + static_cast<std::size_t>(ch) * plane(); }

  float& at(int i, int ch, int y, int x) { return channel(i, ch)[static_cast<std::size_t>(y) * w_ + x]; }
  float at(int i, int ch, int y, int x) const { return channel(i, ch)[static_cast<std::size_t>(y) * w_ + x]; }

  bool same_shape(const Tensor& o) const { return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }
  Tensor zeros_like() const { return Tensor(n_, c_, h_, w_); }

  Tensor& operator+=(const Tensor& o);
  Tensor& operator*=(float s);

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<float> data_;
};

/// Channel-wise concatenation of tensors with equal n, h, w.
Tensor concat_channels(std::span<const Tensor* const> parts);
/// Splits a tensor's channels into consecutive blocks of the given sizes.
std::vector<Tensor> split_channels(const Tensor& t, std::span<const int> sizes);

/// Copies sample `i` of `src` into sample `j` of `dst` (same c, h, w).
void copy_sample(const Tensor& src, int i, Tensor& dst, int j);

}  // namespace saii::nn
