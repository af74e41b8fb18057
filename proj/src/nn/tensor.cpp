#include "saii/nn/tensor.hpp"

#include <algorithm>

#include "saii/error.hpp"

namespace saii::nn {

Tensor& Tensor::operator+=(const Tensor& o) {
  if (!same_shape(o)) throw DimensionError("Tensor +=: shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(float s) {
  for (float& v : data_) v *= s;
  return *this;
}

Tensor concat_channels(std::span<const Tensor* const> parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const auto& first = *parts.front();
  int c = 0;
  for (const auto* p : parts) {
    if (p->n() != first.n() || p->h() != first.h() || p->w() != first.w())
      throw DimensionError("concat_channels: mismatched n/h/w");
    c += p->c();
  }
  Tensor out(first.n(), c, first.h(), first.w());
  for (int i = 0; i < first.n(); ++i) {
    float* dst = out.sample(i);
    for (const auto* p : parts) {
      const std::size_t len = static_cast<std::size_t>(p->c()) * p->plane();
      std::copy_n(p->sample(i), len, dst);
      dst += len;
    }
  }
  return out;
}

std::vector<Tensor> split_channels(const Tensor& t, std::span<const int> sizes) {
  int total = 0;
  for (int s : sizes) total += s;
  if (total != t.c()) throw DimensionError("split_channels: sizes do not sum to channel count");
  std::vector<Tensor> out;
  for (int s : sizes) out.emplace_back(t.n(), s, t.h(), t.w());
  for (int i = 0; i < t.n(); ++i) {
    const float* src = t.sample(i);
    for (auto& o : out) {
      const std::size_t len = static_cast<std::size_t>(o.c()) * o.plane();
      std::copy_n(src, len, o.sample(i));
      src += len;
    }
  }
  return out;
}

void copy_sample(const Tensor& src, int i, Tensor& dst, int j) {
  if (src.c() != dst.c() || src.h() != dst.h() || src.w() != dst.w())
    throw DimensionError("copy_sample: shape mismatch");
  std::copy_n(src.sample(i), static_cast<std::size_t>(src.c()) * src.plane(), dst.sample(j));
}

}  // namespace saii::nn
