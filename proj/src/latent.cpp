#include "saii/latent.hpp"

#include "saii/error.hpp"

namespace saii {

std::string to_string(LatentSpace s) {
  switch (s) {
    case LatentSpace::Impedance: return "impedance_latent";
    case LatentSpace::LowFrequency: return "lowfreq_latent";
    case LatentSpace::Seismic: return "seismic_latent";
    case LatentSpace::Generic: break;
  }
  return "generic";
}

LatentTensor LatentTensor::zeros_like() const {
  LatentTensor z(channels, height, width);
  z.space = space;
  z.source_rows = source_rows;
  z.source_cols = source_cols;
  return z;
}

nn::Tensor LatentTensor::to_tensor() const {
  nn::Tensor t(1, channels, height, width);
  for (std::size_t i = 0; i < values.size(); ++i) t.data()[i] = static_cast<float>(values[i]);
  return t;
}

LatentTensor LatentTensor::from_tensor(const nn::Tensor& t, int sample, LatentSpace space) {
  LatentTensor z(t.c(), t.h(), t.w());
  const float* src = t.sample(sample);
  for (std::size_t i = 0; i < z.values.size(); ++i) z.values[i] = src[i];
  z.space = space;
  return z;
}

void require_same_shape(const LatentTensor& a, const LatentTensor& b, const char* what) {
  if (!a.same_shape(b)) throw DimensionError(std::string(what) + ": latent shape mismatch");
}

namespace {
std::size_t mirror(std::size_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::size_t period = 2 * (n - 1);
  i %= period;
  return i < n ? i : period - i;
}
}  // namespace

Array2D pad_reflect_to_multiple(const Array2D& a, std::size_t multiple) {
  if (multiple == 0) throw ParameterError("pad multiple must be >= 1");
  const std::size_t r = (a.rows() + multiple - 1) / multiple * multiple;
  const std::size_t c = (a.cols() + multiple - 1) / multiple * multiple;
  if (r == a.rows() && c == a.cols()) return a;
  Array2D out(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) = a(mirror(i, a.rows()), mirror(j, a.cols()));
  return out;
}

Array2D crop(const Array2D& a, std::size_t rows, std::size_t cols) {
  if (rows == a.rows() && cols == a.cols()) return a;
  return a.block(0, 0, rows, cols);
}

nn::Tensor to_tensor(const Array2D& a) {
  nn::Tensor t(1, 1, static_cast<int>(a.rows()), static_cast<int>(a.cols()));
  for (std::size_t i = 0; i < a.size(); ++i) t.data()[i] = static_cast<float>(a.data()[i]);
  return t;
}

Array2D from_tensor(const nn::Tensor& t, int sample, int channel) {
  Array2D a(static_cast<std::size_t>(t.h()), static_cast<std::size_t>(t.w()));
  const float* src = t.channel(sample, channel);
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] = src[i];
  return a;
}

}  // namespace saii
