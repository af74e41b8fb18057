#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "saii/array2d.hpp"
#include "saii/nn/tensor.hpp"

namespace saii {

enum class LatentSpace { Generic, Impedance, LowFrequency, Seismic };

std::string to_string(LatentSpace s);

/// Multi-channel latent field [channels x height x width] in double precision.
/// `source_rows/cols` are the pixel dims the latent was produced from (before
/// any padding), so decoding can crop back.
struct LatentTensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;
  LatentSpace space = LatentSpace::Generic;
  std::size_t source_rows = 0;
  std::size_t source_cols = 0;

  LatentTensor() = default;
  LatentTensor(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w), values(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t size() const { return values.size(); }
  double& at(int c, int y, int x) { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  bool same_shape(const LatentTensor& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  LatentTensor zeros_like() const;

  /// As a single-sample float tensor [1, c, h, w].
  nn::Tensor to_tensor() const;
  static LatentTensor from_tensor(const nn::Tensor& t, int sample, LatentSpace space = LatentSpace::Generic);

  bool operator==(const LatentTensor&) const = default;
};

/// Throws DimensionError if the shapes differ.
void require_same_shape(const LatentTensor& a, const LatentTensor& b, const char* what);

/// Reflect-pads (mirror without repeating the edge sample) at the bottom and
/// right so both dims become multiples of `multiple`.
Array2D pad_reflect_to_multiple(const Array2D& a, std::size_t multiple);
/// Top-left rows x cols block.
Array2D crop(const Array2D& a, std::size_t rows, std::size_t cols);

/// Pixel field as a single-sample, single-channel float tensor and back.
nn::Tensor to_tensor(const Array2D& a);
Array2D from_tensor(const nn::Tensor& t, int sample = 0, int channel = 0);

}  // namespace saii
