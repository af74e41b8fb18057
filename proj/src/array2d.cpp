#include "saii/array2d.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "saii/error.hpp"

namespace saii {

Array2D::Array2D(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("Array2D: " + std::to_string(data_.size()) + " values for shape " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
}

std::vector<double> Array2D::column(std::size_t c) const {
  std::vector<double> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

void Array2D::set_column(std::size_t c, std::span<const double> v) {
  for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = v[r];
}

double Array2D::min() const { return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end()); }
double Array2D::max() const { return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end()); }

double Array2D::sum_squares() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return s;
}

Array2D Array2D::block(std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) const {
  if (r0 + nr > rows_ || c0 + nc > cols_) throw DimensionError("Array2D::block out of range");
  Array2D out(nr, nc);
  for (std::size_t r = 0; r < nr; ++r)
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>((r0 + r) * cols_ + c0), nc,
                out.data_.begin() + static_cast<std::ptrdiff_t>(r * nc));
  return out;
}

void require_same_shape(const Array2D& a, const Array2D& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
}

void ImpedanceGrid::validate() const {
  if (values.rows() < 2) throw DimensionError("ImpedanceGrid needs at least 2 depth samples");
  for (double v : values.values()) {
    if (!std::isfinite(v) || v <= 0.0) throw DomainError("ImpedanceGrid values must be finite and > 0");
  }
}

}  // namespace saii
