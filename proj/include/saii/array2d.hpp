#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace saii {

/// Dense row-major 2D array of doubles. Rows are depth/time samples and
/// columns are traces, so a trace is a strided column.
class Array2D {
 public:
  Array2D() = default;
  Array2D(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Array2D(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& vector() const { return data_; }

  std::vector<double> column(std::size_t c) const;
  void set_column(std::size_t c, std::span<const double> v);

  bool same_shape(const Array2D& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool operator==(const Array2D& o) const = default;

  double min() const;
  double max() const;
  double sum_squares() const;

  Array2D block(std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Throws DimensionError when shapes differ. `what` names the operation.
void require_same_shape(const Array2D& a, const Array2D& b, const char* what);

/// Acoustic impedance on a depth x trace grid.
struct ImpedanceGrid {
  Array2D values;
  double dt = 0.002;
  std::string origin_tag;

  /// Checks positivity, finiteness and m >= 2; throws DomainError / DimensionError.
  void validate() const;
  bool operator==(const ImpedanceGrid&) const = default;
};

/// Seismic amplitudes on the same grid as an ImpedanceGrid.
using SeismicSection = Array2D;

}  // namespace saii
