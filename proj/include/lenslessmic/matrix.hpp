#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "lenslessmic/error.hpp"

namespace lenslessmic {

// Dense row-major 2D array of doubles. Used for images, PSFs and latent matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, "matrix data size does not match shape");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

using Image = Matrix;

inline double sum(const Matrix& m) {
  double s = 0.0;
  for (double v : m.values()) s += v;
  return s;
}

inline double squared_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.values()) s += v * v;
  return s;
}

inline double norm(const Matrix& m) { return std::sqrt(squared_norm(m)); }

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  require(a.same_shape(b), "shape mismatch");
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a.values()[i] - b.values()[i]));
  return d;
}

inline double relative_error(const Matrix& est, const Matrix& ref) {
  require(est.same_shape(ref), "shape mismatch");
  double num = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double d = est.values()[i] - ref.values()[i];
    num += d * d;
  }
  const double den = squared_norm(ref);
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

inline bool all_finite(const Matrix& m) {
  return std::all_of(m.values().begin(), m.values().end(), [](double v) { return std::isfinite(v); });
}

// Copy `src` into a zero matrix of shape rows x cols with its top-left corner at (r0, c0).
inline Matrix embed(const Matrix& src, std::size_t rows, std::size_t cols, std::size_t r0, std::size_t c0) {
  require(r0 + src.rows() <= rows && c0 + src.cols() <= cols, "embedded block exceeds target");
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < src.rows(); ++r)
    std::copy(src.row(r).begin(), src.row(r).end(), out.row(r0 + r).begin() + static_cast<std::ptrdiff_t>(c0));
  return out;
}

inline Matrix crop(const Matrix& src, std::size_t r0, std::size_t c0, std::size_t rows, std::size_t cols) {
  require(r0 + rows <= src.rows() && c0 + cols <= src.cols(), "crop window exceeds source");
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    auto s = src.row(r0 + r).subspan(c0, cols);
    std::copy(s.begin(), s.end(), out.row(r).begin());
  }
  return out;
}

}  // namespace lenslessmic
