#pragma once

#include <fftw3.h>

#include <complex>
#include <cstring>
#include <map>
#include <mutex>
#include <tuple>
#include <vector>

#include "lenslessmic/matrix.hpp"

namespace lenslessmic {

using Spectrum = std::vector<std::complex<double>>;

namespace detail {

// FFTW planning is not thread-safe, execution with the new-array interface is.
// Plans are created once per shape under a lock and shared afterwards.
class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get(std::size_t rows, std::size_t cols, bool forward) {
    std::lock_guard lock(mutex_);
    const auto key = std::make_tuple(rows, cols, forward);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    const std::size_t half = cols / 2 + 1;
    double* real = fftw_alloc_real(rows * cols);
    fftw_complex* cplx = fftw_alloc_complex(rows * half);
    const int r = static_cast<int>(rows), c = static_cast<int>(cols);
    fftw_plan plan = forward ? fftw_plan_dft_r2c_2d(r, c, real, cplx, FFTW_ESTIMATE)
                             : fftw_plan_dft_c2r_2d(r, c, cplx, real, FFTW_ESTIMATE);
    fftw_free(real);
    fftw_free(cplx);
    plans_.emplace(key, plan);
    return plan;
  }

  PlanCache(const PlanCache&) = delete;
  PlanCache& operator=(const PlanCache&) = delete;

 private:
  PlanCache() = default;
  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

  std::mutex mutex_;
  std::map<std::tuple<std::size_t, std::size_t, bool>, fftw_plan> plans_;
};

}  // namespace detail

// Real 2D FFT of a fixed shape. Owns aligned scratch buffers, so one instance
// must not be shared between threads; plans are shared.
class Fft2 {
 public:
  Fft2(std::size_t rows, std::size_t cols)
      : rows_(rows),
        cols_(cols),
        half_(cols / 2 + 1),
        real_(fftw_alloc_real(rows * cols)),
        cplx_(fftw_alloc_complex(rows * (cols / 2 + 1))),
        forward_(detail::PlanCache::instance().get(rows, cols, true)),
        inverse_(detail::PlanCache::instance().get(rows, cols, false)) {}

  ~Fft2() {
    fftw_free(real_);
    fftw_free(cplx_);
  }

  Fft2(const Fft2&) = delete;
  Fft2& operator=(const Fft2&) = delete;

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t spectrum_size() const noexcept { return rows_ * half_; }
  std::size_t half_cols() const noexcept { return half_; }

  Spectrum forward(const Matrix& in) {
    Spectrum out;
    forward(in, out);
    return out;
  }

  void forward(const Matrix& in, Spectrum& out) {
    require(in.rows() == rows_ && in.cols() == cols_, "fft input shape mismatch");
    std::memcpy(real_, in.values().data(), sizeof(double) * in.size());
    fftw_execute_dft_r2c(forward_, real_, cplx_);
    out.resize(spectrum_size());
    std::memcpy(static_cast<void*>(out.data()), cplx_, sizeof(fftw_complex) * spectrum_size());
  }

  // Normalized inverse: inverse(forward(x)) == x.
  Matrix inverse(const Spectrum& in) {
    Matrix out(rows_, cols_);
    inverse(in, out);
    return out;
  }

  void inverse(const Spectrum& in, Matrix& out) {
    require(in.size() == spectrum_size(), "spectrum size mismatch");
    std::memcpy(static_cast<void*>(cplx_), in.data(), sizeof(fftw_complex) * spectrum_size());
    fftw_execute_dft_c2r(inverse_, cplx_, real_);
    if (out.rows() != rows_ || out.cols() != cols_) out = Matrix(rows_, cols_);
    const double scale = 1.0 / static_cast<double>(rows_ * cols_);
    auto& v = out.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = real_[i] * scale;
  }

 private:
  std::size_t rows_, cols_, half_;
  double* real_;
  fftw_complex* cplx_;
  fftw_plan forward_;
  fftw_plan inverse_;
};

}  // namespace lenslessmic
