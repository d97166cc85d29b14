#pragma once

// Image, audio and code-level quality metrics.

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "lenslessmic/codec.hpp"
#include "lenslessmic/error.hpp"
#include "lenslessmic/fft.hpp"
#include "lenslessmic/matrix.hpp"

namespace lenslessmic::analysis {

// dB values are clamped to +/- this so identity and silence cases stay finite.
inline constexpr double db_cap = 100.0;

struct FrameMetrics {
  double psnr = 0.0;
  double ssim = 0.0;
  double mse = 0.0;
};

struct AudioMetrics {
  double si_sdr = 0.0;
  double mel_dist = 0.0;
};

inline double mse(const Matrix& ref, const Matrix& est) {
  require(ref.same_shape(est) && !ref.empty(), "mse needs equal, non-empty shapes");
  double s = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double d = ref.values()[i] - est.values()[i];
    s += d * d;
  }
  return s / static_cast<double>(ref.size());
}

// Peak value 1 (images normalized to [0, 1]).
inline double psnr(const Matrix& ref, const Matrix& est) {
  const double e = mse(ref, est);
  if (e <= 0.0) return db_cap;
  return std::min(db_cap, 10.0 * std::log10(1.0 / e));
}

struct SsimParams {
  int window = 7;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

inline std::vector<double> gaussian_window_1d(int size, double sigma) {
  std::vector<double> w(size);
  const double c = (size - 1) / 2.0;
  double s = 0.0;
  for (int i = 0; i < size; ++i) {
    w[i] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
    s += w[i];
  }
  for (double& v : w) v /= s;
  return w;
}

namespace detail {

// Separable "valid" filtering: output (R-w+1) x (C-w+1).
inline Matrix filter_valid(const Matrix& in, const std::vector<double>& w) {
  const std::size_t n = w.size();
  const std::size_t rows = in.rows() - n + 1, cols = in.cols() - n + 1;
  Matrix tmp(in.rows(), cols), out(rows, cols);
  for (std::size_t r = 0; r < in.rows(); ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      double a = 0.0;
      for (std::size_t k = 0; k < n; ++k) a += w[k] * in(r, c + k);
      tmp(r, c) = a;
    }
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      double a = 0.0;
      for (std::size_t k = 0; k < n; ++k) a += w[k] * tmp(r + k, c);
      out(r, c) = a;
    }
  return out;
}

}  // namespace detail

// Mean SSIM over all fully contained Gaussian windows.
inline double ssim(const Matrix& ref, const Matrix& est, const SsimParams& p = {}) {
  require(ref.same_shape(est), "ssim needs equal shapes");
  const auto win = static_cast<std::size_t>(p.window);
  require(ref.rows() >= win && ref.cols() >= win, "image smaller than the SSIM window");
  const auto w = gaussian_window_1d(p.window, p.sigma);
  Matrix xx(ref.rows(), ref.cols()), yy = xx, xy = xx;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double a = ref.values()[i], b = est.values()[i];
    xx.values()[i] = a * a;
    yy.values()[i] = b * b;
    xy.values()[i] = a * b;
  }
  const Matrix mx = detail::filter_valid(ref, w), my = detail::filter_valid(est, w);
  const Matrix sxx = detail::filter_valid(xx, w), syy = detail::filter_valid(yy, w), sxy = detail::filter_valid(xy, w);
  const double c1 = std::pow(p.k1 * p.data_range, 2), c2 = std::pow(p.k2 * p.data_range, 2);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double ux = mx.values()[i], uy = my.values()[i];
    const double vx = sxx.values()[i] - ux * ux, vy = syy.values()[i] - uy * uy, cxy = sxy.values()[i] - ux * uy;
    total += ((2 * ux * uy + c1) * (2 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

inline FrameMetrics frame_metrics(const Matrix& ref, const Matrix& est) {
  require(ref.same_shape(est), "frame_metrics needs equal shapes");
  return {psnr(ref, est), ssim(ref, est), mse(ref, est)};
}

// Scale-invariant SDR against the optimal scaling of the reference.
inline double si_sdr(std::span<const double> ref, std::span<const double> est) {
  require(ref.size() == est.size() && !ref.empty(), "si_sdr needs equal, non-empty lengths");
  double rr = 0.0, re = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    rr += ref[i] * ref[i];
    re += ref[i] * est[i];
  }
  require(rr > 0.0, "si_sdr is undefined for a silent reference");
  const double alpha = re / rr;
  double target = 0.0, noise = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double t = alpha * ref[i];
    const double n = est[i] - t;
    target += t * t;
    noise += n * n;
  }
  if (target <= 0.0) return -db_cap;
  if (noise <= 0.0) return db_cap;
  return std::clamp(10.0 * std::log10(target / noise), -db_cap, db_cap);
}

struct MelParams {
  std::size_t n_fft = 1024;
  std::size_t hop = 256;
  std::size_t bands = 80;
  double floor = 1e-5;
  double sample_rate = 16000.0;
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// bands x (n_fft/2 + 1) triangular filters, HTK mel scale, 0 Hz to Nyquist.
inline Matrix mel_filterbank(const MelParams& p) {
  const std::size_t bins = p.n_fft / 2 + 1;
  Matrix fb(p.bands, bins);
  const double top = hz_to_mel(p.sample_rate / 2.0);
  std::vector<double> edges(p.bands + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) edges[i] = mel_to_hz(top * static_cast<double>(i) / (p.bands + 1));
  for (std::size_t b = 0; b < p.bands; ++b) {
    const double lo = edges[b], mid = edges[b + 1], hi = edges[b + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * p.sample_rate / static_cast<double>(p.n_fft);
      double v = 0.0;
      if (f > lo && f <= mid) v = (f - lo) / (mid - lo);
      else if (f > mid && f < hi) v = (hi - f) / (hi - mid);
      fb(b, k) = v;
    }
  }
  return fb;
}

// frames x bands log10 mel magnitudes; periodic Hann window, zero-padded tail.
inline Matrix log_mel(std::span<const double> wave, const MelParams& p = {}) {
  require(!wave.empty(), "log_mel needs a non-empty signal");
  const std::size_t frames = wave.size() <= p.n_fft ? 1 : 1 + (wave.size() - p.n_fft + p.hop - 1) / p.hop;
  const Matrix fb = mel_filterbank(p);
  std::vector<double> window(p.n_fft);
  for (std::size_t i = 0; i < p.n_fft; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / p.n_fft);
  Fft2 fft(1, p.n_fft);
  Matrix buf(1, p.n_fft);
  Spectrum spec;
  std::vector<double> mag(p.n_fft / 2 + 1);
  Matrix out(frames, p.bands);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < p.n_fft; ++i) {
      const std::size_t j = t * p.hop + i;
      buf.values()[i] = j < wave.size() ? wave[j] * window[i] : 0.0;
    }
    fft.forward(buf, spec);
    for (std::size_t k = 0; k < mag.size(); ++k) mag[k] = std::abs(spec[k]);
    for (std::size_t b = 0; b < p.bands; ++b) {
      double e = 0.0;
      for (std::size_t k = 0; k < mag.size(); ++k) e += fb(b, k) * mag[k];
      out(t, b) = std::log10(std::max(e, p.floor));
    }
  }
  return out;
}

// Mean absolute difference between log-mel spectrograms.
inline double mel_distance(std::span<const double> a, std::span<const double> b, const MelParams& p = {}) {
  require(a.size() == b.size(), "mel_distance needs equal lengths");
  const Matrix ma = log_mel(a, p), mb = log_mel(b, p);
  double s = 0.0;
  for (std::size_t i = 0; i < ma.size(); ++i) s += std::abs(ma.values()[i] - mb.values()[i]);
  return s / static_cast<double>(ma.size());
}

inline AudioMetrics audio_metrics(std::span<const double> ref, std::span<const double> est, double sample_rate = 16000.0) {
  MelParams p;
  p.sample_rate = sample_rate;
  return {si_sdr(ref, est), mel_distance(ref, est, p)};
}

// Percentage of frames whose codes agree on every book 0..k-1.
inline double code_match(const codec::CodeSequence& ref, const codec::CodeSequence& est, std::size_t k) {
  require(ref.frames == est.frames && ref.books == est.books, "code sequences differ in shape");
  require(k >= 1 && k <= ref.books, "code_match depth out of range");
  if (ref.frames == 0) return 100.0;
  std::size_t hits = 0;
  for (std::size_t t = 0; t < ref.frames; ++t) {
    bool ok = true;
    for (std::size_t c = 0; c < k && ok; ++c) ok = ref(t, c) == est(t, c);
    hits += ok;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ref.frames);
}

// Pads with zeros or truncates to `n` samples.
inline std::vector<double> fit_length(std::span<const double> x, std::size_t n) {
  std::vector<double> out(n, 0.0);
  std::copy_n(x.begin(), std::min(n, x.size()), out.begin());
  return out;
}

}  // namespace lenslessmic::analysis
