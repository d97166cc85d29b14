#pragma once

// Lensless capture simulation: mask-keyed PSFs, the convolutional forward
// model, and the super-pixel / frame-grouping geometry around it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "lenslessmic/error.hpp"
#include "lenslessmic/fft.hpp"
#include "lenslessmic/matrix.hpp"
#include "lenslessmic/random.hpp"

namespace lenslessmic::optics {

// Programmable-mask pattern: the secret key. side x side pixels, each an
// integer level in [0, bit_depth).
struct MaskPattern {
  int side = 0;
  int bit_depth = 2;
  std::vector<int> levels;
  std::uint64_t seed = 0;

  std::size_t pixel_count() const noexcept { return levels.size(); }

  void validate() const {
    require(side >= 2, "mask side must be at least 2");
    require(bit_depth >= 2, "mask bit depth must be at least 2");
    require(levels.size() == static_cast<std::size_t>(side) * static_cast<std::size_t>(side),
            "mask level count must equal side^2");
    for (int l : levels) require(l >= 0 && l < bit_depth, "mask level out of range");
  }

  bool operator==(const MaskPattern&) const = default;
};

inline MaskPattern random_mask(int side, int bit_depth, std::uint64_t seed) {
  MaskPattern m{side, bit_depth, {}, seed};
  require(side >= 2 && bit_depth >= 2, "invalid mask dimensions");
  Rng rng(derive_seed(seed, "mask"));
  m.levels.resize(static_cast<std::size_t>(side) * static_cast<std::size_t>(side));
  for (int& l : m.levels) l = static_cast<int>(rng.below(static_cast<std::uint64_t>(bit_depth)));
  return m;
}

inline std::size_t agreement(const MaskPattern& a, const MaskPattern& b) {
  require(a.levels.size() == b.levels.size(), "mask size mismatch");
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.levels.size(); ++i) n += a.levels[i] == b.levels[i];
  return n;
}

struct PointSpreadFunction {
  Matrix kernel;
  double blur_sigma = 0.0;
};

namespace detail {

inline std::vector<double> gaussian_taps(double sigma) {
  if (sigma <= 0.0) return {1.0};
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  for (int k = -radius; k <= radius; ++k) taps[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
  const double s = std::accumulate(taps.begin(), taps.end(), 0.0);
  for (double& t : taps) t /= s;
  return taps;
}

// Separable blur with zero boundary.
inline Matrix separable_blur(const Matrix& in, const std::vector<double>& taps) {
  const int radius = static_cast<int>(taps.size() / 2);
  const auto rows = static_cast<int>(in.rows()), cols = static_cast<int>(in.cols());
  Matrix tmp(in.rows(), in.cols()), out(in.rows(), in.cols());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const int cc = c + k;
        if (cc >= 0 && cc < cols) acc += taps[k + radius] * in(r, cc);
      }
      tmp(r, c) = acc;
    }
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const int rr = r + k;
        if (rr >= 0 && rr < rows) acc += taps[k + radius] * tmp(rr, c);
      }
      out(r, c) = acc;
    }
  return out;
}

}  // namespace detail

// Transmission level/(b-1) per mask pixel, nearest-neighbour upsampled onto
// the sensor grid, Gaussian blurred (truncated at 4 sigma), normalized to unit sum.
inline PointSpreadFunction psf_from_mask(const MaskPattern& mask, std::size_t rows, std::size_t cols,
                                         double blur_sigma) {
  mask.validate();
  require(blur_sigma >= 0.0 && std::isfinite(blur_sigma), "blur_sigma must be finite and >= 0");
  const auto side = static_cast<std::size_t>(mask.side);
  require(rows >= side && cols >= side, "sensor must be at least as large as the mask");
  if (std::all_of(mask.levels.begin(), mask.levels.end(), [](int l) { return l == 0; }))
    throw Error(ErrorKind::degenerate_key, "mask pattern is fully opaque (all levels zero)");

  Matrix transmission(rows, cols);
  const double top = static_cast<double>(mask.bit_depth - 1);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t mr = r * side / rows;
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t mc = c * side / cols;
      transmission(r, c) = mask.levels[mr * side + mc] / top;
    }
  }
  Matrix kernel = blur_sigma > 0.0 ? detail::separable_blur(transmission, detail::gaussian_taps(blur_sigma))
                                   : std::move(transmission);
  const double total = sum(kernel);
  require(total > 0.0, "PSF has zero energy", ErrorKind::degenerate_key);
  for (double& v : kernel.values()) v /= total;
  return {std::move(kernel), blur_sigma};
}

// Identity system: unit impulse at the kernel centre (rows/2, cols/2).
inline PointSpreadFunction delta_psf(std::size_t rows, std::size_t cols) {
  Matrix k(rows, cols);
  k(rows / 2, cols / 2) = 1.0;
  return {std::move(k), 0.0};
}

// Number of pixels kept by perturb_mask: ceil(W * N), robust to W*N landing a
// rounding error above an integer.
inline std::size_t preserved_count(double fraction, std::size_t n) {
  const double x = fraction * static_cast<double>(n);
  const double nearest = std::round(x);
  if (std::abs(x - nearest) < 1e-9 * std::max<double>(1.0, static_cast<double>(n)))
    return static_cast<std::size_t>(nearest);
  return static_cast<std::size_t>(std::ceil(x));
}

// Keeps exactly ceil(W*N) pixels; every other pixel is moved to a different level.
inline MaskPattern perturb_mask(const MaskPattern& mask, double fraction, std::uint64_t rng_seed) {
  mask.validate();
  require(fraction >= 0.0 && fraction <= 1.0, "W must lie in [0, 1]");
  const std::size_t n = mask.pixel_count();
  const std::size_t changed = n - std::min(n, preserved_count(fraction, n));
  MaskPattern out = mask;
  if (changed == 0) return out;
  Rng rng(derive_seed(rng_seed, "perturb_mask"));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < changed; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(order[i], order[j]);
    int& level = out.levels[order[i]];
    const auto shift = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(mask.bit_depth - 1)));
    level = (level + shift) % mask.bit_depth;
  }
  out.seed = rng_seed;
  return out;
}

// Rectangle in sensor pixel coordinates.
struct Roi {
  std::size_t row = 0, col = 0, height = 0, width = 0;
};

// Geometry of the convolution model. The kernel centre sits at
// (kernel_rows/2, kernel_cols/2). Circular convolution on a padded grid of
// (sensor + kernel) per axis, with the sensor window at `offset`, reproduces
// linear convolution of the sensor-sized field without wrap-around.
struct ConvGeometry {
  std::size_t sensor_rows, sensor_cols;
  std::size_t padded_rows, padded_cols;
  std::size_t offset_row, offset_col;

  static ConvGeometry for_psf(const PointSpreadFunction& psf) {
    const std::size_t h = psf.kernel.rows(), w = psf.kernel.cols();
    return {h, w, 2 * h, 2 * w, h / 2, w / 2};
  }

  // Smallest grid on which circular convolution of a field supported on `roi`
  // matches the linear one over the sensor window. Falls back to for_psf when
  // the support sits too far off centre.
  static ConvGeometry for_support(const PointSpreadFunction& psf, const Roi& roi);

  Matrix pad(const Matrix& sensor_field) const {
    return embed(sensor_field, padded_rows, padded_cols, offset_row, offset_col);
  }
  Matrix crop(const Matrix& padded) const {
    return lenslessmic::crop(padded, offset_row, offset_col, sensor_rows, sensor_cols);
  }
};

// Kernel circularly shifted so its centre lands on the origin of the padded grid.
inline Matrix centered_kernel(const PointSpreadFunction& psf, const ConvGeometry& geo) {
  const Matrix& k = psf.kernel;
  const std::size_t cr = k.rows() / 2, cc = k.cols() / 2;
  Matrix out(geo.padded_rows, geo.padded_cols);
  for (std::size_t r = 0; r < k.rows(); ++r) {
    const std::size_t pr = (r + geo.padded_rows - cr) % geo.padded_rows;
    for (std::size_t c = 0; c < k.cols(); ++c) {
      const std::size_t pc = (c + geo.padded_cols - cc) % geo.padded_cols;
      out(pr, pc) = k(r, c);
    }
  }
  return out;
}

inline ConvGeometry ConvGeometry::for_support(const PointSpreadFunction& psf, const Roi& roi) {
  ConvGeometry g = for_psf(psf);
  const std::size_t h = psf.kernel.rows(), w = psf.kernel.cols(), cr = h / 2, cc = w / 2;
  require(roi.row + roi.height <= h && roi.col + roi.width <= w, "support lies outside the sensor window");
  // Put the support's first row/col at the kernel centre so the output spans [0, support + kernel - 1).
  if (roi.row <= cr && cr - roi.row <= roi.height && roi.col <= cc && cc - roi.col <= roi.width) {
    g.padded_rows = roi.height + h;
    g.padded_cols = roi.width + w;
    g.offset_row = cr - roi.row;
    g.offset_col = cc - roi.col;
  }
  return g;
}

// Where a scene of the given size lands on the sensor: centred.
inline Roi scene_roi(std::size_t sensor_rows, std::size_t sensor_cols, std::size_t scene_rows,
                     std::size_t scene_cols) {
  require(scene_rows <= sensor_rows && scene_cols <= sensor_cols, "scene does not fit the sensor field of view");
  return {(sensor_rows - scene_rows) / 2, (sensor_cols - scene_cols) / 2, scene_rows, scene_cols};
}

// y = crop(conv(pad(x), psf)) + n, the scene centred in the sensor field.
// With snr_db set, n is i.i.d. Gaussian with variance ||Hx||^2 / (pixels * 10^(snr/10)).
inline Matrix forward_capture(const Matrix& scene, const PointSpreadFunction& psf, std::optional<double> snr_db,
                              std::uint64_t noise_seed) {
  require(all_finite(scene), "scene contains non-finite values");
  require(!psf.kernel.empty(), "empty PSF");
  const ConvGeometry geo = ConvGeometry::for_psf(psf);
  const Roi roi = scene_roi(geo.sensor_rows, geo.sensor_cols, scene.rows(), scene.cols());
  const Matrix field = embed(scene, geo.sensor_rows, geo.sensor_cols, roi.row, roi.col);

  Fft2 fft(geo.padded_rows, geo.padded_cols);
  const Spectrum k = fft.forward(centered_kernel(psf, geo));
  Spectrum x = fft.forward(geo.pad(field));
  for (std::size_t i = 0; i < x.size(); ++i) x[i] *= k[i];
  Matrix y = geo.crop(fft.inverse(x));

  if (snr_db) {
    require(std::isfinite(*snr_db), "snr_db must be finite");
    const double signal_power = squared_norm(y) / static_cast<double>(y.size());
    const double sigma = std::sqrt(signal_power / std::pow(10.0, *snr_db / 10.0));
    Rng rng(derive_seed(noise_seed, "capture_noise"));
    for (double& v : y.values()) v += sigma * rng.normal();
  }
  return y;
}

inline Matrix upsample_superpixel(const Matrix& frame, std::size_t u) {
  require(u >= 1, "upsampling factor must be >= 1");
  Matrix out(frame.rows() * u, frame.cols() * u);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) = frame(r / u, c / u);
  return out;
}

inline Matrix pool_superpixels(const Matrix& recovered, std::size_t r) {
  require(r >= 1, "pool size must be >= 1");
  require(recovered.rows() % r == 0 && recovered.cols() % r == 0, "image dims not divisible by pool size");
  Matrix out(recovered.rows() / r, recovered.cols() / r);
  const double inv = 1.0 / static_cast<double>(r * r);
  for (std::size_t i = 0; i < recovered.rows(); ++i)
    for (std::size_t j = 0; j < recovered.cols(); ++j) out(i / r, j / r) += recovered(i, j);
  for (double& v : out.values()) v *= inv;
  return out;
}

// Frame k goes to tile (k / g, k % g).
inline Matrix tile_group(const std::vector<Matrix>& frames, std::size_t g) {
  require(g >= 1, "group size must be >= 1");
  require(frames.size() == g * g, "tile_group needs exactly g^2 frames");
  const std::size_t h = frames.front().rows(), w = frames.front().cols();
  for (const auto& f : frames) require(f.rows() == h && f.cols() == w, "frames in a group must share a shape");
  Matrix out(g * h, g * w);
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const std::size_t r0 = (k / g) * h, c0 = (k % g) * w;
    for (std::size_t r = 0; r < h; ++r)
      std::copy(frames[k].row(r).begin(), frames[k].row(r).end(),
                out.row(r0 + r).begin() + static_cast<std::ptrdiff_t>(c0));
  }
  return out;
}

inline std::vector<Matrix> untile_group(const Matrix& tiled, std::size_t g) {
  require(g >= 1, "group size must be >= 1");
  require(tiled.rows() % g == 0 && tiled.cols() % g == 0, "tiled dims not divisible by group size");
  const std::size_t h = tiled.rows() / g, w = tiled.cols() / g;
  std::vector<Matrix> frames;
  frames.reserve(g * g);
  for (std::size_t k = 0; k < g * g; ++k) frames.push_back(crop(tiled, (k / g) * h, (k % g) * w, h, w));
  return frames;
}

// Bilinear resize with half-pixel centres (identity when sizes match).
inline Matrix resize_bilinear(const Matrix& in, std::size_t rows, std::size_t cols) {
  require(!in.empty() && rows > 0 && cols > 0, "invalid resize");
  if (in.rows() == rows && in.cols() == cols) return in;
  Matrix out(rows, cols);
  const double sr = static_cast<double>(in.rows()) / rows, sc = static_cast<double>(in.cols()) / cols;
  const auto last_r = static_cast<double>(in.rows() - 1), last_c = static_cast<double>(in.cols() - 1);
  for (std::size_t r = 0; r < rows; ++r) {
    const double y = std::clamp((r + 0.5) * sr - 0.5, 0.0, last_r);
    const auto y0 = static_cast<std::size_t>(y);
    const std::size_t y1 = std::min(y0 + 1, in.rows() - 1);
    const double fy = y - y0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = std::clamp((c + 0.5) * sc - 0.5, 0.0, last_c);
      const auto x0 = static_cast<std::size_t>(x);
      const std::size_t x1 = std::min(x0 + 1, in.cols() - 1);
      const double fx = x - x0;
      out(r, c) = (1 - fy) * ((1 - fx) * in(y0, x0) + fx * in(y0, x1)) + fy * ((1 - fx) * in(y1, x0) + fx * in(y1, x1));
    }
  }
  return out;
}

inline Matrix extract_roi(const Matrix& estimate, const Roi& roi, std::size_t out_side) {
  require(roi.height > 0 && roi.width > 0 && roi.row + roi.height <= estimate.rows() &&
              roi.col + roi.width <= estimate.cols(),
          "region of interest out of bounds");
  require(out_side > 0, "output side must be positive");
  return resize_bilinear(crop(estimate, roi.row, roi.col, roi.height, roi.width), out_side, out_side);
}

}  // namespace lenslessmic::optics
