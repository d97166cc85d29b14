#pragma once

// Self-contained audio codec: a framed orthonormal analysis transform,
// residual vector quantization (RVQ) of its latents, and the latent <-> video
// mapping used to put latents on a screen.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "lenslessmic/error.hpp"
#include "lenslessmic/matrix.hpp"
#include "lenslessmic/random.hpp"

namespace lenslessmic::codec {

inline bool is_perfect_square(std::size_t s) {
  const auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(s))));
  return r * r == s;
}

inline std::size_t square_side(std::size_t s) {
  require(is_perfect_square(s), "latent size must be a perfect square");
  return static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(s))));
}

// T_E x S latents; row t is the latent of audio frame t.
struct LatentSequence {
  Matrix data;
  std::size_t frame_len = 0;
  std::uint32_t sample_rate = 16000;
  std::uint32_t transform_seed = 0;

  std::size_t frames() const noexcept { return data.rows(); }
  std::size_t latent_size() const noexcept { return data.cols(); }
};

// Analysis matrix with S orthonormal rows of length frame_len: the first S
// DCT-II basis vectors (the band below S/frame_len of Nyquist), mixed by a
// seeded random S x S rotation. Rows are orthonormal, latents look noise-like,
// and band-limited audio survives the projection.
inline Matrix analysis_matrix(std::size_t frame_len, std::size_t latent_size, std::uint32_t seed) {
  require(latent_size >= 1 && frame_len >= latent_size, "analysis transform needs frame_len >= S >= 1");
  const std::size_t n = frame_len, s = latent_size;
  Matrix dct(s, n);
  for (std::size_t k = 0; k < s; ++k) {
    const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i)
      dct(k, i) = scale * std::cos(std::numbers::pi * (static_cast<double>(i) + 0.5) * static_cast<double>(k) / n);
  }
  // Random rotation via modified Gram-Schmidt (two passes) on Gaussian rows.
  Rng rng(derive_seed(seed, "analysis_rotation", (static_cast<std::uint64_t>(n) << 32) | s));
  Matrix q(s, s);
  for (double& v : q.values()) v = rng.normal();
  for (std::size_t i = 0; i < s; ++i) {
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t j = 0; j < i; ++j) {
        double d = 0.0;
        for (std::size_t c = 0; c < s; ++c) d += q(i, c) * q(j, c);
        for (std::size_t c = 0; c < s; ++c) q(i, c) -= d * q(j, c);
      }
    double nrm = 0.0;
    for (std::size_t c = 0; c < s; ++c) nrm += q(i, c) * q(i, c);
    nrm = std::sqrt(nrm);
    for (std::size_t c = 0; c < s; ++c) q(i, c) /= nrm;
  }
  Matrix a(s, n);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t k = 0; k < s; ++k) {
      const double w = q(i, k);
      for (std::size_t c = 0; c < n; ++c) a(i, c) += w * dct(k, c);
    }
  return a;
}

inline LatentSequence encode_audio(std::span<const double> wave, std::size_t frame_len, std::size_t latent_size,
                                   std::uint32_t transform_seed, std::uint32_t sample_rate = 16000) {
  require(!wave.empty(), "cannot encode empty audio");
  require(is_perfect_square(latent_size), "latent size must be a perfect square");
  const Matrix a = analysis_matrix(frame_len, latent_size, transform_seed);
  const std::size_t frames = (wave.size() + frame_len - 1) / frame_len;
  LatentSequence out{Matrix(frames, latent_size), frame_len, sample_rate, transform_seed};
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t start = t * frame_len;
    const std::size_t len = std::min(frame_len, wave.size() - start);
    for (std::size_t k = 0; k < latent_size; ++k) {
      double acc = 0.0;
      for (std::size_t i = 0; i < len; ++i) acc += a(k, i) * wave[start + i];
      out.data(t, k) = acc;
    }
  }
  return out;
}

// Synthesis by the transpose of the analysis matrix, frames concatenated.
inline std::vector<double> decode_audio(const LatentSequence& latents) {
  require(latents.frame_len >= latents.latent_size() && latents.latent_size() > 0,
          "latent sequence does not match a codec configuration");
  const Matrix a = analysis_matrix(latents.frame_len, latents.latent_size(), latents.transform_seed);
  std::vector<double> wave(latents.frames() * latents.frame_len, 0.0);
  for (std::size_t t = 0; t < latents.frames(); ++t)
    for (std::size_t k = 0; k < latents.latent_size(); ++k) {
      const double e = latents.data(t, k);
      if (e == 0.0) continue;
      double* out = wave.data() + t * latents.frame_len;
      for (std::size_t i = 0; i < latents.frame_len; ++i) out[i] += e * a(k, i);
    }
  return wave;
}

// C books of M codewords of dimension S.
struct Codebooks {
  std::size_t count = 0;   // C
  std::size_t size = 0;    // M
  std::size_t dim = 0;     // S
  std::vector<double> data;
  std::uint64_t train_seed = 0;

  std::span<const double> codeword(std::size_t book, std::size_t index) const {
    return {data.data() + (book * size + index) * dim, dim};
  }
  std::span<double> codeword(std::size_t book, std::size_t index) {
    return {data.data() + (book * size + index) * dim, dim};
  }

  bool operator==(const Codebooks&) const = default;
};

// T_E x C codes.
struct CodeSequence {
  std::size_t frames = 0;
  std::size_t books = 0;
  std::vector<std::uint32_t> codes;

  std::uint32_t operator()(std::size_t t, std::size_t c) const { return codes[t * books + c]; }
  std::uint32_t& operator()(std::size_t t, std::size_t c) { return codes[t * books + c]; }

  bool operator==(const CodeSequence&) const = default;
};

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i] - b[i];
    d += x * x;
  }
  return d;
}

inline void assign(const std::vector<double>& points, std::size_t n, std::size_t dim,
                   const std::vector<double>& centroids, std::size_t k, std::vector<std::size_t>& labels,
                   std::vector<double>& dist) {
  for (std::size_t p = 0; p < n; ++p) {
    std::span<const double> x(points.data() + p * dim, dim);
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const double d = squared_distance(x, {centroids.data() + j * dim, dim});
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    labels[p] = arg;
    dist[p] = best;
  }
}

// Lloyd k-means with k-means++ seeding. Empty clusters take the point farthest
// from its current centroid. Returns k x dim centroids.
inline std::vector<double> kmeans(const std::vector<double>& points, std::size_t n, std::size_t dim, std::size_t k,
                                  int iterations, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> centroids(k * dim);
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::size_t first = static_cast<std::size_t>(rng.below(n));
  std::copy_n(points.begin() + static_cast<std::ptrdiff_t>(first * dim), dim, centroids.begin());
  for (std::size_t j = 1; j < k; ++j) {
    std::span<const double> prev(centroids.data() + (j - 1) * dim, dim);
    double total = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      dist[p] = std::min(dist[p], squared_distance({points.data() + p * dim, dim}, prev));
      total += dist[p];
    }
    if (!(total > 0.0))
      throw Error(ErrorKind::invalid_argument, "corpus has fewer distinct residual vectors than codebook entries");
    double target = rng.uniform() * total;
    std::size_t pick = n - 1;
    for (std::size_t p = 0; p < n; ++p) {
      target -= dist[p];
      if (target < 0.0 && dist[p] > 0.0) {
        pick = p;
        break;
      }
    }
    while (dist[pick] == 0.0) --pick;
    std::copy_n(points.begin() + static_cast<std::ptrdiff_t>(pick * dim), dim,
                centroids.begin() + static_cast<std::ptrdiff_t>(j * dim));
  }

  std::vector<std::size_t> labels(n);
  std::vector<double> sums(k * dim);
  std::vector<std::size_t> counts(k);
  for (int it = 0; it < iterations; ++it) {
    assign(points, n, dim, centroids, k, labels, dist);
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t p = 0; p < n; ++p) {
      ++counts[labels[p]];
      for (std::size_t d = 0; d < dim; ++d) sums[labels[p] * dim + d] += points[p * dim + d];
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] == 0) {
        const auto far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
        std::copy_n(points.begin() + static_cast<std::ptrdiff_t>(far * dim), dim,
                    centroids.begin() + static_cast<std::ptrdiff_t>(j * dim));
        dist[far] = 0.0;
        continue;
      }
      for (std::size_t d = 0; d < dim; ++d) centroids[j * dim + d] = sums[j * dim + d] / static_cast<double>(counts[j]);
    }
  }
  return centroids;
}

}  // namespace detail

inline double min_pairwise_distance(const Codebooks& books, std::size_t book) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < books.size; ++i)
    for (std::size_t j = i + 1; j < books.size; ++j)
      best = std::min(best, std::sqrt(detail::squared_distance(books.codeword(book, i), books.codeword(book, j))));
  return best;
}

// Residual k-means: book c is fit (k-means++, 50 Lloyd iterations) on the
// residuals left after the greedy quantization with books 0..c-1.
inline Codebooks train_codebooks(const std::vector<LatentSequence>& corpus, std::size_t books, std::size_t entries,
                                 std::uint64_t seed, int iterations = 50) {
  require(books >= 1 && entries >= 1, "codebook count and size must be positive");
  require(!corpus.empty(), "empty training corpus");
  const std::size_t dim = corpus.front().latent_size();
  std::size_t n = 0;
  for (const auto& seq : corpus) {
    require(seq.latent_size() == dim, "training latents have inconsistent dimensions");
    n += seq.frames();
  }
  require(n >= 10 * entries, "training corpus needs at least 10*M vectors");
  std::vector<double> residual;
  residual.reserve(n * dim);
  for (const auto& seq : corpus) residual.insert(residual.end(), seq.data.values().begin(), seq.data.values().end());

  Codebooks out{books, entries, dim, std::vector<double>(books * entries * dim), seed};
  std::vector<std::size_t> labels(n);
  std::vector<double> dist(n);
  for (std::size_t c = 0; c < books; ++c) {
    auto centroids = detail::kmeans(residual, n, dim, entries, iterations, derive_seed(seed, "rvq_book", c));
    // stored as float32, so later books are fit against the stored codewords
    for (double& v : centroids) v = static_cast<double>(static_cast<float>(v));
    std::copy(centroids.begin(), centroids.end(), out.data.begin() + static_cast<std::ptrdiff_t>(c * entries * dim));
    require(min_pairwise_distance(out, c) > 0.0, "training produced duplicate codewords");
    detail::assign(residual, n, dim, centroids, entries, labels, dist);
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t d = 0; d < dim; ++d) residual[p * dim + d] -= centroids[labels[p] * dim + d];
  }
  return out;
}

// Nearest codeword to `x` in a book; ties go to the lowest index.
inline std::size_t nearest_codeword(const Codebooks& books, std::size_t book, std::span<const double> x) {
  double best = std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (std::size_t m = 0; m < books.size; ++m) {
    const double d = detail::squared_distance(x, books.codeword(book, m));
    if (d < best) {
      best = d;
      arg = m;
    }
  }
  return arg;
}

struct Quantized {
  CodeSequence codes;
  Matrix dequantized;  // D: sum of the selected codewords
};

// Greedy RVQ: per frame, per book, the nearest codeword to the running residual.
inline Quantized rvq_quantize(const Matrix& latents, const Codebooks& books) {
  require(latents.cols() == books.dim, "latent and codebook dimensions differ");
  Quantized q{{latents.rows(), books.count, std::vector<std::uint32_t>(latents.rows() * books.count)},
              Matrix(latents.rows(), latents.cols())};
  std::vector<double> residual(books.dim);
  for (std::size_t t = 0; t < latents.rows(); ++t) {
    std::copy(latents.row(t).begin(), latents.row(t).end(), residual.begin());
    auto d = q.dequantized.row(t);
    for (std::size_t c = 0; c < books.count; ++c) {
      const std::size_t m = nearest_codeword(books, c, residual);
      q.codes(t, c) = static_cast<std::uint32_t>(m);
      const auto cw = books.codeword(c, m);
      for (std::size_t i = 0; i < books.dim; ++i) {
        residual[i] -= cw[i];
        d[i] += cw[i];
      }
    }
  }
  return q;
}

// Mean squared residual norm per latent vector: entry 0 before any book, entry
// c after greedy quantization with books 0..c-1.
inline std::vector<double> residual_energy_by_stage(const std::vector<LatentSequence>& corpus, const Codebooks& books) {
  std::vector<double> energy(books.count + 1, 0.0);
  std::size_t n = 0;
  std::vector<double> residual(books.dim);
  const auto norm2 = [&] {
    double a = 0.0;
    for (double v : residual) a += v * v;
    return a;
  };
  for (const auto& seq : corpus) {
    require(seq.latent_size() == books.dim, "latent and codebook dimensions differ");
    for (std::size_t t = 0; t < seq.frames(); ++t) {
      std::copy(seq.data.row(t).begin(), seq.data.row(t).end(), residual.begin());
      energy[0] += norm2();
      for (std::size_t c = 0; c < books.count; ++c) {
        const auto cw = books.codeword(c, nearest_codeword(books, c, residual));
        for (std::size_t i = 0; i < books.dim; ++i) residual[i] -= cw[i];
        energy[c + 1] += norm2();
      }
      ++n;
    }
  }
  if (n > 0)
    for (double& e : energy) e /= static_cast<double>(n);
  return energy;
}

inline Matrix rvq_dequantize(const CodeSequence& codes, const Codebooks& books) {
  require(codes.books <= books.count, "code sequence uses more books than available");
  Matrix out(codes.frames, books.dim);
  for (std::size_t t = 0; t < codes.frames; ++t) {
    auto row = out.row(t);
    for (std::size_t c = 0; c < codes.books; ++c) {
      const auto m = codes(t, c);
      require(m < books.size, "code index out of range");
      const auto cw = books.codeword(c, m);
      for (std::size_t i = 0; i < books.dim; ++i) row[i] += cw[i];
    }
  }
  return out;
}

enum class NormalizationMode { per_frame, fixed };

// Min/max used to map latent blocks into [0, 1]. One pair per block of
// `block` consecutive frames (1 unless frames are grouped on one capture).
struct NormalizationMeta {
  NormalizationMode mode = NormalizationMode::per_frame;
  std::size_t block = 1;
  std::vector<double> mins;
  std::vector<double> maxs;
  std::vector<bool> constant;  // block was constant; stored as (v, v + 1e-6)
};

inline constexpr double constant_frame_epsilon = 1e-6;

struct LatentVideo {
  std::vector<Matrix> frames;  // sqrt(S) x sqrt(S), values in [0, 1]
  NormalizationMeta meta;
};

// Frames normalized with an existing block layout of min/max pairs, clamped to [0, 1].
inline std::vector<Matrix> normalize_frames(const Matrix& latents, const NormalizationMeta& meta) {
  const std::size_t side = square_side(latents.cols());
  require(meta.block >= 1 && meta.mins.size() == (latents.rows() + meta.block - 1) / meta.block &&
              meta.maxs.size() == meta.mins.size(),
          "normalization metadata does not match the latent count");
  std::vector<Matrix> frames;
  frames.reserve(latents.rows());
  for (std::size_t t = 0; t < latents.rows(); ++t) {
    const double lo = meta.mins[t / meta.block], hi = meta.maxs[t / meta.block];
    require(hi > lo, "normalization range must satisfy max > min");
    Matrix f(side, side);
    for (std::size_t k = 0; k < latents.cols(); ++k) f.values()[k] = std::clamp((latents(t, k) - lo) / (hi - lo), 0.0, 1.0);
    frames.push_back(std::move(f));
  }
  return frames;
}

// Row-major reshape of each latent into a sqrt(S) x sqrt(S) frame, min-max
// normalized per block (per_frame) or by a fixed pair with clamping (fixed).
inline LatentVideo latent_to_video(const Matrix& latents, NormalizationMode mode,
                                   std::optional<std::pair<double, double>> fixed_minmax = std::nullopt,
                                   std::size_t block = 1) {
  require(block >= 1, "normalization block must be >= 1");
  if (mode == NormalizationMode::fixed)
    require(fixed_minmax.has_value() && fixed_minmax->second > fixed_minmax->first,
            "fixed normalization needs a (min, max) pair with max > min");
  LatentVideo v;
  v.meta.mode = mode;
  v.meta.block = block;
  const std::size_t blocks = (latents.rows() + block - 1) / block;
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t t0 = b * block, t1 = std::min(latents.rows(), t0 + block);
    double lo, hi;
    bool flat = false;
    if (mode == NormalizationMode::fixed) {
      lo = fixed_minmax->first;
      hi = fixed_minmax->second;
    } else {
      lo = std::numeric_limits<double>::infinity();
      hi = -lo;
      for (std::size_t t = t0; t < t1; ++t)
        for (double x : latents.row(t)) {
          lo = std::min(lo, x);
          hi = std::max(hi, x);
        }
      if (!(hi > lo)) {
        hi = lo + constant_frame_epsilon;
        flat = true;
      }
    }
    v.meta.mins.push_back(lo);
    v.meta.maxs.push_back(hi);
    v.meta.constant.push_back(flat);
  }
  v.frames = normalize_frames(latents, v.meta);
  return v;
}

inline Matrix video_to_latent(const std::vector<Matrix>& frames, const NormalizationMeta& meta) {
  require(meta.block >= 1 && meta.mins.size() == meta.maxs.size(), "malformed normalization metadata");
  require(meta.mins.size() == (frames.size() + meta.block - 1) / meta.block, "frame count does not match metadata");
  if (frames.empty()) return {};
  const std::size_t side = frames.front().rows();
  Matrix out(frames.size(), side * side);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    require(frames[t].rows() == side && frames[t].cols() == side, "video frames must be square and share a shape");
    const double lo = meta.mins[t / meta.block], hi = meta.maxs[t / meta.block];
    for (std::size_t k = 0; k < side * side; ++k) out(t, k) = lo + frames[t].values()[k] * (hi - lo);
  }
  return out;
}

}  // namespace lenslessmic::codec
