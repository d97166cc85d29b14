#pragma once

// Key-space arithmetic and brute-force attack sweeps: decrypt with masks that
// agree with the true one on a fraction W of pixels and score the result.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "lenslessmic/analysis.hpp"
#include "lenslessmic/error.hpp"
#include "lenslessmic/optics.hpp"
#include "lenslessmic/parallel.hpp"
#include "lenslessmic/pipeline.hpp"
#include "lenslessmic/random.hpp"

namespace lenslessmic::security {

// Bits of search space when an attacker must guess W*N pixels of b levels.
inline double keyspace_bits(std::size_t n, int b, double w) {
  require(n >= 1, "keyspace needs N >= 1");
  require(b >= 2, "keyspace needs b >= 2");
  require(w > 0.0 && w <= 1.0, "keyspace needs 0 < W <= 1");
  return w * static_cast<double>(n) * std::log2(static_cast<double>(b));
}

// Smallest W on a grid of `step_percent` percent whose key space reaches `bits`.
inline int min_percent_for_bits(double bits, std::size_t n, int b, int step_percent = 1) {
  require(bits > 0.0 && step_percent >= 1, "need positive bits and grid step");
  const double full = keyspace_bits(n, b, 1.0);
  require(bits <= full, "requested key size exceeds the full mask");
  const double raw_percent = 100.0 * bits / full;
  int p = static_cast<int>(std::ceil(raw_percent / step_percent)) * step_percent;
  // ceil can land one step high when raw_percent is an exact grid point plus rounding noise
  if (p - step_percent > 0 && keyspace_bits(n, b, (p - step_percent) / 100.0) >= bits) p -= step_percent;
  return std::min(p, 100);
}

// log2 of the number of distinct RVQ outputs over T_E frames.
inline double rvq_space_bits(std::size_t c, std::size_t m, std::size_t frames) {
  require(c >= 1 && m >= 1 && frames >= 1, "rvq_space_bits needs positive arguments");
  return static_cast<double>(frames) * static_cast<double>(c) * std::log2(static_cast<double>(m));
}

inline const std::vector<double>& default_w_grid() {
  static const std::vector<double> grid{0.01, 0.02, 0.05, 0.07, 0.10, 0.20, 0.30, 0.50, 0.70, 0.90, 1.00};
  return grid;
}

struct AttackRow {
  double w = 0.0;
  std::size_t seed = 0;          // perturbation index within this W
  std::size_t utterance_id = 0;
  double qm1 = std::numeric_limits<double>::quiet_NaN();
  double qm2 = std::numeric_limits<double>::quiet_NaN();
  double si_sdr = std::numeric_limits<double>::quiet_NaN();
  double mel_dist = std::numeric_limits<double>::quiet_NaN();
  bool flagged = false;           // a capture diverged or decryption failed
};

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
  std::size_t n = 0;
};

inline Stat summarize(std::span<const double> xs) {
  Stat s;
  for (double x : xs)
    if (std::isfinite(x)) {
      s.mean += x;
      ++s.n;
    }
  if (s.n == 0) return {std::numeric_limits<double>::quiet_NaN(), 0.0, 0};
  s.mean /= static_cast<double>(s.n);
  double ss = 0.0;
  for (double x : xs)
    if (std::isfinite(x)) ss += (x - s.mean) * (x - s.mean);
  s.std = s.n > 1 ? std::sqrt(ss / static_cast<double>(s.n - 1)) : 0.0;
  return s;
}

struct AttackPoint {
  double w = 0.0;
  Stat qm1, qm2, si_sdr, mel_dist;
};

struct AttackCurve {
  std::vector<AttackPoint> points;  // one per W, increasing
  std::size_t seeds = 0;
  std::vector<AttackRow> rows;
};

inline void validate_grid(std::span<const double> grid) {
  require(!grid.empty(), "W grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    require(grid[i] > 0.0 && grid[i] <= 1.0, "W grid values must lie in (0, 1]");
    require(i == 0 || grid[i] > grid[i - 1], "W grid must be strictly increasing");
  }
}

inline AttackCurve aggregate(std::vector<AttackRow> rows, std::span<const double> grid, std::size_t seeds) {
  AttackCurve curve;
  curve.seeds = seeds;
  for (double w : grid) {
    std::vector<double> a, b, c, d;
    for (const auto& r : rows)
      if (r.w == w) {
        a.push_back(r.qm1);
        b.push_back(r.qm2);
        c.push_back(r.si_sdr);
        d.push_back(r.mel_dist);
      }
    curve.points.push_back({w, summarize(a), summarize(b), summarize(c), summarize(d)});
  }
  curve.rows = std::move(rows);
  return curve;
}

// Seed that drives the perturbation for (W index, seed index).
inline std::uint64_t perturbation_seed(std::uint64_t master, std::size_t w_index, std::size_t seed_index) {
  return derive_seed(master, "bfa_perturb", (static_cast<std::uint64_t>(w_index) << 32) | seed_index);
}

// Noise seed for encrypting utterance u in an experiment.
inline std::uint64_t capture_seed(std::uint64_t master, std::size_t utterance) {
  return derive_seed(master, "capture", utterance);
}

inline AttackRow score_attack(const pipeline::CipherContainer& ct, const pipeline::CodecReference& ref,
                              const optics::MaskPattern& guess, const codec::Codebooks& books) {
  AttackRow row;
  try {
    const auto dec = pipeline::decrypt(ct, guess, books);
    row.flagged = std::any_of(dec.diagnostics.diverged.begin(), dec.diagnostics.diverged.end(), [](bool b) { return b; });
    row.qm1 = analysis::code_match(ref.quantized.codes, dec.codes, 1);
    row.qm2 = analysis::code_match(ref.quantized.codes, dec.codes, std::min<std::size_t>(2, books.count));
    const auto est = analysis::fit_length(dec.wave, ref.wave.size());
    const auto m = analysis::audio_metrics(ref.wave, est, ct.config.sample_rate);
    row.si_sdr = m.si_sdr;
    row.mel_dist = m.mel_dist;
  } catch (const Error&) {
    row.flagged = true;
  }
  return row;
}

// Brute-force attack sweep. Every (W, seed) pair draws one perturbed mask that
// is tried on every utterance. Rows come back sorted by (W, seed, utterance)
// whatever the thread count.
inline AttackCurve bfa_sweep(std::span<const std::vector<double>> waves, const optics::MaskPattern& mask,
                             const codec::Codebooks& books, const pipeline::PipelineConfig& cfg,
                             std::span<const double> grid, std::size_t seeds_per_w, std::uint64_t master_seed,
                             unsigned threads = 1) {
  validate_grid(grid);
  require(seeds_per_w >= 1, "need at least one seed per W");
  require(!waves.empty(), "attack sweep needs at least one utterance");
  cfg.validate();

  std::vector<pipeline::CipherContainer> cts(waves.size());
  std::vector<pipeline::CodecReference> refs(waves.size());
  parallel_for(waves.size(), threads, [&](std::size_t u) {
    cts[u] = pipeline::encrypt(waves[u], mask, books, cfg, capture_seed(master_seed, u));
    refs[u] = pipeline::codec_reference(waves[u], books, cfg);
  });

  const std::size_t per_w = seeds_per_w * waves.size();
  std::vector<AttackRow> rows(grid.size() * per_w);
  parallel_for(rows.size(), threads, [&](std::size_t cell) {
    const std::size_t wi = cell / per_w, s = (cell % per_w) / waves.size(), u = cell % waves.size();
    const auto guess = optics::perturb_mask(mask, grid[wi], perturbation_seed(master_seed, wi, s));
    AttackRow row = score_attack(cts[u], refs[u], guess, books);
    row.w = grid[wi];
    row.seed = s;
    row.utterance_id = u;
    rows[cell] = row;
  });
  return aggregate(std::move(rows), grid, seeds_per_w);
}

inline std::string format_number(double v, const char* fmt = "%.6f") {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

inline std::string attack_csv(std::span<const AttackRow> rows) {
  std::string out = "W,seed,utterance_id,qm1,qm2,si_sdr,mel_dist,flagged\n";
  for (const auto& r : rows) {
    out += format_number(r.w, "%.4f") + ',' + std::to_string(r.seed) + ',' + std::to_string(r.utterance_id) + ',' +
           format_number(r.qm1) + ',' + format_number(r.qm2) + ',' + format_number(r.si_sdr) + ',' +
           format_number(r.mel_dist) + ',' + (r.flagged ? "1" : "0") + '\n';
  }
  return out;
}

// Kendall rank correlation with the tau-b tie correction.
inline double kendall_tau_b(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, "kendall_tau_b needs two equal series of length >= 2");
  long long concordant = 0, discordant = 0, tie_x = 0, tie_y = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double dx = x[j] - x[i], dy = y[j] - y[i];
      if (dx == 0.0 && dy == 0.0) continue;
      if (dx == 0.0) ++tie_x;
      else if (dy == 0.0) ++tie_y;
      else if ((dx > 0) == (dy > 0)) ++concordant;
      else ++discordant;
    }
  const double n1 = static_cast<double>(concordant + discordant + tie_x);
  const double n2 = static_cast<double>(concordant + discordant + tie_y);
  if (n1 == 0.0 || n2 == 0.0) return 0.0;
  return static_cast<double>(concordant - discordant) / std::sqrt(n1 * n2);
}

}  // namespace lenslessmic::security
