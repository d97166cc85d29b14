#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "lenslessmic/random.hpp"

namespace lenslessmic::synth {

struct UtteranceSpec {
  double min_seconds = 1.0;
  double max_seconds = 3.0;
  std::uint32_t sample_rate = 16000;
};

// Synthetic test signal: a sequence of 100-300 ms notes, each a multi-sine
// with its own random 100-1000 Hz fundamental and 1-4 harmonics, crossfaded
// over 10 ms; plus a linear chirp across the whole signal and
// amplitude-modulated noise. Peak normalized to 0.8.
inline std::vector<double> utterance(std::uint64_t seed, const UtteranceSpec& spec = {}) {
  Rng rng(derive_seed(seed, "utterance"));
  const double fs = spec.sample_rate;
  const double seconds = rng.uniform(spec.min_seconds, spec.max_seconds);
  const auto n = static_cast<std::size_t>(std::llround(seconds * fs));
  std::vector<double> wave(n, 0.0);

  const auto fade = static_cast<std::size_t>(0.01 * fs);
  for (std::size_t start = 0; start < n;) {
    const auto len = static_cast<std::size_t>(rng.uniform(0.1, 0.3) * fs);
    const double f0 = rng.uniform(100.0, 1000.0);
    const int harmonics = 1 + static_cast<int>(rng.below(4));
    std::vector<double> amp(harmonics), phase(harmonics);
    for (int h = 0; h < harmonics; ++h) {
      amp[h] = rng.uniform(0.3, 1.0) / (h + 1);
      phase[h] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    // The note rings on for `fade` samples past its end, under the next note's fade-in.
    const std::size_t stop = std::min(n, start + len + fade);
    for (std::size_t i = start; i < stop; ++i) {
      const double t = static_cast<double>(i) / fs;
      const std::size_t k = i - start;
      double gain = 1.0;
      if (start > 0 && k < fade) gain = static_cast<double>(k) / fade;
      if (k >= len) gain = 1.0 - static_cast<double>(k - len) / fade;
      double v = 0.0;
      for (int h = 0; h < harmonics; ++h) v += amp[h] * std::sin(2.0 * std::numbers::pi * f0 * (h + 1) * t + phase[h]);
      wave[i] += gain * v;
    }
    start += len;
  }

  const double chirp_f0 = rng.uniform(100.0, 1000.0), chirp_f1 = rng.uniform(200.0, 3000.0);
  const double chirp_amp = rng.uniform(0.1, 0.5);
  const double am_rate = rng.uniform(1.0, 8.0), noise_amp = rng.uniform(0.02, 0.15);
  const double sweep = (chirp_f1 - chirp_f0) / seconds;
  double smooth = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    wave[i] += chirp_amp * std::sin(2.0 * std::numbers::pi * (chirp_f0 * t + 0.5 * sweep * t * t));
    smooth = 0.7 * smooth + 0.3 * rng.normal();
    wave[i] += noise_amp * (0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * am_rate * t)) * smooth;
  }
  double peak = 0.0;
  for (double v : wave) peak = std::max(peak, std::abs(v));
  if (peak > 0.0)
    for (double& v : wave) v *= 0.8 / peak;
  return wave;
}

}  // namespace lenslessmic::synth
