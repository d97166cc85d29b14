#pragma once

// End-to-end encryption, decryption and authentication: codec latents are
// normalized into frames, grouped, shown as super-pixels, captured through
// the mask PSF, and recovered with a solver.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lenslessmic/analysis.hpp"
#include "lenslessmic/codec.hpp"
#include "lenslessmic/error.hpp"
#include "lenslessmic/optics.hpp"
#include "lenslessmic/parallel.hpp"
#include "lenslessmic/random.hpp"
#include "lenslessmic/solvers.hpp"

namespace lenslessmic::pipeline {

enum class PsfMode { mask, delta };

struct PipelineConfig {
  // codec
  std::size_t latent_size = 64;      // S
  std::size_t codebooks = 4;         // C
  std::size_t codebook_size = 64;    // M
  std::size_t frame_len = 128;
  std::uint32_t sample_rate = 16000;
  std::uint32_t transform_seed = 1;
  // geometry
  std::size_t group = 1;             // g
  std::size_t superpixel = 4;        // r, super-pixel size in the recovered image
  std::size_t upsample = 4;          // u, screen upsampling factor
  std::size_t sensor_rows = 96;
  std::size_t sensor_cols = 96;
  double blur_sigma = 0.0;
  int mask_side = 36;
  int bit_depth = 8;
  PsfMode psf_mode = PsfMode::mask;
  // channel
  std::optional<double> snr_db = 40.0;
  solvers::SolverConfig solver{solvers::SolverKind::admm, 100, 1e-4, 3e-2, 1e-5, 1e-4, 1e-7, true, std::nullopt};
  // Constrain recovery to the screen's footprint on the sensor.
  bool screen_support = true;
  codec::NormalizationMode normalization = codec::NormalizationMode::per_frame;
  double fixed_min = -1.0;
  double fixed_max = 1.0;

  std::size_t frame_side() const { return codec::square_side(latent_size); }
  std::size_t screen_side() const { return group * frame_side() * upsample; }
  std::size_t recovered_side() const { return group * frame_side() * superpixel; }
  std::size_t frames_per_capture() const { return group * group; }

  void validate() const {
    require(codec::is_perfect_square(latent_size) && latent_size > 0, "latent_size must be a positive perfect square");
    require(frame_len >= latent_size, "frame_len must be >= latent_size");
    require(codebooks >= 1 && codebook_size >= 2, "need at least one codebook of two entries");
    require(sample_rate > 0, "sample_rate must be positive");
    require(group >= 1 && superpixel >= 1 && upsample >= 1, "group, superpixel and upsample must be >= 1");
    require(screen_side() <= sensor_rows && screen_side() <= sensor_cols, "screen frame exceeds the sensor field of view");
    require(static_cast<std::size_t>(mask_side) <= std::min(sensor_rows, sensor_cols) && mask_side >= 2,
            "mask side must be in [2, sensor size]");
    require(bit_depth >= 2, "bit_depth must be >= 2");
    require(blur_sigma >= 0.0 && std::isfinite(blur_sigma), "blur_sigma must be finite and >= 0");
    if (snr_db) require(std::isfinite(*snr_db), "snr_db must be finite");
    if (normalization == codec::NormalizationMode::fixed) require(fixed_max > fixed_min, "fixed_max must exceed fixed_min");
    solver.validate();
  }

  bool operator==(const PipelineConfig&) const = default;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
  require(j.is_object(), where + " must be an object", ErrorKind::invalid_argument);
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* allowed : keys) known = known || k == allowed;
    require(known, "unknown key '" + k + "' in " + where);
  }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::invalid_argument, std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline nlohmann::json to_json(const solvers::SolverConfig& s) {
  return {{"kind", solvers::to_string(s.kind)}, {"iters", s.iters}, {"reg_lambda", s.reg_lambda}, {"mu1", s.mu1},
          {"mu2", s.mu2}, {"mu3", s.mu3}, {"tau", s.tau}, {"nonneg", s.nonneg}};
}

inline solvers::SolverConfig solver_from_json(const nlohmann::json& j, solvers::SolverConfig s = {}) {
  detail::reject_unknown(j, {"kind", "iters", "reg_lambda", "mu1", "mu2", "mu3", "tau", "nonneg"}, "solver");
  if (j.contains("kind")) s.kind = solvers::solver_kind_from_string(j.at("kind").get<std::string>());
  detail::read(j, "iters", s.iters);
  detail::read(j, "reg_lambda", s.reg_lambda);
  detail::read(j, "mu1", s.mu1);
  detail::read(j, "mu2", s.mu2);
  detail::read(j, "mu3", s.mu3);
  detail::read(j, "tau", s.tau);
  detail::read(j, "nonneg", s.nonneg);
  return s;
}

inline nlohmann::json to_json(const PipelineConfig& c) {
  nlohmann::json j = {
      {"latent_size", c.latent_size},
      {"codebooks", c.codebooks},
      {"codebook_size", c.codebook_size},
      {"frame_len", c.frame_len},
      {"sample_rate", c.sample_rate},
      {"transform_seed", c.transform_seed},
      {"group", c.group},
      {"superpixel", c.superpixel},
      {"upsample", c.upsample},
      {"sensor_rows", c.sensor_rows},
      {"sensor_cols", c.sensor_cols},
      {"blur_sigma", c.blur_sigma},
      {"mask_side", c.mask_side},
      {"bit_depth", c.bit_depth},
      {"psf", c.psf_mode == PsfMode::delta ? "delta" : "mask"},
      {"snr_db", c.snr_db ? nlohmann::json(*c.snr_db) : nlohmann::json(nullptr)},
      {"solver", to_json(c.solver)},
      {"screen_support", c.screen_support},
      {"normalization", c.normalization == codec::NormalizationMode::fixed ? "fixed" : "per_frame"},
      {"fixed_min", c.fixed_min},
      {"fixed_max", c.fixed_max},
  };
  return j;
}

// Missing keys keep their defaults; unknown keys are rejected.
inline PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig c = {}) {
  detail::reject_unknown(j,
                         {"latent_size", "codebooks", "codebook_size", "frame_len", "sample_rate", "transform_seed",
                          "group", "superpixel", "upsample", "sensor_rows", "sensor_cols", "blur_sigma", "mask_side",
                          "bit_depth", "psf", "snr_db", "solver", "screen_support", "normalization", "fixed_min",
                          "fixed_max"},
                         "pipeline config");
  detail::read(j, "latent_size", c.latent_size);
  detail::read(j, "codebooks", c.codebooks);
  detail::read(j, "codebook_size", c.codebook_size);
  detail::read(j, "frame_len", c.frame_len);
  detail::read(j, "sample_rate", c.sample_rate);
  detail::read(j, "transform_seed", c.transform_seed);
  detail::read(j, "group", c.group);
  detail::read(j, "superpixel", c.superpixel);
  detail::read(j, "upsample", c.upsample);
  detail::read(j, "sensor_rows", c.sensor_rows);
  detail::read(j, "sensor_cols", c.sensor_cols);
  detail::read(j, "blur_sigma", c.blur_sigma);
  detail::read(j, "mask_side", c.mask_side);
  detail::read(j, "bit_depth", c.bit_depth);
  if (j.contains("psf")) {
    const auto p = j.at("psf").get<std::string>();
    require(p == "mask" || p == "delta", "psf must be 'mask' or 'delta'");
    c.psf_mode = p == "delta" ? PsfMode::delta : PsfMode::mask;
  }
  if (j.contains("snr_db")) {
    if (j.at("snr_db").is_null()) c.snr_db.reset();
    else c.snr_db = j.at("snr_db").get<double>();
  }
  if (j.contains("solver")) c.solver = solver_from_json(j.at("solver"), c.solver);
  detail::read(j, "screen_support", c.screen_support);
  if (j.contains("normalization")) {
    const auto n = j.at("normalization").get<std::string>();
    require(n == "per_frame" || n == "fixed", "normalization must be 'per_frame' or 'fixed'");
    c.normalization = n == "fixed" ? codec::NormalizationMode::fixed : codec::NormalizationMode::per_frame;
  }
  detail::read(j, "fixed_min", c.fixed_min);
  detail::read(j, "fixed_max", c.fixed_max);
  c.validate();
  return c;
}

inline optics::MaskPattern mask_for(const PipelineConfig& cfg, std::uint64_t mask_seed) {
  return optics::random_mask(cfg.mask_side, cfg.bit_depth, mask_seed);
}

inline optics::PointSpreadFunction psf_for(const PipelineConfig& cfg, const optics::MaskPattern& mask) {
  if (cfg.psf_mode == PsfMode::delta) return optics::delta_psf(cfg.sensor_rows, cfg.sensor_cols);
  require(mask.side == cfg.mask_side && mask.bit_depth == cfg.bit_depth, "mask does not match the configuration");
  return optics::psf_from_mask(mask, cfg.sensor_rows, cfg.sensor_cols, cfg.blur_sigma);
}

// The stored ciphertext. Holds no mask material.
struct CipherContainer {
  std::uint16_t version = 1;
  PipelineConfig config;
  std::uint64_t num_samples = 0;
  std::uint16_t tail_pad = 0;
  std::vector<Matrix> frames;    // sensor-sized captures, float32 precision
  std::vector<double> mins;      // one normalization pair per capture
  std::vector<double> maxs;

  std::size_t latent_frames() const { return frames.size() * config.frames_per_capture() - tail_pad; }

  bool operator==(const CipherContainer&) const = default;
};

inline double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

// Rounds a normalization range to float32 without shrinking it.
inline std::pair<double, double> widen_to_f32(double lo, double hi) {
  auto flo = static_cast<float>(lo), fhi = static_cast<float>(hi);
  if (static_cast<double>(flo) > lo) flo = std::nextafter(flo, -std::numeric_limits<float>::infinity());
  if (static_cast<double>(fhi) < hi) fhi = std::nextafter(fhi, std::numeric_limits<float>::infinity());
  if (!(fhi > flo)) fhi = std::nextafter(flo, std::numeric_limits<float>::infinity());
  return {flo, fhi};
}

struct CodecReference {
  codec::LatentSequence latents;
  codec::Quantized quantized;
  std::vector<double> wave;  // decode(dequantize(quantize(encode(w)))), trimmed to the input length
};

// The codec's own output for a waveform, without encryption.
inline CodecReference codec_reference(std::span<const double> wave, const codec::Codebooks& books,
                                      const PipelineConfig& cfg) {
  CodecReference ref;
  ref.latents = codec::encode_audio(wave, cfg.frame_len, cfg.latent_size, cfg.transform_seed, cfg.sample_rate);
  ref.quantized = codec::rvq_quantize(ref.latents.data, books);
  codec::LatentSequence d = ref.latents;
  d.data = ref.quantized.dequantized;
  ref.wave = analysis::fit_length(codec::decode_audio(d), wave.size());
  return ref;
}

inline void check_books(const codec::Codebooks& books, const PipelineConfig& cfg) {
  require(books.dim == cfg.latent_size, "codebook dimension does not match latent_size");
  require(books.count >= 1 && books.size >= 1, "empty codebooks");
}

inline CipherContainer encrypt(std::span<const double> wave, const optics::MaskPattern& mask,
                               const codec::Codebooks& books, const PipelineConfig& cfg, std::uint64_t seed,
                               unsigned threads = 1) {
  cfg.validate();
  check_books(books, cfg);
  const auto latents = codec::encode_audio(wave, cfg.frame_len, cfg.latent_size, cfg.transform_seed, cfg.sample_rate);
  const std::size_t per = cfg.frames_per_capture();

  codec::LatentVideo video =
      codec::latent_to_video(latents.data, cfg.normalization, std::make_pair(cfg.fixed_min, cfg.fixed_max), per);
  for (std::size_t b = 0; b < video.meta.mins.size(); ++b)
    std::tie(video.meta.mins[b], video.meta.maxs[b]) = widen_to_f32(video.meta.mins[b], video.meta.maxs[b]);
  video.frames = codec::normalize_frames(latents.data, video.meta);

  const std::size_t captures = (video.frames.size() + per - 1) / per;
  const std::size_t pad = captures * per - video.frames.size();
  require(pad <= 0xFFFF, "tail pad does not fit the container");
  const std::size_t side = cfg.frame_side();
  for (std::size_t i = 0; i < pad; ++i) video.frames.emplace_back(side, side);

  CipherContainer ct;
  ct.config = cfg;
  ct.num_samples = wave.size();
  ct.tail_pad = static_cast<std::uint16_t>(pad);
  ct.mins = video.meta.mins;
  ct.maxs = video.meta.maxs;
  ct.frames.resize(captures);

  const auto psf = psf_for(cfg, mask);
  parallel_for(captures, threads, [&](std::size_t j) {
    std::vector<Matrix> group(video.frames.begin() + static_cast<std::ptrdiff_t>(j * per),
                              video.frames.begin() + static_cast<std::ptrdiff_t>((j + 1) * per));
    const Matrix screen = optics::upsample_superpixel(optics::tile_group(group, cfg.group), cfg.upsample);
    Matrix y = optics::forward_capture(screen, psf, cfg.snr_db, seed ^ static_cast<std::uint64_t>(j));
    for (double& v : y.values()) v = to_f32(v);
    ct.frames[j] = std::move(y);
  });
  return ct;
}

struct Diagnostics {
  std::vector<bool> diverged;                        // per capture
  std::vector<analysis::FrameMetrics> frame_metrics;  // per latent frame, when ground truth is supplied
};

struct Decrypted {
  std::vector<double> wave;
  codec::CodeSequence codes;
  Matrix latents;                   // recovered E-hat before snapping
  Matrix dequantized;               // D-hat after snapping
  std::vector<Matrix> video;        // recovered sqrt(S) x sqrt(S) frames
  Diagnostics diagnostics;
};

// Screen-frame recovery for one capture: solve, crop the ROI, split the group,
// pool super-pixels. Values are clamped to the displayable range [0, 1].
inline std::vector<Matrix> recover_capture(const Matrix& y, const optics::PointSpreadFunction& psf,
                                           const PipelineConfig& cfg) {
  const auto roi = optics::scene_roi(cfg.sensor_rows, cfg.sensor_cols, cfg.screen_side(), cfg.screen_side());
  auto solver = cfg.solver;
  if (cfg.screen_support) solver.support = roi;
  const auto rec = solvers::recover(y, psf, solver);
  const Matrix est = optics::extract_roi(rec.estimate, roi, cfg.recovered_side());
  auto tiles = optics::untile_group(est, cfg.group);
  for (auto& t : tiles) {
    t = optics::pool_superpixels(t, cfg.superpixel);
    for (double& v : t.values()) v = std::clamp(v, 0.0, 1.0);
  }
  return tiles;
}

inline void validate_container(const CipherContainer& ct) {
  ct.config.validate();
  require(ct.mins.size() == ct.frames.size() && ct.maxs.size() == ct.frames.size(),
          "container normalization metadata does not match frame count", ErrorKind::format);
  require(ct.tail_pad < ct.config.frames_per_capture() || ct.frames.empty(), "container tail pad too large",
          ErrorKind::format);
  for (const auto& f : ct.frames)
    require(f.rows() == ct.config.sensor_rows && f.cols() == ct.config.sensor_cols,
            "capture shape does not match the sensor", ErrorKind::format);
}

// A capture whose solver diverges becomes a zero frame and is flagged; the
// rest of the utterance is still decrypted.
inline Decrypted decrypt(const CipherContainer& ct, const optics::MaskPattern& mask, const codec::Codebooks& books,
                         unsigned threads = 1, std::span<const double> reference = {}) {
  validate_container(ct);
  const PipelineConfig& cfg = ct.config;
  check_books(books, cfg);
  const auto psf = psf_for(cfg, mask);
  const std::size_t per = cfg.frames_per_capture(), side = cfg.frame_side();

  Decrypted out;
  out.diagnostics.diverged.assign(ct.frames.size(), false);
  std::vector<std::vector<Matrix>> groups(ct.frames.size());
  std::vector<char> diverged(ct.frames.size(), 0);
  parallel_for(ct.frames.size(), threads, [&](std::size_t j) {
    try {
      groups[j] = recover_capture(ct.frames[j], psf, cfg);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::divergence) throw;
      groups[j].assign(per, Matrix(side, side));
      diverged[j] = 1;
    }
  });
  for (std::size_t j = 0; j < groups.size(); ++j) {
    out.diagnostics.diverged[j] = diverged[j] != 0;
    for (auto& f : groups[j]) out.video.push_back(std::move(f));
  }
  out.video.resize(ct.latent_frames());

  codec::NormalizationMeta meta;
  meta.mode = cfg.normalization;
  meta.block = per;
  meta.mins = ct.mins;
  meta.maxs = ct.maxs;
  out.latents = codec::video_to_latent(out.video, meta);
  auto q = codec::rvq_quantize(out.latents, books);
  out.codes = std::move(q.codes);
  out.dequantized = std::move(q.dequantized);
  codec::LatentSequence d{out.dequantized, cfg.frame_len, cfg.sample_rate, cfg.transform_seed};
  out.wave = analysis::fit_length(codec::decode_audio(d), ct.num_samples);

  if (!reference.empty()) {
    const auto latents = codec::encode_audio(reference, cfg.frame_len, cfg.latent_size, cfg.transform_seed, cfg.sample_rate);
    const auto truth = codec::normalize_frames(latents.data, meta);
    require(truth.size() == out.video.size(), "reference does not match the container length");
    for (std::size_t t = 0; t < truth.size(); ++t)
      out.diagnostics.frame_metrics.push_back(analysis::frame_metrics(truth[t], out.video[t]));
  }
  return out;
}

struct AuthThresholds {
  double sisdr_min = 0.0;
  double qm1_min = 50.0;
  // Reference-free proxy only: a frame counts as consistent when its relative
  // snapping residual ||E-hat - D-hat|| / ||E-hat|| is at most this.
  double residual_max = 0.5;
};

struct AuthResult {
  bool accept = false;
  double si_sdr = std::numeric_limits<double>::quiet_NaN();
  double qm1 = 0.0;
  bool reference_free = false;
};

// Percentage of frames whose recovered latent snaps onto the codebooks with a
// relative residual of at most `residual_max`.
inline double snapping_consistency(const Matrix& latents, const Matrix& dequantized, double residual_max) {
  if (latents.rows() == 0) return 0.0;
  std::size_t ok = 0;
  for (std::size_t t = 0; t < latents.rows(); ++t) {
    double e = 0.0, r = 0.0;
    for (std::size_t k = 0; k < latents.cols(); ++k) {
      e += latents(t, k) * latents(t, k);
      const double d = latents(t, k) - dequantized(t, k);
      r += d * d;
    }
    ok += e > 0.0 && std::sqrt(r / e) <= residual_max;
  }
  return 100.0 * static_cast<double>(ok) / static_cast<double>(latents.rows());
}

// With a reference: accept iff SI-SDR against the codec output and QM-1 both
// clear their thresholds. Without: accept iff the snapping-consistency proxy
// (reported in `qm1`) clears qm1_min.
inline AuthResult authenticate(const CipherContainer& ct, const optics::MaskPattern& candidate,
                               const codec::Codebooks& books, const AuthThresholds& th,
                               std::span<const double> reference = {}, unsigned threads = 1) {
  require(std::isfinite(th.qm1_min) && !std::isnan(th.sisdr_min), "authentication thresholds must be numbers");
  const Decrypted dec = decrypt(ct, candidate, books, threads);
  AuthResult res;
  if (reference.empty()) {
    res.reference_free = true;
    res.qm1 = snapping_consistency(dec.latents, dec.dequantized, th.residual_max);
    res.accept = res.qm1 >= th.qm1_min;
    return res;
  }
  const auto ref = codec_reference(reference, books, ct.config);
  res.si_sdr = analysis::si_sdr(ref.wave, analysis::fit_length(dec.wave, ref.wave.size()));
  res.qm1 = analysis::code_match(ref.quantized.codes, dec.codes, 1);
  res.accept = res.si_sdr >= th.sisdr_min && res.qm1 >= th.qm1_min;
  return res;
}

// Midpoint of the gap between the worst correct-key score and the best
// wrong-key score on one axis. Without a gap, returns the worst correct score.
inline double separating_threshold(std::span<const double> correct, std::span<const double> wrong) {
  require(!correct.empty() && !wrong.empty(), "calibration needs correct and wrong scores");
  const double lo = *std::min_element(correct.begin(), correct.end());
  const double hi = *std::max_element(wrong.begin(), wrong.end());
  return hi < lo ? 0.5 * (lo + hi) : lo;
}

}  // namespace lenslessmic::pipeline
