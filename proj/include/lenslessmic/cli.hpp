#pragma once

// Command implementations behind tools/lenslessmic. Each command takes an
// options struct and an output stream and returns a process exit code, so the
// same code paths run from the binary and from the tests.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lenslessmic/analysis.hpp"
#include "lenslessmic/codec.hpp"
#include "lenslessmic/error.hpp"
#include "lenslessmic/io.hpp"
#include "lenslessmic/pipeline.hpp"
#include "lenslessmic/random.hpp"
#include "lenslessmic/security.hpp"
#include "lenslessmic/synth.hpp"

namespace lenslessmic::cli {

namespace fs = std::filesystem;

enum ExitCode : int { ok = 0, usage = 2, format = 3, divergence = 4 };

inline int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::format: return format;
    case ErrorKind::divergence: return divergence;
    default: return usage;
  }
}

// Config file shared by all commands: the pipeline config plus run settings.
struct RunConfig {
  pipeline::PipelineConfig pipeline;
  std::string codebooks = "codebooks.rvq";
  std::uint64_t seed = 1;
  std::uint64_t mask_seed = 1;
  unsigned threads = 1;
  int train_iterations = 50;
  pipeline::AuthThresholds thresholds;
};

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  pipeline::detail::reject_unknown(
      j, {"pipeline", "codebooks", "seed", "mask_seed", "threads", "train_iterations", "thresholds"}, "run config");
  RunConfig rc;
  if (j.contains("pipeline")) rc.pipeline = pipeline::config_from_json(j.at("pipeline"));
  pipeline::detail::read(j, "codebooks", rc.codebooks);
  pipeline::detail::read(j, "seed", rc.seed);
  pipeline::detail::read(j, "mask_seed", rc.mask_seed);
  pipeline::detail::read(j, "threads", rc.threads);
  pipeline::detail::read(j, "train_iterations", rc.train_iterations);
  if (j.contains("thresholds")) {
    const auto& t = j.at("thresholds");
    pipeline::detail::reject_unknown(t, {"sisdr_min", "qm1_min", "residual_max"}, "thresholds");
    pipeline::detail::read(t, "sisdr_min", rc.thresholds.sisdr_min);
    pipeline::detail::read(t, "qm1_min", rc.thresholds.qm1_min);
    pipeline::detail::read(t, "residual_max", rc.thresholds.residual_max);
  }
  require(rc.threads >= 1, "threads must be >= 1");
  require(rc.train_iterations >= 1, "train_iterations must be >= 1");
  return rc;
}

inline nlohmann::json to_json(const RunConfig& rc) {
  return {{"pipeline", pipeline::to_json(rc.pipeline)},
          {"codebooks", rc.codebooks},
          {"seed", rc.seed},
          {"mask_seed", rc.mask_seed},
          {"threads", rc.threads},
          {"train_iterations", rc.train_iterations},
          {"thresholds",
           {{"sisdr_min", rc.thresholds.sisdr_min},
            {"qm1_min", rc.thresholds.qm1_min},
            {"residual_max", rc.thresholds.residual_max}}}};
}

inline RunConfig load_run_config(const std::string& path) {
  if (path.empty()) return {};
  const auto bytes = io::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::invalid_argument, "config " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

// Flags that may override the config file.
struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> mask_seed;
  std::optional<unsigned> threads;
  std::optional<std::string> codebooks;

  RunConfig resolve() const {
    RunConfig rc = load_run_config(config);
    if (seed) rc.seed = *seed;
    if (mask_seed) rc.mask_seed = *mask_seed;
    if (threads) rc.threads = std::max(1u, *threads);
    if (codebooks) rc.codebooks = *codebooks;
    return rc;
  }
};

inline codec::Codebooks load_books(const RunConfig& rc) {
  const auto f = io::read_codebooks(rc.codebooks);
  const auto& p = rc.pipeline;
  require(f.books.dim == p.latent_size && f.frame_len == p.frame_len && f.sample_rate == p.sample_rate &&
              f.transform_seed == p.transform_seed,
          "codebooks " + rc.codebooks + " were trained for a different codec configuration");
  return f.books;
}

inline std::vector<double> load_wave(const std::string& path, const pipeline::PipelineConfig& cfg) {
  auto w = io::read_wav(path);
  require(w.sample_rate == cfg.sample_rate, path + ": sample rate " + std::to_string(w.sample_rate) +
                                                " does not match the config (" + std::to_string(cfg.sample_rate) + ")");
  require(!w.samples.empty(), path + ": no samples");
  return std::move(w.samples);
}

inline std::vector<std::string> read_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open list " + path);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    fs::path p(line);
    if (p.is_relative()) p = fs::path(path).parent_path() / p;
    out.push_back(p.string());
  }
  return out;
}

// ---- synth ----

struct SynthOptions {
  Common common;
  std::string out_dir;
  std::size_t count = 10;
  double min_seconds = 1.0;
  double max_seconds = 3.0;
};

// Writes utt_0000.wav ... plus manifest.txt listing them.
inline int cmd_synth(const SynthOptions& o, std::ostream& log) {
  const RunConfig rc = o.common.resolve();
  require(!o.out_dir.empty(), "synth needs an output directory");
  require(o.min_seconds > 0.0 && o.max_seconds >= o.min_seconds, "bad utterance length range");
  fs::create_directories(o.out_dir);
  std::string manifest;
  for (std::size_t i = 0; i < o.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "utt_%04zu.wav", i);
    const auto wave = synth::utterance(derive_seed(rc.seed, "synth", i),
                                       {o.min_seconds, o.max_seconds, rc.pipeline.sample_rate});
    io::write_wav(fs::path(o.out_dir) / name, wave, rc.pipeline.sample_rate);
    manifest += std::string(name) + "\n";
  }
  io::write_text_atomic(fs::path(o.out_dir) / "manifest.txt", manifest);
  log << "wrote " << o.count << " utterances to " << o.out_dir << "\n";
  return ok;
}

// ---- train-books ----

struct TrainOptions {
  Common common;
  std::string corpus_dir;
  std::string out;
};

inline int cmd_train_books(const TrainOptions& o, std::ostream& log) {
  const RunConfig rc = o.common.resolve();
  const auto& cfg = rc.pipeline;
  require(fs::is_directory(o.corpus_dir), "corpus directory not found: " + o.corpus_dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(o.corpus_dir))
    if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  require(!files.empty(), "no .wav files in " + o.corpus_dir);
  std::vector<codec::LatentSequence> corpus;
  for (const auto& f : files) {
    const auto w = load_wave(f.string(), cfg);
    corpus.push_back(codec::encode_audio(w, cfg.frame_len, cfg.latent_size, cfg.transform_seed, cfg.sample_rate));
  }
  const auto books = codec::train_codebooks(corpus, cfg.codebooks, cfg.codebook_size,
                                            derive_seed(rc.seed, "train_books"), rc.train_iterations);
  const auto energy = codec::residual_energy_by_stage(corpus, books);
  log << "trained " << cfg.codebooks << " x " << cfg.codebook_size << " codebooks on " << files.size() << " files\n";
  for (std::size_t c = 0; c < energy.size(); ++c)
    log << "  mean residual energy after " << c << " book(s): " << security::format_number(energy[c], "%.6g") << "\n";
  const std::string out = o.out.empty() ? rc.codebooks : o.out;
  io::write_codebooks(out, {books, static_cast<std::uint32_t>(cfg.frame_len), cfg.sample_rate, cfg.transform_seed});
  log << "wrote " << out << "\n";
  return ok;
}

// ---- encrypt / decrypt ----

struct EncryptOptions {
  Common common;
  std::string in_wav;
  std::string out;
};

inline int cmd_encrypt(const EncryptOptions& o, std::ostream& log) {
  const RunConfig rc = o.common.resolve();
  const auto books = load_books(rc);
  const auto wave = load_wave(o.in_wav, rc.pipeline);
  const auto mask = pipeline::mask_for(rc.pipeline, rc.mask_seed);
  const auto ct = pipeline::encrypt(wave, mask, books, rc.pipeline, rc.seed, rc.threads);
  io::write_container(o.out, ct);
  log << "encrypted " << wave.size() << " samples into " << ct.frames.size() << " captures: " << o.out << "\n";
  return ok;
}

struct DecryptOptions {
  Common common;
  std::string in_ct;
  std::string out_wav;
  std::string report;
  std::string reference;
};

inline nlohmann::json decrypt_report(const pipeline::Decrypted& dec, const pipeline::CipherContainer& ct,
                                     const codec::Codebooks& books, const std::vector<double>& reference) {
  nlohmann::json r;
  std::size_t diverged = 0;
  for (bool d : dec.diagnostics.diverged) diverged += d;
  r["captures"] = ct.frames.size();
  r["latent_frames"] = ct.latent_frames();
  r["diverged_captures"] = diverged;
  r["db_cap"] = analysis::db_cap;
  if (reference.empty()) return r;
  const auto ref = pipeline::codec_reference(reference, books, ct.config);
  nlohmann::json qm = nlohmann::json::object();
  for (std::size_t k = 1; k <= books.count; ++k)
    qm["QM-" + std::to_string(k)] = analysis::code_match(ref.quantized.codes, dec.codes, k);
  r["code_match"] = qm;
  const auto audio = analysis::audio_metrics(ref.wave, analysis::fit_length(dec.wave, ref.wave.size()),
                                             ct.config.sample_rate);
  r["si_sdr"] = audio.si_sdr;
  r["mel_dist"] = audio.mel_dist;
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& m : dec.diagnostics.frame_metrics) frames.push_back({{"psnr", m.psnr}, {"ssim", m.ssim}, {"mse", m.mse}});
  r["frames"] = frames;
  return r;
}

inline int cmd_decrypt(const DecryptOptions& o, std::ostream& log) {
  const RunConfig rc = o.common.resolve();
  const auto books = load_books(rc);
  const auto ct = io::read_container(o.in_ct);
  std::vector<double> reference;
  if (!o.reference.empty()) reference = load_wave(o.reference, ct.config);
  const auto mask = pipeline::mask_for(ct.config, rc.mask_seed);
  const auto dec = pipeline::decrypt(ct, mask, books, rc.threads, reference);
  io::write_wav(o.out_wav, dec.wave, ct.config.sample_rate);
  log << "decrypted " << ct.frames.size() << " captures into " << o.out_wav << "\n";
  if (!o.report.empty()) {
    const auto report = decrypt_report(dec, ct, books, reference);
    io::write_text_atomic(o.report, report.dump(2) + "\n");
    if (report.contains("code_match")) log << "QM-1 " << report["code_match"]["QM-1"].get<double>() << "%\n";
  }
  const auto diverged = std::count(dec.diagnostics.diverged.begin(), dec.diagnostics.diverged.end(), true);
  if (diverged > 0) {
    log << "warning: " << diverged << " capture(s) diverged and were replaced by zero frames\n";
    return divergence;
  }
  return ok;
}

// ---- attack ----

struct AttackOptions {
  Common common;
  std::string wav_list;
  std::vector<double> grid;  // empty: default grid
  std::size_t seeds = 5;
  std::string out_csv;
};

inline int cmd_attack(const AttackOptions& o, std::ostream& log) {
  const RunConfig rc = o.common.resolve();
  const auto books = load_books(rc);
  std::vector<std::vector<double>> waves;
  for (const auto& f : read_list(o.wav_list)) waves.push_back(load_wave(f, rc.pipeline));
  const auto& grid = o.grid.empty() ? security::default_w_grid() : o.grid;
  const auto mask = pipeline::mask_for(rc.pipeline, rc.mask_seed);
  const auto curve = security::bfa_sweep(waves, mask, books, rc.pipeline, grid, o.seeds, rc.seed, rc.threads);
  io::write_text_atomic(o.out_csv, security::attack_csv(curve.rows));
  for (const auto& p : curve.points)
    log << "W=" << security::format_number(p.w, "%.2f") << " QM-1 " << security::format_number(p.qm1.mean, "%.2f")
        << " +/- " << security::format_number(p.qm1.std, "%.2f") << "  SI-SDR "
        << security::format_number(p.si_sdr.mean, "%.2f") << "\n";
  const bool all_failed = std::all_of(curve.rows.begin(), curve.rows.end(),
                                      [](const security::AttackRow& r) { return r.flagged && std::isnan(r.qm1); });
  return all_failed ? divergence : ok;
}

// ---- auth ----

struct AuthTrial {
  std::size_t utterance_id = 0;
  int candidate = -1;  // -1: the correct mask, otherwise random mask index
  double si_sdr = 0.0;
  double qm1 = 0.0;
  bool accept = false;

  bool correct_key() const { return candidate < 0; }
  bool right() const { return accept == correct_key(); }
};

inline std::uint64_t random_mask_seed(std::uint64_t master, std::size_t utterance, std::size_t k) {
  return derive_seed(master, "auth_wrong_mask", (static_cast<std::uint64_t>(utterance) << 32) | k);
}

// Scores every utterance against its correct mask and `n_random` random masks.
inline std::vector<AuthTrial> auth_trials(const std::vector<std::vector<double>>& waves, const codec::Codebooks& books,
                                          const RunConfig& rc, std::size_t n_random) {
  const auto& cfg = rc.pipeline;
  const auto mask = pipeline::mask_for(cfg, rc.mask_seed);
  const std::size_t per = n_random + 1;
  std::vector<AuthTrial> trials(waves.size() * per);
  std::vector<pipeline::CipherContainer> cts(waves.size());
  parallel_for(waves.size(), rc.threads, [&](std::size_t u) {
    cts[u] = pipeline::encrypt(waves[u], mask, books, cfg, security::capture_seed(rc.seed, u));
  });
  parallel_for(trials.size(), rc.threads, [&](std::size_t i) {
    const std::size_t u = i / per, k = i % per;
    AuthTrial t;
    t.utterance_id = u;
    t.candidate = static_cast<int>(k) - 1;
    const auto candidate = k == 0 ? mask : pipeline::mask_for(cfg, random_mask_seed(rc.seed, u, k - 1));
    const auto res = pipeline::authenticate(cts[u], candidate, books, rc.thresholds, waves[u]);
    t.si_sdr = res.si_sdr;
    t.qm1 = res.qm1;
    t.accept = res.accept;
    trials[i] = t;
  });
  return trials;
}

inline double auth_accuracy(const std::vector<AuthTrial>& trials) {
  if (trials.empty()) return 0.0;
  const auto right = std::count_if(trials.begin(), trials.end(), [](const AuthTrial& t) { return t.right(); });
  return 100.0 * static_cast<double>(right) / static_cast<double>(trials.size());
}

inline std::string auth_csv(const std::vector<AuthTrial>& trials) {
  std::string out = "utterance_id,candidate,correct_key,si_sdr,qm1,accept\n";
  for (const auto& t : trials)
    out += std::to_string(t.utterance_id) + ',' + (t.correct_key() ? "true" : "random_" + std::to_string(t.candidate)) +
           ',' + (t.correct_key() ? "1" : "0") + ',' + security::format_number(t.si_sdr) + ',' +
           security::format_number(t.qm1) + ',' + (t.accept ? "1" : "0") + '\n';
  out += "# accuracy," + security::format_number(auth_accuracy(trials), "%.4f") + "\n";
  return out;
}

// Thresholds at the midpoint of the gap between correct and wrong scores.
inline pipeline::AuthThresholds calibrate_thresholds(const std::vector<AuthTrial>& trials,
                                                     pipeline::AuthThresholds base = {}) {
  std::vector<double> cs, ws, cq, wq;
  for (const auto& t : trials) {
    (t.correct_key() ? cs : ws).push_back(t.si_sdr);
    (t.correct_key() ? cq : wq).push_back(t.qm1);
  }
  base.sisdr_min = pipeline::separating_threshold(cs, ws);
  base.qm1_min = pipeline::separating_threshold(cq, wq);
  return base;
}

struct AuthOptions {
  Common common;
  std::string wav_list;
  std::size_t n_random_masks = 10;
  std::string out_csv;
};

inline int cmd_auth(const AuthOptions& o, std::ostream& log) {
  const RunConfig rc = o.common.resolve();
  const auto books = load_books(rc);
  std::vector<std::vector<double>> waves;
  for (const auto& f : read_list(o.wav_list)) waves.push_back(load_wave(f, rc.pipeline));
  const auto trials = auth_trials(waves, books, rc, o.n_random_masks);
  io::write_text_atomic(o.out_csv, auth_csv(trials));
  log << "accuracy " << security::format_number(auth_accuracy(trials), "%.2f") << "% over " << trials.size()
      << " trials (sisdr_min " << rc.thresholds.sisdr_min << " dB, qm1_min " << rc.thresholds.qm1_min << "%)\n";
  return ok;
}

struct CalibrateOptions {
  Common common;
  std::string wav_list;
  std::size_t n_random_masks = 10;
  std::string out_json;
};

// Prints (and optionally writes) thresholds separating correct from random masks.
inline int cmd_calibrate(const CalibrateOptions& o, std::ostream& log) {
  const RunConfig rc = o.common.resolve();
  const auto books = load_books(rc);
  std::vector<std::vector<double>> waves;
  for (const auto& f : read_list(o.wav_list)) waves.push_back(load_wave(f, rc.pipeline));
  const auto th = calibrate_thresholds(auth_trials(waves, books, rc, o.n_random_masks), rc.thresholds);
  const nlohmann::json j = {{"sisdr_min", th.sisdr_min}, {"qm1_min", th.qm1_min}, {"residual_max", th.residual_max}};
  log << j.dump(2) << "\n";
  if (!o.out_json.empty()) io::write_text_atomic(o.out_json, nlohmann::json{{"thresholds", j}}.dump(2) + "\n");
  return ok;
}

// ---- keyspace / export-mask ----

struct KeyspaceOptions {
  std::size_t n = 1296;
  int b = 8;
  double w = 0.07;
  double target_bits = 256.0;
};

inline int cmd_keyspace(const KeyspaceOptions& o, std::ostream& log) {
  log << "key space: " << security::format_number(security::keyspace_bits(o.n, o.b, o.w), "%.1f") << " bits (N=" << o.n
      << ", b=" << o.b << ", W=" << security::format_number(o.w, "%.4g") << ")\n";
  log << "minimal W for " << security::format_number(o.target_bits, "%.0f")
      << " bits: " << security::min_percent_for_bits(o.target_bits, o.n, o.b) << "%\n";
  return ok;
}

struct ExportMaskOptions {
  Common common;
  std::string out;
};

inline int cmd_export_mask(const ExportMaskOptions& o, std::ostream& log) {
  const RunConfig rc = o.common.resolve();
  io::write_text_atomic(o.out, io::mask_to_json(pipeline::mask_for(rc.pipeline, rc.mask_seed)));
  log << io::key_material_notice << "\nwrote " << o.out << "\n";
  return ok;
}

// Runs a command, mapping library errors to exit codes.
template <class Fn>
int guarded(Fn&& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return usage;
  }
}

}  // namespace lenslessmic::cli
