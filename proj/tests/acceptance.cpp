// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "lenslessmic/cli.hpp"

using namespace lenslessmic;

namespace {

constexpr std::uint64_t master_seed = 2026;
constexpr std::uint64_t mask_seed = 77;
constexpr std::size_t training_utterances = 150;

int failures = 0;

void report(int id, const char* name, bool pass, const std::string& detail, double seconds) {
  std::printf("%s criterion %d (%s): %s [%.1f s]\n", pass ? "PASS" : "FAIL", id, name, detail.c_str(), seconds);
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

std::vector<std::vector<double>> utterances(std::size_t first, std::size_t count, double seconds) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(lenslessmic::testing::eval_utterance(first + i, seconds));
  return out;
}

// Per-utterance scores of a correct-key round trip, plus the decoded WAV bytes.
struct RoundTrip {
  std::vector<double> qm1, qmc, si_sdr;
  std::string wavs;
};

RoundTrip round_trip(const std::vector<std::vector<double>>& waves, const codec::Codebooks& books,
                     const pipeline::PipelineConfig& cfg, unsigned threads) {
  const auto mask = pipeline::mask_for(cfg, mask_seed);
  RoundTrip rt;
  for (std::size_t u = 0; u < waves.size(); ++u) {
    const auto ct = pipeline::encrypt(waves[u], mask, books, cfg, security::capture_seed(master_seed, u), threads);
    const auto dec = pipeline::decrypt(ct, mask, books, threads);
    const auto ref = pipeline::codec_reference(waves[u], books, cfg);
    rt.qm1.push_back(analysis::code_match(ref.quantized.codes, dec.codes, 1));
    rt.qmc.push_back(analysis::code_match(ref.quantized.codes, dec.codes, cfg.codebooks));
    rt.si_sdr.push_back(analysis::si_sdr(ref.wave, dec.wave));
    const auto bytes = io::encode_wav(dec.wave, cfg.sample_rate);
    rt.wavs.append(bytes.begin(), bytes.end());
  }
  return rt;
}

// ---- criteria ----

void criterion_1() {
  Timer t;
  const double bits = security::keyspace_bits(1296, 8, 0.07);
  const int w = security::min_percent_for_bits(256, 1296, 8);
  report(1, "key space", bits >= 256.0 && w == 7,
         "keyspace_bits(1296, 8, 0.07) = " + fmt("%.2f", bits) + " bits, minimal W for 256 bits = " +
             std::to_string(w) + "%",
         t.seconds());
}

void criterion_2() {
  Timer t;
  bool ok = true;
  std::string first_secure;
  for (std::size_t te = 1; te <= 64; ++te) {
    const bool secure = security::rvq_space_bits(12, 1024, te) >= 256.0;
    ok = ok && secure == (te >= 3);
    if (secure && first_secure.empty()) first_secure = std::to_string(te);
  }
  report(2, "RVQ search space", ok,
         "rvq_space_bits(12, 1024, T_E) >= 256 first at T_E = " + first_secure + " (checked T_E = 1..64)", t.seconds());
}

RoundTrip criterion_3(const codec::Codebooks& books, unsigned threads, bool print) {
  Timer t;
  pipeline::PipelineConfig cfg;
  cfg.psf_mode = pipeline::PsfMode::delta;
  cfg.snr_db = std::nullopt;
  const auto rt = round_trip(utterances(0, 20, 0.5), books, cfg, threads);
  if (print) {
    const bool ok = std::all_of(rt.qmc.begin(), rt.qmc.end(), [](double q) { return q == 100.0; }) &&
                    std::all_of(rt.si_sdr.begin(), rt.si_sdr.end(), [](double s) { return s == analysis::db_cap; });
    report(3, "identity channel", ok,
           "20 utterances, min QM-C " + fmt("%.2f", *std::min_element(rt.qmc.begin(), rt.qmc.end())) +
               "%, min SI-SDR " + fmt("%.2f", *std::min_element(rt.si_sdr.begin(), rt.si_sdr.end())) + " dB",
           t.seconds());
  }
  return rt;
}

RoundTrip criterion_4(const codec::Codebooks& books, unsigned threads, bool print) {
  Timer t;
  const pipeline::PipelineConfig cfg;
  const auto rt = round_trip(utterances(0, 20, 0.5), books, cfg, threads);
  if (print) {
    const double q = median(rt.qm1), s = median(rt.si_sdr);
    report(4, "desk channel", q >= 95.0 && s >= 15.0,
           "20 utterances, median QM-1 " + fmt("%.2f", q) + "% (>= 95), median SI-SDR " + fmt("%.2f", s) +
               " dB (>= 15)",
           t.seconds());
  }
  return rt;
}

std::string criterion_5(const codec::Codebooks& books, const RoundTrip& desk, unsigned threads, bool print) {
  Timer t;
  const pipeline::PipelineConfig cfg;
  const std::vector<double> grid{0.01, 0.05, 0.10, 0.20, 0.30, 0.50, 0.70, 0.90, 1.00};
  const std::size_t seeds = 2, n_utt = 5;
  const auto waves = utterances(0, n_utt, 0.5);
  const auto curve = security::bfa_sweep(waves, pipeline::mask_for(cfg, mask_seed), books, cfg, grid, seeds,
                                         master_seed, threads);
  const std::string csv = security::attack_csv(curve.rows);
  if (!print) return csv;

  std::vector<double> ws, means;
  for (const auto& p : curve.points) {
    ws.push_back(p.w);
    means.push_back(p.qm1.mean);
  }
  const double tau = security::kendall_tau_b(ws, means);
  const auto& low = curve.points.front().qm1;
  const double chance = 100.0 / static_cast<double>(cfg.codebook_size);
  const double se = low.std / std::sqrt(static_cast<double>(low.n));
  const bool near_chance = std::abs(low.mean - chance) <= 3.0 * se;

  // the W = 1 cells are the correct key and the same captures as criterion 4
  bool w1_equal = true;
  for (const auto& r : curve.rows)
    if (r.w == 1.0)
      w1_equal = w1_equal && r.qm1 == desk.qm1[r.utterance_id] && r.si_sdr == desk.si_sdr[r.utterance_id];
  std::string w_star = "none";
  for (const auto& p : curve.points)
    if (p.qm1.mean < 5.0) w_star = fmt("%.2f", p.w);

  std::string curve_text;
  for (const auto& p : curve.points) curve_text += " " + fmt("%.2f", p.w) + ":" + fmt("%.1f", p.qm1.mean);
  report(5, "attack curve", tau > 0.9 && near_chance && w1_equal,
         "Kendall tau " + fmt("%.3f", tau) + " (> 0.9); lowest W mean QM-1 " + fmt("%.2f", low.mean) + "% vs chance " +
             fmt("%.2f", chance) + "%, 3 SE = " + fmt("%.2f", 3 * se) + "; W=1 cells equal criterion 4: " +
             (w1_equal ? "yes" : "no") + "; largest W with QM-1 < 5%: " + w_star + "; curve" + curve_text,
         t.seconds());
  return csv;
}

std::string criterion_6(const codec::Codebooks& books, unsigned threads, bool print) {
  Timer t;
  cli::RunConfig rc;
  rc.mask_seed = mask_seed;
  rc.threads = threads;

  // thresholds come from a held-out calibration set with its own masks
  rc.seed = master_seed + 1;
  const auto calibration = cli::auth_trials(utterances(100, 10, 0.25), books, rc, 10);
  rc.thresholds = cli::calibrate_thresholds(calibration, rc.thresholds);

  rc.seed = master_seed;
  const auto trials = cli::auth_trials(utterances(200, 50, 0.25), books, rc, 10);
  const std::string csv = cli::auth_csv(trials);
  if (!print) return csv;

  double min_ok_sdr = std::numeric_limits<double>::infinity(), min_ok_qm = min_ok_sdr;
  double max_bad_sdr = -min_ok_sdr, max_bad_qm = -min_ok_sdr;
  for (const auto& tr : trials) {
    if (tr.correct_key()) {
      min_ok_sdr = std::min(min_ok_sdr, tr.si_sdr);
      min_ok_qm = std::min(min_ok_qm, tr.qm1);
    } else {
      max_bad_sdr = std::max(max_bad_sdr, tr.si_sdr);
      max_bad_qm = std::max(max_bad_qm, tr.qm1);
    }
  }
  const double acc = cli::auth_accuracy(trials);
  const bool disjoint = min_ok_sdr > max_bad_sdr && min_ok_qm > max_bad_qm;
  report(6, "authentication", acc == 100.0 && disjoint,
         "50 utterances x (1 + 10 masks), accuracy " + fmt("%.2f", acc) + "% with thresholds SI-SDR >= " +
             fmt("%.2f", rc.thresholds.sisdr_min) + " dB, QM-1 >= " + fmt("%.2f", rc.thresholds.qm1_min) +
             "%; correct min SI-SDR " + fmt("%.2f", min_ok_sdr) + " vs wrong max " + fmt("%.2f", max_bad_sdr) +
             ", correct min QM-1 " + fmt("%.2f", min_ok_qm) + " vs wrong max " + fmt("%.2f", max_bad_qm),
         t.seconds());
  return csv;
}

void criterion_7(const codec::Codebooks& books) {
  Timer t;
  const auto waves = utterances(0, 20, 0.5);
  std::vector<double> medians;
  std::string detail;
  for (std::size_t g = 1; g <= 3; ++g) {
    pipeline::PipelineConfig cfg;
    cfg.group = g;
    medians.push_back(median(round_trip(waves, books, cfg, 1).qm1));
    detail += (g > 1 ? ", g=" : "g=") + std::to_string(g) + " " + fmt("%.2f", medians.back()) + "%";
  }
  report(7, "grouping trade-off", medians[0] > medians[1] && medians[1] > medians[2],
         "median QM-1 over 20 utterances: " + detail, t.seconds());
}

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.uniform();
  return m;
}

double rel_err(const Matrix& a, const Matrix& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a.values()[i] - b.values()[i]) * (a.values()[i] - b.values()[i]);
    den += b.values()[i] * b.values()[i];
  }
  return std::sqrt(num / den);
}

double ssim_oracle(const Matrix& x, const Matrix& y) {
  double w[7][7], total = 0.0;
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) total += w[i][j] = std::exp(-((i - 3) * (i - 3) + (j - 3) * (j - 3)) / 4.5);
  const double c1 = 1e-4, c2 = 9e-4;
  double acc = 0.0;
  int count = 0;
  for (std::size_t r = 0; r + 7 <= x.rows(); ++r)
    for (std::size_t c = 0; c + 7 <= x.cols(); ++c, ++count) {
      double mx = 0, my = 0, vx = 0, vy = 0, cxy = 0;
      for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j) {
          mx += w[i][j] / total * x(r + i, c + j);
          my += w[i][j] / total * y(r + i, c + j);
        }
      for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j) {
          const double a = x(r + i, c + j) - mx, b = y(r + i, c + j) - my;
          vx += w[i][j] / total * a * a;
          vy += w[i][j] / total * b * b;
          cxy += w[i][j] / total * a * b;
        }
      acc += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
  return acc / count;
}

void criterion_8(const codec::Codebooks& books) {
  Timer t;
  // Wiener linearity
  const auto psf = optics::psf_from_mask(optics::random_mask(12, 8, 5), 32, 32, 1.0);
  const Matrix y1 = random_matrix(32, 32, 7), y2 = random_matrix(32, 32, 8);
  Matrix mix(32, 32);
  for (std::size_t i = 0; i < mix.size(); ++i) mix.values()[i] = 1.7 * y1.values()[i] - 0.4 * y2.values()[i];
  const Matrix lhs = solvers::wiener_recover(mix, psf, 1e-4).estimate;
  const Matrix a = solvers::wiener_recover(y1, psf, 1e-4).estimate, b = solvers::wiener_recover(y2, psf, 1e-4).estimate;
  Matrix rhs(32, 32);
  for (std::size_t i = 0; i < rhs.size(); ++i) rhs.values()[i] = 1.7 * a.values()[i] - 0.4 * b.values()[i];
  const double lin = rel_err(lhs, rhs);

  // FISTA objective non-increasing after a 5-iteration burn-in
  solvers::SolverConfig fc;
  fc.kind = solvers::SolverKind::fista;
  fc.reg_lambda = 1e-4;
  const auto obj = solvers::fista_recover(optics::forward_capture(random_matrix(16, 16, 3), psf, 30.0, 1), psf, fc)
                       .objective;
  bool monotone = true;
  for (std::size_t k = 5; k < obj.size(); ++k) monotone = monotone && obj[k] <= obj[k - 1];

  // ADMM delta-PSF recovery at 100 iterations
  const auto delta = optics::delta_psf(24, 24);
  const Matrix scene = random_matrix(12, 12, 4);
  auto ac = pipeline::PipelineConfig{}.solver;
  ac.tau = 0.0;
  const Matrix est = solvers::admm_recover(optics::forward_capture(scene, delta, std::nullopt, 0), delta, ac).estimate;
  const auto roi = optics::scene_roi(24, 24, 12, 12);
  const double admm_err = rel_err(est, embed(scene, 24, 24, roi.row, roi.col));

  // SSIM against the windowed formula
  double ssim_gap = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Matrix x = random_matrix(32, 32, 10 + s), z = random_matrix(32, 32, 20 + s);
    ssim_gap = std::max(ssim_gap, std::abs(analysis::ssim(x, z) - ssim_oracle(x, z)));
  }

  // fast RVQ against brute force on 500 desk latents
  const auto lat = codec::encode_audio(lenslessmic::testing::eval_utterance(500, 4.0), 128, 64, 1);
  Matrix e(500, 64);
  std::copy_n(lat.data.values().begin(), e.size(), e.values().begin());
  const auto q = codec::rvq_quantize(e, books);
  std::size_t mismatches = 0;
  for (std::size_t r = 0; r < 500; ++r) {
    std::vector<double> res(e.row(r).begin(), e.row(r).end());
    for (std::size_t c = 0; c < books.count; ++c) {
      std::uint32_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::uint32_t m = 0; m < books.size; ++m) {
        double d = 0.0;
        for (std::size_t k = 0; k < res.size(); ++k) d += (res[k] - books.codeword(c, m)[k]) * (res[k] - books.codeword(c, m)[k]);
        if (d < best_d) {
          best_d = d;
          best = m;
        }
      }
      mismatches += q.codes(r, c) != best;
      for (std::size_t k = 0; k < res.size(); ++k) res[k] -= books.codeword(c, best)[k];
    }
  }

  const bool ok = lin < 1e-10 && monotone && admm_err < 1e-4 && ssim_gap < 1e-6 && mismatches == 0;
  report(8, "solver units", ok,
         "Wiener linearity " + fmt("%.2e", lin) + ", FISTA monotone after burn-in: " + (monotone ? "yes" : "no") +
             ", ADMM delta error " + fmt("%.2e", admm_err) + ", SSIM oracle gap " + fmt("%.2e", ssim_gap) +
             ", RVQ brute-force mismatches " + std::to_string(mismatches) + "/2000",
         t.seconds());
}

}  // namespace

int main() {
  Timer total;
  criterion_1();
  criterion_2();

  Timer train;
  const pipeline::PipelineConfig desk;
  const auto books = lenslessmic::testing::train_books(desk, training_utterances);
  std::printf("trained %zu x %zu codebooks on %zu synthetic utterances [%.1f s]\n", books.count, books.size,
              training_utterances, train.seconds());

  const auto c3 = criterion_3(books, 1, true);
  const auto c4 = criterion_4(books, 1, true);
  const auto c5 = criterion_5(books, c4, 1, true);
  const auto c6 = criterion_6(books, 1, true);
  criterion_7(books);
  criterion_8(books);

  // criterion 9: rerun 3-6 with the same seeds on four threads
  Timer t9;
  const unsigned threads = 4;
  const bool same3 = criterion_3(books, threads, false).wavs == c3.wavs;
  const bool same4 = criterion_4(books, threads, false).wavs == c4.wavs;
  const bool same5 = criterion_5(books, c4, threads, false) == c5;
  const bool same6 = criterion_6(books, threads, false) == c6;
  auto yn = [](bool b) { return b ? "identical" : "DIFFERENT"; };
  report(9, "determinism", same3 && same4 && same5 && same6,
         std::string("1 vs 4 threads: criterion 3 WAVs ") + yn(same3) + ", criterion 4 WAVs " + yn(same4) +
             ", attack CSV " + yn(same5) + ", auth CSV " + yn(same6),
         t9.seconds());

  std::printf("%d of 9 criteria failed [total %.1f s]\n", failures, total.seconds());
  return failures == 0 ? 0 : 1;
}
