#include <gtest/gtest.h>

#include <algorithm>
#include <limits>

#include "fixtures.hpp"

using namespace lenslessmic;
using namespace lenslessmic::pipeline;

namespace {

PipelineConfig identity_config() {
  PipelineConfig cfg;
  cfg.psf_mode = PsfMode::delta;
  cfg.snr_db = std::nullopt;
  return cfg;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { books_ = new codec::Codebooks(lenslessmic::testing::desk_books()); }
  static void TearDownTestSuite() { delete books_; }
  static const codec::Codebooks& books() { return *books_; }
  static codec::Codebooks* books_;
};
codec::Codebooks* Pipeline::books_ = nullptr;

}  // namespace

TEST_F(Pipeline, OneSecondAtGroupOne) {
  const PipelineConfig cfg;
  const std::vector<double> wave = synth::utterance(1, {1.0, 1.0});
  ASSERT_EQ(wave.size(), 16000u);
  const auto ct = encrypt(wave, mask_for(cfg, 1), books(), cfg, 1);
  EXPECT_EQ(ct.latent_frames(), 125u);
  EXPECT_EQ(ct.frames.size(), 125u);
  EXPECT_EQ(ct.tail_pad, 0u);
  EXPECT_EQ(ct.num_samples, 16000u);
}

TEST_F(Pipeline, GroupTwoPadsTail) {
  PipelineConfig cfg;
  cfg.group = 2;
  const auto ct = encrypt(synth::utterance(1, {1.0, 1.0}), mask_for(cfg, 1), books(), cfg, 1);
  EXPECT_EQ(ct.frames.size(), 32u);
  EXPECT_EQ(ct.tail_pad, 3u);
  EXPECT_EQ(ct.latent_frames(), 125u);
}

TEST_F(Pipeline, EncryptIsDeterministicAcrossThreads) {
  const PipelineConfig cfg;
  const auto wave = lenslessmic::testing::eval_utterance(0, 0.25);
  const auto mask = mask_for(cfg, 77);
  const auto a = encrypt(wave, mask, books(), cfg, 3, 1);
  const auto b = encrypt(wave, mask, books(), cfg, 3, 1);
  const auto c = encrypt(wave, mask, books(), cfg, 3, 4);
  EXPECT_TRUE(a == b);
  EXPECT_TRUE(a == c);
  EXPECT_FALSE(a == encrypt(wave, mask, books(), cfg, 4, 1));

  const auto d1 = decrypt(a, mask, books(), 1);
  const auto d4 = decrypt(a, mask, books(), 4);
  EXPECT_EQ(d1.wave, d4.wave);
  EXPECT_EQ(d1.codes.codes, d4.codes.codes);
}

TEST_F(Pipeline, CiphertextHoldsNoMaskMaterial) {
  const PipelineConfig cfg;
  const auto wave = lenslessmic::testing::eval_utterance(0, 0.1);
  const auto a = encrypt(wave, mask_for(cfg, 1), books(), cfg, 3);
  const auto b = encrypt(wave, mask_for(cfg, 2), books(), cfg, 3);
  EXPECT_TRUE(a.config == b.config);
  EXPECT_EQ(a.mins, b.mins);
  EXPECT_EQ(a.maxs, b.maxs);
  EXPECT_FALSE(a.frames == b.frames);
}

TEST_F(Pipeline, IdentityChannelReproducesCodec) {
  const auto cfg = identity_config();
  const auto mask = mask_for(cfg, 1);
  for (std::size_t u = 0; u < 3; ++u) {
    const auto wave = lenslessmic::testing::eval_utterance(u, 0.5);
    const auto ref = codec_reference(wave, books(), cfg);
    const auto dec = decrypt(encrypt(wave, mask, books(), cfg, 1), mask, books());
    EXPECT_EQ(analysis::code_match(ref.quantized.codes, dec.codes, cfg.codebooks), 100.0);
    EXPECT_EQ(dec.codes.codes, ref.quantized.codes.codes);
    EXPECT_EQ(analysis::si_sdr(ref.wave, dec.wave), analysis::db_cap);
  }
}

TEST_F(Pipeline, GroundTruthFrameMetrics) {
  const auto cfg = identity_config();
  const auto mask = mask_for(cfg, 1);
  const auto wave = lenslessmic::testing::eval_utterance(0, 0.1);
  const auto ct = encrypt(wave, mask, books(), cfg, 1);
  const auto dec = decrypt(ct, mask, books(), 1, wave);
  ASSERT_EQ(dec.diagnostics.frame_metrics.size(), ct.latent_frames());
  for (const auto& m : dec.diagnostics.frame_metrics) {
    EXPECT_GT(m.psnr, 60.0);
    EXPECT_GT(m.ssim, 0.999);
  }
}

TEST_F(Pipeline, DeskChannelRecoversCodes) {
  const PipelineConfig cfg;
  const auto mask = mask_for(cfg, 77);
  const auto wave = lenslessmic::testing::eval_utterance(0, 0.5);
  const auto ref = codec_reference(wave, books(), cfg);
  const auto dec = decrypt(encrypt(wave, mask, books(), cfg, 3), mask, books());
  EXPECT_GE(analysis::code_match(ref.quantized.codes, dec.codes, 1), 95.0);
  EXPECT_GE(analysis::si_sdr(ref.wave, dec.wave), 10.0);
}

// Wrong-key decryptions collapse onto one or two codewords, so QM-1 equals how
// often the reference uses them. The median over utterances sits at chance.
TEST_F(Pipeline, SevenPercentKeyDecryptsToChance) {
  const PipelineConfig cfg;
  const auto mask = mask_for(cfg, 77);
  std::vector<double> qm1, sdr;
  for (std::size_t u = 0; u < 9; ++u) {
    const auto wave = lenslessmic::testing::eval_utterance(u, 0.25);
    const auto ref = codec_reference(wave, books(), cfg);
    const auto guess = optics::perturb_mask(mask, 0.07, 100 + u);
    const auto dec = decrypt(encrypt(wave, mask, books(), cfg, 3), guess, books());
    qm1.push_back(analysis::code_match(ref.quantized.codes, dec.codes, 1));
    sdr.push_back(analysis::si_sdr(ref.wave, dec.wave));
    EXPECT_LT(sdr.back(), 0.0) << "utterance " << u;
  }
  EXPECT_LE(median(qm1), 200.0 / static_cast<double>(cfg.codebook_size));
  EXPECT_LT(median(sdr), 0.0);
}

TEST_F(Pipeline, AuthenticationDecisions) {
  const PipelineConfig cfg;
  const auto mask = mask_for(cfg, 77);
  const auto wave = lenslessmic::testing::eval_utterance(1, 0.25);
  const auto ct = encrypt(wave, mask, books(), cfg, 3);
  const AuthThresholds th;
  EXPECT_TRUE(authenticate(ct, mask, books(), th, wave).accept);

  const auto wrong = optics::perturb_mask(mask, 0.0, 5);
  const auto bad = authenticate(ct, wrong, books(), th, wave);
  EXPECT_FALSE(bad.accept);
  EXPECT_FALSE(bad.reference_free);

  AuthThresholds vacuous;
  vacuous.sisdr_min = -std::numeric_limits<double>::infinity();
  vacuous.qm1_min = 0.0;
  EXPECT_TRUE(authenticate(ct, wrong, books(), vacuous, wave).accept);

  AuthThresholds nan_th;
  nan_th.qm1_min = std::nan("");
  EXPECT_THROW(authenticate(ct, mask, books(), nan_th, wave), Error);
}

TEST_F(Pipeline, ReferenceFreeProxySeparatesKeys) {
  const PipelineConfig cfg;
  const auto mask = mask_for(cfg, 77);
  const auto wave = lenslessmic::testing::eval_utterance(2, 0.25);
  const auto ct = encrypt(wave, mask, books(), cfg, 3);
  const auto good = authenticate(ct, mask, books(), {});
  const auto bad = authenticate(ct, mask_for(cfg, 78), books(), {});
  EXPECT_TRUE(good.reference_free);
  EXPECT_GT(good.qm1, bad.qm1);
}

TEST_F(Pipeline, DivergentCaptureIsFlaggedAndZeroed) {
  const PipelineConfig cfg;
  const auto mask = mask_for(cfg, 77);
  auto ct = encrypt(lenslessmic::testing::eval_utterance(0, 0.05), mask, books(), cfg, 3);
  ASSERT_GE(ct.frames.size(), 3u);
  for (double& v : ct.frames[1].values()) v = 1e300;
  const auto dec = decrypt(ct, mask, books());
  EXPECT_FALSE(dec.diagnostics.diverged[0]);
  EXPECT_TRUE(dec.diagnostics.diverged[1]);
  EXPECT_FALSE(dec.diagnostics.diverged[2]);
  EXPECT_EQ(sum(dec.video[1]), 0.0);
  EXPECT_EQ(dec.wave.size(), ct.num_samples);
}

TEST_F(Pipeline, MismatchedInputsRejected) {
  const PipelineConfig cfg;
  const auto wave = lenslessmic::testing::eval_utterance(0, 0.05);
  EXPECT_THROW(encrypt(wave, optics::random_mask(12, 8, 1), books(), cfg, 1), Error);
  auto ct = encrypt(wave, mask_for(cfg, 1), books(), cfg, 1);
  ct.mins.pop_back();
  try {
    decrypt(ct, mask_for(cfg, 1), books());
    FAIL() << "expected a format error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::format);
  }
}

TEST(PipelineConfig, JsonRoundTrip) {
  PipelineConfig cfg;
  cfg.group = 2;
  cfg.snr_db = std::nullopt;
  cfg.psf_mode = PsfMode::delta;
  cfg.solver.kind = solvers::SolverKind::fista;
  cfg.normalization = codec::NormalizationMode::fixed;
  EXPECT_TRUE(config_from_json(to_json(cfg)) == cfg);
  EXPECT_TRUE(config_from_json(to_json(PipelineConfig{})) == PipelineConfig{});
}

TEST(PipelineConfig, UnknownKeysRejected) {
  auto j = to_json(PipelineConfig{});
  j["lens"] = 1;
  EXPECT_THROW(config_from_json(j), Error);
  auto s = to_json(PipelineConfig{});
  s["solver"]["momentum"] = 0.9;
  EXPECT_THROW(config_from_json(s), Error);
}

TEST(PipelineConfig, Validation) {
  PipelineConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.screen_side(), 32u);
  cfg.group = 4;  // 128-pixel screen on a 96-pixel sensor
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.latent_size = 60;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.frame_len = 32;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Calibration, SeparatingThreshold) {
  const std::vector<double> correct{90, 95, 99}, wrong{1, 5, 20};
  EXPECT_DOUBLE_EQ(separating_threshold(correct, wrong), 55.0);
  const std::vector<double> overlap{10, 30};
  EXPECT_DOUBLE_EQ(separating_threshold(overlap, wrong), 10.0);
}
