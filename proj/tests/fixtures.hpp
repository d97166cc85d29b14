#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lenslessmic/io.hpp"
#include "lenslessmic/pipeline.hpp"
#include "lenslessmic/synth.hpp"

namespace lenslessmic::testing {

// Training utterances use seeds from 1000 up; evaluation utterances use 9000 up.
inline codec::Codebooks train_books(const pipeline::PipelineConfig& cfg, std::size_t utterances,
                                    std::uint64_t train_seed = 5) {
  std::vector<codec::LatentSequence> corpus;
  for (std::size_t i = 0; i < utterances; ++i)
    corpus.push_back(codec::encode_audio(synth::utterance(1000 + i), cfg.frame_len, cfg.latent_size,
                                         cfg.transform_seed, cfg.sample_rate));
  return codec::train_codebooks(corpus, cfg.codebooks, cfg.codebook_size, train_seed);
}

// Desk codebooks trained once and cached in the temp directory, since every
// discovered test runs in its own process.
inline codec::Codebooks desk_books(std::size_t utterances = 40) {
  const pipeline::PipelineConfig cfg;
  const auto path = std::filesystem::temp_directory_path() /
                    ("lenslessmic_desk_books_" + std::to_string(utterances) + ".rvq");
  if (std::filesystem::exists(path)) {
    try {
      return io::read_codebooks(path).books;
    } catch (const Error&) {
    }
  }
  auto books = train_books(cfg, utterances);
  io::write_codebooks(path, {books, static_cast<std::uint32_t>(cfg.frame_len), cfg.sample_rate, cfg.transform_seed});
  return books;
}

inline std::vector<double> eval_utterance(std::size_t i, double seconds) {
  return synth::utterance(9000 + i, {seconds, seconds});
}

}  // namespace lenslessmic::testing
