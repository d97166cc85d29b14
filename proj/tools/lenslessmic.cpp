// lenslessmic: command-line front end. See README.md for a walkthrough.

#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "lenslessmic/cli.hpp"

using namespace lenslessmic;

namespace {

void add_common(CLI::App* app, cli::Common& c, bool with_mask = true) {
  app->add_option("--config", c.config, "run config JSON");
  app->add_option("--seed", c.seed, "master seed");
  app->add_option("--threads", c.threads, "worker threads");
  app->add_option("--books", c.codebooks, "codebook file (RVQ1)");
  if (with_mask) app->add_option("--mask-seed", c.mask_seed, "seed of the secret mask");
}

std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw Error(ErrorKind::invalid_argument, "bad W grid entry: " + item);
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lensless optical audio encryption simulator"};
  app.require_subcommand(1);

  cli::SynthOptions synth;
  auto* s = app.add_subcommand("synth", "generate synthetic test utterances as WAV files");
  add_common(s, synth.common, false);
  s->add_option("--out", synth.out_dir, "output directory")->required();
  s->add_option("-n,--count", synth.count, "number of utterances");
  s->add_option("--min-seconds", synth.min_seconds);
  s->add_option("--max-seconds", synth.max_seconds);

  cli::TrainOptions train;
  auto* t = app.add_subcommand("train-books", "train RVQ codebooks on a directory of WAVs");
  add_common(t, train.common, false);
  t->add_option("--corpus", train.corpus_dir, "directory of .wav files")->required();
  t->add_option("--out", train.out, "codebook file to write (default: config's codebooks)");

  cli::EncryptOptions enc;
  auto* e = app.add_subcommand("encrypt", "encrypt a WAV into an LLM1 container");
  add_common(e, enc.common);
  e->add_option("--in", enc.in_wav)->required();
  e->add_option("--out", enc.out)->required();

  cli::DecryptOptions dec;
  auto* d = app.add_subcommand("decrypt", "decrypt an LLM1 container into a WAV");
  add_common(d, dec.common);
  d->add_option("--in", dec.in_ct)->required();
  d->add_option("--out", dec.out_wav)->required();
  d->add_option("--report", dec.report, "write a JSON report");
  d->add_option("--reference", dec.reference, "original WAV, enables QM-k and frame metrics in the report");

  cli::AttackOptions attack;
  std::string grid;
  auto* a = app.add_subcommand("attack", "brute-force sweep over the fraction W of correct mask pixels");
  add_common(a, attack.common);
  a->add_option("--wavs", attack.wav_list, "text file listing WAV paths")->required();
  a->add_option("--grid", grid, "comma-separated W values in (0, 1]");
  a->add_option("--seeds", attack.seeds, "perturbations per W");
  a->add_option("--out", attack.out_csv)->required();

  cli::AuthOptions auth;
  auto* u = app.add_subcommand("auth", "authentication experiment: correct mask vs random masks");
  add_common(u, auth.common);
  u->add_option("--wavs", auth.wav_list)->required();
  u->add_option("--masks", auth.n_random_masks, "random masks per utterance");
  u->add_option("--out", auth.out_csv)->required();

  cli::CalibrateOptions cal;
  auto* c = app.add_subcommand("calibrate", "derive authentication thresholds");
  add_common(c, cal.common);
  c->add_option("--wavs", cal.wav_list)->required();
  c->add_option("--masks", cal.n_random_masks);
  c->add_option("--out", cal.out_json, "write thresholds as a config fragment");

  cli::KeyspaceOptions ks;
  auto* k = app.add_subcommand("keyspace", "key-space size for a mask");
  k->add_option("--n", ks.n, "mask pixels");
  k->add_option("--b", ks.b, "levels per pixel");
  k->add_option("--w", ks.w, "fraction of pixels the attacker must guess");
  k->add_option("--bits", ks.target_bits, "target key size");

  cli::ExportMaskOptions em;
  auto* x = app.add_subcommand("export-mask", "write the secret mask to a file (key material)");
  add_common(x, em.common);
  x->add_option("--out", em.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : cli::usage;
  }

  auto run = [&]() -> int {
    if (*s) return cli::cmd_synth(synth, std::cout);
    if (*t) return cli::cmd_train_books(train, std::cout);
    if (*e) return cli::cmd_encrypt(enc, std::cout);
    if (*d) return cli::cmd_decrypt(dec, std::cout);
    if (*a) {
      attack.grid = parse_grid(grid);
      return cli::cmd_attack(attack, std::cout);
    }
    if (*u) return cli::cmd_auth(auth, std::cout);
    if (*c) return cli::cmd_calibrate(cal, std::cout);
    if (*k) return cli::cmd_keyspace(ks, std::cout);
    if (*x) return cli::cmd_export_mask(em, std::cout);
    return cli::usage;
  };
  return cli::guarded(run, std::cerr);
}
