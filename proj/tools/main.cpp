#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "commands.hpp"

using namespace coe::cli;

namespace {

// Config keys that can be given as --key VALUE on the train command line.
const char* const kConfigKeys[] = {"experts",    "expert",     "patch-size", "patches", "pretrain-epochs",
                                   "compete-epochs", "iterations", "lr",   "seed",    "gate",
                                   "reset-adam", "noise",      "threads"};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  CLI::App app{"Competition of experts for blind image denoising"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write a clean image set, evaluation grid and manifest");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--procedural", synth.procedural, "Number of procedural images to generate");
  s->add_option("--size", synth.size, "Side of procedural images");
  s->add_option("--kind", synth.kind, "gradient, checker, perlin or mixed");
  s->add_option("--seed", synth.seed, "Run seed");
  s->add_option("--input", synth.input, "Directory of 8-bit PGM images to import");
  s->add_option("--grid", synth.grid, "Write grid.csv: awgn, jpeg or both");
  s->add_option("--n", synth.n, "Images per grid");
  s->add_flag("--dump-noisy", synth.dump_noisy, "Also write the noisy grid images");

  TrainArgs train;
  std::map<std::string, std::string> train_values;
  bool no_gate = false;
  auto* t = app.add_subcommand("train", "Pretrain, clone and run the competition");
  t->add_option("--data", train.data, "Directory of clean training images")->required();
  t->add_option("--out", train.out, "Run directory")->required();
  t->add_option("--config", train.config_file, "key=value config file");
  t->add_option("--profile", train.profile, "Base profile: desk or paper");
  t->add_flag("--resume", train.resume, "Continue from <out>/checkpoints/last.ckpt");
  t->add_option("--checkpoint-every", train.checkpoint_every, "Epochs between checkpoints");
  t->add_option("--max-epochs-this-run", train.max_epochs_this_run, "Stop after this many epochs (0 = no limit)");
  t->add_option("--eval-data", train.eval_data, "Held-out clean images for per-epoch PSNR");
  t->add_option("--eval-grid", train.eval_grid, "Grid CSV for --eval-data");
  t->add_flag("--quiet", train.quiet, "No per-epoch progress");
  t->add_flag("--no-gate", no_gate, "Same as --gate false");
  std::map<std::string, CLI::Option*> key_opts;
  for (const char* key : kConfigKeys) key_opts[key] = t->add_option(std::string("--") + key, train_values[key], "config key");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Blind-denoise an evaluation grid and report metrics");
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint file");
  e->add_option("--data", eval.data, "Directory of clean test images");
  e->add_option("--grid", eval.grid_file, "Grid CSV (default <data>/grid.csv, else generated)");
  e->add_option("--grid-kind", eval.grid_kind, "Generated grid: awgn, jpeg or both");
  e->add_option("--n", eval.n, "Generated grid size (default: number of images)");
  e->add_option("--seed", eval.seed, "Noise seed");
  e->add_option("--out", eval.out, "Output directory")->required();
  e->add_option("--assignment", eval.assignment, "Oracle/routed assignment grid: awgn, jpeg or both");
  e->add_flag("--complexity", eval.complexity, "Write parameter accounting");
  e->add_option("--width", eval.width, "Image width for --complexity");
  e->add_option("--height", eval.height, "Image height for --complexity");
  e->add_option("--experts", eval.experts, "Expected expert count");
  e->add_option("--expert", eval.expert, "Expert architecture, e.g. d5c16");
  e->add_flag("--dump-images", eval.dump_images, "Write noisy and denoised PGMs");
  e->add_option("--threads", eval.threads, "Worker threads");

  VerifyArgs verify;
  auto* v = app.add_subcommand("verify", "Gradient checks and invariant suite");
  v->add_option("--seed", verify.seed, "Seed for the random fixtures");
  v->add_flag("--inject-conv-sign-fault", verify.inject_conv_sign_fault, "Negate the conv weight gradient");
  v->add_option("--out", verify.out, "Also write verify_report.csv and a manifest here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  try {
    if (*s) return cmd_synth(synth, args);
    if (*t) {
      for (const auto& [key, opt] : key_opts)
        if (opt->count() > 0) train.overrides[key] = train_values[key];
      if (no_gate) train.overrides["gate"] = "false";
      return cmd_train(train, args);
    }
    if (*e) return cmd_eval(eval, args);
    if (*v) return cmd_verify(verify, args);
  } catch (const std::exception& ex) {
    std::cerr << "coe: error: " << ex.what() << "\n";
    return 1;
  }
  return 1;
}
