#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace coe::cli {

struct SynthArgs {
  std::filesystem::path out;
  std::filesystem::path input;
  std::size_t procedural = 0;
  std::size_t size = 96;
  std::string kind = "mixed";
  std::uint64_t seed = 0;
  std::string grid;  // "", "awgn", "jpeg" or "both"
  std::size_t n = 68;
  bool dump_noisy = false;
};

struct TrainArgs {
  std::filesystem::path data;
  std::filesystem::path out;
  std::filesystem::path config_file;
  std::string profile = "desk";
  std::map<std::string, std::string> overrides;  // config keys set on the command line
  bool resume = false;
  int checkpoint_every = 10;
  int max_epochs_this_run = 0;
  std::filesystem::path eval_data;
  std::filesystem::path eval_grid;
  bool quiet = false;
};

struct EvalArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::filesystem::path grid_file;
  std::string grid_kind = "both";
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::filesystem::path out;
  std::string assignment;
  bool complexity = false;
  std::size_t width = 481;
  std::size_t height = 321;
  int experts = 0;
  std::string expert;
  bool dump_images = false;
  int threads = 1;
};

struct VerifyArgs {
  std::uint64_t seed = 0;
  bool inject_conv_sign_fault = false;
  std::filesystem::path out;
};

int cmd_synth(const SynthArgs& args, const std::vector<std::string>& argv);
int cmd_train(const TrainArgs& args, const std::vector<std::string>& argv);
int cmd_eval(const EvalArgs& args, const std::vector<std::string>& argv);
int cmd_verify(const VerifyArgs& args, const std::vector<std::string>& argv);

}  // namespace coe::cli
