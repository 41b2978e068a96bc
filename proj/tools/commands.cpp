#include "commands.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "coe/checkpoint.hpp"
#include "coe/evaluator.hpp"
#include "coe/image.hpp"
#include "coe/noise.hpp"
#include "coe/trainer.hpp"
#include "coe/verify.hpp"
#include "manifest.hpp"

namespace coe::cli {

namespace fs = std::filesystem;

namespace {

std::string indexed(const char* prefix, std::size_t i, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%04zu%s", prefix, i, suffix);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error(dir.string() + ": cannot create directory: " + ec.message());
}

EvalGrid grids_for(const std::string& kind, std::size_t n) {
  if (n == 0) throw std::invalid_argument("grid size must be >= 1");
  EvalGrid grid;
  if (kind == "awgn" || kind == "both") grid = make_eval_grid(NoiseSource::AWGN, n);
  if (kind == "jpeg" || kind == "both") {
    auto j = make_eval_grid(NoiseSource::JPEG, n);
    grid.insert(grid.end(), j.begin(), j.end());
  }
  if (grid.empty()) throw std::invalid_argument("unknown grid kind '" + kind + "' (expected awgn, jpeg or both)");
  return grid;
}

std::vector<GrayImage> load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error(dir.string() + ": not a directory");
  auto images = load_pgm_dir(dir);
  if (images.empty()) throw std::runtime_error(dir.string() + ": no .pgm images found");
  return images;
}

// Grid file if given, else <data>/grid.csv if present, else generated grids.
EvalGrid resolve_grid(const fs::path& file, const fs::path& data, const std::string& kind, std::size_t n,
                      std::size_t n_images) {
  if (!file.empty()) return read_grid_csv(file);
  if (fs::exists(data / "grid.csv")) return read_grid_csv(data / "grid.csv");
  return grids_for(kind, n ? n : n_images);
}

void write_atomic(const fs::path& target, const std::function<void(const fs::path&)>& writer) {
  fs::path tmp = target;
  tmp += ".tmp";
  writer(tmp);
  fs::rename(tmp, target);
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os.setf(std::ios::scientific);
  os.precision(3);
  os << v;
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------- synth

int cmd_synth(const SynthArgs& a, const std::vector<std::string>& argv) {
  if (a.out.empty()) throw std::invalid_argument("--out is required");
  if (a.procedural > 0 && !a.input.empty()) throw std::invalid_argument("--procedural and --input are exclusive");
  if (a.procedural == 0 && a.input.empty() && a.grid.empty())
    throw std::invalid_argument("nothing to do: give --procedural N, --input DIR or --grid KIND");
  ensure_dir(a.out);

  std::vector<GrayImage> images;
  if (a.procedural > 0) {
    const SynthKind kind = parse_synth_kind(a.kind);
    if (a.size < 1) throw std::invalid_argument("--size must be >= 1");
    const std::uint64_t base = derive_seed(a.seed, static_cast<std::uint64_t>(Stream::Synth));
    for (std::size_t i = 0; i < a.procedural; ++i) {
      Rng rng(derive_seed(base, i));
      images.push_back(synth_image(kind, a.size, rng));
    }
  } else if (!a.input.empty()) {
    images = load_dataset(a.input);
  }
  for (std::size_t i = 0; i < images.size(); ++i) save_pgm(a.out / indexed("img_", i, ".pgm"), images[i]);

  std::map<std::string, std::string> config{{"kind", a.kind},
                                            {"size", std::to_string(a.size)},
                                            {"images", std::to_string(images.size())}};
  if (!a.grid.empty()) {
    if (!images.empty() && a.n > images.size())
      throw std::invalid_argument("--n " + std::to_string(a.n) + " exceeds the " + std::to_string(images.size()) +
                                  " images");
    const EvalGrid grid = grids_for(a.grid, a.n);
    write_grid_csv(a.out / "grid.csv", grid);
    config["grid"] = a.grid;
    config["grid_n"] = std::to_string(a.n);
    if (a.dump_noisy) {
      if (images.empty()) throw std::invalid_argument("--dump-noisy needs images");
      ensure_dir(a.out / "noisy");
      for (std::size_t r = 0; r < grid.size(); ++r)
        save_pgm(a.out / "noisy" / indexed("row_", r, ".pgm"),
                 grid_noisy_image(images[grid[r].image_index], grid[r].spec, a.seed, r));
    }
  } else if (a.dump_noisy) {
    throw std::invalid_argument("--dump-noisy needs --grid");
  }
  write_manifest(a.out, {"synth", argv, a.seed, config});
  std::cout << "wrote " << images.size() << " images" << (a.grid.empty() ? "" : " and grid.csv") << " to "
            << a.out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- train

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv) {
  if (a.data.empty() || a.out.empty()) throw std::invalid_argument("--data and --out are required");
  if (a.checkpoint_every < 1) throw std::invalid_argument("--checkpoint-every must be >= 1");
  const fs::path ckpt_dir = a.out / "checkpoints";
  const fs::path last = ckpt_dir / "last.ckpt";

  TrainConfig config;
  if (a.resume) {
    if (!fs::exists(a.out / "config.txt")) throw std::runtime_error((a.out / "config.txt").string() + ": missing, cannot resume");
    config.apply_kv(TrainConfig::read_kv_file(a.out / "config.txt"));
    for (const auto& [k, v] : a.overrides) {
      if (k != "threads") throw std::invalid_argument("--" + k + " cannot change a resumed run (only --threads can)");
      config.apply_kv({{k, v}});
    }
  } else {
    if (a.profile == "desk") config = TrainConfig::desk_profile();
    else if (a.profile == "paper") config = TrainConfig::paper_profile();
    else throw std::invalid_argument("unknown profile '" + a.profile + "' (expected desk or paper)");
    if (!a.config_file.empty()) config.apply_kv(TrainConfig::read_kv_file(a.config_file));
    config.apply_kv(a.overrides);
  }
  config.validate();

  Trainer trainer(config, load_dataset(a.data));
  if (!a.eval_data.empty()) {
    const auto eval_images = load_dataset(a.eval_data);
    const EvalGrid grid = resolve_grid(a.eval_grid, a.eval_data, "both", 0, eval_images.size());
    std::vector<EvalPair> pairs;
    for (std::size_t r = 0; r < grid.size(); ++r) {
      if (grid[r].image_index >= eval_images.size()) throw std::out_of_range("eval grid references a missing image");
      const GrayImage& clean = eval_images[grid[r].image_index];
      pairs.push_back({grid_noisy_image(clean, grid[r].spec, config.seed, r), clean});
    }
    trainer.set_eval_set(std::move(pairs));
  }

  ensure_dir(ckpt_dir);
  if (a.resume) {
    if (!fs::exists(last)) throw std::runtime_error(last.string() + ": missing, cannot resume");
    trainer.resume(load_checkpoint(last), TrainLog::read_csv(a.out / "train_log.csv", a.out / "iterations.csv"));
    if (!a.quiet) std::cerr << "resumed at epoch " << trainer.completed_epochs() << "\n";
  } else {
    config.write_file(a.out / "config.txt");
  }

  auto save = [&] {
    const Checkpoint ck = trainer.checkpoint();
    write_atomic(last, [&](const fs::path& p) { save_checkpoint(p, ck); });
    if (trainer.completed_epochs() == config.pretrain_epochs)
      write_atomic(ckpt_dir / "pretrain.ckpt", [&](const fs::path& p) { save_checkpoint(p, ck); });
    write_atomic(a.out / "train_log.csv", [&](const fs::path& p) { trainer.log().write_csv(p); });
    write_atomic(a.out / "iterations.csv", [&](const fs::path& p) { trainer.log().write_iterations_csv(p); });
  };

  int ran = 0;
  while (!trainer.done() && (a.max_epochs_this_run == 0 || ran < a.max_epochs_this_run)) {
    trainer.run_epoch();
    ++ran;
    const EpochRecord& e = trainer.log().epochs.back();
    if (!a.quiet) {
      std::cerr << "epoch " << e.epoch << (e.competition ? " compete" : " pretrain") << " wins";
      for (auto w : e.wins) std::cerr << " " << w;
      if (e.eval_psnr) std::cerr << " eval_psnr " << fmt(*e.eval_psnr, 3);
      std::cerr << "\n";
    }
    const int epoch = trainer.completed_epochs();
    if (epoch % a.checkpoint_every == 0 || epoch == config.pretrain_epochs || trainer.done()) save();
  }
  save();

  auto kv = config.to_kv();
  kv["completed_epochs"] = std::to_string(trainer.completed_epochs());
  write_manifest(a.out, {"train", argv, config.seed, kv});
  std::cout << "epochs " << trainer.completed_epochs() << "/" << config.total_epochs()
            << " effective_clusters " << trainer.log().effective_clusters() << "\n";
  return 0;
}

// ---------------------------------------------------------------- eval

int cmd_eval(const EvalArgs& a, const std::vector<std::string>& argv) {
  if (a.out.empty()) throw std::invalid_argument("--out is required");
  ensure_dir(a.out);
  std::map<std::string, std::string> config;

  std::optional<ModelBundle> bundle;
  if (!a.checkpoint.empty()) {
    bundle = ModelBundle::from_checkpoint(load_checkpoint(a.checkpoint));
    if (a.experts > 0 && a.experts != static_cast<int>(bundle->n_experts()))
      throw std::invalid_argument("checkpoint holds " + std::to_string(bundle->n_experts()) + " experts but --experts is " +
                                  std::to_string(a.experts));
    if (!a.expert.empty() && ExpertConfig::parse(a.expert) != bundle->expert_config)
      throw std::invalid_argument("checkpoint experts are " + bundle->expert_config.name() + " but --expert is " + a.expert);
    config["expert"] = bundle->expert_config.name();
    config["experts"] = std::to_string(bundle->n_experts());
  }

  if (!a.data.empty()) {
    if (!bundle) throw std::invalid_argument("--data needs --checkpoint");
    const auto images = load_dataset(a.data);
    const EvalGrid grid = resolve_grid(a.grid_file, a.data, a.grid_kind, a.n, images.size());
    EvalOptions opt;
    opt.threads = a.threads;
    if (a.dump_images) {
      ensure_dir(a.out / "images");
      opt.on_row = [&](std::size_t r, const GrayImage& noisy, const GrayImage& denoised) {
        save_pgm(a.out / "images" / indexed("row_", r, "_noisy.pgm"), noisy);
        save_pgm(a.out / "images" / indexed("row_", r, "_denoised.pgm"), denoised);
      };
    }
    const EvalReport report = evaluate_grid(*bundle, images, grid, a.seed, opt);
    report.write_csv(a.out / "eval_report.csv");
    report.write_aggregates_csv(a.out / "eval_aggregates.csv");
    for (const auto& g : report.aggregates())
      if (g.bucket == "all")
        std::cout << "source " << g.source << " images " << g.count << " psnr_noisy " << fmt(g.mean_psnr_noisy, 3)
                  << " psnr_denoised " << fmt(g.mean_psnr_denoised, 3) << " ssim " << fmt(g.mean_ssim_denoised, 4)
                  << " infinite_psnr " << g.infinite_psnr << "\n";
    config["grid_rows"] = std::to_string(grid.size());

    if (!a.assignment.empty()) {
      std::vector<NoiseSpec> levels;
      if (a.assignment == "awgn" || a.assignment == "both") levels = paper_assignment_levels(NoiseSource::AWGN);
      if (a.assignment == "jpeg" || a.assignment == "both") {
        auto j = paper_assignment_levels(NoiseSource::JPEG);
        levels.insert(levels.end(), j.begin(), j.end());
      }
      if (levels.empty()) throw std::invalid_argument("unknown --assignment '" + a.assignment + "'");
      const AssignmentGrid ag = assignment_grid(*bundle, images, levels, a.seed, a.threads);
      ag.write_csv(a.out / "assignment.csv");
      std::cout << "assignment agreement " << fmt(ag.agreement(), 4) << "\n";
    }
  } else if (!a.assignment.empty()) {
    throw std::invalid_argument("--assignment needs --data");
  }

  if (a.complexity) {
    Complexity c;
    std::string name;
    int n = 0;
    if (bundle) {
      c = effective_complexity(*bundle, a.width, a.height);
      name = bundle->expert_config.name();
      n = static_cast<int>(bundle->n_experts());
    } else {
      if (a.expert.empty() || a.experts < 1) throw std::invalid_argument("--complexity without --checkpoint needs --expert and --experts");
      const ExpertConfig ec = ExpertConfig::parse(a.expert);
      c = effective_complexity(ec, a.experts, a.width, a.height);
      name = ec.name();
      n = a.experts;
    }
    std::ofstream out(a.out / "complexity.csv");
    out << "expert,n_experts,width,height,params_expert,params_gate,params_total,area_ratio,params_effective\n";
    out << name << "," << n << "," << a.width << "," << a.height << "," << c.params_expert << "," << c.params_gate << ","
        << c.params_total << "," << fmt(c.area_ratio, 8) << "," << fmt(c.params_effective, 3) << "\n";
    if (!out) throw std::runtime_error("cannot write complexity.csv");
    std::cout << "complexity " << name << " x" << n << " at " << a.width << "x" << a.height << ": total "
              << c.params_total << " effective " << fmt(c.params_effective, 1) << "\n";
  }
  if (a.data.empty() && !a.complexity) throw std::invalid_argument("nothing to do: give --data or --complexity");

  write_manifest(a.out, {"eval", argv, a.seed, config});
  return 0;
}

// ---------------------------------------------------------------- verify

int cmd_verify(const VerifyArgs& a, const std::vector<std::string>& argv) {
  const auto results = run_verification({a.seed, a.inject_conv_sign_fault});
  bool ok = true;
  std::ostringstream csv;
  csv << "check,passed,max_rel_error,detail\n";
  for (const auto& r : results) {
    ok = ok && r.passed;
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name;
    if (!std::isnan(r.max_rel_error)) std::cout << " max_rel_err=" << r.max_rel_error;
    std::cout << " (" << r.detail << ")\n";
    csv << r.name << "," << (r.passed ? 1 : 0) << "," << (std::isnan(r.max_rel_error) ? std::string{} : sci(r.max_rel_error))
        << ",\"" << r.detail << "\"\n";
  }
  if (!a.out.empty()) {
    ensure_dir(a.out);
    std::ofstream(a.out / "verify_report.csv") << csv.str();
    write_manifest(a.out, {"verify", argv, a.seed, {{"inject_conv_sign_fault", a.inject_conv_sign_fault ? "true" : "false"}}});
  }
  std::cout << (ok ? "all checks passed" : "verification FAILED") << "\n";
  return ok ? 0 : 1;
}

}  // namespace coe::cli
