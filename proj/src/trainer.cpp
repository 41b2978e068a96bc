#include "coe/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "coe/evaluator.hpp"

namespace coe {

// ---------------------------------------------------------------- config

TrainConfig TrainConfig::desk_profile() { return TrainConfig{}; }

TrainConfig TrainConfig::paper_profile() {
  TrainConfig c;
  c.n_experts = 7;
  c.expert = {5, 16};
  c.patch_size = 64;
  c.patches_per_batch = 16;
  c.pretrain_epochs = 200;
  c.compete_epochs = 400;
  c.iterations_per_epoch = 200;
  return c;
}

void TrainConfig::validate() const {
  if (n_experts < 1) throw std::invalid_argument("experts must be >= 1");
  expert.validate();
  if (patch_size < 1) throw std::invalid_argument("patch-size must be >= 1");
  if (patches_per_batch < 1) throw std::invalid_argument("patches must be >= 1");
  if (pretrain_epochs < 1) throw std::invalid_argument("pretrain-epochs must be >= 1");
  if (compete_epochs < 0) throw std::invalid_argument("compete-epochs must be >= 0");
  if (iterations_per_epoch < 1) throw std::invalid_argument("iterations must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
  NoiseMix::parse(noise);
}

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw std::invalid_argument("config key '" + key + "' expects a boolean, got '" + v + "'");
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size() || x < 0) throw std::invalid_argument("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
  return static_cast<Int>(x);
}

}  // namespace

std::map<std::string, std::string> TrainConfig::to_kv() const {
  return {{"experts", std::to_string(n_experts)},
          {"expert", expert.name()},
          {"patch-size", std::to_string(patch_size)},
          {"patches", std::to_string(patches_per_batch)},
          {"pretrain-epochs", std::to_string(pretrain_epochs)},
          {"compete-epochs", std::to_string(compete_epochs)},
          {"iterations", std::to_string(iterations_per_epoch)},
          {"lr", fmt_double(lr)},
          {"seed", std::to_string(seed)},
          {"gate", train_gate ? "true" : "false"},
          {"reset-adam", reset_optimizer_on_clone ? "true" : "false"},
          {"noise", noise},
          {"threads", std::to_string(threads)}};
}

void TrainConfig::apply_kv(const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) {
    if (k == "experts") n_experts = parse_int<int>(k, v);
    else if (k == "expert") expert = ExpertConfig::parse(v);
    else if (k == "patch-size") patch_size = parse_int<std::size_t>(k, v);
    else if (k == "patches") patches_per_batch = parse_int<std::size_t>(k, v);
    else if (k == "pretrain-epochs") pretrain_epochs = parse_int<int>(k, v);
    else if (k == "compete-epochs") compete_epochs = parse_int<int>(k, v);
    else if (k == "iterations") iterations_per_epoch = parse_int<int>(k, v);
    else if (k == "lr") lr = std::stod(v);
    else if (k == "seed") seed = parse_int<std::uint64_t>(k, v);
    else if (k == "gate") train_gate = parse_bool(k, v);
    else if (k == "reset-adam") reset_optimizer_on_clone = parse_bool(k, v);
    else if (k == "noise") noise = v;
    else if (k == "threads") threads = parse_int<int>(k, v);
    else throw std::invalid_argument("unknown config key '" + k + "'");
  }
}

void TrainConfig::write_file(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  for (const auto& [k, v] : to_kv()) out << k << "=" << v << "\n";
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

std::map<std::string, std::string> TrainConfig::read_kv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open config file");
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t"), b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

// ---------------------------------------------------------------- steps

PatchBatch sample_patch_batch(const GrayImage& noisy, const GrayImage& clean, std::size_t n_patches,
                              std::size_t patch_size, Rng& rng) {
  if (noisy.width != clean.width || noisy.height != clean.height)
    throw std::invalid_argument("noisy and clean images differ in size");
  if (noisy.width < patch_size || noisy.height < patch_size)
    throw ImageTooSmallError("image " + std::to_string(noisy.width) + "x" + std::to_string(noisy.height) +
                             " is smaller than the " + std::to_string(patch_size) + "px patch size");
  if (n_patches == 0) throw std::invalid_argument("a batch needs at least one patch");
  const std::size_t s = patch_size;
  PatchBatch b;
  b.noisy = Tensor(Shape{n_patches, 1, s, s});
  b.clean = Tensor(Shape{n_patches, 1, s, s});
  for (std::size_t k = 0; k < n_patches; ++k) {
    const auto x0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(noisy.width - s)));
    const auto y0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(noisy.height - s)));
    b.origins.emplace_back(x0, y0);
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        b.noisy.at(k, 0, y, x) = noisy(x0 + x, y0 + y);
        b.clean.at(k, 0, y, x) = clean(x0 + x, y0 + y);
      }
  }
  return b;
}

namespace {

// Runs fn(j) for j in [0, n) on up to `threads` workers. Each j writes only
// its own output slot, so results do not depend on scheduling.
template <typename Fn>
void for_each_expert(std::size_t n, int threads, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, std::min<int>(threads, static_cast<int>(n))));
  if (workers <= 1) {
    for (std::size_t j = 0; j < n; ++j) fn(j);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t j = w; j < n; j += workers) fn(j);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void check_batch(const PatchBatch& batch) {
  expect_rank(batch.noisy, 4, "batch noisy");
  expect_shape(batch.clean, batch.noisy.shape(), "batch clean");
}

}  // namespace

std::vector<double> compute_loss_vector(const std::vector<ExpertNet>& experts, const PatchBatch& batch, int threads) {
  check_batch(batch);
  if (experts.empty()) throw std::invalid_argument("no experts to evaluate");
  for (const auto& e : experts)
    if (e.config() != experts.front().config()) throw std::invalid_argument("experts do not share one architecture");
  std::vector<double> losses(experts.size());
  for_each_expert(experts.size(), threads,
                  [&](std::size_t j) { losses[j] = mse_value(experts[j].denoise(batch.noisy), batch.clean); });
  return losses;
}

std::size_t winner(const std::vector<double>& losses) {
  if (losses.empty()) throw std::invalid_argument("winner of an empty loss vector");
  std::size_t best = 0;
  for (std::size_t j = 0; j < losses.size(); ++j) {
    if (std::isnan(losses[j])) throw NonFiniteError("loss of expert " + std::to_string(j) + " is NaN");
    if (losses[j] < losses[best]) best = j;
  }
  return best;
}

double pretrain_step(ExpertNet& expert, const PatchBatch& batch) {
  check_batch(batch);
  ForwardCache<float> cache;
  const Tensor out = expert.denoise(batch.noisy, &cache);
  auto loss = mse_loss(out, batch.clean);
  if (!std::isfinite(loss.loss)) throw NonFiniteError("non-finite training loss " + std::to_string(loss.loss));
  expert.update(cache, loss.grad);
  return loss.loss;
}

std::vector<ExpertNet> clone_experts(const ExpertNet& source, int n, bool reset_source) {
  if (n < 1) throw std::invalid_argument("clone_experts needs n >= 1");
  std::vector<ExpertNet> out(static_cast<std::size_t>(n), source);
  for (std::size_t j = 0; j < out.size(); ++j)
    if (j > 0 || reset_source) out[j].reset_optimizer();
  return out;
}

StepResult competition_step(std::vector<ExpertNet>& experts, GateNet* gate, const PatchBatch& batch, int threads) {
  StepResult r;
  r.losses = compute_loss_vector(experts, batch, threads);
  for (std::size_t j = 0; j < r.losses.size(); ++j)
    if (!std::isfinite(r.losses[j]))
      throw NonFiniteError("non-finite loss for expert " + std::to_string(j) + ": " + std::to_string(r.losses[j]));
  r.winner = winner(r.losses);
  r.winning_loss = r.losses[r.winner];

  ExpertNet& w = experts[r.winner];
  ForwardCache<float> cache;
  const Tensor out = w.denoise(batch.noisy, &cache);
  auto loss = mse_loss(out, batch.clean);
  w.update(cache, loss.grad);

  r.gate_loss = std::numeric_limits<double>::quiet_NaN();
  if (gate) {
    if (gate->n_experts() != static_cast<int>(experts.size()))
      throw std::invalid_argument("gate width " + std::to_string(gate->n_experts()) + " does not match " +
                                  std::to_string(experts.size()) + " experts");
    r.gate_loss = gate->train_step(batch.noisy, static_cast<int>(r.winner));
  }
  return r;
}

// ---------------------------------------------------------------- log

std::size_t TrainLog::effective_clusters() const {
  if (epochs.empty()) return 0;
  std::size_t n = 0;
  for (auto w : epochs.back().wins) n += w > 0 ? 1 : 0;
  return n;
}

namespace {
std::string fmt_opt(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_opt(const std::string& s) {
  return s.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
}
}  // namespace

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << "epoch,expert_id,wins,mean_winning_loss,eval_psnr\n";
  for (const auto& e : epochs)
    for (std::size_t j = 0; j < e.wins.size(); ++j)
      out << e.epoch << "," << j << "," << e.wins[j] << "," << fmt_opt(e.mean_winning_loss[j]) << ","
          << (e.eval_psnr ? fmt_opt(*e.eval_psnr) : std::string{}) << "\n";
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

void TrainLog::write_iterations_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << "epoch,iteration,image_index,source,level,winner,winning_loss,gate_loss\n";
  for (const auto& r : iterations)
    out << r.epoch << "," << r.iteration << "," << r.image_index << "," << noise_source_name(r.spec.source) << ","
        << fmt_opt(r.spec.level) << "," << r.winner << "," << fmt_opt(r.winning_loss) << "," << fmt_opt(r.gate_loss)
        << "\n";
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

TrainLog TrainLog::read_csv(const std::filesystem::path& epochs_csv, const std::filesystem::path& iterations_csv) {
  TrainLog log;
  {
    std::ifstream in(epochs_csv);
    if (!in) throw std::runtime_error(epochs_csv.string() + ": cannot open");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto f = split_csv(line);
      if (f.size() != 5) throw std::runtime_error(epochs_csv.string() + ": malformed row '" + line + "'");
      const int epoch = std::stoi(f[0]);
      if (log.epochs.empty() || log.epochs.back().epoch != epoch) {
        log.epochs.emplace_back();
        log.epochs.back().epoch = epoch;
      }
      auto& e = log.epochs.back();
      e.wins.push_back(std::stoull(f[2]));
      e.mean_winning_loss.push_back(parse_opt(f[3]));
      if (!f[4].empty()) e.eval_psnr = std::stod(f[4]);
    }
  }
  {
    std::ifstream in(iterations_csv);
    if (!in) throw std::runtime_error(iterations_csv.string() + ": cannot open");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto f = split_csv(line);
      if (f.size() != 8) throw std::runtime_error(iterations_csv.string() + ": malformed row '" + line + "'");
      IterationRecord r;
      r.epoch = std::stoi(f[0]);
      r.iteration = std::stoi(f[1]);
      r.image_index = std::stoull(f[2]);
      r.spec = {f[3] == "jpeg" ? NoiseSource::JPEG : NoiseSource::AWGN, std::stod(f[4])};
      r.winner = std::stoull(f[5]);
      r.winning_loss = parse_opt(f[6]);
      r.gate_loss = parse_opt(f[7]);
      log.iterations.push_back(r);
    }
  }
  return log;
}

void TrainLog::truncate(int epoch) {
  std::erase_if(epochs, [&](const EpochRecord& e) { return e.epoch > epoch; });
  std::erase_if(iterations, [&](const IterationRecord& r) { return r.epoch > epoch; });
}

// ---------------------------------------------------------------- trainer

Trainer::Trainer(TrainConfig config, std::vector<GrayImage> dataset)
    : config_(std::move(config)), dataset_(std::move(dataset)) {
  config_.validate();
  mix_ = NoiseMix::parse(config_.noise);
  if (dataset_.empty()) throw std::invalid_argument("training dataset is empty");
  for (std::size_t i = 0; i < dataset_.size(); ++i)
    if (dataset_[i].width < config_.patch_size || dataset_[i].height < config_.patch_size)
      throw ImageTooSmallError("training image " + std::to_string(i) + " is smaller than the patch size");
  Rng init(derive_seed(config_.seed, static_cast<std::uint64_t>(Stream::Init)));
  experts_.push_back(build_expert(config_.expert, init, config_.lr));
  gate_ = build_gate(config_.n_experts, init, config_.lr);
  rng_ = Rng(derive_seed(config_.seed, static_cast<std::uint64_t>(Stream::Data)));
}

void Trainer::set_eval_set(std::vector<EvalPair> eval) { eval_ = std::move(eval); }

void Trainer::set_iteration_hook(std::function<void(const IterationRecord&, const Trainer&)> hook) {
  hook_ = std::move(hook);
}

void Trainer::start_competition() {
  experts_ = clone_experts(experts_.front(), config_.n_experts, config_.reset_optimizer_on_clone);
}

void Trainer::run_epoch() {
  if (done()) return;
  if (epoch_ == config_.pretrain_epochs && experts_.size() == 1) start_competition();
  const bool compete = in_competition();
  const int epoch = epoch_ + 1;
  const std::size_t width = compete ? experts_.size() : 1;

  EpochRecord rec;
  rec.epoch = epoch;
  rec.competition = compete;
  rec.wins.assign(width, 0);
  rec.mean_winning_loss.assign(width, 0.0);
  for (int it = 0; it < config_.iterations_per_epoch; ++it) {
    const auto idx = static_cast<std::size_t>(rng_.uniform_int(0, static_cast<std::int64_t>(dataset_.size()) - 1));
    const NoiseSpec spec = mix_.sample(rng_);
    const GrayImage noisy = apply_noise(dataset_[idx], spec, rng_);
    PatchBatch batch = sample_patch_batch(noisy, dataset_[idx], config_.patches_per_batch, config_.patch_size, rng_);
    batch.image_index = idx;
    batch.spec = spec;

    IterationRecord ir{epoch, it, idx, spec};
    if (compete) {
      const StepResult s = competition_step(experts_, config_.train_gate ? &gate_ : nullptr, batch, config_.threads);
      ir.winner = s.winner;
      ir.winning_loss = s.winning_loss;
      ir.gate_loss = s.gate_loss;
    } else {
      ir.winner = 0;
      ir.winning_loss = pretrain_step(experts_.front(), batch);
      ir.gate_loss = std::numeric_limits<double>::quiet_NaN();
    }
    ++rec.wins[ir.winner];
    rec.mean_winning_loss[ir.winner] += ir.winning_loss;
    log_.iterations.push_back(ir);
    if (hook_) hook_(ir, *this);
  }
  for (std::size_t j = 0; j < width; ++j)
    rec.mean_winning_loss[j] =
        rec.wins[j] ? rec.mean_winning_loss[j] / static_cast<double>(rec.wins[j]) : std::numeric_limits<double>::quiet_NaN();

  if (!eval_.empty()) {
    double acc = 0.0;
    std::size_t finite = 0;
    for (const auto& pair : eval_) {
      const GrayImage out = compete ? denoise_blind(experts_, gate_, pair.noisy).image
                                    : clamp01(from_tensor(experts_.front().denoise(to_tensor(pair.noisy))));
      const double p = psnr(out, pair.clean);
      if (std::isfinite(p)) {
        acc += p;
        ++finite;
      }
    }
    if (finite) rec.eval_psnr = acc / static_cast<double>(finite);
  }
  log_.epochs.push_back(std::move(rec));
  epoch_ = epoch;
}

void Trainer::run(const std::function<void(const Trainer&)>& on_epoch_end) {
  while (!done()) {
    run_epoch();
    if (on_epoch_end) on_epoch_end(*this);
  }
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.expert_config = config_.expert;
  c.experts = experts_;
  c.gate = gate_;
  c.epoch = static_cast<std::uint64_t>(epoch_);
  c.seed = config_.seed;
  c.rng_state = rng_.state();
  for (const auto& [k, v] : config_.to_kv()) c.metadata["config." + k] = v;
  return c;
}

void Trainer::resume(const Checkpoint& ckpt, TrainLog log) {
  if (ckpt.expert_config != config_.expert)
    throw std::invalid_argument("checkpoint holds " + ckpt.expert_config.name() + " experts, config asks for " +
                                config_.expert.name());
  if (!ckpt.gate || ckpt.gate->n_experts() != config_.n_experts)
    throw std::invalid_argument("checkpoint gate width does not match experts=" + std::to_string(config_.n_experts));
  const int epoch = static_cast<int>(ckpt.epoch);
  const std::size_t expected = epoch > config_.pretrain_epochs ? static_cast<std::size_t>(config_.n_experts) : 1;
  if (ckpt.experts.size() != expected)
    throw std::invalid_argument("checkpoint at epoch " + std::to_string(epoch) + " holds " +
                                std::to_string(ckpt.experts.size()) + " experts, expected " + std::to_string(expected));
  experts_ = ckpt.experts;
  gate_ = *ckpt.gate;
  rng_.set_state(ckpt.rng_state);
  epoch_ = epoch;
  log.truncate(epoch);
  if (static_cast<int>(log.epochs.size()) != epoch)
    throw std::invalid_argument("training log holds " + std::to_string(log.epochs.size()) + " epochs, checkpoint is at " +
                                std::to_string(epoch));
  for (auto& e : log.epochs) e.competition = e.epoch > config_.pretrain_epochs;
  log_ = std::move(log);
}

TrainResult train(const TrainConfig& config, const std::vector<GrayImage>& dataset) {
  Trainer t(config, dataset);
  t.run();
  return {t.experts(), t.gate(), t.log()};
}

}  // namespace coe
