#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>

#include "coe/trainer.hpp"
#include "helpers.hpp"

using namespace coe;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.n_experts = 2;
  c.expert = {2, 2};
  c.patch_size = 8;
  c.patches_per_batch = 2;
  c.pretrain_epochs = 2;
  c.compete_epochs = 2;
  c.iterations_per_epoch = 5;
  c.noise = "awgn:5,50";
  c.seed = 3;
  return c;
}

std::vector<GrayImage> tiny_dataset() {
  return {testing::textured(24, 1), testing::textured(24, 2), testing::textured(24, 3)};
}

PatchBatch batch_from(std::uint64_t seed, std::size_t n = 4, std::size_t s = 12, double sigma = 25.0) {
  const GrayImage clean = testing::textured(32, seed);
  Rng rng(seed + 100);
  const GrayImage noisy = add_awgn(clean, sigma, rng);
  return sample_patch_batch(noisy, clean, n, s, rng);
}

}  // namespace

TEST_CASE("patch batches cut aligned windows") {
  const GrayImage clean = testing::textured(20, 1);
  GrayImage noisy = clean;
  for (auto& v : noisy.pixels) v += 1.0f;
  Rng rng(0);
  const PatchBatch b = sample_patch_batch(noisy, clean, 6, 5, rng);
  CHECK(b.noisy.shape() == Shape{6, 1, 5, 5});
  CHECK(b.clean.shape() == Shape{6, 1, 5, 5});
  REQUIRE(b.origins.size() == 6);
  for (std::size_t k = 0; k < 6; ++k) {
    const auto [x0, y0] = b.origins[k];
    CHECK(x0 + 5 <= 20);
    CHECK(y0 + 5 <= 20);
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 5; ++x) {
        CHECK(b.clean.at(k, 0, y, x) == clean(x0 + x, y0 + y));
        CHECK(b.noisy.at(k, 0, y, x) == b.clean.at(k, 0, y, x) + 1.0f);
      }
  }
}

TEST_CASE("patch sampling rejects small images and covers every offset") {
  const GrayImage img = testing::textured(10, 2);
  Rng rng(1);
  CHECK_THROWS_AS(sample_patch_batch(img, img, 1, 11, rng), ImageTooSmallError);
  CHECK_THROWS(sample_patch_batch(img, crop(img, 0, 0, 9, 10), 1, 4, rng));
  CHECK(sample_patch_batch(img, img, 1, 10, rng).origins[0] == std::pair<std::size_t, std::size_t>{0, 0});
  std::vector<int> seen(3, 0);
  for (int i = 0; i < 300; ++i) ++seen[sample_patch_batch(img, img, 1, 8, rng).origins[0].first];
  for (int s : seen) CHECK(s > 50);
}

TEST_CASE("loss vector is each expert's MSE on the batch") {
  Rng rng(2);
  std::vector<ExpertNet> experts{build_expert({3, 4}, rng), build_expert({3, 4}, rng), build_expert({3, 4}, rng)};
  const PatchBatch b = batch_from(5);
  const auto losses = compute_loss_vector(experts, b);
  REQUIRE(losses.size() == 3);
  for (std::size_t j = 0; j < 3; ++j) {
    const Tensor out = experts[j].denoise(b.noisy);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += (double(out[i]) - b.clean[i]) * (double(out[i]) - b.clean[i]);
    CHECK(losses[j] == doctest::Approx(s / double(out.size())).epsilon(1e-6));
  }
  CHECK(compute_loss_vector(experts, b, 3) == losses);
  CHECK_THROWS(compute_loss_vector({}, b));
}

TEST_CASE("winner picks the smallest loss and the smallest index on ties") {
  CHECK(winner({0.3, 0.1, 0.2}) == 1);
  CHECK(winner({0.5, 0.2, 0.2, 0.7}) == 1);
  CHECK(winner({1.0, 1.0, 1.0}) == 0);
  CHECK(winner({std::numeric_limits<double>::infinity(), 2.0}) == 1);
  CHECK(winner({4.0}) == 0);
  CHECK_THROWS(winner({}));
  CHECK_THROWS_AS(winner({0.1, std::nan("")}), NonFiniteError);
}

TEST_CASE("pretraining memorizes a fixed batch") {
  Rng rng(3);
  ExpertNet e = build_expert({3, 8}, rng, 1e-3);
  const PatchBatch b = batch_from(6, 4, 12, 30.0);
  const double first = pretrain_step(e, b);
  double last = first;
  for (int i = 0; i < 300; ++i) last = pretrain_step(e, b);
  CHECK(last < 0.2 * first);
}

TEST_CASE("cloned experts are identical copies with fresh optimizers") {
  Rng rng(4);
  ExpertNet e = build_expert({3, 4}, rng);
  pretrain_step(e, batch_from(1));
  const auto clones = clone_experts(e, 3);
  REQUIRE(clones.size() == 3);
  for (const auto& c : clones) {
    CHECK(c.param_hash() == e.param_hash());
    CHECK(c.optimizer()[0].step_count == 0);
  }
  const auto kept = clone_experts(e, 2, false);
  CHECK(kept[0].optimizer()[0].step_count == 1);
  CHECK(kept[1].optimizer()[0].step_count == 0);
  CHECK_THROWS(clone_experts(e, 0));
  // Identical clones tie on any batch, so the first one wins.
  CHECK(winner(compute_loss_vector(clones, batch_from(9))) == 0);
}

TEST_CASE("competition updates only the winner and labels the gate with it") {
  Rng rng(5);
  std::vector<ExpertNet> experts{build_expert({3, 4}, rng), build_expert({3, 4}, rng), build_expert({3, 4}, rng)};
  GateNet gate = build_gate(3, rng);
  const PatchBatch b = batch_from(7);
  std::vector<std::uint64_t> before;
  for (const auto& e : experts) before.push_back(e.param_hash());
  const auto expected = compute_loss_vector(experts, b);
  const auto gate_before = gate.param_hash();

  const StepResult r = competition_step(experts, &gate, b);
  CHECK(r.losses == expected);
  CHECK(r.winner == winner(expected));
  CHECK(r.winning_loss == expected[r.winner]);
  for (std::size_t j = 0; j < 3; ++j) {
    if (j == r.winner) CHECK(experts[j].param_hash() != before[j]);
    else CHECK(experts[j].param_hash() == before[j]);
  }
  CHECK(gate.param_hash() != gate_before);
  CHECK(std::isfinite(r.gate_loss));


  const StepResult no_gate = competition_step(experts, nullptr, b);
  CHECK(std::isnan(no_gate.gate_loss));
  GateNet wrong = build_gate(2, rng);
  CHECK_THROWS(competition_step(experts, &wrong, b));
}

TEST_CASE("gate loss matches a direct cross-entropy of the winner label") {
  Rng rng(6);
  std::vector<ExpertNet> experts{build_expert({3, 4}, rng), build_expert({3, 4}, rng)};
  GateNet gate = build_gate(2, rng);
  const PatchBatch b = batch_from(8);
  const Tensor z = gate.logits(b.noisy);
  const std::size_t w = winner(compute_loss_vector(experts, b));
  double ce = 0.0;
  for (std::size_t n = 0; n < z.dim(0); ++n) {
    const double a = z[n * 2], c = z[n * 2 + 1];
    const double m = std::max(a, c);
    const double lse = m + std::log(std::exp(a - m) + std::exp(c - m));
    ce += lse - z[n * 2 + w];
  }
  ce /= double(z.dim(0));
  const StepResult r = competition_step(experts, &gate, b);
  CHECK(r.gate_loss == doctest::Approx(ce).epsilon(1e-5));
}

TEST_CASE("fresh gate loss is near ln N'") {
  Rng rng(7);
  std::vector<ExpertNet> experts;
  for (int i = 0; i < 7; ++i) experts.push_back(build_expert({2, 2}, rng));
  GateNet gate = build_gate(7, rng);
  const StepResult r = competition_step(experts, &gate, batch_from(2));
  CHECK(std::abs(r.gate_loss - std::log(7.0)) < 0.7);
}

TEST_CASE("one expert in competition behaves like pretraining") {
  Rng rng(8);
  const ExpertNet e = build_expert({3, 4}, rng);
  ExpertNet a = e;
  std::vector<ExpertNet> b{e};
  GateNet gate = build_gate(1, rng);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const PatchBatch batch = batch_from(s);
    const double la = pretrain_step(a, batch);
    const StepResult r = competition_step(b, &gate, batch);
    CHECK(r.winner == 0);
    CHECK(r.winning_loss == la);
    CHECK(r.gate_loss == 0.0);
  }
  CHECK(a.param_hash() == b[0].param_hash());
}

TEST_CASE("threaded competition matches the serial result") {
  Rng rng(9);
  std::vector<ExpertNet> a;
  for (int i = 0; i < 4; ++i) a.push_back(build_expert({3, 4}, rng));
  auto b = a;
  for (std::uint64_t s = 0; s < 6; ++s) {
    const PatchBatch batch = batch_from(s);
    const StepResult ra = competition_step(a, nullptr, batch, 1);
    const StepResult rb = competition_step(b, nullptr, batch, 4);
    CHECK(ra.losses == rb.losses);
  }
  for (std::size_t j = 0; j < 4; ++j) CHECK(a[j].param_hash() == b[j].param_hash());
}

TEST_CASE("train config profiles and validation") {
  const TrainConfig d = TrainConfig::desk_profile();
  CHECK(d.n_experts == 2);
  CHECK(d.expert == ExpertConfig{3, 8});
  const TrainConfig p = TrainConfig::paper_profile();
  CHECK(p.n_experts == 7);
  CHECK(p.expert == ExpertConfig{5, 16});
  CHECK(p.patch_size == 64);
  CHECK(p.patches_per_batch == 16);
  CHECK(p.pretrain_epochs == 200);
  CHECK(p.compete_epochs == 400);
  CHECK(p.lr == 1e-4);
  TrainConfig bad = d;
  bad.n_experts = 0;
  CHECK_THROWS(bad.validate());
  bad = d;
  bad.noise = "awgn:70";
  CHECK_THROWS(bad.validate());
}

TEST_CASE("train config key-value round trip") {
  const auto dir = testing::temp_dir("train_kv");
  TrainConfig c = tiny_config();
  c.lr = 3.5e-4;
  c.train_gate = false;
  c.write_file(dir / "config.txt");
  TrainConfig r;
  r.apply_kv(TrainConfig::read_kv_file(dir / "config.txt"));
  CHECK(r.to_kv() == c.to_kv());
  CHECK(r.lr == c.lr);

  {
    std::ofstream out(dir / "hand.txt");
    out << "# comment\n  experts = 4  \n\nexpert=d4c6 # trailing\n";
  }
  TrainConfig h;
  h.apply_kv(TrainConfig::read_kv_file(dir / "hand.txt"));
  CHECK(h.n_experts == 4);
  CHECK(h.expert == ExpertConfig{4, 6});
  CHECK_THROWS(h.apply_kv({{"colour", "blue"}}));
  CHECK_THROWS(h.apply_kv({{"experts", "many"}}));
}

TEST_CASE("trainer accounting and determinism") {
  const TrainConfig c = tiny_config();
  Trainer t(c, tiny_dataset());
  int iterations = 0;
  t.set_iteration_hook([&](const IterationRecord&, const Trainer&) { ++iterations; });
  t.run();
  CHECK(t.done());
  CHECK(iterations == c.total_epochs() * c.iterations_per_epoch);
  const TrainLog& log = t.log();
  REQUIRE(log.epochs.size() == 4);
  CHECK_FALSE(log.epochs[1].competition);
  CHECK(log.epochs[2].competition);
  CHECK(log.epochs[0].wins == std::vector<std::size_t>{5});
  std::size_t total = 0;
  for (auto w : log.epochs[3].wins) total += w;
  CHECK(total == 5);
  CHECK(t.experts().size() == 2);
  for (const auto& r : log.iterations) {
    CHECK((r.spec == NoiseSpec::awgn(5) || r.spec == NoiseSpec::awgn(50)));
    if (r.epoch <= 2) CHECK(std::isnan(r.gate_loss));
    else CHECK(std::isfinite(r.gate_loss));
  }

  const TrainResult again = train(c, tiny_dataset());
  for (std::size_t j = 0; j < 2; ++j) CHECK(again.experts[j].param_hash() == t.experts()[j].param_hash());
  CHECK(again.gate.param_hash() == t.gate().param_hash());

  TrainConfig other = c;
  other.seed = 4;
  CHECK(train(other, tiny_dataset()).experts[0].param_hash() != t.experts()[0].param_hash());
}

TEST_CASE("trainer rejects unusable datasets") {
  CHECK_THROWS(Trainer(tiny_config(), {}));
  CHECK_THROWS_AS(Trainer(tiny_config(), {GrayImage(4, 4)}), ImageTooSmallError);
}

TEST_CASE("training log CSV round trip") {
  const auto dir = testing::temp_dir("train_log");
  Trainer t(tiny_config(), tiny_dataset());
  t.run();
  t.log().write_csv(dir / "train_log.csv");
  t.log().write_iterations_csv(dir / "iterations.csv");
  const TrainLog r = TrainLog::read_csv(dir / "train_log.csv", dir / "iterations.csv");
  REQUIRE(r.epochs.size() == t.log().epochs.size());
  REQUIRE(r.iterations.size() == t.log().iterations.size());
  for (std::size_t i = 0; i < r.epochs.size(); ++i) CHECK(r.epochs[i].wins == t.log().epochs[i].wins);
  for (std::size_t i = 0; i < r.iterations.size(); ++i) {
    CHECK(r.iterations[i].winner == t.log().iterations[i].winner);
    CHECK(r.iterations[i].spec == t.log().iterations[i].spec);
    CHECK(r.iterations[i].winning_loss == doctest::Approx(t.log().iterations[i].winning_loss).epsilon(1e-8));
  }
  CHECK(r.effective_clusters() == t.log().effective_clusters());
  TrainLog cut = r;
  cut.truncate(2);
  CHECK(cut.epochs.size() == 2);
  CHECK(cut.iterations.size() == 10);
}

TEST_CASE("resume from a mid-run checkpoint reproduces the uninterrupted run") {
  const TrainConfig c = tiny_config();
  Trainer full(c, tiny_dataset());
  full.run();

  for (int stop : {1, 2, 3}) {
    Trainer first(c, tiny_dataset());
    for (int e = 0; e < stop; ++e) first.run_epoch();
    const auto dir = testing::temp_dir("resume_" + std::to_string(stop));
    save_checkpoint(dir / "last.ckpt", first.checkpoint());

    Trainer second(c, tiny_dataset());
    second.resume(load_checkpoint(dir / "last.ckpt"), first.log());
    second.run();
    REQUIRE(second.experts().size() == full.experts().size());
    for (std::size_t j = 0; j < full.experts().size(); ++j)
      CHECK(second.experts()[j].param_hash() == full.experts()[j].param_hash());
    CHECK(second.gate().param_hash() == full.gate().param_hash());
    CHECK(second.log().iterations.size() == full.log().iterations.size());
  }
}

TEST_CASE("resume refuses mismatched checkpoints") {
  TrainConfig c = tiny_config();
  Trainer t(c, tiny_dataset());
  t.run_epoch();
  const Checkpoint ck = t.checkpoint();
  TrainConfig other = c;
  other.expert = {2, 3};
  Trainer a(other, tiny_dataset());
  CHECK_THROWS(a.resume(ck, t.log()));
  other = c;
  other.n_experts = 3;
  Trainer b(other, tiny_dataset());
  CHECK_THROWS(b.resume(ck, t.log()));
  Trainer d(c, tiny_dataset());
  CHECK_THROWS(d.resume(ck, TrainLog{}));
}
