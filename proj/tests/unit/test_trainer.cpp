#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "tfm/metrics.hpp"
#include "tfm/synth_data.hpp"
#include "tfm/trainer.hpp"

using namespace tfm;

namespace {

ModelConfig small_model(int frames, std::int64_t hw = 8) {
  ModelConfig m;
  m.in_frames = frames;
  m.depth = 2;
  m.height = hw;
  m.width = hw;
  m.base_features = 4;
  m.channel_mults = {1, 2};
  m.attention_resolution = 4;
  m.attention_tokens = 2;
  return m;
}

DynamicsSpec small_disk(std::int64_t frames, std::int64_t hw) {
  DynamicsSpec s;
  s.shape = {frames, 2, hw, hw};
  s.radius = hw / 6.0;
  s.growth_rate = hw / 48.0;
  s.center_jitter = 1;
  s.noise_sigma = 0.01;
  s.seed = 9;
  return s;
}

TrainConfig quick(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 2;
  c.learning_rate = 2e-3;
  c.mask_rate = 0.3;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("mask sets are seeded and repaired") {
  CHECK(generate_masks(20, 5, 0.5, 7) == generate_masks(20, 5, 0.5, 7));
  CHECK_FALSE(generate_masks(20, 5, 0.5, 7) == generate_masks(20, 5, 0.5, 8));
  for (const auto& m : generate_masks(10, 4, 0.0, 1).masks) CHECK(m == std::vector<bool>(4, true));
  for (const auto& m : generate_masks(200, 3, 0.95, 2).masks) CHECK(std::count(m.begin(), m.end(), true) >= 1);
  CHECK_THROWS_AS(generate_masks(1, 3, 1.0, 0), std::invalid_argument);

  Rng rng(3);
  int forced = 0;
  for (int i = 0; i < 500; ++i) {
    Rng probe = rng;
    const auto raw = draw_mask(probe, 2, 0.9, false);
    const auto fixed = draw_mask(rng, 2, 0.9, true);
    if (std::count(raw.begin(), raw.end(), true) == 0) {
      ++forced;
      CHECK(fixed == std::vector<bool>{false, true});
    } else {
      CHECK(fixed == raw);
    }
  }
  CHECK(forced > 0);
}

TEST_CASE("present fraction before repair matches the rate") {
  Rng rng(11);
  const double rate = 0.4;
  std::int64_t kept = 0, total = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto m = draw_mask(rng, 7, rate, false);
    kept += std::count(m.begin(), m.end(), true);
    total += 7;
  }
  CHECK(std::abs(static_cast<double>(kept) / static_cast<double>(total) - (1 - rate)) < 0.02);
}

TEST_CASE("mask json round trip") {
  const auto ms = generate_masks(5, 4, 0.5, 3);
  CHECK(MaskSet::from_json(ms.to_json()) == ms);
}

TEST_CASE("learning-rate schedule") {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.warmup_fraction = 0.1;
  const std::int64_t total = 1000;
  CHECK(learning_rate_at(c, 0, total) == 0.0);
  CHECK(learning_rate_at(c, 50, total) == doctest::Approx(5e-4));
  CHECK(learning_rate_at(c, 100, total) == doctest::Approx(1e-3));
  CHECK(learning_rate_at(c, total, total) <= 1e-2 * c.learning_rate);
  double prev = learning_rate_at(c, 100, total);
  for (std::int64_t s = 101; s <= total; ++s) {
    const double lr = learning_rate_at(c, s, total);
    CHECK(lr <= prev);
    prev = lr;
  }
}

TEST_CASE("gradient clipping bounds the global norm") {
  ParameterSet<float> g;
  g.insert("a", Array({3}, std::vector<float>{3, 4, 0}));
  g.insert("b", Array({1}, std::vector<float>{12}));
  CHECK(clip_grad_norm(g, 1.0) == doctest::Approx(13.0));
  double ss = 0;
  for (const auto& t : g.tensors())
    for (float v : t) ss += v * v;
  CHECK(std::sqrt(ss) <= 1.0 + 1e-6);

  ParameterSet<float> small;
  small.insert("a", Array({2}, std::vector<float>{0.1f, 0.1f}));
  const auto before = small;
  clip_grad_norm(small, 1.0);
  CHECK(small == before);
}

TEST_CASE("AdamW with zero gradients only decays") {
  ParameterSet<float> p, g;
  p.insert("w", Array({2}, std::vector<float>{1.0f, -2.0f}));
  g.insert("w", Array({2}));
  AdamW opt(0.5);
  opt.step(p, g, 0.1);
  CHECK(p.at("w")[0] == doctest::Approx(0.95f));
  CHECK(p.at("w")[1] == doctest::Approx(-1.9f));
}

TEST_CASE("first AdamW steps move by about the learning rate") {
  ParameterSet<float> p, g;
  p.insert("w", Array({1}, 0.0f));
  g.insert("w", Array({1}, 3.0f));
  AdamW opt(0.0);
  opt.step(p, g, 0.01);
  CHECK(p.at("w")[0] == doctest::Approx(-0.01f).epsilon(1e-4));
}

TEST_CASE("zero-velocity batch leaves parameters unchanged up to weight decay") {
  const ModelConfig m = small_model(3);
  TrainConfig c = quick(1);
  c.warmup_fraction = 0;
  Trainer t(c, m, 10);
  const auto before = t.params();
  const Array x = testing::random_array({3, 2, 8, 8}, 1);
  Rng rng(0);
  CHECK(t.train_step_tfm({{x, x}, {x, x}}, rng) == 0.0);
  const double decay = 1 - t.last_lr() * c.weight_decay;
  for (std::size_t k = 0; k < before.size(); ++k) {
    for (std::size_t i = 0; i < before.tensors()[k].size(); ++i) {
      CHECK(t.params().tensors()[k][i] == doctest::Approx(before.tensors()[k][i] * decay).epsilon(1e-6));
    }
  }
}

TEST_CASE("training steps are bit-reproducible") {
  const ModelConfig m = small_model(3);
  auto run = [&] {
    Trainer t(quick(1), m, 10);
    Rng rng(42);
    std::vector<double> losses;
    for (int s = 0; s < 10; ++s) {
      const Array x0 = testing::random_array({3, 2, 8, 8}, 100 + s), x1 = testing::random_array({3, 2, 8, 8}, 200 + s);
      losses.push_back(t.train_step_tfm({{x0, x1}}, rng));
    }
    return std::pair{losses, t.params()};
  };
  const auto a = run(), b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("baseline and single-frame steps") {
  Trainer base(quick(1), small_model(3), 4);
  const Array ctx = testing::random_array({3, 2, 8, 8}, 3);
  // A zero-initialized network predicts zeros, so a zero target costs nothing.
  CHECK(base.train_step_baseline({ctx}, {Array({2, 8, 8})}) == 0.0);
  CHECK(base.train_step_baseline({ctx}, {testing::random_array({2, 8, 8}, 4)}) > 0.0);
  CHECK_THROWS_AS(base.train_step_baseline({ctx}, {}), std::invalid_argument);

  Trainer single(quick(1), small_model(1), 4);
  const Array f0 = testing::random_array({1, 2, 8, 8}, 5), f1 = testing::random_array({1, 2, 8, 8}, 6);
  Rng rng(1);
  CHECK(single.train_step_lci_fm({{f0, f1}}, rng) > 0.0);
  CHECK_THROWS_AS(base.train_step_lci_fm({{ctx, ctx}}, rng), std::invalid_argument);
}

TEST_CASE("best epoch is the earliest minimum") {
  CHECK(best_epoch_index({0.5, 0.3, 0.4}) == 1);
  CHECK(best_epoch_index({0.5, 0.3, 0.3}) == 1);
  CHECK(best_epoch_index({0.2}) == 0);
  CHECK_THROWS_AS(best_epoch_index({}), std::invalid_argument);
}

TEST_CASE("fit is deterministic and its validation is reproducible") {
  const auto spec = small_disk(3, 8);
  const auto cohort = generate_cohort(spec, 8);
  const std::vector<ImageSequence> train(cohort.sequences.begin(), cohort.sequences.begin() + 6);
  const std::vector<ImageSequence> val(cohort.sequences.begin() + 6, cohort.sequences.end());
  const auto masks = generate_masks(val.size(), 3, 0.3, 4);
  const FitOptions opts{SolverConfig{SolverMethod::euler, 3, Reduction::mean}, 0, {}};

  const auto a = fit(quick(3), small_model(3), train, val, masks, opts);
  const auto b = fit(quick(3), small_model(3), train, val, masks, opts);
  REQUIRE(a.history.size() == 3);
  CHECK(a.best_epoch == b.best_epoch);
  CHECK(history_csv(a.history) == history_csv(b.history));
  CHECK(a.best.params == b.best.params);

  std::vector<ImageSequence> masked;
  for (std::size_t i = 0; i < val.size(); ++i) masked.push_back(apply_mask(val[i], masks.masks[i]));
  const auto preds = predict_with_method(TrainMethod::tfm, VelocityNet<float>(a.best.model), a.best.params, masked,
                                         opts.solver, true);
  double v = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) v += mse(preds[i], masked[i].target);
  CHECK(v / static_cast<double>(preds.size()) == a.history[static_cast<std::size_t>(a.best_epoch - 1)].val_mse);

  CHECK_THROWS_AS(fit(quick(1), small_model(3), {}, val, masks, opts), std::invalid_argument);
  CHECK_THROWS_AS(fit(quick(1), small_model(3), train, val, generate_masks(1, 3, 0.3, 4), opts),
                  std::invalid_argument);
}

TEST_CASE("every method trains through fit") {
  const auto cohort = generate_cohort(small_disk(3, 8), 4);
  const std::vector<ImageSequence> train(cohort.sequences.begin(), cohort.sequences.begin() + 2);
  const std::vector<ImageSequence> val(cohort.sequences.begin() + 2, cohort.sequences.end());
  const auto masks = generate_masks(2, 3, 0.3, 1);
  for (auto method : {TrainMethod::direct_baseline, TrainMethod::lci_fm}) {
    TrainConfig c = quick(2);
    c.method = method;
    const auto r = fit(c, small_model(3), train, val, masks, {SolverConfig{SolverMethod::euler, 2, Reduction::mean}, 0, {}});
    CHECK(r.history.size() == 2);
    CHECK(r.best.model.in_frames == (method == TrainMethod::lci_fm ? 1 : 3));
    CHECK(std::isfinite(r.history.back().val_mse));
  }
}

TEST_CASE("training reduces the loss on the growing-disk toy") {
  const auto cohort = generate_cohort(small_disk(3, 16), 8);
  const ModelConfig m = small_model(3, 16);
  TrainConfig c = quick(1);
  c.warmup_fraction = 0.05;
  const int steps = 200;
  Trainer t(c, m, steps);
  Rng rng(2);
  std::vector<double> losses;
  for (int s = 0; s < steps; ++s) {
    std::vector<PairedFlowEndpoints> batch;
    for (int b = 0; b < 2; ++b) {
      const auto& seq = cohort.sequences[static_cast<std::size_t>((2 * s + b) % 8)];
      batch.push_back(replicate_target(seq.frames, seq.target));
    }
    losses.push_back(t.train_step_tfm(batch, rng));
  }
  const double head = (losses[0] + losses[1] + losses[2] + losses[3]) / 4;
  double tail = 0;
  for (int s = steps - 20; s < steps; ++s) tail += losses[static_cast<std::size_t>(s)];
  CHECK(tail / 20 < head);
  CHECK(losses.back() < losses.front());
}
