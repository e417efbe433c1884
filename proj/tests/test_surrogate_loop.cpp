#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>
#include <set>

#include "setgen/surrogate_loop.hpp"

using namespace setgen;

namespace {

LabeledPool gauss2(std::size_t n = 400, std::uint64_t seed = 1) {
  SyntheticSpec spec;
  spec.n_samples = n;
  spec.seed = seed;
  return generate_synthetic(spec);
}

LoopConfig small_loop(const LabeledPool& pool, int n_models = 3) {
  LoopConfig c;
  c.n_models = n_models;
  c.model.apply_model_spec("mlp:16");
  c.model.input_shape = pool.shape();
  c.model.num_classes = pool.num_classes();
  return c;
}

}  // namespace

TEST_CASE("select_inconsistent ordering contracts") {
  const std::vector<SampleId> ids{7, 3, 9, 1};
  const std::vector<int> wrong{1, 2, 1, 0};
  auto uc = DatasetMask::of(4, {3});
  CHECK(select_inconsistent(ids, wrong, uc, 1, SelectionRule::FirstIndex) == std::vector<SampleId>{3});
  CHECK(select_inconsistent(ids, wrong, uc, 5, SelectionRule::FirstIndex) == std::vector<SampleId>{3, 7, 9});
  CHECK(select_inconsistent(ids, wrong, uc, 5, SelectionRule::MostDisagreed) == std::vector<SampleId>{3, 7, 9});

  const std::vector<SampleId> ids2{4, 2, 8, 5};
  const std::vector<int> wrong2{5, 5, 1, 0};
  CHECK(select_inconsistent(ids2, wrong2, DatasetMask::of(4, {3}), 2, SelectionRule::MostDisagreed) ==
        std::vector<SampleId>{2, 4});

  const auto r1 = select_inconsistent(ids, wrong, uc, 2, SelectionRule::Random, 42);
  CHECK(r1 == select_inconsistent(ids, wrong, uc, 2, SelectionRule::Random, 42));
  CHECK(r1.size() == 2);
  for (auto id : r1) CHECK(id != 1);

  CHECK_THROWS_AS(select_inconsistent(ids, wrong, DatasetMask::all(4), 1, SelectionRule::FirstIndex), PreconditionError);
  CHECK_THROWS_AS(select_inconsistent(ids, wrong, uc, 0, SelectionRule::FirstIndex), InputError);
}

TEST_CASE("vote tables partition the pool") {
  const std::vector<int> labels{0, 1, 2, 0};
  // sample 0: all right; 1: all say 2; 2: split; 3: all say 1.
  const auto e = evaluate_votes({{0, 2, 2, 1}, {0, 2, 0, 1}, {0, 2, 1, 1}}, labels);
  CHECK(e.unanimous_correct == DatasetMask::of(4, {0}));
  CHECK(e.unanimous_wrong == DatasetMask::of(4, {1, 3}));
  CHECK(e.disagreement == DatasetMask::of(4, {2}));
  CHECK(e.wrong_votes == std::vector<int>{0, 3, 2, 3});
  CHECK_THROWS_AS(evaluate_votes({}, labels), InputError);
}

TEST_CASE("ensemble evaluation on trained models") {
  const auto pool = gauss2(60);
  const auto cfg = small_loop(pool);
  const auto models = train_ensemble(pool, pool.ids(), cfg.model, 1, 0, 1);
  const auto full = evaluate_ensemble(models, pool);
  CHECK(full.unanimous_correct.count() == pool.size());

  // Identical weights never disagree.
  const std::vector<SampleId> few(pool.ids().begin(), pool.ids().begin() + 6);
  auto twins = train_ensemble(pool, few, cfg.model, 1, 0, 1);
  twins.push_back(twins.front());
  const auto e = evaluate_ensemble(twins, pool);
  CHECK(e.disagreement.empty());
  CHECK(e.unanimous_correct.count() + e.unanimous_wrong.count() == pool.size());
}

TEST_CASE("the loop terminates on GAUSS2 with a strictly growing basis") {
  const auto pool = gauss2();
  const auto cfg = small_loop(pool);
  const auto result = run_loop(pool, cfg);
  const auto& m = result.manifest;
  CHECK(m.complete);
  CHECK(result.rounds.back().unanimous_correct == pool.size());
  CHECK(m.ids.size() < pool.size());
  CHECK(std::set<SampleId>(m.ids.begin(), m.ids.end()).size() == m.ids.size());
  CHECK(m.initial_count == 20);
  CHECK(m.dataset_digest == pool_digest(pool));
  CHECK(m.config == cfg.canonical());

  for (std::size_t r = 0; r < result.rounds.size(); ++r) {
    const auto& round = result.rounds[r];
    CHECK(round.unanimous_correct + round.unanimous_wrong + round.disagreement == pool.size());
    CHECK(round.basis_size == m.round_sizes[r]);
    if (r + 1 < result.rounds.size()) {
      CHECK(result.rounds[r + 1].basis_size > round.basis_size);
      CHECK(result.rounds[r + 1].basis_size == round.basis_size + round.admitted.size());
    }
  }

  // Every admitted id was outside the unanimous-correct set of its round:
  // replay the round's ensemble and check.
  if (result.rounds.size() > 1) {
    const std::vector<SampleId> basis0(m.ids.begin(), m.ids.begin() + static_cast<long>(m.round_sizes[0]));
    const auto models = train_ensemble(pool, basis0, cfg.model, cfg.n_models, 0, 1);
    const auto e = evaluate_ensemble(models, pool);
    for (auto id : result.rounds[0].admitted) CHECK_FALSE(e.unanimous_correct[pool.column_of(id)]);
  }

  // Replay: same pool and config, identical manifest; jobs do not matter.
  auto parallel = cfg;
  parallel.jobs = 3;
  CHECK(run_loop(pool, parallel).manifest == m);
}

TEST_CASE("an already consistent pool keeps only the initial seeds") {
  // Every later sample duplicates a seed of its class, so fitting the seeds fits all.
  Eigen::MatrixXf x(2, 12);
  for (Eigen::Index j = 0; j < 12; ++j) x.col(j).setConstant(j % 2 ? 0.9f : 0.1f);
  std::vector<int> labels(12);
  std::vector<SampleId> ids(12);
  for (int j = 0; j < 12; ++j) {
    labels[static_cast<std::size_t>(j)] = j % 2;
    ids[static_cast<std::size_t>(j)] = static_cast<SampleId>(100 + j);
  }
  const LabeledPool pool({1, 1, 2}, 2, x, labels, ids);
  auto cfg = small_loop(pool);
  cfg.initial_per_class = 2;
  const auto result = run_loop(pool, cfg);
  CHECK(result.manifest.complete);
  CHECK(result.rounds.size() == 1);
  CHECK(result.manifest.ids == std::vector<SampleId>{100, 101, 102, 103});
}

TEST_CASE("max_rounds yields an incomplete manifest") {
  const auto pool = gauss2();
  auto cfg = small_loop(pool);
  cfg.batch_add = 1;
  cfg.max_rounds = 1;
  const auto result = run_loop(pool, cfg);
  CHECK_FALSE(result.manifest.complete);
  CHECK(result.rounds.size() == 1);
}

TEST_CASE("configuration errors") {
  const auto pool = gauss2(40);
  auto cfg = small_loop(pool);
  cfg.n_models = 1;
  CHECK_THROWS_AS(run_loop(pool, cfg), ConfigError);
  cfg = small_loop(pool);
  cfg.initial_per_class = 21;
  CHECK_THROWS_AS(run_loop(pool, cfg), ConfigError);
  cfg = small_loop(pool);
  cfg.model.input_shape = {1, 28, 28};
  CHECK_THROWS_AS(run_loop(pool, cfg), ConfigError);
  CHECK(parse_rule("first") == SelectionRule::FirstIndex);
  CHECK_THROWS_AS(parse_rule("best"), ConfigError);
}

TEST_CASE("fit failures carry round context") {
  // Duplicate inputs with opposite labels are unfittable.
  Eigen::MatrixXf x(2, 4);
  x << 0.2f, 0.2f, 0.8f, 0.9f, 0.2f, 0.2f, 0.8f, 0.9f;
  const LabeledPool pool({1, 1, 2}, 2, x, {0, 1, 1, 0}, {0, 1, 2, 3});
  auto cfg = small_loop(pool, 2);
  cfg.initial_per_class = 2;
  cfg.model.max_steps = 50;
  cfg.model.max_attempts = 1;
  try {
    run_loop(pool, cfg);
    FAIL("expected FitFailure");
  } catch (const FitFailure& e) {
    CHECK(std::string(e.what()).find("round 0") == 0);
  }
}

TEST_CASE("retrain_eval statistics") {
  const auto pool = gauss2(100);
  const auto cfg = small_loop(pool);
  const auto one = retrain_eval(pool, pool.ids(), cfg.model, 1);
  CHECK(one.accuracies.size() == 1);
  CHECK(one.stdev == 0.0);
  CHECK(one.mean == 100.0);
  const std::vector<SampleId> few{0, 1, 2, 3};
  const auto three = retrain_eval(pool, few, cfg.model, 3, 2);
  CHECK(three.accuracies.size() == 3);
  double mean = 0;
  for (double a : three.accuracies) mean += a / 3;
  CHECK(three.mean == doctest::Approx(mean));
  double ss = 0;
  for (double a : three.accuracies) ss += (a - mean) * (a - mean);
  CHECK(three.stdev == doctest::Approx(std::sqrt(ss / 2)));
  CHECK(three.accuracies == retrain_eval(pool, few, cfg.model, 3, 1).accuracies);
}

// The loop skeleton with exact hypothesis spaces in place of trained models:
// the ensemble is the whole feasible set of the basis, so its unanimous-correct
// set is the generalization set, and every admission must strictly grow it.
TEST_CASE("exact-engine shadow of the loop grows generalization every round") {
  std::mt19937_64 rng(2024);
  int rounds_checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    std::uniform_int_distribution<std::size_t> xs(2, 8), ys(2, 3);
    const auto x = xs(rng), y = ys(rng);
    std::uniform_int_distribution<Label> label(0, static_cast<Label>(y - 1));
    std::vector<Label> oracle(x);
    for (auto& l : oracle) l = label(rng);
    const FiniteUniverse u(y, oracle);
    HypothesisSpace space(u);
    space.add(oracle_hypothesis(u));
    for (int i = 0; i < 30; ++i) {
      std::vector<Label> t(x);
      for (auto& l : t) l = label(rng);
      if (!space.contains(Hypothesis(t))) space.add(Hypothesis(t));
    }

    std::vector<int> labels(oracle.begin(), oracle.end());
    std::vector<SampleId> ids(x);
    for (std::size_t i = 0; i < x; ++i) ids[i] = static_cast<SampleId>(i);

    auto basis = DatasetMask::of(x, {0});
    while (true) {
      const auto g = feasible_set(space, basis);
      std::vector<std::vector<int>> votes;
      for (const auto& h : g) votes.emplace_back(h.table().begin(), h.table().end());
      const auto e = evaluate_votes(votes, labels);
      const auto z_a = generalization(space, basis);
      REQUIRE(e.unanimous_correct == z_a);
      REQUIRE(basis.subset_of(z_a));
      if (z_a.count() == x) break;
      const auto admitted = select_inconsistent(ids, e.wrong_votes, e.unanimous_correct, 1, SelectionRule::MostDisagreed);
      REQUIRE(admitted.size() == 1);
      REQUIRE_FALSE(z_a[admitted[0]]);
      basis.set(admitted[0]);
      REQUIRE(z_a.proper_subset_of(generalization(space, basis)));
      ++rounds_checked;
    }
  }
  CHECK(rounds_checked > 100);
}
