#include "setgen/surrogate_loop.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

namespace setgen {

namespace {

// Runs fn(i) for i in [0, n) on up to `jobs` threads. The exception of the
// lowest failing index is rethrown, so failures are reported deterministically.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  auto guarded = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) guarded(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t j = 0; j < jobs; ++j)
      workers.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) guarded(i);
      });
    for (auto& w : workers) w.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Keeps retraining seeds apart from the per-round loop seeds.
constexpr std::uint64_t kRetrainStream = 0x7e7a1;

}  // namespace

std::string rule_name(SelectionRule rule) {
  switch (rule) {
    case SelectionRule::MostDisagreed: return "most-disagreed";
    case SelectionRule::FirstIndex: return "first";
    case SelectionRule::Random: return "random";
  }
  return "?";
}

SelectionRule parse_rule(std::string_view name) {
  if (name == "most-disagreed") return SelectionRule::MostDisagreed;
  if (name == "first") return SelectionRule::FirstIndex;
  if (name == "random") return SelectionRule::Random;
  throw ConfigError("unknown selection rule '" + std::string(name) + "'");
}

void LoopConfig::validate() const {
  // One model is trivially unanimous with itself, so it could never expose a
  // consistent misprediction as distinct from a disagreement.
  if (n_models < 2) throw ConfigError("n_models must be >= 2");
  if (batch_add < 1) throw ConfigError("batch_add must be >= 1");
  if (initial_per_class < 1) throw ConfigError("initial_per_class must be >= 1");
  if (max_rounds < 1) throw ConfigError("max_rounds must be >= 1");
  model.validate();
}

std::string LoopConfig::canonical() const {
  std::ostringstream out;
  out << "n_models=" << n_models << ";batch_add=" << batch_add << ";rule=" << rule_name(rule)
      << ";rule_seed=" << rule_seed << ";initial_per_class=" << initial_per_class << ";max_rounds=" << max_rounds
      << ";model=" << model.model_spec() << ";input_shape=" << model.input_shape.to_string()
      << ";num_classes=" << model.num_classes << ";learning_rate=" << model.learning_rate
      << ";max_steps=" << model.max_steps << ";batch_size=" << model.batch_size
      << ";max_attempts=" << model.max_attempts << ";seed=" << model.seed;
  return out.str();
}

EnsembleEvaluation evaluate_votes(std::vector<std::vector<int>> votes, std::span<const int> labels) {
  if (votes.empty()) throw InputError("an ensemble needs at least one model");
  const std::size_t n = labels.size();
  for (const auto& v : votes)
    if (v.size() != n) throw InputError("vote table rows must cover every sample");
  EnsembleEvaluation e{DatasetMask(n), DatasetMask(n), DatasetMask(n), std::move(votes), std::vector<int>(n, 0)};
  for (std::size_t j = 0; j < n; ++j) {
    bool agree = true;
    const int first = e.votes[0][j];
    for (const auto& v : e.votes) {
      if (v[j] != labels[j]) ++e.wrong_votes[j];
      agree = agree && v[j] == first;
    }
    if (e.wrong_votes[j] == 0) e.unanimous_correct.set(j);
    else if (agree) e.unanimous_wrong.set(j);
    else e.disagreement.set(j);
  }
  return e;
}

EnsembleEvaluation evaluate_ensemble(const std::vector<TrainedModel>& models, const LabeledPool& pool,
                                     std::size_t jobs) {
  if (models.empty()) throw InputError("an ensemble needs at least one model");
  for (const auto& m : models)
    if (m.config.input_shape != pool.shape()) throw ConfigError("model shape does not match the pool");
  std::vector<std::vector<int>> votes(models.size());
  parallel_for(models.size(), jobs, [&](std::size_t i) { votes[i] = predict_all(models[i], pool.features()); });
  return evaluate_votes(std::move(votes), pool.labels());
}

std::vector<SampleId> select_inconsistent(std::span<const SampleId> ids, std::span<const int> wrong_votes,
                                          const DatasetMask& unanimous_correct, std::size_t k, SelectionRule rule,
                                          std::uint64_t seed) {
  if (k < 1) throw InputError("k must be >= 1");
  if (ids.size() != unanimous_correct.size() || wrong_votes.size() != ids.size())
    throw InputError("ids, votes and mask disagree on the pool size");
  std::vector<std::size_t> candidates;
  for (std::size_t j = 0; j < ids.size(); ++j)
    if (!unanimous_correct[j]) candidates.push_back(j);
  if (candidates.empty()) throw PreconditionError("no inconsistent samples to select from");

  switch (rule) {
    case SelectionRule::MostDisagreed:
      std::sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
        if (wrong_votes[a] != wrong_votes[b]) return wrong_votes[a] > wrong_votes[b];
        return ids[a] < ids[b];
      });
      break;
    case SelectionRule::FirstIndex:
      std::sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
      break;
    case SelectionRule::Random: {
      // Shuffle from id order so the result does not depend on pool layout.
      std::sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
      std::mt19937_64 rng(seed);
      std::shuffle(candidates.begin(), candidates.end(), rng);
      break;
    }
  }
  candidates.resize(std::min(k, candidates.size()));
  std::vector<SampleId> out;
  for (auto j : candidates) out.push_back(ids[j]);
  return out;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ b);
}

std::vector<TrainedModel> train_ensemble(const LabeledPool& pool, std::span<const SampleId> basis,
                                         const ModelConfig& model, int n, std::uint64_t stream, std::size_t jobs) {
  std::vector<TrainedModel> models(static_cast<std::size_t>(n));
  parallel_for(models.size(), jobs, [&](std::size_t i) {
    auto config = model;
    config.seed = derive_seed(model.seed, stream, i);
    try {
      models[i] = train_to_fit(pool, basis, config);
    } catch (const FitFailure& e) {
      throw FitFailure("model " + std::to_string(i) + ": " + e.what(), e.final_accuracy(), e.attempts());
    }
  });
  return models;
}

std::vector<SampleId> initial_seeds(const LabeledPool& pool, int per_class) {
  std::vector<int> taken(static_cast<std::size_t>(pool.num_classes()), 0);
  std::vector<SampleId> out;
  for (std::size_t j = 0; j < pool.size(); ++j) {
    auto& t = taken[static_cast<std::size_t>(pool.labels()[j])];
    if (t < per_class) {
      ++t;
      out.push_back(pool.ids()[j]);
    }
  }
  for (int c = 0; c < pool.num_classes(); ++c)
    if (taken[static_cast<std::size_t>(c)] < per_class)
      throw ConfigError("class " + std::to_string(c) + " has only " + std::to_string(taken[static_cast<std::size_t>(c)]) +
                        " samples, fewer than the " + std::to_string(per_class) + " initial seeds per class");
  return out;
}

LoopResult run_loop(const LabeledPool& pool, const LoopConfig& config, const RoundCallback& on_round) {
  config.validate();
  if (config.model.input_shape != pool.shape())
    throw ConfigError("model input shape " + config.model.input_shape.to_string() + " does not match pool " +
                      pool.shape().to_string());

  LoopResult result;
  auto& manifest = result.manifest;
  manifest.dataset_digest = pool_digest(pool);
  manifest.config = config.canonical();
  manifest.ids = initial_seeds(pool, config.initial_per_class);
  manifest.initial_count = manifest.ids.size();

  DatasetMask in_basis(pool.size());
  for (auto id : manifest.ids) in_basis.set(pool.column_of(id));

  for (int round = 0;; ++round) {
    if (round >= config.max_rounds) {
      manifest.complete = false;
      break;
    }
    const auto start = std::chrono::steady_clock::now();
    manifest.round_sizes.push_back(manifest.ids.size());

    std::vector<TrainedModel> models;
    try {
      models = train_ensemble(pool, manifest.ids, config.model, config.n_models, static_cast<std::uint64_t>(round),
                              config.jobs);
    } catch (const FitFailure& e) {
      throw FitFailure("round " + std::to_string(round) + ", " + e.what(), e.final_accuracy(), e.attempts());
    }
    const auto eval = evaluate_ensemble(models, pool, config.jobs);

    const auto covered = eval.unanimous_correct | eval.unanimous_wrong | eval.disagreement;
    if (covered.count() != pool.size() ||
        eval.unanimous_correct.count() + eval.unanimous_wrong.count() + eval.disagreement.count() != pool.size())
      throw std::logic_error("ensemble masks do not partition the pool");
    if (!in_basis.subset_of(eval.unanimous_correct))
      throw std::logic_error("a basis sample is not unanimously correct after fitting");

    RoundSummary summary;
    summary.round = round;
    summary.basis_size = manifest.ids.size();
    summary.unanimous_correct = eval.unanimous_correct.count();
    summary.unanimous_wrong = eval.unanimous_wrong.count();
    summary.disagreement = eval.disagreement.count();

    if (summary.unanimous_correct == pool.size()) {
      manifest.complete = true;
    } else {
      summary.admitted = select_inconsistent(pool.ids(), eval.wrong_votes, eval.unanimous_correct,
                                             static_cast<std::size_t>(config.batch_add), config.rule,
                                             derive_seed(config.rule_seed, static_cast<std::uint64_t>(round)));
      for (auto id : summary.admitted) {
        const auto col = pool.column_of(id);
        if (in_basis[col]) throw std::logic_error("selected sample is already in the basis");
        in_basis.set(col);
        manifest.ids.push_back(id);
      }
    }
    summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.rounds.push_back(summary);
    if (on_round) on_round(summary);
    if (manifest.complete) break;
  }
  return result;
}

RetrainResult retrain_eval(const LabeledPool& pool, std::span<const SampleId> basis, const ModelConfig& model,
                           int trials, std::size_t jobs) {
  if (trials < 1) throw ConfigError("trials must be >= 1");
  if (basis.empty()) throw ConfigError("empty basis");
  for (auto id : basis)
    if (!pool.contains(id)) throw ConfigError("basis id " + std::to_string(id) + " is not in the pool");

  std::vector<std::optional<double>> scores(static_cast<std::size_t>(trials));
  parallel_for(scores.size(), jobs, [&](std::size_t t) {
    auto config = model;
    config.seed = derive_seed(model.seed, t, kRetrainStream);
    try {
      const auto m = train_to_fit(pool, basis, config);
      const auto predicted = predict_all(m, pool.features());
      std::size_t correct = 0;
      for (std::size_t j = 0; j < predicted.size(); ++j) correct += predicted[j] == pool.labels()[j];
      scores[t] = 100.0 * static_cast<double>(correct) / static_cast<double>(pool.size());
    } catch (const FitFailure&) {
      scores[t].reset();
    }
  });

  RetrainResult r;
  for (const auto& s : scores) {
    if (s) r.accuracies.push_back(*s);
    else ++r.skipped;
  }
  if (!r.accuracies.empty())
    r.mean = std::accumulate(r.accuracies.begin(), r.accuracies.end(), 0.0) / static_cast<double>(r.accuracies.size());
  if (r.accuracies.size() > 1) {
    double ss = 0.0;
    for (double a : r.accuracies) ss += (a - r.mean) * (a - r.mean);
    r.stdev = std::sqrt(ss / static_cast<double>(r.accuracies.size() - 1));
  }
  return r;
}

}  // namespace setgen
