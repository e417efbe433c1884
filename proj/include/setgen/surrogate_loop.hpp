#pragma once

// Basis selection with trained surrogates: fit an ensemble to 100% on the
// basis, find the pool samples it does not unanimously get right, admit some
// of them, repeat until the ensemble is unanimously correct on the pool.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "setgen/data_io.hpp"
#include "setgen/finite_core.hpp"
#include "setgen/tensor_nn.hpp"

namespace setgen {

enum class SelectionRule { MostDisagreed, FirstIndex, Random };

std::string rule_name(SelectionRule rule);  ///< most-disagreed | first | random
SelectionRule parse_rule(std::string_view name);

struct LoopConfig {
  int n_models = 10;
  int batch_add = 8;
  SelectionRule rule = SelectionRule::MostDisagreed;
  std::uint64_t rule_seed = 0;  ///< RANDOM only
  int initial_per_class = 10;
  ModelConfig model;  ///< template; per-model seeds are derived from model.seed
  int max_rounds = 100000;
  std::size_t jobs = 1;  ///< concurrent fits; does not affect results

  void validate() const;
  /// One line of key=value pairs covering everything that affects the result.
  std::string canonical() const;
};

/// Columns of the pool, in pool order.
struct EnsembleEvaluation {
  DatasetMask unanimous_correct;
  DatasetMask unanimous_wrong;  ///< all members agree on the same wrong label
  DatasetMask disagreement;
  std::vector<std::vector<int>> votes;  ///< votes[model][column]
  std::vector<int> wrong_votes;         ///< members disagreeing with the pool label, per column
};

/// Classifies every column from a vote table. Needs at least one voter.
EnsembleEvaluation evaluate_votes(std::vector<std::vector<int>> votes, std::span<const int> labels);
EnsembleEvaluation evaluate_ensemble(const std::vector<TrainedModel>& models, const LabeledPool& pool,
                                     std::size_t jobs = 1);

/// Up to k ids from outside unanimous_correct. MOST_DISAGREED: wrong votes
/// descending, then id ascending; FIRST_INDEX: id ascending; RANDOM: seeded shuffle.
std::vector<SampleId> select_inconsistent(std::span<const SampleId> ids, std::span<const int> wrong_votes,
                                          const DatasetMask& unanimous_correct, std::size_t k, SelectionRule rule,
                                          std::uint64_t seed = 0);

/// Deterministic 64-bit seed derivation (splitmix64 over the inputs).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

/// `n` models fit on `basis`; model i uses seed derive_seed(model.seed, stream, i).
std::vector<TrainedModel> train_ensemble(const LabeledPool& pool, std::span<const SampleId> basis,
                                         const ModelConfig& model, int n, std::uint64_t stream, std::size_t jobs);

/// Stream used for the misprediction-gallery ensemble trained on a final basis.
inline constexpr std::uint64_t kGalleryStream = 0x6a11e7;

/// First `per_class` ids of every class, in pool order.
std::vector<SampleId> initial_seeds(const LabeledPool& pool, int per_class);

struct LoopResult {
  BasisManifest manifest;
  std::vector<RoundSummary> rounds;
};

using RoundCallback = std::function<void(const RoundSummary&)>;

/// Runs rounds until the ensemble is unanimously correct on the pool, or
/// max_rounds is reached (manifest flagged incomplete). FitFailure propagates
/// with the round and model in its message.
LoopResult run_loop(const LabeledPool& pool, const LoopConfig& config, const RoundCallback& on_round = {});

struct RetrainResult {
  std::vector<double> accuracies;  ///< percent of the pool, one per successful trial
  double mean = 0.0;
  double stdev = 0.0;  ///< sample standard deviation; 0 with fewer than two trials
  int skipped = 0;     ///< trials that raised FitFailure
};

/// `trials` fresh models (distinct derived seeds) fit on `basis`,
/// scored on the full pool.
RetrainResult retrain_eval(const LabeledPool& pool, std::span<const SampleId> basis, const ModelConfig& model,
                           int trials, std::size_t jobs = 1);

}  // namespace setgen
