#pragma once

// Brute-force verification of the generalization calculus.
//
// Every check quantifies exhaustively over the datasets of a small random
// universe (all subsets when x_size <= 12) and reports the first
// counterexample found in (cardinality, code) order, which makes reported
// counterexamples minimal in the size of the primary dataset.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "setgen/finite_core.hpp"

namespace setgen {

enum class PropertyId {
  P1, P2, P3, P4, P5, P6, P7, P8, P9, P10,
  AccFloor, Thm1, NoGen1, NoGen2,
  B1_1, B1_2, B1_3, B1_4, B1_5, B1_6, B1_7, B1_8, B1_9, B1_10, B1_11, B1_12, B1_13,
};

const std::vector<PropertyId>& all_property_ids();
std::string_view property_name(PropertyId id);
/// Accepts the names produced by property_name; throws InputError otherwise.
PropertyId parse_property_id(std::string_view name);

struct StructureLimits {
  std::size_t max_x = 6;
  std::size_t max_y = 3;
  std::optional<std::size_t> max_space;  ///< nullopt draws from the full enumeration
  std::uint64_t seed = 0;
  std::size_t enumeration_cap = 4096;

  void validate() const;
};

/// A universe, a hypothesis space over it and a nested dataset pair V ⊆ W.
/// `family` holds extra datasets used by the indexed-union identities.
struct Structure {
  HypothesisSpace space;
  DatasetMask v;
  DatasetMask w;
  std::vector<DatasetMask> family;

  const FiniteUniverse& universe() const { return space.universe(); }
};

std::size_t enumeration_size(const FiniteUniverse& universe);

/// All y_size^x_size tables in lexicographic order.
HypothesisSpace enumerate_all_hypotheses(const FiniteUniverse& universe, std::size_t cap = 4096);

Structure random_structure(const StructureLimits& limits);

/// Deliberately broken variants of the calculus, used to show the suite is
/// able to fail.
enum class Mutant {
  None,
  /// feasible_set keeps f when correct_set(f) ⊆ Z instead of Z ⊆ correct_set(f).
  FeasibleInverted,
  /// generalization accepts spaces without the oracle and structures stop
  /// guaranteeing its membership.
  NoOraclePrecondition,
};

std::string_view mutant_name(Mutant m);
Mutant parse_mutant(std::string_view name);

/// The operations the checks exercise, possibly mutated.
struct Calculus {
  Mutant mutant = Mutant::None;

  HypothesisSpace feasible(const HypothesisSpace& space, const DatasetMask& z) const;
  DatasetMask generalize(const HypothesisSpace& space, const DatasetMask& z) const;
  HypothesisSpace violated(const HypothesisSpace& space, const DatasetMask& z) const;
  bool requires_oracle() const { return mutant != Mutant::NoOraclePrecondition; }
};

struct Verdict {
  PropertyId id;
  bool holds = true;
  /// Universe-file text: the structure, the falsifying datasets as `mask cex_*`
  /// lines and a `note` describing the failure.
  std::optional<std::string> counterexample;
};

Verdict check_property(PropertyId id, const Structure& structure, const Calculus& calculus = {});

/// f_Z: correct exactly on Z, (oracle+1) mod y_size elsewhere.
Hypothesis memorizer(const FiniteUniverse& universe, const DatasetMask& z);

/// { f_Z : Z ⊆ features }, 2^x_size members ordered by mask code.
HypothesisSpace build_memorizer_space(const FiniteUniverse& universe);

/// Injects f_{Z∪U} and f_{Z∪V} into `base` (or {oracle} when omitted) and checks
/// generalization(Z) == Z. U and V must partition the complement of Z.
Verdict check_no_generalization_split(const FiniteUniverse& universe, const DatasetMask& z, const DatasetMask& u,
                                      const DatasetMask& v, const std::optional<HypothesisSpace>& base = std::nullopt,
                                      const Calculus& calculus = {});

std::string serialize_structure(const Structure& structure);
/// Reads a structure (or a counterexample) back; masks named V and W are
/// required, F0, F1, ... form the family, other masks and notes are ignored.
Structure parse_structure(std::string_view text);

/// Re-runs a check on a serialized counterexample.
Verdict replay_counterexample(PropertyId id, std::string_view counterexample, const Calculus& calculus = {});

struct SuiteRow {
  PropertyId id;
  std::size_t checked = 0;
  std::size_t failed = 0;
  std::optional<std::uint64_t> first_failing_seed;
  std::optional<std::string> first_counterexample;
};

struct SuiteReport {
  StructureLimits limits;
  std::size_t structures = 0;
  std::vector<SuiteRow> rows;

  bool all_hold() const;
  std::size_t failing_ids() const;
  std::string to_csv() const;
};

/// Structure i uses seed limits.seed + i. `jobs` worker threads share the sweep.
SuiteReport run_suite(const StructureLimits& limits, std::size_t structures, const Calculus& calculus = {},
                      std::size_t jobs = 1);

/// The structure used for seed `seed` of a sweep, after mutant-specific
/// adjustments (the NoOraclePrecondition mutant may drop the oracle).
Structure suite_structure(const StructureLimits& limits, std::uint64_t seed, const Calculus& calculus);

}  // namespace setgen
