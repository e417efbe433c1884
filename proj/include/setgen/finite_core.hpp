#pragma once

// Exact set calculus over finite feature/label alphabets.
//
// A universe fixes the feature alphabet {0..x_size-1}, the label alphabet
// {0..y_size-1} and the oracle labelling. Because the oracle is a function,
// any subset of the ideal dataset is identified by its feature set, so
// datasets are plain feature masks.

#include <compare>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace setgen {

using Label = std::uint32_t;
using Feature = std::size_t;

struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct PreconditionError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Parse error carrying the 1-based line it occurred on.
class FormatError : public std::runtime_error {
 public:
  FormatError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class FiniteUniverse {
 public:
  FiniteUniverse(std::size_t y_size, std::vector<Label> oracle);

  std::size_t x_size() const { return oracle_.size(); }
  std::size_t y_size() const { return y_size_; }
  const std::vector<Label>& oracle() const { return oracle_; }
  Label oracle(Feature x) const { return oracle_[x]; }

  bool operator==(const FiniteUniverse&) const = default;

 private:
  std::size_t y_size_;
  std::vector<Label> oracle_;
};

class Hypothesis {
 public:
  Hypothesis() = default;
  explicit Hypothesis(std::vector<Label> table) : table_(std::move(table)) {}

  const std::vector<Label>& table() const { return table_; }
  Label operator()(Feature x) const { return table_[x]; }
  std::size_t size() const { return table_.size(); }

  bool well_formed_for(const FiniteUniverse& u) const;

  auto operator<=>(const Hypothesis&) const = default;

 private:
  std::vector<Label> table_;
};

/// The hypothesis that reproduces the oracle.
Hypothesis oracle_hypothesis(const FiniteUniverse& universe);

class DatasetMask {
 public:
  DatasetMask() = default;
  explicit DatasetMask(std::size_t size, bool value = false) : bits_(size, value) {}
  explicit DatasetMask(std::vector<bool> bits) : bits_(std::move(bits)) {}

  static DatasetMask none(std::size_t size) { return DatasetMask(size, false); }
  static DatasetMask all(std::size_t size) { return DatasetMask(size, true); }
  static DatasetMask of(std::size_t size, std::initializer_list<Feature> features);
  /// Low `size` bits of `code`, bit i -> feature i.
  static DatasetMask from_bits(std::size_t size, std::uint64_t code);

  std::size_t size() const { return bits_.size(); }
  bool operator[](Feature x) const { return bits_[x]; }
  void set(Feature x, bool value = true) { bits_.at(x) = value; }
  std::size_t count() const;
  bool empty() const { return count() == 0; }
  std::uint64_t to_bits() const;
  std::vector<Feature> features() const;

  DatasetMask operator|(const DatasetMask& other) const;
  DatasetMask operator&(const DatasetMask& other) const;
  DatasetMask operator-(const DatasetMask& other) const;
  DatasetMask operator~() const;
  DatasetMask with(Feature x) const;

  bool subset_of(const DatasetMask& other) const;
  bool proper_subset_of(const DatasetMask& other) const { return subset_of(other) && *this != other; }

  bool operator==(const DatasetMask&) const = default;

  /// `{0,2}` style rendering.
  std::string to_set_string() const;

 private:
  std::vector<bool> bits_;
};

/// Ordered, duplicate-free list of hypotheses over one universe.
class HypothesisSpace {
 public:
  explicit HypothesisSpace(FiniteUniverse universe) : universe_(std::move(universe)) {}
  HypothesisSpace(FiniteUniverse universe, std::vector<Hypothesis> members);

  /// Skips the duplicate scan; `members` must already be distinct and well formed.
  static HypothesisSpace from_distinct(FiniteUniverse universe, std::vector<Hypothesis> members);

  const FiniteUniverse& universe() const { return universe_; }
  const std::vector<Hypothesis>& members() const { return members_; }
  std::size_t size() const { return members_.size(); }
  bool empty() const { return members_.empty(); }
  auto begin() const { return members_.begin(); }
  auto end() const { return members_.end(); }
  const Hypothesis& operator[](std::size_t i) const { return members_[i]; }

  bool contains(const Hypothesis& f) const;
  bool contains_oracle() const;
  /// Appends `f` unless already present; returns whether it was added.
  bool add(Hypothesis f);

  /// Set inclusion, ignoring order.
  bool subset_of(const HypothesisSpace& other) const;
  bool same_members(const HypothesisSpace& other) const;

 private:
  FiniteUniverse universe_;
  std::vector<Hypothesis> members_;
};

/// Exact non-negative rational, always reduced.
struct Rational {
  std::uint64_t num = 0;
  std::uint64_t den = 1;

  static Rational make(std::uint64_t num, std::uint64_t den);
  double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string to_string() const;

  bool operator==(const Rational&) const = default;
  std::strong_ordering operator<=>(const Rational& other) const;
};

bool satisfies(const Hypothesis& f, Feature x, const FiniteUniverse& universe);

/// Members of `space` correct on every feature in `z_mask`, order preserved.
HypothesisSpace feasible_set(const HypothesisSpace& space, const DatasetMask& z_mask);

/// Features on which every member of `feasible` agrees with the oracle. An
/// empty `feasible` yields the full mask (vacuous truth).
DatasetMask unanimous_correct(const HypothesisSpace& feasible);

/// Features on which every member of the feasible set of `z_mask` is correct.
/// Requires the oracle to be a member of `space`.
DatasetMask generalization(const HypothesisSpace& space, const DatasetMask& z_mask);

DatasetMask consistent_set(const std::vector<Hypothesis>& members, const FiniteUniverse& universe);

/// Members wrong on at least one feature of `z_mask`.
HypothesisSpace violated_set(const std::vector<Hypothesis>& members, const DatasetMask& z_mask,
                             const FiniteUniverse& universe);

DatasetMask correct_set(const Hypothesis& f, const FiniteUniverse& universe);

Rational accuracy(const Hypothesis& f, const FiniteUniverse& universe);

// Plain-text universe fixtures:
//
//   universe x=<n> y=<m>
//   oracle <n labels>
//   hyp <n labels>          (zero or more)
//   mask <name> <n 0/1>     (zero or more, named datasets)
//   note <free text>        (zero or more)
struct UniverseFile {
  HypothesisSpace space;
  std::vector<std::pair<std::string, DatasetMask>> masks;
  std::vector<std::string> notes;

  const DatasetMask* find_mask(std::string_view name) const;
};

UniverseFile parse_universe_file(std::string_view text);
UniverseFile read_universe_file(const std::string& path);
std::string format_universe_file(const UniverseFile& file);

std::string format_hypothesis(const Hypothesis& f);
std::string format_space(const HypothesisSpace& space);

}  // namespace setgen
