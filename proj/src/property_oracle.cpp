#include "setgen/property_oracle.hpp"

#include <algorithm>
#include <bit>
#include <functional>
#include <map>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

namespace setgen {

namespace {

constexpr std::size_t kExhaustiveFeatures = 12;
constexpr std::size_t kExhaustivePairFeatures = 8;
constexpr std::size_t kSampledMasks = 256;
constexpr std::size_t kSampledSupersets = 16;
constexpr std::size_t kFamiliesPerSize = 32;
constexpr std::size_t kMaxFamily = 4;
constexpr std::size_t kMaxCheckedFeatures = 20;

struct IdName {
  PropertyId id;
  std::string_view name;
};

constexpr IdName kIds[] = {
    {PropertyId::P1, "P1"},          {PropertyId::P2, "P2"},         {PropertyId::P3, "P3"},
    {PropertyId::P4, "P4"},          {PropertyId::P5, "P5"},         {PropertyId::P6, "P6"},
    {PropertyId::P7, "P7"},          {PropertyId::P8, "P8"},         {PropertyId::P9, "P9"},
    {PropertyId::P10, "P10"},        {PropertyId::AccFloor, "ACC_FLOOR"},
    {PropertyId::Thm1, "THM1"},      {PropertyId::NoGen1, "NOGEN1"}, {PropertyId::NoGen2, "NOGEN2"},
    {PropertyId::B1_1, "B1_1"},      {PropertyId::B1_2, "B1_2"},     {PropertyId::B1_3, "B1_3"},
    {PropertyId::B1_4, "B1_4"},      {PropertyId::B1_5, "B1_5"},     {PropertyId::B1_6, "B1_6"},
    {PropertyId::B1_7, "B1_7"},      {PropertyId::B1_8, "B1_8"},     {PropertyId::B1_9, "B1_9"},
    {PropertyId::B1_10, "B1_10"},    {PropertyId::B1_11, "B1_11"},   {PropertyId::B1_12, "B1_12"},
    {PropertyId::B1_13, "B1_13"},
};

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Fixed-size bitset over the members of one hypothesis space.
struct Bits {
  std::vector<std::uint64_t> words;
  std::size_t size = 0;

  explicit Bits(std::size_t n = 0, bool value = false) : words((n + 63) / 64, value ? ~0ULL : 0ULL), size(n) {
    trim();
  }
  void trim() {
    if (size % 64 && !words.empty()) words.back() &= (1ULL << (size % 64)) - 1;
  }
  void set(std::size_t i) { words[i / 64] |= 1ULL << (i % 64); }
  bool test(std::size_t i) const { return (words[i / 64] >> (i % 64)) & 1ULL; }
  bool any() const {
    return std::any_of(words.begin(), words.end(), [](std::uint64_t w) { return w != 0; });
  }
  std::size_t count() const {
    std::size_t c = 0;
    for (auto w : words) c += static_cast<std::size_t>(std::popcount(w));
    return c;
  }
  Bits operator&(const Bits& o) const {
    Bits r = *this;
    for (std::size_t i = 0; i < words.size(); ++i) r.words[i] &= o.words[i];
    return r;
  }
  Bits operator|(const Bits& o) const {
    Bits r = *this;
    for (std::size_t i = 0; i < words.size(); ++i) r.words[i] |= o.words[i];
    return r;
  }
  Bits operator-(const Bits& o) const {
    Bits r = *this;
    for (std::size_t i = 0; i < words.size(); ++i) r.words[i] &= ~o.words[i];
    return r;
  }
  bool subset_of(const Bits& o) const {
    for (std::size_t i = 0; i < words.size(); ++i)
      if (words[i] & ~o.words[i]) return false;
    return true;
  }
  bool operator==(const Bits&) const = default;
  std::vector<std::size_t> indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size; ++i)
      if (test(i)) out.push_back(i);
    return out;
  }
};

bool subset(std::uint64_t a, std::uint64_t b) { return (a & ~b) == 0; }
bool proper_subset(std::uint64_t a, std::uint64_t b) { return subset(a, b) && a != b; }

std::uint64_t table_key(const Hypothesis& f, std::size_t y_size) {
  std::uint64_t key = 0;
  for (std::size_t i = f.size(); i-- > 0;) key = key * y_size + f(i);
  return key;
}

/// Memoized calculus results over one space, keyed by mask code.
class Evaluator {
 public:
  Evaluator(HypothesisSpace space, const Calculus& calculus) : space_(std::move(space)), calculus_(calculus) {
    const auto& u = space_.universe();
    for (std::size_t i = 0; i < space_.size(); ++i) {
      index_.emplace(table_key(space_[i], u.y_size()), i);
      correct_.push_back(correct_set(space_[i], u).to_bits());
    }
    all_ = (u.x_size() == 64) ? ~0ULL : ((1ULL << u.x_size()) - 1);
  }

  const HypothesisSpace& space() const { return space_; }
  std::size_t size() const { return space_.size(); }
  std::uint64_t full() const { return all_; }
  std::uint64_t correct_code(std::size_t i) const { return correct_[i]; }

  const Bits& feasible(std::uint64_t code) {
    auto it = feasible_.find(code);
    if (it == feasible_.end())
      it = feasible_.emplace(code, to_bits(calculus_.feasible(space_, mask(code)))).first;
    return it->second;
  }

  const Bits& violated(std::uint64_t code) {
    auto it = violated_.find(code);
    if (it == violated_.end())
      it = violated_.emplace(code, to_bits(calculus_.violated(space_, mask(code)))).first;
    return it->second;
  }

  std::uint64_t generalize(std::uint64_t code) {
    auto it = general_.find(code);
    if (it == general_.end()) it = general_.emplace(code, calculus_.generalize(space_, mask(code)).to_bits()).first;
    return it->second;
  }

  Bits everything() const { return Bits(space_.size(), true); }

  DatasetMask mask(std::uint64_t code) const { return DatasetMask::from_bits(space_.universe().x_size(), code); }

  /// Members of `sub` must come from this space.
  Bits to_bits(const HypothesisSpace& sub) const {
    Bits b(space_.size());
    for (const auto& f : sub) {
      auto it = index_.find(table_key(f, space_.universe().y_size()));
      if (it == index_.end() || space_[it->second] != f)
        throw std::logic_error("calculus returned a hypothesis outside the input space");
      b.set(it->second);
    }
    return b;
  }

 private:
  HypothesisSpace space_;
  const Calculus& calculus_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
  std::vector<std::uint64_t> correct_;
  std::uint64_t all_ = 0;
  std::unordered_map<std::uint64_t, Bits> feasible_;
  std::unordered_map<std::uint64_t, Bits> violated_;
  std::unordered_map<std::uint64_t, std::uint64_t> general_;
};

struct Failure {
  std::vector<std::pair<std::string, std::uint64_t>> masks;
  std::string note;
};

using Outcome = std::optional<Failure>;

std::string set_string(std::uint64_t code, std::size_t x_size) {
  return DatasetMask::from_bits(x_size, code).to_set_string();
}

std::string bits_string(const Bits& b, const HypothesisSpace& space) {
  std::string out = "{";
  bool first = true;
  for (auto i : b.indices()) {
    if (!first) out += ", ";
    out += "[" + format_hypothesis(space[i]) + "]";
    first = false;
  }
  return out + "}";
}

class Checker {
 public:
  Checker(const Structure& s, const Calculus& c)
      : s_(s), calculus_(c), ev_(s.space, c), x_(s.universe().x_size()), rng_(fnv1a(serialize_structure(s))) {
    v_ = s.v.to_bits();
    w_ = s.w.to_bits();
    build_order();
  }

  Outcome run(PropertyId id) {
    switch (id) {
      case PropertyId::P1: return p1();
      case PropertyId::P2: return p2();
      case PropertyId::P3: return p3();
      case PropertyId::P4: return p4();
      case PropertyId::P5: return p5();
      case PropertyId::P6: return p6();
      case PropertyId::P7: return p7();
      case PropertyId::P8: return p8();
      case PropertyId::P9: return p9();
      case PropertyId::P10: return p10();
      case PropertyId::AccFloor: return acc_floor();
      case PropertyId::Thm1: return thm1();
      case PropertyId::NoGen1: return nogen1();
      case PropertyId::NoGen2: return nogen2();
      case PropertyId::B1_1: return b1_pointwise_t();
      case PropertyId::B1_2: return b1_t_union();
      case PropertyId::B1_3: return b1_t_family_union();
      case PropertyId::B1_4: return b1_t_intersection();
      case PropertyId::B1_5: return b1_t_family_intersection();
      case PropertyId::B1_6: return b1_t_complement();
      case PropertyId::B1_7: return b1_pointwise_s();
      case PropertyId::B1_8: return b1_s_intersection();
      case PropertyId::B1_9: return b1_s_family_intersection();
      case PropertyId::B1_10: return b1_s_union();
      case PropertyId::B1_11: return b1_s_family_union();
      case PropertyId::B1_12: return b1_s_complement();
      case PropertyId::B1_13: return b1_s_complement_difference();
    }
    throw InputError("unknown property id");
  }

 private:
  // ---- quantifier domains ------------------------------------------------

  void build_order() {
    std::vector<std::uint64_t> codes;
    if (x_ <= kExhaustiveFeatures) {
      for (std::uint64_t c = 0; c <= ev_.full(); ++c) codes.push_back(c);
    } else {
      std::uniform_int_distribution<std::uint64_t> pick(0, ev_.full());
      codes = {0, ev_.full()};
      for (std::size_t i = 0; i < kSampledMasks; ++i) codes.push_back(pick(rng_));
      for (const auto& f : s_.family) codes.push_back(f.to_bits());
    }
    std::sort(codes.begin(), codes.end(), [](std::uint64_t a, std::uint64_t b) {
      const int pa = std::popcount(a), pb = std::popcount(b);
      return pa != pb ? pa < pb : a < b;
    });
    codes.erase(std::unique(codes.begin(), codes.end()), codes.end());
    order_.push_back(v_);
    if (w_ != v_) order_.push_back(w_);
    for (auto c : codes)
      if (c != v_ && c != w_) order_.push_back(c);
  }

  /// Visits (V, W) with V ⊆ W, the structure's own pair first.
  template <class Fn>
  Outcome nested_pairs(Fn&& fn) {
    if (auto r = fn(v_, w_)) return r;
    for (auto a : order_) {
      if (x_ <= kExhaustivePairFeatures) {
        for (auto b : order_)
          if (subset(a, b))
            if (auto r = fn(a, b)) return r;
      } else {
        std::uniform_int_distribution<std::uint64_t> pick(0, ev_.full());
        for (std::size_t k = 0; k < kSampledSupersets; ++k)
          if (auto r = fn(a, a | pick(rng_))) return r;
      }
    }
    return std::nullopt;
  }

  /// Visits arbitrary (V, W), the structure's own pair first.
  template <class Fn>
  Outcome any_pairs(Fn&& fn) {
    if (auto r = fn(v_, w_)) return r;
    for (auto a : order_) {
      if (x_ <= kExhaustivePairFeatures) {
        for (auto b : order_)
          if (auto r = fn(a, b)) return r;
      } else {
        std::uniform_int_distribution<std::uint64_t> pick(0, ev_.full());
        for (std::size_t k = 0; k < kSampledSupersets; ++k)
          if (auto r = fn(a, pick(rng_))) return r;
      }
    }
    return std::nullopt;
  }

  template <class Fn>
  Outcome singles(Fn&& fn) {
    for (auto a : order_)
      if (auto r = fn(a)) return r;
    return std::nullopt;
  }

  /// Families of size 1..4: the structure's own {V, W, F...} first, then samples.
  std::vector<std::vector<std::uint64_t>> families() {
    std::vector<std::vector<std::uint64_t>> out;
    std::vector<std::uint64_t> own = {v_, w_};
    for (const auto& f : s_.family) own.push_back(f.to_bits());
    out.push_back(own);
    std::uniform_int_distribution<std::size_t> pick(0, order_.size() - 1);
    for (std::size_t k = 1; k <= kMaxFamily; ++k)
      for (std::size_t n = 0; n < kFamiliesPerSize; ++n) {
        std::vector<std::uint64_t> fam;
        for (std::size_t j = 0; j < k; ++j) fam.push_back(order_[pick(rng_)]);
        out.push_back(std::move(fam));
      }
    return out;
  }

  /// Hypothesis subsets G ⊆ members (as member index lists), nonempty.
  std::vector<std::vector<std::size_t>> subsets_of(const std::vector<std::size_t>& members) {
    std::vector<std::vector<std::size_t>> out;
    if (members.empty()) return out;
    if (members.size() <= 6) {
      for (std::uint64_t pick = 1; pick < (1ULL << members.size()); ++pick) {
        std::vector<std::size_t> g;
        for (std::size_t i = 0; i < members.size(); ++i)
          if ((pick >> i) & 1ULL) g.push_back(members[i]);
        out.push_back(std::move(g));
      }
      return out;
    }
    out.push_back(members);
    const std::size_t step = std::max<std::size_t>(1, members.size() / 8);
    for (std::size_t i = 0; i < members.size(); i += step) out.push_back({members[i]});
    std::bernoulli_distribution coin(0.5);
    for (int n = 0; n < 8; ++n) {
      std::vector<std::size_t> g;
      for (auto m : members)
        if (coin(rng_)) g.push_back(m);
      if (g.empty()) g.push_back(members.front());
      out.push_back(std::move(g));
    }
    return out;
  }

  std::uint64_t consistent_code(const std::vector<std::size_t>& g) const {
    std::uint64_t code = ev_.full();
    for (auto i : g) code &= ev_.correct_code(i);
    return code;
  }

  std::string hyps_string(const std::vector<std::size_t>& g) const {
    std::string out = "{";
    for (std::size_t i = 0; i < g.size(); ++i) out += (i ? ", [" : "[") + format_hypothesis(s_.space[g[i]]) + "]";
    return out + "}";
  }

  std::string S(std::uint64_t code) const { return set_string(code, x_); }
  std::string H(const Bits& b) const { return bits_string(b, s_.space); }

  Failure fail(std::vector<std::pair<std::string, std::uint64_t>> masks, std::string note) {
    return Failure{std::move(masks), std::move(note)};
  }

  // ---- Properties ------------------------------------------------------------

  Outcome p1() {
    return nested_pairs([&](std::uint64_t a, std::uint64_t b) -> Outcome {
      if (!ev_.feasible(b).subset_of(ev_.feasible(a)))
        return fail({{"cex_V", a}, {"cex_W", b}},
                    "T(W)=" + H(ev_.feasible(b)) + " not within T(V)=" + H(ev_.feasible(a)));
      return std::nullopt;
    });
  }

  Outcome p2() {
    return nested_pairs([&](std::uint64_t a, std::uint64_t b) -> Outcome {
      if (!subset(ev_.generalize(a), ev_.generalize(b)))
        return fail({{"cex_V", a}, {"cex_W", b}},
                    "V_A=" + S(ev_.generalize(a)) + " not within W_A=" + S(ev_.generalize(b)));
      return std::nullopt;
    });
  }

  Outcome p3() {
    return singles([&](std::uint64_t a) -> Outcome {
      const auto g = ev_.generalize(a);
      const auto gg = ev_.generalize(g);
      if (g != gg) return fail({{"cex_V", a}}, "V_A=" + S(g) + " but (V_A)_A=" + S(gg));
      return std::nullopt;
    });
  }

  Outcome p4() {
    return nested_pairs([&](std::uint64_t a, std::uint64_t b) -> Outcome {
      const auto ga = ev_.generalize(a);
      if (!subset(b, ga)) return std::nullopt;
      if (ev_.generalize(b) != ga)
        return fail({{"cex_V", a}, {"cex_W", b}},
                    "V ⊆ W ⊆ V_A=" + S(ga) + " but W_A=" + S(ev_.generalize(b)));
      return std::nullopt;
    });
  }

  Outcome p5() {
    return any_pairs([&](std::uint64_t a, std::uint64_t b) -> Outcome {
      const auto ga = ev_.generalize(a);
      if (!subset(b, ga)) return std::nullopt;
      if (!subset(ev_.generalize(b), ga))
        return fail({{"cex_V", a}, {"cex_W", b}}, "W ⊆ V_A=" + S(ga) + " but W_A=" + S(ev_.generalize(b)));
      return std::nullopt;
    });
  }

  Outcome p6() {
    if (ev_.feasible(0) != ev_.everything()) return fail({{"cex_V", 0}}, "T(∅)=" + H(ev_.feasible(0)) + " != F_A");
    return std::nullopt;
  }

  Outcome p7() {
    // Evaluator::to_bits already rejects members outside the space; the
    // remaining obligation is that nothing is lost in translation.
    return singles([&](std::uint64_t a) -> Outcome {
      const auto t = calculus_.feasible(s_.space, ev_.mask(a));
      if (!t.subset_of(s_.space)) return fail({{"cex_V", a}}, "T(V) escapes F_A");
      return std::nullopt;
    });
  }

  /// Pairs (x, y) on which every member of `members` predicts y.
  std::vector<std::pair<Feature, Label>> agreement_pairs(const Bits& members) const {
    std::vector<std::pair<Feature, Label>> out;
    const auto& u = s_.universe();
    const auto idx = members.indices();
    for (Feature x = 0; x < x_; ++x)
      for (Label y = 0; y < u.y_size(); ++y)
        if (std::all_of(idx.begin(), idx.end(), [&](std::size_t i) { return s_.space[i](x) == y; }))
          out.emplace_back(x, y);
    return out;
  }

  Outcome p8() {
    const auto& u = s_.universe();
    return singles([&](std::uint64_t a) -> Outcome {
      const auto& t = ev_.feasible(a);
      const auto ga = ev_.generalize(a);
      std::uint64_t u_in_oracle = 0;
      for (auto [x, y] : agreement_pairs(t)) {
        if (y != u.oracle(x))
          return fail({{"cex_V", a}}, "U contains (" + std::to_string(x) + "," + std::to_string(y) +
                                          ") outside the oracle dataset; T(V)=" + H(t));
        u_in_oracle |= 1ULL << x;
      }
      if (u_in_oracle != ga) return fail({{"cex_V", a}}, "U=" + S(u_in_oracle) + " but V_A=" + S(ga));
      for (const auto& g : subsets_of(t.indices())) {
        const auto w = consistent_code(g);
        if (!subset(ga, w))
          return fail({{"cex_V", a}, {"cex_W", w}},
                      "G=" + hyps_string(g) + " has consistent set " + S(w) + " missing part of V_A=" + S(ga));
      }
      return std::nullopt;
    });
  }

  Outcome p9() {
    return nested_pairs([&](std::uint64_t a, std::uint64_t b) -> Outcome {
      const auto ga = ev_.generalize(a), gb = ev_.generalize(b);
      if (!subset(ga, gb)) return fail({{"cex_V", a}, {"cex_W", b}}, "V_A=" + S(ga) + " not within W_A=" + S(gb));
      const auto extra = gb & ~ga;
      for (Feature w = 0; w < x_; ++w) {
        if (!((extra >> w) & 1ULL)) continue;
        const auto grown = ev_.generalize(a | (1ULL << w));
        if (!proper_subset(ga, grown))
          return fail({{"cex_V", a}, {"cex_W", b}, {"cex_w", 1ULL << w}},
                      "adding w=" + std::to_string(w) + " from W_A-V_A gives " + S(grown) + " not strictly above V_A=" +
                          S(ga));
      }
      return std::nullopt;
    });
  }

  std::vector<std::vector<std::size_t>> proper_subspaces() {
    std::vector<std::vector<std::size_t>> out;
    const std::size_t n = s_.space.size();
    if (n < 2) return out;
    const auto oracle = oracle_hypothesis(s_.universe());
    std::size_t anchor = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (s_.space[i] == oracle) anchor = i;
    out.push_back({anchor});
    std::vector<std::size_t> drop_one;
    const std::size_t dropped = (n - 1 == anchor) ? (anchor == 0 ? 1 : 0) : n - 1;
    for (std::size_t i = 0; i < n; ++i)
      if (i != dropped) drop_one.push_back(i);
    out.push_back(drop_one);
    std::bernoulli_distribution coin(0.5);
    for (int k = 0; k < 2; ++k) {
      std::vector<std::size_t> sub;
      for (std::size_t i = 0; i < n; ++i) {
        const bool keep_anchor = i == anchor && calculus_.requires_oracle();
        if (keep_anchor || coin(rng_)) sub.push_back(i);
      }
      if (sub.empty()) sub.push_back(anchor);
      if (sub.size() == n) sub.erase(sub.begin() + static_cast<std::ptrdiff_t>(dropped == 0 ? 0 : dropped));
      out.push_back(std::move(sub));
    }
    return out;
  }

  Outcome p10() {
    for (const auto& sub : proper_subspaces()) {
      std::vector<Hypothesis> members;
      for (auto i : sub) members.push_back(s_.space[i]);
      Evaluator small(HypothesisSpace::from_distinct(s_.universe(), std::move(members)), calculus_);
      auto r = singles([&](std::uint64_t a) -> Outcome {
        const auto ga = small.generalize(a);  // under F_A
        const auto gb = ev_.generalize(a);    // under F_B ⊋ F_A
        if (!subset(gb, ga))
          return fail({{"cex_V", a}}, "F_A=" + hyps_string(sub) + " gives V_A=" + S(ga) + " but V_B=" + S(gb));
        const auto extra = ga & ~gb;
        for (Feature w = 0; w < x_; ++w) {
          if (!((extra >> w) & 1ULL)) continue;
          const auto grown = ev_.generalize(a | (1ULL << w));
          if (!proper_subset(gb, grown))
            return fail({{"cex_V", a}, {"cex_w", 1ULL << w}},
                        "F_A=" + hyps_string(sub) + ": adding w=" + std::to_string(w) + " gives (V∪{w})_B=" +
                            S(grown) + " not strictly above V_B=" + S(gb));
        }
        return std::nullopt;
      });
      if (r) return r;
    }
    return std::nullopt;
  }

  Outcome acc_floor() {
    const auto& u = s_.universe();
    return singles([&](std::uint64_t a) -> Outcome {
      const auto floor = Rational::make(static_cast<std::uint64_t>(std::popcount(a)), x_);
      for (auto i : ev_.feasible(a).indices()) {
        const auto acc = accuracy(s_.space[i], u);
        if (acc < floor)
          return fail({{"cex_Z", a}}, "f=[" + format_hypothesis(s_.space[i]) + "] in T(Z) has accuracy " +
                                          acc.to_string() + " < |Z|/|X|=" + floor.to_string());
      }
      return std::nullopt;
    });
  }

  Outcome thm1() {
    return singles([&](std::uint64_t a) -> Outcome {
      const auto ga = ev_.generalize(a);
      for (const auto& g : subsets_of(ev_.feasible(a).indices())) {
        const auto w_set = consistent_code(g);
        const auto outside = ev_.full() & ~w_set;
        for (Feature w = 0; w < x_; ++w) {
          if (!((outside >> w) & 1ULL)) continue;
          const auto grown = ev_.generalize(a | (1ULL << w));
          if (!proper_subset(ga, grown))
            return fail({{"cex_V", a}, {"cex_W", w_set}, {"cex_w", 1ULL << w}},
                        "G=" + hyps_string(g) + ", w=" + std::to_string(w) + " outside W: (V∪{w})_A=" + S(grown) +
                            " not strictly above V_A=" + S(ga));
        }
      }
      return std::nullopt;
    });
  }

  Outcome nogen1() {
    const auto& u = s_.universe();
    if (u.y_size() < 2) return std::nullopt;  // no memorizer exists
    Evaluator mem(build_memorizer_space(u), calculus_);
    auto r = singles([&](std::uint64_t a) -> Outcome {
      if (mem.generalize(a) != a)
        return fail({{"cex_Z", a}}, "memorizer space gives Z_A=" + S(mem.generalize(a)));
      return std::nullopt;
    });
    if (r) return r;
    return singles([&](std::uint64_t a) -> Outcome {
      HypothesisSpace injected = s_.space;
      injected.add(memorizer(u, ev_.mask(a)));
      const auto g = calculus_.generalize(injected, ev_.mask(a)).to_bits();
      if (g != a) return fail({{"cex_Z", a}}, "F_A with f_Z injected gives Z_A=" + S(g));
      return std::nullopt;
    });
  }

  Outcome nogen2() {
    const auto& u = s_.universe();
    if (u.y_size() < 2) return std::nullopt;
    // Every partition of the complement, injected next to the oracle alone,
    // then a few partitions for the structure's own V injected into F_A.
    auto run_split = [&](std::uint64_t z, std::uint64_t part_u, std::uint64_t part_v,
                         const std::optional<HypothesisSpace>& base) -> Outcome {
      const auto verdict =
          check_no_generalization_split(u, ev_.mask(z), ev_.mask(part_u), ev_.mask(part_v), base, calculus_);
      if (!verdict.holds)
        return fail({{"cex_Z", z}, {"cex_U", part_u}, {"cex_V", part_v}},
                    std::string("split injection generalizes beyond Z") + (base ? " (into F_A)" : ""));
      return std::nullopt;
    };
    auto r = singles([&](std::uint64_t z) -> Outcome {
      const auto rest = ev_.full() & ~z;
      for (std::uint64_t part_u = rest;; part_u = (part_u - 1) & rest) {
        if (auto f = run_split(z, part_u, rest & ~part_u, std::nullopt)) return f;
        if (part_u == 0) break;
      }
      return std::nullopt;
    });
    if (r) return r;
    const auto rest = ev_.full() & ~v_;
    std::uniform_int_distribution<std::uint64_t> pick(0, ev_.full());
    for (int k = 0; k < 4; ++k) {
      const auto part_u = pick(rng_) & rest;
      if (auto f = run_split(v_, part_u, rest & ~part_u, s_.space)) return f;
    }
    return std::nullopt;
  }

  // ---- Set-computation identities ----------------------------------------

  Outcome b1_pointwise_t() {
    return singles([&](std::uint64_t a) -> Outcome {
      Bits meet = ev_.everything();
      for (Feature x = 0; x < x_; ++x)
        if ((a >> x) & 1ULL) meet = meet & ev_.feasible(1ULL << x);
      if (ev_.feasible(a) != meet)
        return fail({{"cex_V", a}}, "T(V)=" + H(ev_.feasible(a)) + " but ∩T(v)=" + H(meet));
      return std::nullopt;
    });
  }

  Outcome b1_t_union() {
    return any_pairs([&](std::uint64_t a, std::uint64_t b) -> Outcome {
      if (ev_.feasible(a | b) != (ev_.feasible(a) & ev_.feasible(b)))
        return fail({{"cex_V", a}, {"cex_W", b}}, "T(V∪W)=" + H(ev_.feasible(a | b)) + " != T(V)∩T(W)");
      return std::nullopt;
    });
  }

  Outcome b1_t_intersection() {
    return any_pairs([&](std::uint64_t a, std::uint64_t b) -> Outcome {
      if (!(ev_.feasible(a) | ev_.feasible(b)).subset_of(ev_.feasible(a & b)))
        return fail({{"cex_V", a}, {"cex_W", b}}, "T(V∩W)=" + H(ev_.feasible(a & b)) + " misses part of T(V)∪T(W)");
      return std::nullopt;
    });
  }

  std::vector<std::pair<std::string, std::uint64_t>> family_masks(const std::vector<std::uint64_t>& fam) const {
    std::vector<std::pair<std::string, std::uint64_t>> out;
    for (std::size_t i = 0; i < fam.size(); ++i) out.emplace_back("cex_F" + std::to_string(i), fam[i]);
    return out;
  }

  template <class Fn>
  Outcome over_families(Fn&& fn) {
    for (const auto& fam : families()) {
      std::uint64_t join = 0, meet = ev_.full();
      for (auto m : fam) {
        join |= m;
        meet &= m;
      }
      if (auto note = fn(fam, join, meet)) return fail(family_masks(fam), *note);
    }
    return std::nullopt;
  }

  Outcome b1_t_family_union() {
    return over_families([&](const auto& fam, std::uint64_t join, std::uint64_t) -> std::optional<std::string> {
      Bits meet_t = ev_.everything();
      for (auto m : fam) meet_t = meet_t & ev_.feasible(m);
      if (ev_.feasible(join) != meet_t) return "T(∪V)=" + H(ev_.feasible(join)) + " but ∩T(V)=" + H(meet_t);
      return std::nullopt;
    });
  }

  Outcome b1_t_family_intersection() {
    return over_families([&](const auto& fam, std::uint64_t, std::uint64_t meet) -> std::optional<std::string> {
      Bits join_t(ev_.size());
      for (auto m : fam) join_t = join_t | ev_.feasible(m);
      if (!join_t.subset_of(ev_.feasible(meet))) return "T(∩V)=" + H(ev_.feasible(meet)) + " misses part of ∪T(V)";
      return std::nullopt;
    });
  }

  Outcome b1_t_complement() {
    return singles([&](std::uint64_t a) -> Outcome {
      const auto rest = ev_.full() & ~a;
      if (ev_.feasible(a | rest) != (ev_.feasible(a) & ev_.feasible(rest)))
        return fail({{"cex_V", a}}, "T(V∪(Z-V))=" + H(ev_.feasible(a | rest)) + " != T(V)∩T(Z-V)");
      return std::nullopt;
    });
  }

  Outcome b1_pointwise_s() {
    return singles([&](std::uint64_t a) -> Outcome {
      Bits join(ev_.size());
      for (Feature x = 0; x < x_; ++x)
        if ((a >> x) & 1ULL) join = join | ev_.violated(1ULL << x);
      if (ev_.violated(a) != join) return fail({{"cex_V", a}}, "S(V)=" + H(ev_.violated(a)) + " but ∪S(v)=" + H(join));
      return std::nullopt;
    });
  }

  Outcome b1_s_intersection() {
    return any_pairs([&](std::uint64_t a, std::uint64_t b) -> Outcome {
      if (!ev_.violated(a & b).subset_of(ev_.violated(a) & ev_.violated(b)))
        return fail({{"cex_V", a}, {"cex_W", b}}, "S(V∩W)=" + H(ev_.violated(a & b)) + " escapes S(V)∩S(W)");
      return std::nullopt;
    });
  }

  Outcome b1_s_family_intersection() {
    return over_families([&](const auto& fam, std::uint64_t, std::uint64_t meet) -> std::optional<std::string> {
      Bits meet_s = ev_.everything();
      for (auto m : fam) meet_s = meet_s & ev_.violated(m);
      if (!ev_.violated(meet).subset_of(meet_s)) return "S(∩V)=" + H(ev_.violated(meet)) + " escapes ∩S(V)";
      return std::nullopt;
    });
  }

  Outcome b1_s_union() {
    return any_pairs([&](std::uint64_t a, std::uint64_t b) -> Outcome {
      if (ev_.violated(a | b) != (ev_.violated(a) | ev_.violated(b)))
        return fail({{"cex_V", a}, {"cex_W", b}}, "S(V∪W)=" + H(ev_.violated(a | b)) + " != S(V)∪S(W)");
      return std::nullopt;
    });
  }

  Outcome b1_s_family_union() {
    return over_families([&](const auto& fam, std::uint64_t join, std::uint64_t) -> std::optional<std::string> {
      Bits join_s(ev_.size());
      for (auto m : fam) join_s = join_s | ev_.violated(m);
      if (ev_.violated(join) != join_s) return "S(∪V)=" + H(ev_.violated(join)) + " but ∪S(V)=" + H(join_s);
      return std::nullopt;
    });
  }

  Outcome b1_s_complement() {
    return singles([&](std::uint64_t a) -> Outcome {
      const auto rest = ev_.full() & ~a;
      if (ev_.violated(a | rest) != (ev_.violated(a) | ev_.violated(rest)))
        return fail({{"cex_V", a}}, "S(V∪(Z-V))=" + H(ev_.violated(a | rest)) + " != S(V)∪S(Z-V)");
      return std::nullopt;
    });
  }

  Outcome b1_s_complement_difference() {
    return singles([&](std::uint64_t a) -> Outcome {
      const auto rest = ev_.full() & ~a;
      const auto diff = ev_.violated(ev_.full()) - ev_.violated(a);
      if (!diff.subset_of(ev_.violated(rest)))
        return fail({{"cex_V", a}}, "S(Z-V)=" + H(ev_.violated(rest)) + " misses part of S(Z)-S(V)=" + H(diff));
      return std::nullopt;
    });
  }

  const Structure& s_;
  const Calculus& calculus_;
  Evaluator ev_;
  std::size_t x_;
  std::mt19937_64 rng_;
  std::uint64_t v_ = 0, w_ = 0;
  std::vector<std::uint64_t> order_;
};

UniverseFile structure_file(const Structure& s) {
  UniverseFile file{s.space, {{"V", s.v}, {"W", s.w}}, {}};
  for (std::size_t i = 0; i < s.family.size(); ++i) file.masks.emplace_back("F" + std::to_string(i), s.family[i]);
  return file;
}

}  // namespace

const std::vector<PropertyId>& all_property_ids() {
  static const std::vector<PropertyId> ids = [] {
    std::vector<PropertyId> out;
    for (const auto& e : kIds) out.push_back(e.id);
    return out;
  }();
  return ids;
}

std::string_view property_name(PropertyId id) {
  for (const auto& e : kIds)
    if (e.id == id) return e.name;
  throw InputError("unknown property id");
}

PropertyId parse_property_id(std::string_view name) {
  for (const auto& e : kIds)
    if (e.name == name) return e.id;
  throw InputError("unknown property id '" + std::string(name) + "'");
}

std::string_view mutant_name(Mutant m) {
  switch (m) {
    case Mutant::None: return "none";
    case Mutant::FeasibleInverted: return "feasible-inverted";
    case Mutant::NoOraclePrecondition: return "no-oracle-precondition";
  }
  return "none";
}

Mutant parse_mutant(std::string_view name) {
  for (auto m : {Mutant::None, Mutant::FeasibleInverted, Mutant::NoOraclePrecondition})
    if (mutant_name(m) == name) return m;
  throw InputError("unknown mutant '" + std::string(name) + "'");
}

HypothesisSpace Calculus::feasible(const HypothesisSpace& space, const DatasetMask& z) const {
  if (mutant != Mutant::FeasibleInverted) return feasible_set(space, z);
  std::vector<Hypothesis> kept;
  for (const auto& f : space)
    if (correct_set(f, space.universe()).subset_of(z)) kept.push_back(f);
  return HypothesisSpace::from_distinct(space.universe(), std::move(kept));
}

DatasetMask Calculus::generalize(const HypothesisSpace& space, const DatasetMask& z) const {
  if (mutant == Mutant::None) return generalization(space, z);
  if (requires_oracle() && !space.contains_oracle())
    throw PreconditionError("generalization requires the oracle mapping to be a member of the hypothesis space");
  return unanimous_correct(feasible(space, z));
}

HypothesisSpace Calculus::violated(const HypothesisSpace& space, const DatasetMask& z) const {
  return violated_set(space.members(), z, space.universe());
}

void StructureLimits::validate() const {
  if (max_x < 1) throw InputError("max_x must be at least 1");
  if (max_y < 1) throw InputError("max_y must be at least 1");
  if (max_x > kMaxCheckedFeatures) throw InputError("max_x above " + std::to_string(kMaxCheckedFeatures));
  if (max_space && *max_space < 1) throw InputError("max_space must be at least 1");
  if (!max_space) {
    double total = 1;
    for (std::size_t i = 0; i < max_x; ++i) total *= static_cast<double>(max_y);
    if (total > static_cast<double>(enumeration_cap))
      throw InputError("full enumeration of " + std::to_string(max_y) + "^" + std::to_string(max_x) + " = " +
                       std::to_string(static_cast<std::uint64_t>(total)) + " hypotheses exceeds the cap of " +
                       std::to_string(enumeration_cap) + "; raise the cap to at least " +
                       std::to_string(static_cast<std::uint64_t>(total)));
  }
}

std::size_t enumeration_size(const FiniteUniverse& universe) {
  std::size_t n = 1;
  for (std::size_t i = 0; i < universe.x_size(); ++i) {
    if (n > std::numeric_limits<std::size_t>::max() / universe.y_size()) return std::numeric_limits<std::size_t>::max();
    n *= universe.y_size();
  }
  return n;
}

HypothesisSpace enumerate_all_hypotheses(const FiniteUniverse& universe, std::size_t cap) {
  const auto total = enumeration_size(universe);
  if (total > cap)
    throw InputError("enumerating " + std::to_string(universe.y_size()) + "^" + std::to_string(universe.x_size()) +
                     " hypotheses needs an enumeration cap of at least " + std::to_string(total) + " (cap is " +
                     std::to_string(cap) + ")");
  std::vector<Hypothesis> all;
  all.reserve(total);
  std::vector<Label> table(universe.x_size(), 0);
  for (std::size_t n = 0; n < total; ++n) {
    all.emplace_back(table);
    // Odometer increment with the last feature varying fastest.
    for (std::size_t i = table.size(); i-- > 0;) {
      if (++table[i] < universe.y_size()) break;
      table[i] = 0;
    }
  }
  return HypothesisSpace::from_distinct(universe, std::move(all));
}

Structure random_structure(const StructureLimits& limits) {
  limits.validate();
  std::mt19937_64 rng(limits.seed);
  auto uniform = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };

  const std::size_t x = uniform(1, limits.max_x);
  const std::size_t y = uniform(1, limits.max_y);
  std::vector<Label> oracle(x);
  for (auto& label : oracle) label = static_cast<Label>(uniform(0, y - 1));
  FiniteUniverse universe(y, oracle);
  const auto oracle_f = oracle_hypothesis(universe);

  // Size regimes: a quarter full enumeration-sized, a quarter tiny, the rest uniform.
  const std::size_t total = std::min(enumeration_size(universe), limits.max_space.value_or(limits.enumeration_cap));
  std::size_t target = 0;
  switch (uniform(0, 3)) {
    case 0: target = total; break;
    case 1: target = uniform(1, std::min<std::size_t>(total, 8)); break;
    default: target = uniform(1, total); break;
  }

  std::vector<Hypothesis> members{oracle_f};
  if (!limits.max_space && enumeration_size(universe) <= limits.enumeration_cap) {
    auto all = enumerate_all_hypotheses(universe, limits.enumeration_cap).members();
    std::shuffle(all.begin(), all.end(), rng);
    for (auto& f : all) {
      if (members.size() >= target) break;
      if (f != oracle_f) members.push_back(std::move(f));
    }
  } else {
    std::set<Hypothesis> seen{oracle_f};
    std::size_t attempts = 0;
    while (members.size() < target && attempts++ < 64 * target) {
      std::vector<Label> table(x);
      for (auto& label : table) label = static_cast<Label>(uniform(0, y - 1));
      Hypothesis f(std::move(table));
      if (seen.insert(f).second) members.push_back(std::move(f));
    }
  }
  // Oracle position is randomized so checks cannot rely on it leading.
  std::swap(members[0], members[uniform(0, members.size() - 1)]);

  const std::uint64_t full = (x == 64) ? ~0ULL : ((1ULL << x) - 1);
  std::uniform_int_distribution<std::uint64_t> pick(0, full);
  const auto w = pick(rng);
  const auto v = w & pick(rng);
  return Structure{HypothesisSpace::from_distinct(universe, std::move(members)), DatasetMask::from_bits(x, v),
                   DatasetMask::from_bits(x, w), {}};
}

Structure suite_structure(const StructureLimits& limits, std::uint64_t seed, const Calculus& calculus) {
  StructureLimits l = limits;
  l.seed = seed;
  Structure s = random_structure(l);
  if (calculus.requires_oracle()) return s;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const auto& u = s.universe();
  if (u.y_size() < 2 || !std::bernoulli_distribution(0.5)(rng)) return s;
  const auto oracle = oracle_hypothesis(u);
  std::vector<Hypothesis> rest;
  for (const auto& f : s.space)
    if (f != oracle) rest.push_back(f);
  if (rest.empty()) rest.push_back(memorizer(u, DatasetMask::none(u.x_size())));
  return Structure{HypothesisSpace::from_distinct(u, std::move(rest)), s.v, s.w, s.family};
}

Hypothesis memorizer(const FiniteUniverse& universe, const DatasetMask& z) {
  if (universe.y_size() < 2) throw InputError("a memorizer needs y_size >= 2 so that a wrong label exists");
  if (z.size() != universe.x_size()) throw InputError("mask length does not match x_size");
  std::vector<Label> table(universe.x_size());
  for (Feature x = 0; x < table.size(); ++x)
    table[x] = z[x] ? universe.oracle(x) : static_cast<Label>((universe.oracle(x) + 1) % universe.y_size());
  return Hypothesis(std::move(table));
}

HypothesisSpace build_memorizer_space(const FiniteUniverse& universe) {
  if (universe.y_size() < 2) throw InputError("a memorizer space needs y_size >= 2 so that a wrong label exists");
  if (universe.x_size() > kMaxCheckedFeatures) throw InputError("memorizer space too large");
  std::vector<Hypothesis> members;
  const std::uint64_t n = 1ULL << universe.x_size();
  for (std::uint64_t code = 0; code < n; ++code)
    members.push_back(memorizer(universe, DatasetMask::from_bits(universe.x_size(), code)));
  return HypothesisSpace::from_distinct(universe, std::move(members));
}

Verdict check_no_generalization_split(const FiniteUniverse& universe, const DatasetMask& z, const DatasetMask& u,
                                      const DatasetMask& v, const std::optional<HypothesisSpace>& base,
                                      const Calculus& calculus) {
  const auto x = universe.x_size();
  if (z.size() != x || u.size() != x || v.size() != x) throw InputError("split masks must match x_size");
  if (!(u & v).empty() || !(u & z).empty() || !(v & z).empty() || (z | u | v) != DatasetMask::all(x))
    throw InputError("malformed split: U and V must partition the features outside Z");
  HypothesisSpace space = base ? *base : HypothesisSpace(universe, {oracle_hypothesis(universe)});
  space.add(memorizer(universe, z | u));
  space.add(memorizer(universe, z | v));
  const auto g = calculus.generalize(space, z);
  Verdict verdict{PropertyId::NoGen2, g == z, std::nullopt};
  if (!verdict.holds) {
    UniverseFile file{space, {{"Z", z}, {"U", u}, {"V", v}}, {"generalization(Z)=" + g.to_set_string()}};
    verdict.counterexample = format_universe_file(file);
  }
  return verdict;
}

std::string serialize_structure(const Structure& structure) { return format_universe_file(structure_file(structure)); }

Structure parse_structure(std::string_view text) {
  auto file = parse_universe_file(text);
  const auto* v = file.find_mask("V");
  const auto* w = file.find_mask("W");
  if (!v || !w) throw InputError("structure needs masks named V and W");
  Structure s{file.space, *v, *w, {}};
  for (std::size_t i = 0;; ++i) {
    const auto* f = file.find_mask("F" + std::to_string(i));
    if (!f) break;
    s.family.push_back(*f);
  }
  return s;
}

Verdict check_property(PropertyId id, const Structure& structure, const Calculus& calculus) {
  const auto x = structure.universe().x_size();
  if (x > kMaxCheckedFeatures) throw InputError("structure too large for brute-force checks");
  if (structure.v.size() != x || structure.w.size() != x) throw InputError("structure masks do not match x_size");
  for (const auto& f : structure.family)
    if (f.size() != x) throw InputError("family mask does not match x_size");
  Checker checker(structure, calculus);
  auto outcome = checker.run(id);
  Verdict verdict{id, !outcome.has_value(), std::nullopt};
  if (outcome) {
    auto file = structure_file(structure);
    for (const auto& [name, code] : outcome->masks) file.masks.emplace_back(name, DatasetMask::from_bits(x, code));
    file.notes.push_back("property " + std::string(property_name(id)) + " fails");
    file.notes.push_back(outcome->note);
    verdict.counterexample = format_universe_file(file);
  }
  return verdict;
}

Verdict replay_counterexample(PropertyId id, std::string_view counterexample, const Calculus& calculus) {
  return check_property(id, parse_structure(counterexample), calculus);
}

bool SuiteReport::all_hold() const {
  return std::all_of(rows.begin(), rows.end(), [](const SuiteRow& r) { return r.failed == 0; });
}

std::size_t SuiteReport::failing_ids() const {
  return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const SuiteRow& r) { return r.failed > 0; }));
}

std::string SuiteReport::to_csv() const {
  std::ostringstream out;
  out << "property,checked,held,failed,first_failing_seed\n";
  for (const auto& r : rows) {
    out << property_name(r.id) << "," << r.checked << "," << (r.checked - r.failed) << "," << r.failed << ",";
    if (r.first_failing_seed) out << *r.first_failing_seed;
    out << "\n";
  }
  return out.str();
}

SuiteReport run_suite(const StructureLimits& limits, std::size_t structures, const Calculus& calculus,
                      std::size_t jobs) {
  limits.validate();
  const auto& ids = all_property_ids();
  std::vector<std::vector<Verdict>> results(structures);

  auto work = [&](std::size_t worker, std::size_t workers) {
    for (std::size_t i = worker; i < structures; i += workers) {
      const auto s = suite_structure(limits, limits.seed + i, calculus);
      for (auto id : ids) results[i].push_back(check_property(id, s, calculus));
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, structures));
  if (jobs == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(work, j, jobs);
    for (auto& t : pool) t.join();
  }

  SuiteReport report{limits, structures, {}};
  for (std::size_t k = 0; k < ids.size(); ++k) {
    SuiteRow row{ids[k], 0, 0, std::nullopt, std::nullopt};
    for (std::size_t i = 0; i < structures; ++i) {
      const auto& v = results[i][k];
      ++row.checked;
      if (!v.holds) {
        ++row.failed;
        if (!row.first_failing_seed) {
          row.first_failing_seed = limits.seed + i;
          row.first_counterexample = v.counterexample;
        }
      }
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace setgen
