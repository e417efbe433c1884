#include "setgen/finite_core.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

namespace setgen {

FiniteUniverse::FiniteUniverse(std::size_t y_size, std::vector<Label> oracle)
    : y_size_(y_size), oracle_(std::move(oracle)) {
  if (oracle_.empty()) throw InputError("universe needs x_size >= 1");
  if (y_size_ == 0) throw InputError("universe needs y_size >= 1");
  for (std::size_t x = 0; x < oracle_.size(); ++x)
    if (oracle_[x] >= y_size_)
      throw InputError("oracle label " + std::to_string(oracle_[x]) + " at feature " + std::to_string(x) +
                       " outside 0.." + std::to_string(y_size_ - 1));
}

bool Hypothesis::well_formed_for(const FiniteUniverse& u) const {
  return table_.size() == u.x_size() &&
         std::all_of(table_.begin(), table_.end(), [&](Label y) { return y < u.y_size(); });
}

Hypothesis oracle_hypothesis(const FiniteUniverse& universe) { return Hypothesis(universe.oracle()); }

DatasetMask DatasetMask::of(std::size_t size, std::initializer_list<Feature> features) {
  DatasetMask m(size);
  for (Feature x : features) m.set(x);
  return m;
}

DatasetMask DatasetMask::from_bits(std::size_t size, std::uint64_t code) {
  DatasetMask m(size);
  for (std::size_t i = 0; i < size && i < 64; ++i) m.bits_[i] = (code >> i) & 1U;
  return m;
}

std::size_t DatasetMask::count() const { return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), true)); }

std::uint64_t DatasetMask::to_bits() const {
  if (bits_.size() > 64) throw InputError("mask wider than 64 features has no integer code");
  std::uint64_t code = 0;
  for (std::size_t i = 0; i < bits_.size(); ++i)
    if (bits_[i]) code |= std::uint64_t{1} << i;
  return code;
}

std::vector<Feature> DatasetMask::features() const {
  std::vector<Feature> out;
  for (std::size_t i = 0; i < bits_.size(); ++i)
    if (bits_[i]) out.push_back(i);
  return out;
}

namespace {

void require_same_size(const DatasetMask& a, const DatasetMask& b) {
  if (a.size() != b.size())
    throw InputError("mask sizes differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
}

void require_mask_fits(const DatasetMask& m, const FiniteUniverse& u) {
  if (m.size() != u.x_size())
    throw InputError("mask length " + std::to_string(m.size()) + " does not match x_size " +
                     std::to_string(u.x_size()));
}

void require_well_formed(const Hypothesis& f, const FiniteUniverse& u) {
  if (!f.well_formed_for(u)) throw InputError("hypothesis " + format_hypothesis(f) + " is not well formed");
}

}  // namespace

DatasetMask DatasetMask::operator|(const DatasetMask& other) const {
  require_same_size(*this, other);
  DatasetMask out(size());
  for (std::size_t i = 0; i < size(); ++i) out.bits_[i] = bits_[i] || other.bits_[i];
  return out;
}

DatasetMask DatasetMask::operator&(const DatasetMask& other) const {
  require_same_size(*this, other);
  DatasetMask out(size());
  for (std::size_t i = 0; i < size(); ++i) out.bits_[i] = bits_[i] && other.bits_[i];
  return out;
}

DatasetMask DatasetMask::operator-(const DatasetMask& other) const {
  require_same_size(*this, other);
  DatasetMask out(size());
  for (std::size_t i = 0; i < size(); ++i) out.bits_[i] = bits_[i] && !other.bits_[i];
  return out;
}

DatasetMask DatasetMask::operator~() const {
  DatasetMask out(size());
  for (std::size_t i = 0; i < size(); ++i) out.bits_[i] = !bits_[i];
  return out;
}

DatasetMask DatasetMask::with(Feature x) const {
  DatasetMask out = *this;
  out.set(x);
  return out;
}

bool DatasetMask::subset_of(const DatasetMask& other) const {
  require_same_size(*this, other);
  for (std::size_t i = 0; i < size(); ++i)
    if (bits_[i] && !other.bits_[i]) return false;
  return true;
}

std::string DatasetMask::to_set_string() const {
  std::string out = "{";
  bool first = true;
  for (Feature x : features()) {
    if (!first) out += ",";
    out += std::to_string(x);
    first = false;
  }
  return out + "}";
}

HypothesisSpace::HypothesisSpace(FiniteUniverse universe, std::vector<Hypothesis> members)
    : universe_(std::move(universe)) {
  members_.reserve(members.size());
  std::set<Hypothesis> seen;
  for (auto& f : members) {
    require_well_formed(f, universe_);
    if (!seen.insert(f).second) throw InputError("duplicate hypothesis " + format_hypothesis(f));
    members_.push_back(std::move(f));
  }
}

HypothesisSpace HypothesisSpace::from_distinct(FiniteUniverse universe, std::vector<Hypothesis> members) {
  HypothesisSpace out(std::move(universe));
  out.members_ = std::move(members);
  return out;
}

bool HypothesisSpace::contains(const Hypothesis& f) const {
  return std::find(members_.begin(), members_.end(), f) != members_.end();
}

bool HypothesisSpace::contains_oracle() const { return contains(oracle_hypothesis(universe_)); }

bool HypothesisSpace::add(Hypothesis f) {
  require_well_formed(f, universe_);
  if (contains(f)) return false;
  members_.push_back(std::move(f));
  return true;
}

bool HypothesisSpace::subset_of(const HypothesisSpace& other) const {
  std::set<Hypothesis> theirs(other.members_.begin(), other.members_.end());
  return std::all_of(members_.begin(), members_.end(), [&](const Hypothesis& f) { return theirs.count(f) > 0; });
}

bool HypothesisSpace::same_members(const HypothesisSpace& other) const {
  return size() == other.size() && subset_of(other);
}

Rational Rational::make(std::uint64_t num, std::uint64_t den) {
  if (den == 0) throw InputError("zero denominator");
  const std::uint64_t g = std::gcd(num, den);
  return g == 0 ? Rational{0, 1} : Rational{num / g, den / g};
}

std::string Rational::to_string() const {
  return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den);
}

std::strong_ordering Rational::operator<=>(const Rational& other) const {
  // Cross-multiplication stays exact for the feature counts used here.
  return (num * other.den) <=> (other.num * den);
}

bool satisfies(const Hypothesis& f, Feature x, const FiniteUniverse& universe) {
  if (x >= universe.x_size())
    throw InputError("feature " + std::to_string(x) + " outside 0.." + std::to_string(universe.x_size() - 1));
  require_well_formed(f, universe);
  return f(x) == universe.oracle(x);
}

HypothesisSpace feasible_set(const HypothesisSpace& space, const DatasetMask& z_mask) {
  const auto& u = space.universe();
  require_mask_fits(z_mask, u);
  const auto included = z_mask.features();
  std::vector<Hypothesis> survivors;
  for (const auto& f : space)
    if (std::all_of(included.begin(), included.end(), [&](Feature x) { return f(x) == u.oracle(x); }))
      survivors.push_back(f);
  return HypothesisSpace::from_distinct(u, std::move(survivors));
}

DatasetMask unanimous_correct(const HypothesisSpace& feasible) {
  const auto& u = feasible.universe();
  DatasetMask out = DatasetMask::all(u.x_size());
  for (const auto& f : feasible)
    for (Feature x = 0; x < u.x_size(); ++x)
      if (f(x) != u.oracle(x)) out.set(x, false);
  return out;
}

DatasetMask generalization(const HypothesisSpace& space, const DatasetMask& z_mask) {
  if (!space.contains_oracle())
    throw PreconditionError(
        "generalization requires the oracle mapping to be a member of the hypothesis space "
        "(the generalization set is only defined when the oracle is in F_A)");
  return unanimous_correct(feasible_set(space, z_mask));
}

DatasetMask consistent_set(const std::vector<Hypothesis>& members, const FiniteUniverse& universe) {
  if (members.empty()) throw InputError("consistent_set needs at least one hypothesis");
  DatasetMask out = DatasetMask::all(universe.x_size());
  for (const auto& f : members) out = out & correct_set(f, universe);
  return out;
}

HypothesisSpace violated_set(const std::vector<Hypothesis>& members, const DatasetMask& z_mask,
                             const FiniteUniverse& universe) {
  require_mask_fits(z_mask, universe);
  const auto included = z_mask.features();
  std::set<Hypothesis> seen;
  std::vector<Hypothesis> out;
  for (const auto& f : members) {
    require_well_formed(f, universe);
    if (std::any_of(included.begin(), included.end(), [&](Feature x) { return f(x) != universe.oracle(x); }) &&
        seen.insert(f).second)
      out.push_back(f);
  }
  return HypothesisSpace::from_distinct(universe, std::move(out));
}

DatasetMask correct_set(const Hypothesis& f, const FiniteUniverse& universe) {
  require_well_formed(f, universe);
  DatasetMask out(universe.x_size());
  for (Feature x = 0; x < universe.x_size(); ++x) out.set(x, f(x) == universe.oracle(x));
  return out;
}

Rational accuracy(const Hypothesis& f, const FiniteUniverse& universe) {
  return Rational::make(correct_set(f, universe).count(), universe.x_size());
}

// ---------------------------------------------------------------------------
// Text format

const DatasetMask* UniverseFile::find_mask(std::string_view name) const {
  for (const auto& [n, m] : masks)
    if (n == name) return &m;
  return nullptr;
}

namespace {

std::vector<std::string> split_words(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

std::size_t parse_count(const std::string& word, std::size_t line, const char* what) {
  if (word.empty() || !std::all_of(word.begin(), word.end(), [](unsigned char c) { return std::isdigit(c); }))
    throw FormatError(line, std::string("expected a non-negative integer for ") + what + ", got '" + word + "'");
  try {
    return std::stoull(word);
  } catch (const std::exception&) {
    throw FormatError(line, std::string(what) + " out of range");
  }
}

std::vector<Label> parse_labels(const std::vector<std::string>& words, std::size_t first, std::size_t x_size,
                                std::size_t y_size, std::size_t line) {
  if (words.size() - first != x_size)
    throw FormatError(line, "expected " + std::to_string(x_size) + " labels, got " +
                                std::to_string(words.size() - first));
  std::vector<Label> labels;
  for (std::size_t i = first; i < words.size(); ++i) {
    const auto v = parse_count(words[i], line, "label");
    if (v >= y_size) throw FormatError(line, "label " + words[i] + " outside 0.." + std::to_string(y_size - 1));
    labels.push_back(static_cast<Label>(v));
  }
  return labels;
}

}  // namespace

UniverseFile parse_universe_file(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  std::size_t x_size = 0, y_size = 0;
  std::optional<HypothesisSpace> space;
  std::vector<std::pair<std::string, DatasetMask>> masks;
  std::vector<std::string> notes;

  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const auto words = split_words(raw);
    if (words.empty()) {
      if (line_no <= 2) throw FormatError(line_no, "blank line before the oracle");
      continue;
    }
    const auto& key = words[0];
    if (line_no == 1) {
      if (key != "universe" || words.size() != 3 || words[1].rfind("x=", 0) != 0 || words[2].rfind("y=", 0) != 0)
        throw FormatError(line_no, "expected 'universe x=<n> y=<m>'");
      x_size = parse_count(words[1].substr(2), line_no, "x");
      y_size = parse_count(words[2].substr(2), line_no, "y");
      if (x_size == 0 || y_size == 0) throw FormatError(line_no, "x and y must be at least 1");
      continue;
    }
    if (line_no == 2) {
      if (key != "oracle") throw FormatError(line_no, "expected 'oracle <labels>'");
      space.emplace(FiniteUniverse(y_size, parse_labels(words, 1, x_size, y_size, line_no)));
      continue;
    }
    if (key == "hyp") {
      Hypothesis f(parse_labels(words, 1, x_size, y_size, line_no));
      if (!space->add(std::move(f))) throw FormatError(line_no, "duplicate hypothesis");
    } else if (key == "mask") {
      if (words.size() != 2 + x_size)
        throw FormatError(line_no, "expected 'mask <name> <" + std::to_string(x_size) + " flags>'");
      DatasetMask m(x_size);
      for (std::size_t i = 0; i < x_size; ++i) {
        const auto& w = words[2 + i];
        if (w != "0" && w != "1") throw FormatError(line_no, "mask flags must be 0 or 1, got '" + w + "'");
        m.set(i, w == "1");
      }
      for (const auto& [n, _] : masks)
        if (n == words[1]) throw FormatError(line_no, "duplicate mask name '" + n + "'");
      masks.emplace_back(words[1], std::move(m));
    } else if (key == "note") {
      const auto pos = raw.find("note");
      notes.push_back(raw.size() > pos + 5 ? raw.substr(pos + 5) : std::string());
    } else {
      throw FormatError(line_no, "unknown directive '" + key + "'");
    }
  }
  if (line_no < 1) throw FormatError(1, "empty input");
  if (!space) throw FormatError(line_no + 1, "missing oracle line");
  return UniverseFile{std::move(*space), std::move(masks), std::move(notes)};
}

UniverseFile read_universe_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open universe file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_universe_file(buf.str());
}

std::string format_hypothesis(const Hypothesis& f) {
  std::string out;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (i) out += " ";
    out += std::to_string(f(i));
  }
  return out;
}

std::string format_space(const HypothesisSpace& space) {
  std::string out = "{";
  for (std::size_t i = 0; i < space.size(); ++i) {
    if (i) out += ", ";
    out += "[" + format_hypothesis(space[i]) + "]";
  }
  return out + "}";
}

std::string format_universe_file(const UniverseFile& file) {
  const auto& u = file.space.universe();
  std::ostringstream out;
  out << "universe x=" << u.x_size() << " y=" << u.y_size() << "\n";
  out << "oracle " << format_hypothesis(oracle_hypothesis(u)) << "\n";
  for (const auto& f : file.space) out << "hyp " << format_hypothesis(f) << "\n";
  for (const auto& [name, m] : file.masks) {
    out << "mask " << name;
    for (std::size_t i = 0; i < m.size(); ++i) out << (m[i] ? " 1" : " 0");
    out << "\n";
  }
  for (const auto& n : file.notes) out << "note " << n << "\n";
  return out.str();
}

}  // namespace setgen
