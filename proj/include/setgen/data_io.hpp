#pragma once

// Dataset ingestion (IDX, synthetic), basis manifests and run artifacts.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "setgen/tensor_nn.hpp"

namespace setgen {

/// Malformed input file. `offset()` is the byte position where parsing gave up.
class DataError : public std::runtime_error {
 public:
  enum class Kind {
    Io,
    BadMagic,
    WrongKind,
    TruncatedHeader,
    TruncatedPayload,
    TrailingBytes,
    CountMismatch,
    BadLabel,
    Manifest,
    DigestMismatch,
    DuplicateId,
  };

  DataError(Kind kind, std::uint64_t offset, const std::string& what)
      : std::runtime_error(what), kind_(kind), offset_(offset) {}
  Kind kind() const { return kind_; }
  std::uint64_t offset() const { return offset_; }

 private:
  Kind kind_;
  std::uint64_t offset_;
};

struct IdxHeader {
  std::uint32_t magic = 0;  ///< 2051 images, 2049 labels
  std::vector<std::uint32_t> dims;
  std::uint64_t payload_size() const;
};

/// Parses and validates the header of an unsigned-byte IDX file held in memory.
IdxHeader parse_idx_header(const std::vector<unsigned char>& bytes);

/// MNIST-style image/label pair; pixels scaled by 1/255, ids 0..N-1 in file order.
LabeledPool load_idx(const std::string& images_path, const std::string& labels_path, int num_classes = 10);

/// Inverse of load_idx for pools whose pixels are multiples of 1/255.
void write_idx(const LabeledPool& pool, const std::string& images_path, const std::string& labels_path);

enum class SyntheticKind { Gauss2, Rings, ParityBits };

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::Gauss2;
  std::size_t n_samples = 400;
  double noise = 0.5;  ///< Gaussian stddev (GAUSS2) or radial jitter (RINGS); unused for parity
  std::uint64_t seed = 1;
  int bits = 4;  ///< PARITY_BITS input width

  void validate() const;
};

/// Two-class pools, label = i % 2 (GAUSS2, RINGS) or the bit parity of i
/// (PARITY_BITS), so every prefix is balanced within one sample.
LabeledPool generate_synthetic(const SyntheticSpec& spec);

/// 64-bit FNV-1a over shape, ids, labels and feature bits, as 16 hex digits.
std::string pool_digest(const LabeledPool& pool);

struct RoundSummary {
  int round = 0;
  std::size_t basis_size = 0;
  std::size_t unanimous_correct = 0;
  std::size_t unanimous_wrong = 0;
  std::size_t disagreement = 0;
  double seconds = 0.0;
  std::vector<SampleId> admitted;

  bool operator==(const RoundSummary&) const = default;
};

/// Admitted ids in admission order (initial seeds first).
struct BasisManifest {
  std::vector<SampleId> ids;
  std::string dataset_digest;
  std::string config;          ///< canonical one-line loop configuration
  bool complete = false;       ///< false when the loop hit max_rounds
  std::size_t initial_count = 0;
  std::vector<std::size_t> round_sizes;  ///< basis size entering each round

  bool operator==(const BasisManifest&) const = default;
};

std::string format_manifest(const BasisManifest& manifest);
BasisManifest parse_manifest(const std::string& text);
void save_manifest(const std::string& path, const BasisManifest& manifest);
/// Rejects unknown versions and duplicate ids; with `expected_digest`, also a
/// manifest recorded against a different pool.
BasisManifest load_manifest(const std::string& path, const std::optional<std::string>& expected_digest = {});

/// `round,basis_size,unanimous_correct,unanimous_wrong,disagreement,seconds`.
/// Seconds are written as 0 unless `wall_time` is set, keeping the file reproducible.
std::string format_metrics_csv(const std::vector<RoundSummary>& rounds, bool wall_time = false);

/// Binary PGM (P5) of one pool column; channels are stacked vertically.
void write_pgm(const std::string& path, const LabeledPool& pool, std::size_t column);

/// Consistency count and basis size per round.
std::string round_plot_svg(const std::vector<RoundSummary>& rounds, std::size_t pool_size);

struct BarEntry {
  std::string label;
  double mean = 0.0;
  double stdev = 0.0;
};
/// Accuracy bars with stdev whiskers.
std::string accuracy_bars_svg(const std::string& title, const std::vector<BarEntry>& bars);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace setgen
