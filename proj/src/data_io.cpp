#include "setgen/data_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <numbers>
#include <random>
#include <sstream>
#include <unordered_set>

namespace setgen {

namespace {

constexpr std::uint32_t kImagesMagic = 2051;
constexpr std::uint32_t kLabelsMagic = 2049;

std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::Io, 0, "cannot open '" + path + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t(b[at]) << 24) | (std::uint32_t(b[at + 1]) << 16) | (std::uint32_t(b[at + 2]) << 8) |
         std::uint32_t(b[at + 3]);
}

void put_be32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v >> 24));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>(v & 0xff));
}

DataError located(const DataError& e, const std::string& path) {
  return DataError(e.kind(), e.offset(), path + ": " + e.what());
}

}  // namespace

std::uint64_t IdxHeader::payload_size() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

IdxHeader parse_idx_header(const std::vector<unsigned char>& bytes) {
  using K = DataError::Kind;
  if (bytes.size() < 4) throw DataError(K::TruncatedHeader, bytes.size(), "truncated header: no magic number");
  if (bytes[0] != 0 || bytes[1] != 0)
    throw DataError(K::BadMagic, 0, "bad magic: leading bytes must be zero");
  if (bytes[2] != 0x08) throw DataError(K::BadMagic, 2, "bad magic: only unsigned-byte payloads are supported");
  IdxHeader h;
  h.magic = be32(bytes, 0);
  if (h.magic != kImagesMagic && h.magic != kLabelsMagic)
    throw DataError(K::BadMagic, 3, "bad magic " + std::to_string(h.magic) + " (expected 2049 or 2051)");
  const std::size_t ndims = bytes[3];
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < header)
    throw DataError(K::TruncatedHeader, bytes.size(),
                    "truncated header: " + std::to_string(ndims) + " dimensions need " + std::to_string(header) +
                        " bytes");
  for (std::size_t i = 0; i < ndims; ++i) h.dims.push_back(be32(bytes, 4 + 4 * i));
  const auto end = header + h.payload_size();
  if (bytes.size() < end)
    throw DataError(K::TruncatedPayload, bytes.size(),
                    "truncated payload: expected " + std::to_string(h.payload_size()) + " bytes after offset " +
                        std::to_string(header));
  if (bytes.size() > end)
    throw DataError(K::TrailingBytes, end, std::to_string(bytes.size() - end) + " trailing bytes after payload");
  return h;
}

LabeledPool load_idx(const std::string& images_path, const std::string& labels_path, int num_classes) {
  using K = DataError::Kind;
  const auto image_bytes = read_bytes(images_path);
  const auto label_bytes = read_bytes(labels_path);
  IdxHeader ih, lh;
  try {
    ih = parse_idx_header(image_bytes);
  } catch (const DataError& e) {
    throw located(e, images_path);
  }
  try {
    lh = parse_idx_header(label_bytes);
  } catch (const DataError& e) {
    throw located(e, labels_path);
  }
  if (ih.magic != kImagesMagic)
    throw DataError(K::WrongKind, 0, images_path + ": magic " + std::to_string(ih.magic) + " is not an image file");
  if (lh.magic != kLabelsMagic)
    throw DataError(K::WrongKind, 0, labels_path + ": magic " + std::to_string(lh.magic) + " is not a label file");
  if (ih.dims[0] != lh.dims[0])
    throw DataError(K::CountMismatch, 4,
                    labels_path + ": " + std::to_string(lh.dims[0]) + " labels for " + std::to_string(ih.dims[0]) +
                        " images");

  const auto n = static_cast<Eigen::Index>(ih.dims[0]);
  const InputShape shape{1, static_cast<int>(ih.dims[1]), static_cast<int>(ih.dims[2])};
  const auto pixels = static_cast<Eigen::Index>(shape.size());
  Eigen::MatrixXf features(pixels, n);
  const unsigned char* src = image_bytes.data() + 16;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < pixels; ++i) features(i, j) = static_cast<float>(*src++) / 255.0f;

  std::vector<int> labels(static_cast<std::size_t>(n));
  std::vector<SampleId> ids(static_cast<std::size_t>(n));
  for (std::size_t j = 0; j < labels.size(); ++j) {
    labels[j] = label_bytes[8 + j];
    if (labels[j] >= num_classes)
      throw DataError(K::BadLabel, 8 + j,
                      labels_path + ": label " + std::to_string(labels[j]) + " at offset " + std::to_string(8 + j) +
                          " exceeds " + std::to_string(num_classes - 1));
    ids[j] = static_cast<SampleId>(j);
  }
  return LabeledPool(shape, num_classes, std::move(features), std::move(labels), std::move(ids));
}

void write_idx(const LabeledPool& pool, const std::string& images_path, const std::string& labels_path) {
  const auto& s = pool.shape();
  if (s.channels != 1) throw ConfigError("IDX images need a single channel");
  std::string images, labels;
  put_be32(images, kImagesMagic);
  put_be32(images, static_cast<std::uint32_t>(pool.size()));
  put_be32(images, static_cast<std::uint32_t>(s.height));
  put_be32(images, static_cast<std::uint32_t>(s.width));
  const auto& f = pool.features();
  images.reserve(images.size() + static_cast<std::size_t>(f.size()));
  for (Eigen::Index j = 0; j < f.cols(); ++j)
    for (Eigen::Index i = 0; i < f.rows(); ++i)
      images.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(f(i, j) * 255.0f))));
  put_be32(labels, kLabelsMagic);
  put_be32(labels, static_cast<std::uint32_t>(pool.size()));
  for (int y : pool.labels()) {
    if (y > 255) throw ConfigError("IDX labels must fit in one byte");
    labels.push_back(static_cast<char>(y));
  }
  write_text_file(images_path, images);
  write_text_file(labels_path, labels);
}

// ---------------------------------------------------------------------------
// Synthetic pools

void SyntheticSpec::validate() const {
  if (n_samples < 2) throw ConfigError("synthetic pools need at least 2 samples (one per class)");
  if (!(noise >= 0)) throw ConfigError("noise must be >= 0");
  if (kind == SyntheticKind::ParityBits && (bits < 1 || bits > 24)) throw ConfigError("parity bits must be in 1..24");
}

LabeledPool generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const auto n = static_cast<Eigen::Index>(spec.n_samples);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, 2 * std::numbers::pi);
  std::vector<int> labels(spec.n_samples);
  std::vector<SampleId> ids(spec.n_samples);

  // Raw 2-D points are mapped affinely into [0,1] and clamped; the window is
  // wide enough that clamping only touches far tails.
  auto to_unit = [](double v, double half_width) {
    return static_cast<float>(std::clamp((v + half_width) / (2 * half_width), 0.0, 1.0));
  };

  if (spec.kind == SyntheticKind::ParityBits) {
    Eigen::MatrixXf features(spec.bits, n);
    const std::uint64_t period = std::uint64_t{1} << spec.bits;
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto code = static_cast<std::uint64_t>(j) % period;
      for (int b = 0; b < spec.bits; ++b) features(b, j) = static_cast<float>((code >> b) & 1U);
      labels[static_cast<std::size_t>(j)] = std::popcount(code) % 2;
      ids[static_cast<std::size_t>(j)] = static_cast<SampleId>(j);
    }
    return LabeledPool({1, 1, spec.bits}, 2, std::move(features), std::move(labels), std::move(ids));
  }

  Eigen::MatrixXf features(2, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const int label = static_cast<int>(j % 2);
    double x, y;
    if (spec.kind == SyntheticKind::Gauss2) {
      const double mean = label ? 1.5 : -1.5;
      x = mean + spec.noise * gauss(rng);
      y = mean + spec.noise * gauss(rng);
      features(0, j) = to_unit(x, 5.0);
      features(1, j) = to_unit(y, 5.0);
    } else {
      const double radius = (label ? 2.0 : 1.0) + 0.1 * spec.noise * gauss(rng);
      const double theta = angle(rng);
      x = radius * std::cos(theta);
      y = radius * std::sin(theta);
      features(0, j) = to_unit(x, 3.0);
      features(1, j) = to_unit(y, 3.0);
    }
    labels[static_cast<std::size_t>(j)] = label;
    ids[static_cast<std::size_t>(j)] = static_cast<SampleId>(j);
  }
  return LabeledPool({1, 1, 2}, 2, std::move(features), std::move(labels), std::move(ids));
}

std::string pool_digest(const LabeledPool& pool) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  const auto& s = pool.shape();
  mix(static_cast<std::uint32_t>(s.channels));
  mix(static_cast<std::uint32_t>(s.height));
  mix(static_cast<std::uint32_t>(s.width));
  mix(static_cast<std::uint32_t>(pool.num_classes()));
  mix(static_cast<std::uint32_t>(pool.size()));
  const auto& f = pool.features();
  for (std::size_t j = 0; j < pool.size(); ++j) {
    mix(pool.ids()[j]);
    mix(static_cast<std::uint32_t>(pool.labels()[j]));
    for (Eigen::Index i = 0; i < f.rows(); ++i) mix(std::bit_cast<std::uint32_t>(f(i, static_cast<Eigen::Index>(j))));
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

// ---------------------------------------------------------------------------
// Manifests

namespace {

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::uint64_t parse_count(const std::string& text, std::size_t line) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || ptr != end)
    throw DataError(DataError::Kind::Manifest, line, "manifest line " + std::to_string(line) + ": bad number '" + text + "'");
  return v;
}

}  // namespace

std::string format_manifest(const BasisManifest& m) {
  std::ostringstream out;
  out << "version=1\n";
  out << "dataset_digest=" << m.dataset_digest << "\n";
  out << "config=" << m.config << "\n";
  out << "status=" << (m.complete ? "complete" : "incomplete") << "\n";
  out << "initial=" << m.initial_count << "\n";
  out << "round_sizes=" << join_sizes(m.round_sizes) << "\n";
  for (auto id : m.ids) out << id << "\n";
  return out.str();
}

// The offset carried by manifest errors is the 1-based line number.
BasisManifest parse_manifest(const std::string& text) {
  using K = DataError::Kind;
  std::istringstream in(text);
  std::string line;
  BasisManifest m;
  std::size_t lineno = 0;
  auto header = [&](const char* key) {
    ++lineno;
    const std::string prefix = std::string(key) + "=";
    if (!std::getline(in, line) || line.rfind(prefix, 0) != 0)
      throw DataError(K::Manifest, lineno, "manifest line " + std::to_string(lineno) + ": expected '" + prefix + "'");
    return line.substr(prefix.size());
  };
  const auto version = header("version");
  if (version != "1")
    throw DataError(K::Manifest, 1, "unknown manifest version '" + version + "'");
  m.dataset_digest = header("dataset_digest");
  m.config = header("config");
  const auto status = header("status");
  if (status != "complete" && status != "incomplete")
    throw DataError(K::Manifest, lineno, "manifest status must be complete or incomplete");
  m.complete = status == "complete";
  m.initial_count = parse_count(header("initial"), lineno);
  const auto sizes = header("round_sizes");
  if (!sizes.empty()) {
    std::istringstream parts(sizes);
    std::string part;
    while (std::getline(parts, part, ',')) m.round_sizes.push_back(parse_count(part, lineno));
  }
  std::unordered_set<SampleId> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const auto v = parse_count(line, lineno);
    if (v > UINT32_MAX) throw DataError(K::Manifest, lineno, "manifest id out of range");
    const auto id = static_cast<SampleId>(v);
    if (!seen.insert(id).second)
      throw DataError(K::DuplicateId, lineno,
                      "manifest line " + std::to_string(lineno) + ": duplicate id " + std::to_string(id));
    m.ids.push_back(id);
  }
  if (m.initial_count > m.ids.size()) throw DataError(K::Manifest, 5, "initial count exceeds the id list");
  return m;
}

void save_manifest(const std::string& path, const BasisManifest& manifest) {
  write_text_file(path, format_manifest(manifest));
}

BasisManifest load_manifest(const std::string& path, const std::optional<std::string>& expected_digest) {
  BasisManifest m;
  try {
    m = parse_manifest(read_text_file(path));
  } catch (const DataError& e) {
    throw located(e, path);
  }
  if (expected_digest && *expected_digest != m.dataset_digest)
    throw DataError(DataError::Kind::DigestMismatch, 2,
                    path + ": recorded for dataset " + m.dataset_digest + ", but the pool digest is " +
                        *expected_digest);
  return m;
}

std::string format_metrics_csv(const std::vector<RoundSummary>& rounds, bool wall_time) {
  std::ostringstream out;
  out << "round,basis_size,unanimous_correct,unanimous_wrong,disagreement,seconds\n";
  for (const auto& r : rounds) {
    out << r.round << "," << r.basis_size << "," << r.unanimous_correct << "," << r.unanimous_wrong << ","
        << r.disagreement << ",";
    if (wall_time) out << std::fixed << std::setprecision(3) << r.seconds << std::defaultfloat;
    else out << 0;
    out << "\n";
  }
  return out.str();
}

void write_pgm(const std::string& path, const LabeledPool& pool, std::size_t column) {
  if (column >= pool.size()) throw ConfigError("column out of range");
  const auto& s = pool.shape();
  std::string out = "P5\n" + std::to_string(s.width) + " " + std::to_string(s.height * s.channels) + "\n255\n";
  const auto col = pool.features().col(static_cast<Eigen::Index>(column));
  for (Eigen::Index i = 0; i < col.size(); ++i)
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(col(i) * 255.0f))));
  write_text_file(path, out);
}

// ---------------------------------------------------------------------------
// SVG

namespace {

std::string num(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(1) << v;
  return out.str();
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

}  // namespace

std::string round_plot_svg(const std::vector<RoundSummary>& rounds, std::size_t pool_size) {
  constexpr double W = 640, H = 400, L = 60, R = 20, T = 30, B = 50;
  const double max_round = rounds.empty() ? 1.0 : std::max(1, rounds.back().round);
  const double top = std::max<double>(1.0, static_cast<double>(pool_size));
  auto px = [&](double r) { return L + (W - L - R) * r / max_round; };
  auto py = [&](double v) { return H - B - (H - T - B) * v / top; };
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << L << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">"
      << "unanimous-correct (blue) and basis size (orange) per round</text>\n";
  svg << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << W / 2 << "\" y=\"" << H - 10 << "\" font-family=\"sans-serif\" font-size=\"12\">round</text>\n";
  svg << "<text x=\"5\" y=\"" << py(top) + 4 << "\" font-family=\"sans-serif\" font-size=\"11\">" << pool_size
      << "</text>\n";
  svg << "<text x=\"5\" y=\"" << py(0) + 4 << "\" font-family=\"sans-serif\" font-size=\"11\">0</text>\n";
  auto series = [&](auto value, const char* colour) {
    svg << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"";
    for (const auto& r : rounds) svg << num(px(r.round)) << "," << num(py(static_cast<double>(value(r)))) << " ";
    svg << "\"/>\n";
  };
  series([](const RoundSummary& r) { return r.unanimous_correct; }, "#1f77b4");
  series([](const RoundSummary& r) { return r.basis_size; }, "#ff7f0e");
  svg << "</svg>\n";
  return svg.str();
}

std::string accuracy_bars_svg(const std::string& title, const std::vector<BarEntry>& bars) {
  constexpr double W = 640, H = 400, L = 60, R = 20, T = 40, B = 60;
  double lo = 100.0, hi = 0.0;
  for (const auto& b : bars) {
    lo = std::min(lo, b.mean - b.stdev);
    hi = std::max(hi, b.mean + b.stdev);
  }
  if (bars.empty()) lo = 0, hi = 100;
  // Zoom onto the interesting band, as accuracy differences are small.
  lo = std::max(0.0, std::floor(lo - 1.0));
  hi = std::min(100.0, std::ceil(hi + 0.5));
  if (hi <= lo) hi = lo + 1;
  auto py = [&](double v) { return H - B - (H - T - B) * (v - lo) / (hi - lo); };
  const double slot = (W - L - R) / std::max<std::size_t>(1, bars.size());
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << L << "\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\">" << escape(title)
      << "</text>\n";
  svg << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"5\" y=\"" << py(hi) + 4 << "\" font-family=\"sans-serif\" font-size=\"11\">" << num(hi)
      << "%</text>\n";
  svg << "<text x=\"5\" y=\"" << py(lo) + 4 << "\" font-family=\"sans-serif\" font-size=\"11\">" << num(lo)
      << "%</text>\n";
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& b = bars[i];
    const double x = L + slot * static_cast<double>(i) + slot * 0.2, w = slot * 0.6;
    const double y = py(b.mean);
    svg << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w) << "\" height=\""
        << num(H - B - y) << "\" fill=\"#4c72b0\"/>\n";
    const double cx = x + w / 2;
    svg << "<line x1=\"" << num(cx) << "\" y1=\"" << num(py(b.mean - b.stdev)) << "\" x2=\"" << num(cx)
        << "\" y2=\"" << num(py(b.mean + b.stdev)) << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << num(x) << "\" y=\"" << H - B + 18 << "\" font-family=\"sans-serif\" font-size=\"11\">"
        << escape(b.label) << "</text>\n";
    svg << "<text x=\"" << num(x) << "\" y=\"" << num(y - 6) << "\" font-family=\"sans-serif\" font-size=\"11\">"
        << std::fixed << std::setprecision(2) << b.mean << std::defaultfloat << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataError::Kind::Io, 0, "cannot write '" + path + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw DataError(DataError::Kind::Io, 0, "failed writing '" + path + "'");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::Io, 0, "cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace setgen
