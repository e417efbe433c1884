// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <sys/resource.h>
#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "setgen/data_io.hpp"
#include "setgen/property_oracle.hpp"
#include "setgen/surrogate_loop.hpp"

namespace fs = std::filesystem;
using namespace setgen;

namespace {

int failures = 0;

void report(bool pass, const std::string& name, const std::string& detail) {
  std::cout << (pass ? "PASS " : "FAIL ") << name << " -- " << detail << std::endl;
  failures += !pass;
}

std::string fmt(double v, int digits = 3) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << v;
  return out.str();
}

double children_cpu_seconds() {
  rusage u{};
  getrusage(RUSAGE_CHILDREN, &u);
  return static_cast<double>(u.ru_utime.tv_sec + u.ru_stime.tv_sec) +
         static_cast<double>(u.ru_utime.tv_usec + u.ru_stime.tv_usec) * 1e-6;
}

int run_cli(const std::string& args, const std::string& log) {
  const std::string cmd = std::string(SETGEN_CLI) + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const std::string kImages = SETGEN_DATA_DIR "/mnist5k/train-images-idx3-ubyte";
const std::string kLabels = SETGEN_DATA_DIR "/mnist5k/train-labels-idx1-ubyte";
const std::string kMnistFlags = "--pool mnist --images " + kImages + " --labels " + kLabels;
const std::size_t kDeskPool = 2000;

fs::path work_dir() {
  const auto dir = fs::temp_directory_path() / "setgen_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------------------

void property_suite(const fs::path& dir) {
  const auto start = std::chrono::steady_clock::now();
  const auto log = (dir / "verify.log").string();
  const int code = run_cli("verify --seeds 1000 --max-x 6 --max-y 3", log);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto text = read_text_file(log);
  std::size_t rows = 0, clean = 0;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    const auto last = line.rfind(',');
    if (last == std::string::npos || line.rfind("property,", 0) == 0) continue;
    ++rows;
    // property,checked,held,failed,first_failing_seed
    std::istringstream fields(line);
    std::string id, checked, held, failed;
    std::getline(fields, id, ',');
    std::getline(fields, checked, ',');
    std::getline(fields, held, ',');
    std::getline(fields, failed, ',');
    clean += failed == "0" && checked == "1000" && held == "1000";
  }
  report(code == 0 && rows == 27 && clean == 27 && secs < 300.0, "property suite (verify, 1000 structures, x<=6, y<=3)",
         std::to_string(clean) + "/27 ids clean over 1000 structures in " + fmt(secs, 1) + "s (limit 300s)");
}

void mutation_sensitivity() {
  const StructureLimits limits{6, 3, std::nullopt, 0};
  const auto inverted = run_suite(limits, 300, Calculus{Mutant::FeasibleInverted});
  const auto dropped = run_suite(limits, 300, Calculus{Mutant::NoOraclePrecondition});
  std::set<std::string> inverted_ids, dropped_ids, all;
  for (const auto& r : inverted.rows)
    if (r.failed) inverted_ids.insert(std::string(property_name(r.id)));
  for (const auto& r : dropped.rows)
    if (r.failed) dropped_ids.insert(std::string(property_name(r.id)));
  all = inverted_ids;
  all.insert(dropped_ids.begin(), dropped_ids.end());

  // Every counterexample must replay bit-exactly under its mutant and hold
  // under the reference calculus.
  bool replays = true;
  for (const auto* rep : {&inverted, &dropped}) {
    const Calculus c{rep == &inverted ? Mutant::FeasibleInverted : Mutant::NoOraclePrecondition};
    for (const auto& r : rep->rows) {
      if (!r.first_counterexample) continue;
      const auto again = replay_counterexample(r.id, *r.first_counterexample, c);
      replays = replays && !again.holds && again.counterexample == r.first_counterexample;
    }
  }
  std::string dropped_list;
  for (const auto& id : dropped_ids) dropped_list += (dropped_list.empty() ? "" : ",") + id;
  report(inverted_ids.size() >= 3 && !dropped_ids.empty() && all.size() >= 3 && replays,
         "mutation sensitivity",
         "feasible-inverted breaks " + std::to_string(inverted_ids.size()) + " ids, no-oracle-precondition breaks " +
             std::to_string(dropped_ids.size()) + " (" + dropped_list + "), " + std::to_string(all.size()) +
             " distinct; counterexamples replay: " + (replays ? "yes" : "no"));
}

// For each x <= 10 and y in {2, 3}: every oracle when there are at most 64,
// otherwise 64 seeded random oracles plus the constant ones.
void memorizer_reproduction() {
  std::size_t universes = 0, subsets = 0, mismatches = 0;
  std::mt19937_64 rng(10);
  for (std::size_t x = 1; x <= 10; ++x)
    for (std::size_t y = 2; y <= 3; ++y) {
      std::vector<std::vector<Label>> oracles;
      std::size_t total = 1;
      for (std::size_t i = 0; i < x; ++i) total *= y;
      if (total <= 64) {
        for (std::size_t code = 0; code < total; ++code) {
          std::vector<Label> o(x);
          for (std::size_t i = 0, c = code; i < x; ++i, c /= y) o[i] = static_cast<Label>(c % y);
          oracles.push_back(o);
        }
      } else {
        for (Label c = 0; c < y; ++c) oracles.emplace_back(x, c);
        std::uniform_int_distribution<Label> label(0, static_cast<Label>(y - 1));
        for (int k = 0; k < 64; ++k) {
          std::vector<Label> o(x);
          for (auto& l : o) l = label(rng);
          oracles.push_back(o);
        }
      }
      for (const auto& o : oracles) {
        const FiniteUniverse u(y, o);
        const auto space = build_memorizer_space(u);
        ++universes;
        for (std::uint64_t code = 0; code < (std::uint64_t{1} << x); ++code) {
          const auto z = DatasetMask::from_bits(x, code);
          ++subsets;
          mismatches += generalization(space, z) != z;
        }
      }
    }
  report(mismatches == 0, "memorizer reproduction (x<=10, y in {2,3})",
         std::to_string(universes) + " universes, " + std::to_string(subsets) + " subsets Z, " +
             std::to_string(mismatches) + " with Z_A != Z");
}

void gradient_oracle() {
  double mlp_worst = 0, conv_worst = 0;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, 9);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (bool conv : {false, true}) {
      ModelConfig c;
      c.apply_model_spec(conv ? "conv:50" : "mlp:16");
      c.seed = seed;
      const Eigen::Index batch = conv ? 2 : 4;
      Eigen::MatrixXd x(784, batch);
      for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = unit(rng);
      std::vector<int> y(static_cast<std::size_t>(batch));
      for (auto& l : y) l = label(rng);
      const double err = gradient_check(c, x, y);
      (conv ? conv_worst : mlp_worst) = std::max(conv ? conv_worst : mlp_worst, err);
    }
  }
  std::ostringstream detail;
  detail << std::scientific << std::setprecision(2) << "max relative error MLP(16) " << mlp_worst << ", CONV(50) "
         << conv_worst << " over 3 seeds (bound 1e-4)";
  report(mlp_worst < 1e-4 && conv_worst < 1e-4, "gradient oracle", detail.str());
}

void idx_bit_exactness(const fs::path& dir) {
  const std::string fx = SETGEN_FIXTURE_DIR "/idx/";
  const auto pool = load_idx(fx + "mnist100-images.idx", fx + "mnist100-labels.idx");
  const auto images = (dir / "rt-images.idx").string(), labels = (dir / "rt-labels.idx").string();
  write_idx(pool, images, labels);
  const bool bytes_equal = read_text_file(images) == read_text_file(fx + "mnist100-images.idx") &&
                           read_text_file(labels) == read_text_file(fx + "mnist100-labels.idx");
  const auto back = load_idx(images, labels);
  const bool pool_equal = pool.size() == 100 && back.features() == pool.features() && back.labels() == pool.labels() &&
                          back.ids() == pool.ids();

  using K = DataError::Kind;
  const std::vector<std::tuple<std::string, std::string, K>> malformed{
      {"bad-magic-images.idx", "mnist100-labels.idx", K::BadMagic},
      {"mnist100-images.idx", "wrong-kind-labels.idx", K::WrongKind},
      {"truncated-header-images.idx", "mnist100-labels.idx", K::TruncatedHeader},
      {"truncated-payload-images.idx", "mnist100-labels.idx", K::TruncatedPayload},
      {"mnist100-images.idx", "count-mismatch-labels.idx", K::CountMismatch},
  };
  int rejected = 0;
  for (const auto& [img, lab, kind] : malformed) {
    try {
      load_idx(fx + img, fx + lab);
    } catch (const DataError& e) {
      rejected += e.kind() == kind;
    }
  }
  report(bytes_equal && pool_equal && rejected == 5, "IDX bit-exactness",
         std::string("100-sample round-trip ") + (bytes_equal && pool_equal ? "identical" : "DIFFERS") + ", " +
             std::to_string(rejected) + "/5 malformed fixtures rejected with the expected error");
}

// ---------------------------------------------------------------------------
// Desk-scale MNIST

struct DeskRun {
  bool ok = false;
  BasisManifest manifest;
};

DeskRun loop_termination(const fs::path& dir) {
  const double cpu_before = children_cpu_seconds();
  const auto start = std::chrono::steady_clock::now();
  const auto out = (dir / "select1").string();
  const int code = run_cli("select-bases " + kMnistFlags + " --subset " + std::to_string(kDeskPool) +
                               " --n 5 --model mlp:100 --batch-add 8 --out " + out,
                           (dir / "select1.log").string());
  const double cpu = children_cpu_seconds() - cpu_before;
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  DeskRun run;
  if (code != 0 || !fs::exists(out + "/manifest.txt")) {
    report(false, "loop termination and compression (MNIST 2000, n=5, MLP(100), batch_add=8)",
           "select-bases exited with " + std::to_string(code));
    return run;
  }
  run.manifest = load_manifest(out + "/manifest.txt");
  const auto metrics = read_text_file(out + "/metrics.csv");
  const auto last_line = metrics.substr(metrics.rfind('\n', metrics.size() - 2) + 1);
  std::istringstream fields(last_line);
  std::string round, basis, correct;
  std::getline(fields, round, ',');
  std::getline(fields, basis, ',');
  std::getline(fields, correct, ',');
  const auto size = run.manifest.ids.size();
  const double ratio = 100.0 * static_cast<double>(size) / static_cast<double>(kDeskPool);
  run.ok = run.manifest.complete && correct == std::to_string(kDeskPool) && ratio <= 60.0 && cpu < 1800.0;
  report(run.ok, "loop termination and compression (MNIST 2000, n=5, MLP(100), batch_add=8)",
         "unanimous_correct " + correct + "/" + std::to_string(kDeskPool) + " after " + std::to_string(std::stoi(round) + 1) +
             " rounds, basis " + std::to_string(size) + " (" + fmt(ratio, 1) + "% of pool, limit 60%), CPU " +
             fmt(cpu, 1) + "s, wall " + fmt(wall, 1) + "s (limit 1800s CPU)");
  return run;
}

void determinism(const fs::path& dir) {
  const auto out = (dir / "select2").string();
  const int code = run_cli("select-bases " + kMnistFlags + " --subset " + std::to_string(kDeskPool) +
                               " --n 5 --model mlp:100 --batch-add 8 --out " + out,
                           (dir / "select2.log").string());
  const auto first = (dir / "select1").string();
  const bool same_manifest = code == 0 && fs::exists(out + "/manifest.txt") &&
                             read_text_file(out + "/manifest.txt") == read_text_file(first + "/manifest.txt");
  const bool same_metrics = code == 0 && fs::exists(out + "/metrics.csv") &&
                            read_text_file(out + "/metrics.csv") == read_text_file(first + "/metrics.csv");
  report(same_manifest && same_metrics, "determinism (two identical select-bases runs)",
         std::string("manifest ") + (same_manifest ? "byte-identical" : "DIFFERS") + ", metrics CSV " +
             (same_metrics ? "byte-identical" : "DIFFERS"));
}

void table2_and_architecture(const LabeledPool& pool, const BasisManifest& manifest) {
  const std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
  // Architectures differ by a sample or two out of 2000 here; three trials
  // cannot resolve that, ten can.
  const int trials = 10;
  auto model = [&](int hidden) {
    ModelConfig c;
    c.apply_model_spec("mlp:" + std::to_string(hidden));
    c.input_shape = pool.shape();
    c.num_classes = pool.num_classes();
    return c;
  };
  const std::vector<SampleId> prefix(pool.ids().begin(), pool.ids().begin() + static_cast<long>(manifest.ids.size()));
  const auto basis100 = retrain_eval(pool, manifest.ids, model(100), trials, jobs);
  const auto prefix100 = retrain_eval(pool, prefix, model(100), trials, jobs);
  const double gap = basis100.mean - prefix100.mean;
  const bool enough = basis100.accuracies.size() >= 3 && prefix100.accuracies.size() >= 3;
  report(enough && gap >= 0.5, "basis beats same-size prefix (retrain_eval, 10 seeds)",
         "selected " + fmt(basis100.mean) + " +- " + fmt(basis100.stdev) + "% vs prefix " + fmt(prefix100.mean) +
             " +- " + fmt(prefix100.stdev) + "% on " + std::to_string(pool.size()) + " samples, basis size " +
             std::to_string(manifest.ids.size()) + ", gap " + fmt(gap) + " points (need >= 0.5)");

  const auto wide = retrain_eval(pool, manifest.ids, model(1000), trials, jobs);
  const auto narrow = retrain_eval(pool, manifest.ids, model(50), trials, jobs);
  const bool ok = wide.accuracies.size() >= 3 && narrow.accuracies.size() >= 3 && wide.mean <= basis100.mean &&
                  narrow.mean <= basis100.mean;
  report(ok, "architecture-shift direction (MLP(1000), MLP(50) <= MLP(100))",
         "MLP(100) " + fmt(basis100.mean) + "%, MLP(1000) " + fmt(wide.mean) + " +- " + fmt(wide.stdev) + "%, MLP(50) " +
             fmt(narrow.mean) + " +- " + fmt(narrow.stdev) + "%");
}

// The gallery is checked twice: on the selection pool itself, and on the
// whole 5000-sample source so held-out samples make it non-trivial.
void misprediction_gallery(const fs::path& dir, const LabeledPool& source) {
  const std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
  const auto manifest_path = (dir / "select1" / "manifest.txt").string();
  const auto manifest = load_manifest(manifest_path);
  const auto pool = source.prefix(kDeskPool);
  ModelConfig config;
  config.input_shape = pool.shape();
  config.num_classes = pool.num_classes();
  const auto models = train_ensemble(pool, manifest.ids, config, 5, kGalleryStream, jobs);

  bool ok = true;
  std::string detail;
  for (const std::size_t scored_size : {kDeskPool, source.size()}) {
    const auto out = (dir / ("gallery" + std::to_string(scored_size))).string();
    const int code = run_cli("mispredict-report " + kMnistFlags + " --subset " + std::to_string(kDeskPool) +
                                 " --eval-subset " + std::to_string(scored_size) + " --n 5 --manifest " + manifest_path +
                                 " --out " + out,
                             (dir / ("gallery" + std::to_string(scored_size) + ".log")).string());
    if (code != 0 || !fs::exists(out + "/index.csv")) {
      ok = false;
      detail += "mispredict-report exited with " + std::to_string(code) + "; ";
      continue;
    }
    const auto scored = source.prefix(scored_size);
    const auto eval = evaluate_ensemble(models, scored, jobs);

    std::set<SampleId> expected, listed;
    for (std::size_t j = 0; j < scored.size(); ++j)
      if (eval.unanimous_wrong[j]) expected.insert(scored.ids()[j]);

    bool rows_ok = true;
    std::istringstream index(read_text_file(out + "/index.csv"));
    std::string line;
    std::getline(index, line);  // header
    while (std::getline(index, line)) {
      std::istringstream f(line);
      std::string id, oracle, predicted, file;
      std::getline(f, id, ',');
      std::getline(f, oracle, ',');
      std::getline(f, predicted, ',');
      std::getline(f, file, ',');
      const auto sid = static_cast<SampleId>(std::stoul(id));
      listed.insert(sid);
      const auto col = scored.column_of(sid);
      // All members agree on the predicted label, and it is not the oracle label.
      bool unanimous = true;
      for (const auto& v : eval.votes) unanimous = unanimous && v[col] == std::stoi(predicted);
      rows_ok = rows_ok && unanimous && oracle != predicted && std::stoi(oracle) == scored.labels()[col] &&
                file == id + "_" + oracle + "to" + predicted + ".pgm" && fs::exists(out + "/" + file);
    }
    std::size_t pgm_files = 0;
    for (const auto& entry : fs::directory_iterator(out)) pgm_files += entry.path().extension() == ".pgm";
    const bool match = listed == expected && pgm_files == listed.size() && rows_ok;
    ok = ok && match;
    detail += std::to_string(listed.size()) + " images on " + std::to_string(scored_size) + " samples (" +
              (match ? "matches" : "DIFFERS from") + " unanimous_wrong, " + std::to_string(expected.size()) + "); ";
  }
  detail.resize(detail.size() - 2);
  report(ok, "misprediction gallery matches unanimous_wrong", detail);
}

}  // namespace

int main() {
  const auto dir = work_dir();
  std::cout << "acceptance work directory: " << dir.string() << std::endl;

  property_suite(dir);
  mutation_sensitivity();
  memorizer_reproduction();
  gradient_oracle();

  const auto source = load_idx(kImages, kLabels);
  const auto desk = loop_termination(dir);
  if (!desk.manifest.ids.empty()) {
    table2_and_architecture(source.prefix(kDeskPool), desk.manifest);
    misprediction_gallery(dir, source);
  } else {
    report(false, "basis beats same-size prefix (retrain_eval, 10 seeds)", "no basis was selected");
    report(false, "architecture-shift direction (MLP(1000), MLP(50) <= MLP(100))", "no basis was selected");
    report(false, "misprediction gallery matches unanimous_wrong", "no basis was selected");
  }
  idx_bit_exactness(dir);
  determinism(dir);

  std::cout << (failures == 0 ? "all acceptance criteria pass" : std::to_string(failures) + " criteria FAIL")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
