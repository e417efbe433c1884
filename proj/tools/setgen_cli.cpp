// `setgen` command-line entry point.
//
// Exit codes: 0 success, 1 invariant or check failure, 2 usage error.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "setgen/data_io.hpp"
#include "setgen/finite_core.hpp"
#include "setgen/property_oracle.hpp"
#include "setgen/surrogate_loop.hpp"

namespace fs = std::filesystem;
using namespace setgen;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::size_t default_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

std::string percent(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3) << v;
  return out.str();
}

// ---------------------------------------------------------------------------
// Shared option groups

struct DatasetOptions {
  std::string pool = "mnist";
  std::string images, labels;
  std::optional<std::size_t> subset;
  double noise = SyntheticSpec{}.noise;
  int bits = 4;
  std::uint64_t data_seed = 1;

  void add(CLI::App& app) {
    app.add_option("--pool", pool, "Dataset: mnist (IDX files) or a synthetic pool")
        ->check(CLI::IsMember({"mnist", "gauss2", "rings", "parity"}))
        ->capture_default_str();
    app.add_option("--images", images, "IDX image file (--pool mnist)");
    app.add_option("--labels", labels, "IDX label file (--pool mnist)");
    app.add_option("--subset", subset, "Use the first N samples (synthetic pools: generate N, default 400)");
    app.add_option("--noise", noise, "Synthetic noise level")->capture_default_str();
    app.add_option("--bits", bits, "Input width of the parity pool")->capture_default_str();
    app.add_option("--data-seed", data_seed, "Seed of the synthetic generator")->capture_default_str();
  }

  LabeledPool load() const {
    if (pool == "mnist") {
      if (images.empty() || labels.empty()) throw UsageError("--pool mnist needs --images and --labels");
      for (const auto& p : {images, labels})
        if (!fs::exists(p)) throw UsageError("dataset file not found: " + p);
      auto full = load_idx(images, labels);
      if (!subset) return full;
      if (*subset < 1 || *subset > full.size())
        throw UsageError("--subset must be in 1.." + std::to_string(full.size()));
      return full.prefix(*subset);
    }
    SyntheticSpec spec;
    spec.kind = pool == "gauss2" ? SyntheticKind::Gauss2 : pool == "rings" ? SyntheticKind::Rings
                                                                           : SyntheticKind::ParityBits;
    spec.n_samples = subset.value_or(400);
    spec.noise = noise;
    spec.bits = bits;
    spec.seed = data_seed;
    return generate_synthetic(spec);
  }
};

struct ModelOptions {
  std::string spec = "mlp:100";
  std::uint64_t seed = 0;
  int max_steps = ModelConfig{}.max_steps;
  int batch_size = ModelConfig{}.batch_size;
  double learning_rate = ModelConfig{}.learning_rate;
  int max_attempts = ModelConfig{}.max_attempts;

  void add(CLI::App& app, bool allow_many = false, std::vector<std::string>* many = nullptr) {
    if (allow_many)
      app.add_option("--model", *many, "Architecture, mlp:H[,H...] or conv:H; repeat to compare")->capture_default_str();
    else
      app.add_option("--model", spec, "Architecture, mlp:H[,H...] or conv:H")->capture_default_str();
    app.add_option("--seed", seed, "Base seed for every model")->capture_default_str();
    app.add_option("--max-steps", max_steps, "Optimizer steps per fit attempt")->capture_default_str();
    app.add_option("--batch-size", batch_size, "Minibatch size")->capture_default_str();
    app.add_option("--lr", learning_rate, "Adam learning rate")->capture_default_str();
    app.add_option("--max-attempts", max_attempts, "Re-initializations before a fit fails")->capture_default_str();
  }

  ModelConfig config(const LabeledPool& pool, const std::string& model_spec) const {
    ModelConfig c;
    c.apply_model_spec(model_spec);
    c.seed = seed;
    c.max_steps = max_steps;
    c.batch_size = batch_size;
    c.learning_rate = learning_rate;
    c.max_attempts = max_attempts;
    c.input_shape = pool.shape();
    c.num_classes = pool.num_classes();
    c.validate();
    return c;
  }
};

std::string describe(const DatasetOptions& d, const LabeledPool& pool) {
  return d.pool + " (" + std::to_string(pool.size()) + " samples, " + pool.shape().to_string() + ", digest " +
         pool_digest(pool) + ")";
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw UsageError("cannot create output directory '" + dir + "': " + ec.message());
}

void wrote(const fs::path& p) { std::cout << "wrote: " << p.string() << "\n"; }

// ---------------------------------------------------------------------------
// verify

struct VerifyOptions {
  std::size_t seeds = 1000;
  std::size_t max_x = 6, max_y = 3;
  std::optional<std::size_t> max_space;
  std::uint64_t seed = 0;
  std::size_t jobs = default_jobs();
  std::string mutant = "none";
  std::string replay, property;
  std::string out = "verify-counterexamples";
};

int cmd_verify(const VerifyOptions& o) {
  const Calculus calculus{parse_mutant(o.mutant)};
  if (!o.replay.empty()) {
    if (o.property.empty()) throw UsageError("--replay needs --property");
    if (!fs::exists(o.replay)) throw UsageError("counterexample file not found: " + o.replay);
    const auto id = parse_property_id(o.property);
    const auto verdict = replay_counterexample(id, read_text_file(o.replay), calculus);
    std::cout << property_name(id) << ": " << (verdict.holds ? "holds" : "FAILS") << " (mutant " << o.mutant
              << ")\n";
    if (verdict.counterexample) std::cout << *verdict.counterexample;
    return verdict.holds ? 0 : 1;
  }
  if (!o.property.empty()) throw UsageError("--property is only used with --replay");

  StructureLimits limits;
  limits.max_x = o.max_x;
  limits.max_y = o.max_y;
  limits.max_space = o.max_space;
  limits.seed = o.seed;
  limits.validate();
  const auto start = std::chrono::steady_clock::now();
  const auto report = run_suite(limits, o.seeds, calculus, o.jobs);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  std::cout << report.to_csv();
  std::cout << "structures: " << report.structures << "  max_x=" << o.max_x << " max_y=" << o.max_y
            << " seed=" << o.seed << " mutant=" << o.mutant << "\n";
  std::cerr << "elapsed: " << std::fixed << std::setprecision(2) << secs << "s\n";
  if (report.all_hold()) {
    std::cout << "result: all " << report.rows.size() << " properties hold\n";
    return 0;
  }
  ensure_dir(o.out);
  for (const auto& row : report.rows) {
    if (!row.first_counterexample) continue;
    const auto name = property_name(row.id);
    const fs::path file = fs::path(o.out) / (std::string(name) + "_seed" + std::to_string(*row.first_failing_seed) + ".txt");
    write_text_file(file.string(), *row.first_counterexample);
    wrote(file);
    std::cout << "replay: setgen verify --mutant " << o.mutant << " --replay " << file.string() << " --property "
              << name << "\n";
  }
  std::cout << "result: " << report.failing_ids() << " properties have counterexamples\n";
  return 1;
}

// ---------------------------------------------------------------------------
// exact-demo

int cmd_exact_demo(const std::string& path, const std::string& mask_name, std::optional<std::size_t> admit) {
  if (!fs::exists(path)) throw UsageError("universe file not found: " + path);
  const auto file = read_universe_file(path);
  const auto& space = file.space;
  const auto& u = space.universe();
  const DatasetMask* found = file.find_mask(mask_name);
  if (!found) throw UsageError("universe file has no mask named '" + mask_name + "'");
  const DatasetMask z = *found;

  std::cout << "universe: x=" << u.x_size() << " y=" << u.y_size() << " oracle [" << format_hypothesis(oracle_hypothesis(u))
            << "]\n";
  std::cout << "F_A = " << format_space(space) << "\n";
  std::cout << "Z = " << z.to_set_string() << "\n";
  const auto t = feasible_set(space, z);
  std::cout << "T_A(Z) = " << format_space(t) << (z.empty() ? "  (= F_A, nothing is excluded yet)" : "") << "\n";
  DatasetMask z_a;
  try {
    z_a = generalization(space, z);
  } catch (const PreconditionError& e) {
    std::cout << "error: " << e.what() << "\n";
    return 1;
  }
  std::cout << "Z_A = " << z_a.to_set_string() << "\n";

  std::optional<Feature> next = admit;
  if (!next) {
    for (Feature x = 0; x < u.x_size() && !next; ++x)
      if (!z_a[x]) next = x;
  }
  if (!next) {
    std::cout << "Z_A covers every feature; no growth step is possible\n";
    return 0;
  }
  if (*next >= u.x_size()) throw UsageError("--admit must be below x=" + std::to_string(u.x_size()));
  if (z_a[*next]) {
    std::cout << "feature " << *next << " is already generalized; admitting it cannot grow Z_A\n";
    return 0;
  }
  const auto z2 = z.with(*next);
  const auto t2 = feasible_set(space, z2);
  const auto z_a2 = generalization(space, z2);
  std::cout << "admit feature " << *next << " (outside Z_A)\n";
  std::cout << "T_A(Z') = " << format_space(t2) << "\n";
  std::cout << "Z_A' = " << z_a2.to_set_string() << "\n";
  const bool strict = z_a.proper_subset_of(z_a2);
  std::cout << "growth: " << z_a.to_set_string() << " -> " << z_a2.to_set_string() << (strict ? " (strict)" : " (NOT strict)")
            << "\n";
  return strict ? 0 : 1;
}

// ---------------------------------------------------------------------------
// select-bases

struct SelectOptions {
  int n = 10;
  int batch_add = 8;
  std::string rule = "most-disagreed";
  std::uint64_t rule_seed = 0;
  int initial_per_class = 10;
  int max_rounds = 100000;
  std::size_t jobs = default_jobs();
  std::string out = "select-out";
  bool wall_time = false;
  bool quiet = false;
};

int cmd_select_bases(const DatasetOptions& d, const ModelOptions& m, const SelectOptions& o) {
  const auto pool = d.load();
  LoopConfig config;
  config.n_models = o.n;
  config.batch_add = o.batch_add;
  config.rule = parse_rule(o.rule);
  config.rule_seed = o.rule_seed;
  config.initial_per_class = o.initial_per_class;
  config.max_rounds = o.max_rounds;
  config.jobs = o.jobs;
  config.model = m.config(pool, m.spec);
  config.validate();
  ensure_dir(o.out);

  std::cout << "subcommand: select-bases\n";
  std::cout << "pool: " << describe(d, pool) << "\n";
  std::cout << "config: " << config.canonical() << "\n";
  const auto start = std::chrono::steady_clock::now();
  const auto result = run_loop(pool, config, [&](const RoundSummary& r) {
    if (!o.quiet)
      std::cerr << "round " << r.round << ": basis " << r.basis_size << ", unanimous-correct " << r.unanimous_correct
                << "/" << pool.size() << ", unanimous-wrong " << r.unanimous_wrong << ", disagreement "
                << r.disagreement << "\n";
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const fs::path dir(o.out);
  save_manifest((dir / "manifest.txt").string(), result.manifest);
  write_text_file((dir / "metrics.csv").string(), format_metrics_csv(result.rounds, o.wall_time));
  write_text_file((dir / "rounds.svg").string(), round_plot_svg(result.rounds, pool.size()));
  wrote(dir / "manifest.txt");
  wrote(dir / "metrics.csv");
  wrote(dir / "rounds.svg");

  const auto basis = result.manifest.ids.size();
  std::cout << "rounds: " << result.rounds.size() << "\n";
  std::cout << "basis: " << basis << " / " << pool.size() << " ("
            << percent(100.0 * static_cast<double>(basis) / static_cast<double>(pool.size())) << "%)\n";
  std::cout << "status: " << (result.manifest.complete ? "complete" : "incomplete (max rounds reached)") << "\n";
  std::cerr << "elapsed: " << std::fixed << std::setprecision(2) << secs << "s\n";
  return result.manifest.complete ? 0 : 1;
}

// ---------------------------------------------------------------------------
// retrain-eval

struct RetrainOptions {
  std::string manifest;
  std::optional<std::size_t> prefix;
  bool compare_prefix = false;
  int trials = 3;
  std::vector<std::string> models{"mlp:100"};
  std::size_t jobs = default_jobs();
  std::string out = "retrain-out";
};

int cmd_retrain_eval(const DatasetOptions& d, const ModelOptions& m, const RetrainOptions& o) {
  if (o.manifest.empty() == !o.prefix) throw UsageError("give exactly one of --manifest or --prefix");
  if (o.trials < 1) throw UsageError("--trials must be >= 1");
  const auto pool = d.load();

  struct Basis {
    std::string name;
    std::vector<SampleId> ids;
  };
  std::vector<Basis> bases;
  auto prefix_basis = [&](std::size_t n) {
    if (n < 1 || n > pool.size()) throw UsageError("prefix must be in 1.." + std::to_string(pool.size()));
    return Basis{"prefix", std::vector<SampleId>(pool.ids().begin(), pool.ids().begin() + static_cast<long>(n))};
  };
  if (!o.manifest.empty()) {
    if (!fs::exists(o.manifest)) throw UsageError("manifest not found: " + o.manifest);
    const auto manifest = load_manifest(o.manifest, pool_digest(pool));
    bases.push_back({"selected", manifest.ids});
    if (o.compare_prefix) bases.push_back(prefix_basis(manifest.ids.size()));
  } else {
    if (o.compare_prefix) throw UsageError("--compare-prefix needs --manifest");
    bases.push_back(prefix_basis(*o.prefix));
  }
  ensure_dir(o.out);

  std::cout << "subcommand: retrain-eval\n";
  std::cout << "pool: " << describe(d, pool) << "\n";
  std::ostringstream csv;
  csv << "basis,basis_size,model,trial,accuracy\n";
  std::vector<BarEntry> bars;
  bool any_skipped = false;
  for (const auto& b : bases) {
    for (const auto& spec : o.models) {
      const auto config = m.config(pool, spec);
      const auto r = retrain_eval(pool, b.ids, config, o.trials, o.jobs);
      for (std::size_t t = 0; t < r.accuracies.size(); ++t)
        csv << b.name << "," << b.ids.size() << "," << spec << "," << t << "," << percent(r.accuracies[t]) << "\n";
      std::cout << "accuracy: basis=" << b.name << "(" << b.ids.size() << ") model=" << spec << " "
                << percent(r.mean) << " +- " << percent(r.stdev) << " % (" << r.accuracies.size() << " trials, "
                << r.skipped << " skipped)\n";
      any_skipped = any_skipped || r.skipped > 0;
      bars.push_back({b.name + " " + spec, r.mean, r.stdev});
    }
  }
  const fs::path dir(o.out);
  write_text_file((dir / "retrain.csv").string(), csv.str());
  write_text_file((dir / "retrain.svg").string(), accuracy_bars_svg("full-pool accuracy after retraining", bars));
  wrote(dir / "retrain.csv");
  wrote(dir / "retrain.svg");
  return any_skipped ? 1 : 0;
}

// ---------------------------------------------------------------------------
// mispredict-report

struct MispredictOptions {
  std::string manifest;
  int n = 10;
  std::size_t jobs = default_jobs();
  std::string out = "mispredict-out";
  bool checkpoints = false;
  std::optional<std::size_t> eval_subset;
};

int cmd_mispredict_report(const DatasetOptions& d, const ModelOptions& m, const MispredictOptions& o) {
  if (o.manifest.empty()) throw UsageError("--manifest is required");
  if (!fs::exists(o.manifest)) throw UsageError("manifest not found: " + o.manifest);
  if (o.n < 1) throw UsageError("--n must be >= 1");
  const auto pool = d.load();
  const auto manifest = load_manifest(o.manifest, pool_digest(pool));
  const auto config = m.config(pool, m.spec);

  // The ensemble can also be scored on a longer prefix of the same source,
  // i.e. on samples the selection never saw.
  LabeledPool scored = pool;
  if (o.eval_subset) {
    if (*o.eval_subset < pool.size()) throw UsageError("--eval-subset must be at least the selection pool size");
    auto wider = d;
    wider.subset = *o.eval_subset;
    scored = wider.load();
  }
  ensure_dir(o.out);

  std::cout << "subcommand: mispredict-report\n";
  std::cout << "pool: " << describe(d, pool) << "\n";
  if (o.eval_subset)
    std::cout << "scored: " << scored.size() << " samples (" << scored.size() - pool.size()
              << " outside the selection pool)\n";
  const auto models = train_ensemble(pool, manifest.ids, config, o.n, kGalleryStream, o.jobs);
  const auto eval = evaluate_ensemble(models, scored, o.jobs);
  const fs::path dir(o.out);

  std::ostringstream index;
  index << "id,oracle,predicted,file\n";
  std::size_t emitted = 0;
  for (std::size_t j = 0; j < scored.size(); ++j) {
    if (!eval.unanimous_wrong[j]) continue;
    const int oracle = scored.labels()[j], predicted = eval.votes[0][j];
    if (oracle == predicted) throw std::logic_error("unanimous-wrong sample predicted correctly");
    const auto name =
        std::to_string(scored.ids()[j]) + "_" + std::to_string(oracle) + "to" + std::to_string(predicted) + ".pgm";
    write_pgm((dir / name).string(), scored, j);
    index << scored.ids()[j] << "," << oracle << "," << predicted << "," << name << "\n";
    ++emitted;
  }
  write_text_file((dir / "index.csv").string(), index.str());
  wrote(dir / "index.csv");
  if (o.checkpoints) {
    for (std::size_t i = 0; i < models.size(); ++i) {
      const auto p = dir / ("model_" + std::to_string(i) + ".sgnn");
      save_checkpoint(p.string(), models[i]);
      wrote(p);
    }
  }
  std::cout << "models: " << o.n << " x " << config.model_spec() << " on basis of " << manifest.ids.size() << "\n";
  std::cout << "unanimous-correct: " << eval.unanimous_correct.count() << "\n";
  std::cout << "disagreement: " << eval.disagreement.count() << "\n";
  std::cout << "unanimous-wrong: " << emitted << " images\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Set-theoretic generalization: exact checks and surrogate basis selection"};
  app.require_subcommand(1);

  VerifyOptions vo;
  auto* verify = app.add_subcommand("verify", "Check every property over random finite structures");
  verify->add_option("--seeds", vo.seeds, "Number of random structures")->capture_default_str();
  verify->add_option("--max-x", vo.max_x, "Largest feature count")->capture_default_str();
  verify->add_option("--max-y", vo.max_y, "Largest label count")->capture_default_str();
  verify->add_option("--max-space", vo.max_space, "Cap on hypothesis-space size (default: every table)");
  verify->add_option("--seed", vo.seed, "Seed of the first structure")->capture_default_str();
  verify->add_option("--jobs", vo.jobs, "Worker threads")->capture_default_str();
  verify->add_option("--mutant", vo.mutant, "Deliberately broken calculus, to show the checks can fail")
      ->check(CLI::IsMember({"none", "feasible-inverted", "no-oracle-precondition"}))
      ->capture_default_str();
  verify->add_option("--replay", vo.replay, "Re-check one saved counterexample file");
  verify->add_option("--property", vo.property, "Property id for --replay (P1..P10, ACC_FLOOR, THM1, ...)");
  verify->add_option("--out", vo.out, "Directory for counterexample files")->capture_default_str();

  std::string universe_path, mask_name = "Z";
  std::optional<std::size_t> admit;
  auto* demo = app.add_subcommand("exact-demo", "Walk through T_A(Z), Z_A and one growth step on a universe file");
  demo->add_option("universe", universe_path, "Universe file")->required();
  demo->add_option("--mask", mask_name, "Name of the mask used as Z")->capture_default_str();
  demo->add_option("--admit", admit, "Feature to admit (default: first feature outside Z_A)");

  DatasetOptions sd;
  ModelOptions sm;
  SelectOptions so;
  auto* select = app.add_subcommand("select-bases", "Grow a sample basis until an ensemble is consistent on the pool");
  sd.add(*select);
  sm.add(*select);
  select->add_option("--n", so.n, "Ensemble size")->capture_default_str();
  select->add_option("--batch-add", so.batch_add, "Samples admitted per round")->capture_default_str();
  select->add_option("--rule", so.rule, "Selection rule")
      ->check(CLI::IsMember({"most-disagreed", "first", "random"}))
      ->capture_default_str();
  select->add_option("--rule-seed", so.rule_seed, "Seed of the random rule")->capture_default_str();
  select->add_option("--initial-per-class", so.initial_per_class, "Initial seeds per class")->capture_default_str();
  select->add_option("--max-rounds", so.max_rounds, "Round cap; reaching it writes an incomplete manifest")
      ->capture_default_str();
  select->add_option("--jobs", so.jobs, "Concurrent model fits")->capture_default_str();
  select->add_option("--out", so.out, "Output directory")->capture_default_str();
  select->add_flag("--wall-time", so.wall_time, "Record real per-round seconds in metrics.csv (otherwise 0)");
  select->add_flag("--quiet", so.quiet, "No per-round progress on stderr");

  DatasetOptions rd;
  ModelOptions rm;
  RetrainOptions ro;
  auto* retrain = app.add_subcommand("retrain-eval", "Retrain fresh models on a basis and score the full pool");
  rd.add(*retrain);
  rm.add(*retrain, true, &ro.models);
  retrain->add_option("--manifest", ro.manifest, "Basis manifest from select-bases");
  retrain->add_option("--prefix", ro.prefix, "Use the first N pool samples as the basis");
  retrain->add_flag("--compare-prefix", ro.compare_prefix, "Also evaluate the same-size prefix of the pool");
  retrain->add_option("--trials", ro.trials, "Models per basis and architecture")->capture_default_str();
  retrain->add_option("--jobs", ro.jobs, "Concurrent model fits")->capture_default_str();
  retrain->add_option("--out", ro.out, "Output directory")->capture_default_str();

  DatasetOptions md;
  ModelOptions mm;
  MispredictOptions mo;
  auto* mispredict = app.add_subcommand("mispredict-report", "Images of samples the whole ensemble gets wrong alike");
  md.add(*mispredict);
  mm.add(*mispredict);
  mispredict->add_option("--manifest", mo.manifest, "Basis manifest from select-bases")->required();
  mispredict->add_option("--n", mo.n, "Ensemble size")->capture_default_str();
  mispredict->add_option("--jobs", mo.jobs, "Concurrent model fits")->capture_default_str();
  mispredict->add_option("--out", mo.out, "Output directory")->capture_default_str();
  mispredict->add_option("--eval-subset", mo.eval_subset,
                         "Score the first N source samples instead of the selection pool (held-out gallery)");
  mispredict->add_flag("--save-checkpoints", mo.checkpoints, "Also write each ensemble model as a checkpoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*verify) return cmd_verify(vo);
    if (*demo) return cmd_exact_demo(universe_path, mask_name, admit);
    if (*select) return cmd_select_bases(sd, sm, so);
    if (*retrain) return cmd_retrain_eval(rd, rm, ro);
    if (*mispredict) return cmd_mispredict_report(md, mm, mo);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const InputError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const FitFailure& e) {
    std::cerr << "fit failure: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
