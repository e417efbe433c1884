#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>

#include "setgen/data_io.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(SETGEN_CLI) + " " + args + " 2>/dev/null";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe);
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, pipe)) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

bool has(const Run& r, const std::string& needle) { return r.out.find(needle) != std::string::npos; }

std::string scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "setgen_cli_test" / name;
  fs::remove_all(dir);
  return dir.string();
}

const std::string kFixtures = SETGEN_FIXTURE_DIR;
const std::string kMnist = std::string("--images ") + SETGEN_DATA_DIR + "/mnist5k/train-images-idx3-ubyte --labels " +
                           SETGEN_DATA_DIR + "/mnist5k/train-labels-idx1-ubyte";

}  // namespace

TEST_CASE("exact-demo walks the two-feature universe") {
  const auto r = run("exact-demo " + kFixtures + "/u2.txt");
  CHECK(r.code == 0);
  CHECK(has(r, "T_A(Z) = {[0 0], [0 1]}"));
  CHECK(has(r, "Z_A = {0}"));
  CHECK(has(r, "growth: {0} -> {0,1} (strict)"));

  const auto empty = run("exact-demo " + kFixtures + "/u2.txt --mask empty");
  CHECK(has(empty, "T_A(Z) = {[0 0], [0 1], [1 0], [1 1]}  (= F_A"));

  const auto no_oracle = run("exact-demo " + kFixtures + "/u2_no_oracle.txt");
  CHECK(no_oracle.code == 1);
  CHECK(has(no_oracle, "error: generalization requires the oracle"));

  CHECK(run("exact-demo " + kFixtures + "/missing.txt").code == 2);
  CHECK(run("exact-demo " + kFixtures + "/u2.txt --mask nope").code == 2);
}

TEST_CASE("verify reports a table and exits by verdict") {
  const auto ok = run("verify --seeds 1");
  CHECK(ok.code == 0);
  CHECK(has(ok, "property,checked,held,failed,first_failing_seed\nP1,1,1,0,\n"));
  CHECK(has(ok, "result: all 27 properties hold"));

  const auto out = scratch("cex");
  const auto bad = run("verify --seeds 20 --max-x 4 --mutant feasible-inverted --out " + out);
  CHECK(bad.code == 1);
  const auto at = bad.out.find("replay: ");
  REQUIRE(at != std::string::npos);
  const auto line = bad.out.substr(at + 8 + std::string("setgen ").size(),
                                   bad.out.find('\n', at) - at - 8 - std::string("setgen ").size());
  CHECK(run(line).code == 1);  // the mutant reproduces its failure
  const auto reference = line.substr(0, line.find("--mutant")) + line.substr(line.find(" --replay"));
  CHECK(run(reference).code == 0);  // the reference calculus does not

  CHECK(run("verify --seeds 1 --mutant bogus").code == 2);
  CHECK(run("verify --max-x 12 --max-y 3").code == 2);
}

TEST_CASE("usage errors exit with 2") {
  CHECK(run("").code == 2);
  CHECK(run("select-bases --no-such-flag").code == 2);
  CHECK(run("select-bases --pool mnist").code == 2);
  CHECK(run("select-bases --pool mnist --images /nonexistent --labels /nonexistent").code == 2);
  CHECK(run("select-bases --pool gauss2 --rule best").code == 2);
  CHECK(run("select-bases --pool gauss2 --model rnn:3").code == 2);
  CHECK(run("retrain-eval --pool gauss2").code == 2);
  CHECK(run("select-bases --help").code == 0);
  const auto help = run("retrain-eval --help");
  for (const char* flag : {"--pool", "--images", "--labels", "--subset", "--model", "--seed", "--trials", "--jobs",
                           "--out", "--manifest", "--prefix"})
    CHECK_MESSAGE(has(help, flag), flag);
}

TEST_CASE("select-bases, retrain-eval and mispredict-report on a synthetic pool") {
  const auto out = scratch("g2");
  const auto sel = run("select-bases --pool gauss2 --n 3 --model mlp:16 --quiet --out " + out);
  CHECK(sel.code == 0);
  CHECK(has(sel, "status: complete"));
  CHECK(has(sel, "wrote: " + out + "/manifest.txt"));
  const auto manifest = setgen::load_manifest(out + "/manifest.txt");
  CHECK(manifest.complete);
  CHECK(manifest.ids.size() < 400);
  const auto metrics = setgen::read_text_file(out + "/metrics.csv");
  CHECK(metrics.rfind("round,basis_size,unanimous_correct,unanimous_wrong,disagreement,seconds\n", 0) == 0);
  CHECK(metrics.find(",400,0,0,0\n") != std::string::npos);
  CHECK(fs::exists(out + "/rounds.svg"));

  const auto again = scratch("g2b");
  CHECK(run("select-bases --pool gauss2 --n 3 --model mlp:16 --quiet --jobs 2 --out " + again).code == 0);
  CHECK(setgen::read_text_file(again + "/manifest.txt") == setgen::read_text_file(out + "/manifest.txt"));
  CHECK(setgen::read_text_file(again + "/metrics.csv") == metrics);

  const auto rt = run("retrain-eval --pool gauss2 --manifest " + out + "/manifest.txt --model mlp:16 --trials 1 --out " +
                      scratch("g2r"));
  CHECK(rt.code == 0);
  CHECK(has(rt, "+- 0.000 % (1 trials, 0 skipped)"));
  const auto mismatch = run("retrain-eval --pool gauss2 --data-seed 9 --manifest " + out + "/manifest.txt --out " +
                            scratch("g2x"));
  CHECK(mismatch.code == 1);

  const auto gallery = scratch("g2m");
  const auto mp = run("mispredict-report --pool gauss2 --manifest " + out + "/manifest.txt --model mlp:16 --n 3 --out " +
                      gallery);
  CHECK(mp.code == 0);
  // The loop ended with the pool fully consistent; the gallery is empty.
  CHECK(setgen::read_text_file(gallery + "/index.csv") == "id,oracle,predicted,file\n");
}

TEST_CASE("prefix retraining on MNIST") {
  const auto r = run("retrain-eval --pool mnist " + kMnist + " --subset 300 --prefix 100 --model mlp:32 --trials 2 --out " +
                     scratch("mr"));
  CHECK(r.code == 0);
  CHECK(has(r, "basis=prefix(100) model=mlp:32"));
}
