#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <random>

#include "setgen/data_io.hpp"
#include "setgen/tensor_nn.hpp"

using namespace setgen;

namespace {

ModelConfig small_mlp(int hidden, InputShape shape, int classes) {
  ModelConfig c;
  c.hidden_sizes = {hidden};
  c.latent = hidden;
  c.input_shape = shape;
  c.num_classes = classes;
  return c;
}

Eigen::MatrixXd random_batch(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = u(rng);
  return m;
}

const LabeledPool& mnist() {
  static const LabeledPool pool = load_idx(SETGEN_DATA_DIR "/mnist5k/train-images-idx3-ubyte",
                                           SETGEN_DATA_DIR "/mnist5k/train-labels-idx1-ubyte");
  return pool;
}

}  // namespace

TEST_CASE("softmax columns are distributions") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 5.0);
  Eigen::MatrixXd logits(10, 50);
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits(i) = g(rng);
  const auto p = softmax(logits);
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    CHECK(std::abs(p.col(j).sum() - 1.0) < 1e-9);
    CHECK(p.col(j).minCoeff() > 0.0);
    CHECK(p.col(j).maxCoeff() < 1.0);
  }
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  Eigen::VectorXf flat = Eigen::VectorXf::Constant(10, 0.25f);
  CHECK(argmax(flat) == 0);
  Eigen::VectorXf two(4);
  two << 0.1f, 0.7f, 0.2f, 0.7f;
  CHECK(argmax(two) == 1);

  // A network whose output layer is all zero scores every class equally.
  const auto config = small_mlp(8, {1, 1, 4}, 3);
  Network<float> net(config);
  net.parameters().setZero();
  TrainedModel model{config, net.parameters(), {}};
  const std::vector<float> x{0.3f, 0.1f, 0.9f, 0.5f};
  CHECK(predict(model, x) == 0);
}

TEST_CASE("model specs and key-value config round-trip") {
  ModelConfig c;
  c.apply_model_spec("mlp:64,32");
  CHECK(c.hidden_sizes == std::vector{64, 32});
  CHECK(c.model_spec() == "mlp:64,32");
  c.apply_model_spec("conv:50");
  CHECK(c.architecture == Architecture::Conv);
  CHECK(c.latent == 50);
  CHECK(c.model_spec() == "conv:50");
  CHECK_THROWS_AS(c.apply_model_spec("rnn:3"), ConfigError);
  CHECK_THROWS_AS(c.apply_model_spec("mlp:0"), ConfigError);
  CHECK_THROWS_AS(c.apply_model_spec("mlp:"), ConfigError);

  c.seed = 123456789012345ULL;
  c.learning_rate = 3e-4;
  ModelConfig back;
  const auto text = c.to_key_values();
  std::size_t start = 0;
  while (start < text.size()) {
    const auto end = text.find('\n', start);
    const auto line = text.substr(start, end - start);
    const auto eq = line.find('=');
    back.set_key_value(line.substr(0, eq), line.substr(eq + 1));
    start = end + 1;
  }
  CHECK(back == c);

  ModelConfig bad;
  bad.learning_rate = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ModelConfig{};
  bad.max_steps = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("gradient check: MLP(16), batch 4") {
  const auto config = small_mlp(16, {1, 28, 28}, 10);
  const auto x = random_batch(784, 4, 11);
  const std::vector<int> y{3, 1, 4, 1};
  CHECK(gradient_check(config, x, y) < 1e-4);

  // Two hidden layers exercise the inner backward path.
  auto deep = config;
  deep.hidden_sizes = {16, 12};
  CHECK(gradient_check(deep, random_batch(784, 3, 12), std::vector{0, 9, 5}) < 1e-4);
}

TEST_CASE("gradient check: CONV(50), batch 2") {
  ModelConfig config;
  config.apply_model_spec("conv:50");
  const auto x = random_batch(784, 2, 13);
  const std::vector<int> y{7, 2};
  CHECK(gradient_check(config, x, y) < 1e-4);
}

TEST_CASE("zero-input batch stays finite") {
  const auto config = small_mlp(16, {1, 28, 28}, 10);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Zero(784, 4);
  const std::vector<int> y{0, 1, 2, 3};
  const double err = gradient_check(config, x, y);
  CHECK(std::isfinite(err));
  Network<double> net(config);
  Eigen::VectorXd g;
  CHECK(std::isfinite(net.loss_and_gradient(x, y, g)));
  CHECK(g.allFinite());
}

TEST_CASE("loss over 50-step windows mostly decreases on a fixed batch") {
  const auto& pool = mnist();
  const Eigen::MatrixXf x = pool.features().leftCols(32);
  const std::vector<int> y(pool.labels().begin(), pool.labels().begin() + 32);
  int good = 0;
  constexpr int seeds = 20;
  for (int seed = 0; seed < seeds; ++seed) {
    auto config = small_mlp(32, pool.shape(), 10);
    config.seed = static_cast<std::uint64_t>(seed);
    Network<float> net(config);
    const auto losses = train_steps(net, x, y, 201);
    bool ok = true;
    for (std::size_t t = 0; t + 50 < losses.size(); t += 50) ok = ok && losses[t + 50] <= losses[t];
    good += ok;
  }
  CHECK(good >= 19);  // 95% of seeds
}

TEST_CASE("training is a pure function of pool, subset and config") {
  const auto& pool = mnist();
  std::vector<SampleId> subset(pool.ids().begin(), pool.ids().begin() + 20);
  auto config = small_mlp(32, pool.shape(), 10);
  config.seed = 7;
  const auto a = train_to_fit(pool, subset, config);
  const auto b = train_to_fit(pool, subset, config);
  CHECK(a.fit_report.final_train_accuracy == 1.0);
  CHECK(a.weights.size() == b.weights.size());
  CHECK(std::memcmp(a.weights.data(), b.weights.data(), sizeof(float) * static_cast<std::size_t>(a.weights.size())) ==
        0);
  CHECK(a.fit_report == b.fit_report);

  for (auto id : subset) {
    const auto col = pool.column_of(id);
    const Eigen::VectorXf v = pool.features().col(static_cast<Eigen::Index>(col));
    CHECK(predict(a, std::span<const float>(v.data(), static_cast<std::size_t>(v.size()))) == pool.labels()[col]);
  }

  config.seed = 8;
  const auto c = train_to_fit(pool, subset, config);
  CHECK_FALSE(c.weights == a.weights);
}

TEST_CASE("fit failure reports the final accuracy") {
  // Contradictory labels on identical inputs can never be fit.
  Eigen::MatrixXf x = Eigen::MatrixXf::Constant(2, 4, 0.5f);
  LabeledPool pool({1, 1, 2}, 2, x, {0, 1, 0, 1}, {10, 11, 12, 13});
  auto config = small_mlp(4, pool.shape(), 2);
  config.max_steps = 20;
  config.max_attempts = 2;
  const std::vector<SampleId> ids{10, 11, 12, 13};
  try {
    train_to_fit(pool, ids, config);
    FAIL("expected FitFailure");
  } catch (const FitFailure& e) {
    CHECK(e.attempts() == 2);
    CHECK(e.final_accuracy() == doctest::Approx(0.5));
  }
  CHECK_THROWS_AS(train_to_fit(pool, std::vector<SampleId>{}, config), ConfigError);
  CHECK_THROWS_AS(train_to_fit(pool, std::vector<SampleId>{99}, config), ConfigError);
}

TEST_CASE("pool invariants") {
  Eigen::MatrixXf x = Eigen::MatrixXf::Zero(2, 2);
  CHECK_THROWS_AS(LabeledPool({1, 1, 2}, 2, x, {0, 1}, {5, 5}), ConfigError);
  CHECK_THROWS_AS(LabeledPool({1, 1, 2}, 2, x, {0, 2}, {0, 1}), ConfigError);
  CHECK_THROWS_AS(LabeledPool({1, 1, 3}, 2, x, {0, 1}, {0, 1}), ConfigError);
  x(0, 0) = 1.5f;
  CHECK_THROWS_AS(LabeledPool({1, 1, 2}, 2, x, {0, 1}, {0, 1}), ConfigError);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  const auto& pool = mnist();
  std::vector<SampleId> subset(pool.ids().begin(), pool.ids().begin() + 10);
  auto config = small_mlp(8, pool.shape(), 10);
  config.seed = 3;
  const auto model = train_to_fit(pool, subset, config);
  const auto path = (std::filesystem::temp_directory_path() / "setgen_ckpt_test.sgnn").string();
  save_checkpoint(path, model);
  const auto back = load_checkpoint(path);
  CHECK(back.config == model.config);
  CHECK(back.fit_report == model.fit_report);
  REQUIRE(back.weights.size() == model.weights.size());
  CHECK(std::memcmp(back.weights.data(), model.weights.data(),
                    sizeof(float) * static_cast<std::size_t>(model.weights.size())) == 0);
  save_checkpoint(path + "2", back);
  CHECK(read_text_file(path) == read_text_file(path + "2"));
  std::filesystem::remove(path);
  std::filesystem::remove(path + "2");
}
