#pragma once

// Small dense classifiers used as surrogate hypotheses.
//
// Networks keep every parameter in one flat vector; layers are views into it.
// Samples are stored column-wise, so a batch is an (input_size x batch) matrix.

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace setgen {

using SampleId = std::uint32_t;

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct InputShape {
  int channels = 1;
  int height = 28;
  int width = 28;

  int size() const { return channels * height * width; }
  std::string to_string() const;
  static InputShape parse(std::string_view text);
  bool operator==(const InputShape&) const = default;
};

enum class Architecture { Mlp, Conv };

struct ModelConfig {
  Architecture architecture = Architecture::Mlp;
  std::vector<int> hidden_sizes{100};  ///< MLP hidden layers
  int latent = 100;                    ///< width of the conv net's FC layer
  int num_classes = 10;
  InputShape input_shape;
  double learning_rate = 1e-3;
  int max_steps = 10000;  ///< optimizer steps per fit attempt
  int batch_size = 64;
  std::uint64_t seed = 0;
  int max_attempts = 5;

  void validate() const;

  /// `mlp:100`, `mlp:64,32`, `conv:50`.
  std::string model_spec() const;
  void apply_model_spec(std::string_view spec);

  /// Every field as `key=value` lines, in a fixed order.
  std::string to_key_values() const;
  void set_key_value(std::string_view key, std::string_view value);

  bool operator==(const ModelConfig&) const = default;
};

/// Samples in stable id order. Features are normalized to [0, 1].
class LabeledPool {
 public:
  LabeledPool() = default;
  LabeledPool(InputShape shape, int num_classes, Eigen::MatrixXf features, std::vector<int> labels,
              std::vector<SampleId> ids);

  const InputShape& shape() const { return shape_; }
  int num_classes() const { return num_classes_; }
  std::size_t size() const { return labels_.size(); }
  const Eigen::MatrixXf& features() const { return features_; }
  const std::vector<int>& labels() const { return labels_; }
  const std::vector<SampleId>& ids() const { return ids_; }

  bool contains(SampleId id) const { return index_.count(id) > 0; }
  /// Column of `id`; throws InputError-like ConfigError when absent.
  std::size_t column_of(SampleId id) const;

  /// First `n` samples.
  LabeledPool prefix(std::size_t n) const;

 private:
  InputShape shape_;
  int num_classes_ = 0;
  Eigen::MatrixXf features_;
  std::vector<int> labels_;
  std::vector<SampleId> ids_;
  std::unordered_map<SampleId, std::size_t> index_;
};

template <typename Scalar>
class Network {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  explicit Network(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  Eigen::Index parameter_count() const { return parameters_.size(); }
  const Vector& parameters() const { return parameters_; }
  Vector& parameters() { return parameters_; }

  /// Uniform fan-in scaled weights, zero biases.
  void initialize(std::uint64_t seed);

  /// Class scores, num_classes x batch.
  Matrix logits(const Matrix& inputs) const;

  /// Mean softmax cross-entropy over the batch.
  Scalar loss(const Matrix& inputs, std::span<const int> labels) const;
  Scalar loss_and_gradient(const Matrix& inputs, std::span<const int> labels, Vector& gradient) const;

 private:
  struct Layer {
    bool conv = false;
    bool relu = true;
    int in_channels = 0, in_height = 0, in_width = 0;
    int out_channels = 0, out_height = 0, out_width = 0;
    int kernel = 0, stride = 0;
    Eigen::Index in_size = 0, out_size = 0;
    Eigen::Index weight_offset = 0, bias_offset = 0;
    Eigen::Index fan_in() const { return conv ? Eigen::Index(in_channels) * kernel * kernel : in_size; }
    Eigen::Index weight_rows() const { return conv ? out_channels : out_size; }
  };

  struct Trace {
    std::vector<Matrix> activations;  // input of each layer
    std::vector<Matrix> patches;      // im2col buffers for conv layers
  };

  Matrix forward(const Matrix& inputs, Trace* trace) const;
  void add_dense(Eigen::Index in, Eigen::Index out, bool relu);
  void add_conv(int in_c, int in_h, int in_w, int out_c, int kernel, int stride);

  ModelConfig config_;
  std::vector<Layer> layers_;
  Vector parameters_;
};

extern template class Network<float>;
extern template class Network<double>;

/// Column-wise softmax.
template <typename Derived>
auto softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> p = logits;
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    p.col(j).array() -= p.col(j).maxCoeff();
    p.col(j) = p.col(j).array().exp().matrix();
    p.col(j) /= p.col(j).sum();
  }
  return p;
}

/// Index of the largest score; ties go to the lowest index.
template <typename Derived>
int argmax(const Eigen::MatrixBase<Derived>& scores) {
  int best = 0;
  for (Eigen::Index i = 1; i < scores.size(); ++i)
    if (scores(i) > scores(best)) best = static_cast<int>(i);
  return best;
}

struct FitReport {
  int steps_used = 0;
  double final_train_accuracy = 0.0;
  int reinit_count = 0;
  bool operator==(const FitReport&) const = default;
};

struct TrainedModel {
  ModelConfig config;
  Eigen::VectorXf weights;
  FitReport fit_report;
};

class FitFailure : public std::runtime_error {
 public:
  FitFailure(const std::string& what, double final_accuracy, int attempts)
      : std::runtime_error(what), final_accuracy_(final_accuracy), attempts_(attempts) {}
  double final_accuracy() const { return final_accuracy_; }
  int attempts() const { return attempts_; }

 private:
  double final_accuracy_;
  int attempts_;
};

/// Adam on minibatches until every subset sample is classified correctly,
/// re-initializing with seed+attempt up to config.max_attempts times.
TrainedModel train_to_fit(const LabeledPool& pool, std::span<const SampleId> subset, const ModelConfig& config);

/// `steps` Adam updates on one fixed batch at the config's learning rate;
/// returns the loss seen before each update.
std::vector<float> train_steps(Network<float>& net, const Eigen::MatrixXf& inputs, std::span<const int> labels,
                               int steps);

int predict(const TrainedModel& model, std::span<const float> features);
/// Predictions for every column of `features`.
std::vector<int> predict_all(const TrainedModel& model, const Eigen::MatrixXf& features);

/// Max relative error between backpropagated and central-difference
/// gradients (h = 1e-5, double precision) over 100 seeded parameter picks.
double gradient_check(const ModelConfig& config, const Eigen::MatrixXd& inputs, std::span<const int> labels);

void save_checkpoint(const std::string& path, const TrainedModel& model);
TrainedModel load_checkpoint(const std::string& path);

}  // namespace setgen
