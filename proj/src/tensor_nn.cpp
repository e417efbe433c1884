#include "setgen/tensor_nn.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace setgen {

// ---------------------------------------------------------------------------
// Configuration

std::string InputShape::to_string() const {
  return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
}

namespace {

int parse_int(std::string_view text, const char* what) {
  int value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty())
    throw ConfigError(std::string("invalid ") + what + " '" + std::string(text) + "'");
  return value;
}

std::uint64_t parse_u64(std::string_view text, const char* what) {
  std::uint64_t value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty())
    throw ConfigError(std::string("invalid ") + what + " '" + std::string(text) + "'");
  return value;
}

double parse_double(std::string_view text, const char* what) {
  double value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty())
    throw ConfigError(std::string("invalid ") + what + " '" + std::string(text) + "'");
  return value;
}

std::string shortest(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    out.push_back(text.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

InputShape InputShape::parse(std::string_view text) {
  const auto parts = split(text, 'x');
  if (parts.size() != 3) throw ConfigError("input shape must look like CxHxW, got '" + std::string(text) + "'");
  InputShape s{parse_int(parts[0], "channels"), parse_int(parts[1], "height"), parse_int(parts[2], "width")};
  if (s.channels < 1 || s.height < 1 || s.width < 1) throw ConfigError("input shape dimensions must be positive");
  return s;
}

void ModelConfig::validate() const {
  if (architecture == Architecture::Mlp) {
    if (hidden_sizes.empty()) throw ConfigError("an MLP needs at least one hidden layer");
    for (int h : hidden_sizes)
      if (h < 1) throw ConfigError("hidden sizes must be >= 1");
  }
  if (latent < 1) throw ConfigError("latent must be >= 1");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
  if (input_shape.size() < 1) throw ConfigError("empty input shape");
  if (architecture == Architecture::Conv) {
    const int h1 = (input_shape.height - 4) / 2 + 1, w1 = (input_shape.width - 4) / 2 + 1;
    if (input_shape.height < 4 || input_shape.width < 4 || h1 < 4 || w1 < 4)
      throw ConfigError("conv architecture needs inputs of at least 10x10, got " + input_shape.to_string());
  }
}

std::string ModelConfig::model_spec() const {
  if (architecture == Architecture::Conv) return "conv:" + std::to_string(latent);
  std::string out = "mlp:";
  for (std::size_t i = 0; i < hidden_sizes.size(); ++i) out += (i ? "," : "") + std::to_string(hidden_sizes[i]);
  return out;
}

void ModelConfig::apply_model_spec(std::string_view spec) {
  const auto colon = spec.find(':');
  if (colon == std::string_view::npos) throw ConfigError("model spec must be mlp:H[,H...] or conv:H");
  const auto kind = spec.substr(0, colon);
  const auto sizes = spec.substr(colon + 1);
  if (kind == "mlp") {
    std::vector<int> hidden;
    for (auto part : split(sizes, ',')) hidden.push_back(parse_int(part, "hidden size"));
    architecture = Architecture::Mlp;
    hidden_sizes = hidden;
    latent = hidden.back();
  } else if (kind == "conv") {
    architecture = Architecture::Conv;
    latent = parse_int(sizes, "latent");
    hidden_sizes = {latent};
  } else {
    throw ConfigError("unknown architecture '" + std::string(kind) + "'");
  }
  validate();
}

std::string ModelConfig::to_key_values() const {
  std::ostringstream out;
  out << "architecture=" << (architecture == Architecture::Mlp ? "mlp" : "conv") << "\n";
  out << "hidden_sizes=";
  for (std::size_t i = 0; i < hidden_sizes.size(); ++i) out << (i ? "," : "") << hidden_sizes[i];
  out << "\n";
  out << "latent=" << latent << "\n";
  out << "num_classes=" << num_classes << "\n";
  out << "input_shape=" << input_shape.to_string() << "\n";
  out << "learning_rate=" << shortest(learning_rate) << "\n";
  out << "max_steps=" << max_steps << "\n";
  out << "batch_size=" << batch_size << "\n";
  out << "seed=" << seed << "\n";
  out << "max_attempts=" << max_attempts << "\n";
  return out.str();
}

void ModelConfig::set_key_value(std::string_view key, std::string_view value) {
  if (key == "architecture") {
    if (value == "mlp") architecture = Architecture::Mlp;
    else if (value == "conv") architecture = Architecture::Conv;
    else throw ConfigError("unknown architecture '" + std::string(value) + "'");
  } else if (key == "hidden_sizes") {
    hidden_sizes.clear();
    for (auto part : split(value, ',')) hidden_sizes.push_back(parse_int(part, "hidden size"));
  } else if (key == "latent") {
    latent = parse_int(value, "latent");
  } else if (key == "num_classes") {
    num_classes = parse_int(value, "num_classes");
  } else if (key == "input_shape") {
    input_shape = InputShape::parse(value);
  } else if (key == "learning_rate") {
    learning_rate = parse_double(value, "learning_rate");
  } else if (key == "max_steps") {
    max_steps = parse_int(value, "max_steps");
  } else if (key == "batch_size") {
    batch_size = parse_int(value, "batch_size");
  } else if (key == "seed") {
    seed = parse_u64(value, "seed");
  } else if (key == "max_attempts") {
    max_attempts = parse_int(value, "max_attempts");
  } else {
    throw ConfigError("unknown model key '" + std::string(key) + "'");
  }
}

// ---------------------------------------------------------------------------
// Pool

LabeledPool::LabeledPool(InputShape shape, int num_classes, Eigen::MatrixXf features, std::vector<int> labels,
                         std::vector<SampleId> ids)
    : shape_(shape), num_classes_(num_classes), features_(std::move(features)), labels_(std::move(labels)),
      ids_(std::move(ids)) {
  if (num_classes_ < 1) throw ConfigError("pool needs at least one class");
  if (features_.rows() != shape_.size())
    throw ConfigError("feature rows " + std::to_string(features_.rows()) + " do not match input shape " +
                      shape_.to_string());
  if (static_cast<std::size_t>(features_.cols()) != labels_.size() || labels_.size() != ids_.size())
    throw ConfigError("features, labels and ids disagree on the sample count");
  if (features_.size() > 0 && (features_.minCoeff() < 0.0f || features_.maxCoeff() > 1.0f))
    throw ConfigError("pool features must lie in [0, 1]");
  for (int y : labels_)
    if (y < 0 || y >= num_classes_) throw ConfigError("label " + std::to_string(y) + " outside the class range");
  index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i)
    if (!index_.emplace(ids_[i], i).second) throw ConfigError("duplicate sample id " + std::to_string(ids_[i]));
}

std::size_t LabeledPool::column_of(SampleId id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw ConfigError("sample id " + std::to_string(id) + " is not in the pool");
  return it->second;
}

LabeledPool LabeledPool::prefix(std::size_t n) const {
  if (n > size()) throw ConfigError("prefix of " + std::to_string(n) + " exceeds pool size " + std::to_string(size()));
  const auto cols = static_cast<Eigen::Index>(n);
  return LabeledPool(shape_, num_classes_, features_.leftCols(cols),
                     std::vector<int>(labels_.begin(), labels_.begin() + cols),
                     std::vector<SampleId>(ids_.begin(), ids_.begin() + cols));
}

// ---------------------------------------------------------------------------
// Network

template <typename Scalar>
Network<Scalar>::Network(const ModelConfig& config) : config_(config) {
  config_.validate();
  const auto& in = config_.input_shape;
  if (config_.architecture == Architecture::Mlp) {
    Eigen::Index width = in.size();
    for (int h : config_.hidden_sizes) {
      add_dense(width, h, true);
      width = h;
    }
    add_dense(width, config_.num_classes, false);
  } else {
    // Conv 32x4x4 stride 2, Conv 64x4x4 stride 2, FC latent, FC classes.
    add_conv(in.channels, in.height, in.width, 32, 4, 2);
    const auto& c1 = layers_.back();
    add_conv(c1.out_channels, c1.out_height, c1.out_width, 64, 4, 2);
    add_dense(layers_.back().out_size, config_.latent, true);
    add_dense(config_.latent, config_.num_classes, false);
  }
  Eigen::Index total = 0;
  for (const auto& l : layers_) total = std::max(total, l.bias_offset + l.weight_rows());
  parameters_ = Vector::Zero(total);
  initialize(config_.seed);
}

template <typename Scalar>
void Network<Scalar>::add_dense(Eigen::Index in, Eigen::Index out, bool relu) {
  Layer l;
  l.relu = relu;
  l.in_size = in;
  l.out_size = out;
  l.weight_offset = layers_.empty() ? 0 : layers_.back().bias_offset + layers_.back().weight_rows();
  l.bias_offset = l.weight_offset + in * out;
  layers_.push_back(l);
}

template <typename Scalar>
void Network<Scalar>::add_conv(int in_c, int in_h, int in_w, int out_c, int kernel, int stride) {
  Layer l;
  l.conv = true;
  l.in_channels = in_c;
  l.in_height = in_h;
  l.in_width = in_w;
  l.out_channels = out_c;
  l.kernel = kernel;
  l.stride = stride;
  l.out_height = (in_h - kernel) / stride + 1;
  l.out_width = (in_w - kernel) / stride + 1;
  l.in_size = Eigen::Index(in_c) * in_h * in_w;
  l.out_size = Eigen::Index(out_c) * l.out_height * l.out_width;
  l.weight_offset = layers_.empty() ? 0 : layers_.back().bias_offset + layers_.back().weight_rows();
  l.bias_offset = l.weight_offset + Eigen::Index(out_c) * l.fan_in();
  layers_.push_back(l);
}

template <typename Scalar>
void Network<Scalar>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  parameters_.setZero();
  for (const auto& l : layers_) {
    // He-uniform for ReLU layers, LeCun-uniform for the output layer.
    const double limit = std::sqrt((l.relu ? 6.0 : 3.0) / static_cast<double>(l.fan_in()));
    std::uniform_real_distribution<double> dist(-limit, limit);
    const Eigen::Index n = l.weight_rows() * l.fan_in();
    for (Eigen::Index i = 0; i < n; ++i) parameters_(l.weight_offset + i) = static_cast<Scalar>(dist(rng));
  }
}

namespace {

template <typename Matrix, typename Layer>
Matrix im2col(const Layer& l, const Matrix& in) {
  const Eigen::Index positions = Eigen::Index(l.out_height) * l.out_width;
  Matrix patches(l.fan_in(), positions * in.cols());
  for (Eigen::Index b = 0; b < in.cols(); ++b)
    for (int c = 0; c < l.in_channels; ++c)
      for (int ky = 0; ky < l.kernel; ++ky)
        for (int kx = 0; kx < l.kernel; ++kx) {
          const Eigen::Index row = (Eigen::Index(c) * l.kernel + ky) * l.kernel + kx;
          for (int oy = 0; oy < l.out_height; ++oy)
            for (int ox = 0; ox < l.out_width; ++ox) {
              const Eigen::Index src = (Eigen::Index(c) * l.in_height + oy * l.stride + ky) * l.in_width +
                                       ox * l.stride + kx;
              patches(row, b * positions + Eigen::Index(oy) * l.out_width + ox) = in(src, b);
            }
        }
  return patches;
}

template <typename Matrix, typename Layer>
Matrix col2im(const Layer& l, const Matrix& patches, Eigen::Index batch) {
  const Eigen::Index positions = Eigen::Index(l.out_height) * l.out_width;
  Matrix out = Matrix::Zero(l.in_size, batch);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (int c = 0; c < l.in_channels; ++c)
      for (int ky = 0; ky < l.kernel; ++ky)
        for (int kx = 0; kx < l.kernel; ++kx) {
          const Eigen::Index row = (Eigen::Index(c) * l.kernel + ky) * l.kernel + kx;
          for (int oy = 0; oy < l.out_height; ++oy)
            for (int ox = 0; ox < l.out_width; ++ox) {
              const Eigen::Index dst = (Eigen::Index(c) * l.in_height + oy * l.stride + ky) * l.in_width +
                                       ox * l.stride + kx;
              out(dst, b) += patches(row, b * positions + Eigen::Index(oy) * l.out_width + ox);
            }
        }
  return out;
}

}  // namespace

template <typename Scalar>
typename Network<Scalar>::Matrix Network<Scalar>::forward(const Matrix& inputs, Trace* trace) const {
  using RowMajor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  if (inputs.rows() != config_.input_shape.size())
    throw ConfigError("input has " + std::to_string(inputs.rows()) + " features, model expects " +
                      std::to_string(config_.input_shape.size()));
  Matrix a = inputs;
  for (const auto& l : layers_) {
    Eigen::Map<const Matrix> w(parameters_.data() + l.weight_offset, l.weight_rows(), l.fan_in());
    Eigen::Map<const Vector> bias(parameters_.data() + l.bias_offset, l.weight_rows());
    Matrix z;
    if (!l.conv) {
      z.noalias() = w * a;
      z.colwise() += bias;
    } else {
      const Eigen::Index positions = Eigen::Index(l.out_height) * l.out_width;
      Matrix patches = im2col(l, a);
      Matrix y;
      y.noalias() = w * patches;
      y.colwise() += bias;
      z.resize(l.out_size, a.cols());
      for (Eigen::Index b = 0; b < a.cols(); ++b)
        Eigen::Map<RowMajor>(z.col(b).data(), l.out_channels, positions) = y.middleCols(b * positions, positions);
      if (trace) trace->patches.push_back(std::move(patches));
    }
    if (l.relu) z = z.cwiseMax(Scalar(0));
    if (trace) trace->activations.push_back(std::move(a));
    a = std::move(z);
  }
  return a;
}

template <typename Scalar>
typename Network<Scalar>::Matrix Network<Scalar>::logits(const Matrix& inputs) const {
  return forward(inputs, nullptr);
}

namespace {

template <typename Matrix>
typename Matrix::Scalar mean_cross_entropy(const Matrix& logits, std::span<const int> labels) {
  using Scalar = typename Matrix::Scalar;
  Scalar total = 0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const Scalar top = logits.col(j).maxCoeff();
    const Scalar log_sum = std::log((logits.col(j).array() - top).exp().sum()) + top;
    total += log_sum - logits(labels[static_cast<std::size_t>(j)], j);
  }
  return total / static_cast<Scalar>(logits.cols());
}

void check_labels(std::span<const int> labels, Eigen::Index batch, int classes) {
  if (static_cast<Eigen::Index>(labels.size()) != batch) throw ConfigError("label count does not match batch");
  for (int y : labels)
    if (y < 0 || y >= classes) throw ConfigError("label outside the class range");
}

}  // namespace

template <typename Scalar>
Scalar Network<Scalar>::loss(const Matrix& inputs, std::span<const int> labels) const {
  check_labels(labels, inputs.cols(), config_.num_classes);
  return mean_cross_entropy(logits(inputs), labels);
}

template <typename Scalar>
Scalar Network<Scalar>::loss_and_gradient(const Matrix& inputs, std::span<const int> labels, Vector& gradient) const {
  using RowMajor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  check_labels(labels, inputs.cols(), config_.num_classes);
  Trace trace;
  const Matrix out = forward(inputs, &trace);
  const Scalar value = mean_cross_entropy(out, labels);

  const auto batch = inputs.cols();
  Matrix delta = softmax(out);
  for (Eigen::Index j = 0; j < batch; ++j) delta(labels[static_cast<std::size_t>(j)], j) -= Scalar(1);
  delta /= static_cast<Scalar>(batch);

  gradient = Vector::Zero(parameters_.size());
  std::size_t conv_index = trace.patches.size();
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const auto& l = layers_[k];
    const Matrix& layer_out = (k + 1 < layers_.size()) ? trace.activations[k + 1] : out;
    if (l.relu) delta = delta.cwiseProduct((layer_out.array() > Scalar(0)).template cast<Scalar>().matrix());
    const Matrix& layer_in = trace.activations[k];
    Eigen::Map<const Matrix> w(parameters_.data() + l.weight_offset, l.weight_rows(), l.fan_in());
    Eigen::Map<Matrix> grad_w(gradient.data() + l.weight_offset, l.weight_rows(), l.fan_in());
    Eigen::Map<Vector> grad_b(gradient.data() + l.bias_offset, l.weight_rows());
    if (!l.conv) {
      grad_w.noalias() = delta * layer_in.transpose();
      grad_b = delta.rowwise().sum();
      if (k > 0) delta = (w.transpose() * delta).eval();
    } else {
      const Matrix& patches = trace.patches[--conv_index];
      const Eigen::Index positions = Eigen::Index(l.out_height) * l.out_width;
      Matrix dy(l.out_channels, positions * batch);
      for (Eigen::Index b = 0; b < batch; ++b)
        dy.middleCols(b * positions, positions) =
            Eigen::Map<const RowMajor>(delta.col(b).data(), l.out_channels, positions);
      grad_w.noalias() = dy * patches.transpose();
      grad_b = dy.rowwise().sum();
      if (k > 0) {
        Matrix dpatches;
        dpatches.noalias() = w.transpose() * dy;
        delta = col2im(l, dpatches, batch);
      }
    }
  }
  return value;
}

template class Network<float>;
template class Network<double>;

// ---------------------------------------------------------------------------
// Training

namespace {

struct Adam {
  Eigen::ArrayXf m, v;
  int t = 0;
  static constexpr float beta1 = 0.9f, beta2 = 0.999f, eps = 1e-8f;

  explicit Adam(Eigen::Index n) : m(Eigen::ArrayXf::Zero(n)), v(Eigen::ArrayXf::Zero(n)) {}

  void step(Eigen::VectorXf& params, const Eigen::VectorXf& grad, float lr) {
    ++t;
    m = beta1 * m + (1 - beta1) * grad.array();
    v = beta2 * v + (1 - beta2) * grad.array().square();
    const float c1 = 1 - std::pow(beta1, static_cast<float>(t));
    const float c2 = 1 - std::pow(beta2, static_cast<float>(t));
    params.array() -= lr * (m / c1) / ((v / c2).sqrt() + eps);
  }
};

double train_accuracy(const Network<float>& net, const Eigen::MatrixXf& x, const std::vector<int>& y) {
  constexpr Eigen::Index chunk = 1024;
  std::size_t correct = 0;
  for (Eigen::Index start = 0; start < x.cols(); start += chunk) {
    const auto n = std::min(chunk, x.cols() - start);
    const Eigen::MatrixXf scores = net.logits(x.middleCols(start, n));
    for (Eigen::Index j = 0; j < n; ++j)
      if (argmax(scores.col(j)) == y[static_cast<std::size_t>(start + j)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(y.size());
}

}  // namespace

TrainedModel train_to_fit(const LabeledPool& pool, std::span<const SampleId> subset, const ModelConfig& config) {
  config.validate();
  if (subset.empty()) throw ConfigError("cannot fit an empty subset");
  if (config.input_shape != pool.shape())
    throw ConfigError("model input shape " + config.input_shape.to_string() + " does not match pool shape " +
                      pool.shape().to_string());
  if (config.num_classes < pool.num_classes()) throw ConfigError("model has fewer classes than the pool");

  const auto n = static_cast<Eigen::Index>(subset.size());
  Eigen::MatrixXf x(pool.shape().size(), n);
  std::vector<int> y(subset.size());
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto col = pool.column_of(subset[static_cast<std::size_t>(j)]);
    x.col(j) = pool.features().col(static_cast<Eigen::Index>(col));
    y[static_cast<std::size_t>(j)] = pool.labels()[col];
  }

  const Eigen::Index batch = std::min<Eigen::Index>(config.batch_size, n);
  Network<float> net(config);
  Eigen::MatrixXf xb(x.rows(), batch);
  std::vector<int> yb(static_cast<std::size_t>(batch));
  Eigen::VectorXf grad;
  double last_accuracy = 0.0;

  for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
    const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(attempt);
    net.initialize(seed);
    Adam adam(net.parameter_count());
    std::mt19937_64 order_rng(seed ^ 0xd1b54a32d192ed03ULL);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    int steps = 0;
    while (true) {
      std::shuffle(order.begin(), order.end(), order_rng);
      for (Eigen::Index start = 0; start < n && steps < config.max_steps; start += batch) {
        const auto m = std::min(batch, n - start);
        if (m != xb.cols()) {
          xb.resize(x.rows(), m);
          yb.resize(static_cast<std::size_t>(m));
        }
        for (Eigen::Index j = 0; j < m; ++j) {
          const auto src = order[static_cast<std::size_t>(start + j)];
          xb.col(j) = x.col(src);
          yb[static_cast<std::size_t>(j)] = y[static_cast<std::size_t>(src)];
        }
        net.loss_and_gradient(xb, yb, grad);
        adam.step(net.parameters(), grad, static_cast<float>(config.learning_rate));
        ++steps;
      }
      last_accuracy = train_accuracy(net, x, y);
      if (last_accuracy == 1.0)
        return TrainedModel{config, net.parameters(), FitReport{steps, 1.0, attempt}};
      if (steps >= config.max_steps) break;
    }
  }
  throw FitFailure("no fit to 100% training accuracy after " + std::to_string(config.max_attempts) +
                       " attempts of " + std::to_string(config.max_steps) + " steps (final accuracy " +
                       std::to_string(last_accuracy) + ")",
                   last_accuracy, config.max_attempts);
}

std::vector<float> train_steps(Network<float>& net, const Eigen::MatrixXf& inputs, std::span<const int> labels,
                               int steps) {
  Adam adam(net.parameter_count());
  Eigen::VectorXf grad;
  std::vector<float> losses;
  losses.reserve(static_cast<std::size_t>(std::max(steps, 0)));
  for (int k = 0; k < steps; ++k) {
    losses.push_back(net.loss_and_gradient(inputs, labels, grad));
    adam.step(net.parameters(), grad, static_cast<float>(net.config().learning_rate));
  }
  return losses;
}

std::vector<int> predict_all(const TrainedModel& model, const Eigen::MatrixXf& features) {
  Network<float> net(model.config);
  if (model.weights.size() != net.parameter_count()) throw ConfigError("weight count does not match the model");
  net.parameters() = model.weights;
  constexpr Eigen::Index chunk = 1024;
  std::vector<int> out(static_cast<std::size_t>(features.cols()));
  for (Eigen::Index start = 0; start < features.cols(); start += chunk) {
    const auto n = std::min(chunk, features.cols() - start);
    const Eigen::MatrixXf scores = net.logits(features.middleCols(start, n));
    for (Eigen::Index j = 0; j < n; ++j) out[static_cast<std::size_t>(start + j)] = argmax(scores.col(j));
  }
  return out;
}

int predict(const TrainedModel& model, std::span<const float> features) {
  const Eigen::Map<const Eigen::MatrixXf> column(features.data(), static_cast<Eigen::Index>(features.size()), 1);
  return predict_all(model, column).front();
}

double gradient_check(const ModelConfig& config, const Eigen::MatrixXd& inputs, std::span<const int> labels) {
  Network<double> net(config);
  Eigen::VectorXd analytic;
  net.loss_and_gradient(inputs, labels, analytic);

  constexpr double h = 1e-5;
  // Floor on the denominator: central differences carry ~1e-11 of roundoff,
  // which would otherwise dominate for parameters with vanishing gradient.
  constexpr double floor = 1e-6;
  std::mt19937_64 rng(config.seed ^ 0x5851f42d4c957f2dULL);
  std::uniform_int_distribution<Eigen::Index> pick(0, net.parameter_count() - 1);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const auto i = pick(rng);
    const double saved = net.parameters()(i);
    net.parameters()(i) = saved + h;
    const double up = net.loss(inputs, labels);
    net.parameters()(i) = saved - h;
    const double down = net.loss(inputs, labels);
    net.parameters()(i) = saved;
    const double numeric = (up - down) / (2 * h);
    const double rel = std::abs(analytic(i) - numeric) / std::max(std::abs(analytic(i)) + std::abs(numeric), floor);
    worst = std::max(worst, rel);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::string_view kMagic = "SGNN1";

void put_le32(std::ostream& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                         static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
  out.write(bytes, 4);
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainedModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
  out << kMagic << "\n" << model.config.to_key_values();
  out << "steps_used=" << model.fit_report.steps_used << "\n";
  out << "final_train_accuracy=" << shortest(model.fit_report.final_train_accuracy) << "\n";
  out << "reinit_count=" << model.fit_report.reinit_count << "\n";
  out << "weights=" << model.weights.size() << "\n";
  for (Eigen::Index i = 0; i < model.weights.size(); ++i) put_le32(out, model.weights(i));
  if (!out) throw ConfigError("failed writing checkpoint '" + path + "'");
}

TrainedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw ConfigError("'" + path + "' is not an SGNN1 checkpoint");
  TrainedModel model;
  Eigen::Index count = -1;
  while (count < 0 && std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed checkpoint line '" + line + "'");
    const std::string_view key(line.data(), eq), value(line.data() + eq + 1, line.size() - eq - 1);
    if (key == "steps_used") model.fit_report.steps_used = parse_int(value, key.data());
    else if (key == "final_train_accuracy") model.fit_report.final_train_accuracy = parse_double(value, "accuracy");
    else if (key == "reinit_count") model.fit_report.reinit_count = parse_int(value, "reinit_count");
    else if (key == "weights") count = parse_int(value, "weights");
    else model.config.set_key_value(key, value);
  }
  if (count < 0) throw ConfigError("checkpoint has no weights section");
  model.config.validate();
  model.weights.resize(count);
  for (Eigen::Index i = 0; i < count; ++i) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw ConfigError("checkpoint weights truncated");
    const std::uint32_t bits = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
                               (std::uint32_t(b[3]) << 24);
    model.weights(i) = std::bit_cast<float>(bits);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ConfigError("trailing bytes after checkpoint weights");
  if (Network<float>(model.config).parameter_count() != count)
    throw ConfigError("checkpoint weight count does not match its configuration");
  return model;
}

}  // namespace setgen
