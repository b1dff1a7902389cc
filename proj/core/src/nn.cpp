#include "m2h/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "m2h/error.hpp"

namespace m2h {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers) {
    n += static_cast<std::size_t>(layer.weights.size() + layer.bias.size());
    if (layer.layer_norm) n += static_cast<std::size_t>(2 * layer.outputs());
  }
  return n;
}

void NetworkParams::validate() const {
  if (layers.empty()) throw ConfigError("network has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& layer = layers[i];
    if (layer.weights.rows() == 0 || layer.weights.cols() == 0) throw DimensionError("layer has an empty matrix");
    if (layer.bias.size() != layer.outputs()) throw DimensionError("bias length differs from layer outputs");
    if (i > 0 && layer.inputs() != layers[i - 1].outputs()) {
      throw DimensionError("layer " + std::to_string(i) + " input width does not match the previous layer");
    }
    if (layer.activation == Activation::kSoftmax && i + 1 != layers.size()) {
      throw ConfigError("softmax is only allowed on the final layer");
    }
    if (!layer.weights.allFinite() || !layer.bias.allFinite()) throw NumericError("non-finite parameters");
    if (layer.layer_norm) {
      if (layer.layer_norm->gain.size() != layer.outputs() || layer.layer_norm->shift.size() != layer.outputs()) {
        throw DimensionError("layer-norm parameters differ from layer outputs");
      }
      if (!layer.layer_norm->gain.allFinite() || !layer.layer_norm->shift.allFinite()) {
        throw NumericError("non-finite layer-norm parameters");
      }
    }
  }
}

bool operator==(const NetworkParams& a, const NetworkParams& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& x = a.layers[i];
    const auto& y = b.layers[i];
    if (x.activation != y.activation || x.weights.rows() != y.weights.rows() ||
        x.weights.cols() != y.weights.cols() || x.weights != y.weights || x.bias != y.bias ||
        x.layer_norm.has_value() != y.layer_norm.has_value()) {
      return false;
    }
    if (x.layer_norm && (x.layer_norm->gain != y.layer_norm->gain || x.layer_norm->shift != y.layer_norm->shift)) {
      return false;
    }
  }
  return true;
}

NetworkParams make_network(int input_dim, std::span<const LayerSpec> specs, Rng& rng) {
  if (input_dim < 1 || specs.empty()) throw ConfigError("network needs a positive input width and a layer");
  NetworkParams net;
  int fan_in = input_dim;
  for (const auto& spec : specs) {
    if (spec.outputs < 1) throw ConfigError("layer width must be positive");
    DenseLayer layer;
    const double limit = std::sqrt(6.0 / (fan_in + spec.outputs));
    std::uniform_real_distribution<double> init(-limit, limit);
    layer.weights.resize(spec.outputs, fan_in);
    // Fill column-major explicitly so the draw order is fixed.
    for (Index c = 0; c < layer.weights.cols(); ++c) {
      for (Index r = 0; r < layer.weights.rows(); ++r) layer.weights(r, c) = init(rng);
    }
    layer.bias = VectorXd::Zero(spec.outputs);
    layer.activation = spec.activation;
    if (spec.layer_norm) layer.layer_norm = LayerNorm{VectorXd::Ones(spec.outputs), VectorXd::Zero(spec.outputs)};
    net.layers.push_back(std::move(layer));
    fan_in = spec.outputs;
  }
  net.validate();
  return net;
}

namespace {

void softmax_columns(MatrixXd& m) {
  for (Index c = 0; c < m.cols(); ++c) {
    auto col = m.col(c);
    col.array() -= col.maxCoeff();
    col = col.array().exp().matrix();
    col /= col.sum();
  }
}

void apply_activation(Activation act, MatrixXd& m) {
  switch (act) {
    case Activation::kIdentity:
      break;
    case Activation::kTanh:
      m = m.array().tanh().matrix();
      break;
    case Activation::kSigmoid:
      m = (1.0 / (1.0 + (-m.array()).exp())).matrix();
      break;
    case Activation::kSoftmax:
      softmax_columns(m);
      break;
  }
}

MatrixXd run(const NetworkParams& net, const MatrixXd& input, ForwardCache* cache) {
  if (net.layers.empty()) throw ConfigError("network has no layers");
  if (input.rows() != net.input_dim()) {
    throw DimensionError("input has " + std::to_string(input.rows()) + " rows, network expects " +
                         std::to_string(net.input_dim()));
  }
  if (!input.allFinite()) throw NumericError("non-finite network input");
  if (cache) cache->layers.assign(net.layers.size(), {});

  MatrixXd x = input;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& layer = net.layers[i];
    MatrixXd a = layer.weights * x;
    a.colwise() += layer.bias;
    if (layer.layer_norm) {
      const double n = static_cast<double>(a.rows());
      const RowVectorXd mean = a.colwise().sum() / n;
      a.rowwise() -= mean;
      const RowVectorXd inv_std = ((a.array().square().colwise().sum() / n) + kLayerNormEpsilon).rsqrt().matrix();
      a.array().rowwise() *= inv_std.array();
      if (cache) {
        cache->layers[i].normalized = a;
        cache->layers[i].inv_std = inv_std;
      }
      a = (a.array().colwise() * layer.layer_norm->gain.array()).matrix();
      a.colwise() += layer.layer_norm->shift;
    }
    apply_activation(layer.activation, a);
    if (cache) {
      cache->layers[i].input = std::move(x);
      cache->layers[i].output = a;
    }
    x = std::move(a);
  }
  return x;
}

}  // namespace

ForwardResult forward(const NetworkParams& net, const MatrixXd& input) {
  ForwardResult result;
  result.output = run(net, input, &result.cache);
  return result;
}

MatrixXd predict(const NetworkParams& net, const MatrixXd& input) { return run(net, input, nullptr); }

Gradients backward(const NetworkParams& net, const ForwardCache& cache, const MatrixXd& output_gradient,
                   OutputGradient wrt) {
  if (cache.layers.size() != net.layers.size()) throw DimensionError("cache does not match the network");
  const auto& last = cache.layers.back().output;
  if (output_gradient.rows() != last.rows() || output_gradient.cols() != last.cols()) {
    throw DimensionError("output gradient shape does not match the forward output");
  }

  Gradients grads;
  grads.layers.resize(net.layers.size());
  MatrixXd g = output_gradient;

  for (std::size_t idx = net.layers.size(); idx-- > 0;) {
    const auto& layer = net.layers[idx];
    const auto& lc = cache.layers[idx];
    auto& lg = grads.layers[idx];

    const bool skip_activation = wrt == OutputGradient::kLogits && idx + 1 == net.layers.size();
    if (!skip_activation) {
      switch (layer.activation) {
        case Activation::kIdentity:
          break;
        case Activation::kTanh:
          g.array() *= 1.0 - lc.output.array().square();
          break;
        case Activation::kSigmoid:
          g.array() *= lc.output.array() * (1.0 - lc.output.array());
          break;
        case Activation::kSoftmax: {
          const RowVectorXd dot = (g.array() * lc.output.array()).colwise().sum();
          g = (lc.output.array() * (g.array().rowwise() - dot.array())).matrix();
          break;
        }
      }
    }

    if (layer.layer_norm) {
      const auto& xhat = lc.normalized;
      lg.gain = (g.array() * xhat.array()).rowwise().sum().matrix();
      lg.shift = g.rowwise().sum();
      const MatrixXd dxhat = (g.array().colwise() * layer.layer_norm->gain.array()).matrix();
      const double n = static_cast<double>(g.rows());
      const RowVectorXd sum_d = dxhat.colwise().sum();
      const RowVectorXd sum_dx = (dxhat.array() * xhat.array()).colwise().sum();
      MatrixXd da = n * dxhat;
      da.rowwise() -= sum_d;
      da.array() -= xhat.array().rowwise() * sum_dx.array();
      da.array().rowwise() *= (lc.inv_std / n).array();
      g = std::move(da);
    }

    lg.weights = g * lc.input.transpose();
    lg.bias = g.rowwise().sum();
    g = layer.weights.transpose() * g;
  }
  grads.input = std::move(g);
  return grads;
}

// ---------------------------------------------------------------------------

ScalarLoss bce_loss(double predicted, double target) {
  const double p = std::clamp(predicted, kProbabilityClamp, 1.0 - kProbabilityClamp);
  ScalarLoss out;
  out.loss = -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
  out.gradient = (p - target) / (p * (1.0 - p));
  return out;
}

BatchLoss bce_loss(const MatrixXd& predicted, const RowVectorXd& targets) {
  if (predicted.rows() != 1 || predicted.cols() != targets.size() || targets.size() == 0) {
    throw DimensionError("BCE expects a 1 x B prediction row matching the targets");
  }
  const double b = static_cast<double>(targets.size());
  BatchLoss out;
  out.gradient.resize(1, predicted.cols());
  for (Index i = 0; i < predicted.cols(); ++i) {
    const auto s = bce_loss(predicted(0, i), targets(i));
    out.loss += s.loss;
    out.gradient(0, i) = s.gradient / b;
  }
  out.loss /= b;
  if (!std::isfinite(out.loss)) throw NumericError("non-finite BCE loss");
  return out;
}

CceResult cce_loss(const VectorXd& predicted, int target) {
  if (target < 0 || target >= predicted.size()) throw ConfigError("CCE target class out of range");
  CceResult out;
  out.loss = -std::log(std::max(predicted(target), kProbabilityClamp));
  out.logit_gradient = predicted;
  out.logit_gradient(target) -= 1.0;
  return out;
}

BatchLoss cce_loss(const MatrixXd& predicted, std::span<const int> targets) {
  if (static_cast<std::size_t>(predicted.cols()) != targets.size() || targets.empty()) {
    throw DimensionError("CCE expects one target per prediction column");
  }
  const double b = static_cast<double>(targets.size());
  BatchLoss out;
  out.gradient = predicted / b;
  for (Index i = 0; i < predicted.cols(); ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= predicted.rows()) throw ConfigError("CCE target class out of range");
    out.loss -= std::log(std::max(predicted(t, i), kProbabilityClamp));
    out.gradient(t, i) -= 1.0 / b;
  }
  out.loss /= b;
  if (!std::isfinite(out.loss)) throw NumericError("non-finite CCE loss");
  return out;
}

BatchLoss soft_cce_loss(const MatrixXd& predicted, const MatrixXd& targets) {
  if (predicted.rows() != targets.rows() || predicted.cols() != targets.cols() || predicted.cols() == 0) {
    throw DimensionError("soft CCE expects matching prediction and target shapes");
  }
  const double b = static_cast<double>(predicted.cols());
  BatchLoss out;
  out.loss = -(targets.array() * predicted.array().max(kProbabilityClamp).log()).sum() / b;
  // Each target column sums to one, so d/dlogits = p - q.
  out.gradient = (predicted - targets) / b;
  if (!std::isfinite(out.loss)) throw NumericError("non-finite CCE loss");
  return out;
}

// ---------------------------------------------------------------------------

namespace {

LayerGradient zeros_like(const DenseLayer& layer) {
  LayerGradient g;
  g.weights = MatrixXd::Zero(layer.weights.rows(), layer.weights.cols());
  g.bias = VectorXd::Zero(layer.bias.size());
  if (layer.layer_norm) {
    g.gain = VectorXd::Zero(layer.outputs());
    g.shift = VectorXd::Zero(layer.outputs());
  }
  return g;
}

bool same_shape(const DenseLayer& layer, const LayerGradient& g) {
  const bool ln_ok = layer.layer_norm ? (g.gain.size() == layer.outputs() && g.shift.size() == layer.outputs())
                                      : (g.gain.size() == 0 && g.shift.size() == 0);
  return g.weights.rows() == layer.weights.rows() && g.weights.cols() == layer.weights.cols() &&
         g.bias.size() == layer.bias.size() && ln_ok;
}

template <class Param, class Grad>
void adam_update(Param& theta, const Grad& g, Grad& m, Grad& v, const OptimizerConfig& c, double bc1, double bc2) {
  m = c.beta1 * m + (1.0 - c.beta1) * g;
  v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
  theta.array() -= c.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.epsilon);
}

}  // namespace

Optimizer::Optimizer(const OptimizerConfig& config, const NetworkParams& shape) : config_(config) {
  if (!(config.learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (config.kind == OptimizerKind::kAdam) {
    for (const auto& layer : shape.layers) {
      first_moment_.push_back(zeros_like(layer));
      second_moment_.push_back(zeros_like(layer));
    }
  }
}

void Optimizer::step(NetworkParams& params, const Gradients& gradients) {
  if (gradients.layers.size() != params.layers.size()) throw DimensionError("gradient layer count mismatch");
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& g = gradients.layers[i];
    if (!same_shape(params.layers[i], g)) throw DimensionError("gradient shape mismatch in layer " + std::to_string(i));
    if (!g.weights.allFinite() || !g.bias.allFinite() || !g.gain.allFinite() || !g.shift.allFinite()) {
      throw NumericError("non-finite gradient in layer " + std::to_string(i));
    }
  }
  if (config_.kind == OptimizerKind::kAdam && first_moment_.size() != params.layers.size()) {
    throw DimensionError("optimizer state was built for a different network");
  }

  ++steps_;
  const double lr = config_.learning_rate;
  if (config_.kind == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
      auto& layer = params.layers[i];
      const auto& g = gradients.layers[i];
      layer.weights -= lr * g.weights;
      layer.bias -= lr * g.bias;
      if (layer.layer_norm) {
        layer.layer_norm->gain -= lr * g.gain;
        layer.layer_norm->shift -= lr * g.shift;
      }
    }
    return;
  }

  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& layer = params.layers[i];
    const auto& g = gradients.layers[i];
    auto& m = first_moment_[i];
    auto& v = second_moment_[i];
    adam_update(layer.weights, g.weights, m.weights, v.weights, config_, bc1, bc2);
    adam_update(layer.bias, g.bias, m.bias, v.bias, config_, bc1, bc2);
    if (layer.layer_norm) {
      adam_update(layer.layer_norm->gain, g.gain, m.gain, v.gain, config_, bc1, bc2);
      adam_update(layer.layer_norm->shift, g.shift, m.shift, v.shift, config_, bc1, bc2);
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

template <class F>
void for_each_block(const NetworkParams& net, F&& f) {
  for (const auto& layer : net.layers) {
    f(layer.weights.data(), layer.weights.size());
    f(layer.bias.data(), layer.bias.size());
    if (layer.layer_norm) {
      f(layer.layer_norm->gain.data(), layer.layer_norm->gain.size());
      f(layer.layer_norm->shift.data(), layer.layer_norm->shift.size());
    }
  }
}

}  // namespace

std::vector<double> flatten(const NetworkParams& net) {
  std::vector<double> out;
  out.reserve(net.parameter_count());
  for_each_block(net, [&](const double* p, Index n) { out.insert(out.end(), p, p + n); });
  return out;
}

void unflatten(NetworkParams& net, std::span<const double> values) {
  if (values.size() != net.parameter_count()) throw DimensionError("flat parameter vector has the wrong length");
  std::size_t pos = 0;
  for_each_block(net, [&](const double* p, Index n) {
    std::memcpy(const_cast<double*>(p), values.data() + pos, static_cast<std::size_t>(n) * sizeof(double));
    pos += static_cast<std::size_t>(n);
  });
}

std::vector<double> flatten(const Gradients& gradients) {
  std::vector<double> out;
  for (const auto& g : gradients.layers) {
    out.insert(out.end(), g.weights.data(), g.weights.data() + g.weights.size());
    out.insert(out.end(), g.bias.data(), g.bias.data() + g.bias.size());
    out.insert(out.end(), g.gain.data(), g.gain.data() + g.gain.size());
    out.insert(out.end(), g.shift.data(), g.shift.data() + g.shift.size());
  }
  return out;
}

std::uint64_t checksum(const NetworkParams& net) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for_each_block(net, [&](const double* p, Index n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * sizeof(double); ++i) {
      h = (h ^ bytes[i]) * 0x100000001b3ULL;
    }
  });
  return h;
}

// ---------------------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'M', '2', 'H', 'N', 'E', 'T', '\0', '\0'};

template <class T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <class T>
T get(std::istream& in) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof value)) throw ParseError("truncated network checkpoint", 0);
  return value;
}

void put_doubles(std::ostream& out, const double* p, std::size_t n) {
  out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}

void get_doubles(std::istream& in, double* p, std::size_t n) {
  if (!in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)))) {
    throw ParseError("truncated network checkpoint", 0);
  }
}

}  // namespace

void save_network(const NetworkParams& net, std::ostream& out) {
  net.validate();
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.layers.size()));
  for (const auto& layer : net.layers) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(layer.inputs()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(layer.outputs()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(layer.activation));
    put<std::uint8_t>(out, layer.layer_norm ? 1 : 0);
    put<std::uint16_t>(out, 0);
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> row_major = layer.weights;
    put_doubles(out, row_major.data(), static_cast<std::size_t>(row_major.size()));
    put_doubles(out, layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
    if (layer.layer_norm) {
      put_doubles(out, layer.layer_norm->gain.data(), static_cast<std::size_t>(layer.outputs()));
      put_doubles(out, layer.layer_norm->shift.data(), static_cast<std::size_t>(layer.outputs()));
    }
  }
}

void save_network(const NetworkParams& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  save_network(net, out);
  if (!out) throw ConfigError("failed writing " + path.string());
}

NetworkParams load_network(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw ParseError("not an m2h network checkpoint", 0);
  }
  const auto version = get<std::uint32_t>(in);
  if (version != 1) throw ParseError("unsupported checkpoint version " + std::to_string(version), 0);
  const auto count = get<std::uint32_t>(in);
  if (count == 0 || count > 1024) throw ParseError("implausible layer count", 0);

  NetworkParams net;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto inputs = get<std::uint32_t>(in);
    const auto outputs = get<std::uint32_t>(in);
    const auto act = get<std::uint8_t>(in);
    const auto has_ln = get<std::uint8_t>(in);
    (void)get<std::uint16_t>(in);
    if (act > 3 || has_ln > 1 || inputs == 0 || outputs == 0) throw ParseError("corrupt layer header", 0);

    DenseLayer layer;
    layer.activation = static_cast<Activation>(act);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> row_major(outputs, inputs);
    get_doubles(in, row_major.data(), static_cast<std::size_t>(row_major.size()));
    layer.weights = row_major;
    layer.bias.resize(outputs);
    get_doubles(in, layer.bias.data(), outputs);
    if (has_ln) {
      LayerNorm ln{VectorXd(outputs), VectorXd(outputs)};
      get_doubles(in, ln.gain.data(), outputs);
      get_doubles(in, ln.shift.data(), outputs);
      layer.layer_norm = std::move(ln);
    }
    net.layers.push_back(std::move(layer));
  }
  try {
    net.validate();
  } catch (const std::exception& e) {
    throw ParseError(std::string("invalid checkpoint: ") + e.what(), 0);
  }
  return net;
}

NetworkParams load_network(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  return load_network(in);
}

}  // namespace m2h
