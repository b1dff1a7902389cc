#pragma once

// Small dense-network engine: affine -> optional layer norm -> activation,
// exact backward pass, BCE/CCE losses, SGD and Adam, binary checkpoints.
//
// Batches are column-major: one sample per column.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "m2h/rng.hpp"

namespace m2h {

enum class Activation : std::uint8_t { kIdentity = 0, kTanh = 1, kSigmoid = 2, kSoftmax = 3 };

inline constexpr double kLayerNormEpsilon = 1e-5;
inline constexpr double kProbabilityClamp = 1e-7;

struct LayerNorm {
  Eigen::VectorXd gain;
  Eigen::VectorXd shift;
};

struct DenseLayer {
  Eigen::MatrixXd weights;  // outputs x inputs
  Eigen::VectorXd bias;
  Activation activation = Activation::kIdentity;
  std::optional<LayerNorm> layer_norm;

  Eigen::Index inputs() const { return weights.cols(); }
  Eigen::Index outputs() const { return weights.rows(); }
};

struct NetworkParams {
  std::vector<DenseLayer> layers;

  Eigen::Index input_dim() const { return layers.empty() ? 0 : layers.front().inputs(); }
  Eigen::Index output_dim() const { return layers.empty() ? 0 : layers.back().outputs(); }
  std::size_t parameter_count() const;

  /// Throws DimensionError / ConfigError on incompatible shapes, a softmax
  /// that is not last, or non-finite parameters.
  void validate() const;
};

bool operator==(const NetworkParams& a, const NetworkParams& b);

struct LayerSpec {
  int outputs = 0;
  Activation activation = Activation::kIdentity;
  bool layer_norm = false;
};

/// Glorot-uniform weights, zero biases, unit gain, zero shift.
NetworkParams make_network(int input_dim, std::span<const LayerSpec> layers, Rng& rng);

struct ForwardCache {
  struct Layer {
    Eigen::MatrixXd input;
    Eigen::MatrixXd normalized;  // empty without layer norm
    Eigen::RowVectorXd inv_std;  // per sample
    Eigen::MatrixXd output;
  };
  std::vector<Layer> layers;
};

struct ForwardResult {
  Eigen::MatrixXd output;
  ForwardCache cache;
};

/// Forward pass keeping everything backward() needs.
ForwardResult forward(const NetworkParams& net, const Eigen::MatrixXd& input);

/// Forward pass without a cache.
Eigen::MatrixXd predict(const NetworkParams& net, const Eigen::MatrixXd& input);

struct LayerGradient {
  Eigen::MatrixXd weights;
  Eigen::VectorXd bias;
  Eigen::VectorXd gain;   // empty without layer norm
  Eigen::VectorXd shift;  // empty without layer norm
};

struct Gradients {
  std::vector<LayerGradient> layers;
  Eigen::MatrixXd input;
};

/// What `output_gradient` is taken with respect to. kLogits skips the final
/// activation's Jacobian (used with the fused softmax-CCE gradient).
enum class OutputGradient { kActivation, kLogits };

Gradients backward(const NetworkParams& net, const ForwardCache& cache, const Eigen::MatrixXd& output_gradient,
                   OutputGradient wrt = OutputGradient::kActivation);

struct ScalarLoss {
  double loss = 0.0;
  double gradient = 0.0;  // d loss / d predicted
};

/// -[t log p + (1-t) log(1-p)] with p clamped to [1e-7, 1-1e-7].
ScalarLoss bce_loss(double predicted, double target);

struct BatchLoss {
  double loss = 0.0;          // mean over the batch
  Eigen::MatrixXd gradient;   // of the mean loss
};

/// Mean BCE over a 1 x B row of probabilities; gradient w.r.t. the probabilities.
BatchLoss bce_loss(const Eigen::MatrixXd& predicted, const Eigen::RowVectorXd& targets);

/// -log p[target]; gradient w.r.t. the softmax logits (p - onehot).
struct CceResult {
  double loss = 0.0;
  Eigen::VectorXd logit_gradient;
};
CceResult cce_loss(const Eigen::VectorXd& predicted, int target);

/// Mean CCE over a batch; gradient w.r.t. logits.
BatchLoss cce_loss(const Eigen::MatrixXd& predicted, std::span<const int> targets);

/// Mean cross-entropy against soft target distributions (columns sum to 1).
BatchLoss soft_cce_loss(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& targets);

enum class OptimizerKind { kSgd, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double learning_rate = 0.02;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static OptimizerConfig sgd(double learning_rate) { return {OptimizerKind::kSgd, learning_rate}; }
  static OptimizerConfig adam(double learning_rate = 0.001) { return {OptimizerKind::kAdam, learning_rate}; }
};

class Optimizer {
 public:
  Optimizer(const OptimizerConfig& config, const NetworkParams& shape);

  /// Applies one update. Throws NumericError (leaving `params` untouched)
  /// when any gradient entry is non-finite, DimensionError on shape mismatch.
  void step(NetworkParams& params, const Gradients& gradients);

  long steps() const { return steps_; }
  const OptimizerConfig& config() const { return config_; }

 private:
  OptimizerConfig config_;
  long steps_ = 0;
  std::vector<LayerGradient> first_moment_;
  std::vector<LayerGradient> second_moment_;
};

/// Parameters in a fixed order: per layer weights (column-major), bias, gain, shift.
std::vector<double> flatten(const NetworkParams& net);
void unflatten(NetworkParams& net, std::span<const double> values);
/// Gradient entries in the same order as flatten(NetworkParams).
std::vector<double> flatten(const Gradients& gradients);

/// FNV-1a over the raw parameter bytes; equal nets give equal checksums.
std::uint64_t checksum(const NetworkParams& net);

// Checkpoint byte layout (little-endian):
//   char[8] "M2HNET\0\0", u32 version (1), u32 layer_count
//   per layer: u32 inputs, u32 outputs, u8 activation, u8 has_layer_norm, u16 reserved (0)
//              f64 weights[outputs*inputs] row-major, f64 bias[outputs],
//              if has_layer_norm: f64 gain[outputs], f64 shift[outputs]
void save_network(const NetworkParams& net, std::ostream& out);
void save_network(const NetworkParams& net, const std::filesystem::path& path);
NetworkParams load_network(std::istream& in);
NetworkParams load_network(const std::filesystem::path& path);

}  // namespace m2h
