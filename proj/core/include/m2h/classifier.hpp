#pragma once

// Downstream theme classifier trained on (optionally generator-mapped)
// embeddings, plus the dev-selected / best-test accuracy metrics.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "m2h/corpus.hpp"
#include "m2h/lda.hpp"
#include "m2h/nn.hpp"

namespace m2h {

struct ClassifierSpec {
  int input_dim = 250;
  int hidden = 256;
  int hidden_layers = 2;
  int classes = 8;
  int epochs = 40;
  double learning_rate = 0.001;
  int batch_size = 32;

  void validate() const;
};

struct LabeledSet {
  Eigen::MatrixXd features;  // one column per sample
  std::vector<int> labels;

  Eigen::Index size() const { return features.cols(); }
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_accuracy = 0.0;
  double test_accuracy = 0.0;

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

struct ClassifierResult {
  NetworkParams params;
  std::vector<EpochMetrics> history;
};

NetworkParams make_classifier(const ClassifierSpec& spec, Rng& rng);

/// Argmax per column, lowest index on ties.
std::vector<int> predict_classes(const NetworkParams& net, const Eigen::MatrixXd& features);
double accuracy(const NetworkParams& net, const LabeledSet& set);

/// Adam on mean CCE. Records dev/test accuracy after every epoch. With
/// spec.epochs == 0 the history holds a single epoch-0 record of the
/// untrained network.
ClassifierResult train_classifier(const LabeledSet& train, const LabeledSet& dev, const LabeledSet& test,
                                  const ClassifierSpec& spec, std::uint64_t seed);

/// Embeds `docs` and, when a generator is given, maps them through it.
/// The generator is only read.
Eigen::MatrixXd featurize(const NetworkParams* generator, const Embedder& embedder, std::span<const Document> docs,
                          const InferenceConfig& inference);
/// Same, from precomputed embeddings.
Eigen::MatrixXd featurize(const NetworkParams* generator, const Eigen::MatrixXd& embeddings);

struct TestSelection {
  int best_epoch = 0;         // index into the history
  double dev = 0.0;           // dev accuracy at best_epoch
  double real_test = 0.0;     // test accuracy at best_epoch
  double max_test = 0.0;      // best test accuracy over all epochs
};

/// real_test is read at the earliest epoch with maximal dev accuracy.
TestSelection real_and_max_test(std::span<const EpochMetrics> history);

/// One JSON record per line: {"epoch","train_loss","dev_acc","test_acc"}.
void write_history(std::ostream& out, std::span<const EpochMetrics> history);

}  // namespace m2h
