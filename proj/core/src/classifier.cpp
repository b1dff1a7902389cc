#include "m2h/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "m2h/adversarial.hpp"
#include "m2h/error.hpp"

namespace m2h {

using Eigen::Index;
using Eigen::MatrixXd;

void ClassifierSpec::validate() const {
  if (input_dim < 1 || hidden < 1 || hidden_layers < 0 || classes < 2) {
    throw ConfigError("classifier widths must be positive with at least two classes");
  }
  if (epochs < 0) throw ConfigError("classifier epochs must be non-negative");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be positive and finite");
  }
  if (batch_size < 1) throw ConfigError("batch size must be positive");
}

NetworkParams make_classifier(const ClassifierSpec& spec, Rng& rng) {
  spec.validate();
  std::vector<LayerSpec> layers(static_cast<std::size_t>(spec.hidden_layers),
                                LayerSpec{spec.hidden, Activation::kTanh, false});
  layers.push_back({spec.classes, Activation::kSoftmax, false});
  return make_network(spec.input_dim, layers, rng);
}

std::vector<int> predict_classes(const NetworkParams& net, const MatrixXd& features) {
  const MatrixXd probs = predict(net, features);
  std::vector<int> out(static_cast<std::size_t>(probs.cols()));
  for (Index c = 0; c < probs.cols(); ++c) {
    Index best = 0;
    for (Index r = 1; r < probs.rows(); ++r) {
      if (probs(r, c) > probs(best, c)) best = r;
    }
    out[static_cast<std::size_t>(c)] = static_cast<int>(best);
  }
  return out;
}

double accuracy(const NetworkParams& net, const LabeledSet& set) {
  if (set.size() == 0) return 0.0;
  const auto predicted = predict_classes(net, set.features);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == set.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

namespace {

void check_set(const LabeledSet& set, const ClassifierSpec& spec, const char* name) {
  if (set.features.cols() != static_cast<Index>(set.labels.size())) {
    throw DimensionError(std::string(name) + " set has mismatched features and labels");
  }
  if (set.features.cols() > 0 && set.features.rows() != spec.input_dim) {
    throw DimensionError(std::string(name) + " features have the wrong width");
  }
  for (int label : set.labels) {
    if (label < 0 || label >= spec.classes) throw ConfigError(std::string(name) + " label out of range");
  }
}

}  // namespace

ClassifierResult train_classifier(const LabeledSet& train, const LabeledSet& dev, const LabeledSet& test,
                                  const ClassifierSpec& spec, std::uint64_t seed) {
  spec.validate();
  check_set(train, spec, "train");
  check_set(dev, spec, "dev");
  check_set(test, spec, "test");
  if (train.size() == 0) throw ConfigError("classifier needs training samples");

  Rng init_rng = make_rng(seed, {1});
  Rng shuffle_rng = make_rng(seed, {2});
  ClassifierResult result;
  result.params = make_classifier(spec, init_rng);
  auto& net = result.params;
  Optimizer opt(OptimizerConfig::adam(spec.learning_rate), net);

  if (spec.epochs == 0) {
    result.history.push_back({0, 0.0, accuracy(net, dev), accuracy(net, test)});
    return result;
  }

  std::vector<Index> order(static_cast<std::size_t>(train.size()));
  std::iota(order.begin(), order.end(), Index{0});
  const Index batch = spec.batch_size;

  for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    Index batches = 0;
    for (Index begin = 0; begin < train.size(); begin += batch) {
      const Index end = std::min(train.size(), begin + batch);
      MatrixXd x(train.features.rows(), end - begin);
      std::vector<int> y;
      for (Index k = begin; k < end; ++k) {
        const Index i = order[static_cast<std::size_t>(k)];
        x.col(k - begin) = train.features.col(i);
        y.push_back(train.labels[static_cast<std::size_t>(i)]);
      }
      const auto pass = forward(net, x);
      const auto loss = cce_loss(pass.output, y);
      opt.step(net, backward(net, pass.cache, loss.gradient, OutputGradient::kLogits));
      loss_sum += loss.loss;
      ++batches;
    }
    const double mean_loss = loss_sum / static_cast<double>(batches);
    if (!std::isfinite(mean_loss)) throw NumericError("non-finite classifier loss in epoch " + std::to_string(epoch));
    result.history.push_back({epoch, mean_loss, accuracy(net, dev), accuracy(net, test)});
  }
  return result;
}

MatrixXd featurize(const NetworkParams* generator, const Embedder& embedder, std::span<const Document> docs,
                   const InferenceConfig& inference) {
  for (const auto& doc : docs) {
    if (doc.channel != embedder.channel()) throw ConfigError("document channel does not match the embedder");
  }
  return featurize(generator, embedder.embed_all(docs, inference));
}

MatrixXd featurize(const NetworkParams* generator, const MatrixXd& embeddings) {
  if (generator == nullptr) return embeddings;
  return generate(*generator, embeddings);
}

TestSelection real_and_max_test(std::span<const EpochMetrics> history) {
  if (history.empty()) throw ConfigError("empty training history");
  TestSelection out;
  out.max_test = history.front().test_accuracy;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (history[i].dev_accuracy > history[static_cast<std::size_t>(out.best_epoch)].dev_accuracy) {
      out.best_epoch = static_cast<int>(i);
    }
    out.max_test = std::max(out.max_test, history[i].test_accuracy);
  }
  const auto& best = history[static_cast<std::size_t>(out.best_epoch)];
  out.dev = best.dev_accuracy;
  out.real_test = best.test_accuracy;
  return out;
}

void write_history(std::ostream& out, std::span<const EpochMetrics> history) {
  for (const auto& e : history) {
    out << nlohmann::json{{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"dev_acc", e.dev_accuracy},
                          {"test_acc", e.test_accuracy}}
               .dump()
        << '\n';
  }
}

}  // namespace m2h
