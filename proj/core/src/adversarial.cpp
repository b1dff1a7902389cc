#include "m2h/adversarial.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>

#include <json.hpp>

#include "m2h/error.hpp"

namespace m2h {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;

void SmoothingBounds::validate() const {
  if (!(real_low <= real_high && fake_low <= fake_high)) throw ConfigError("smoothing interval bounds are inverted");
  for (double v : {real_low, real_high, fake_low, fake_high}) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("smoothing bounds must lie in [0, 1]");
  }
}

SmoothedLabel sample_smoothed_label(Rng& rng, LabelSource source, const SmoothingBounds& bounds) {
  const double lo = source == LabelSource::kReal ? bounds.real_low : bounds.fake_low;
  const double hi = source == LabelSource::kReal ? bounds.real_high : bounds.fake_high;
  // lo + u * (hi - lo) with u in [0, 1) can round up past hi; clamp keeps the draw inside.
  const double value = std::min(lo + uniform01(rng) * (hi - lo), hi);
  return SmoothedLabel{value, source};
}

NetworkParams make_generator(const GeneratorSpec& spec, Rng& rng) {
  const std::array<LayerSpec, 2> layers{LayerSpec{spec.hidden, Activation::kTanh, true},
                                        LayerSpec{spec.dim, Activation::kTanh, true}};
  return make_network(spec.dim, layers, rng);
}

NetworkParams make_discriminator(const DiscriminatorSpec& spec, Rng& rng) {
  const Activation head = spec.variant == DiscriminatorVariant::kGan ? Activation::kSigmoid : Activation::kSoftmax;
  const std::array<LayerSpec, 2> layers{LayerSpec{spec.hidden, Activation::kTanh, false},
                                        LayerSpec{spec.outputs(), head, false}};
  return make_network(spec.dim, layers, rng);
}

void AdversarialConfig::validate() const {
  if (epochs < 1) throw ConfigError("adversarial training needs at least one epoch");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be positive and finite");
  }
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  if (generator.dim < 1 || generator.hidden < 1 || discriminator_hidden < 1) {
    throw ConfigError("network widths must be positive");
  }
  smoothing.validate();
}

MatrixXd generate(const NetworkParams& generator, const MatrixXd& z) { return predict(generator, z); }

Eigen::VectorXd generate(const NetworkParams& generator, const Eigen::VectorXd& z) {
  if (z.size() != generator.input_dim()) throw DimensionError("generator input has the wrong length");
  return predict(generator, z).col(0);
}

namespace {

enum : std::uint64_t { kGeneratorInit = 1, kDiscriminatorInit = 2, kShuffle = 3, kLabels = 4 };

void accumulate(Gradients& into, const Gradients& other) {
  for (std::size_t i = 0; i < into.layers.size(); ++i) {
    auto& a = into.layers[i];
    const auto& b = other.layers[i];
    a.weights += b.weights;
    a.bias += b.bias;
    if (a.gain.size() > 0) {
      a.gain += b.gain;
      a.shift += b.shift;
    }
  }
}

MatrixXd gather(const MatrixXd& source, std::span<const Index> columns) {
  MatrixXd out(source.rows(), static_cast<Index>(columns.size()));
  for (std::size_t i = 0; i < columns.size(); ++i) out.col(static_cast<Index>(i)) = source.col(columns[i]);
  return out;
}

std::vector<Index> permutation(Index n, Rng& rng) {
  std::vector<Index> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), Index{0});
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

void check_inputs(const MatrixXd& z_asr, const MatrixXd& z_trs, const AdversarialConfig& config) {
  config.validate();
  if (z_asr.cols() == 0 || z_trs.cols() == 0) throw ConfigError("adversarial training needs both sample sets");
  if (z_asr.rows() != config.generator.dim || z_trs.rows() != config.generator.dim) {
    throw DimensionError("embeddings must have length " + std::to_string(config.generator.dim));
  }
  if (!z_asr.allFinite() || !z_trs.allFinite()) throw NumericError("non-finite embeddings");
}

void check_loss(double value, int epoch, const char* who) {
  if (!std::isfinite(value)) {
    throw NumericError(std::string("non-finite ") + who + " loss in epoch " + std::to_string(epoch));
  }
}

// Shared epoch/batch skeleton. `step` receives the ASR and TRS column
// indices of one batch and returns (d_loss, g_loss).
template <class Step>
std::vector<EpochLoss> run_epochs(Index n_asr, Index n_trs, const AdversarialConfig& config, Step&& step) {
  Rng shuffle_rng = make_rng(config.seed, {kShuffle});
  const Index batch = config.batch_size;
  const Index batches = (n_asr + batch - 1) / batch;
  std::vector<EpochLoss> history;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto perm_asr = permutation(n_asr, shuffle_rng);
    const auto perm_trs = permutation(n_trs, shuffle_rng);
    double d_sum = 0.0, g_sum = 0.0;
    for (Index b = 0; b < batches; ++b) {
      const Index begin = b * batch;
      const Index end = std::min(n_asr, begin + batch);
      std::vector<Index> asr_idx(perm_asr.begin() + begin, perm_asr.begin() + end);
      std::vector<Index> trs_idx;
      for (Index k = begin; k < end; ++k) trs_idx.push_back(perm_trs[static_cast<std::size_t>(k % n_trs)]);
      const auto [d_loss, g_loss] = step(asr_idx, trs_idx);
      check_loss(d_loss, epoch, "discriminator");
      check_loss(g_loss, epoch, "generator");
      d_sum += d_loss;
      g_sum += g_loss;
    }
    history.push_back({epoch, d_sum / static_cast<double>(batches), g_sum / static_cast<double>(batches)});
  }
  return history;
}

RowVectorXd smoothed_row(Rng& rng, LabelSource source, Index n, const SmoothingBounds& bounds) {
  RowVectorXd out(n);
  for (Index i = 0; i < n; ++i) out(i) = sample_smoothed_label(rng, source, bounds).value;
  return out;
}

}  // namespace

AdversarialResult train_gan(const MatrixXd& z_asr, const MatrixXd& z_trs, const AdversarialConfig& config) {
  config.validate();
  Rng rng = make_rng(config.seed, {kGeneratorInit});
  return train_gan(z_asr, z_trs, config, make_generator(config.generator, rng));
}

AdversarialResult train_gan(const MatrixXd& z_asr, const MatrixXd& z_trs, const AdversarialConfig& config,
                            NetworkParams initial_generator) {
  check_inputs(z_asr, z_trs, config);
  if (initial_generator.input_dim() != config.generator.dim ||
      initial_generator.output_dim() != config.generator.dim) {
    throw DimensionError("generator must map dim -> dim");
  }

  AdversarialResult result;
  result.generator = std::move(initial_generator);
  Rng init_rng = make_rng(config.seed, {kDiscriminatorInit});
  result.discriminator = make_discriminator(
      {DiscriminatorVariant::kGan, config.generator.dim, config.discriminator_hidden, 1}, init_rng);

  auto& G = result.generator;
  auto& D = result.discriminator;
  Optimizer opt_g(OptimizerConfig::sgd(config.learning_rate), G);
  Optimizer opt_d(OptimizerConfig::sgd(config.learning_rate), D);
  Rng label_rng = make_rng(config.seed, {kLabels});

  result.history = run_epochs(z_asr.cols(), z_trs.cols(), config, [&](const auto& asr_idx, const auto& trs_idx) {
    const MatrixXd z = gather(z_asr, asr_idx);
    const MatrixXd x = gather(z_trs, trs_idx);
    const Index n = z.cols();

    // Discriminator: real -> low p(fake), generated -> high p(fake).
    const MatrixXd x_fake = predict(G, z);
    const auto real_pass = forward(D, x);
    const auto fake_pass = forward(D, x_fake);
    const auto real_loss = bce_loss(real_pass.output, smoothed_row(label_rng, LabelSource::kReal, n, config.smoothing));
    const auto fake_loss = bce_loss(fake_pass.output, smoothed_row(label_rng, LabelSource::kFake, n, config.smoothing));
    Gradients d_grad = backward(D, real_pass.cache, real_loss.gradient);
    accumulate(d_grad, backward(D, fake_pass.cache, fake_loss.gradient));
    opt_d.step(D, d_grad);

    // Generator: make D call its output real.
    const auto g_pass = forward(G, z);
    const auto d_pass = forward(D, g_pass.output);
    const auto fool = bce_loss(d_pass.output, smoothed_row(label_rng, LabelSource::kReal, n, config.smoothing));
    const Gradients through_d = backward(D, d_pass.cache, fool.gradient);
    opt_g.step(G, backward(G, g_pass.cache, through_d.input));

    return std::pair{real_loss.loss + fake_loss.loss, fool.loss};
  });
  return result;
}

Gradients m2h_generator_gradients(const NetworkParams& generator, const NetworkParams& discriminator,
                                  const MatrixXd& z, const MatrixXd& targets) {
  const auto g_pass = forward(generator, z);
  const auto d_pass = forward(discriminator, g_pass.output);
  const auto loss = soft_cce_loss(d_pass.output, targets);
  const Gradients through_d = backward(discriminator, d_pass.cache, loss.gradient, OutputGradient::kLogits);
  return backward(generator, g_pass.cache, through_d.input);
}

AdversarialResult train_m2h_gan(const MatrixXd& z_asr, const MatrixXd& z_trs, std::span<const int> labels_trs,
                                std::span<const int> labels_asr, const AdversarialConfig& config, int num_themes) {
  check_inputs(z_asr, z_trs, config);
  if (num_themes < 1) throw ConfigError("M2H-GAN needs at least one theme");
  if (labels_trs.size() != static_cast<std::size_t>(z_trs.cols()) ||
      labels_asr.size() != static_cast<std::size_t>(z_asr.cols())) {
    throw ConfigError("theme labels are not aligned with the embeddings");
  }
  auto in_range = [num_themes](int t) { return t >= 0 && t < num_themes; };
  if (!std::all_of(labels_trs.begin(), labels_trs.end(), in_range) ||
      !std::all_of(labels_asr.begin(), labels_asr.end(), in_range)) {
    throw ConfigError("theme label out of range");
  }

  AdversarialResult result;
  Rng g_rng = make_rng(config.seed, {kGeneratorInit});
  result.generator = make_generator(config.generator, g_rng);
  const DiscriminatorSpec d_spec{DiscriminatorVariant::kM2h, config.generator.dim, config.discriminator_hidden,
                                 num_themes};
  Rng d_rng = make_rng(config.seed, {kDiscriminatorInit});
  result.discriminator = make_discriminator(d_spec, d_rng);

  auto& G = result.generator;
  auto& D = result.discriminator;
  Optimizer opt_g(OptimizerConfig::sgd(config.learning_rate), G);
  Optimizer opt_d(OptimizerConfig::sgd(config.learning_rate), D);
  const int fake = d_spec.fake_class();

  result.history = run_epochs(z_asr.cols(), z_trs.cols(), config, [&](const auto& asr_idx, const auto& trs_idx) {
    const MatrixXd z = gather(z_asr, asr_idx);
    const MatrixXd x = gather(z_trs, trs_idx);
    std::vector<int> real_targets, source_themes;
    for (Index i : trs_idx) real_targets.push_back(labels_trs[static_cast<std::size_t>(i)]);
    for (Index i : asr_idx) source_themes.push_back(labels_asr[static_cast<std::size_t>(i)]);
    const std::vector<int> fake_targets(asr_idx.size(), fake);

    // Discriminator: real TRS -> its theme, generated -> FAKE.
    const MatrixXd x_fake = predict(G, z);
    const auto real_pass = forward(D, x);
    const auto fake_pass = forward(D, x_fake);
    const auto real_loss = cce_loss(real_pass.output, real_targets);
    const auto fake_loss = cce_loss(fake_pass.output, fake_targets);
    Gradients d_grad = backward(D, real_pass.cache, real_loss.gradient, OutputGradient::kLogits);
    accumulate(d_grad, backward(D, fake_pass.cache, fake_loss.gradient, OutputGradient::kLogits));
    opt_d.step(D, d_grad);

    // Generator: have D read G(z) as the theme of the ASR source.
    const auto g_pass = forward(G, z);
    const auto d_pass = forward(D, g_pass.output);
    const auto fool = cce_loss(d_pass.output, source_themes);
    const Gradients through_d = backward(D, d_pass.cache, fool.gradient, OutputGradient::kLogits);
    opt_g.step(G, backward(G, g_pass.cache, through_d.input));

    return std::pair{real_loss.loss + fake_loss.loss, fool.loss};
  });
  return result;
}

double discriminator_accuracy(const NetworkParams& discriminator, const MatrixXd& real, const MatrixXd& fake) {
  if (discriminator.output_dim() != 1) throw DimensionError("expected a scalar-output discriminator");
  const Index total = real.cols() + fake.cols();
  if (total == 0) throw ConfigError("no samples to score");
  Index correct = 0;
  if (real.cols() > 0) correct += (predict(discriminator, real).array() <= 0.5).count();
  if (fake.cols() > 0) correct += (predict(discriminator, fake).array() > 0.5).count();
  return static_cast<double>(correct) / static_cast<double>(total);
}

void write_loss_log(std::ostream& out, std::span<const EpochLoss> history) {
  for (const auto& e : history) {
    out << nlohmann::json{{"epoch", e.epoch}, {"d_loss", e.d_loss}, {"g_loss", e.g_loss}}.dump() << '\n';
  }
}

std::vector<EpochLoss> read_loss_log(std::istream& in) {
  std::vector<EpochLoss> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("epoch").get<int>(), j.at("d_loss").get<double>(), j.at("g_loss").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed loss record: ") + e.what(), line_no);
    }
  }
  return out;
}

}  // namespace m2h
