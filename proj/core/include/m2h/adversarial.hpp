#pragma once

// Generator/discriminator architectures, smoothed labels, and the two
// adversarial training loops (plain GAN and the N+1-way M2H-GAN).
//
// The generator maps an ASR embedding to a TRS-like embedding. It never sees
// a theme label: its only input is the embedding.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "m2h/nn.hpp"
#include "m2h/rng.hpp"

namespace m2h {

enum class LabelSource { kReal, kFake };

struct SmoothedLabel {
  double value = 0.0;
  LabelSource source = LabelSource::kReal;
};

/// The discriminator's scalar output is p(fake), so real targets sit low.
struct SmoothingBounds {
  double real_low = 0.0;
  double real_high = 0.7;
  double fake_low = 0.7;
  double fake_high = 1.0;

  void validate() const;
};

SmoothedLabel sample_smoothed_label(Rng& rng, LabelSource source, const SmoothingBounds& bounds = {});

struct GeneratorSpec {
  int dim = 250;
  int hidden = 512;
};

enum class DiscriminatorVariant { kGan, kM2h };

struct DiscriminatorSpec {
  DiscriminatorVariant variant = DiscriminatorVariant::kGan;
  int dim = 250;
  int hidden = 128;
  int classes = 8;  // M2H only; output is classes + 1

  int outputs() const { return variant == DiscriminatorVariant::kGan ? 1 : classes + 1; }
  int fake_class() const { return classes; }
};

/// dim -> hidden -> dim, layer norm and tanh on both layers.
NetworkParams make_generator(const GeneratorSpec& spec, Rng& rng);
/// dim -> hidden (tanh) -> 1 (sigmoid) or classes+1 (softmax).
NetworkParams make_discriminator(const DiscriminatorSpec& spec, Rng& rng);

struct AdversarialConfig {
  int epochs = 25;
  double learning_rate = 0.02;
  int batch_size = 32;
  std::uint64_t seed = 0;
  GeneratorSpec generator;
  int discriminator_hidden = 128;
  SmoothingBounds smoothing;

  void validate() const;
};

struct EpochLoss {
  int epoch = 0;
  double d_loss = 0.0;
  double g_loss = 0.0;

  friend bool operator==(const EpochLoss&, const EpochLoss&) = default;
};

struct AdversarialResult {
  NetworkParams generator;
  NetworkParams discriminator;
  std::vector<EpochLoss> history;
};

/// x~ = G(z). Columns are samples.
Eigen::MatrixXd generate(const NetworkParams& generator, const Eigen::MatrixXd& z);
Eigen::VectorXd generate(const NetworkParams& generator, const Eigen::VectorXd& z);

/// Baseline GAN. `z_asr` and `z_trs` hold one embedding per column.
AdversarialResult train_gan(const Eigen::MatrixXd& z_asr, const Eigen::MatrixXd& z_trs,
                            const AdversarialConfig& config);
/// Same, starting from a caller-supplied generator.
AdversarialResult train_gan(const Eigen::MatrixXd& z_asr, const Eigen::MatrixXd& z_trs,
                            const AdversarialConfig& config, NetworkParams initial_generator);

/// M2H-GAN. Real TRS vectors target their theme, generated vectors the FAKE
/// class; G is pushed toward the theme of its ASR source.
AdversarialResult train_m2h_gan(const Eigen::MatrixXd& z_asr, const Eigen::MatrixXd& z_trs,
                                std::span<const int> labels_trs, std::span<const int> labels_asr,
                                const AdversarialConfig& config, int num_themes = 8);

/// Gradient of the mean M2H generator loss for one batch, against arbitrary
/// target distributions over the classes+1 outputs (one column per sample).
Gradients m2h_generator_gradients(const NetworkParams& generator, const NetworkParams& discriminator,
                                  const Eigen::MatrixXd& z, const Eigen::MatrixXd& targets);

/// Fraction of samples the GAN discriminator classifies correctly at
/// threshold 0.5 (p(fake) > 0.5 means fake).
double discriminator_accuracy(const NetworkParams& discriminator, const Eigen::MatrixXd& real,
                              const Eigen::MatrixXd& fake);

/// One JSON record per line: {"epoch":..,"d_loss":..,"g_loss":..}.
void write_loss_log(std::ostream& out, std::span<const EpochLoss> history);
std::vector<EpochLoss> read_loss_log(std::istream& in);

}  // namespace m2h
