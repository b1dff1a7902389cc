// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails. Pass criterion numbers as arguments to
// run a subset, e.g. `m2h_acceptance 1 8`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "m2h/adversarial.hpp"
#include "m2h/classifier.hpp"
#include "m2h/corpus.hpp"
#include "m2h/harness.hpp"
#include "m2h/lda.hpp"
#include "m2h/nn.hpp"
#include "m2h/report.hpp"
#include "oracles.hpp"

using namespace m2h;
using Eigen::MatrixXd;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

// Shared between criteria 3, 6 and 7 so the default corpus is built once.
const ParallelCorpus& default_corpus() {
  static const ParallelCorpus corpus = prepare_corpus(ExperimentConfig{});
  return corpus;
}

// Random simplex blocks, like real embeddings.
MatrixXd embedding_batch(int dim, int block, int cols, Rng& rng) {
  std::gamma_distribution<double> g(1.0, 1.0);
  MatrixXd x(dim, cols);
  for (int c = 0; c < cols; ++c) {
    for (int b = 0; b < dim / block; ++b) {
      double sum = 0.0;
      for (int i = 0; i < block; ++i) sum += x(b * block + i, c) = g(rng);
      x.block(b * block, c, block, 1) /= sum;
    }
  }
  return x;
}

// Moves parameters off their initial values so biases, gains and shifts are
// all exercised.
void jitter(NetworkParams& net, Rng& rng) {
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  auto theta = flatten(net);
  for (double& v : theta) v += u(rng);
  unflatten(net, theta);
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto start = Clock::now();
  Rng rng(101);
  constexpr int kInstances = 20;
  constexpr int kBatch = 4;
  constexpr std::size_t kCoords = 150;
  double worst[5] = {0, 0, 0, 0, 0};
  std::size_t checked = 0;
  auto record = [&](int which, const testing::GradientCheck& c) {
    worst[which] = std::max(worst[which], c.max_relative_error);
    checked += c.checked;
  };

  for (int n = 0; n < kInstances; ++n) {
    // Classifier: mean CCE through the fused softmax gradient.
    {
      auto net = make_classifier(ClassifierSpec{}, rng);
      jitter(net, rng);
      const MatrixXd x = embedding_batch(250, 25, kBatch, rng);
      std::vector<int> y(kBatch);
      for (int& v : y) v = static_cast<int>(rng() % 8);
      const auto pass = forward(net, x);
      const auto grads = backward(net, pass.cache, cce_loss(pass.output, y).gradient, OutputGradient::kLogits);
      const auto coords = testing::sample_coordinates(net.parameter_count(), kCoords, rng);
      record(0, testing::check_parameters(
                    net, [&](const NetworkParams& p) { return cce_loss(predict(p, x), y).loss; }, flatten(grads),
                    coords));
      record(0, testing::check_input(x, [&](const MatrixXd& in) { return cce_loss(predict(net, in), y).loss; },
                                     grads.input));
    }
    // GAN discriminator: BCE against smoothed labels.
    {
      auto d = make_discriminator(DiscriminatorSpec{}, rng);
      jitter(d, rng);
      const MatrixXd x = embedding_batch(250, 25, kBatch, rng);
      Eigen::RowVectorXd t(kBatch);
      for (int i = 0; i < kBatch; ++i) {
        t(i) = sample_smoothed_label(rng, i % 2 ? LabelSource::kFake : LabelSource::kReal).value;
      }
      const auto pass = forward(d, x);
      const auto grads = backward(d, pass.cache, bce_loss(pass.output, t).gradient);
      const auto coords = testing::sample_coordinates(d.parameter_count(), kCoords, rng);
      record(1, testing::check_parameters(
                    d, [&](const NetworkParams& p) { return bce_loss(predict(p, x), t).loss; }, flatten(grads),
                    coords));
      record(1, testing::check_input(x, [&](const MatrixXd& in) { return bce_loss(predict(d, in), t).loss; },
                                     grads.input));
    }
    // M2H discriminator: 9-way CCE, FAKE included among the targets.
    {
      auto d = make_discriminator(DiscriminatorSpec{DiscriminatorVariant::kM2h}, rng);
      jitter(d, rng);
      const MatrixXd x = embedding_batch(250, 25, kBatch, rng);
      std::vector<int> y{8, static_cast<int>(rng() % 8), 8, static_cast<int>(rng() % 8)};
      const auto pass = forward(d, x);
      const auto grads = backward(d, pass.cache, cce_loss(pass.output, y).gradient, OutputGradient::kLogits);
      const auto coords = testing::sample_coordinates(d.parameter_count(), kCoords, rng);
      record(2, testing::check_parameters(
                    d, [&](const NetworkParams& p) { return cce_loss(predict(p, x), y).loss; }, flatten(grads),
                    coords));
      record(2, testing::check_input(x, [&](const MatrixXd& in) { return cce_loss(predict(d, in), y).loss; },
                                     grads.input));
    }
    // Generator under the M2H objective: soft CCE of D(G(z)).
    {
      auto g = make_generator(GeneratorSpec{}, rng);
      jitter(g, rng);
      auto d = make_discriminator(DiscriminatorSpec{DiscriminatorVariant::kM2h}, rng);
      jitter(d, rng);
      const MatrixXd z = embedding_batch(250, 25, kBatch, rng);
      MatrixXd targets = MatrixXd::Zero(9, kBatch);
      for (int i = 0; i < kBatch; ++i) targets(static_cast<Eigen::Index>(rng() % 8), i) = 1.0;
      const auto grads = m2h_generator_gradients(g, d, z, targets);
      const auto coords = testing::sample_coordinates(g.parameter_count(), kCoords, rng);
      record(3, testing::check_parameters(
                    g, [&](const NetworkParams& p) { return soft_cce_loss(predict(d, generate(p, z)), targets).loss; },
                    flatten(grads), coords));
    }
    // Generator under the GAN fooling objective: BCE of D(G(z)) against
    // smoothed real targets, backpropagated through a fixed D.
    {
      auto g = make_generator(GeneratorSpec{}, rng);
      jitter(g, rng);
      auto d = make_discriminator(DiscriminatorSpec{}, rng);
      jitter(d, rng);
      const MatrixXd z = embedding_batch(250, 25, kBatch, rng);
      Eigen::RowVectorXd t(kBatch);
      for (int i = 0; i < kBatch; ++i) t(i) = sample_smoothed_label(rng, LabelSource::kReal).value;
      const auto g_pass = forward(g, z);
      const auto d_pass = forward(d, g_pass.output);
      const auto d_grads = backward(d, d_pass.cache, bce_loss(d_pass.output, t).gradient);
      const auto grads = backward(g, g_pass.cache, d_grads.input);
      const auto coords = testing::sample_coordinates(g.parameter_count(), kCoords, rng);
      record(4, testing::check_parameters(
                    g, [&](const NetworkParams& p) { return bce_loss(predict(d, generate(p, z)), t).loss; },
                    flatten(grads), coords));
    }
  }
  const double secs = seconds_since(start);
  const double max_err = *std::max_element(std::begin(worst), std::end(worst));
  return {max_err < 1e-4 && secs < 60.0,
          fmt("max rel err classifier %.2e, GAN D %.2e, M2H D %.2e, G (M2H) %.2e, G (GAN) %.2e; %zu coords, "
              "%d instances each, %.1f s",
              worst[0], worst[1], worst[2], worst[3], worst[4], checked, kInstances, secs)};
}

Outcome lda_oracle() {
  const auto start = Clock::now();
  Rng rng(202);
  const auto data = testing::make_disjoint_topic_corpus(2, 100, 200, 80, rng);
  LdaConfig config;
  config.topics = 2;
  GibbsSampler sampler(data.docs, 100, config.topics, config.alpha_value(), config.beta, 17);
  bool conserved = sampler.counts_consistent();
  for (int s = 0; s < config.iterations; ++s) {
    sampler.sweep();
    conserved = conserved && sampler.counts_consistent();
  }
  const auto model = sampler.model();
  const auto tv = testing::best_permutation_tv({model.topic_distribution(0), model.topic_distribution(1)},
                                               data.topics);
  const double worst = std::max(tv[0], tv[1]);
  const double secs = seconds_since(start);
  return {conserved && worst < 0.1 && secs < 60.0,
          fmt("per-topic TV %.4f / %.4f, counts conserved over %d sweeps: %s, %.1f s", tv[0], tv[1],
              config.iterations, conserved ? "yes" : "no", secs)};
}

// Built by criterion 3 and reused by criterion 7.
std::optional<SeedEmbeddings> g_seed_one;

Outcome embedding_contract() {
  const auto start = Clock::now();
  const ExperimentConfig cfg;
  const auto& corpus = default_corpus();
  const auto a = embed_corpus(cfg, corpus, 1);
  const auto b = embed_corpus(cfg, corpus, 1);

  std::size_t vectors = 0;
  double worst_sum = 0.0;
  bool shape = true;
  bool identical = true;
  auto check = [&](const ChannelFeatures& x, const ChannelFeatures& y) {
    for (std::size_t s = 0; s < 3; ++s) {
      const auto& m = x.splits[s].features;
      shape = shape && m.rows() == 250;
      identical = identical && m.rows() == y.splits[s].features.rows() && m.cols() == y.splits[s].features.cols() &&
                  std::memcmp(m.data(), y.splits[s].features.data(), sizeof(double) * m.size()) == 0;
      for (Eigen::Index c = 0; c < m.cols(); ++c, ++vectors) {
        for (int blk = 0; blk < 10; ++blk) {
          worst_sum = std::max(worst_sum, std::abs(m.block(blk * 25, c, 25, 1).sum() - 1.0));
          shape = shape && (m.block(blk * 25, c, 25, 1).array() >= 0.0).all();
        }
      }
    }
  };
  check(a.trs, b.trs);
  check(a.asr, b.asr);
  const bool expected_count = vectors == 2 * corpus.pairs.size();
  g_seed_one = a;
  return {shape && expected_count && worst_sum <= 1e-9 && identical,
          fmt("%zu vectors of length 250, worst block-sum error %.1e, bit-identical rerun: %s, %.1f s", vectors,
              worst_sum, identical ? "yes" : "no", seconds_since(start))};
}

Outcome noise_calibration() {
  // The default corpus uses substitution 0.30, deletion 0.15, insertion 0.05.
  const auto& corpus = default_corpus();
  const NoiseModel& n = ExperimentConfig{}.corpus.noise[0];
  std::size_t tokens = 0;
  for (const auto& p : corpus.pairs) tokens += p.trs.tokens.size();
  std::size_t errors = 0;
  for (const auto& p : corpus.pairs) errors += word_edit_distance(p.trs.tokens, p.asr.tokens);
  const double wer = static_cast<double>(errors) / static_cast<double>(tokens);
  const double rate_sum = n.substitution_rate + n.deletion_rate + n.insertion_rate;
  return {std::abs(rate_sum - 0.5) < 1e-12 && tokens >= 10000 && wer >= 0.47 && wer <= 0.53,
          fmt("rates %.2f/%.2f/%.2f, %zu reference tokens, WER %.4f", n.substitution_rate, n.deletion_rate, n.insertion_rate,
              tokens, wer)};
}

Outcome label_smoothing() {
  Rng rng(505);
  constexpr int kDraws = 100000;
  double real_sum = 0, fake_sum = 0, real_lo = 1, real_hi = 0, fake_lo = 1, fake_hi = 0;
  for (int i = 0; i < kDraws; ++i) {
    const double r = sample_smoothed_label(rng, LabelSource::kReal).value;
    const double f = sample_smoothed_label(rng, LabelSource::kFake).value;
    real_sum += r;
    fake_sum += f;
    real_lo = std::min(real_lo, r), real_hi = std::max(real_hi, r);
    fake_lo = std::min(fake_lo, f), fake_hi = std::max(fake_hi, f);
  }
  const double real_mean = real_sum / kDraws, fake_mean = fake_sum / kDraws;
  const bool bounds = real_lo >= 0.0 && real_hi <= 0.7 && fake_lo >= 0.7 && fake_hi <= 1.0;
  return {bounds && std::abs(real_mean - 0.35) <= 0.01 && std::abs(fake_mean - 0.85) <= 0.01,
          fmt("real in [%.5f, %.5f] mean %.4f; fake in [%.5f, %.5f] mean %.4f; %d draws each", real_lo, real_hi,
              real_mean, fake_lo, fake_hi, fake_mean, kDraws)};
}

Outcome directional_reproduction() {
  const auto start = Clock::now();
  const ExperimentConfig cfg;
  const auto report = run_experiment(cfg, default_corpus(), [](std::string_view msg) {
    std::cerr << "  [6] " << msg << '\n';
  });
  const double secs = seconds_since(start);
  std::cout << render_report(report, ReportFormat::kText);
  const auto* trs = report.find(System::kDnnTrs);
  const auto* asr = report.find(System::kDnnAsr);
  const auto* m2h = report.find(System::kM2hGan);
  if (!trs || !asr || !m2h || !report.complete()) return {false, "experiment incomplete"};
  const double t = trs->summary.mean_real_test, a = asr->summary.mean_real_test, m = m2h->summary.mean_real_test;
  const bool order = t > m && m >= a;
  const bool stable = m2h->summary.std_real_test <= asr->summary.std_real_test;
  return {order && stable && secs < 900.0,
          fmt("mean real_test TRS %.4f, M2H %.4f, ASR %.4f (order %s); std M2H %.4f vs ASR %.4f (%s); %zu seeds "
              "in %.0f s",
              t, m, a, order ? "ok" : "violated", m2h->summary.std_real_test, asr->summary.std_real_test,
              stable ? "ok" : "violated", cfg.seeds.size(), secs)};
}

Outcome discriminator_semantics() {
  const ExperimentConfig cfg;
  if (!g_seed_one) g_seed_one = embed_corpus(cfg, default_corpus(), 1);
  const auto& trs = g_seed_one->trs.splits;
  const auto& asr = g_seed_one->asr.splits;
  AdversarialConfig gan = cfg.gan;
  gan.seed = 707;
  const int themes = default_corpus().num_themes();
  const auto result = train_m2h_gan(asr[0].features, trs[0].features, trs[0].labels, asr[0].labels, gan, themes);

  Rng fresh_rng(708);
  const auto fresh = make_generator(gan.generator, fresh_rng);
  const MatrixXd fake_out = predict(result.discriminator, generate(fresh, asr[2].features));
  const auto fake_top = [&] {
    Eigen::Index hits = 0;
    for (Eigen::Index c = 0; c < fake_out.cols(); ++c) {
      Eigen::Index top = 0;
      fake_out.col(c).maxCoeff(&top);
      hits += top == themes;
    }
    return static_cast<double>(hits) / static_cast<double>(fake_out.cols());
  }();

  const MatrixXd real_out = predict(result.discriminator, trs[2].features);
  Eigen::Index correct = 0;
  for (Eigen::Index c = 0; c < real_out.cols(); ++c) {
    Eigen::Index top = 0;
    real_out.col(c).head(themes).maxCoeff(&top);  // the theme D assigns, FAKE excluded
    correct += top == trs[2].labels[static_cast<std::size_t>(c)];
  }
  const double theme_acc = static_cast<double>(correct) / static_cast<double>(real_out.cols());
  return {fake_top > 0.8 && theme_acc > 0.225,
          fmt("FAKE top-1 on fresh-generator outputs %.4f (> 0.8), theme top-1 on real TRS test %.4f (> 0.225)",
              fake_top, theme_acc)};
}

Outcome metric_selection() {
  auto history = [](const std::vector<double>& dev, const std::vector<double>& test) {
    std::vector<EpochMetrics> h;
    for (std::size_t i = 0; i < dev.size(); ++i) h.push_back({static_cast<int>(i + 1), 0.0, dev[i], test[i]});
    return h;
  };
  const auto example = real_and_max_test(history({0.5, 0.9, 0.7}, {0.6, 0.8, 0.95}));
  const bool example_ok = example.real_test == 0.8 && example.max_test == 0.95;

  Rng rng(808);
  int violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> dev(1 + rng() % 40), test(dev.size());
    for (std::size_t i = 0; i < dev.size(); ++i) {
      dev[i] = std::round(uniform01(rng) * 20) / 20;
      test[i] = uniform01(rng);
    }
    const auto s = real_and_max_test(history(dev, test));
    violations += s.max_test < s.real_test;
  }
  return {example_ok && violations == 0,
          fmt("example -> (%.2f, %.2f); max_test < real_test in %d of 1000 random histories", example.real_test,
              example.max_test, violations)};
}

Outcome determinism() {
  const auto start = Clock::now();
  ExperimentConfig cfg;
  cfg.seeds = {3, 4};
  cfg.lda_runs = 2;
  cfg.lda.iterations = 40;
  cfg.inference = {20, 5, 0};
  cfg.gan.epochs = 3;
  cfg.classifier.epochs = 5;
  const auto first = render_report(run_experiment(cfg), ReportFormat::kJson);
  const auto second = render_report(run_experiment(cfg), ReportFormat::kJson);
  return {first == second, fmt("two runs of a reduced 2-seed config: %zu vs %zu bytes, %s, %.1f s", first.size(),
                               second.size(), first == second ? "byte-identical" : "DIFFERENT",
                               seconds_since(start))};
}

struct Criterion {
  int number;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "gradient suite", gradient_suite},
      {2, "LDA oracle", lda_oracle},
      {3, "embedding contract", embedding_contract},
      {4, "noise calibration", noise_calibration},
      {5, "label smoothing", label_smoothing},
      {6, "directional reproduction", directional_reproduction},
      {7, "M2H discriminator semantics", discriminator_semantics},
      {8, "metric selection", metric_selection},
      {9, "determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.number)) continue;
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("threw: ") + e.what()};
    }
    failures += !out.pass;
    std::cout << (out.pass ? "PASS" : "FAIL") << " criterion " << c.number << " (" << c.name << "): " << out.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
