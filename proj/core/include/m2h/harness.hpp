#pragma once

// End-to-end experiment: corpus -> per-channel embedders -> DNN-TRS,
// DNN-ASR, GAN and M2H-GAN classifiers, repeated over seeds.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "m2h/adversarial.hpp"
#include "m2h/classifier.hpp"
#include "m2h/corpus.hpp"
#include "m2h/lda.hpp"
#include "m2h/report.hpp"

namespace m2h {

struct ExperimentConfig {
  CorpusConfig corpus = CorpusConfig::decoda_shaped();
  std::uint64_t corpus_seed = 2019;
  // When set, the corpus is loaded instead of generated.
  std::optional<std::filesystem::path> corpus_path;

  LdaConfig lda;
  int lda_runs = kDefaultRuns;
  InferenceConfig inference;

  AdversarialConfig gan;
  ClassifierSpec classifier;

  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<System> systems{kAllSystems[0], kAllSystems[1], kAllSystems[2], kAllSystems[3]};
  // 0 = one worker per hardware thread.
  int threads = 0;

  void validate() const;
};

/// Reads the JSON config schema documented in the README. Every key is
/// optional; unknown keys are rejected.
ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string dump_config(const ExperimentConfig& config);

ParallelCorpus prepare_corpus(const ExperimentConfig& config);

using ProgressFn = std::function<void(std::string_view)>;

/// Embeddings of one channel, one matrix and label list per split.
struct ChannelFeatures {
  std::array<LabeledSet, 3> splits;
};

struct SeedEmbeddings {
  ChannelFeatures trs;
  ChannelFeatures asr;
};

/// Trains both embedders for `seed` and embeds every split of both channels.
SeedEmbeddings embed_corpus(const ExperimentConfig& config, const ParallelCorpus& corpus, std::uint64_t seed);

/// Runs one system on precomputed embeddings.
SeedMetrics run_system(const ExperimentConfig& config, const SeedEmbeddings& embeddings, System system,
                       std::uint64_t seed, int num_themes);

RunReport run_experiment(const ExperimentConfig& config, const ParallelCorpus& corpus,
                         const ProgressFn& progress = {});
RunReport run_experiment(const ExperimentConfig& config, const ProgressFn& progress = {});

}  // namespace m2h
