#pragma once

// Paired clean/noisy document corpora: synthetic generation, a simulated
// ASR noise channel, word error rate, and the line-delimited corpus file.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "m2h/rng.hpp"

namespace m2h {

enum class Channel { kTrs, kAsr };
enum class Split { kTrain = 0, kDev = 1, kTest = 2 };

inline constexpr std::array<Split, 3> kAllSplits{Split::kTrain, Split::kDev, Split::kTest};

std::string_view to_string(Channel channel);
std::string_view to_string(Split split);
Channel parse_channel(std::string_view text);
Split parse_split(std::string_view text);

struct Document {
  std::uint32_t id = 0;
  int theme = 0;
  Channel channel = Channel::kTrs;
  std::vector<int> tokens;

  friend bool operator==(const Document&, const Document&) = default;
};

struct DocumentPair {
  Document trs;
  Document asr;
  Split split = Split::kTrain;

  friend bool operator==(const DocumentPair&, const DocumentPair&) = default;
};

struct ParallelCorpus {
  std::vector<std::string> vocabulary;
  std::vector<std::string> theme_names;
  std::vector<DocumentPair> pairs;

  int vocab_size() const { return static_cast<int>(vocabulary.size()); }
  int num_themes() const { return static_cast<int>(theme_names.size()); }

  /// Documents of one channel in one split, in pair order.
  std::vector<Document> documents(Channel channel, Split split) const;
  std::size_t count(Split split) const;

  /// Throws ConfigError if any structural invariant is broken.
  void validate() const;

  friend bool operator==(const ParallelCorpus&, const ParallelCorpus&) = default;
};

/// Per-token substitution and deletion, per-gap insertion. Expected WER is
/// the sum of the three rates to first order.
struct NoiseModel {
  double substitution_rate = 0.0;
  double deletion_rate = 0.0;
  double insertion_rate = 0.0;
  // Probability that a substitution picks from the word's confusable set
  // instead of the whole vocabulary. 0 disables confusion sets.
  double confusion_bias = 0.0;

  double expected_wer() const { return substitution_rate + deletion_rate + insertion_rate; }
  void validate() const;
};

/// Randomly pre-assigned confusable neighbours per vocabulary word.
struct ConfusionSets {
  std::vector<std::vector<int>> neighbours;

  static ConfusionSets random(int vocab_size, int per_word, std::uint64_t seed);
};

struct NoisyDocument {
  Document document;
  // Set when every token was deleted and one was restored.
  bool truncated = false;
};

NoisyDocument apply_asr_noise(const Document& doc, const NoiseModel& model, int vocab_size, Rng& rng,
                              const ConfusionSets* confusion = nullptr);

/// Levenshtein distance over token sequences with unit costs.
std::size_t word_edit_distance(std::span<const int> reference, std::span<const int> hypothesis);

/// (S + D + I) / len(reference). Throws ConfigError on an empty reference.
double measure_wer(const Document& reference, const Document& hypothesis);

/// Token-weighted WER of the ASR side against the TRS side over one split.
double corpus_wer(const ParallelCorpus& corpus, Split split);

struct ThemeCounts {
  std::string name;
  std::array<int, 3> per_split{};  // train, dev, test
};

struct CorpusConfig {
  std::vector<ThemeCounts> themes;
  int vocab_size = 1500;
  int min_doc_length = 60;
  int max_doc_length = 140;
  // Theme word distributions are Dirichlet(1 / theme_sharpness) over the vocabulary.
  double theme_sharpness = 20.0;
  double background_concentration = 1.0;
  double background_mix = 0.6;
  // Weight of a randomly chosen second theme inside each document.
  double subtopic_mix = 0.35;
  std::array<NoiseModel, 3> noise{};  // per split
  int confusable_per_word = 0;

  /// 8 themes with the 740/175/327 split and ~50% WER on every split.
  static CorpusConfig decoda_shaped();

  void validate() const;
};

ParallelCorpus generate_synthetic_corpus(const CorpusConfig& config, std::uint64_t seed);

void save_corpus(const ParallelCorpus& corpus, std::ostream& out);
void save_corpus(const ParallelCorpus& corpus, const std::filesystem::path& path);
ParallelCorpus load_corpus(std::istream& in);
ParallelCorpus load_corpus(const std::filesystem::path& path);

}  // namespace m2h
