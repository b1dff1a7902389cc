#pragma once

// Collapsed Gibbs LDA, fold-in inference against frozen topic-word counts,
// and the multi-run concatenated document embedding.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "m2h/corpus.hpp"
#include "m2h/rng.hpp"

namespace m2h {

struct LdaConfig {
  int topics = 25;
  // Defaults to 50 / topics when unset.
  std::optional<double> alpha;
  double beta = 0.01;
  int iterations = 200;

  double alpha_value() const { return alpha ? *alpha : 50.0 / topics; }
  void validate() const;
};

struct InferenceConfig {
  int iterations = 50;
  int burn_in = 20;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Trained topic-word counts of one LDA run. Immutable once built.
class LdaModel {
 public:
  LdaModel() = default;
  /// `counts` is topics x vocab_size, row-major.
  LdaModel(int topics, double alpha, double beta, int vocab_size, std::vector<std::int32_t> counts);

  int topics() const { return topics_; }
  int vocab_size() const { return vocab_size_; }
  double alpha() const { return alpha_; }
  double beta() const { return beta_; }

  std::int32_t topic_word(int topic, int word) const {
    return topic_word_[static_cast<std::size_t>(topic) * static_cast<std::size_t>(vocab_size_) +
                       static_cast<std::size_t>(word)];
  }
  std::int64_t topic_total(int topic) const { return topic_totals_[static_cast<std::size_t>(topic)]; }
  std::span<const std::int32_t> topic_word_counts() const { return topic_word_; }
  std::span<const std::int64_t> topic_totals() const { return topic_totals_; }

  /// Smoothed p(word | topic).
  std::vector<double> topic_distribution(int topic) const;

  friend bool operator==(const LdaModel&, const LdaModel&) = default;

 private:
  int topics_ = 0;
  int vocab_size_ = 0;
  double alpha_ = 0.0;
  double beta_ = 0.0;
  std::vector<std::int32_t> topic_word_;
  std::vector<std::int64_t> topic_totals_;
};

/// Collapsed Gibbs sampler state. Exposed so that callers (and tests) can
/// step sweep by sweep and inspect the counts.
class GibbsSampler {
 public:
  GibbsSampler(std::span<const Document> docs, int vocab_size, int topics, double alpha, double beta,
               std::uint64_t seed);

  void sweep();
  int sweeps_done() const { return sweeps_; }

  LdaModel model() const;

  std::int32_t doc_topic(std::size_t doc, int topic) const {
    return doc_topic_[doc * static_cast<std::size_t>(topics_) + static_cast<std::size_t>(topic)];
  }
  std::size_t num_docs() const { return doc_offsets_.size() - 1; }
  std::size_t doc_length(std::size_t doc) const { return doc_offsets_[doc + 1] - doc_offsets_[doc]; }
  std::size_t total_tokens() const { return words_.size(); }

  /// True when document-topic, topic-word and topic-total counts all agree
  /// with the current per-token assignments.
  bool counts_consistent() const;

 private:
  int topics_;
  int vocab_size_;
  double alpha_;
  double beta_;
  Rng rng_;
  int sweeps_ = 0;

  std::vector<std::size_t> doc_offsets_;
  std::vector<int> words_;
  std::vector<int> assignment_;
  std::vector<std::int32_t> doc_topic_;   // docs x topics
  std::vector<std::int32_t> word_topic_;  // vocab x topics
  std::vector<std::int64_t> topic_totals_;
  std::vector<double> weights_;
};

LdaModel train_lda(std::span<const Document> docs, int vocab_size, const LdaConfig& config, std::uint64_t seed);

/// Precomputed p(word | topic) table for fold-in, word-major.
class FoldIn {
 public:
  explicit FoldIn(const LdaModel& model);

  int topics() const { return topics_; }
  /// Mean post-burn-in topic proportions of `tokens`.
  std::vector<double> infer(std::span<const int> tokens, const InferenceConfig& config, Rng& rng) const;

 private:
  int topics_;
  int vocab_size_;
  double alpha_;
  std::vector<double> word_topic_;
};

/// Fold-in with the model counts frozen. Output has length T and sums to 1.
std::vector<double> infer_topics(const LdaModel& model, const Document& doc, const InferenceConfig& config);

/// Ten (by default) LDA runs over one channel's training documents.
class Embedder {
 public:
  Embedder(Channel channel, std::vector<LdaModel> runs);

  Channel channel() const { return channel_; }
  const std::vector<LdaModel>& runs() const { return runs_; }
  int dimension() const;

  Eigen::VectorXd embed(const Document& doc, const InferenceConfig& config) const;
  /// One column per document.
  Eigen::MatrixXd embed_all(std::span<const Document> docs, const InferenceConfig& config) const;

 private:
  Channel channel_;
  std::vector<LdaModel> runs_;
  std::vector<FoldIn> fold_ins_;
};

inline constexpr int kDefaultRuns = 10;

Embedder train_embedder(std::span<const Document> docs, int vocab_size, Channel channel, const LdaConfig& config,
                        int runs, std::uint64_t seed);

/// Free-function form of Embedder::embed.
Eigen::VectorXd embed(const Embedder& embedder, const Document& doc, const InferenceConfig& config);

// Model file: text, "m2h-lda 1" header, then "T alpha beta V", then T rows of V counts.
void save_lda(const LdaModel& model, std::ostream& out);
LdaModel load_lda(std::istream& in);

// Embedder manifest: JSON {"format":"m2h-embedder","version":1,"channel":..,"runs":[paths]}.
// Run files are written next to the manifest.
void save_embedder(const Embedder& embedder, const std::filesystem::path& manifest);
Embedder load_embedder(const std::filesystem::path& manifest);

/// One row of an embedding file.
struct EmbeddedDocument {
  std::uint32_t id = 0;
  int theme = 0;
  Split split = Split::kTrain;
  Channel channel = Channel::kTrs;
  Eigen::VectorXd values;
};

// Embedding file: JSON lines {"id","theme","split","channel","values":[...]}.
void write_embeddings(std::ostream& out, std::span<const EmbeddedDocument> rows);
std::vector<EmbeddedDocument> read_embeddings(std::istream& in);

}  // namespace m2h
