#include "m2h/lda.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "m2h/error.hpp"

namespace m2h {

void LdaConfig::validate() const {
  if (topics < 1) throw ConfigError("LDA needs at least one topic");
  if (!(alpha_value() > 0)) throw ConfigError("LDA alpha must be positive");
  if (!(beta > 0)) throw ConfigError("LDA beta must be positive");
  if (iterations < 1) throw ConfigError("LDA needs at least one iteration");
}

void InferenceConfig::validate() const {
  if (burn_in < 0 || iterations <= burn_in) throw ConfigError("fold-in needs iterations > burn_in >= 0");
}

LdaModel::LdaModel(int topics, double alpha, double beta, int vocab_size, std::vector<std::int32_t> counts)
    : topics_(topics), vocab_size_(vocab_size), alpha_(alpha), beta_(beta), topic_word_(std::move(counts)) {
  if (topics < 1 || vocab_size < 1) throw ConfigError("LDA model needs T >= 1 and V >= 1");
  if (topic_word_.size() != static_cast<std::size_t>(topics) * static_cast<std::size_t>(vocab_size)) {
    throw DimensionError("topic-word count matrix has the wrong size");
  }
  topic_totals_.assign(static_cast<std::size_t>(topics), 0);
  for (int t = 0; t < topics; ++t) {
    for (int w = 0; w < vocab_size; ++w) {
      const auto c = topic_word(t, w);
      if (c < 0) throw ConfigError("negative topic-word count");
      topic_totals_[static_cast<std::size_t>(t)] += c;
    }
  }
}

std::vector<double> LdaModel::topic_distribution(int topic) const {
  std::vector<double> phi(static_cast<std::size_t>(vocab_size_));
  const double denom = static_cast<double>(topic_total(topic)) + vocab_size_ * beta_;
  for (int w = 0; w < vocab_size_; ++w) phi[static_cast<std::size_t>(w)] = (topic_word(topic, w) + beta_) / denom;
  return phi;
}

// ---------------------------------------------------------------------------

GibbsSampler::GibbsSampler(std::span<const Document> docs, int vocab_size, int topics, double alpha, double beta,
                           std::uint64_t seed)
    : topics_(topics), vocab_size_(vocab_size), alpha_(alpha), beta_(beta), rng_(seed) {
  if (docs.empty()) throw ConfigError("cannot train LDA on an empty document list");
  if (topics < 1) throw ConfigError("LDA needs at least one topic");
  if (vocab_size < 1) throw ConfigError("LDA needs a non-empty vocabulary");

  doc_offsets_.reserve(docs.size() + 1);
  doc_offsets_.push_back(0);
  for (const auto& doc : docs) {
    if (doc.tokens.empty()) throw ConfigError("document " + std::to_string(doc.id) + " is empty");
    for (int w : doc.tokens) {
      if (w < 0 || w >= vocab_size) throw ConfigError("token index outside vocabulary");
      words_.push_back(w);
    }
    doc_offsets_.push_back(words_.size());
  }

  const auto T = static_cast<std::size_t>(topics);
  doc_topic_.assign(docs.size() * T, 0);
  word_topic_.assign(static_cast<std::size_t>(vocab_size) * T, 0);
  topic_totals_.assign(T, 0);
  weights_.resize(T);
  assignment_.resize(words_.size());

  std::uniform_int_distribution<int> pick(0, topics - 1);
  for (std::size_t d = 0; d + 1 < doc_offsets_.size(); ++d) {
    for (std::size_t i = doc_offsets_[d]; i < doc_offsets_[d + 1]; ++i) {
      const int z = pick(rng_);
      assignment_[i] = z;
      ++doc_topic_[d * T + static_cast<std::size_t>(z)];
      ++word_topic_[static_cast<std::size_t>(words_[i]) * T + static_cast<std::size_t>(z)];
      ++topic_totals_[static_cast<std::size_t>(z)];
    }
  }
}

void GibbsSampler::sweep() {
  const auto T = static_cast<std::size_t>(topics_);
  const double vbeta = vocab_size_ * beta_;
  std::vector<double> inv_total(T);
  for (std::size_t t = 0; t < T; ++t) inv_total[t] = 1.0 / (static_cast<double>(topic_totals_[t]) + vbeta);

  for (std::size_t d = 0; d + 1 < doc_offsets_.size(); ++d) {
    std::int32_t* nd = &doc_topic_[d * T];
    for (std::size_t i = doc_offsets_[d]; i < doc_offsets_[d + 1]; ++i) {
      const auto w = static_cast<std::size_t>(words_[i]);
      std::int32_t* nw = &word_topic_[w * T];
      auto z = static_cast<std::size_t>(assignment_[i]);

      --nd[z];
      --nw[z];
      --topic_totals_[z];
      inv_total[z] = 1.0 / (static_cast<double>(topic_totals_[z]) + vbeta);

      double total = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        total += (nd[t] + alpha_) * (nw[t] + beta_) * inv_total[t];
        weights_[t] = total;
      }
      const double u = uniform01(rng_) * total;
      z = 0;
      while (z + 1 < T && weights_[z] <= u) ++z;

      assignment_[i] = static_cast<int>(z);
      ++nd[z];
      ++nw[z];
      ++topic_totals_[z];
      inv_total[z] = 1.0 / (static_cast<double>(topic_totals_[z]) + vbeta);
    }
  }
  ++sweeps_;
}

LdaModel GibbsSampler::model() const {
  const auto T = static_cast<std::size_t>(topics_);
  std::vector<std::int32_t> topic_word(T * static_cast<std::size_t>(vocab_size_));
  for (std::size_t w = 0; w < static_cast<std::size_t>(vocab_size_); ++w) {
    for (std::size_t t = 0; t < T; ++t) {
      topic_word[t * static_cast<std::size_t>(vocab_size_) + w] = word_topic_[w * T + t];
    }
  }
  return LdaModel(topics_, alpha_, beta_, vocab_size_, std::move(topic_word));
}

bool GibbsSampler::counts_consistent() const {
  const auto T = static_cast<std::size_t>(topics_);
  std::vector<std::int32_t> dt(doc_topic_.size(), 0), wt(word_topic_.size(), 0);
  std::vector<std::int64_t> tt(T, 0);
  for (std::size_t d = 0; d + 1 < doc_offsets_.size(); ++d) {
    for (std::size_t i = doc_offsets_[d]; i < doc_offsets_[d + 1]; ++i) {
      const auto z = static_cast<std::size_t>(assignment_[i]);
      if (z >= T) return false;
      ++dt[d * T + z];
      ++wt[static_cast<std::size_t>(words_[i]) * T + z];
      ++tt[z];
    }
  }
  return dt == doc_topic_ && wt == word_topic_ && tt == topic_totals_;
}

LdaModel train_lda(std::span<const Document> docs, int vocab_size, const LdaConfig& config, std::uint64_t seed) {
  config.validate();
  GibbsSampler sampler(docs, vocab_size, config.topics, config.alpha_value(), config.beta, seed);
  for (int it = 0; it < config.iterations; ++it) sampler.sweep();
  return sampler.model();
}

// ---------------------------------------------------------------------------

FoldIn::FoldIn(const LdaModel& model)
    : topics_(model.topics()), vocab_size_(model.vocab_size()), alpha_(model.alpha()) {
  const auto T = static_cast<std::size_t>(topics_);
  word_topic_.resize(static_cast<std::size_t>(vocab_size_) * T);
  const double vbeta = vocab_size_ * model.beta();
  for (int t = 0; t < topics_; ++t) {
    const double denom = static_cast<double>(model.topic_total(t)) + vbeta;
    for (int w = 0; w < vocab_size_; ++w) {
      word_topic_[static_cast<std::size_t>(w) * T + static_cast<std::size_t>(t)] =
          (model.topic_word(t, w) + model.beta()) / denom;
    }
  }
}

std::vector<double> FoldIn::infer(std::span<const int> tokens, const InferenceConfig& config, Rng& rng) const {
  config.validate();
  if (tokens.empty()) throw ConfigError("cannot infer topics of an empty document");
  for (int w : tokens) {
    if (w < 0 || w >= vocab_size_) {
      throw ConfigError("token index " + std::to_string(w) + " outside model vocabulary of size " +
                        std::to_string(vocab_size_));
    }
  }

  const auto T = static_cast<std::size_t>(topics_);
  std::vector<int> z(tokens.size());
  std::vector<std::int32_t> nd(T, 0);
  std::vector<double> weights(T), mean(T, 0.0);

  std::uniform_int_distribution<int> pick(0, topics_ - 1);
  for (auto& zi : z) {
    zi = pick(rng);
    ++nd[static_cast<std::size_t>(zi)];
  }

  const double norm = 1.0 / (static_cast<double>(tokens.size()) + topics_ * alpha_);
  for (int it = 1; it <= config.iterations; ++it) {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const double* phi = &word_topic_[static_cast<std::size_t>(tokens[i]) * T];
      --nd[static_cast<std::size_t>(z[i])];
      double total = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        total += (nd[t] + alpha_) * phi[t];
        weights[t] = total;
      }
      const double u = uniform01(rng) * total;
      std::size_t k = 0;
      while (k + 1 < T && weights[k] <= u) ++k;
      z[i] = static_cast<int>(k);
      ++nd[k];
    }
    if (it > config.burn_in) {
      for (std::size_t t = 0; t < T; ++t) mean[t] += (nd[t] + alpha_) * norm;
    }
  }

  // Renormalize so the accumulated rounding never drifts past 1e-9.
  double total = 0.0;
  for (double v : mean) total += v;
  for (auto& v : mean) v /= total;
  return mean;
}

std::vector<double> infer_topics(const LdaModel& model, const Document& doc, const InferenceConfig& config) {
  Rng rng = make_rng(config.seed, {doc.id});
  return FoldIn(model).infer(doc.tokens, config, rng);
}

// ---------------------------------------------------------------------------

Embedder::Embedder(Channel channel, std::vector<LdaModel> runs) : channel_(channel), runs_(std::move(runs)) {
  if (runs_.empty()) throw ConfigError("embedder needs at least one LDA run");
  const auto& first = runs_.front();
  for (const auto& run : runs_) {
    if (run.topics() != first.topics() || run.vocab_size() != first.vocab_size() ||
        run.alpha() != first.alpha() || run.beta() != first.beta()) {
      throw ConfigError("embedder runs disagree on T, alpha, beta or vocabulary");
    }
  }
  fold_ins_.reserve(runs_.size());
  for (const auto& run : runs_) fold_ins_.emplace_back(run);
}

int Embedder::dimension() const { return static_cast<int>(runs_.size()) * runs_.front().topics(); }

Eigen::VectorXd Embedder::embed(const Document& doc, const InferenceConfig& config) const {
  if (doc.channel != channel_) {
    throw ConfigError("document channel " + std::string(to_string(doc.channel)) + " does not match " +
                      std::string(to_string(channel_)) + " embedder");
  }
  const int T = runs_.front().topics();
  Eigen::VectorXd out(dimension());
  for (std::size_t r = 0; r < fold_ins_.size(); ++r) {
    Rng rng = make_rng(config.seed, {r, doc.id, static_cast<std::uint64_t>(channel_)});
    const auto theta = fold_ins_[r].infer(doc.tokens, config, rng);
    for (int t = 0; t < T; ++t) out(static_cast<Eigen::Index>(r) * T + t) = theta[static_cast<std::size_t>(t)];
  }
  return out;
}

Eigen::MatrixXd Embedder::embed_all(std::span<const Document> docs, const InferenceConfig& config) const {
  Eigen::MatrixXd out(dimension(), static_cast<Eigen::Index>(docs.size()));
  for (std::size_t i = 0; i < docs.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = embed(docs[i], config);
  return out;
}

Embedder train_embedder(std::span<const Document> docs, int vocab_size, Channel channel, const LdaConfig& config,
                        int runs, std::uint64_t seed) {
  if (runs < 1) throw ConfigError("embedder needs at least one run");
  for (const auto& doc : docs) {
    if (doc.channel != channel) throw ConfigError("training documents must all belong to the embedder channel");
  }
  std::vector<LdaModel> models;
  models.reserve(static_cast<std::size_t>(runs));
  for (int r = 0; r < runs; ++r) {
    models.push_back(train_lda(docs, vocab_size, config, derive_seed(seed, {static_cast<std::uint64_t>(r)})));
  }
  return Embedder(channel, std::move(models));
}

Eigen::VectorXd embed(const Embedder& embedder, const Document& doc, const InferenceConfig& config) {
  return embedder.embed(doc, config);
}

// ---------------------------------------------------------------------------

void save_lda(const LdaModel& model, std::ostream& out) {
  out.precision(17);
  out << "m2h-lda 1\n"
      << model.topics() << ' ' << model.alpha() << ' ' << model.beta() << ' ' << model.vocab_size() << '\n';
  for (int t = 0; t < model.topics(); ++t) {
    for (int w = 0; w < model.vocab_size(); ++w) {
      if (w > 0) out << ' ';
      out << model.topic_word(t, w);
    }
    out << '\n';
  }
}

LdaModel load_lda(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "m2h-lda") throw ParseError("not an m2h-lda model file", 1);
  if (version != 1) throw ParseError("unsupported m2h-lda version " + std::to_string(version), 1);
  int topics = 0, vocab = 0;
  double alpha = 0, beta = 0;
  if (!(in >> topics >> alpha >> beta >> vocab) || topics < 1 || vocab < 1) {
    throw ParseError("malformed model dimensions", 2);
  }
  std::vector<std::int32_t> counts(static_cast<std::size_t>(topics) * static_cast<std::size_t>(vocab));
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (!(in >> counts[i])) {
      throw ParseError("truncated topic-word counts", 3 + i / static_cast<std::size_t>(vocab));
    }
  }
  return LdaModel(topics, alpha, beta, vocab, std::move(counts));
}

void save_embedder(const Embedder& embedder, const std::filesystem::path& manifest) {
  nlohmann::json doc = {{"format", "m2h-embedder"}, {"version", 1}, {"channel", to_string(embedder.channel())}};
  auto& runs = doc["runs"] = nlohmann::json::array();
  const auto stem = manifest.stem().string();
  for (std::size_t r = 0; r < embedder.runs().size(); ++r) {
    const auto name = stem + ".run" + std::to_string(r) + ".lda";
    std::ofstream out(manifest.parent_path() / name);
    if (!out) throw ConfigError("cannot write " + name);
    save_lda(embedder.runs()[r], out);
    runs.push_back(name);
  }
  std::ofstream out(manifest);
  if (!out) throw ConfigError("cannot write " + manifest.string());
  out << doc.dump(2) << '\n';
}

Embedder load_embedder(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw ConfigError("cannot open " + manifest.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
    if (doc.at("format").get<std::string>() != "m2h-embedder") throw ParseError("not an embedder manifest", 0);
    if (doc.at("version").get<int>() != 1) throw ParseError("unsupported embedder version", 0);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed embedder manifest: ") + e.what(), 0);
  }
  const Channel channel = parse_channel(doc.at("channel").get<std::string>());
  std::vector<LdaModel> runs;
  for (const auto& name : doc.at("runs")) {
    std::filesystem::path path = name.get<std::string>();
    if (path.is_relative()) path = manifest.parent_path() / path;
    std::ifstream run(path);
    if (!run) throw ConfigError("cannot open LDA run " + path.string());
    runs.push_back(load_lda(run));
  }
  return Embedder(channel, std::move(runs));
}

void write_embeddings(std::ostream& out, std::span<const EmbeddedDocument> rows) {
  for (const auto& row : rows) {
    nlohmann::json j = {{"id", row.id},
                        {"theme", row.theme},
                        {"split", to_string(row.split)},
                        {"channel", to_string(row.channel)},
                        {"values", std::vector<double>(row.values.data(), row.values.data() + row.values.size())}};
    out << j.dump() << '\n';
  }
}

std::vector<EmbeddedDocument> read_embeddings(std::istream& in) {
  std::vector<EmbeddedDocument> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    EmbeddedDocument row;
    try {
      const auto j = nlohmann::json::parse(line);
      row.id = j.at("id").get<std::uint32_t>();
      row.theme = j.at("theme").get<int>();
      row.split = parse_split(j.at("split").get<std::string>());
      row.channel = parse_channel(j.at("channel").get<std::string>());
      const auto values = j.at("values").get<std::vector<double>>();
      row.values = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed embedding record: ") + e.what(), line_no);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), line_no);
    }
    if (!rows.empty() && rows.front().values.size() != row.values.size()) {
      throw ParseError("embedding length differs from the first record", line_no);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace m2h
