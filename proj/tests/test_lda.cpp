#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

#include <doctest.h>

#include "m2h/error.hpp"
#include "m2h/lda.hpp"
#include "oracles.hpp"

using namespace m2h;

namespace {

std::vector<Document> tiny_docs() {
  return {Document{0, 0, Channel::kTrs, {0, 1, 2, 2, 3}}, Document{1, 1, Channel::kTrs, {4, 5, 5, 6}},
          Document{2, 0, Channel::kTrs, {0, 0, 1, 3, 3, 2}}, Document{3, 1, Channel::kTrs, {6, 4, 7, 7}}};
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return a.dot(b) / (a.norm() * b.norm()); }

CorpusConfig small_corpus_config() {
  CorpusConfig c = CorpusConfig::decoda_shaped();
  for (auto& t : c.themes) t.per_split = {15, 2, 2};
  c.vocab_size = 400;
  return c;
}

}  // namespace

TEST_CASE("default hyperparameters") {
  const LdaConfig config;
  CHECK(config.topics == 25);
  CHECK(config.alpha_value() == 2.0);
  CHECK(config.beta == 0.01);
  LdaConfig ten;
  ten.topics = 10;
  CHECK(ten.alpha_value() == 5.0);
  ten.alpha = 0.1;
  CHECK(ten.alpha_value() == 0.1);
}

TEST_CASE("a single topic absorbs every token") {
  const Document doc{0, 0, Channel::kTrs, {3, 1, 3, 0, 3, 1}};
  LdaConfig config;
  config.topics = 1;
  config.iterations = 5;
  const auto model = train_lda(std::span(&doc, 1), 5, config, 1);
  const std::vector<std::int32_t> histogram{1, 2, 0, 3, 0};
  for (int w = 0; w < 5; ++w) CHECK(model.topic_word(0, w) == histogram[static_cast<std::size_t>(w)]);
  CHECK(model.topic_total(0) == 6);
}

TEST_CASE("Gibbs counts are conserved after every sweep") {
  Rng rng(5);
  const auto data = testing::make_disjoint_topic_corpus(3, 30, 40, 25, rng);
  GibbsSampler sampler(data.docs, 30, 4, 0.5, 0.01, 7);
  CHECK(sampler.counts_consistent());
  for (int sweep = 0; sweep < 25; ++sweep) {
    sampler.sweep();
    REQUIRE(sampler.counts_consistent());
    std::size_t total = 0;
    for (std::size_t d = 0; d < sampler.num_docs(); ++d) {
      std::size_t per_doc = 0;
      for (int t = 0; t < 4; ++t) per_doc += static_cast<std::size_t>(sampler.doc_topic(d, t));
      CHECK(per_doc == sampler.doc_length(d));
      total += per_doc;
    }
    CHECK(total == sampler.total_tokens());
  }
  const auto model = sampler.model();
  for (int t = 0; t < model.topics(); ++t) {
    std::int64_t row = 0;
    for (int w = 0; w < model.vocab_size(); ++w) row += model.topic_word(t, w);
    CHECK(row == model.topic_total(t));
  }
}

TEST_CASE("two disjoint topics are recovered up to permutation") {
  Rng rng(42);
  const auto data = testing::make_disjoint_topic_corpus(2, 100, 200, 80, rng);
  LdaConfig config;
  config.topics = 2;
  const auto model = train_lda(data.docs, 100, config, 3);
  std::vector<std::vector<double>> recovered{model.topic_distribution(0), model.topic_distribution(1)};
  for (double tv : testing::best_permutation_tv(recovered, data.topics)) CHECK(tv < 0.1);
}

TEST_CASE("training is deterministic per seed") {
  LdaConfig config;
  config.topics = 3;
  config.iterations = 20;
  const auto docs = tiny_docs();
  CHECK(train_lda(docs, 8, config, 9) == train_lda(docs, 8, config, 9));
}

TEST_CASE("training preconditions") {
  LdaConfig config;
  CHECK_THROWS_AS(train_lda({}, 8, config, 1), ConfigError);
  config.topics = 0;
  CHECK_THROWS_AS(train_lda(tiny_docs(), 8, config, 1), ConfigError);
  config.topics = 2;
  config.iterations = 0;
  CHECK_THROWS_AS(train_lda(tiny_docs(), 8, config, 1), ConfigError);
  config.iterations = 2;
  CHECK_THROWS_AS(train_lda(tiny_docs(), 5, config, 1), ConfigError);
}

TEST_CASE("fold-in with a single topic returns [1]") {
  const LdaModel model(1, 50.0, 0.01, 4, {3, 1, 4, 1});
  const auto p = infer_topics(model, Document{0, 0, Channel::kTrs, {0, 2, 3}}, InferenceConfig{});
  REQUIRE(p.size() == 1);
  CHECK(p[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("fold-in finds the topic that owns the document's words") {
  // Topic k owns words [10k, 10k+10) with overwhelming counts.
  const int topics = 3, vocab = 30;
  std::vector<std::int32_t> counts(static_cast<std::size_t>(topics * vocab), 0);
  for (int k = 0; k < topics; ++k) {
    for (int w = 10 * k; w < 10 * k + 10; ++w) counts[static_cast<std::size_t>(k * vocab + w)] = 1000;
  }
  const LdaModel model(topics, 0.1, 0.01, vocab, counts);
  for (int k = 0; k < topics; ++k) {
    Document doc{static_cast<std::uint32_t>(k), 0, Channel::kTrs, {}};
    for (int n = 0; n < 40; ++n) doc.tokens.push_back(10 * k + n % 10);
    const auto p = infer_topics(model, doc, InferenceConfig{50, 20, 4});
    CHECK(p[static_cast<std::size_t>(k)] > 0.9);
  }
}

TEST_CASE("fold-in output is a probability vector and leaves the model untouched") {
  Rng rng(12);
  const auto data = testing::make_disjoint_topic_corpus(4, 40, 30, 20, rng);
  LdaConfig config;
  config.topics = 5;
  config.iterations = 30;
  const auto model = train_lda(data.docs, 40, config, 2);
  const LdaModel before = model;
  std::uniform_int_distribution<int> word(0, 39);
  for (int trial = 0; trial < 50; ++trial) {
    Document doc{static_cast<std::uint32_t>(trial), 0, Channel::kTrs, std::vector<int>(1 + trial % 17)};
    for (int& t : doc.tokens) t = word(rng);
    const auto p = infer_topics(model, doc, InferenceConfig{30, 10, 6});
    CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) < 1e-9);
    for (double v : p) CHECK(v > 0.0);
  }
  CHECK(model == before);
}

TEST_CASE("fold-in preconditions") {
  const LdaModel model(2, 1.0, 0.01, 4, {1, 1, 0, 0, 0, 0, 1, 1});
  CHECK_THROWS_AS(infer_topics(model, Document{0, 0, Channel::kTrs, {0, 4}}, InferenceConfig{}), ConfigError);
  CHECK_THROWS_AS(infer_topics(model, Document{0, 0, Channel::kTrs, {}}, InferenceConfig{}), ConfigError);
  CHECK_THROWS_AS(infer_topics(model, Document{0, 0, Channel::kTrs, {1}}, InferenceConfig{20, 20, 0}), ConfigError);
}

TEST_CASE("embedding is the concatenation of per-run unit-sum blocks") {
  const auto corpus = generate_synthetic_corpus(small_corpus_config(), 4);
  const auto train = corpus.documents(Channel::kTrs, Split::kTrain);
  LdaConfig config;
  config.iterations = 30;
  const auto embedder = train_embedder(train, corpus.vocab_size(), Channel::kTrs, config, kDefaultRuns, 8);
  CHECK(embedder.runs().size() == 10);
  CHECK(embedder.dimension() == 250);
  const InferenceConfig inference{50, 20, 3};
  for (const auto& doc : corpus.documents(Channel::kTrs, Split::kTest)) {
    const auto z = embed(embedder, doc, inference);
    REQUIRE(z.size() == 250);
    for (int r = 0; r < 10; ++r) CHECK(std::abs(z.segment(25 * r, 25).sum() - 1.0) < 1e-9);
    CHECK(z == embedder.embed(doc, inference));
  }
  const auto all = embedder.embed_all(train, inference);
  CHECK(all.cols() == static_cast<Eigen::Index>(train.size()));
  CHECK(all.col(3) == embedder.embed(train[3], inference));

  const auto again = train_embedder(train, corpus.vocab_size(), Channel::kTrs, config, kDefaultRuns, 8);
  CHECK(again.runs() == embedder.runs());
  CHECK_FALSE(embedder.runs()[0] == embedder.runs()[1]);
  CHECK_THROWS_AS(embedder.embed(corpus.pairs[0].asr, inference), ConfigError);
}

TEST_CASE("noisier twins drift further from the clean embedding") {
  auto config = small_corpus_config();
  for (auto& t : config.themes) t.per_split = {15, 0, 0};
  config.themes[0].per_split = {15, 0, 1};
  const auto corpus = generate_synthetic_corpus(config, 21);
  const auto train = corpus.documents(Channel::kTrs, Split::kTrain);
  LdaConfig lda;
  lda.iterations = 50;
  const auto embedder = train_embedder(train, corpus.vocab_size(), Channel::kTrs, lda, 3, 2);
  const InferenceConfig inference{50, 20, 5};

  Rng rng(99);
  const NoiseModel half{0.30, 0.15, 0.05, 0.0};
  double clean_sum = 0.0, noisy_sum = 0.0;
  int pairs = 0;
  for (const auto& doc : train) {
    const auto reference = embedder.embed(doc, inference);
    // Twins are re-read through the clean-channel embedder under a fresh id.
    Document twin = doc;
    twin.id += 100000;
    clean_sum += cosine(reference, embedder.embed(twin, inference));
    Document noisy = apply_asr_noise(doc, half, corpus.vocab_size(), rng).document;
    noisy.channel = Channel::kTrs;
    noisy.id = twin.id;
    noisy_sum += cosine(reference, embedder.embed(noisy, inference));
    ++pairs;
  }
  REQUIRE(pairs >= 100);
  CHECK(noisy_sum / pairs < clean_sum / pairs);
}

TEST_CASE("model file round trip and validation") {
  const LdaModel model(2, 25.0, 0.01, 3, {1, 0, 4, 2, 2, 0});
  std::stringstream buffer;
  save_lda(model, buffer);
  CHECK(buffer.str().rfind("m2h-lda 1\n", 0) == 0);
  CHECK(load_lda(buffer) == model);

  std::stringstream wrong("not-a-model 1\n");
  CHECK_THROWS_AS(load_lda(wrong), ParseError);
  std::stringstream truncated("m2h-lda 1\n2 25 0.01 3\n1 0 4\n2\n");
  CHECK_THROWS_AS(load_lda(truncated), ParseError);
}

TEST_CASE("embedder and embedding files round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "m2h_test_lda_io";
  std::filesystem::create_directories(dir);
  LdaConfig config;
  config.topics = 3;
  config.iterations = 5;
  const auto embedder = train_embedder(tiny_docs(), 8, Channel::kTrs, config, 2, 1);
  save_embedder(embedder, dir / "emb.json");
  const auto loaded = load_embedder(dir / "emb.json");
  CHECK(loaded.channel() == Channel::kTrs);
  CHECK(loaded.runs() == embedder.runs());

  std::vector<EmbeddedDocument> rows;
  for (const auto& doc : tiny_docs()) {
    rows.push_back({doc.id, doc.theme, Split::kDev, doc.channel, embedder.embed(doc, InferenceConfig{})});
  }
  std::stringstream buffer;
  write_embeddings(buffer, rows);
  const auto back = read_embeddings(buffer);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].id == rows[i].id);
    CHECK(back[i].split == Split::kDev);
    CHECK(back[i].values == rows[i].values);
  }
  std::stringstream ragged(R"({"id":1,"theme":0,"split":"train","channel":"trs","values":[0.5,0.5]})"
                           "\n"
                           R"({"id":2,"theme":0,"split":"train","channel":"trs","values":[1.0]})"
                           "\n");
  CHECK_THROWS_AS(read_embeddings(ragged), ParseError);
  std::filesystem::remove_all(dir);
}
