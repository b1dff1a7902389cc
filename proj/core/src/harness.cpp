#include "m2h/harness.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "m2h/error.hpp"

namespace m2h {

using nlohmann::json;

void ExperimentConfig::validate() const {
  if (!corpus_path) corpus.validate();
  if (corpus_path && !std::filesystem::exists(*corpus_path)) {
    throw ConfigError("corpus file " + corpus_path->string() + " does not exist");
  }
  lda.validate();
  if (lda_runs < 1) throw ConfigError("need at least one LDA run");
  inference.validate();
  gan.validate();
  classifier.validate();
  if (seeds.empty()) throw ConfigError("need at least one seed");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds must be distinct");
  }
  if (systems.empty()) throw ConfigError("no systems selected");
  if (threads < 0) throw ConfigError("threads must be >= 0");
}

// ---------------------------------------------------------------------------
// Config file

namespace {

void reject_unknown(const json& object, std::initializer_list<std::string_view> known, const std::string& where) {
  if (!object.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : object.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

template <class T>
void read(const json& object, const char* key, T& into) {
  if (auto it = object.find(key); it != object.end() && !it->is_null()) into = it->get<T>();
}

NoiseModel parse_noise(const json& j, NoiseModel base) {
  reject_unknown(j, {"substitution", "deletion", "insertion", "confusion_bias"}, "noise");
  read(j, "substitution", base.substitution_rate);
  read(j, "deletion", base.deletion_rate);
  read(j, "insertion", base.insertion_rate);
  read(j, "confusion_bias", base.confusion_bias);
  return base;
}

json noise_json(const NoiseModel& n) {
  return {{"substitution", n.substitution_rate},
          {"deletion", n.deletion_rate},
          {"insertion", n.insertion_rate},
          {"confusion_bias", n.confusion_bias}};
}

void parse_corpus(const json& j, ExperimentConfig& cfg) {
  reject_unknown(j,
                 {"path", "seed", "themes", "vocab_size", "min_doc_length", "max_doc_length", "theme_sharpness",
                  "background_concentration", "background_mix", "subtopic_mix", "confusable_per_word", "noise"},
                 "corpus");
  auto& c = cfg.corpus;
  if (auto it = j.find("path"); it != j.end() && !it->is_null()) cfg.corpus_path = it->get<std::string>();
  read(j, "seed", cfg.corpus_seed);
  read(j, "vocab_size", c.vocab_size);
  read(j, "min_doc_length", c.min_doc_length);
  read(j, "max_doc_length", c.max_doc_length);
  read(j, "theme_sharpness", c.theme_sharpness);
  read(j, "background_concentration", c.background_concentration);
  read(j, "background_mix", c.background_mix);
  read(j, "subtopic_mix", c.subtopic_mix);
  read(j, "confusable_per_word", c.confusable_per_word);
  if (auto it = j.find("themes"); it != j.end()) {
    c.themes.clear();
    for (const auto& t : *it) {
      reject_unknown(t, {"name", "train", "dev", "test"}, "corpus.themes[]");
      c.themes.push_back({t.at("name").get<std::string>(),
                          {t.value("train", 0), t.value("dev", 0), t.value("test", 0)}});
    }
  }
  if (auto it = j.find("noise"); it != j.end()) {
    const bool per_split = it->contains("train") || it->contains("dev") || it->contains("test");
    if (per_split) {
      reject_unknown(*it, {"train", "dev", "test"}, "corpus.noise");
      for (Split s : kAllSplits) {
        const auto key = std::string(to_string(s));
        if (it->contains(key)) {
          c.noise[static_cast<std::size_t>(s)] = parse_noise(it->at(key), c.noise[static_cast<std::size_t>(s)]);
        }
      }
    } else {
      const NoiseModel n = parse_noise(*it, c.noise[0]);
      c.noise = {n, n, n};
    }
  }
}

}  // namespace

ExperimentConfig parse_config(std::string_view json_text) {
  ExperimentConfig cfg;
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what(), 0);
  }
  try {
    reject_unknown(j, {"corpus", "lda", "gan", "classifier", "seeds", "systems", "threads"}, "config");
    if (j.contains("corpus")) parse_corpus(j.at("corpus"), cfg);
    if (j.contains("lda")) {
      const auto& l = j.at("lda");
      reject_unknown(l, {"topics", "alpha", "beta", "iterations", "runs", "infer_iterations", "burn_in"}, "lda");
      read(l, "topics", cfg.lda.topics);
      if (l.contains("alpha") && !l.at("alpha").is_null()) cfg.lda.alpha = l.at("alpha").get<double>();
      read(l, "beta", cfg.lda.beta);
      read(l, "iterations", cfg.lda.iterations);
      read(l, "runs", cfg.lda_runs);
      read(l, "infer_iterations", cfg.inference.iterations);
      read(l, "burn_in", cfg.inference.burn_in);
    }
    if (j.contains("gan")) {
      const auto& g = j.at("gan");
      reject_unknown(g, {"epochs", "learning_rate", "batch_size", "hidden", "discriminator_hidden", "smoothing"},
                     "gan");
      read(g, "epochs", cfg.gan.epochs);
      read(g, "learning_rate", cfg.gan.learning_rate);
      read(g, "batch_size", cfg.gan.batch_size);
      read(g, "hidden", cfg.gan.generator.hidden);
      read(g, "discriminator_hidden", cfg.gan.discriminator_hidden);
      if (g.contains("smoothing")) {
        const auto& s = g.at("smoothing");
        reject_unknown(s, {"real", "fake"}, "gan.smoothing");
        if (s.contains("real")) {
          const auto r = s.at("real").get<std::array<double, 2>>();
          cfg.gan.smoothing.real_low = r[0];
          cfg.gan.smoothing.real_high = r[1];
        }
        if (s.contains("fake")) {
          const auto f = s.at("fake").get<std::array<double, 2>>();
          cfg.gan.smoothing.fake_low = f[0];
          cfg.gan.smoothing.fake_high = f[1];
        }
      }
    }
    if (j.contains("classifier")) {
      const auto& c = j.at("classifier");
      reject_unknown(c, {"epochs", "learning_rate", "batch_size", "hidden", "hidden_layers"}, "classifier");
      read(c, "epochs", cfg.classifier.epochs);
      read(c, "learning_rate", cfg.classifier.learning_rate);
      read(c, "batch_size", cfg.classifier.batch_size);
      read(c, "hidden", cfg.classifier.hidden);
      read(c, "hidden_layers", cfg.classifier.hidden_layers);
    }
    if (j.contains("seeds")) {
      const auto& s = j.at("seeds");
      if (s.is_number_integer()) {
        const int n = s.get<int>();
        if (n < 1) throw ConfigError("seeds count must be >= 1");
        cfg.seeds.clear();
        for (int i = 1; i <= n; ++i) cfg.seeds.push_back(static_cast<std::uint64_t>(i));
      } else {
        cfg.seeds = s.get<std::vector<std::uint64_t>>();
      }
    }
    if (j.contains("systems")) {
      cfg.systems.clear();
      for (const auto& name : j.at("systems")) cfg.systems.push_back(parse_system(name.get<std::string>()));
    }
    read(j, "threads", cfg.threads);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  auto cfg = parse_config(buffer.str());
  if (cfg.corpus_path && cfg.corpus_path->is_relative()) cfg.corpus_path = path.parent_path() / *cfg.corpus_path;
  return cfg;
}

std::string dump_config(const ExperimentConfig& cfg) {
  json themes = json::array();
  for (const auto& t : cfg.corpus.themes) {
    themes.push_back({{"name", t.name}, {"train", t.per_split[0]}, {"dev", t.per_split[1]}, {"test", t.per_split[2]}});
  }
  json corpus = {{"seed", cfg.corpus_seed},
                 {"themes", themes},
                 {"vocab_size", cfg.corpus.vocab_size},
                 {"min_doc_length", cfg.corpus.min_doc_length},
                 {"max_doc_length", cfg.corpus.max_doc_length},
                 {"theme_sharpness", cfg.corpus.theme_sharpness},
                 {"background_concentration", cfg.corpus.background_concentration},
                 {"background_mix", cfg.corpus.background_mix},
                 {"subtopic_mix", cfg.corpus.subtopic_mix},
                 {"confusable_per_word", cfg.corpus.confusable_per_word},
                 {"noise",
                  {{"train", noise_json(cfg.corpus.noise[0])},
                   {"dev", noise_json(cfg.corpus.noise[1])},
                   {"test", noise_json(cfg.corpus.noise[2])}}}};
  if (cfg.corpus_path) corpus["path"] = cfg.corpus_path->string();
  json systems = json::array();
  for (System s : cfg.systems) systems.push_back(system_name(s));
  json doc = {
      {"corpus", corpus},
      {"lda",
       {{"topics", cfg.lda.topics},
        {"alpha", cfg.lda.alpha ? json(*cfg.lda.alpha) : json(nullptr)},
        {"beta", cfg.lda.beta},
        {"iterations", cfg.lda.iterations},
        {"runs", cfg.lda_runs},
        {"infer_iterations", cfg.inference.iterations},
        {"burn_in", cfg.inference.burn_in}}},
      {"gan",
       {{"epochs", cfg.gan.epochs},
        {"learning_rate", cfg.gan.learning_rate},
        {"batch_size", cfg.gan.batch_size},
        {"hidden", cfg.gan.generator.hidden},
        {"discriminator_hidden", cfg.gan.discriminator_hidden},
        {"smoothing",
         {{"real", {cfg.gan.smoothing.real_low, cfg.gan.smoothing.real_high}},
          {"fake", {cfg.gan.smoothing.fake_low, cfg.gan.smoothing.fake_high}}}}}},
      {"classifier",
       {{"epochs", cfg.classifier.epochs},
        {"learning_rate", cfg.classifier.learning_rate},
        {"batch_size", cfg.classifier.batch_size},
        {"hidden", cfg.classifier.hidden},
        {"hidden_layers", cfg.classifier.hidden_layers}}},
      {"seeds", cfg.seeds},
      {"systems", systems},
      {"threads", cfg.threads}};
  return doc.dump(2) + '\n';
}

ParallelCorpus prepare_corpus(const ExperimentConfig& config) {
  if (config.corpus_path) {
    auto corpus = load_corpus(*config.corpus_path);
    corpus.validate();
    return corpus;
  }
  return generate_synthetic_corpus(config.corpus, config.corpus_seed);
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

enum : std::uint64_t { kTrsEmbedder = 10, kAsrEmbedder = 11, kInference = 12, kSystemBase = 100 };

LabeledSet labeled(const Embedder& embedder, const std::vector<Document>& docs, const InferenceConfig& inference) {
  LabeledSet set;
  set.features = embedder.embed_all(docs, inference);
  for (const auto& d : docs) set.labels.push_back(d.theme);
  return set;
}

LabeledSet mapped(const NetworkParams& generator, const LabeledSet& set) {
  return {featurize(&generator, set.features), set.labels};
}

SeedMetrics classify(const ExperimentConfig& config, const LabeledSet& train, const LabeledSet& dev,
                     const LabeledSet& test, std::uint64_t seed, int num_themes) {
  ClassifierSpec spec = config.classifier;
  spec.input_dim = static_cast<int>(train.features.rows());
  spec.classes = num_themes;
  const auto result = train_classifier(train, dev, test, spec, seed);
  const auto sel = real_and_max_test(result.history);
  SeedMetrics m;
  m.dev = sel.dev;
  m.real_test = sel.real_test;
  m.max_test = sel.max_test;
  return m;
}

}  // namespace

SeedEmbeddings embed_corpus(const ExperimentConfig& config, const ParallelCorpus& corpus, std::uint64_t seed) {
  const auto trs_train = corpus.documents(Channel::kTrs, Split::kTrain);
  const auto asr_train = corpus.documents(Channel::kAsr, Split::kTrain);
  const Embedder trs = train_embedder(trs_train, corpus.vocab_size(), Channel::kTrs, config.lda, config.lda_runs,
                                      derive_seed(seed, {kTrsEmbedder}));
  const Embedder asr = train_embedder(asr_train, corpus.vocab_size(), Channel::kAsr, config.lda, config.lda_runs,
                                      derive_seed(seed, {kAsrEmbedder}));
  InferenceConfig inference = config.inference;
  inference.seed = derive_seed(seed, {kInference});

  SeedEmbeddings out;
  for (Split s : kAllSplits) {
    const auto i = static_cast<std::size_t>(s);
    out.trs.splits[i] = labeled(trs, corpus.documents(Channel::kTrs, s), inference);
    out.asr.splits[i] = labeled(asr, corpus.documents(Channel::kAsr, s), inference);
  }
  return out;
}

SeedMetrics run_system(const ExperimentConfig& config, const SeedEmbeddings& emb, System system, std::uint64_t seed,
                       int num_themes) {
  const std::uint64_t sys_seed = derive_seed(seed, {kSystemBase + static_cast<std::uint64_t>(system)});
  const auto& trs = emb.trs.splits;
  const auto& asr = emb.asr.splits;
  SeedMetrics metrics;

  switch (system) {
    case System::kDnnTrs:
      metrics = classify(config, trs[0], trs[1], trs[2], sys_seed, num_themes);
      break;
    case System::kDnnAsr:
      metrics = classify(config, asr[0], asr[1], asr[2], sys_seed, num_themes);
      break;
    case System::kGan:
    case System::kM2hGan: {
      AdversarialConfig gan = config.gan;
      gan.generator.dim = static_cast<int>(asr[0].features.rows());
      gan.seed = derive_seed(sys_seed, {1});
      const auto adv = system == System::kGan
                           ? train_gan(asr[0].features, trs[0].features, gan)
                           : train_m2h_gan(asr[0].features, trs[0].features, trs[0].labels, asr[0].labels, gan,
                                           num_themes);
      metrics = classify(config, mapped(adv.generator, asr[0]), mapped(adv.generator, asr[1]),
                         mapped(adv.generator, asr[2]), derive_seed(sys_seed, {2}), num_themes);
      break;
    }
  }
  metrics.seed = seed;
  return metrics;
}

RunReport run_experiment(const ExperimentConfig& config, const ParallelCorpus& corpus, const ProgressFn& progress) {
  config.validate();
  corpus.validate();
  const int num_themes = corpus.num_themes();
  const std::size_t n_seeds = config.seeds.size();
  const std::size_t n_sys = config.systems.size();

  // results[seed][system]
  std::vector<std::vector<SeedMetrics>> results(n_seeds, std::vector<SeedMetrics>(n_sys));
  std::mutex log_mutex;
  auto log = [&](const std::string& msg) {
    if (!progress) return;
    std::lock_guard lock(log_mutex);
    progress(msg);
  };

  auto run_seed = [&](std::size_t k) {
    const std::uint64_t seed = config.seeds[k];
    log("seed " + std::to_string(seed) + ": training embedders");
    SeedEmbeddings emb;
    try {
      emb = embed_corpus(config, corpus, seed);
    } catch (const std::exception& e) {
      for (auto& m : results[k]) m = SeedMetrics{seed, false, std::string("embedding failed: ") + e.what()};
      log("seed " + std::to_string(seed) + ": embedding failed: " + e.what());
      return;
    }
    for (std::size_t s = 0; s < n_sys; ++s) {
      const System system = config.systems[s];
      try {
        results[k][s] = run_system(config, emb, system, seed, num_themes);
        log("seed " + std::to_string(seed) + ": " + std::string(system_name(system)) + " real test " +
            std::to_string(results[k][s].real_test));
      } catch (const std::exception& e) {
        results[k][s] = SeedMetrics{seed, false, e.what()};
        log("seed " + std::to_string(seed) + ": " + std::string(system_name(system)) + " failed: " + e.what());
      }
    }
  };

  std::size_t workers = config.threads > 0 ? static_cast<std::size_t>(config.threads)
                                           : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n_seeds);
  if (workers <= 1) {
    for (std::size_t k = 0; k < n_seeds; ++k) run_seed(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < n_seeds; k = next++) run_seed(k);
      });
    }
  }

  RunReport report;
  for (std::size_t s = 0; s < n_sys; ++s) {
    SystemReport sr;
    sr.system = config.systems[s];
    for (std::size_t k = 0; k < n_seeds; ++k) sr.runs.push_back(results[k][s]);
    sr.summary = aggregate(sr.runs);
    report.systems.push_back(std::move(sr));
  }
  return report;
}

RunReport run_experiment(const ExperimentConfig& config, const ProgressFn& progress) {
  config.validate();
  return run_experiment(config, prepare_corpus(config), progress);
}

}  // namespace m2h
