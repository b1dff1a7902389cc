// m2h: command-line front end for the corpus, LDA, adversarial and
// classifier stages, and the full multi-seed experiment.

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "m2h/adversarial.hpp"
#include "m2h/classifier.hpp"
#include "m2h/corpus.hpp"
#include "m2h/error.hpp"
#include "m2h/harness.hpp"
#include "m2h/lda.hpp"
#include "m2h/report.hpp"

namespace {

using namespace m2h;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;

  ExperimentConfig config() const {
    return config_path.empty() ? ExperimentConfig{} : load_config(config_path);
  }
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--config", common.config_path, "JSON experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--seed", common.seed, "Random seed");
}

std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw ConfigError("cannot write " + path);
  return out;
}

std::vector<EmbeddedDocument> load_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  return read_embeddings(in);
}

struct SplitMatrix {
  Eigen::MatrixXd features;
  std::vector<int> labels;
};

SplitMatrix select(const std::vector<EmbeddedDocument>& rows, std::optional<Split> split) {
  std::vector<const EmbeddedDocument*> picked;
  for (const auto& r : rows) {
    if (!split || r.split == *split) picked.push_back(&r);
  }
  SplitMatrix out;
  if (picked.empty()) return out;
  out.features.resize(picked.front()->values.size(), static_cast<Eigen::Index>(picked.size()));
  for (std::size_t i = 0; i < picked.size(); ++i) {
    out.features.col(static_cast<Eigen::Index>(i)) = picked[i]->values;
    out.labels.push_back(picked[i]->theme);
  }
  return out;
}

int num_themes_in(const ExperimentConfig& cfg) { return static_cast<int>(cfg.corpus.themes.size()); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"M2H-GAN theme identification pipeline"};
  app.require_subcommand(1);

  // gen-corpus
  Common gen_common;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic parallel TRS/ASR corpus");
  add_common(gen, gen_common);
  gen->add_option("--out", gen_out, "Corpus file (JSON lines)")->required();

  // train-lda
  Common lda_common;
  std::string lda_corpus, lda_channel = "trs", lda_out;
  std::optional<int> lda_runs, lda_topics;
  auto* lda = app.add_subcommand("train-lda", "Train an embedder (several LDA runs) on one channel");
  add_common(lda, lda_common);
  lda->add_option("--corpus", lda_corpus, "Corpus file")->required()->check(CLI::ExistingFile);
  lda->add_option("--channel", lda_channel, "trs or asr")->check(CLI::IsMember({"trs", "asr"}));
  lda->add_option("--runs", lda_runs, "Number of LDA runs");
  lda->add_option("--topics", lda_topics, "Topics per run");
  lda->add_option("--out", lda_out, "Embedder manifest path")->required();

  // embed
  Common emb_common;
  std::string emb_corpus, emb_embedder, emb_out;
  auto* emb = app.add_subcommand("embed", "Embed every document of the embedder's channel");
  add_common(emb, emb_common);
  emb->add_option("--corpus", emb_corpus, "Corpus file")->required()->check(CLI::ExistingFile);
  emb->add_option("--embedder", emb_embedder, "Embedder manifest")->required()->check(CLI::ExistingFile);
  emb->add_option("--out", emb_out, "Embedding file (JSON lines)")->required();

  // train-gan / train-m2h
  Common gan_common, m2h_common;
  std::string gan_trs, gan_asr, gan_g, gan_d, gan_log;
  auto setup_adv = [&](CLI::App* cmd, Common& common) {
    add_common(cmd, common);
    cmd->add_option("--trs", gan_trs, "TRS embedding file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--asr", gan_asr, "ASR embedding file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--generator", gan_g, "Output generator checkpoint")->required();
    cmd->add_option("--discriminator", gan_d, "Output discriminator checkpoint");
    cmd->add_option("--log", gan_log, "Per-epoch loss log (JSON lines)");
  };
  auto* gan = app.add_subcommand("train-gan", "Train the baseline GAN on training-split embeddings");
  setup_adv(gan, gan_common);
  auto* m2h = app.add_subcommand("train-m2h", "Train the M2H-GAN on training-split embeddings");
  setup_adv(m2h, m2h_common);

  // train-dnn
  Common dnn_common;
  std::string dnn_features, dnn_generator, dnn_out, dnn_history;
  auto* dnn = app.add_subcommand("train-dnn", "Train the theme classifier, optionally on generator features");
  add_common(dnn, dnn_common);
  dnn->add_option("--features", dnn_features, "Embedding file with train/dev/test rows")
      ->required()
      ->check(CLI::ExistingFile);
  dnn->add_option("--generator", dnn_generator, "Frozen generator checkpoint")->check(CLI::ExistingFile);
  dnn->add_option("--out", dnn_out, "Output classifier checkpoint");
  dnn->add_option("--history", dnn_history, "Per-epoch history (JSON lines)");

  // run-experiment
  Common run_common;
  std::string run_json, run_text;
  auto* run = app.add_subcommand("run-experiment", "Run all systems over all seeds and report");
  add_common(run, run_common);
  run->add_option("--out", run_json, "Machine-readable report (JSON)");
  run->add_option("--table", run_text, "Text table output file");

  // report
  Common rep_common;
  std::string rep_in, rep_format = "text";
  auto* rep = app.add_subcommand("report", "Render a saved report");
  add_common(rep, rep_common);
  rep->add_option("--in", rep_in, "Report JSON")->required()->check(CLI::ExistingFile);
  rep->add_option("--format", rep_format, "text or json")->check(CLI::IsMember({"text", "json"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      auto cfg = gen_common.config();
      const auto corpus = generate_synthetic_corpus(cfg.corpus, gen_common.seed.value_or(cfg.corpus_seed));
      save_corpus(corpus, std::filesystem::path(gen_out));
      std::cerr << "wrote " << corpus.pairs.size() << " pairs (train " << corpus.count(Split::kTrain) << ", dev "
                << corpus.count(Split::kDev) << ", test " << corpus.count(Split::kTest) << "); ASR WER train "
                << corpus_wer(corpus, Split::kTrain) << "\n";
    } else if (lda->parsed()) {
      auto cfg = lda_common.config();
      if (lda_topics) cfg.lda.topics = *lda_topics;
      const int runs = lda_runs.value_or(cfg.lda_runs);
      const auto corpus = load_corpus(std::filesystem::path(lda_corpus));
      const Channel channel = parse_channel(lda_channel);
      const auto docs = corpus.documents(channel, Split::kTrain);
      const auto embedder =
          train_embedder(docs, corpus.vocab_size(), channel, cfg.lda, runs, lda_common.seed.value_or(1));
      save_embedder(embedder, lda_out);
      std::cerr << "trained " << runs << " LDA runs (T=" << cfg.lda.topics << ") on " << docs.size() << " "
                << lda_channel << " documents\n";
    } else if (emb->parsed()) {
      auto cfg = emb_common.config();
      InferenceConfig inference = cfg.inference;
      inference.seed = emb_common.seed.value_or(1);
      const auto corpus = load_corpus(std::filesystem::path(emb_corpus));
      const auto embedder = load_embedder(emb_embedder);
      std::vector<EmbeddedDocument> rows;
      for (const auto& pair : corpus.pairs) {
        const Document& doc = embedder.channel() == Channel::kTrs ? pair.trs : pair.asr;
        rows.push_back({doc.id, doc.theme, pair.split, doc.channel, embedder.embed(doc, inference)});
      }
      auto out = open_out(emb_out);
      write_embeddings(out, rows);
    } else if (gan->parsed() || m2h->parsed()) {
      const bool is_m2h = m2h->parsed();
      const Common& common = is_m2h ? m2h_common : gan_common;
      auto cfg = common.config();
      const auto trs = select(load_embeddings(gan_trs), Split::kTrain);
      const auto asr = select(load_embeddings(gan_asr), Split::kTrain);
      AdversarialConfig adv = cfg.gan;
      adv.seed = common.seed.value_or(1);
      adv.generator.dim = static_cast<int>(asr.features.rows());
      int themes = num_themes_in(cfg);
      for (int l : trs.labels) themes = std::max(themes, l + 1);
      const auto result = is_m2h ? train_m2h_gan(asr.features, trs.features, trs.labels, asr.labels, adv, themes)
                                 : train_gan(asr.features, trs.features, adv);
      save_network(result.generator, std::filesystem::path(gan_g));
      if (!gan_d.empty()) save_network(result.discriminator, std::filesystem::path(gan_d));
      if (!gan_log.empty()) {
        auto out = open_out(gan_log);
        write_loss_log(out, result.history);
      }
      write_loss_log(std::cout, result.history);
    } else if (dnn->parsed()) {
      auto cfg = dnn_common.config();
      const auto rows = load_embeddings(dnn_features);
      std::optional<NetworkParams> generator;
      if (!dnn_generator.empty()) generator = load_network(std::filesystem::path(dnn_generator));
      auto labeled = [&](Split s) {
        auto m = select(rows, s);
        return LabeledSet{featurize(generator ? &*generator : nullptr, m.features), std::move(m.labels)};
      };
      const auto train = labeled(Split::kTrain);
      ClassifierSpec spec = cfg.classifier;
      spec.input_dim = static_cast<int>(train.features.rows());
      spec.classes = num_themes_in(cfg);
      const auto result = train_classifier(train, labeled(Split::kDev), labeled(Split::kTest), spec,
                                           dnn_common.seed.value_or(1));
      if (!dnn_out.empty()) save_network(result.params, std::filesystem::path(dnn_out));
      if (!dnn_history.empty()) {
        auto out = open_out(dnn_history);
        write_history(out, result.history);
      }
      const auto sel = real_and_max_test(result.history);
      std::cout << "dev " << sel.dev << " real_test " << sel.real_test << " max_test " << sel.max_test
                << " (epoch " << result.history[static_cast<std::size_t>(sel.best_epoch)].epoch << ")\n";
    } else if (run->parsed()) {
      auto cfg = run_common.config();
      if (run_common.seed) cfg.seeds = {*run_common.seed};
      const auto start = std::chrono::steady_clock::now();
      const auto report = run_experiment(cfg, [](std::string_view msg) { std::cerr << msg << '\n'; });
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      const auto table = render_report(report, ReportFormat::kText);
      std::cout << table;
      std::cerr << "finished in " << secs << " s\n";
      if (!run_json.empty()) open_out(run_json) << render_report(report, ReportFormat::kJson);
      if (!run_text.empty()) open_out(run_text) << table;
      return report.complete() ? 0 : 2;
    } else if (rep->parsed()) {
      std::ifstream in(rep_in);
      std::stringstream buffer;
      buffer << in.rdbuf();
      const auto report = parse_report(buffer.str());
      std::cout << render_report(report, rep_format == "json" ? ReportFormat::kJson : ReportFormat::kText);
      return report.complete() ? 0 : 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
