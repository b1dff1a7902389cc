#include "m2h/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <optional>
#include <utility>

#include <json.hpp>

#include "m2h/error.hpp"

namespace m2h {

using nlohmann::json;

std::string_view to_string(Channel channel) { return channel == Channel::kTrs ? "trs" : "asr"; }

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kDev:
      return "dev";
    case Split::kTest:
      return "test";
  }
  return "?";
}

Channel parse_channel(std::string_view text) {
  if (text == "trs" || text == "TRS") return Channel::kTrs;
  if (text == "asr" || text == "ASR") return Channel::kAsr;
  throw ConfigError("unknown channel '" + std::string(text) + "'");
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "dev") return Split::kDev;
  if (text == "test") return Split::kTest;
  throw ConfigError("unknown split '" + std::string(text) + "'");
}

std::vector<Document> ParallelCorpus::documents(Channel channel, Split split) const {
  std::vector<Document> out;
  for (const auto& pair : pairs) {
    if (pair.split == split) out.push_back(channel == Channel::kTrs ? pair.trs : pair.asr);
  }
  return out;
}

std::size_t ParallelCorpus::count(Split split) const {
  return static_cast<std::size_t>(
      std::count_if(pairs.begin(), pairs.end(), [split](const DocumentPair& p) { return p.split == split; }));
}

namespace {

void validate_document(const Document& doc, int vocab_size, int num_themes) {
  if (doc.tokens.empty()) throw ConfigError("document " + std::to_string(doc.id) + " has no tokens");
  if (doc.theme < 0 || doc.theme >= num_themes) {
    throw ConfigError("document " + std::to_string(doc.id) + " has theme out of range");
  }
  for (int token : doc.tokens) {
    if (token < 0 || token >= vocab_size) {
      throw ConfigError("document " + std::to_string(doc.id) + " has token index " + std::to_string(token) +
                        " outside vocabulary of size " + std::to_string(vocab_size));
    }
  }
}

}  // namespace

void ParallelCorpus::validate() const {
  if (vocabulary.empty()) throw ConfigError("corpus vocabulary is empty");
  if (theme_names.empty()) throw ConfigError("corpus has no themes");
  for (const auto& pair : pairs) {
    if (pair.trs.id != pair.asr.id || pair.trs.theme != pair.asr.theme) {
      throw ConfigError("pair " + std::to_string(pair.trs.id) + " is misaligned");
    }
    if (pair.trs.channel != Channel::kTrs || pair.asr.channel != Channel::kAsr) {
      throw ConfigError("pair " + std::to_string(pair.trs.id) + " has wrong channel tags");
    }
    validate_document(pair.trs, vocab_size(), num_themes());
    validate_document(pair.asr, vocab_size(), num_themes());
  }
}

// ---------------------------------------------------------------------------
// Noise channel

void NoiseModel::validate() const {
  for (double r : {substitution_rate, deletion_rate, insertion_rate, confusion_bias}) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("noise rates must lie in [0, 1]");
  }
  if (expected_wer() > 1.0 + 1e-12) {
    throw ConfigError("substitution + deletion + insertion rates exceed 1");
  }
}

ConfusionSets ConfusionSets::random(int vocab_size, int per_word, std::uint64_t seed) {
  if (vocab_size < 2 || per_word < 1 || per_word >= vocab_size) {
    throw ConfigError("confusion sets need vocab >= 2 and 1 <= per_word < vocab");
  }
  Rng rng(seed);
  std::uniform_int_distribution<int> pick(0, vocab_size - 2);
  ConfusionSets sets;
  sets.neighbours.resize(static_cast<std::size_t>(vocab_size));
  for (int w = 0; w < vocab_size; ++w) {
    auto& list = sets.neighbours[static_cast<std::size_t>(w)];
    while (static_cast<int>(list.size()) < per_word) {
      int v = pick(rng);
      if (v >= w) ++v;  // never the word itself
      if (std::find(list.begin(), list.end(), v) == list.end()) list.push_back(v);
    }
  }
  return sets;
}

NoisyDocument apply_asr_noise(const Document& doc, const NoiseModel& model, int vocab_size, Rng& rng,
                              const ConfusionSets* confusion) {
  model.validate();
  if (doc.channel != Channel::kTrs) throw ConfigError("noise must be applied to a TRS document");
  if (doc.tokens.empty()) throw ConfigError("cannot degrade an empty document");
  if (vocab_size < 2 && (model.substitution_rate > 0 || model.insertion_rate > 0)) {
    throw ConfigError("substitution and insertion need a vocabulary of at least 2 words");
  }
  if (model.confusion_bias > 0 && confusion == nullptr) {
    throw ConfigError("confusion_bias > 0 requires confusion sets");
  }

  std::uniform_int_distribution<int> any_word(0, std::max(vocab_size - 1, 0));
  std::uniform_int_distribution<int> other_word(0, std::max(vocab_size - 2, 0));
  auto substitute = [&](int original) {
    if (confusion != nullptr && model.confusion_bias > 0 && uniform01(rng) < model.confusion_bias) {
      const auto& list = confusion->neighbours.at(static_cast<std::size_t>(original));
      return list[std::uniform_int_distribution<std::size_t>(0, list.size() - 1)(rng)];
    }
    int v = other_word(rng);
    return v >= original ? v + 1 : v;
  };

  const std::size_t n = doc.tokens.size();
  constexpr int kDeleted = -1;
  std::vector<int> emitted(n);
  // (gap after token j, inserted word), in draw order
  std::vector<std::pair<std::size_t, int>> insertions;

  const double del = model.deletion_rate;
  const double sub = model.substitution_rate;
  for (std::size_t j = 0; j < n; ++j) {
    const double u = uniform01(rng);
    if (u < del) {
      emitted[j] = kDeleted;
    } else if (u < del + sub) {
      emitted[j] = substitute(doc.tokens[j]);
    } else {
      emitted[j] = doc.tokens[j];
    }
    if (model.insertion_rate > 0 && uniform01(rng) < model.insertion_rate) {
      insertions.emplace_back(j, any_word(rng));
    }
  }

  NoisyDocument result;
  if (insertions.empty() && std::ranges::all_of(emitted, [](int t) { return t == kDeleted; })) {
    const std::size_t keep = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    emitted[keep] = doc.tokens[keep];
    result.truncated = true;
  }

  // Insertions that land beside a deleted word move to the nearest gap
  // between two surviving words (or after a surviving last word).
  std::vector<std::size_t> clean;
  for (std::size_t j = 0; j < n; ++j) {
    if (emitted[j] != kDeleted && (j + 1 == n || emitted[j + 1] != kDeleted)) clean.push_back(j);
  }
  if (!clean.empty()) {
    for (auto& [gap, word] : insertions) {
      auto it = std::ranges::lower_bound(clean, gap);
      if (it != clean.end() && *it == gap) continue;
      if (it == clean.end()) {
        gap = clean.back();
      } else if (it == clean.begin()) {
        gap = *it;
      } else {
        const std::size_t before = *std::prev(it);
        gap = gap - before <= *it - gap ? before : *it;
      }
    }
    std::ranges::stable_sort(insertions, {}, &std::pair<std::size_t, int>::first);
  }

  result.document.id = doc.id;
  result.document.theme = doc.theme;
  result.document.channel = Channel::kAsr;
  auto& out = result.document.tokens;
  out.reserve(n + insertions.size());
  auto next = insertions.begin();
  for (std::size_t j = 0; j < n; ++j) {
    if (emitted[j] != kDeleted) out.push_back(emitted[j]);
    for (; next != insertions.end() && next->first == j; ++next) out.push_back(next->second);
  }
  return result;
}

std::size_t word_edit_distance(std::span<const int> reference, std::span<const int> hypothesis) {
  const std::size_t m = hypothesis.size();
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= reference.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = prev[j - 1] + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1);
      cur[j] = std::min({diag, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double measure_wer(const Document& reference, const Document& hypothesis) {
  if (reference.tokens.empty()) throw ConfigError("WER is undefined for an empty reference");
  return static_cast<double>(word_edit_distance(reference.tokens, hypothesis.tokens)) /
         static_cast<double>(reference.tokens.size());
}

double corpus_wer(const ParallelCorpus& corpus, Split split) {
  std::size_t edits = 0, words = 0;
  for (const auto& pair : corpus.pairs) {
    if (pair.split != split) continue;
    edits += word_edit_distance(pair.trs.tokens, pair.asr.tokens);
    words += pair.trs.tokens.size();
  }
  if (words == 0) throw ConfigError("split " + std::string(to_string(split)) + " is empty");
  return static_cast<double>(edits) / static_cast<double>(words);
}

// ---------------------------------------------------------------------------
// Synthetic generation

CorpusConfig CorpusConfig::decoda_shaped() {
  CorpusConfig c;
  c.themes = {
      {"problems of itinerary", {145, 44, 67}}, {"lost and found", {143, 33, 63}},
      {"time schedules", {47, 7, 18}},          {"transportation cards", {106, 24, 47}},
      {"state of the traffic", {202, 45, 90}},  {"fares", {19, 9, 11}},
      {"infractions", {47, 4, 18}},             {"special offers", {31, 9, 13}},
  };
  const NoiseModel noise{0.30, 0.15, 0.05, 0.0};
  c.noise = {noise, noise, noise};
  return c;
}

void CorpusConfig::validate() const {
  if (themes.empty()) throw ConfigError("corpus config has no themes");
  for (const auto& theme : themes) {
    const int total = theme.per_split[0] + theme.per_split[1] + theme.per_split[2];
    if (total <= 0) throw ConfigError("theme '" + theme.name + "' has zero documents");
    for (int n : theme.per_split) {
      if (n < 0) throw ConfigError("theme '" + theme.name + "' has a negative count");
    }
  }
  if (vocab_size <= 0) throw ConfigError("vocabulary is empty");
  if (min_doc_length < 1 || max_doc_length < min_doc_length) {
    throw ConfigError("document length range must satisfy 1 <= min <= max");
  }
  if (!(theme_sharpness > 0)) throw ConfigError("theme_sharpness must be positive");
  if (!(background_concentration > 0)) throw ConfigError("background_concentration must be positive");
  if (!(background_mix >= 0 && background_mix <= 1)) throw ConfigError("background_mix must lie in [0, 1]");
  if (!(subtopic_mix >= 0 && subtopic_mix <= 1)) throw ConfigError("subtopic_mix must lie in [0, 1]");
  for (const auto& n : noise) n.validate();
  const bool wants_confusion =
      std::any_of(noise.begin(), noise.end(), [](const NoiseModel& n) { return n.confusion_bias > 0; });
  if (wants_confusion && confusable_per_word < 1) {
    throw ConfigError("confusion_bias > 0 requires confusable_per_word >= 1");
  }
}

namespace {

// Symmetric Dirichlet draw computed in log space so that tiny concentrations
// (very sharp themes) do not underflow to an all-zero vector.
std::vector<double> sample_dirichlet(int size, double concentration, Rng& rng) {
  std::gamma_distribution<double> gamma(concentration + 1.0, 1.0);
  std::vector<double> log_g(static_cast<std::size_t>(size));
  for (auto& v : log_g) {
    double u = uniform01(rng);
    while (u <= 0.0) u = uniform01(rng);
    v = std::log(gamma(rng)) + std::log(u) / concentration;
  }
  const double max = *std::max_element(log_g.begin(), log_g.end());
  double total = 0.0;
  for (auto& v : log_g) {
    v = std::exp(v - max);
    total += v;
  }
  for (auto& v : log_g) v /= total;
  return log_g;
}

}  // namespace

ParallelCorpus generate_synthetic_corpus(const CorpusConfig& config, std::uint64_t seed) {
  config.validate();
  const int num_themes = static_cast<int>(config.themes.size());
  const int vocab = config.vocab_size;

  ParallelCorpus corpus;
  corpus.vocabulary.reserve(static_cast<std::size_t>(vocab));
  for (int w = 0; w < vocab; ++w) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "w%05d", w);
    corpus.vocabulary.emplace_back(buf);
  }
  for (const auto& theme : config.themes) corpus.theme_names.push_back(theme.name);

  Rng dist_rng = make_rng(seed, {1});
  const auto background = sample_dirichlet(vocab, config.background_concentration, dist_rng);
  std::discrete_distribution<int> background_words(background.begin(), background.end());
  std::vector<std::discrete_distribution<int>> theme_words;
  for (int k = 0; k < num_themes; ++k) {
    const auto phi = sample_dirichlet(vocab, 1.0 / config.theme_sharpness, dist_rng);
    theme_words.emplace_back(phi.begin(), phi.end());
  }

  ConfusionSets confusion;
  if (config.confusable_per_word > 0 && vocab >= 2) {
    confusion = ConfusionSets::random(vocab, config.confusable_per_word, derive_seed(seed, {2}));
  }
  const ConfusionSets* confusion_ptr = confusion.neighbours.empty() ? nullptr : &confusion;

  Rng doc_rng = make_rng(seed, {3});
  Rng noise_rng = make_rng(seed, {4});
  std::uniform_int_distribution<int> length(config.min_doc_length, config.max_doc_length);
  std::uniform_int_distribution<int> other_theme(0, std::max(num_themes - 2, 0));

  std::uint32_t next_id = 0;
  for (Split split : kAllSplits) {
    std::vector<int> themes;
    for (int k = 0; k < num_themes; ++k) {
      themes.insert(themes.end(), static_cast<std::size_t>(config.themes[static_cast<std::size_t>(k)]
                                                               .per_split[static_cast<std::size_t>(split)]),
                    k);
    }
    std::shuffle(themes.begin(), themes.end(), doc_rng);

    for (int theme : themes) {
      Document trs;
      trs.id = next_id++;
      trs.theme = theme;
      trs.channel = Channel::kTrs;
      int secondary = theme;
      if (num_themes > 1) {
        secondary = other_theme(doc_rng);
        if (secondary >= theme) ++secondary;
      }
      const int len = length(doc_rng);
      trs.tokens.reserve(static_cast<std::size_t>(len));
      for (int n = 0; n < len; ++n) {
        if (uniform01(doc_rng) < config.background_mix) {
          trs.tokens.push_back(background_words(doc_rng));
        } else if (uniform01(doc_rng) < config.subtopic_mix) {
          trs.tokens.push_back(theme_words[static_cast<std::size_t>(secondary)](doc_rng));
        } else {
          trs.tokens.push_back(theme_words[static_cast<std::size_t>(theme)](doc_rng));
        }
      }
      auto noisy = apply_asr_noise(trs, config.noise[static_cast<std::size_t>(split)], vocab, noise_rng,
                                   confusion_ptr);
      corpus.pairs.push_back(DocumentPair{std::move(trs), std::move(noisy.document), split});
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Corpus file: JSON lines. Line 1 is the vocabulary header, each following
// line one document.

void save_corpus(const ParallelCorpus& corpus, std::ostream& out) {
  json header = {{"format", "m2h-corpus"},
                 {"version", 1},
                 {"vocabulary", corpus.vocabulary},
                 {"themes", corpus.theme_names}};
  out << header.dump() << '\n';
  for (const auto& pair : corpus.pairs) {
    for (const Document* doc : {&pair.trs, &pair.asr}) {
      json record = {{"id", doc->id},
                     {"theme", doc->theme},
                     {"channel", to_string(doc->channel)},
                     {"split", to_string(pair.split)},
                     {"tokens", doc->tokens}};
      out << record.dump() << '\n';
    }
  }
}

void save_corpus(const ParallelCorpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  save_corpus(corpus, out);
  if (!out) throw ConfigError("failed writing " + path.string());
}

ParallelCorpus load_corpus(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  ParallelCorpus corpus;

  bool have_header = false;
  while (!have_header && std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json header;
    try {
      header = json::parse(line);
      if (header.at("format").get<std::string>() != "m2h-corpus") {
        throw ParseError("missing vocabulary header", line_no);
      }
      if (header.at("version").get<int>() != 1) throw ParseError("unsupported corpus version", line_no);
      corpus.vocabulary = header.at("vocabulary").get<std::vector<std::string>>();
      corpus.theme_names = header.at("themes").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw ParseError(std::string("missing vocabulary header (") + e.what() + ")", line_no);
    }
    if (corpus.vocabulary.empty()) throw ParseError("vocabulary header lists no words", line_no);
    if (corpus.theme_names.empty()) throw ParseError("vocabulary header lists no themes", line_no);
    have_header = true;
  }
  if (!have_header) throw ParseError("missing vocabulary header", line_no == 0 ? 1 : line_no);

  struct Slot {
    std::optional<Document> trs, asr;
    Split split{};
    std::size_t first_line = 0;
  };
  std::map<std::uint32_t, std::size_t> slot_of;
  std::vector<Slot> slots;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Document doc;
    Split split{};
    try {
      const json record = json::parse(line);
      doc.id = record.at("id").get<std::uint32_t>();
      doc.theme = record.at("theme").get<int>();
      doc.channel = parse_channel(record.at("channel").get<std::string>());
      split = parse_split(record.at("split").get<std::string>());
      doc.tokens = record.at("tokens").get<std::vector<int>>();
    } catch (const json::exception& e) {
      throw ParseError(std::string("malformed document record: ") + e.what(), line_no);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), line_no);
    }
    if (doc.tokens.empty()) throw ParseError("document has no tokens", line_no);
    if (doc.theme < 0 || doc.theme >= corpus.num_themes()) throw ParseError("theme out of range", line_no);
    for (int token : doc.tokens) {
      if (token < 0 || token >= corpus.vocab_size()) {
        throw ParseError("token index " + std::to_string(token) + " outside vocabulary of size " +
                             std::to_string(corpus.vocab_size()),
                         line_no);
      }
    }

    auto [it, inserted] = slot_of.try_emplace(doc.id, slots.size());
    if (inserted) {
      slots.push_back(Slot{});
      slots.back().split = split;
      slots.back().first_line = line_no;
    }
    Slot& slot = slots[it->second];
    auto& target = doc.channel == Channel::kTrs ? slot.trs : slot.asr;
    if (target) throw ParseError("duplicate " + std::string(to_string(doc.channel)) + " document", line_no);
    const auto& twin = doc.channel == Channel::kTrs ? slot.asr : slot.trs;
    if (twin && (twin->theme != doc.theme || slot.split != split)) {
      throw ParseError("document disagrees with its twin on theme or split", line_no);
    }
    target = std::move(doc);
  }

  for (auto& slot : slots) {
    if (!slot.trs || !slot.asr) throw ParseError("document has no twin in the other channel", slot.first_line);
    corpus.pairs.push_back(DocumentPair{std::move(*slot.trs), std::move(*slot.asr), slot.split});
  }
  return corpus;
}

ParallelCorpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  return load_corpus(in);
}

}  // namespace m2h
