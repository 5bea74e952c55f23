#include "divgen/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "divgen/version.hpp"

namespace divgen {

namespace {

using nlohmann::json;

const std::vector<std::string> kGlueWords = {"a", "the", "and", "near",
                                             "beside", "with"};
const std::vector<std::string> kConnectors = {"and", "near", "beside", "with"};

std::string scene_id(const std::string& split, std::size_t index) {
  std::ostringstream out;
  out << split << '-';
  std::string digits = std::to_string(index);
  for (std::size_t i = digits.size(); i < 6; ++i) out << '0';
  out << digits;
  return out.str();
}

}  // namespace

CategoryLexicon::CategoryLexicon(std::vector<CategoryEntry> entries)
    : entries_(std::move(entries)) {
  std::set<std::string> seen(kGlueWords.begin(), kGlueWords.end());
  for (std::size_t k = 0; k < entries_.size(); ++k) {
    const CategoryEntry& e = entries_[k];
    if (e.nouns.size() < 2 || e.nouns.size() > 4 || e.verb_phrases.empty() ||
        e.verb_phrases.size() > 2 || e.attributes.empty() ||
        e.attributes.size() > 2) {
      throw std::invalid_argument("lexicon entry out of shape: " + e.name);
    }
    std::vector<std::string> words = e.nouns;
    for (const std::string& vp : e.verb_phrases) {
      for (const std::string& w : split_words(vp)) words.push_back(w);
    }
    words.insert(words.end(), e.attributes.begin(), e.attributes.end());
    for (const std::string& w : words) {
      if (!seen.insert(w).second) {
        throw std::invalid_argument("lexicon word reused across categories: " + w);
      }
    }
    for (const std::string& n : e.nouns) noun_to_category_[n] = k;
  }
}

CategoryLexicon CategoryLexicon::default_lexicon() {
  return CategoryLexicon({
      {"dog", {"dog", "puppy", "hound"}, {"barks loudly", "runs around"}, {"furry", "playful"}},
      {"cat", {"cat", "kitten", "tabby"}, {"naps quietly", "purrs softly"}, {"sleepy", "striped"}},
      {"car", {"car", "sedan", "automobile"}, {"drives past", "idles nearby"}, {"shiny", "parked"}},
      {"person", {"person", "man", "woman"}, {"walks along", "smiles warmly"}, {"tall", "cheerful"}},
      {"boat", {"boat", "sailboat", "canoe"}, {"floats calmly", "sails away"}, {"wooden", "anchored"}},
      {"pizza", {"pizza", "slice", "flatbread"}, {"steams gently", "smells delicious"}, {"cheesy", "fresh"}},
      {"chair", {"chair", "stool", "armchair"}, {"stands empty", "rests inside"}, {"comfortable", "blue"}},
      {"kite", {"kite", "glider", "streamer"}, {"soars overhead", "flutters high"}, {"colorful", "windy"}},
  });
}

std::vector<std::string> CategoryLexicon::all_words() const {
  std::vector<std::string> words;
  for (const CategoryEntry& e : entries_) {
    words.insert(words.end(), e.nouns.begin(), e.nouns.end());
    for (const std::string& vp : e.verb_phrases) {
      for (const std::string& w : split_words(vp)) words.push_back(w);
    }
    words.insert(words.end(), e.attributes.begin(), e.attributes.end());
  }
  return words;
}

std::optional<std::size_t> CategoryLexicon::category_of_noun(
    const std::string& word) const {
  auto it = noun_to_category_.find(word);
  if (it == noun_to_category_.end()) return std::nullopt;
  return it->second;
}

std::vector<TokenSequence> SceneRecord::reference_sequences(
    const Vocabulary& v) const {
  std::vector<TokenSequence> out;
  out.reserve(references.size());
  for (const std::string& r : references) out.push_back(v.encode(r));
  return out;
}

ClusterVector cluster_vector_from_labels(const std::vector<std::size_t>& labels,
                                         std::size_t K) {
  if (labels.empty()) {
    throw std::invalid_argument("cluster_vector_from_labels: empty label set");
  }
  std::vector<double> w(K, 0.0);
  std::set<std::size_t> unique(labels.begin(), labels.end());
  for (std::size_t k : unique) {
    if (k >= K) throw std::out_of_range("category label out of range");
    w[k] = 1.0;
  }
  return ClusterVector(w);
}

std::vector<std::size_t> simulate_detector(
    const std::vector<std::size_t>& true_categories, std::size_t K,
    double miss_rate, double false_rate, Rng& rng) {
  if (miss_rate < 0.0 || miss_rate >= 1.0 || false_rate < 0.0 || false_rate >= 1.0) {
    throw std::invalid_argument("detector rates must lie in [0, 1)");
  }
  std::set<std::size_t> truth(true_categories.begin(), true_categories.end());
  std::vector<std::size_t> detected;
  for (std::size_t k = 0; k < K; ++k) {
    if (truth.count(k)) {
      if (!rng.bernoulli(miss_rate)) detected.push_back(k);
    } else {
      if (rng.bernoulli(false_rate)) detected.push_back(k);
    }
  }
  if (detected.empty() && !truth.empty()) {
    detected.push_back(*truth.rbegin());
  }
  return detected;
}

namespace {

std::string make_clause(const CategoryEntry& e, bool with_verb, Rng& rng) {
  std::string out = rng.bernoulli(0.5) ? "the" : "a";
  if (rng.bernoulli(0.5)) {
    out += ' ';
    out += e.attributes[rng.uniform_index(e.attributes.size())];
  }
  out += ' ';
  out += e.nouns[rng.uniform_index(e.nouns.size())];
  if (with_verb) {
    out += ' ';
    out += e.verb_phrases[rng.uniform_index(e.verb_phrases.size())];
  }
  return out;
}

std::string make_reference(const CategoryLexicon& lexicon,
                           const std::vector<std::size_t>& cats, Rng& rng) {
  // Nonempty random subset of the scene's categories, in randomized order.
  std::vector<std::size_t> mention;
  for (std::size_t c : cats) {
    if (rng.bernoulli(0.8)) mention.push_back(c);
  }
  if (mention.empty()) mention.push_back(cats[rng.uniform_index(cats.size())]);
  rng.shuffle(mention);

  std::string out = make_clause(lexicon[mention[0]], true, rng);
  for (std::size_t i = 1; i < mention.size(); ++i) {
    const std::string& conn = kConnectors[rng.uniform_index(kConnectors.size())];
    out += ' ';
    out += conn;
    out += ' ';
    // "and" may join a full clause; the prepositions take a bare noun phrase.
    const bool with_verb = conn == "and" && rng.bernoulli(0.5);
    out += make_clause(lexicon[mention[i]], with_verb, rng);
  }
  return out;
}

SceneRecord make_scene(const CorpusConfig& cfg, const CategoryLexicon& lexicon,
                       const std::vector<std::vector<double>>& feat_matrix,
                       const std::string& split, std::size_t index,
                       Rng& rng) {
  SceneRecord scene;
  scene.id = scene_id(split, index);

  const std::size_t n_cats = 1 + rng.uniform_index(3);
  std::vector<std::size_t> all(cfg.K);
  for (std::size_t k = 0; k < cfg.K; ++k) all[k] = k;
  rng.shuffle(all);
  scene.true_categories.assign(all.begin(), all.begin() + n_cats);
  std::sort(scene.true_categories.begin(), scene.true_categories.end());

  // Features are a projected [category indicator ; per-scene tag]. The tag
  // carries scene identity beyond the categories, so the cluster vector stays
  // the reliable category channel for the models.
  scene.feat.assign(cfg.feat_dim, 0.0);
  for (std::size_t k : scene.true_categories) {
    for (std::size_t i = 0; i < cfg.feat_dim; ++i) {
      scene.feat[i] += feat_matrix[i][k];
    }
  }
  const std::vector<double> tag = rng.normal_vector(cfg.K);
  for (std::size_t j = 0; j < cfg.K; ++j) {
    for (std::size_t i = 0; i < cfg.feat_dim; ++i) {
      scene.feat[i] += feat_matrix[i][cfg.K + j] * tag[j];
    }
  }
  for (std::size_t i = 0; i < cfg.feat_dim; ++i) {
    scene.feat[i] += rng.normal(0.0, cfg.feat_noise);
  }

  scene.references.reserve(cfg.refs_per_scene);
  for (std::size_t r = 0; r < cfg.refs_per_scene; ++r) {
    scene.references.push_back(
        make_reference(lexicon, scene.true_categories, rng));
  }
  return scene;
}

}  // namespace

CorpusSplit generate_corpus(const CorpusConfig& config,
                            const CategoryLexicon& lexicon) {
  if (config.K < 2) throw std::invalid_argument("generate_corpus: K must be >= 2");
  if (config.K != lexicon.size()) {
    throw std::invalid_argument("generate_corpus: lexicon size differs from K");
  }
  if (config.n_train < 1 || config.n_val < 1 || config.n_test < 1) {
    throw std::invalid_argument("generate_corpus: split counts must be >= 1");
  }
  if (config.refs_per_scene < 1) {
    throw std::invalid_argument("generate_corpus: refs_per_scene must be >= 1");
  }

  CorpusSplit corpus;
  corpus.config = config;

  // Fixed projection from [category indicator ; per-scene tag] to the
  // feature space; columns 0..K-1 serve the indicator, K..2K-1 the tag.
  Rng feat_rng(derive_seed(config.seed, "feat-matrix"));
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.K));
  std::vector<std::vector<double>> feat_matrix(
      config.feat_dim, std::vector<double>(2 * config.K));
  for (auto& mrow : feat_matrix) {
    for (double& x : mrow) x = feat_rng.normal(0.0, scale);
  }

  auto build_split = [&](const std::string& split, std::size_t count) {
    std::vector<SceneRecord> scenes;
    scenes.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      Rng rng(derive_seed(config.seed, "scene-" + split, i));
      scenes.push_back(make_scene(config, lexicon, feat_matrix, split, i, rng));
    }
    return scenes;
  };
  corpus.train = build_split("train", config.n_train);
  corpus.val = build_split("val", config.n_val);
  corpus.test = build_split("test", config.n_test);

  for (std::size_t i = 0; i < corpus.test.size(); ++i) {
    Rng rng(derive_seed(config.seed, "detector", i));
    corpus.test[i].detected_categories =
        simulate_detector(corpus.test[i].true_categories, config.K,
                          config.miss_rate, config.false_rate, rng);
  }

  std::vector<std::string> words;
  for (const SceneRecord& s : corpus.train) {
    for (const std::string& r : s.references) {
      for (const std::string& w : split_words(r)) words.push_back(w);
    }
  }
  corpus.vocab = Vocabulary::from_words(words);
  return corpus;
}

CorpusSplit generate_corpus(const CorpusConfig& config) {
  return generate_corpus(config, CategoryLexicon::default_lexicon());
}

namespace {

json config_to_json(const CorpusConfig& c) {
  return json{{"K", c.K},
              {"n_train", c.n_train},
              {"n_val", c.n_val},
              {"n_test", c.n_test},
              {"refs_per_scene", c.refs_per_scene},
              {"feat_dim", c.feat_dim},
              {"feat_noise", c.feat_noise},
              {"miss_rate", c.miss_rate},
              {"false_rate", c.false_rate},
              {"seed", c.seed}};
}

CorpusConfig config_from_json(const json& j) {
  CorpusConfig c;
  c.K = j.at("K").get<std::size_t>();
  c.n_train = j.at("n_train").get<std::size_t>();
  c.n_val = j.at("n_val").get<std::size_t>();
  c.n_test = j.at("n_test").get<std::size_t>();
  c.refs_per_scene = j.at("refs_per_scene").get<std::size_t>();
  c.feat_dim = j.at("feat_dim").get<std::size_t>();
  c.feat_noise = j.at("feat_noise").get<double>();
  c.miss_rate = j.at("miss_rate").get<double>();
  c.false_rate = j.at("false_rate").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

void write_split(const std::string& path, const std::string& split,
                 const CorpusConfig& cfg, const std::vector<SceneRecord>& scenes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open corpus file for writing: " + path);
  json header{{"type", "header"},
              {"format", "divgen-corpus"},
              {"version", 1},
              {"tool_version", kToolVersion},
              {"split", split},
              {"config", config_to_json(cfg)}};
  out << header.dump() << '\n';
  for (const SceneRecord& s : scenes) {
    json rec{{"type", "scene"},
             {"id", s.id},
             {"categories", s.true_categories},
             {"feat", s.feat},
             {"references", s.references}};
    if (split == "test") rec["detected"] = s.detected_categories;
    out << rec.dump() << '\n';
  }
  if (!out) throw std::runtime_error("failed writing corpus file: " + path);
}

std::pair<std::vector<SceneRecord>, CorpusConfig> read_split(
    const std::string& path, const std::string& split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("corpus file empty: " + path);
  }
  json header = json::parse(line);
  if (header.value("format", "") != "divgen-corpus" ||
      header.value("version", 0) != 1 || header.value("split", "") != split) {
    throw std::runtime_error("corpus header mismatch in " + path);
  }
  CorpusConfig cfg = config_from_json(header.at("config"));
  std::vector<SceneRecord> scenes;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    SceneRecord s;
    s.id = rec.at("id").get<std::string>();
    s.true_categories = rec.at("categories").get<std::vector<std::size_t>>();
    s.feat = rec.at("feat").get<std::vector<double>>();
    s.references = rec.at("references").get<std::vector<std::string>>();
    if (rec.contains("detected")) {
      s.detected_categories = rec.at("detected").get<std::vector<std::size_t>>();
    }
    scenes.push_back(std::move(s));
  }
  return {std::move(scenes), cfg};
}

}  // namespace

void save_corpus(const CorpusSplit& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_split(dir + "/train.jsonl", "train", corpus.config, corpus.train);
  write_split(dir + "/val.jsonl", "val", corpus.config, corpus.val);
  write_split(dir + "/test.jsonl", "test", corpus.config, corpus.test);
  corpus.vocab.save(dir + "/vocab.txt");
}

CorpusSplit load_corpus(const std::string& dir) {
  CorpusSplit corpus;
  auto [train, cfg_train] = read_split(dir + "/train.jsonl", "train");
  auto [val, cfg_val] = read_split(dir + "/val.jsonl", "val");
  auto [test, cfg_test] = read_split(dir + "/test.jsonl", "test");
  corpus.train = std::move(train);
  corpus.val = std::move(val);
  corpus.test = std::move(test);
  corpus.config = cfg_train;
  corpus.vocab = Vocabulary::load(dir + "/vocab.txt");
  return corpus;
}

}  // namespace divgen
