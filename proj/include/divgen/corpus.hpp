#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "divgen/priors.hpp"
#include "divgen/rng.hpp"
#include "divgen/vocab.hpp"

namespace divgen {

struct CategoryEntry {
  std::string name;
  std::vector<std::string> nouns;        // 2-4 synonyms
  std::vector<std::string> verb_phrases; // 1-2 two-word phrases
  std::vector<std::string> attributes;   // 1-2 words
};

// Word sets across categories must be pairwise disjoint so nouns identify
// their category; checked at construction.
class CategoryLexicon {
 public:
  explicit CategoryLexicon(std::vector<CategoryEntry> entries);
  static CategoryLexicon default_lexicon();

  std::size_t size() const { return entries_.size(); }
  const CategoryEntry& operator[](std::size_t k) const { return entries_[k]; }

  // All lexicon words as tokens (verb phrases split).
  std::vector<std::string> all_words() const;
  // Category index owning this noun, if any.
  std::optional<std::size_t> category_of_noun(const std::string& word) const;

 private:
  std::vector<CategoryEntry> entries_;
  std::unordered_map<std::string, std::size_t> noun_to_category_;
};

struct SceneRecord {
  std::string id;
  std::vector<std::size_t> true_categories;      // sorted, size 1-3
  std::vector<double> feat;
  std::vector<std::string> references;           // token strings, 5 per scene
  std::vector<std::size_t> detected_categories;  // test split only

  std::vector<TokenSequence> reference_sequences(const Vocabulary& v) const;
};

struct CorpusConfig {
  std::size_t K = 8;
  std::size_t n_train = 2000;
  std::size_t n_val = 200;
  std::size_t n_test = 200;
  std::size_t refs_per_scene = 5;
  std::size_t feat_dim = 16;
  double feat_noise = 0.05;
  double miss_rate = 0.1;
  double false_rate = 0.02;
  std::uint64_t seed = 1;
};

struct CorpusSplit {
  CorpusConfig config;
  std::vector<SceneRecord> train;
  std::vector<SceneRecord> val;
  std::vector<SceneRecord> test;
  Vocabulary vocab;  // built from train references only
};

ClusterVector cluster_vector_from_labels(const std::vector<std::size_t>& labels,
                                         std::size_t K);

std::vector<std::size_t> simulate_detector(
    const std::vector<std::size_t>& true_categories, std::size_t K,
    double miss_rate, double false_rate, Rng& rng);

CorpusSplit generate_corpus(const CorpusConfig& config,
                            const CategoryLexicon& lexicon);
CorpusSplit generate_corpus(const CorpusConfig& config);

// One JSONL file per split plus vocab.txt, each JSONL led by a header record.
void save_corpus(const CorpusSplit& corpus, const std::string& dir);
CorpusSplit load_corpus(const std::string& dir);

}  // namespace divgen
