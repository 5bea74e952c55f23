#include "divgen/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace divgen {
namespace {

constexpr double kCiderScale = 10.0;
constexpr double kCiderSigma = 6.0;

using CountMap = std::unordered_map<std::string, std::size_t>;

// Words come from split_words and contain no spaces, so the joined key is
// collision-free across n-grams of the same order.
std::string ngram_key(const Sentence& s, std::size_t start, int order) {
  std::string key = s[start];
  for (int j = 1; j < order; ++j) {
    key += ' ';
    key += s[start + j];
  }
  return key;
}

CountMap ngram_counts(const Sentence& s, int order) {
  CountMap counts;
  if (s.size() >= static_cast<std::size_t>(order)) {
    for (std::size_t i = 0; i + order <= s.size(); ++i) {
      ++counts[ngram_key(s, i, order)];
    }
  }
  return counts;
}

void check_order(int order) {
  if (order < 1 || order > NgramStats::kMaxOrder) {
    throw std::invalid_argument("n-gram order must be in 1.." +
                                std::to_string(NgramStats::kMaxOrder));
  }
}

struct TfidfVector {
  std::array<std::unordered_map<std::string, double>, NgramStats::kMaxOrder>
      weights;
  std::array<double, NgramStats::kMaxOrder> norm{};
  double length = 0.0;
};

TfidfVector tfidf_vector(const Sentence& s, const NgramStats& stats) {
  TfidfVector vec;
  vec.length = static_cast<double>(s.size());
  for (int order = 1; order <= NgramStats::kMaxOrder; ++order) {
    double sq = 0.0;
    for (const auto& [key, count] : ngram_counts(s, order)) {
      const double w = static_cast<double>(count) * stats.idf(order, key);
      vec.weights[order - 1][key] = w;
      sq += w * w;
    }
    vec.norm[order - 1] = std::sqrt(sq);
  }
  return vec;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("cluster vectors differ in size");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

void accumulate_max(MetricRow& acc, const MetricRow& row) {
  acc.b4 = std::max(acc.b4, row.b4);
  acc.b3 = std::max(acc.b3, row.b3);
  acc.b2 = std::max(acc.b2, row.b2);
  acc.b1 = std::max(acc.b1, row.b1);
  acc.cider = std::max(acc.cider, row.cider);
}

void accumulate_sum(MetricRow& acc, const MetricRow& row) {
  acc.b4 += row.b4;
  acc.b3 += row.b3;
  acc.b2 += row.b2;
  acc.b1 += row.b1;
  acc.cider += row.cider;
}

MetricRow scale_row(const MetricRow& row, double factor) {
  return {row.b4 * factor, row.b3 * factor, row.b2 * factor, row.b1 * factor,
          row.cider * factor};
}

const std::vector<Sentence>& refs_for(const ReferenceMap& references,
                                      const std::string& scene_id) {
  const auto it = references.find(scene_id);
  if (it == references.end()) {
    throw std::invalid_argument("no references for scene " + scene_id);
  }
  if (it->second.empty()) {
    throw std::invalid_argument("empty reference list for scene " + scene_id);
  }
  return it->second;
}

}  // namespace

std::string join_words(const Sentence& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += ' ';
    out += tokens[i];
  }
  return out;
}

void validate_candidate_set(const CandidateSet& set) {
  if (set.scene_id.empty()) {
    throw std::invalid_argument("candidate set has empty scene id");
  }
  if (set.candidates.empty()) {
    throw std::invalid_argument("candidate set for scene " + set.scene_id +
                                " is empty");
  }
}

double bleu(const Sentence& candidate, const std::vector<Sentence>& references,
            int max_n) {
  if (max_n < 1) throw std::invalid_argument("bleu: max_n must be at least 1");
  if (references.empty()) throw std::invalid_argument("bleu: no references");
  if (candidate.empty()) return 0.0;

  const std::size_t c = candidate.size();
  const auto distance = [c](std::size_t len) {
    return len > c ? len - c : c - len;
  };
  std::size_t r = references.front().size();
  for (const Sentence& ref : references) {
    const std::size_t len = ref.size();
    if (distance(len) < distance(r) || (distance(len) == distance(r) && len < r)) {
      r = len;
    }
  }

  double log_precision_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    if (c < static_cast<std::size_t>(n)) return 0.0;
    CountMap max_ref_counts;
    for (const Sentence& ref : references) {
      for (const auto& [key, count] : ngram_counts(ref, n)) {
        std::size_t& slot = max_ref_counts[key];
        slot = std::max(slot, count);
      }
    }
    std::size_t clipped = 0;
    std::size_t total = 0;
    for (const auto& [key, count] : ngram_counts(candidate, n)) {
      total += count;
      const auto it = max_ref_counts.find(key);
      if (it != max_ref_counts.end()) clipped += std::min(count, it->second);
    }
    if (clipped == 0) return 0.0;
    log_precision_sum +=
        std::log(static_cast<double>(clipped) / static_cast<double>(total));
  }
  const double brevity =
      c >= r ? 1.0
             : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
  return brevity * std::exp(log_precision_sum / max_n);
}

NgramStats NgramStats::from_documents(
    const std::vector<std::vector<Sentence>>& documents) {
  NgramStats stats;
  stats.num_documents_ = documents.size();
  for (const auto& doc : documents) {
    for (int order = 1; order <= kMaxOrder; ++order) {
      std::set<std::string> seen;
      for (const Sentence& ref : doc) {
        for (const auto& [key, count] : ngram_counts(ref, order)) {
          seen.insert(key);
        }
      }
      for (const std::string& key : seen) ++stats.df_[order - 1][key];
    }
  }
  return stats;
}

NgramStats NgramStats::from_scenes(const std::vector<SceneRecord>& scenes) {
  std::vector<std::vector<Sentence>> documents;
  documents.reserve(scenes.size());
  for (const SceneRecord& scene : scenes) {
    std::vector<Sentence> refs;
    refs.reserve(scene.references.size());
    for (const std::string& r : scene.references) refs.push_back(split_words(r));
    documents.push_back(std::move(refs));
  }
  return from_documents(documents);
}

std::size_t NgramStats::document_frequency(int order,
                                           const std::string& key) const {
  check_order(order);
  const auto& m = df_[order - 1];
  const auto it = m.find(key);
  return it == m.end() ? 0 : it->second;
}

double NgramStats::idf(int order, const std::string& key) const {
  const double df = static_cast<double>(
      std::max<std::size_t>(1, document_frequency(order, key)));
  const double n = static_cast<double>(std::max<std::size_t>(1, num_documents_));
  return std::log(n) - std::log(df);
}

double cider(const Sentence& candidate, const std::vector<Sentence>& references,
             const NgramStats& stats) {
  if (references.empty()) throw std::invalid_argument("cider: no references");
  if (candidate.empty()) return 0.0;

  const TfidfVector hyp = tfidf_vector(candidate, stats);
  std::array<double, NgramStats::kMaxOrder> sums{};
  for (const Sentence& ref : references) {
    const TfidfVector rv = tfidf_vector(ref, stats);
    const double delta = hyp.length - rv.length;
    const double length_penalty =
        std::exp(-delta * delta / (2.0 * kCiderSigma * kCiderSigma));
    for (int idx = 0; idx < NgramStats::kMaxOrder; ++idx) {
      double dot = 0.0;
      for (const auto& [key, w] : hyp.weights[idx]) {
        const auto it = rv.weights[idx].find(key);
        if (it != rv.weights[idx].end()) dot += std::min(w, it->second) * it->second;
      }
      double sim = 0.0;
      if (hyp.norm[idx] > 0.0 && rv.norm[idx] > 0.0) {
        sim = dot / (hyp.norm[idx] * rv.norm[idx]);
      }
      sums[idx] += sim * length_penalty;
    }
  }
  double total = 0.0;
  for (const double s : sums) total += s / static_cast<double>(references.size());
  return kCiderScale * total / static_cast<double>(NgramStats::kMaxOrder);
}

MetricRow score_candidate(const Sentence& candidate,
                          const std::vector<Sentence>& references,
                          const NgramStats& stats) {
  MetricRow row;
  row.b4 = bleu(candidate, references, 4);
  row.b3 = bleu(candidate, references, 3);
  row.b2 = bleu(candidate, references, 2);
  row.b1 = bleu(candidate, references, 1);
  row.cider = cider(candidate, references, stats);
  return row;
}

MetricRow oracle_scores(const std::vector<CandidateSet>& sets,
                        const ReferenceMap& references,
                        const NgramStats& stats) {
  if (sets.empty()) throw std::invalid_argument("oracle_scores: no candidate sets");
  MetricRow mean;
  for (const CandidateSet& set : sets) {
    validate_candidate_set(set);
    const std::vector<Sentence>& refs = refs_for(references, set.scene_id);
    MetricRow best;
    for (const Candidate& cand : set.candidates) {
      accumulate_max(best, score_candidate(cand.tokens, refs, stats));
    }
    accumulate_sum(mean, best);
  }
  return scale_row(mean, 1.0 / static_cast<double>(sets.size()));
}

MetricRow top1_scores(const std::vector<CandidateSet>& sets,
                      const ReferenceMap& references, const NgramStats& stats) {
  if (sets.empty()) throw std::invalid_argument("top1_scores: no candidate sets");
  MetricRow mean;
  for (const CandidateSet& set : sets) {
    validate_candidate_set(set);
    const std::vector<Sentence>& refs = refs_for(references, set.scene_id);
    accumulate_sum(mean, score_candidate(set.candidates.front().tokens, refs, stats));
  }
  return scale_row(mean, 1.0 / static_cast<double>(sets.size()));
}

std::vector<RankedCandidate> consensus_rerank(
    const CandidateSet& set, const ClusterVector& scene_clusters,
    const std::vector<SceneRecord>& train, std::size_t m_neighbors,
    const NgramStats& train_stats) {
  validate_candidate_set(set);
  if (m_neighbors == 0) {
    throw std::invalid_argument("consensus_rerank: m_neighbors must be at least 1");
  }
  if (train.empty()) {
    throw std::invalid_argument("consensus_rerank: empty train corpus");
  }

  std::vector<std::pair<double, std::size_t>> similarity;
  similarity.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    const ClusterVector cv =
        cluster_vector_from_labels(train[i].true_categories, scene_clusters.size());
    similarity.emplace_back(cosine(scene_clusters.weights(), cv.weights()), i);
  }
  std::sort(similarity.begin(), similarity.end(),
            [](const auto& a, const auto& b) {
              if (a.first != b.first) return a.first > b.first;
              return a.second < b.second;
            });

  const std::size_t m = std::min(m_neighbors, train.size());
  std::vector<Sentence> pooled;
  for (std::size_t i = 0; i < m; ++i) {
    for (const std::string& r : train[similarity[i].second].references) {
      pooled.push_back(split_words(r));
    }
  }

  std::vector<RankedCandidate> ranked;
  ranked.reserve(set.candidates.size());
  for (std::size_t i = 0; i < set.candidates.size(); ++i) {
    ranked.push_back({set.candidates[i],
                      cider(set.candidates[i].tokens, pooled, train_stats), i});
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RankedCandidate& a, const RankedCandidate& b) {
                     return a.consensus > b.consensus;
                   });
  return ranked;
}

std::set<std::string> training_sentence_set(
    const std::vector<SceneRecord>& train) {
  std::set<std::string> sentences;
  for (const SceneRecord& scene : train) {
    for (const std::string& r : scene.references) {
      sentences.insert(join_words(split_words(r)));
    }
  }
  return sentences;
}

DiversityMetrics diversity_metrics(const std::vector<CandidateSet>& sets,
                                   const std::set<std::string>& train_sentences,
                                   std::size_t top_m) {
  if (sets.empty()) {
    throw std::invalid_argument("diversity_metrics: no candidate sets");
  }
  if (top_m == 0) {
    throw std::invalid_argument("diversity_metrics: top_m must be at least 1");
  }
  double unique_sum = 0.0;
  std::size_t pooled = 0;
  std::size_t novel = 0;
  for (const CandidateSet& set : sets) {
    validate_candidate_set(set);
    std::set<std::string> distinct;
    for (const Candidate& cand : set.candidates) {
      distinct.insert(join_words(cand.tokens));
    }
    unique_sum += static_cast<double>(distinct.size()) /
                  static_cast<double>(set.candidates.size());
    const std::size_t take = std::min(top_m, set.candidates.size());
    for (std::size_t i = 0; i < take; ++i) {
      ++pooled;
      if (train_sentences.count(join_words(set.candidates[i].tokens)) == 0) {
        ++novel;
      }
    }
  }
  return {unique_sum / static_cast<double>(sets.size()),
          static_cast<double>(novel) / static_cast<double>(pooled)};
}

}  // namespace divgen
