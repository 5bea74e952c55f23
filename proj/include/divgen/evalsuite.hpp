#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "divgen/corpus.hpp"
#include "divgen/priors.hpp"

namespace divgen {

// Metrics compare surface word sequences; decode token ids through the
// vocabulary before scoring.
using Sentence = std::vector<std::string>;

std::string join_words(const Sentence& tokens);

struct Candidate {
  std::string provenance;  // "z=3", "beam=1", ...
  Sentence tokens;
};

// All candidates generated for one scene. Duplicates allowed; uniqueness is
// itself a metric.
struct CandidateSet {
  std::string scene_id;
  std::vector<Candidate> candidates;
};

// Throws std::invalid_argument on empty scene id or empty candidate list.
void validate_candidate_set(const CandidateSet& set);

// BLEU-n: geometric mean of clipped modified k-gram precisions for k = 1..n,
// brevity penalty exp(1 - r/c) for c < r with r = the reference length
// closest to c (ties toward the shorter reference). Empty candidate, or any
// zero precision, scores 0.
double bleu(const Sentence& candidate, const std::vector<Sentence>& references,
            int max_n);

// Document frequencies for CIDEr TF-IDF, fixed before scoring. One document
// is the pooled reference set of one scene.
class NgramStats {
 public:
  static constexpr int kMaxOrder = 4;

  static NgramStats from_documents(
      const std::vector<std::vector<Sentence>>& documents);
  static NgramStats from_scenes(const std::vector<SceneRecord>& scenes);

  std::size_t num_documents() const { return num_documents_; }
  // Number of documents whose references contain the n-gram at least once.
  std::size_t document_frequency(int order, const std::string& key) const;
  // log(N) - log(max(1, df)); n-grams absent from the corpus get log(N).
  double idf(int order, const std::string& key) const;

 private:
  std::size_t num_documents_ = 0;
  std::array<std::unordered_map<std::string, std::size_t>, kMaxOrder> df_;
};

// Mean over n = 1..4 of the average clipped TF-IDF cosine between candidate
// and each reference, with a Gaussian length penalty, scaled by 10. Empty
// candidate scores 0.
double cider(const Sentence& candidate, const std::vector<Sentence>& references,
             const NgramStats& stats);

// Field order mirrors the report columns.
struct MetricRow {
  double b4 = 0.0;
  double b3 = 0.0;
  double b2 = 0.0;
  double b1 = 0.0;
  double cider = 0.0;
};

MetricRow score_candidate(const Sentence& candidate,
                          const std::vector<Sentence>& references,
                          const NgramStats& stats);

using ReferenceMap = std::map<std::string, std::vector<Sentence>>;

// Oracle protocol: per scene and metric take the best candidate's score,
// then average over scenes.
MetricRow oracle_scores(const std::vector<CandidateSet>& sets,
                        const ReferenceMap& references,
                        const NgramStats& stats);

// Scores only the first candidate of each set, averaged over scenes. Pass
// consensus-ranked sets to evaluate re-ranked top-1 output.
MetricRow top1_scores(const std::vector<CandidateSet>& sets,
                      const ReferenceMap& references, const NgramStats& stats);

struct RankedCandidate {
  Candidate candidate;
  double consensus = 0.0;
  std::size_t original_index = 0;
};

// Ranks candidates by mean CIDEr against the pooled references of the
// m_neighbors training scenes whose cluster vectors are most similar to
// scene_clusters (cosine; neighbor ties broken by train index). The sort is
// stable: candidates with equal consensus keep their input order.
std::vector<RankedCandidate> consensus_rerank(
    const CandidateSet& set, const ClusterVector& scene_clusters,
    const std::vector<SceneRecord>& train, std::size_t m_neighbors,
    const NgramStats& train_stats);

struct DiversityMetrics {
  double unique_fraction = 0.0;
  double novel_fraction = 0.0;
};

// Exact-string set of all training references, whitespace-normalized.
std::set<std::string> training_sentence_set(
    const std::vector<SceneRecord>& train);

// unique_fraction: mean over scenes of distinct/total candidates.
// novel_fraction: fraction of the first top_m candidates per scene, pooled
// over scenes, absent from train_sentences. Pass consensus-ranked sets so
// "first top_m" means "top_m by consensus".
DiversityMetrics diversity_metrics(const std::vector<CandidateSet>& sets,
                                   const std::set<std::string>& train_sentences,
                                   std::size_t top_m);

}  // namespace divgen
