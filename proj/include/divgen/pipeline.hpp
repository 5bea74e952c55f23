#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "divgen/corpus.hpp"
#include "divgen/evalsuite.hpp"
#include "divgen/training.hpp"

namespace divgen {

struct GenCorpusOptions {
  CorpusConfig corpus;
  std::string out_dir;
};

struct TrainOptions {
  TrainConfig train;
  std::string corpus_dir;
  std::string out_path;
  std::string metrics_path;  // empty: out_path + ".metrics.jsonl"
  std::string resume_path;   // empty: fresh run
};

struct SampleOptions {
  std::string checkpoint_path;
  std::string corpus_dir;
  std::string out_path;  // empty: no file written
  std::string split = "test";
  std::vector<std::string> scene_ids;  // empty: whole split
  std::size_t n_z = 20;
  bool n_z_given = false;
  std::optional<double> test_std;  // unset: the prior's configured std
  std::size_t beam_width = 10;     // lstm-baseline only
  std::uint64_t seed = 1;
};

struct EvalOptions {
  std::string corpus_dir;
  std::vector<std::string> candidate_files;
  std::string split = "test";
  std::size_t m_neighbors = 16;
  std::size_t top_m = 10;
  std::string out_path;  // empty: no report file
};

struct ControlOptions {
  std::string checkpoint_path;
  std::string corpus_dir;
  std::string scene_id;
  std::string split = "test";
  std::vector<std::string> add;     // category names or indices
  std::vector<std::string> remove;  // category names or indices
  std::size_t n_z = 20;
  std::optional<double> test_std;
  std::uint64_t seed = 1;
};

struct CorpusSummary {
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::size_t n_test = 0;
  std::size_t vocab_size = 0;
};

// Generates and saves a corpus; returns the printed summary counts.
CorpusSummary run_gen_corpus(const GenCorpusOptions& options);

// Trains (optionally resuming), writes the checkpoint and a JSONL metrics
// log, and returns the result. K and feat_dim always come from the corpus.
TrainResult run_train(const TrainOptions& options);

// Candidate sets in scene-id order. Latent variants draw n_z prior samples
// per scene and decode each greedily; the baseline emits one beam of
// hypotheses instead (a warning goes to *warnings if n_z or test_std was
// given). Writes out_path as JSONL when nonempty.
std::vector<CandidateSet> run_sample(const SampleOptions& options,
                                     std::ostream* warnings = nullptr);

struct CandidateFile {
  std::string model;  // variant name from the header
  std::vector<CandidateSet> sets;
};

// JSONL candidate file: a header record carrying the resolved config, then
// one record per candidate (scene id, provenance, token string).
void save_candidates(const std::vector<CandidateSet>& sets,
                     const std::string& model,
                     const std::string& config_json, const std::string& path);
CandidateFile load_candidates(const std::string& path);

struct EvalRow {
  std::string model;
  std::string file;
  MetricRow oracle;
  MetricRow top1;  // consensus-re-ranked top-1
  DiversityMetrics diversity;
};

// One row per candidate file, in input order.
std::vector<EvalRow> run_eval(const EvalOptions& options);

struct ControlSide {
  std::vector<std::size_t> labels;            // sorted category indices
  std::vector<std::string> sentences;         // all n_z candidates
  std::vector<std::string> unique_sentences;  // first-seen order
  std::vector<std::size_t> noun_counts;       // per category, over all samples
};

// Samples the same scene under its original cluster vector and under the
// edited one, reusing the same seed so an empty edit reproduces exactly.
struct ControlReport {
  std::vector<std::string> category_names;
  ControlSide before;
  ControlSide after;
};

ControlReport run_control(const ControlOptions& options);

}  // namespace divgen
