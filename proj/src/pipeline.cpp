#include "divgen/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <utility>

#include <json.hpp>

#include "divgen/seqmodel.hpp"
#include "divgen/version.hpp"

namespace divgen {
namespace {

using nlohmann::json;

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << content;
    if (!out) throw std::runtime_error("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("cannot rename " + tmp + " to " + path);
  }
}

const std::vector<SceneRecord>& split_of(const CorpusSplit& corpus,
                                         const std::string& name) {
  if (name == "train") return corpus.train;
  if (name == "val") return corpus.val;
  if (name == "test") return corpus.test;
  throw std::invalid_argument("unknown split: " + name +
                              " (expected train, val, or test)");
}

// Detector output where available (test split), otherwise ground truth.
const std::vector<std::size_t>& scene_labels(const SceneRecord& scene) {
  return scene.detected_categories.empty() ? scene.true_categories
                                           : scene.detected_categories;
}

double resolved_test_std(const std::optional<double>& requested,
                         const PriorSpec& prior) {
  if (requested) {
    if (*requested <= 0.0) {
      throw std::invalid_argument("test_std must be positive");
    }
    return *requested;
  }
  return prior.stds.at(0);
}

Sentence decoded_words(const Vocabulary& vocab, const TokenSequence& seq) {
  return split_words(vocab.decode(seq));
}

json candidate_header(const std::string& model,
                      const std::string& config_json) {
  return json{{"record", "header"},
              {"format", "divgen-candidates"},
              {"tool_version", kToolVersion},
              {"model", model},
              {"config", json::parse(config_json)}};
}

}  // namespace

CorpusSummary run_gen_corpus(const GenCorpusOptions& options) {
  if (options.out_dir.empty()) {
    throw std::invalid_argument("gen-corpus: output directory is required");
  }
  const CorpusSplit corpus = generate_corpus(options.corpus);
  save_corpus(corpus, options.out_dir);
  return {corpus.train.size(), corpus.val.size(), corpus.test.size(),
          corpus.vocab.size()};
}

TrainResult run_train(const TrainOptions& options) {
  const CorpusSplit corpus = load_corpus(options.corpus_dir);
  TrainConfig cfg = options.train;
  cfg.dims.K = corpus.config.K;
  cfg.dims.feat_dim = corpus.config.feat_dim;

  std::optional<ModelCheckpoint> resume;
  if (!options.resume_path.empty()) {
    resume = load_checkpoint(options.resume_path);
  }

  const std::string metrics_path = options.metrics_path.empty()
                                       ? options.out_path + ".metrics.jsonl"
                                       : options.metrics_path;
  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write " + metrics_path);

  TrainResult result = train(corpus.train, corpus.vocab, cfg, &metrics,
                             resume ? &*resume : nullptr);
  save_checkpoint(result.checkpoint, options.out_path);
  return result;
}

std::vector<CandidateSet> run_sample(const SampleOptions& options,
                                     std::ostream* warnings) {
  ModelCheckpoint ckpt = load_checkpoint(options.checkpoint_path);
  const CorpusSplit corpus = load_corpus(options.corpus_dir);
  const std::vector<SceneRecord>& split = split_of(corpus, options.split);
  if (options.n_z == 0) {
    throw std::invalid_argument("sample: n_z must be at least 1");
  }

  std::vector<const SceneRecord*> scenes;
  if (options.scene_ids.empty()) {
    for (const SceneRecord& s : split) scenes.push_back(&s);
  } else {
    std::map<std::string, const SceneRecord*> by_id;
    for (const SceneRecord& s : split) by_id[s.id] = &s;
    for (const std::string& id : options.scene_ids) {
      const auto it = by_id.find(id);
      if (it == by_id.end()) {
        throw std::invalid_argument("scene not found in split " +
                                    options.split + ": " + id);
      }
      scenes.push_back(it->second);
    }
  }
  std::sort(scenes.begin(), scenes.end(),
            [](const SceneRecord* a, const SceneRecord* b) {
              return a->id < b->id;
            });

  const bool latent = variant_uses_latent(ckpt.config.variant);
  double test_std = 0.0;
  if (latent) {
    if (!ckpt.prior) {
      throw std::runtime_error("checkpoint is missing its prior");
    }
    test_std = resolved_test_std(options.test_std, *ckpt.prior);
  } else if (warnings && (options.n_z_given || options.test_std)) {
    *warnings << "warning: lstm-baseline decodes with beam search; "
                 "--n-z and --test-std are ignored\n";
  }
  const std::size_t l_max = ckpt.config.dims.L_max;

  std::vector<CandidateSet> sets;
  sets.reserve(scenes.size());
  for (const SceneRecord* scene : scenes) {
    const ClusterVector c =
        cluster_vector_from_labels(scene_labels(*scene), corpus.config.K);
    CandidateSet set{scene->id, {}};
    if (latent) {
      Rng rng(derive_seed(options.seed, scene->id));
      for (std::size_t i = 0; i < options.n_z; ++i) {
        const LatentSample s = sample_prior(*ckpt.prior, c, test_std, rng);
        const TokenSequence seq =
            generate(ckpt.decoder, scene->feat, c, s.z, DecodeMode::kGreedy,
                     rng, l_max);
        set.candidates.push_back(
            {"z=" + std::to_string(i), decoded_words(corpus.vocab, seq)});
      }
    } else {
      const auto beam = beam_search(ckpt.decoder, scene->feat, c,
                                    options.beam_width, l_max);
      for (std::size_t rank = 0; rank < beam.size(); ++rank) {
        set.candidates.push_back(
            {"beam=" + std::to_string(rank + 1),
             decoded_words(corpus.vocab, beam[rank].seq)});
      }
    }
    sets.push_back(std::move(set));
  }

  if (!options.out_path.empty()) {
    const json config{
        {"checkpoint", options.checkpoint_path},
        {"corpus", options.corpus_dir},
        {"split", options.split},
        {"scene_ids", options.scene_ids},
        {"n_z", options.n_z},
        {"test_std", latent ? json(test_std) : json(nullptr)},
        {"beam_width", options.beam_width},
        {"seed", options.seed},
        {"epochs_completed", ckpt.epochs_completed},
        {"train_config", json::parse(train_config_json(ckpt.config))}};
    save_candidates(sets, to_string(ckpt.config.variant), config.dump(),
                    options.out_path);
  }
  return sets;
}

void save_candidates(const std::vector<CandidateSet>& sets,
                     const std::string& model,
                     const std::string& config_json, const std::string& path) {
  std::string content = candidate_header(model, config_json).dump();
  content += '\n';
  for (const CandidateSet& set : sets) {
    validate_candidate_set(set);
    for (const Candidate& cand : set.candidates) {
      const json record{{"record", "candidate"},
                        {"scene_id", set.scene_id},
                        {"provenance", cand.provenance},
                        {"tokens", join_words(cand.tokens)}};
      content += record.dump();
      content += '\n';
    }
  }
  write_file_atomic(path, content);
}

CandidateFile load_candidates(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("corrupt candidate file (empty): " + path);
  }
  CandidateFile file;
  try {
    const json header = json::parse(line);
    if (header.at("record") != "header" ||
        header.at("format") != "divgen-candidates") {
      throw std::runtime_error("corrupt candidate file (bad header): " + path);
    }
    file.model = header.at("model");

    std::map<std::string, std::size_t> index;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json record = json::parse(line);
      if (record.at("record") != "candidate") {
        throw std::runtime_error("corrupt candidate file (bad record): " +
                                 path);
      }
      const std::string scene_id = record.at("scene_id");
      const auto [it, inserted] = index.try_emplace(scene_id, file.sets.size());
      if (inserted) file.sets.push_back({scene_id, {}});
      file.sets[it->second].candidates.push_back(
          {record.at("provenance"), split_words(record.at("tokens"))});
    }
  } catch (const json::exception& e) {
    throw std::runtime_error("corrupt candidate file: " + path + ": " +
                             e.what());
  }
  std::sort(file.sets.begin(), file.sets.end(),
            [](const CandidateSet& a, const CandidateSet& b) {
              return a.scene_id < b.scene_id;
            });
  for (const CandidateSet& set : file.sets) validate_candidate_set(set);
  if (file.sets.empty()) {
    throw std::runtime_error("candidate file has no candidates: " + path);
  }
  return file;
}

std::vector<EvalRow> run_eval(const EvalOptions& options) {
  if (options.candidate_files.empty()) {
    throw std::invalid_argument("eval: at least one candidate file is required");
  }
  if (options.m_neighbors == 0 || options.top_m == 0) {
    throw std::invalid_argument("eval: m_neighbors and top_m must be at least 1");
  }
  const CorpusSplit corpus = load_corpus(options.corpus_dir);
  const std::vector<SceneRecord>& split = split_of(corpus, options.split);

  ReferenceMap references;
  std::map<std::string, const SceneRecord*> scenes_by_id;
  for (const SceneRecord& scene : split) {
    std::vector<Sentence> refs;
    refs.reserve(scene.references.size());
    for (const std::string& r : scene.references) refs.push_back(split_words(r));
    references[scene.id] = std::move(refs);
    scenes_by_id[scene.id] = &scene;
  }
  const NgramStats eval_stats = NgramStats::from_scenes(split);
  const NgramStats train_stats = NgramStats::from_scenes(corpus.train);
  const std::set<std::string> train_sentences =
      training_sentence_set(corpus.train);

  std::vector<EvalRow> rows;
  for (const std::string& path : options.candidate_files) {
    const CandidateFile file = load_candidates(path);
    std::vector<CandidateSet> ranked_sets;
    ranked_sets.reserve(file.sets.size());
    for (const CandidateSet& set : file.sets) {
      const auto scene = scenes_by_id.find(set.scene_id);
      if (scene == scenes_by_id.end()) {
        throw std::invalid_argument("candidate scene " + set.scene_id +
                                    " is not in split " + options.split);
      }
      const ClusterVector c = cluster_vector_from_labels(
          scene_labels(*scene->second), corpus.config.K);
      CandidateSet ranked{set.scene_id, {}};
      for (const RankedCandidate& rc :
           consensus_rerank(set, c, corpus.train, options.m_neighbors,
                            train_stats)) {
        ranked.candidates.push_back(rc.candidate);
      }
      ranked_sets.push_back(std::move(ranked));
    }
    EvalRow row;
    row.model = file.model;
    row.file = path;
    row.oracle = oracle_scores(file.sets, references, eval_stats);
    row.top1 = top1_scores(ranked_sets, references, eval_stats);
    row.diversity =
        diversity_metrics(ranked_sets, train_sentences, options.top_m);
    rows.push_back(std::move(row));
  }

  if (!options.out_path.empty()) {
    const json header{{"record", "header"},
                      {"format", "divgen-report"},
                      {"tool_version", kToolVersion},
                      {"config",
                       {{"corpus", options.corpus_dir},
                        {"candidates", options.candidate_files},
                        {"split", options.split},
                        {"m_neighbors", options.m_neighbors},
                        {"top_m", options.top_m}}}};
    std::string content = header.dump();
    content += '\n';
    for (const EvalRow& row : rows) {
      const auto metric_json = [](const MetricRow& m) {
        return json{{"b4", m.b4},
                    {"b3", m.b3},
                    {"b2", m.b2},
                    {"b1", m.b1},
                    {"cider", m.cider}};
      };
      const json record{{"record", "result"},
                        {"model", row.model},
                        {"file", row.file},
                        {"oracle", metric_json(row.oracle)},
                        {"consensus_top1", metric_json(row.top1)},
                        {"unique_fraction", row.diversity.unique_fraction},
                        {"novel_fraction", row.diversity.novel_fraction}};
      content += record.dump();
      content += '\n';
    }
    write_file_atomic(options.out_path, content);
  }
  return rows;
}

ControlReport run_control(const ControlOptions& options) {
  ModelCheckpoint ckpt = load_checkpoint(options.checkpoint_path);
  const ModelVariant variant = ckpt.config.variant;
  if (variant != ModelVariant::kGmmCvae && variant != ModelVariant::kAgCvae) {
    throw std::invalid_argument(
        "control requires a gmm-cvae or ag-cvae checkpoint, got " +
        to_string(variant));
  }
  if (!ckpt.prior) throw std::runtime_error("checkpoint is missing its prior");
  if (options.n_z == 0) {
    throw std::invalid_argument("control: n_z must be at least 1");
  }
  const CorpusSplit corpus = load_corpus(options.corpus_dir);
  const std::vector<SceneRecord>& split = split_of(corpus, options.split);
  const SceneRecord* scene = nullptr;
  for (const SceneRecord& s : split) {
    if (s.id == options.scene_id) scene = &s;
  }
  if (scene == nullptr) {
    throw std::invalid_argument("scene not found in split " + options.split +
                                ": " + options.scene_id);
  }

  const std::size_t K = corpus.config.K;
  const CategoryLexicon lexicon = CategoryLexicon::default_lexicon();
  ControlReport report;
  for (std::size_t k = 0; k < K; ++k) {
    report.category_names.push_back(lexicon[k].name);
  }
  const auto resolve = [&](const std::string& text) -> std::size_t {
    for (std::size_t k = 0; k < K; ++k) {
      if (report.category_names[k] == text) return k;
    }
    try {
      const std::size_t k = std::stoul(text);
      if (k < K) return k;
    } catch (const std::exception&) {
    }
    throw std::invalid_argument("unknown category: " + text);
  };

  std::set<std::size_t> edited(scene_labels(*scene).begin(),
                               scene_labels(*scene).end());
  for (const std::string& name : options.add) edited.insert(resolve(name));
  for (const std::string& name : options.remove) edited.erase(resolve(name));
  if (edited.empty()) {
    throw std::invalid_argument("edit removes all categories from the scene");
  }

  const double test_std = resolved_test_std(options.test_std, *ckpt.prior);
  const auto run_side = [&](const std::vector<std::size_t>& labels) {
    ControlSide side;
    side.labels = labels;
    side.noun_counts.assign(K, 0);
    const ClusterVector c = cluster_vector_from_labels(labels, K);
    // Both sides reuse the same stream, so an empty edit reproduces exactly.
    Rng rng(derive_seed(options.seed, "control"));
    std::set<std::string> seen;
    for (std::size_t i = 0; i < options.n_z; ++i) {
      const LatentSample s = sample_prior(*ckpt.prior, c, test_std, rng);
      const TokenSequence seq =
          generate(ckpt.decoder, scene->feat, c, s.z, DecodeMode::kGreedy, rng,
                   ckpt.config.dims.L_max);
      const std::string sentence = corpus.vocab.decode(seq);
      side.sentences.push_back(sentence);
      if (seen.insert(sentence).second) side.unique_sentences.push_back(sentence);
      for (const std::string& word : split_words(sentence)) {
        if (const auto k = lexicon.category_of_noun(word); k && *k < K) {
          ++side.noun_counts[*k];
        }
      }
    }
    return side;
  };

  std::vector<std::size_t> base = scene_labels(*scene);
  std::sort(base.begin(), base.end());
  report.before = run_side(base);
  report.after =
      run_side(std::vector<std::size_t>(edited.begin(), edited.end()));
  return report;
}

}  // namespace divgen
