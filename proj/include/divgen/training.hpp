#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "divgen/corpus.hpp"
#include "divgen/priors.hpp"
#include "divgen/seqmodel.hpp"

namespace divgen {

// lstm-baseline is the decoder alone with a zeroed latent input; the three
// CVAE variants differ only in their prior.
enum class ModelVariant { kLstmBaseline, kCvae, kGmmCvae, kAgCvae };

std::string to_string(ModelVariant v);
ModelVariant model_variant_from_string(const std::string& name);
bool variant_uses_latent(ModelVariant v);
PriorKind variant_prior_kind(ModelVariant v);  // throws for the baseline

struct TrainConfig {
  ModelVariant variant = ModelVariant::kAgCvae;
  ModelDims dims;  // vocab_size is taken from the vocabulary at train time
  double sigma_train = 0.1;
  // Largest stable step size for per-example updates against the tightly
  // concentrated structured priors (their KL curvature is 1/sigma^2).
  double lr0 = 0.002;
  std::size_t epochs = 30;
  std::size_t halve_every = 5;
  double kl_weight = 1.0;
  std::uint64_t seed = 1;
};

void validate_train_config(const TrainConfig& cfg);

// lr0 * 2^-floor(epoch / halve_every), epochs counted from 0.
double learning_rate(const TrainConfig& cfg, std::size_t epoch);

// One (feature, cluster vector, reference) triple; scenes contribute one
// example per reference. Training always uses ground-truth categories.
struct TrainExample {
  std::vector<double> feat;
  ClusterVector c;
  TokenSequence x;
  std::string scene_id;
};

std::vector<TrainExample> flatten_examples(
    const std::vector<SceneRecord>& scenes, const Vocabulary& vocab,
    std::size_t K);

// z = mu + sigma (.) eps built on the tape from posterior nodes.
Node reparameterize(Tape& tape, const PosteriorNodes& post,
                    const std::vector<double>& eps);

struct ElboTerms {
  Node loss;  // rec + kl_weight * kl
  Node rec;
  Node kl;
};

// Deterministic core given the noise draw (and, for gmm, the component).
ElboTerms elbo_terms_with(Tape& tape, EncoderNet& enc, DecoderNet& dec,
                          const PriorSpec& spec, const std::vector<double>& feat,
                          const ClusterVector& c, const TokenSequence& x,
                          const std::vector<double>& eps,
                          std::size_t gmm_component, double kl_weight);

// Single-sample stochastic objective: draws eps ~ N(0, I) for the
// reparameterized z, and for the gmm prior a fresh component k ~ c.
ElboTerms elbo_terms(Tape& tape, EncoderNet& enc, DecoderNet& dec,
                     const PriorSpec& spec, const std::vector<double>& feat,
                     const ClusterVector& c, const TokenSequence& x, Rng& rng,
                     double kl_weight = 1.0);

Node elbo_loss(Tape& tape, EncoderNet& enc, DecoderNet& dec,
               const PriorSpec& spec, const std::vector<double>& feat,
               const ClusterVector& c, const TokenSequence& x, Rng& rng);

struct ModelCheckpoint {
  TrainConfig config;
  std::size_t epochs_completed = 0;
  Vocabulary vocab;
  std::optional<PriorSpec> prior;    // absent for the baseline
  std::optional<EncoderNet> encoder; // absent for the baseline
  DecoderNet decoder;
};

struct EpochStats {
  std::size_t epoch = 0;  // 0-based
  double lr = 0.0;
  double mean_rec = 0.0;
  double mean_kl = 0.0;
};

struct TrainResult {
  ModelCheckpoint checkpoint;
  std::vector<EpochStats> history;
};

// Per-example SGD over scenes x references, shuffled each epoch. Epoch e
// draws all randomness from streams derived from (seed, e), so resuming from
// a checkpoint reproduces an uninterrupted run exactly. cfg.epochs is the
// total target; resume must carry fewer completed epochs. Each history row
// is also written to metrics_log as one JSON line when the stream is given.
// A non-finite loss aborts with the offending example index.
TrainResult train(const std::vector<SceneRecord>& scenes,
                  const Vocabulary& vocab, const TrainConfig& cfg,
                  std::ostream* metrics_log = nullptr,
                  const ModelCheckpoint* resume = nullptr);

// Versioned, checksummed JSON written atomically (temp file then rename).
void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path);
ModelCheckpoint load_checkpoint(const std::string& path);

// Canonical JSON form of a train config, as embedded in checkpoints; other
// artifacts echo it for provenance.
std::string train_config_json(const TrainConfig& config);

}  // namespace divgen
