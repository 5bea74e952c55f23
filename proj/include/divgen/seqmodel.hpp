#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "divgen/priors.hpp"
#include "divgen/rng.hpp"
#include "divgen/tape.hpp"
#include "divgen/vocab.hpp"

namespace divgen {

struct ModelDims {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t latent_dim = 16;
  std::size_t feat_dim = 16;
  std::size_t K = 8;
  std::size_t L_max = 20;
};

using NamedParams = std::vector<std::pair<std::string, Parameter*>>;

// Single-layer gated recurrent cell (update and reset gates).
struct RecurrentCell {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  Parameter wz, uz, bz;
  Parameter wr, ur, br;
  Parameter wh, uh, bh;

  RecurrentCell() = default;
  RecurrentCell(std::size_t input_dim, std::size_t hidden_dim, Rng& rng);
  void collect(NamedParams& out, const std::string& prefix);
};

// Parameter nodes bound once per tape; step() reuses them every timestep.
struct CellNodes {
  Node wz, uz, bz, wr, ur, br, wh, uh, bh;

  CellNodes(Tape& tape, RecurrentCell& cell);
  Node step(Node x, Node h) const;
};

struct EncoderNet {
  ModelDims dims;
  Parameter embed;            // (V x E)
  Parameter w_feat, b_feat;   // (E x F), (E)
  Parameter w_clus, b_clus;   // (E x K), (E)
  RecurrentCell cell;         // E -> H
  std::vector<Parameter> w_mu, b_mu;  // K heads, (d x H), (d)
  std::vector<Parameter> w_lv, b_lv;

  EncoderNet() = default;
  EncoderNet(const ModelDims& dims, std::uint64_t seed);
  NamedParams named_parameters();
};

struct DecoderNet {
  ModelDims dims;
  Parameter embed;
  Parameter w_feat, b_feat;
  Parameter w_clus, b_clus;
  Parameter w_lat, b_lat;     // (E x d), (E)
  RecurrentCell cell;
  Parameter w_out, b_out;     // (V x H), (V)

  DecoderNet() = default;
  DecoderNet(const ModelDims& dims, std::uint64_t seed);
  NamedParams named_parameters();
};

struct PosteriorNodes {
  Node mu;
  Node log_var;
};

// Throws if the sequence exceeds L_max, holds invalid ids, or contains
// <start>/<end> sentinels.
void validate_sequence(const TokenSequence& x, std::size_t vocab_size,
                       std::size_t L_max);

std::vector<double> log_softmax(const Tensor& logits);

// Recurrence over [feat-proj, cluster-proj, token embeddings]; the final
// hidden state feeds the K head pairs. Additive combines heads with weights
// c_k (means) and c_k^2 (variances); fixed/gmm use head 0.
PosteriorNodes encode_nodes(Tape& tape, EncoderNet& enc,
                            const std::vector<double>& feat,
                            const ClusterVector& c, const TokenSequence& x,
                            PriorKind kind);
GaussianPosterior encode(EncoderNet& enc, const std::vector<double>& feat,
                         const ClusterVector& c, const TokenSequence& x,
                         PriorKind kind);

// Teacher-forced reconstruction loss over [feat, c, z, <start>, x...]:
// one cross-entropy term per sequence token plus the closing <end> token.
Node decode_logloss_node(Tape& tape, DecoderNet& dec,
                         const std::vector<double>& feat,
                         const ClusterVector& c, Node z,
                         const TokenSequence& x);
Node decode_logloss(Tape& tape, DecoderNet& dec,
                    const std::vector<double>& feat, const ClusterVector& c,
                    const std::vector<double>& z, const TokenSequence& x);

enum class DecodeMode { kGreedy, kSample };

// Autoregressive rollout; stops at <end> or L_max tokens. Greedy breaks
// ties toward the lowest vocabulary index.
TokenSequence generate(DecoderNet& dec, const std::vector<double>& feat,
                       const ClusterVector& c, const std::vector<double>& z,
                       DecodeMode mode, Rng& rng, std::size_t L_max);

struct BeamHypothesis {
  TokenSequence seq;
  double log_prob = 0.0;
};

// Beam search with the latent projection fed a zero vector. Completed
// hypotheses include the <end> log-probability, so scores match
// decode_logloss re-scoring exactly.
std::vector<BeamHypothesis> beam_search(DecoderNet& dec,
                                        const std::vector<double>& feat,
                                        const ClusterVector& c,
                                        std::size_t width, std::size_t L_max);

}  // namespace divgen
