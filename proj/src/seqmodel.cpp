#include "divgen/seqmodel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace divgen {

namespace {

Parameter make_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(cols));
  std::vector<double> data(rows * cols);
  for (double& x : data) x = rng.uniform(-s, s);
  return Parameter(Tensor({rows, cols}, std::move(data)));
}

Parameter make_bias(std::size_t n) { return Parameter(Tensor({n})); }

void check_feat(const std::vector<double>& feat, const ModelDims& dims) {
  if (feat.size() != dims.feat_dim) {
    throw std::invalid_argument("feature vector dimension mismatch");
  }
}

void check_cluster(const ClusterVector& c, const ModelDims& dims) {
  if (c.size() != dims.K) {
    throw std::invalid_argument("cluster vector dimension mismatch");
  }
}

}  // namespace

std::vector<double> log_softmax(const Tensor& logits) {
  const std::size_t n = logits.numel();
  double maxv = logits[0];
  for (std::size_t i = 1; i < n; ++i) maxv = std::max(maxv, logits[i]);
  double denom = 0.0;
  for (std::size_t i = 0; i < n; ++i) denom += std::exp(logits[i] - maxv);
  const double lse = maxv + std::log(denom);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = logits[i] - lse;
  return out;
}

RecurrentCell::RecurrentCell(std::size_t input_dim_, std::size_t hidden_dim_,
                             Rng& rng)
    : input_dim(input_dim_),
      hidden_dim(hidden_dim_),
      wz(make_matrix(hidden_dim_, input_dim_, rng)),
      uz(make_matrix(hidden_dim_, hidden_dim_, rng)),
      bz(make_bias(hidden_dim_)),
      wr(make_matrix(hidden_dim_, input_dim_, rng)),
      ur(make_matrix(hidden_dim_, hidden_dim_, rng)),
      br(make_bias(hidden_dim_)),
      wh(make_matrix(hidden_dim_, input_dim_, rng)),
      uh(make_matrix(hidden_dim_, hidden_dim_, rng)),
      bh(make_bias(hidden_dim_)) {}

void RecurrentCell::collect(NamedParams& out, const std::string& prefix) {
  out.emplace_back(prefix + ".wz", &wz);
  out.emplace_back(prefix + ".uz", &uz);
  out.emplace_back(prefix + ".bz", &bz);
  out.emplace_back(prefix + ".wr", &wr);
  out.emplace_back(prefix + ".ur", &ur);
  out.emplace_back(prefix + ".br", &br);
  out.emplace_back(prefix + ".wh", &wh);
  out.emplace_back(prefix + ".uh", &uh);
  out.emplace_back(prefix + ".bh", &bh);
}

CellNodes::CellNodes(Tape& tape, RecurrentCell& cell)
    : wz(tape.param(cell.wz)),
      uz(tape.param(cell.uz)),
      bz(tape.param(cell.bz)),
      wr(tape.param(cell.wr)),
      ur(tape.param(cell.ur)),
      br(tape.param(cell.br)),
      wh(tape.param(cell.wh)),
      uh(tape.param(cell.uh)),
      bh(tape.param(cell.bh)) {}

Node CellNodes::step(Node x, Node h) const {
  Node zg = sigmoid(add(add(matmul(wz, x), matmul(uz, h)), bz));
  Node rg = sigmoid(add(add(matmul(wr, x), matmul(ur, h)), br));
  Node hc = tanh(add(add(matmul(wh, x), matmul(uh, mul(rg, h))), bh));
  // (1 - z) h + z hc, written as h + z (hc - h).
  return add(h, mul(zg, sub(hc, h)));
}

EncoderNet::EncoderNet(const ModelDims& dims_, std::uint64_t seed)
    : dims(dims_) {
  Rng rng(derive_seed(seed, "encoder"));
  embed = make_matrix(dims.vocab_size, dims.embed_dim, rng);
  w_feat = make_matrix(dims.embed_dim, dims.feat_dim, rng);
  b_feat = make_bias(dims.embed_dim);
  w_clus = make_matrix(dims.embed_dim, dims.K, rng);
  b_clus = make_bias(dims.embed_dim);
  cell = RecurrentCell(dims.embed_dim, dims.hidden_dim, rng);
  w_mu.reserve(dims.K);
  b_mu.reserve(dims.K);
  w_lv.reserve(dims.K);
  b_lv.reserve(dims.K);
  for (std::size_t k = 0; k < dims.K; ++k) {
    w_mu.push_back(make_matrix(dims.latent_dim, dims.hidden_dim, rng));
    b_mu.push_back(make_bias(dims.latent_dim));
    w_lv.push_back(make_matrix(dims.latent_dim, dims.hidden_dim, rng));
    b_lv.push_back(make_bias(dims.latent_dim));
  }
}

NamedParams EncoderNet::named_parameters() {
  NamedParams out;
  out.emplace_back("enc.embed", &embed);
  out.emplace_back("enc.w_feat", &w_feat);
  out.emplace_back("enc.b_feat", &b_feat);
  out.emplace_back("enc.w_clus", &w_clus);
  out.emplace_back("enc.b_clus", &b_clus);
  cell.collect(out, "enc.cell");
  for (std::size_t k = 0; k < dims.K; ++k) {
    const std::string tag = std::to_string(k);
    out.emplace_back("enc.w_mu." + tag, &w_mu[k]);
    out.emplace_back("enc.b_mu." + tag, &b_mu[k]);
    out.emplace_back("enc.w_lv." + tag, &w_lv[k]);
    out.emplace_back("enc.b_lv." + tag, &b_lv[k]);
  }
  return out;
}

DecoderNet::DecoderNet(const ModelDims& dims_, std::uint64_t seed)
    : dims(dims_) {
  Rng rng(derive_seed(seed, "decoder"));
  embed = make_matrix(dims.vocab_size, dims.embed_dim, rng);
  w_feat = make_matrix(dims.embed_dim, dims.feat_dim, rng);
  b_feat = make_bias(dims.embed_dim);
  w_clus = make_matrix(dims.embed_dim, dims.K, rng);
  b_clus = make_bias(dims.embed_dim);
  w_lat = make_matrix(dims.embed_dim, dims.latent_dim, rng);
  b_lat = make_bias(dims.embed_dim);
  cell = RecurrentCell(dims.embed_dim, dims.hidden_dim, rng);
  w_out = make_matrix(dims.vocab_size, dims.hidden_dim, rng);
  b_out = make_bias(dims.vocab_size);
}

NamedParams DecoderNet::named_parameters() {
  NamedParams out;
  out.emplace_back("dec.embed", &embed);
  out.emplace_back("dec.w_feat", &w_feat);
  out.emplace_back("dec.b_feat", &b_feat);
  out.emplace_back("dec.w_clus", &w_clus);
  out.emplace_back("dec.b_clus", &b_clus);
  out.emplace_back("dec.w_lat", &w_lat);
  out.emplace_back("dec.b_lat", &b_lat);
  cell.collect(out, "dec.cell");
  out.emplace_back("dec.w_out", &w_out);
  out.emplace_back("dec.b_out", &b_out);
  return out;
}

void validate_sequence(const TokenSequence& x, std::size_t vocab_size,
                       std::size_t L_max) {
  if (x.ids.size() > L_max) {
    throw std::invalid_argument("sequence longer than L_max");
  }
  for (std::size_t id : x.ids) {
    if (id >= vocab_size) throw std::invalid_argument("token id out of range");
    if (id == Vocabulary::kStart || id == Vocabulary::kEnd) {
      throw std::invalid_argument("sequence contains a sentinel token");
    }
  }
}

PosteriorNodes encode_nodes(Tape& tape, EncoderNet& enc,
                            const std::vector<double>& feat,
                            const ClusterVector& c, const TokenSequence& x,
                            PriorKind kind) {
  check_feat(feat, enc.dims);
  check_cluster(c, enc.dims);
  validate_sequence(x, enc.dims.vocab_size, enc.dims.L_max);

  Node embed = tape.param(enc.embed);
  Node w_feat = tape.param(enc.w_feat);
  Node b_feat = tape.param(enc.b_feat);
  Node w_clus = tape.param(enc.w_clus);
  Node b_clus = tape.param(enc.b_clus);
  CellNodes cell(tape, enc.cell);

  Node h = tape.input(Tensor({enc.dims.hidden_dim}));
  h = cell.step(affine(w_feat, tape.input_vector(feat), b_feat), h);
  h = cell.step(affine(w_clus, tape.input_vector(c.weights()), b_clus), h);
  for (std::size_t id : x.ids) {
    h = cell.step(row(embed, id), h);
  }

  auto head = [&](std::size_t k) {
    Node mu_k = affine(tape.param(enc.w_mu[k]), h, tape.param(enc.b_mu[k]));
    Node lv_k = affine(tape.param(enc.w_lv[k]), h, tape.param(enc.b_lv[k]));
    return std::pair<Node, Node>(mu_k, lv_k);
  };

  if (kind != PriorKind::kAdditive) {
    auto [mu0, lv0] = head(0);
    return {mu0, lv0};
  }

  // mu = sum_k c_k mu_k ; var = sum_k c_k^2 exp(lv_k), zero weights skipped.
  bool first = true;
  Node mu{}, var{};
  for (std::size_t k = 0; k < enc.dims.K; ++k) {
    if (c[k] == 0.0) continue;
    auto [mu_k, lv_k] = head(k);
    Node mu_term = mul(mu_k, tape.input_scalar(c[k]));
    Node var_term = mul(exp(lv_k), tape.input_scalar(c[k] * c[k]));
    if (first) {
      mu = mu_term;
      var = var_term;
      first = false;
    } else {
      mu = add(mu, mu_term);
      var = add(var, var_term);
    }
  }
  return {mu, log(var)};
}

GaussianPosterior encode(EncoderNet& enc, const std::vector<double>& feat,
                         const ClusterVector& c, const TokenSequence& x,
                         PriorKind kind) {
  Tape tape;
  PosteriorNodes p = encode_nodes(tape, enc, feat, c, x, kind);
  GaussianPosterior q;
  q.mu = p.mu.value().values();
  q.log_var = p.log_var.value().values();
  return q;
}

namespace {

// Shared rollout state: parameter bindings plus the hidden state after the
// [feat, cluster, z] prefix and the <start> token.
struct DecoderRollout {
  Node embed;
  CellNodes cell;
  Node w_out, b_out;
  Node h;

  DecoderRollout(Tape& tape, DecoderNet& dec, const std::vector<double>& feat,
                 const ClusterVector& c, Node z)
      : embed(tape.param(dec.embed)),
        cell(tape, dec.cell),
        w_out(tape.param(dec.w_out)),
        b_out(tape.param(dec.b_out)),
        h(tape.input(Tensor({dec.dims.hidden_dim}))) {
    Node w_feat = tape.param(dec.w_feat);
    Node b_feat = tape.param(dec.b_feat);
    Node w_clus = tape.param(dec.w_clus);
    Node b_clus = tape.param(dec.b_clus);
    Node w_lat = tape.param(dec.w_lat);
    Node b_lat = tape.param(dec.b_lat);
    h = cell.step(affine(w_feat, tape.input_vector(feat), b_feat), h);
    h = cell.step(affine(w_clus, tape.input_vector(c.weights()), b_clus), h);
    h = cell.step(affine(w_lat, z, b_lat), h);
    h = cell.step(row(embed, Vocabulary::kStart), h);
  }

  Node logits() const { return affine(w_out, h, b_out); }

  Node advance(Node h_from, std::size_t token) const {
    return cell.step(row(embed, token), h_from);
  }

  void consume(std::size_t token) { h = advance(h, token); }
};

}  // namespace

Node decode_logloss_node(Tape& tape, DecoderNet& dec,
                         const std::vector<double>& feat,
                         const ClusterVector& c, Node z,
                         const TokenSequence& x) {
  check_feat(feat, dec.dims);
  check_cluster(c, dec.dims);
  validate_sequence(x, dec.dims.vocab_size, dec.dims.L_max);

  DecoderRollout roll(tape, dec, feat, c, z);
  std::vector<std::size_t> targets = x.ids;
  targets.push_back(Vocabulary::kEnd);

  Node total{};
  for (std::size_t t = 0; t < targets.size(); ++t) {
    Node ce = softmax_cross_entropy(roll.logits(), targets[t]);
    total = t == 0 ? ce : add(total, ce);
    if (t + 1 < targets.size()) roll.consume(targets[t]);
  }
  return total;
}

Node decode_logloss(Tape& tape, DecoderNet& dec,
                    const std::vector<double>& feat, const ClusterVector& c,
                    const std::vector<double>& z, const TokenSequence& x) {
  if (z.size() != dec.dims.latent_dim) {
    throw std::invalid_argument("latent sample dimension mismatch");
  }
  return decode_logloss_node(tape, dec, feat, c, tape.input_vector(z), x);
}

TokenSequence generate(DecoderNet& dec, const std::vector<double>& feat,
                       const ClusterVector& c, const std::vector<double>& z,
                       DecodeMode mode, Rng& rng, std::size_t L_max) {
  check_feat(feat, dec.dims);
  check_cluster(c, dec.dims);
  if (z.size() != dec.dims.latent_dim) {
    throw std::invalid_argument("latent sample dimension mismatch");
  }

  Tape tape;
  DecoderRollout roll(tape, dec, feat, c, tape.input_vector(z));
  TokenSequence out;
  while (out.ids.size() < L_max) {
    const Tensor& logits = roll.logits().value();
    std::size_t chosen = Vocabulary::kEnd;
    if (mode == DecodeMode::kGreedy) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < logits.numel(); ++i) {
        if (i == Vocabulary::kStart) continue;
        if (logits[i] > best) {
          best = logits[i];
          chosen = i;
        }
      }
    } else {
      std::vector<double> lsm = log_softmax(logits);
      double total = 0.0;
      for (std::size_t i = 0; i < lsm.size(); ++i) {
        if (i == Vocabulary::kStart) continue;
        total += std::exp(lsm[i]);
      }
      const double u = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < lsm.size(); ++i) {
        if (i == Vocabulary::kStart) continue;
        acc += std::exp(lsm[i]);
        chosen = i;
        if (u < acc) break;
      }
    }
    if (chosen == Vocabulary::kEnd) break;
    out.ids.push_back(chosen);
    roll.consume(chosen);
  }
  return out;
}

std::vector<BeamHypothesis> beam_search(DecoderNet& dec,
                                        const std::vector<double>& feat,
                                        const ClusterVector& c,
                                        std::size_t width, std::size_t L_max) {
  if (width < 1) throw std::invalid_argument("beam width must be >= 1");
  check_feat(feat, dec.dims);
  check_cluster(c, dec.dims);

  Tape tape;
  const std::vector<double> zero_z(dec.dims.latent_dim, 0.0);
  DecoderRollout roll(tape, dec, feat, c, tape.input_vector(zero_z));

  struct Live {
    TokenSequence seq;
    double score = 0.0;
    Node h;
  };
  std::vector<Live> live = {{TokenSequence{}, 0.0, roll.h}};
  std::vector<BeamHypothesis> completed;

  for (std::size_t step = 0; step <= L_max && !live.empty(); ++step) {
    // Log-softmax per live hypothesis.
    std::vector<std::vector<double>> lsm;
    lsm.reserve(live.size());
    for (const Live& hyp : live) {
      lsm.push_back(log_softmax(affine(roll.w_out, hyp.h, roll.b_out).value()));
    }

    if (step == L_max) {
      // Length cutoff: close every surviving hypothesis with <end>.
      for (std::size_t i = 0; i < live.size(); ++i) {
        completed.push_back(
            {live[i].seq, live[i].score + lsm[i][Vocabulary::kEnd]});
      }
      break;
    }

    struct Ext {
      std::size_t parent;
      std::size_t token;
      double score;
    };
    std::vector<Ext> exts;
    exts.reserve(live.size() * (dec.dims.vocab_size - 1));
    for (std::size_t i = 0; i < live.size(); ++i) {
      for (std::size_t tok = 0; tok < dec.dims.vocab_size; ++tok) {
        if (tok == Vocabulary::kStart) continue;
        exts.push_back({i, tok, live[i].score + lsm[i][tok]});
      }
    }
    const std::size_t slots = width - completed.size();
    std::partial_sort(exts.begin(),
                      exts.begin() + std::min(slots, exts.size()), exts.end(),
                      [](const Ext& a, const Ext& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    exts.resize(std::min(slots, exts.size()));

    std::vector<Live> next;
    for (const Ext& e : exts) {
      if (e.token == Vocabulary::kEnd) {
        completed.push_back({live[e.parent].seq, e.score});
      } else {
        Live n;
        n.seq = live[e.parent].seq;
        n.seq.ids.push_back(e.token);
        n.score = e.score;
        n.h = roll.advance(live[e.parent].h, e.token);
        next.push_back(std::move(n));
      }
    }
    live = std::move(next);
  }

  std::sort(completed.begin(), completed.end(),
            [](const BeamHypothesis& a, const BeamHypothesis& b) {
              if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
              return a.seq.ids < b.seq.ids;
            });
  if (completed.size() > width) completed.resize(width);
  return completed;
}

}  // namespace divgen
