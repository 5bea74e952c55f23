#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "divgen/seqmodel.hpp"

namespace divgen::test {

inline void fill_param(Parameter& p, const std::vector<double>& data) {
  if (p.value.numel() != data.size()) {
    throw std::invalid_argument("fill_param: size mismatch");
  }
  for (std::size_t i = 0; i < data.size(); ++i) p.value.data()[i] = data[i];
}

inline void zero_param(Parameter& p) { p.value.fill(0.0); }

// Markov-chain decoder: saturated update gate and identity-like embeddings
// make the hidden state track the previous token, so the output column of
// that token fully determines the next-step distribution.
// Vocabulary: 0=<start> 1=<end> 2=<unk> 3="a" 4="b".
inline DecoderNet markov_decoder() {
  ModelDims d;
  d.vocab_size = 5;
  d.embed_dim = 5;
  d.hidden_dim = 5;
  d.latent_dim = 2;
  d.feat_dim = 2;
  d.K = 2;
  d.L_max = 4;
  DecoderNet dec(d, 0);

  const double kappa = 25.0;
  std::vector<double> embed(25, 0.0);
  for (std::size_t i = 0; i < 5; ++i) embed[i * 5 + i] = kappa;
  fill_param(dec.embed, embed);

  zero_param(dec.w_feat);
  zero_param(dec.b_feat);
  zero_param(dec.w_clus);
  zero_param(dec.b_clus);
  zero_param(dec.w_lat);
  zero_param(dec.b_lat);

  zero_param(dec.cell.wz);
  zero_param(dec.cell.uz);
  dec.cell.bz.value.fill(40.0);
  zero_param(dec.cell.wr);
  zero_param(dec.cell.ur);
  zero_param(dec.cell.br);
  std::vector<double> eye(25, 0.0);
  for (std::size_t i = 0; i < 5; ++i) eye[i * 5 + i] = 1.0;
  fill_param(dec.cell.wh, eye);
  zero_param(dec.cell.uh);
  zero_param(dec.cell.bh);

  // w_out[token][prev] = log P(token | prev). Columns sum to one in
  // probability space; <start> keeps negligible mass everywhere.
  const double tiny = -40.0;
  std::map<std::pair<int, int>, double> p;
  auto col = [&](int prev, double to_end, double to_unk, double to_a,
                 double to_b) {
    p[{0, prev}] = tiny;
    p[{1, prev}] = std::log(to_end);
    p[{2, prev}] = to_unk > 0 ? std::log(to_unk) : tiny;
    p[{3, prev}] = std::log(to_a);
    p[{4, prev}] = std::log(to_b);
  };
  col(0, 0.05, 0.0, 0.70, 0.25);  // after <start>
  col(2, 0.90, 0.0, 0.05, 0.05);  // after <unk>
  col(3, 0.30, 0.0, 0.10, 0.60);  // after "a"
  col(4, 0.70, 0.0, 0.20, 0.10);  // after "b"
  // After <end>: never reached, keep a proper column anyway.
  p[{0, 1}] = tiny;
  p[{1, 1}] = 0.0;
  p[{2, 1}] = tiny;
  p[{3, 1}] = tiny;
  p[{4, 1}] = tiny;
  // <unk> rows not covered above default to tiny.
  std::vector<double> w_out(25, tiny);
  for (const auto& [key, v] : p) w_out[key.first * 5 + key.second] = v;
  fill_param(dec.w_out, w_out);
  zero_param(dec.b_out);
  return dec;
}

}  // namespace divgen::test
