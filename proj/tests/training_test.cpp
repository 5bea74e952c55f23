#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "divgen/training.hpp"
#include "support/gradcheck.hpp"

using namespace divgen;

namespace {

ModelDims toy_dims() {
  ModelDims d;
  d.vocab_size = 7;
  d.embed_dim = 4;
  d.hidden_dim = 5;
  d.latent_dim = 2;
  d.feat_dim = 3;
  d.K = 2;
  d.L_max = 8;
  return d;
}

struct ToyInstance {
  EncoderNet enc;
  DecoderNet dec;
  std::vector<double> feat;
  ClusterVector c;
  TokenSequence x;

  explicit ToyInstance(std::uint64_t seed)
      : enc(toy_dims(), seed),
        dec(toy_dims(), seed + 1),
        feat{0.2, -0.4, 0.1},
        c({0.7, 0.3}),
        x{{3, 5}} {}
};

PriorSpec toy_prior(PriorKind kind) {
  return init_prior(kind, 2, 2, 0.3, 11);
}

CorpusSplit small_corpus() {
  CorpusConfig cfg;
  cfg.n_train = 60;
  cfg.n_val = 5;
  cfg.n_test = 10;
  cfg.seed = 5;
  return generate_corpus(cfg);
}

TrainConfig small_train_config(ModelVariant variant) {
  TrainConfig cfg;
  cfg.variant = variant;
  cfg.dims.embed_dim = 12;
  cfg.dims.hidden_dim = 16;
  cfg.dims.latent_dim = 4;
  cfg.dims.feat_dim = 16;
  cfg.dims.K = 8;
  cfg.epochs = 2;
  cfg.seed = 3;
  return cfg;
}

bool same_parameters(ModelCheckpoint& a, ModelCheckpoint& b) {
  NamedParams pa = a.decoder.named_parameters();
  NamedParams pb = b.decoder.named_parameters();
  if (a.encoder) {
    for (auto& n : a.encoder->named_parameters()) pa.push_back(n);
    for (auto& n : b.encoder->named_parameters()) pb.push_back(n);
  }
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].first != pb[i].first) return false;
    if (pa[i].second->value.values() != pb[i].second->value.values()) return false;
  }
  return true;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("model variant names round-trip") {
  for (ModelVariant v : {ModelVariant::kLstmBaseline, ModelVariant::kCvae,
                         ModelVariant::kGmmCvae, ModelVariant::kAgCvae}) {
    CHECK(model_variant_from_string(to_string(v)) == v);
  }
  CHECK_THROWS_AS(model_variant_from_string("transformer"),
                  std::invalid_argument);
  CHECK(variant_prior_kind(ModelVariant::kCvae) == PriorKind::kFixed);
  CHECK(variant_prior_kind(ModelVariant::kGmmCvae) == PriorKind::kGmm);
  CHECK(variant_prior_kind(ModelVariant::kAgCvae) == PriorKind::kAdditive);
  CHECK(!variant_uses_latent(ModelVariant::kLstmBaseline));
  CHECK_THROWS_AS(variant_prior_kind(ModelVariant::kLstmBaseline),
                  std::invalid_argument);
}

TEST_CASE("train config validation") {
  TrainConfig cfg = small_train_config(ModelVariant::kAgCvae);
  CHECK_NOTHROW(validate_train_config(cfg));
  TrainConfig bad = cfg;
  bad.lr0 = 0.0;
  CHECK_THROWS_AS(validate_train_config(bad), std::invalid_argument);
  bad = cfg;
  bad.epochs = 0;
  CHECK_THROWS_AS(validate_train_config(bad), std::invalid_argument);
  bad = cfg;
  bad.halve_every = 0;
  CHECK_THROWS_AS(validate_train_config(bad), std::invalid_argument);
  bad = cfg;
  bad.sigma_train = -0.1;
  CHECK_THROWS_AS(validate_train_config(bad), std::invalid_argument);
}

TEST_CASE("learning rate halves on schedule") {
  TrainConfig cfg;
  cfg.lr0 = 0.01;
  cfg.halve_every = 5;
  for (std::size_t e = 0; e < 5; ++e) CHECK(learning_rate(cfg, e) == 0.01);
  CHECK(learning_rate(cfg, 5) == 0.005);
  CHECK(learning_rate(cfg, 12) == 0.0025);
  CHECK(learning_rate(cfg, 15) == 0.00125);
}

TEST_CASE("flatten_examples expands scenes by reference") {
  CorpusSplit corpus = small_corpus();
  auto examples =
      flatten_examples(corpus.train, corpus.vocab, corpus.config.K);
  CHECK(examples.size() == corpus.train.size() * corpus.config.refs_per_scene);
  // Cluster weights are uniform over the scene's true categories.
  const SceneRecord& s0 = corpus.train[0];
  const double w = 1.0 / static_cast<double>(s0.true_categories.size());
  for (std::size_t k : s0.true_categories) {
    CHECK(examples[0].c[k] == doctest::Approx(w).epsilon(1e-12));
  }
  CHECK(examples[0].scene_id == s0.id);
}

TEST_CASE("reparameterized draws match the posterior moments") {
  const std::vector<double> mu = {0.5, -1.0};
  const double sigma = 0.2;
  const std::vector<double> lv(2, std::log(sigma * sigma));

  Rng rng(99);
  Tape tape;
  const std::size_t n = 100000;
  std::vector<double> sum(2, 0.0), sumsq(2, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    tape.reset();
    PosteriorNodes post{tape.input_vector(mu), tape.input_vector(lv)};
    Node z = reparameterize(tape, post, rng.normal_vector(2));
    for (std::size_t d2 = 0; d2 < 2; ++d2) {
      const double v = z.value()[d2];
      sum[d2] += v;
      sumsq[d2] += v * v;
    }
  }
  for (std::size_t d2 = 0; d2 < 2; ++d2) {
    const double mean = sum[d2] / n;
    const double var = sumsq[d2] / n - mean * mean;
    CHECK(std::abs(mean - mu[d2]) < 0.02 * std::max(1.0, std::abs(mu[d2])));
    CHECK(std::abs(std::sqrt(var) - sigma) < 0.02 * sigma);
  }
}

TEST_CASE("elbo terms satisfy the basic identities") {
  ToyInstance t(17);

  SUBCASE("loss is reconstruction plus weighted KL, and at least the KL") {
    PriorSpec prior = toy_prior(PriorKind::kAdditive);
    Tape tape;
    Rng rng(5);
    ElboTerms terms = elbo_terms(tape, t.enc, t.dec, prior, t.feat, t.c, t.x,
                                 rng, 1.0);
    const double loss = terms.loss.value()[0];
    const double rec = terms.rec.value()[0];
    const double kl = terms.kl.value()[0];
    CHECK(loss == doctest::Approx(rec + kl).epsilon(1e-12));
    CHECK(loss >= kl - 1e-12);
    CHECK(rec >= 0.0);
    CHECK(kl >= -1e-12);
  }

  SUBCASE("encoder frozen at the prior zeroes the KL") {
    // Fixed prior is the standard normal; a zeroed head emits exactly that.
    PriorSpec prior = init_prior(PriorKind::kFixed, 2, 2, 1.0, 11);
    t.enc.w_mu[0].value.fill(0.0);
    t.enc.b_mu[0].value.fill(0.0);
    t.enc.w_lv[0].value.fill(0.0);
    t.enc.b_lv[0].value.fill(0.0);
    Tape tape;
    Rng rng(5);
    ElboTerms terms = elbo_terms(tape, t.enc, t.dec, prior, t.feat, t.c, t.x,
                                 rng, 1.0);
    CHECK(terms.kl.value()[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(terms.loss.value()[0] ==
          doctest::Approx(terms.rec.value()[0]).epsilon(1e-12));
  }

  SUBCASE("gmm KL draws a fresh component each call") {
    PriorSpec prior = toy_prior(PriorKind::kGmm);
    Rng rng(5);
    std::set<long long> seen;
    for (int i = 0; i < 30; ++i) {
      Tape tape;
      ElboTerms terms = elbo_terms(tape, t.enc, t.dec, prior, t.feat, t.c,
                                   t.x, rng, 1.0);
      seen.insert(std::llround(terms.kl.value()[0] * 1e9));
    }
    CHECK(seen.size() >= 2);
  }

  SUBCASE("kl_weight scales only the KL share") {
    PriorSpec prior = toy_prior(PriorKind::kAdditive);
    const std::vector<double> eps = {0.3, -0.8};
    Tape t1, t2;
    ElboTerms a =
        elbo_terms_with(t1, t.enc, t.dec, prior, t.feat, t.c, t.x, eps, 0, 1.0);
    ElboTerms b =
        elbo_terms_with(t2, t.enc, t.dec, prior, t.feat, t.c, t.x, eps, 0, 0.25);
    CHECK(a.rec.value()[0] == b.rec.value()[0]);
    CHECK(b.loss.value()[0] ==
          doctest::Approx(b.rec.value()[0] + 0.25 * b.kl.value()[0])
              .epsilon(1e-12));
  }
}

TEST_CASE("full elbo gradients match finite differences for every prior") {
  for (PriorKind kind :
       {PriorKind::kFixed, PriorKind::kGmm, PriorKind::kAdditive}) {
    CAPTURE(to_string(kind));
    ToyInstance t(23);
    PriorSpec prior = kind == PriorKind::kFixed
                          ? init_prior(kind, 2, 2, 1.0, 11)
                          : toy_prior(kind);
    const std::vector<double> eps = {0.4, -0.7};
    const std::size_t comp = 1;

    NamedParams params = t.enc.named_parameters();
    for (auto& n : t.dec.named_parameters()) params.push_back(n);

    // Analytic pass.
    for (auto& [name, p] : params) p->zero_grad();
    Tape tape;
    ElboTerms terms = elbo_terms_with(tape, t.enc, t.dec, prior, t.feat, t.c,
                                      t.x, eps, comp, 1.0);
    tape.backward(terms.loss);

    for (auto& [name, p] : params) {
      CAPTURE(name);
      std::vector<double> theta = p->value.values();
      auto f = [&](const std::vector<double>& v) {
        for (std::size_t i = 0; i < v.size(); ++i) p->value.data()[i] = v[i];
        Tape local;
        ElboTerms lt = elbo_terms_with(local, t.enc, t.dec, prior, t.feat,
                                       t.c, t.x, eps, comp, 1.0);
        for (std::size_t i = 0; i < theta.size(); ++i) {
          p->value.data()[i] = theta[i];
        }
        return lt.loss.value()[0];
      };
      std::vector<double> numeric = divgen::test::central_differences(f, theta);
      CHECK(divgen::test::max_fd_rel_err(p->grad.values(), numeric) < 1e-4);
    }
  }
}

TEST_CASE("kl gradient vanishes when the posterior equals the prior") {
  ToyInstance t(29);
  PriorSpec prior = init_prior(PriorKind::kFixed, 2, 2, 1.0, 11);
  t.enc.w_mu[0].value.fill(0.0);
  t.enc.b_mu[0].value.fill(0.0);
  t.enc.w_lv[0].value.fill(0.0);
  t.enc.b_lv[0].value.fill(0.0);

  std::vector<Parameter*> heads = {&t.enc.w_mu[0], &t.enc.b_mu[0],
                                   &t.enc.w_lv[0], &t.enc.b_lv[0]};
  for (Parameter* p : heads) p->zero_grad();

  const std::vector<double> eps = {0.4, -0.7};
  Tape tape;
  ElboTerms terms =
      elbo_terms_with(tape, t.enc, t.dec, prior, t.feat, t.c, t.x, eps, 0, 1.0);
  tape.backward(terms.kl);
  for (Parameter* p : heads) {
    for (double g : p->grad.values()) CHECK(std::abs(g) < 1e-12);
  }

  // Finite differences on the KL value agree that the heads sit at a minimum.
  Parameter* p = heads[1];
  std::vector<double> theta = p->value.values();
  auto f = [&](const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) p->value.data()[i] = v[i];
    Tape local;
    ElboTerms lt =
        elbo_terms_with(local, t.enc, t.dec, prior, t.feat, t.c, t.x, eps, 0, 1.0);
    for (std::size_t i = 0; i < theta.size(); ++i) p->value.data()[i] = theta[i];
    return lt.kl.value()[0];
  };
  for (double g : divgen::test::central_differences(f, theta)) {
    CHECK(std::abs(g) < 1e-6);
  }
}

TEST_CASE("training is deterministic and logs metrics") {
  CorpusSplit corpus = small_corpus();
  TrainConfig cfg = small_train_config(ModelVariant::kAgCvae);

  std::ostringstream log1, log2;
  TrainResult a = train(corpus.train, corpus.vocab, cfg, &log1);
  TrainResult b = train(corpus.train, corpus.vocab, cfg, &log2);

  CHECK(same_parameters(a.checkpoint, b.checkpoint));
  CHECK(log1.str() == log2.str());
  CHECK(a.history.size() == cfg.epochs);

  // One JSON line per epoch with the schedule's learning rate.
  std::istringstream lines(log1.str());
  std::string line;
  std::size_t count = 0;
  while (std::getline(lines, line)) {
    auto j = nlohmann::json::parse(line);
    CHECK(j.at("epoch") == count);
    CHECK(j.at("lr") == learning_rate(cfg, count));
    CHECK(j.at("mean_kl").get<double>() >= -1e-12);
    CHECK(std::isfinite(j.at("mean_rec").get<double>()));
    ++count;
  }
  CHECK(count == cfg.epochs);

  SUBCASE("a different seed moves the parameters") {
    TrainConfig other = cfg;
    other.seed = 4;
    TrainResult c = train(corpus.train, corpus.vocab, other);
    CHECK(!same_parameters(a.checkpoint, c.checkpoint));
  }

  SUBCASE("empty dataset is rejected") {
    std::vector<SceneRecord> none;
    CHECK_THROWS_AS(train(none, corpus.vocab, cfg), std::invalid_argument);
  }
}

TEST_CASE("resuming a checkpoint continues the run exactly") {
  CorpusSplit corpus = small_corpus();
  TrainConfig cfg = small_train_config(ModelVariant::kGmmCvae);
  cfg.epochs = 4;

  TrainResult full = train(corpus.train, corpus.vocab, cfg);

  TrainConfig half = cfg;
  half.epochs = 2;
  TrainResult first = train(corpus.train, corpus.vocab, half);
  CHECK(first.checkpoint.epochs_completed == 2);
  TrainResult second =
      train(corpus.train, corpus.vocab, cfg, nullptr, &first.checkpoint);

  CHECK(second.checkpoint.epochs_completed == 4);
  CHECK(same_parameters(full.checkpoint, second.checkpoint));
  CHECK(second.history.size() == 2);
  CHECK(second.history[0].epoch == 2);

  SUBCASE("resume target must exceed completed epochs") {
    CHECK_THROWS_AS(
        train(corpus.train, corpus.vocab, half, nullptr, &full.checkpoint),
        std::invalid_argument);
  }

  SUBCASE("resume rejects a mismatched config") {
    TrainConfig other = cfg;
    other.lr0 = 0.02;
    CHECK_THROWS_AS(
        train(corpus.train, corpus.vocab, other, nullptr, &first.checkpoint),
        std::invalid_argument);
  }
}

TEST_CASE("training halves the loss of the untrained model") {
  CorpusSplit corpus = small_corpus();
  TrainConfig cfg = small_train_config(ModelVariant::kCvae);
  // The standard-normal prior keeps the KL curvature at 1, so the fixed
  // variant is stable at a hotter step size than the structured priors.
  cfg.lr0 = 0.02;
  cfg.epochs = 15;

  TrainResult r = train(corpus.train, corpus.vocab, cfg);
  REQUIRE(r.history.size() == 15);
  const double first = r.history.front().mean_rec + r.history.front().mean_kl;
  const double last = r.history.back().mean_rec + r.history.back().mean_kl;
  CHECK(last < 0.5 * first);
  // Mean loss decreases from the first epoch to the fifth.
  CHECK(r.history[4].mean_rec + r.history[4].mean_kl <
        r.history[0].mean_rec + r.history[0].mean_kl);
}

TEST_CASE("divergence aborts with the offending example") {
  CorpusSplit corpus = small_corpus();
  TrainConfig cfg = small_train_config(ModelVariant::kAgCvae);
  cfg.lr0 = 5000.0;
  cfg.epochs = 3;
  try {
    train(corpus.train, corpus.vocab, cfg);
    FAIL("expected divergence");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("diverged") != std::string::npos);
    CHECK(msg.find("example") != std::string::npos);
  }
}

TEST_CASE("checkpoint round-trip") {
  CorpusSplit corpus = small_corpus();
  TrainConfig cfg = small_train_config(ModelVariant::kAgCvae);
  TrainResult r = train(corpus.train, corpus.vocab, cfg);

  const auto path = temp_path("divgen_ckpt_test.json");
  const auto path2 = temp_path("divgen_ckpt_test2.json");
  save_checkpoint(r.checkpoint, path.string());

  ModelCheckpoint loaded = load_checkpoint(path.string());
  CHECK(loaded.epochs_completed == r.checkpoint.epochs_completed);
  CHECK(loaded.vocab.tokens() == r.checkpoint.vocab.tokens());
  CHECK(same_parameters(loaded, r.checkpoint));
  REQUIRE(loaded.prior.has_value());
  CHECK(loaded.prior->means == r.checkpoint.prior->means);
  CHECK(loaded.prior->stds == r.checkpoint.prior->stds);

  SUBCASE("save, load, save is byte-identical") {
    save_checkpoint(loaded, path2.string());
    CHECK(read_file(path.string()) == read_file(path2.string()));
  }

  SUBCASE("loaded model generates identically") {
    const std::vector<double> z(cfg.dims.latent_dim, 0.0);
    Rng rng(1);
    for (std::size_t i = 0; i < 10; ++i) {
      const SceneRecord& s = corpus.test[i];
      ClusterVector c =
          cluster_vector_from_labels(s.true_categories, corpus.config.K);
      TokenSequence before = generate(r.checkpoint.decoder, s.feat, c, z,
                                      DecodeMode::kGreedy, rng, 20);
      TokenSequence after =
          generate(loaded.decoder, s.feat, c, z, DecodeMode::kGreedy, rng, 20);
      CHECK(before == after);
    }
  }

  SUBCASE("truncated file reports corruption") {
    std::string text = read_file(path.string());
    std::ofstream out(path2, std::ios::binary | std::ios::trunc);
    out << text.substr(0, text.size() / 2);
    out.close();
    CHECK_THROWS_AS(load_checkpoint(path2.string()), std::runtime_error);
  }

  SUBCASE("checksum tampering reports corruption") {
    auto j = nlohmann::json::parse(read_file(path.string()));
    j["payload"]["epochs_completed"] = 99;
    std::ofstream out(path2, std::ios::binary | std::ios::trunc);
    out << j.dump(1) << '\n';
    out.close();
    try {
      load_checkpoint(path2.string());
      FAIL("expected corruption error");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("checksum") != std::string::npos);
    }
  }

  SUBCASE("version mismatch is rejected") {
    auto j = nlohmann::json::parse(read_file(path.string()));
    j["version"] = 999;
    std::ofstream out(path2, std::ios::binary | std::ios::trunc);
    out << j.dump(1) << '\n';
    out.close();
    try {
      load_checkpoint(path2.string());
      FAIL("expected version error");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
  }

  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("baseline checkpoint stores no encoder or prior") {
  CorpusSplit corpus = small_corpus();
  TrainConfig cfg = small_train_config(ModelVariant::kLstmBaseline);
  TrainResult r = train(corpus.train, corpus.vocab, cfg);
  CHECK(!r.checkpoint.encoder.has_value());
  CHECK(!r.checkpoint.prior.has_value());
  CHECK(r.history.back().mean_kl == 0.0);

  const auto path = temp_path("divgen_ckpt_baseline.json");
  save_checkpoint(r.checkpoint, path.string());
  ModelCheckpoint loaded = load_checkpoint(path.string());
  CHECK(!loaded.encoder.has_value());
  CHECK(!loaded.prior.has_value());
  CHECK(same_parameters(loaded, r.checkpoint));
  std::filesystem::remove(path);
}
