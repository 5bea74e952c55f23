#include "divgen/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string_view>
#include <utility>

#include <json.hpp>

#include "divgen/version.hpp"

namespace divgen {

namespace {

using nlohmann::json;

constexpr const char* kCheckpointFormat = "divgen-checkpoint";
constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string checksum_hex(const std::string& text) {
  static const char* digits = "0123456789abcdef";
  std::uint64_t h = fnv1a(text);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xF];
    h >>= 4;
  }
  return out;
}

json tensor_to_json(const Tensor& t) {
  return json{{"shape", t.shape()}, {"data", t.values()}};
}

Tensor tensor_from_json(const json& j) {
  return Tensor(j.at("shape").get<std::vector<std::size_t>>(),
                j.at("data").get<std::vector<double>>());
}

json params_to_json(const NamedParams& params) {
  json out = json::object();
  for (const auto& [name, p] : params) {
    if (!p->value.all_finite()) {
      throw std::runtime_error("checkpoint parameter is non-finite: " + name);
    }
    out[name] = tensor_to_json(p->value);
  }
  return out;
}

void params_from_json(const json& j, const NamedParams& params) {
  if (j.size() != params.size()) {
    throw std::runtime_error("checkpoint parameter set has unexpected size");
  }
  for (const auto& [name, p] : params) {
    Tensor t = tensor_from_json(j.at(name));
    if (!t.same_shape(p->value)) {
      throw std::runtime_error("checkpoint parameter has wrong shape: " + name);
    }
    p->value = std::move(t);
    p->zero_grad();
  }
}

json dims_to_json(const ModelDims& d) {
  return json{{"vocab_size", d.vocab_size}, {"embed_dim", d.embed_dim},
              {"hidden_dim", d.hidden_dim}, {"latent_dim", d.latent_dim},
              {"feat_dim", d.feat_dim},     {"K", d.K},
              {"L_max", d.L_max}};
}

ModelDims dims_from_json(const json& j) {
  ModelDims d;
  d.vocab_size = j.at("vocab_size");
  d.embed_dim = j.at("embed_dim");
  d.hidden_dim = j.at("hidden_dim");
  d.latent_dim = j.at("latent_dim");
  d.feat_dim = j.at("feat_dim");
  d.K = j.at("K");
  d.L_max = j.at("L_max");
  return d;
}

json config_to_json(const TrainConfig& c) {
  return json{{"variant", to_string(c.variant)},
              {"dims", dims_to_json(c.dims)},
              {"sigma_train", c.sigma_train},
              {"lr0", c.lr0},
              {"epochs", c.epochs},
              {"halve_every", c.halve_every},
              {"kl_weight", c.kl_weight},
              {"seed", c.seed}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.variant = model_variant_from_string(j.at("variant"));
  c.dims = dims_from_json(j.at("dims"));
  c.sigma_train = j.at("sigma_train");
  c.lr0 = j.at("lr0");
  c.epochs = j.at("epochs");
  c.halve_every = j.at("halve_every");
  c.kl_weight = j.at("kl_weight");
  c.seed = j.at("seed");
  return c;
}

json prior_to_json(const PriorSpec& p) {
  return json{{"kind", to_string(p.kind)},
              {"latent_dim", p.latent_dim},
              {"means", p.means},
              {"stds", p.stds}};
}

PriorSpec prior_from_json(const json& j) {
  PriorSpec p;
  p.kind = prior_kind_from_string(j.at("kind"));
  p.latent_dim = j.at("latent_dim");
  p.means = j.at("means").get<std::vector<std::vector<double>>>();
  p.stds = j.at("stds").get<std::vector<double>>();
  return p;
}

// Everything except the epoch target must match for a resumed run to be the
// exact continuation of the original one.
bool resume_compatible(const TrainConfig& a, const TrainConfig& b) {
  json ja = config_to_json(a);
  json jb = config_to_json(b);
  ja.erase("epochs");
  jb.erase("epochs");
  return ja == jb;
}

}  // namespace

std::string to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::kLstmBaseline: return "lstm-baseline";
    case ModelVariant::kCvae: return "cvae";
    case ModelVariant::kGmmCvae: return "gmm-cvae";
    case ModelVariant::kAgCvae: return "ag-cvae";
  }
  throw std::invalid_argument("unknown model variant");
}

ModelVariant model_variant_from_string(const std::string& name) {
  if (name == "lstm-baseline") return ModelVariant::kLstmBaseline;
  if (name == "cvae") return ModelVariant::kCvae;
  if (name == "gmm-cvae") return ModelVariant::kGmmCvae;
  if (name == "ag-cvae") return ModelVariant::kAgCvae;
  throw std::invalid_argument(
      "unknown model variant: " + name +
      " (expected lstm-baseline, cvae, gmm-cvae, or ag-cvae)");
}

bool variant_uses_latent(ModelVariant v) {
  return v != ModelVariant::kLstmBaseline;
}

PriorKind variant_prior_kind(ModelVariant v) {
  switch (v) {
    case ModelVariant::kCvae: return PriorKind::kFixed;
    case ModelVariant::kGmmCvae: return PriorKind::kGmm;
    case ModelVariant::kAgCvae: return PriorKind::kAdditive;
    case ModelVariant::kLstmBaseline: break;
  }
  throw std::invalid_argument("the lstm baseline has no latent prior");
}

void validate_train_config(const TrainConfig& cfg) {
  if (!(cfg.lr0 > 0.0)) throw std::invalid_argument("train config: lr0 must be positive");
  if (cfg.epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (cfg.halve_every < 1) {
    throw std::invalid_argument("train config: halve_every must be >= 1");
  }
  if (!(cfg.sigma_train > 0.0)) {
    throw std::invalid_argument("train config: sigma_train must be positive");
  }
  if (!(cfg.kl_weight >= 0.0)) {
    throw std::invalid_argument("train config: kl_weight must be nonnegative");
  }
  const ModelDims& d = cfg.dims;
  if (d.embed_dim < 1 || d.hidden_dim < 1 || d.latent_dim < 1 ||
      d.feat_dim < 1 || d.K < 1 || d.L_max < 1) {
    throw std::invalid_argument("train config: model dimensions must be positive");
  }
}

double learning_rate(const TrainConfig& cfg, std::size_t epoch) {
  return std::ldexp(cfg.lr0, -static_cast<int>(epoch / cfg.halve_every));
}

std::vector<TrainExample> flatten_examples(
    const std::vector<SceneRecord>& scenes, const Vocabulary& vocab,
    std::size_t K) {
  std::vector<TrainExample> out;
  for (const SceneRecord& scene : scenes) {
    ClusterVector c = cluster_vector_from_labels(scene.true_categories, K);
    for (const TokenSequence& x : scene.reference_sequences(vocab)) {
      out.push_back(TrainExample{scene.feat, c, x, scene.id});
    }
  }
  return out;
}

Node reparameterize(Tape& tape, const PosteriorNodes& post,
                    const std::vector<double>& eps) {
  Node sigma = exp(mul(post.log_var, tape.input_scalar(0.5)));
  return add(post.mu, mul(sigma, tape.input_vector(eps)));
}

ElboTerms elbo_terms_with(Tape& tape, EncoderNet& enc, DecoderNet& dec,
                          const PriorSpec& spec, const std::vector<double>& feat,
                          const ClusterVector& c, const TokenSequence& x,
                          const std::vector<double>& eps,
                          std::size_t gmm_component, double kl_weight) {
  if (eps.size() != enc.dims.latent_dim) {
    throw std::invalid_argument("elbo: noise dimension mismatch");
  }
  PosteriorNodes post = encode_nodes(tape, enc, feat, c, x, spec.kind);
  Node z = reparameterize(tape, post, eps);
  Node rec = decode_logloss_node(tape, dec, feat, c, z, x);
  Node kl;
  switch (spec.kind) {
    case PriorKind::kFixed:
      kl = kl_isotropic_node(tape, post.mu, post.log_var,
                             std::vector<double>(spec.latent_dim, 0.0),
                             spec.stds.at(0) * spec.stds.at(0));
      break;
    case PriorKind::kGmm: {
      if (gmm_component >= spec.components()) {
        throw std::out_of_range("elbo: gmm component out of range");
      }
      const double s = spec.stds[gmm_component];
      kl = kl_isotropic_node(tape, post.mu, post.log_var,
                             spec.means[gmm_component], s * s);
      break;
    }
    case PriorKind::kAdditive: {
      auto [pmu, pvar] = additive_prior_params(spec, c);
      kl = kl_isotropic_node(tape, post.mu, post.log_var, pmu, pvar);
      break;
    }
  }
  Node loss = add(rec, mul(kl, tape.input_scalar(kl_weight)));
  return ElboTerms{loss, rec, kl};
}

ElboTerms elbo_terms(Tape& tape, EncoderNet& enc, DecoderNet& dec,
                     const PriorSpec& spec, const std::vector<double>& feat,
                     const ClusterVector& c, const TokenSequence& x, Rng& rng,
                     double kl_weight) {
  std::vector<double> eps = rng.normal_vector(enc.dims.latent_dim);
  const std::size_t k =
      spec.kind == PriorKind::kGmm ? sample_gmm_component(c, rng) : 0;
  return elbo_terms_with(tape, enc, dec, spec, feat, c, x, eps, k, kl_weight);
}

Node elbo_loss(Tape& tape, EncoderNet& enc, DecoderNet& dec,
               const PriorSpec& spec, const std::vector<double>& feat,
               const ClusterVector& c, const TokenSequence& x, Rng& rng) {
  return elbo_terms(tape, enc, dec, spec, feat, c, x, rng, 1.0).loss;
}

TrainResult train(const std::vector<SceneRecord>& scenes,
                  const Vocabulary& vocab, const TrainConfig& cfg_in,
                  std::ostream* metrics_log, const ModelCheckpoint* resume) {
  TrainConfig cfg = cfg_in;
  cfg.dims.vocab_size = vocab.size();
  validate_train_config(cfg);
  if (scenes.empty()) throw std::invalid_argument("train: empty dataset");

  const bool latent = variant_uses_latent(cfg.variant);

  ModelCheckpoint ckpt;
  std::size_t start_epoch = 0;
  if (resume != nullptr) {
    if (!resume_compatible(resume->config, cfg)) {
      throw std::invalid_argument(
          "resume: checkpoint config differs from the requested one");
    }
    if (resume->vocab.tokens() != vocab.tokens()) {
      throw std::invalid_argument("resume: vocabulary mismatch");
    }
    if (resume->epochs_completed >= cfg.epochs) {
      throw std::invalid_argument(
          "resume: checkpoint already has " +
          std::to_string(resume->epochs_completed) + " epochs, target is " +
          std::to_string(cfg.epochs));
    }
    ckpt = *resume;
    ckpt.config = cfg;
    start_epoch = resume->epochs_completed;
  } else {
    ckpt.config = cfg;
    ckpt.vocab = vocab;
    if (latent) {
      const PriorKind kind = variant_prior_kind(cfg.variant);
      // The plain CVAE trains against the standard normal; sigma_train sets
      // the component stds of the structured priors.
      const double sigma = kind == PriorKind::kFixed ? 1.0 : cfg.sigma_train;
      ckpt.prior = init_prior(kind, cfg.dims.K, cfg.dims.latent_dim, sigma,
                              derive_seed(cfg.seed, "prior"));
      ckpt.encoder = EncoderNet(cfg.dims, cfg.seed);
    }
    ckpt.decoder = DecoderNet(cfg.dims, cfg.seed);
  }

  std::vector<TrainExample> examples = flatten_examples(scenes, vocab, cfg.dims.K);
  for (const TrainExample& ex : examples) {
    if (ex.feat.size() != cfg.dims.feat_dim) {
      throw std::invalid_argument("train: scene " + ex.scene_id +
                                  " feature dimension mismatch");
    }
  }

  NamedParams params;
  if (latent) params = ckpt.encoder->named_parameters();
  for (auto& named : ckpt.decoder.named_parameters()) params.push_back(named);

  Tape tape;
  std::vector<std::size_t> order(examples.size());
  const std::vector<double> zero_z(cfg.dims.latent_dim, 0.0);
  std::vector<EpochStats> history;

  for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", epoch));
    Rng noise_rng(derive_seed(cfg.seed, "noise", epoch));
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(order);
    const double lr = learning_rate(cfg, epoch);

    double sum_rec = 0.0;
    double sum_kl = 0.0;
    for (std::size_t step = 0; step < order.size(); ++step) {
      const TrainExample& ex = examples[order[step]];
      tape.reset();
      try {
        double rec_v = 0.0;
        double kl_v = 0.0;
        Node loss;
        if (latent) {
          ElboTerms terms =
              elbo_terms(tape, *ckpt.encoder, ckpt.decoder, *ckpt.prior,
                         ex.feat, ex.c, ex.x, noise_rng, cfg.kl_weight);
          loss = terms.loss;
          rec_v = terms.rec.value()[0];
          kl_v = terms.kl.value()[0];
        } else {
          loss = decode_logloss(tape, ckpt.decoder, ex.feat, ex.c, zero_z, ex.x);
          rec_v = loss.value()[0];
        }
        if (!std::isfinite(loss.value()[0])) {
          throw std::domain_error("non-finite loss value");
        }
        tape.backward(loss);
        sum_rec += rec_v;
        sum_kl += kl_v;
      } catch (const std::domain_error& e) {
        throw std::runtime_error(
            "training diverged at epoch " + std::to_string(epoch) +
            ", example " + std::to_string(order[step]) + " (scene " +
            ex.scene_id + "): " + e.what());
      }
      for (auto& [name, p] : params) {
        double* v = p->value.data();
        const double* g = p->grad.data();
        const std::size_t n = p->numel();
        for (std::size_t i = 0; i < n; ++i) v[i] -= lr * g[i];
        p->zero_grad();
      }
    }

    EpochStats st;
    st.epoch = epoch;
    st.lr = lr;
    st.mean_rec = sum_rec / static_cast<double>(examples.size());
    st.mean_kl = sum_kl / static_cast<double>(examples.size());
    history.push_back(st);
    if (metrics_log != nullptr) {
      json line{{"epoch", st.epoch},
                {"lr", st.lr},
                {"mean_rec", st.mean_rec},
                {"mean_kl", st.mean_kl}};
      (*metrics_log) << line.dump() << '\n';
    }
  }

  ckpt.epochs_completed = cfg.epochs;
  return TrainResult{std::move(ckpt), std::move(history)};
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path) {
  // named_parameters() is non-const because training mutates through it;
  // serialization only reads the values.
  ModelCheckpoint& mut = const_cast<ModelCheckpoint&>(ckpt);

  json payload;
  payload["tool_version"] = kToolVersion;
  payload["config"] = config_to_json(ckpt.config);
  payload["epochs_completed"] = ckpt.epochs_completed;
  payload["rng"] = json{{"scheme", "per-epoch-derived"}, {"seed", ckpt.config.seed}};
  payload["vocab"] = ckpt.vocab.tokens();
  payload["prior"] = ckpt.prior ? prior_to_json(*ckpt.prior) : json(nullptr);
  payload["encoder"] = ckpt.encoder
                           ? params_to_json(mut.encoder->named_parameters())
                           : json(nullptr);
  payload["decoder"] = params_to_json(mut.decoder.named_parameters());

  json root;
  root["format"] = kCheckpointFormat;
  root["version"] = kCheckpointVersion;
  root["checksum"] = checksum_hex(payload.dump());
  root["payload"] = std::move(payload);

  const std::filesystem::path target(path);
  std::filesystem::path tmp(target);
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw std::runtime_error("cannot open checkpoint file for writing: " +
                               tmp.string());
    }
    out << root.dump(1) << '\n';
    if (!out) {
      throw std::runtime_error("failed writing checkpoint file: " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, target);
}

ModelCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();

  json root;
  try {
    root = json::parse(buf.str());
  } catch (const json::exception& e) {
    throw std::runtime_error("corrupt checkpoint (unparseable JSON): " + path +
                             ": " + e.what());
  }

  try {
    if (root.at("format") != kCheckpointFormat) {
      throw std::runtime_error("not a checkpoint file: " + path);
    }
    if (root.at("version").get<std::uint32_t>() != kCheckpointVersion) {
      throw std::runtime_error("unsupported checkpoint version in " + path);
    }
    const json& payload = root.at("payload");
    if (checksum_hex(payload.dump()) != root.at("checksum").get<std::string>()) {
      throw std::runtime_error("corrupt checkpoint (checksum mismatch): " + path);
    }

    ModelCheckpoint ckpt;
    ckpt.config = config_from_json(payload.at("config"));
    ckpt.epochs_completed = payload.at("epochs_completed");
    ckpt.vocab = Vocabulary::from_tokens(
        payload.at("vocab").get<std::vector<std::string>>());
    if (ckpt.vocab.size() != ckpt.config.dims.vocab_size) {
      throw std::runtime_error("corrupt checkpoint (vocabulary size mismatch): " +
                               path);
    }

    const bool latent = variant_uses_latent(ckpt.config.variant);
    if (latent != !payload.at("prior").is_null() ||
        latent != !payload.at("encoder").is_null()) {
      throw std::runtime_error(
          "corrupt checkpoint (variant and stored networks disagree): " + path);
    }
    if (latent) {
      ckpt.prior = prior_from_json(payload.at("prior"));
      ckpt.encoder = EncoderNet(ckpt.config.dims, 0);
      params_from_json(payload.at("encoder"), ckpt.encoder->named_parameters());
    }
    ckpt.decoder = DecoderNet(ckpt.config.dims, 0);
    params_from_json(payload.at("decoder"), ckpt.decoder.named_parameters());
    return ckpt;
  } catch (const json::exception& e) {
    throw std::runtime_error("corrupt checkpoint (malformed fields): " + path +
                             ": " + e.what());
  }
}

std::string train_config_json(const TrainConfig& config) {
  return config_to_json(config).dump();
}

}  // namespace divgen
