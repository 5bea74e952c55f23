#include "divgen/priors.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace divgen {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454835606594728112353;

void check_finite(const std::vector<double>& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw std::domain_error(std::string(what) + " contains non-finite values");
    }
  }
}

void check_posterior(const GaussianPosterior& q) {
  if (q.mu.size() != q.log_var.size()) {
    throw std::invalid_argument("posterior mu/log_var length mismatch");
  }
  check_finite(q.mu, "posterior mu");
  check_finite(q.log_var, "posterior log_var");
  for (double lv : q.log_var) {
    if (!std::isfinite(std::exp(lv))) {
      throw std::domain_error("posterior variance overflows");
    }
  }
}

void check_dims(const GaussianPosterior& q, const PriorSpec& spec) {
  check_posterior(q);
  if (q.mu.size() != spec.latent_dim) {
    throw std::invalid_argument("posterior dimension differs from latent_dim");
  }
}

}  // namespace

ClusterVector::ClusterVector(std::vector<double> weights)
    : weights_(std::move(weights)) {
  if (weights_.empty()) {
    throw std::invalid_argument("cluster vector must be nonempty");
  }
  double total = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw std::invalid_argument("cluster weights must be finite and >= 0");
    }
    total += w;
  }
  if (total <= 0.0) {
    throw std::invalid_argument("cluster vector must have positive total weight");
  }
  for (double& w : weights_) w /= total;
}

std::string to_string(PriorKind kind) {
  switch (kind) {
    case PriorKind::kFixed: return "fixed";
    case PriorKind::kGmm: return "gmm";
    case PriorKind::kAdditive: return "additive";
  }
  throw std::logic_error("unknown prior kind");
}

PriorKind prior_kind_from_string(const std::string& name) {
  if (name == "fixed") return PriorKind::kFixed;
  if (name == "gmm") return PriorKind::kGmm;
  if (name == "additive") return PriorKind::kAdditive;
  throw std::invalid_argument("unknown prior kind: " + name);
}

PriorSpec init_prior(PriorKind kind, std::size_t K, std::size_t d, double sigma,
                     std::uint64_t seed) {
  if (K < 1 || d < 1) throw std::invalid_argument("init_prior: K and d must be >= 1");
  if (!(sigma > 0.0)) throw std::invalid_argument("init_prior: sigma must be positive");
  PriorSpec spec;
  spec.kind = kind;
  spec.latent_dim = d;
  spec.means.reserve(K);
  Rng rng(derive_seed(seed, "prior-means"));
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<double> m;
    double norm = 0.0;
    // Zero norm has probability zero but would divide out; resample.
    while (norm == 0.0) {
      m = rng.normal_vector(d);
      for (double x : m) norm += x * x;
      norm = std::sqrt(norm);
    }
    for (double& x : m) x /= norm;
    spec.means.push_back(std::move(m));
  }
  spec.stds.assign(K, sigma);
  return spec;
}

std::pair<std::vector<double>, double> additive_prior_params(
    const PriorSpec& spec, const ClusterVector& c) {
  if (spec.kind != PriorKind::kAdditive) {
    throw std::invalid_argument("additive_prior_params: prior kind is not additive");
  }
  if (c.size() != spec.components()) {
    throw std::invalid_argument("cluster vector length differs from component count");
  }
  std::vector<double> mu(spec.latent_dim, 0.0);
  double var = 0.0;
  for (std::size_t k = 0; k < c.size(); ++k) {
    const double ck = c[k];
    var += ck * ck * spec.stds[k] * spec.stds[k];
    if (ck == 0.0) continue;
    const std::vector<double>& m = spec.means[k];
    for (std::size_t i = 0; i < mu.size(); ++i) mu[i] += ck * m[i];
  }
  return {std::move(mu), var};
}

double kl_to_isotropic(const GaussianPosterior& q, const std::vector<double>& mu,
                       double var) {
  if (!(var > 0.0)) throw std::invalid_argument("prior variance must be positive");
  if (mu.size() != q.mu.size()) {
    throw std::invalid_argument("prior mean dimension mismatch");
  }
  const double log_var = std::log(var);
  double total = 0.0;
  for (std::size_t i = 0; i < q.mu.size(); ++i) {
    const double lv = q.log_var[i];
    const double diff = q.mu[i] - mu[i];
    total += 0.5 * (log_var - lv) + (std::exp(lv) + diff * diff) / (2.0 * var) - 0.5;
  }
  return total;
}

double kl_ag(const GaussianPosterior& q, const PriorSpec& spec,
             const ClusterVector& c) {
  if (spec.kind != PriorKind::kAdditive) {
    throw std::invalid_argument("kl_ag: prior kind is not additive");
  }
  check_dims(q, spec);
  auto [mu, var] = additive_prior_params(spec, c);
  return kl_to_isotropic(q, mu, var);
}

double kl_gmm_component(const GaussianPosterior& q, const PriorSpec& spec,
                        std::size_t k) {
  if (spec.kind != PriorKind::kGmm) {
    throw std::invalid_argument("kl_gmm_component: prior kind is not gmm");
  }
  check_dims(q, spec);
  if (k >= spec.components()) {
    throw std::out_of_range("kl_gmm_component: component index out of range");
  }
  return kl_to_isotropic(q, spec.means[k], spec.stds[k] * spec.stds[k]);
}

double kl_fixed(const GaussianPosterior& q, const PriorSpec& spec) {
  if (spec.kind != PriorKind::kFixed) {
    throw std::invalid_argument("kl_fixed: prior kind is not fixed");
  }
  check_dims(q, spec);
  const std::vector<double> zero(spec.latent_dim, 0.0);
  return kl_to_isotropic(q, zero, spec.stds[0] * spec.stds[0]);
}

std::size_t sample_gmm_component(const ClusterVector& c, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t k = 0; k < c.size(); ++k) {
    if (c[k] <= 0.0) continue;
    acc += c[k];
    last_positive = k;
    if (u < acc) return k;
  }
  // Rounding can leave acc slightly below 1; fall back to the last
  // positive-weight component.
  return last_positive;
}

LatentSample sample_prior(const PriorSpec& spec, const ClusterVector& c,
                          double test_std, Rng& rng) {
  if (!(test_std > 0.0)) {
    throw std::invalid_argument("sample_prior: test_std must be positive");
  }
  const std::size_t d = spec.latent_dim;
  LatentSample s;
  s.z.resize(d);
  switch (spec.kind) {
    case PriorKind::kFixed: {
      for (std::size_t i = 0; i < d; ++i) s.z[i] = test_std * rng.normal();
      return s;
    }
    case PriorKind::kGmm: {
      const std::size_t k = sample_gmm_component(c, rng);
      s.component = k;
      const std::vector<double>& m = spec.means[k];
      for (std::size_t i = 0; i < d; ++i) s.z[i] = m[i] + test_std * rng.normal();
      return s;
    }
    case PriorKind::kAdditive: {
      auto [mu, var] = additive_prior_params(spec, c);
      (void)var;
      for (std::size_t i = 0; i < d; ++i) s.z[i] = mu[i] + test_std * rng.normal();
      return s;
    }
  }
  throw std::logic_error("unknown prior kind");
}

double log_gaussian_diag(const std::vector<double>& z,
                         const std::vector<double>& mu,
                         const std::vector<double>& log_var) {
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double diff = z[i] - mu[i];
    total += -0.5 * (kLogTwoPi + log_var[i]) - diff * diff / (2.0 * std::exp(log_var[i]));
  }
  return total;
}

double log_gaussian_iso(const std::vector<double>& z,
                        const std::vector<double>& mu, double var) {
  const double log_var = std::log(var);
  double sq = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double diff = z[i] - mu[i];
    sq += diff * diff;
  }
  return -0.5 * static_cast<double>(z.size()) * (kLogTwoPi + log_var) -
         sq / (2.0 * var);
}

double component_log_density(const PriorSpec& spec, std::size_t k,
                             const std::vector<double>& z) {
  if (k >= spec.components()) {
    throw std::out_of_range("component_log_density: index out of range");
  }
  return log_gaussian_iso(z, spec.means[k], spec.stds[k] * spec.stds[k]);
}

double prior_log_density(const PriorSpec& spec, const ClusterVector& c,
                         const std::vector<double>& z) {
  switch (spec.kind) {
    case PriorKind::kFixed: {
      const std::vector<double> zero(spec.latent_dim, 0.0);
      return log_gaussian_iso(z, zero, spec.stds[0] * spec.stds[0]);
    }
    case PriorKind::kAdditive: {
      auto [mu, var] = additive_prior_params(spec, c);
      return log_gaussian_iso(z, mu, var);
    }
    case PriorKind::kGmm: {
      // log sum_k c_k N(z; mu_k, sigma_k^2 I), stabilized by the max term.
      double best = -std::numeric_limits<double>::infinity();
      std::vector<double> terms;
      terms.reserve(c.size());
      for (std::size_t k = 0; k < c.size(); ++k) {
        if (c[k] <= 0.0) continue;
        const double t = std::log(c[k]) + component_log_density(spec, k, z);
        terms.push_back(t);
        best = std::max(best, t);
      }
      if (terms.empty()) {
        throw std::invalid_argument("prior_log_density: empty mixture");
      }
      double acc = 0.0;
      for (double t : terms) acc += std::exp(t - best);
      return best + std::log(acc);
    }
  }
  throw std::logic_error("unknown prior kind");
}

double mc_kl_oracle(const GaussianPosterior& q,
                    const std::function<double(const std::vector<double>&)>& log_p,
                    std::size_t n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("mc_kl_oracle: n must be >= 1");
  check_posterior(q);
  const std::size_t d = q.mu.size();
  std::vector<double> std_dev(d);
  for (std::size_t i = 0; i < d; ++i) std_dev[i] = std::exp(0.5 * q.log_var[i]);
  std::vector<double> z(d);
  // Kahan summation: n can reach 1e6 with terms of mixed sign.
  double sum = 0.0, comp = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < d; ++i) {
      z[i] = q.mu[i] + std_dev[i] * rng.normal();
    }
    const double lq = log_gaussian_diag(z, q.mu, q.log_var);
    const double lp = log_p(z);
    if (!std::isfinite(lq) || !std::isfinite(lp)) {
      throw std::domain_error("mc_kl_oracle: non-finite density value");
    }
    const double term = (lq - lp - comp);
    const double next = sum + term;
    comp = (next - sum) - term;
    sum = next;
  }
  return sum / static_cast<double>(n);
}

Node kl_isotropic_node(Tape& tape, Node mu, Node log_var,
                       const std::vector<double>& prior_mu, double prior_var) {
  if (!(prior_var > 0.0)) {
    throw std::invalid_argument("kl_isotropic_node: prior variance must be positive");
  }
  const std::size_t d = prior_mu.size();
  Node m = tape.input_vector(prior_mu);
  Node diff = sub(mu, m);
  Node quad = add(exp(log_var), square(diff));
  Node scaled = mul(quad, tape.input_scalar(1.0 / (2.0 * prior_var)));
  Node lv_term = mul(log_var, tape.input_scalar(-0.5));
  const double constant =
      static_cast<double>(d) * (0.5 * std::log(prior_var) - 0.5);
  return add(add(sum(scaled), sum(lv_term)), tape.input_scalar(constant));
}

}  // namespace divgen
