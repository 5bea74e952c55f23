#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "divgen/rng.hpp"
#include "divgen/tape.hpp"

namespace divgen {

// Normalized nonnegative weights over the K content categories.
class ClusterVector {
 public:
  explicit ClusterVector(std::vector<double> weights);

  std::size_t size() const { return weights_.size(); }
  double operator[](std::size_t k) const { return weights_[k]; }
  const std::vector<double>& weights() const { return weights_; }

 private:
  std::vector<double> weights_;
};

enum class PriorKind { kFixed, kGmm, kAdditive };

std::string to_string(PriorKind kind);
PriorKind prior_kind_from_string(const std::string& name);

// Latent prior: K component means on the unit ball with per-component
// scalar stds. Immutable after construction; fixed kind ignores the means
// and is N(0, stds[0]^2 I).
struct PriorSpec {
  PriorKind kind = PriorKind::kFixed;
  std::size_t latent_dim = 0;
  std::vector<std::vector<double>> means;  // K vectors of length latent_dim
  std::vector<double> stds;                // K positive scalars

  std::size_t components() const { return means.size(); }
};

// Diagonal-Gaussian encoder output.
struct GaussianPosterior {
  std::vector<double> mu;
  std::vector<double> log_var;
};

struct LatentSample {
  std::vector<double> z;
  std::optional<std::size_t> component;  // set for GMM sampling
};

PriorSpec init_prior(PriorKind kind, std::size_t K, std::size_t d, double sigma,
                     std::uint64_t seed);

// Mean and (scalar) variance of the additive prior for cluster vector c.
std::pair<std::vector<double>, double> additive_prior_params(
    const PriorSpec& spec, const ClusterVector& c);

// KL(q || N(mu, var I)) for a diagonal posterior, summed over dimensions.
// Shared scalar core of kl_ag / kl_gmm_component / the fixed-prior KL.
double kl_to_isotropic(const GaussianPosterior& q, const std::vector<double>& mu,
                       double var);

double kl_ag(const GaussianPosterior& q, const PriorSpec& spec,
             const ClusterVector& c);
double kl_gmm_component(const GaussianPosterior& q, const PriorSpec& spec,
                        std::size_t k);
double kl_fixed(const GaussianPosterior& q, const PriorSpec& spec);

std::size_t sample_gmm_component(const ClusterVector& c, Rng& rng);

// test_std replaces the component stds uniformly at sampling time.
LatentSample sample_prior(const PriorSpec& spec, const ClusterVector& c,
                          double test_std, Rng& rng);

// Log densities under the prior with its configured stds (not test_std).
double log_gaussian_diag(const std::vector<double>& z,
                         const std::vector<double>& mu,
                         const std::vector<double>& log_var);
double log_gaussian_iso(const std::vector<double>& z,
                        const std::vector<double>& mu, double var);
double component_log_density(const PriorSpec& spec, std::size_t k,
                             const std::vector<double>& z);
// Full prior density: fixed and additive are single Gaussians; gmm is the
// cluster-weighted mixture (log-sum-exp over components with c_k > 0).
double prior_log_density(const PriorSpec& spec, const ClusterVector& c,
                         const std::vector<double>& z);

// Average of log q(z) - log_p(z) over n samples z ~ q.
double mc_kl_oracle(const GaussianPosterior& q,
                    const std::function<double(const std::vector<double>&)>& log_p,
                    std::size_t n, Rng& rng);

// Differentiable KL(q || N(prior_mu, prior_var I)) built on the tape from
// posterior nodes mu and log_var (both rank-1 of length d).
Node kl_isotropic_node(Tape& tape, Node mu, Node log_var,
                       const std::vector<double>& prior_mu, double prior_var);

}  // namespace divgen
