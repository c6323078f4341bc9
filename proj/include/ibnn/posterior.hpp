#pragma once

// Per-layer mixture-of-Gaussians posterior over the multiplicative latent
// input variables, its N(1, s^2) prior, reparameterized sampling, and the
// KL of the mixture-mean Gaussian to the prior.

#include <cstdint>
#include <utility>
#include <vector>

#include "ibnn/random.hpp"
#include "ibnn/tensor.hpp"

namespace ibnn {

inline constexpr double kStdFloor = 1e-6;

// Gaussian prior N(1, std^2), shared across nodes and layers within a run.
struct LatentPrior {
    double std = 0.3;
};

struct MixturePosterior {
    std::int64_t K = 0;
    std::int64_t dim = 0;
    TensorPtr means;  // K x dim, component means
    TensorPtr stds;   // K x dim, component stds (>= kStdFloor after updates)
};

// Component means drawn from N(1, sigma0^2), stds from N(0.05, 0.02^2)
// clamped to the floor.
MixturePosterior init_posterior(std::int64_t K, std::int64_t dim, double sigma0, Rng& rng);

// Reparameterized draw z = mu_k + sigma_k * eps from component k; the result
// is differentiable w.r.t. the posterior parameters.
TensorPtr sample(const MixturePosterior& posterior, std::int64_t k, Rng& rng);

// Independent draw per row: (rows x dim), one z vector per data point.
TensorPtr sample_per_row(const MixturePosterior& posterior, std::int64_t k, std::int64_t rows,
                         Rng& rng);

struct MixtureMoments {
    std::vector<double> mean;  // (1/K) sum_k mu_k
    std::vector<double> var;   // (1/K^2) sum_k sigma_k^2
};
MixtureMoments mixture_mean_moments(const MixturePosterior& posterior);

// Closed-form KL of the mixture-mean Gaussian to the prior, summed over
// nodes, as a graph node differentiable w.r.t. means and stds.
TensorPtr kl_to_prior(const MixturePosterior& posterior, const LatentPrior& prior);

// Same quantity as plain doubles; +inf when the mixture-mean variance of any
// node is zero (degenerate posterior).
double kl_to_prior_value(const MixturePosterior& posterior, const LatentPrior& prior);

// Re-applies the positivity floor; call after each optimizer update.
void clamp_stds(MixturePosterior& posterior);

}  // namespace ibnn
