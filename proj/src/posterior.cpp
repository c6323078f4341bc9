#include "ibnn/posterior.hpp"

#include <cmath>
#include <limits>

#include "ibnn/errors.hpp"

namespace ibnn {

MixturePosterior init_posterior(std::int64_t K, std::int64_t dim, double sigma0, Rng& rng) {
    if (K < 1) throw ConfigError("init_posterior: K must be >= 1");
    if (dim < 1) throw ConfigError("init_posterior: dim must be >= 1");
    if (sigma0 < 0.0) throw ConfigError("init_posterior: sigma0 must be >= 0");

    MixturePosterior p;
    p.K = K;
    p.dim = dim;
    p.means = randn({K, dim}, 1.0, sigma0, rng, /*requires_grad=*/true);
    p.stds = randn({K, dim}, 0.05, 0.02, rng, /*requires_grad=*/true);
    clamp_stds(p);
    return p;
}

TensorPtr sample(const MixturePosterior& posterior, std::int64_t k, Rng& rng) {
    if (k < 0 || k >= posterior.K) throw std::out_of_range("component index out of range");
    auto eps = randn({posterior.dim}, 0.0, 1.0, rng);
    return add(row(posterior.means, k), mul(row(posterior.stds, k), eps));
}

TensorPtr sample_per_row(const MixturePosterior& posterior, std::int64_t k, std::int64_t rows,
                         Rng& rng) {
    if (k < 0 || k >= posterior.K) throw std::out_of_range("component index out of range");
    auto eps = randn({rows, posterior.dim}, 0.0, 1.0, rng);
    auto mu = repeat_rows(row(posterior.means, k), rows);
    auto sigma = repeat_rows(row(posterior.stds, k), rows);
    return add(mu, mul(sigma, eps));
}

MixtureMoments mixture_mean_moments(const MixturePosterior& posterior) {
    const auto K = posterior.K;
    const auto dim = posterior.dim;
    MixtureMoments m;
    m.mean.assign(static_cast<std::size_t>(dim), 0.0);
    m.var.assign(static_cast<std::size_t>(dim), 0.0);
    for (std::int64_t k = 0; k < K; ++k) {
        for (std::int64_t j = 0; j < dim; ++j) {
            m.mean[j] += posterior.means->values[k * dim + j];
            const double s = posterior.stds->values[k * dim + j];
            m.var[j] += s * s;
        }
    }
    const double invK = 1.0 / static_cast<double>(K);
    for (std::int64_t j = 0; j < dim; ++j) {
        m.mean[j] *= invK;
        m.var[j] *= invK * invK;
    }
    return m;
}

TensorPtr kl_to_prior(const MixturePosterior& posterior, const LatentPrior& prior) {
    if (!(prior.std > 0.0)) throw ConfigError("kl_to_prior: prior std must be > 0");
    const double K = static_cast<double>(posterior.K);
    const double s2 = prior.std * prior.std;

    auto mu_hat = scale(column_sum(posterior.means), 1.0 / K);
    auto var_hat = scale(column_sum(mul(posterior.stds, posterior.stds)), 1.0 / (K * K));
    auto d = add_scalar(mu_hat, -1.0);
    auto quad = scale(add(var_hat, mul(d, d)), 1.0 / (2.0 * s2));
    auto log_ratio = scale(log(var_hat), -0.5);  // -log sigma_hat
    auto per_node = add_scalar(add(log_ratio, quad), std::log(prior.std) - 0.5);
    return sum_all(per_node);
}

double kl_to_prior_value(const MixturePosterior& posterior, const LatentPrior& prior) {
    if (!(prior.std > 0.0)) throw ConfigError("kl_to_prior_value: prior std must be > 0");
    const auto m = mixture_mean_moments(posterior);
    const double s2 = prior.std * prior.std;
    double kl = 0.0;
    for (std::size_t j = 0; j < m.var.size(); ++j) {
        if (!(m.var[j] > 0.0)) return std::numeric_limits<double>::infinity();
        kl += std::log(prior.std) - 0.5 * std::log(m.var[j]) +
              (m.var[j] + (m.mean[j] - 1.0) * (m.mean[j] - 1.0)) / (2.0 * s2) - 0.5;
    }
    return kl;
}

void clamp_stds(MixturePosterior& posterior) {
    for (auto& s : posterior.stds->values) {
        if (s < kStdFloor) s = kStdFloor;
    }
}

}  // namespace ibnn
