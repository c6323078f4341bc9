#include <doctest.h>

#include <cmath>
#include <vector>

#include "gradcheck.hpp"
#include "ibnn/posterior.hpp"

using namespace ibnn;

namespace {

MixturePosterior manual_posterior(std::int64_t K, std::int64_t dim, std::vector<double> means,
                                  std::vector<double> stds) {
    MixturePosterior p;
    p.K = K;
    p.dim = dim;
    p.means = make_tensor({K, dim}, std::move(means), true);
    p.stds = make_tensor({K, dim}, std::move(stds), true);
    return p;
}

// Monte-Carlo estimate of KL(N(mu, var) || N(1, prior_std^2)) per node.
double mc_gaussian_kl(double mu, double var, double prior_std, std::int64_t n, Rng& rng) {
    const double sd = std::sqrt(var);
    std::normal_distribution<double> dist(mu, sd);
    const double s2 = prior_std * prior_std;
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double z = dist(rng);
        const double lq = -0.5 * std::log(2.0 * M_PI * var) - (z - mu) * (z - mu) / (2.0 * var);
        const double lp = -0.5 * std::log(2.0 * M_PI * s2) - (z - 1.0) * (z - 1.0) / (2.0 * s2);
        acc += lq - lp;
    }
    return acc / static_cast<double>(n);
}

}  // namespace

TEST_CASE("init_posterior with sigma0 = 0 pins means at 1") {
    Rng rng(1);
    auto p = init_posterior(3, 4, 0.0, rng);
    for (double m : p.means->values) CHECK(m == 1.0);
    for (double s : p.stds->values) CHECK(s >= kStdFloor);
}

TEST_CASE("init_posterior draws means from N(1, sigma0^2)") {
    Rng rng(2);
    auto p = init_posterior(1, 100000, 0.75, rng);
    double mean = 0.0;
    for (double m : p.means->values) mean += m;
    mean /= static_cast<double>(p.means->values.size());
    double var = 0.0;
    for (double m : p.means->values) var += (m - mean) * (m - mean);
    var /= static_cast<double>(p.means->values.size() - 1);
    CHECK(std::abs(mean - 1.0) < 0.01);
    CHECK(std::abs(std::sqrt(var) - 0.75) < 0.02);

    double smean = 0.0;
    for (double s : p.stds->values) smean += s;
    smean /= static_cast<double>(p.stds->values.size());
    CHECK(std::abs(smean - 0.05) < 0.001);
}

TEST_CASE("std floor clamps non-positive draws") {
    auto p = manual_posterior(1, 3, {1, 1, 1}, {-0.1, 0.0, 0.5});
    clamp_stds(p);
    CHECK(p.stds->values[0] == kStdFloor);
    CHECK(p.stds->values[1] == kStdFloor);
    CHECK(p.stds->values[2] == 0.5);
}

TEST_CASE("init_posterior rejects bad arguments") {
    Rng rng(3);
    CHECK_THROWS_AS(init_posterior(0, 2, 0.1, rng), ConfigError);
    CHECK_THROWS_AS(init_posterior(1, 0, 0.1, rng), ConfigError);
    CHECK_THROWS_AS(init_posterior(1, 2, -0.1, rng), ConfigError);
}

TEST_CASE("sample at the floor stays within floor noise of the mean") {
    auto p = manual_posterior(1, 4, {1, 1, 1, 1}, {kStdFloor, kStdFloor, kStdFloor, kStdFloor});
    Rng rng(4);
    auto z = sample(p, 0, rng);
    for (double v : z->values) CHECK(std::abs(v - 1.0) <= kStdFloor * 10.0);
}

TEST_CASE("sample moments match the component distribution") {
    auto p = manual_posterior(1, 1, {0.9}, {0.1});
    Rng rng(5);
    const std::int64_t n = 100000;
    double mean = 0.0, sq = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double z = sample(p, 0, rng)->values[0];
        mean += z;
        sq += z * z;
    }
    mean /= static_cast<double>(n);
    const double sd = std::sqrt(sq / static_cast<double>(n) - mean * mean);
    CHECK(std::abs(mean - 0.9) < 0.002);
    CHECK(std::abs(sd - 0.1) < 0.002);
}

TEST_CASE("sample is reparameterized: d sum(z) / d mu = 1") {
    auto p = manual_posterior(2, 3, {1, 1, 1, 2, 2, 2}, {0.1, 0.2, 0.3, 0.1, 0.1, 0.1});
    Rng rng(6);
    backward(sum_all(sample(p, 1, rng)));
    for (std::int64_t j = 0; j < 3; ++j) {
        CHECK(p.means->grad[0 * 3 + j] == 0.0);
        CHECK(p.means->grad[1 * 3 + j] == 1.0);
    }
    CHECK_THROWS_AS(sample(p, 2, rng), std::out_of_range);
}

TEST_CASE("sample gradients w.r.t. mu and sigma match finite differences") {
    auto p = manual_posterior(1, 3, {0.9, 1.1, 1.0}, {0.2, 0.1, 0.3});
    auto build = [&] {
        Rng rng(7);  // fixed eps: the loss is a deterministic function of mu, sigma
        auto z = sample(p, 0, rng);
        return sum_all(mul(z, mul(z, z)));
    };
    backward(build());
    auto res = ibnn::testing::grad_check([&] { return build()->value(); },
                                         {{"means", p.means}, {"stds", p.stds}});
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("mixture_mean_moments K=1 returns the component moments") {
    auto p = manual_posterior(1, 2, {0.8, 1.2}, {0.3, 0.4});
    auto m = mixture_mean_moments(p);
    CHECK(m.mean == std::vector<double>{0.8, 1.2});
    CHECK(m.var[0] == doctest::Approx(0.09).epsilon(1e-15));
    CHECK(m.var[1] == doctest::Approx(0.16).epsilon(1e-15));
}

TEST_CASE("mixture_mean_moments hand case") {
    auto p = manual_posterior(2, 1, {0.9, 1.1}, {0.1, 0.1});
    auto m = mixture_mean_moments(p);
    CHECK(m.mean[0] == 1.0);
    CHECK(m.var[0] == doctest::Approx(0.005).epsilon(1e-15));
}

TEST_CASE("mixture_mean_moments matches the distribution of the component average") {
    auto p = manual_posterior(3, 2, {0.8, 1.3, 1.0, 0.9, 1.2, 1.1}, {0.1, 0.2, 0.3, 0.15, 0.25, 0.2});
    const auto m = mixture_mean_moments(p);

    Rng rng(8);
    std::normal_distribution<double> unit(0.0, 1.0);
    const std::int64_t n = 1000000;
    std::vector<double> acc(2, 0.0), acc2(2, 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < 2; ++j) {
            double zbar = 0.0;
            for (std::int64_t k = 0; k < 3; ++k) {
                zbar += p.means->values[k * 2 + j] + p.stds->values[k * 2 + j] * unit(rng);
            }
            zbar /= 3.0;
            acc[j] += zbar;
            acc2[j] += zbar * zbar;
        }
    }
    for (std::int64_t j = 0; j < 2; ++j) {
        const double mean = acc[j] / static_cast<double>(n);
        const double var = acc2[j] / static_cast<double>(n) - mean * mean;
        CHECK(std::abs(mean - m.mean[j]) / m.mean[j] < 0.01);
        CHECK(std::abs(var - m.var[j]) / m.var[j] < 0.01);
    }
}

TEST_CASE("kl_to_prior vanishes when the mixture mean equals the prior") {
    auto p = manual_posterior(1, 3, {1, 1, 1}, {0.3, 0.3, 0.3});
    const LatentPrior prior{0.3};
    CHECK(std::abs(kl_to_prior(p, prior)->value()) < 1e-12);
    CHECK(std::abs(kl_to_prior_value(p, prior)) < 1e-12);
}

TEST_CASE("kl_to_prior hand case 1.30565") {
    auto p = manual_posterior(1, 1, {1.0}, {0.05});
    const LatentPrior prior{0.3};
    const double expected = std::log(6.0) + 0.0025 / (2.0 * 0.09) - 0.5;
    CHECK(kl_to_prior(p, prior)->value() == doctest::Approx(expected).epsilon(1e-12));
    CHECK(std::abs(kl_to_prior(p, prior)->value() - 1.30565) < 1e-5);
}

TEST_CASE("kl_to_prior matches a Monte-Carlo estimate within 1%") {
    auto p = manual_posterior(2, 1, {0.7, 1.2}, {0.2, 0.4});
    const LatentPrior prior{0.3};
    const auto m = mixture_mean_moments(p);
    Rng rng(9);
    const double mc = mc_gaussian_kl(m.mean[0], m.var[0], prior.std, 1000000, rng);
    const double closed = kl_to_prior(p, prior)->value();
    CHECK(std::abs(mc - closed) / closed < 0.01);
}

TEST_CASE("kl_to_prior is non-negative and zero only at the prior") {
    Rng rng(10);
    const LatentPrior prior{0.3};
    for (int trial = 0; trial < 50; ++trial) {
        auto p = init_posterior(1 + trial % 4, 1 + trial % 3, 0.5, rng);
        CHECK(kl_to_prior(p, prior)->value() >= 0.0);
    }
    auto off = manual_posterior(1, 1, {1.4}, {0.3});
    CHECK(kl_to_prior(off, prior)->value() > 1e-3);
}

TEST_CASE("kl_to_prior gradient w.r.t. means vanishes at mu = 1") {
    auto p = manual_posterior(2, 2, {1, 1, 1, 1}, {0.1, 0.2, 0.3, 0.4});
    const LatentPrior prior{0.3};
    backward(kl_to_prior(p, prior));
    for (double g : p.means->grad) CHECK(std::abs(g) < 1e-15);
}

TEST_CASE("kl_to_prior gradients match finite differences") {
    auto p = manual_posterior(2, 2, {0.9, 1.2, 1.05, 0.8}, {0.15, 0.25, 0.35, 0.2});
    const LatentPrior prior{0.3};
    backward(kl_to_prior(p, prior));
    auto res = ibnn::testing::grad_check([&] { return kl_to_prior(p, prior)->value(); },
                                         {{"means", p.means}, {"stds", p.stds}});
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("kl_to_prior_value reports degenerate posteriors as infinite") {
    auto p = manual_posterior(1, 1, {1.0}, {0.0});
    CHECK(std::isinf(kl_to_prior_value(p, LatentPrior{0.3})));
}
