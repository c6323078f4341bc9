#include <doctest.h>

#include <cmath>
#include <vector>

#include "gradcheck.hpp"
#include "ibnn/tensor.hpp"

using namespace ibnn;
using ibnn::testing::grad_check;

TEST_CASE("matmul identity") {
    auto a = make_tensor({2, 2}, {1, 2, 3, 4});
    auto eye = make_tensor({2, 2}, {1, 0, 0, 1});
    auto c = matmul(a, eye);
    CHECK(c->values == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("matmul hand case") {
    auto a = make_tensor({2, 2}, {1, 2, 3, 4});
    auto b = make_tensor({2, 2}, {2, 0, 0, 0.5});
    auto c = matmul(a, b);
    CHECK(c->values == std::vector<double>{2, 1, 6, 2});
}

TEST_CASE("matmul shape mismatch") {
    auto a = zeros({2, 3});
    auto b = zeros({2, 3});
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("conv2d identity kernel") {
    Rng rng(7);
    auto x = randn({1, 1, 3, 3}, 0.0, 1.0, rng);
    auto k = ones({1, 1, 1, 1});
    auto y = conv2d(x, k, 1, 0);
    CHECK(y->shape == Shape{1, 1, 3, 3});
    CHECK(y->values == x->values);
}

TEST_CASE("conv2d hand sum") {
    auto x = make_tensor({1, 1, 2, 2}, {1, 2, 3, 4});
    auto k = ones({1, 1, 2, 2});
    auto y = conv2d(x, k, 1, 0);
    CHECK(y->shape == Shape{1, 1, 1, 1});
    CHECK(y->values[0] == 10.0);
}

TEST_CASE("conv2d rejects non-integral output extent") {
    auto x = zeros({1, 1, 3, 3});
    auto k = zeros({1, 1, 2, 2});
    CHECK_THROWS_AS(conv2d(x, k, 2, 0), ShapeError);
}

TEST_CASE("elementwise mul identity and mismatch") {
    auto a = make_tensor({3}, {1, 2, 3});
    auto one = ones({3});
    CHECK(mul(a, one)->values == std::vector<double>{1, 2, 3});
    CHECK_THROWS_AS(mul(zeros({2, 3}), zeros({3, 2})), ShapeError);
}

TEST_CASE("broadcast_mul applies node vector across rows") {
    auto a = ones({2, 3});
    auto v = make_tensor({3}, {2, 0.5, 1});
    auto out = broadcast_mul(a, v);
    CHECK(out->values == std::vector<double>{2, 0.5, 1, 2, 0.5, 1});
}

TEST_CASE("broadcast_mul channel pattern scales whole planes") {
    Rng rng(3);
    auto x = randn({2, 3, 2, 2}, 0.0, 1.0, rng);
    auto v = make_tensor({3}, {2, 1, 0.5});
    auto out = broadcast_mul(x, v);
    for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t c = 0; c < 3; ++c)
            for (std::int64_t s = 0; s < 4; ++s) {
                const auto i = (n * 3 + c) * 4 + s;
                CHECK(out->values[i] == x->values[i] * v->values[c]);
            }
}

TEST_CASE("relu values and subgradient at zero") {
    auto x = make_tensor({3}, {-1, 0, 2}, true);
    auto y = relu(x);
    CHECK(y->values == std::vector<double>{0, 0, 2});

    auto x2 = make_tensor({2}, {-1, 2}, true);
    backward(sum_all(relu(x2)));
    CHECK(x2->grad == std::vector<double>{0, 1});
}

TEST_CASE("activation identity returns input") {
    auto x = make_tensor({2}, {1, -1});
    CHECK(activation(Activation::Identity, x) == x);
}

TEST_CASE("log_softmax symmetry and overflow safety") {
    auto a = log_softmax(make_tensor({1, 2}, {0, 0}));
    CHECK(a->values[0] == doctest::Approx(-std::log(2.0)).epsilon(1e-15));
    CHECK(a->values[1] == doctest::Approx(-std::log(2.0)).epsilon(1e-15));

    auto b = log_softmax(make_tensor({1, 2}, {1000, 0}));
    CHECK(std::isfinite(b->values[0]));
    CHECK(b->values[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(b->values[1] == doctest::Approx(-1000.0).epsilon(1e-12));
}

TEST_CASE("log_softmax rows exponentiate to 1") {
    Rng rng(11);
    auto logits = randn({8, 5}, 0.0, 3.0, rng);
    auto lp = log_softmax(logits);
    for (std::int64_t i = 0; i < 8; ++i) {
        double s = 0.0;
        for (std::int64_t j = 0; j < 5; ++j) s += std::exp(lp->values[i * 5 + j]);
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("log_softmax rejects non-finite logits") {
    auto bad = make_tensor({1, 2}, {std::numeric_limits<double>::infinity(), 0.0});
    CHECK_THROWS_AS(log_softmax(bad), NumericError);
}

TEST_CASE("classification loss: uniform prediction gives ln 2") {
    std::vector<std::int64_t> labels{0, 1, 0};
    auto logits = zeros({3, 2});
    auto loss = nll_classification(logits, labels);
    CHECK(loss->value() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("classification loss: hand-set probabilities") {
    // rows are logs of explicit probability vectors
    auto lp = [](double p) { return std::log(p); };
    auto logits = make_tensor({3, 2}, {lp(0.7), lp(0.3), lp(0.2), lp(0.8), lp(0.5), lp(0.5)});
    std::vector<std::int64_t> labels{0, 1, 1};
    auto loss = nll_classification(logits, labels);
    const double expected = -(std::log(0.7) + std::log(0.8) + std::log(0.5)) / 3.0;
    CHECK(loss->value() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("classification loss rejects out-of-range labels") {
    std::vector<std::int64_t> labels{2};
    CHECK_THROWS_AS(nll_classification(zeros({1, 2}), labels), std::out_of_range);
}

TEST_CASE("regression loss at zero residual") {
    const double noise_std = 0.25;
    auto pred = make_tensor({4, 1}, {1, 2, 3, 4});
    auto target = make_tensor({4, 1}, {1, 2, 3, 4});
    auto loss = gaussian_nll_regression(pred, target, noise_std);
    CHECK(loss->value() ==
          doctest::Approx(0.5 * std::log(2.0 * M_PI * noise_std * noise_std)).epsilon(1e-15));
    CHECK_THROWS_AS(gaussian_nll_regression(pred, target, 0.0), ConfigError);
}

TEST_CASE("backward: power rule on sum of cubes") {
    auto x = make_tensor({1}, {2.0}, true);
    auto cube = mul(mul(x, x), x);
    backward(sum_all(cube));
    CHECK(x->grad[0] == doctest::Approx(12.0).epsilon(1e-12));
}

TEST_CASE("backward requires scalar root") {
    auto x = make_tensor({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(mul(x, x)), ShapeError);
}

TEST_CASE("backward accumulates across calls") {
    auto x = make_tensor({2}, {3.0, -1.5}, true);
    auto root = sum_all(mul(x, x));
    backward(root);
    const auto first = x->grad;
    backward(root);
    for (std::size_t i = 0; i < first.size(); ++i) {
        CHECK(x->grad[i] == doctest::Approx(2.0 * first[i]).epsilon(1e-15));
    }
}

TEST_CASE("backward visits shared nodes once (diamond)") {
    auto x = make_tensor({3}, {1.0, -2.0, 0.5}, true);
    auto y = mul(x, x);
    backward(sum_all(add(y, add(y, x))));
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(x->grad[i] == doctest::Approx(4.0 * x->values[i] + 1.0).epsilon(1e-12));
    }
}

TEST_CASE("matmul chain matches finite differences tightly") {
    Rng rng(5);
    auto a = randn({2, 3}, 0.0, 1.0, rng, true);
    auto b = randn({3, 4}, 0.0, 1.0, rng, true);
    auto c = randn({4, 2}, 0.0, 1.0, rng, true);
    auto f = [&] { return sum_all(matmul(matmul(a, b), c))->value(); };
    backward(sum_all(matmul(matmul(a, b), c)));
    auto res = grad_check(f, {{"a", a}, {"b", b}, {"c", c}});
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("gradient suite: every op matches central differences") {
    Rng rng(17);
    const double tol = 1e-4;

    SUBCASE("conv2d with stride and padding") {
        auto x = randn({2, 2, 5, 5}, 0.0, 1.0, rng, true);
        auto k = randn({3, 2, 3, 3}, 0.0, 1.0, rng, true);
        auto f = [&] { return sum_all(mul(conv2d(x, k, 2, 1), conv2d(x, k, 2, 1)))->value(); };
        backward(sum_all(mul(conv2d(x, k, 2, 1), conv2d(x, k, 2, 1))));
        CHECK(grad_check(f, {{"x", x}, {"k", k}}).max_rel_err < tol);
    }
    SUBCASE("add sub mul bias and scalar ops") {
        auto a = randn({3, 4}, 0.0, 1.0, rng, true);
        auto b = randn({3, 4}, 0.0, 1.0, rng, true);
        auto bias = randn({4}, 0.0, 1.0, rng, true);
        auto build = [&] {
            auto t = add_row_bias(add(mul(a, b), sub(a, b)), bias);
            return sum_all(mul(add_scalar(scale(t, 0.7), 0.3), t));
        };
        backward(build());
        CHECK(grad_check([&] { return build()->value(); },
                         {{"a", a}, {"b", b}, {"bias", bias}})
                  .max_rel_err < tol);
    }
    SUBCASE("broadcast_mul row and channel and per-sample patterns") {
        auto m = randn({4, 3}, 0.0, 1.0, rng, true);
        auto v = randn({3}, 1.0, 0.3, rng, true);
        auto x4 = randn({2, 3, 2, 2}, 0.0, 1.0, rng, true);
        auto vc = randn({3}, 1.0, 0.3, rng, true);
        auto vm = randn({2, 3}, 1.0, 0.3, rng, true);
        auto cb = randn({3}, 0.0, 1.0, rng, true);
        auto build = [&] {
            auto r = sum_all(mul(broadcast_mul(m, v), broadcast_mul(m, v)));
            auto c = sum_all(add_channel_bias(broadcast_mul(x4, vc), cb));
            auto p = sum_all(mul(broadcast_mul(x4, vm), x4));
            return add(add(r, c), p);
        };
        backward(build());
        CHECK(grad_check([&] { return build()->value(); },
                         {{"m", m}, {"v", v}, {"x4", x4}, {"vc", vc}, {"vm", vm}, {"cb", cb}})
                  .max_rel_err < tol);
    }
    SUBCASE("reductions, slicing, reshape, transpose, log") {
        auto m = randn({3, 4}, 2.0, 0.25, rng, true);  // positive for log
        auto build = [&] {
            auto a = sum_all(log(column_sum(m)));
            auto b = mean_all(row(m, 1));
            auto c = sum_all(mul(repeat_rows(row(m, 0), 3), reshape(transpose(m), {3, 4})));
            return add(add(a, b), c);
        };
        backward(build());
        CHECK(grad_check([&] { return build()->value(); }, {{"m", m}}).max_rel_err < tol);
    }
    SUBCASE("relu away from the kink") {
        auto x = randn({4, 4}, 0.0, 1.0, rng, true);
        for (auto& v : x->values) {
            if (std::abs(v) < 1e-3) v = 0.5;
        }
        auto f = [&] { return sum_all(mul(relu(x), relu(x)))->value(); };
        backward(sum_all(mul(relu(x), relu(x))));
        CHECK(grad_check(f, {{"x", x}}).max_rel_err < tol);
    }
    SUBCASE("classification head") {
        auto logits = randn({5, 3}, 0.0, 2.0, rng, true);
        std::vector<std::int64_t> labels{0, 2, 1, 1, 0};
        auto f = [&] { return nll_classification(logits, labels)->value(); };
        backward(nll_classification(logits, labels));
        CHECK(grad_check(f, {{"logits", logits}}).max_rel_err < tol);
    }
    SUBCASE("regression head") {
        auto pred = randn({6, 1}, 0.0, 1.0, rng, true);
        auto target = randn({6, 1}, 0.0, 1.0, rng);
        auto f = [&] { return gaussian_nll_regression(pred, target, 0.4)->value(); };
        backward(gaussian_nll_regression(pred, target, 0.4));
        CHECK(grad_check(f, {{"pred", pred}}).max_rel_err < tol);
    }
}

TEST_CASE("randn is deterministic per seed") {
    Rng r1(99), r2(99);
    auto a = randn({4, 4}, 0.0, 1.0, r1);
    auto b = randn({4, 4}, 0.0, 1.0, r2);
    CHECK(a->values == b->values);
}

TEST_CASE("shape algebra rejects mismatches up front") {
    CHECK_THROWS_AS(add(zeros({2}), zeros({3})), ShapeError);
    CHECK_THROWS_AS(add_row_bias(zeros({2, 3}), zeros({2})), ShapeError);
    CHECK_THROWS_AS(broadcast_mul(zeros({2, 3}), zeros({2})), ShapeError);
    CHECK_THROWS_AS(column_sum(zeros({3})), ShapeError);
    CHECK_THROWS_AS(row(zeros({2, 2}), 5), std::out_of_range);
    CHECK_THROWS_AS(reshape(zeros({4}), {3}), ShapeError);
    CHECK_THROWS_AS(conv2d(zeros({1, 2, 3, 3}), zeros({1, 3, 2, 2}), 1, 0), ShapeError);
    CHECK_THROWS_AS(make_tensor({2, 2}, {1.0}), ShapeError);
}

TEST_CASE("elementwise dispatcher covers the named kinds") {
    auto a = make_tensor({2}, {1, 2});
    auto b = make_tensor({2}, {3, 4});
    CHECK(elementwise(OpKind::Add, a, b)->values == std::vector<double>{4, 6});
    CHECK(elementwise(OpKind::Sub, a, b)->values == std::vector<double>{-2, -2});
    CHECK(elementwise(OpKind::Mul, a, b)->values == std::vector<double>{3, 8});
    CHECK(elementwise(OpKind::Scale, a, 2.0)->values == std::vector<double>{2, 4});
    auto m = ones({2, 2});
    CHECK(elementwise(OpKind::BroadcastMul, m, b)->values == std::vector<double>{3, 4, 3, 4});
}
