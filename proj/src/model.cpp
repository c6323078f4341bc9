#include "ibnn/model.hpp"

#include <cmath>

#include "ibnn/errors.hpp"

namespace ibnn {

namespace {

TensorPtr he_normal(Shape shape, std::int64_t fan_in, Rng& rng, double scale = 1.0) {
    return randn(std::move(shape), 0.0, scale * std::sqrt(2.0 / static_cast<double>(fan_in)), rng,
                 /*requires_grad=*/true);
}

TensorPtr ensure_2d(const TensorPtr& h) {
    if (h->rank() == 2) return h;
    if (h->rank() == 4) {
        return reshape(h, {h->shape[0], h->shape[1] * h->shape[2] * h->shape[3]});
    }
    throw ShapeError("expected 2-D or 4-D activations, got " + shape_str(h->shape));
}

TensorPtr dense_apply(const TensorPtr& h, const TensorPtr& W, const TensorPtr& b, Activation act) {
    return activation(act, add_row_bias(matmul(h, transpose(W)), b));
}

// KL of elementwise N(mean, std^2) to N(0, prior_std^2), summed over entries.
TensorPtr gaussian_kl(const TensorPtr& mean, const TensorPtr& std_t, double prior_std) {
    const double s2 = prior_std * prior_std;
    auto var = mul(std_t, std_t);
    auto quad = scale(add(var, mul(mean, mean)), 1.0 / (2.0 * s2));
    auto log_term = scale(log(var), -0.5);
    return sum_all(add_scalar(add(log_term, quad), std::log(prior_std) - 0.5));
}

double gaussian_kl_value(const TensorPtr& mean, const TensorPtr& std_t, double prior_std) {
    const double s2 = prior_std * prior_std;
    double kl = 0.0;
    for (std::size_t i = 0; i < mean->values.size(); ++i) {
        const double m = mean->values[i];
        const double sd = std_t->values[i];
        kl += std::log(prior_std) - std::log(sd) + (sd * sd + m * m) / (2.0 * s2) - 0.5;
    }
    return kl;
}

}  // namespace

IbnnDenseLayer make_ibnn_dense(std::int64_t in, std::int64_t out, std::int64_t K, double sigma0,
                               Activation act, Rng& rng, double init_scale) {
    IbnnDenseLayer layer;
    layer.U = he_normal({out, in}, in, rng, init_scale);
    layer.b = zeros({out}, /*requires_grad=*/true);
    layer.posterior = init_posterior(K, in, sigma0, rng);
    layer.act = act;
    return layer;
}

IbnnConvLayer make_ibnn_conv(std::int64_t in_channels, std::int64_t filters, std::int64_t kh,
                             std::int64_t kw, std::int64_t stride, std::int64_t padding,
                             std::int64_t K, double sigma0, Activation act, Rng& rng) {
    IbnnConvLayer layer;
    layer.kernel = he_normal({filters, in_channels, kh, kw}, in_channels * kh * kw, rng);
    layer.bias = zeros({filters}, /*requires_grad=*/true);
    layer.posterior = init_posterior(K, in_channels, sigma0, rng);
    layer.stride = stride;
    layer.padding = padding;
    layer.act = act;
    return layer;
}

BnnViDenseLayer make_bnnvi_dense(std::int64_t in, std::int64_t out, Activation act, Rng& rng,
                                 double init_scale) {
    BnnViDenseLayer layer;
    layer.w_mean = he_normal({out, in}, in, rng, init_scale);
    layer.w_std = randn({out, in}, 0.05, 0.02, rng, /*requires_grad=*/true);
    layer.b_mean = zeros({out}, /*requires_grad=*/true);
    layer.b_std = randn({out}, 0.05, 0.02, rng, /*requires_grad=*/true);
    for (auto* t : {&layer.w_std, &layer.b_std}) {
        for (auto& v : (*t)->values) {
            if (v < kBnnViStdFloor) v = kBnnViStdFloor;
        }
    }
    layer.act = act;
    return layer;
}

MixturePosterior degenerate_posterior(std::int64_t dim) {
    MixturePosterior p;
    p.K = 1;
    p.dim = dim;
    p.means = ones({1, dim}, /*requires_grad=*/true);
    p.stds = full({1, dim}, kStdFloor, /*requires_grad=*/true);
    return p;
}

void validate(const Model& model) {
    if (model.layers.empty()) throw ConfigError("model has no layers");
    std::int64_t prev_out = -1;  // -1: unknown (input or after conv spatial dims)
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const Layer& layer = model.layers[i];
        const bool is_bnnvi = std::holds_alternative<BnnViDenseLayer>(layer);
        if ((model.kind == ModelKind::BnnVi) != is_bnnvi) {
            throw ConfigError("layer " + std::to_string(i) + " does not match model kind");
        }
        if (const auto* d = std::get_if<IbnnDenseLayer>(&layer)) {
            const std::int64_t in = d->U->shape[1], out = d->U->shape[0];
            if (d->posterior.dim != in) {
                throw ConfigError("layer " + std::to_string(i) + ": posterior dim " +
                                  std::to_string(d->posterior.dim) + " != input dim " +
                                  std::to_string(in));
            }
            if (d->posterior.K != model.K) {
                throw ConfigError("layer " + std::to_string(i) + ": K mismatch");
            }
            if (prev_out >= 0 && prev_out != in) {
                throw ConfigError("layer " + std::to_string(i) + ": input dim " +
                                  std::to_string(in) + " != previous output " +
                                  std::to_string(prev_out));
            }
            prev_out = out;
        } else if (const auto* c = std::get_if<IbnnConvLayer>(&layer)) {
            if (c->posterior.dim != c->kernel->shape[1]) {
                throw ConfigError("layer " + std::to_string(i) + ": posterior dim " +
                                  std::to_string(c->posterior.dim) + " != input channels " +
                                  std::to_string(c->kernel->shape[1]));
            }
            if (c->posterior.K != model.K) {
                throw ConfigError("layer " + std::to_string(i) + ": K mismatch");
            }
            prev_out = -1;  // spatial extent unknown until forward
        } else if (const auto* v = std::get_if<BnnViDenseLayer>(&layer)) {
            const std::int64_t in = v->w_mean->shape[1], out = v->w_mean->shape[0];
            if (prev_out >= 0 && prev_out != in) {
                throw ConfigError("layer " + std::to_string(i) + ": input dim mismatch");
            }
            prev_out = out;
        }
    }
}

TensorPtr forward_sample(const Model& model, const TensorPtr& x, std::int64_t k, Rng& rng) {
    if (model.kind == ModelKind::Deterministic) return forward_deterministic(model, x);
    if (k < 0 || k >= model.K) throw std::out_of_range("component index out of range");

    TensorPtr h = x;
    for (const Layer& layer : model.layers) {
        if (const auto* d = std::get_if<IbnnDenseLayer>(&layer)) {
            h = ensure_2d(h);
            if (model.per_datapoint_noise) {
                auto z = sample_per_row(d->posterior, k, h->shape[0], rng);
                h = dense_apply(mul(h, z), d->U, d->b, d->act);
            } else {
                auto z = sample(d->posterior, k, rng);
                h = dense_apply(h, broadcast_mul(d->U, z), d->b, d->act);
            }
        } else if (const auto* c = std::get_if<IbnnConvLayer>(&layer)) {
            if (h->rank() != 4) {
                throw ShapeError("conv layer expects (N,C,H,W) input, got " + shape_str(h->shape));
            }
            if (model.per_datapoint_noise) {
                auto z = sample_per_row(c->posterior, k, h->shape[0], rng);
                h = conv2d(broadcast_mul(h, z), c->kernel, c->stride, c->padding);
            } else {
                auto z = sample(c->posterior, k, rng);
                h = conv2d(h, broadcast_mul(c->kernel, z), c->stride, c->padding);
            }
            h = activation(c->act, add_channel_bias(h, c->bias));
        } else if (const auto* v = std::get_if<BnnViDenseLayer>(&layer)) {
            h = ensure_2d(h);
            auto eps_w = randn(v->w_mean->shape, 0.0, 1.0, rng);
            auto eps_b = randn(v->b_mean->shape, 0.0, 1.0, rng);
            auto W = add(v->w_mean, mul(v->w_std, eps_w));
            auto b = add(v->b_mean, mul(v->b_std, eps_b));
            h = dense_apply(h, W, b, v->act);
        }
    }
    return h;
}

TensorPtr forward_deterministic(const Model& model, const TensorPtr& x) {
    TensorPtr h = x;
    for (const Layer& layer : model.layers) {
        if (const auto* d = std::get_if<IbnnDenseLayer>(&layer)) {
            h = dense_apply(ensure_2d(h), d->U, d->b, d->act);
        } else if (const auto* c = std::get_if<IbnnConvLayer>(&layer)) {
            if (h->rank() != 4) {
                throw ShapeError("conv layer expects (N,C,H,W) input, got " + shape_str(h->shape));
            }
            h = activation(c->act, add_channel_bias(conv2d(h, c->kernel, c->stride, c->padding),
                                                    c->bias));
        } else if (const auto* v = std::get_if<BnnViDenseLayer>(&layer)) {
            h = dense_apply(ensure_2d(h), v->w_mean, v->b_mean, v->act);
        }
    }
    return h;
}

TensorPtr implicit_weights(const IbnnDenseLayer& layer, std::span<const double> z) {
    const std::int64_t out = layer.U->shape[0], in = layer.U->shape[1];
    if (static_cast<std::int64_t>(z.size()) != in) {
        throw ShapeError("implicit_weights: z length " + std::to_string(z.size()) +
                         " != input dim " + std::to_string(in));
    }
    std::vector<double> w(layer.U->values.size());
    for (std::int64_t i = 0; i < out; ++i)
        for (std::int64_t j = 0; j < in; ++j) w[i * in + j] = layer.U->values[i * in + j] * z[j];
    return make_tensor({out, in}, std::move(w));
}

TensorPtr implicit_weights(const IbnnConvLayer& layer, std::span<const double> z) {
    const auto& ks = layer.kernel->shape;
    const std::int64_t F = ks[0], C = ks[1], hw = ks[2] * ks[3];
    if (static_cast<std::int64_t>(z.size()) != C) {
        throw ShapeError("implicit_weights: z length " + std::to_string(z.size()) +
                         " != input channels " + std::to_string(C));
    }
    std::vector<double> w(layer.kernel->values.size());
    for (std::int64_t f = 0; f < F; ++f)
        for (std::int64_t c = 0; c < C; ++c) {
            const std::int64_t base = (f * C + c) * hw;
            for (std::int64_t s = 0; s < hw; ++s) w[base + s] = layer.kernel->values[base + s] * z[c];
        }
    return make_tensor(ks, std::move(w));
}

std::vector<double> export_component_weights(const Model& model, std::int64_t k) {
    if (k < 0 || k >= model.K) throw std::out_of_range("component index out of range");
    std::vector<double> flat;
    for (const Layer& layer : model.layers) {
        if (const auto* d = std::get_if<IbnnDenseLayer>(&layer)) {
            const std::int64_t dim = d->posterior.dim;
            auto w = implicit_weights(*d, std::span<const double>(
                                              d->posterior.means->values.data() + k * dim,
                                              static_cast<std::size_t>(dim)));
            flat.insert(flat.end(), w->values.begin(), w->values.end());
        } else if (const auto* c = std::get_if<IbnnConvLayer>(&layer)) {
            const std::int64_t dim = c->posterior.dim;
            auto w = implicit_weights(*c, std::span<const double>(
                                              c->posterior.means->values.data() + k * dim,
                                              static_cast<std::size_t>(dim)));
            flat.insert(flat.end(), w->values.begin(), w->values.end());
        } else {
            throw ConfigError("component weight export requires an iBNN model");
        }
    }
    return flat;
}

std::vector<double> export_deterministic_weights(const Model& model) {
    std::vector<double> flat;
    for (const Layer& layer : model.layers) {
        if (const auto* d = std::get_if<IbnnDenseLayer>(&layer)) {
            flat.insert(flat.end(), d->U->values.begin(), d->U->values.end());
        } else if (const auto* c = std::get_if<IbnnConvLayer>(&layer)) {
            flat.insert(flat.end(), c->kernel->values.begin(), c->kernel->values.end());
        } else {
            throw ConfigError("deterministic weight export requires an iBNN model");
        }
    }
    return flat;
}

TensorPtr model_kl(const Model& model, const LatentPrior& prior) {
    if (model.kind == ModelKind::Deterministic) return scalar(0.0);
    TensorPtr kl;
    for (const Layer& layer : model.layers) {
        TensorPtr term;
        if (const auto* d = std::get_if<IbnnDenseLayer>(&layer)) {
            term = kl_to_prior(d->posterior, prior);
        } else if (const auto* c = std::get_if<IbnnConvLayer>(&layer)) {
            term = kl_to_prior(c->posterior, prior);
        } else if (const auto* v = std::get_if<BnnViDenseLayer>(&layer)) {
            term = add(gaussian_kl(v->w_mean, v->w_std, model.weight_prior_std),
                       gaussian_kl(v->b_mean, v->b_std, model.weight_prior_std));
        }
        kl = kl ? add(kl, term) : term;
    }
    return kl;
}

double model_kl_value(const Model& model, const LatentPrior& prior) {
    if (model.kind == ModelKind::Deterministic) return 0.0;
    double kl = 0.0;
    for (const Layer& layer : model.layers) {
        if (const auto* d = std::get_if<IbnnDenseLayer>(&layer)) {
            kl += kl_to_prior_value(d->posterior, prior);
        } else if (const auto* c = std::get_if<IbnnConvLayer>(&layer)) {
            kl += kl_to_prior_value(c->posterior, prior);
        } else if (const auto* v = std::get_if<BnnViDenseLayer>(&layer)) {
            kl += gaussian_kl_value(v->w_mean, v->w_std, model.weight_prior_std);
            kl += gaussian_kl_value(v->b_mean, v->b_std, model.weight_prior_std);
        }
    }
    return kl;
}

ParamGroups collect_params(Model& model) {
    ParamGroups groups;
    for (Layer& layer : model.layers) {
        if (auto* d = std::get_if<IbnnDenseLayer>(&layer)) {
            if (!model.freeze_weights) {
                groups.weights.push_back({d->U, /*decay=*/true, /*is_std=*/false});
                groups.weights.push_back({d->b, /*decay=*/true, /*is_std=*/false});
            }
            if (model.kind == ModelKind::Ibnn) {
                groups.variational.push_back({d->posterior.means, false, false});
                groups.variational.push_back({d->posterior.stds, false, /*is_std=*/true});
            }
        } else if (auto* c = std::get_if<IbnnConvLayer>(&layer)) {
            if (!model.freeze_weights) {
                groups.weights.push_back({c->kernel, true, false});
                groups.weights.push_back({c->bias, true, false});
            }
            if (model.kind == ModelKind::Ibnn) {
                groups.variational.push_back({c->posterior.means, false, false});
                groups.variational.push_back({c->posterior.stds, false, true});
            }
        } else if (auto* v = std::get_if<BnnViDenseLayer>(&layer)) {
            // All BNN-VI parameters follow the weight schedule; the prior, not
            // weight decay, regularizes them. The raised std floor keeps the
            // per-weight -1/sigma KL gradient within step-size range.
            groups.weights.push_back({v->w_mean, false, false, kStdFloor});
            groups.weights.push_back({v->w_std, false, true, kBnnViStdFloor});
            groups.weights.push_back({v->b_mean, false, false, kStdFloor});
            groups.weights.push_back({v->b_std, false, true, kBnnViStdFloor});
        }
    }
    return groups;
}

std::int64_t count_parameters(const Model& model) {
    std::int64_t n = 0;
    for (const Layer& layer : model.layers) {
        if (const auto* d = std::get_if<IbnnDenseLayer>(&layer)) {
            n += d->U->size() + d->b->size();
        } else if (const auto* c = std::get_if<IbnnConvLayer>(&layer)) {
            n += c->kernel->size() + c->bias->size();
        } else if (const auto* v = std::get_if<BnnViDenseLayer>(&layer)) {
            n += v->w_mean->size() + v->b_mean->size();
        }
    }
    return n;
}

}  // namespace ibnn
