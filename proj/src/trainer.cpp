#include "ibnn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "ibnn/csv.hpp"
#include "ibnn/errors.hpp"

namespace ibnn {

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (K < 1) throw ConfigError("K must be >= 1");
    if (batch_size % K != 0) {
        throw ConfigError("K = " + std::to_string(K) + " must divide batch_size = " +
                          std::to_string(batch_size));
    }
    if (S < 1) throw ConfigError("S must be >= 1");
    if (lambda0 < 0.0 || lambda1 < 0.0) throw ConfigError("learning rates must be >= 0");
    if (sigma0 < 0.0) throw ConfigError("sigma0 must be >= 0");
    if (!(prior_std > 0.0)) throw ConfigError("prior_std must be > 0");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (beta_anneal_epochs < 0) throw ConfigError("beta_anneal_epochs must be >= 0");
    if (beta_anneal_epochs > epochs) {
        throw ConfigError("beta_anneal_epochs must not exceed epochs");
    }
    if (beta_scale < 0.0) throw ConfigError("beta_scale must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0,1)");
    if (lr_anneal_start < 0 || lr_anneal_duration < 1) {
        throw ConfigError("lr anneal window is invalid");
    }
    if (!(lr_final_frac > 0.0 && lr_final_frac <= 1.0)) {
        throw ConfigError("lr_final_frac must be in (0,1]");
    }
}

namespace {

std::int64_t kv_i64(const std::map<std::string, std::string>& kv, const std::string& key,
                    std::int64_t fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    try {
        std::size_t pos = 0;
        const std::int64_t v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument(it->second);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad integer for '" + key + "': " + it->second);
    }
}

double kv_f64(const std::map<std::string, std::string>& kv, const std::string& key,
              double fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    try {
        std::size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument(it->second);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad number for '" + key + "': " + it->second);
    }
}

bool kv_bool(const std::map<std::string, std::string>& kv, const std::string& key, bool fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("bad boolean for '" + key + "': " + it->second);
}

}  // namespace

TrainConfig train_config_from_kv(const std::map<std::string, std::string>& kv) {
    TrainConfig c;
    c.batch_size = kv_i64(kv, "batch_size", c.batch_size);
    c.epochs = kv_i64(kv, "epochs", c.epochs);
    c.K = kv_i64(kv, "K", c.K);
    c.S = kv_i64(kv, "S", c.S);
    c.lambda0 = kv_f64(kv, "lambda0", c.lambda0);
    c.lambda1 = kv_f64(kv, "lambda1", c.lambda1);
    c.sigma0 = kv_f64(kv, "sigma0", c.sigma0);
    c.prior_std = kv_f64(kv, "prior_std", c.prior_std);
    c.weight_decay = kv_f64(kv, "weight_decay", c.weight_decay);
    c.beta_anneal_epochs = kv_i64(kv, "beta_anneal_epochs", c.beta_anneal_epochs);
    c.beta_scale = kv_f64(kv, "beta_scale", c.beta_scale);
    c.momentum = kv_f64(kv, "momentum", c.momentum);
    c.lr_anneal_start = kv_i64(kv, "lr_anneal_start", c.lr_anneal_start);
    c.lr_anneal_duration = kv_i64(kv, "lr_anneal_duration", c.lr_anneal_duration);
    c.lr_final_frac = kv_f64(kv, "lr_final_frac", c.lr_final_frac);
    c.seed = static_cast<std::uint64_t>(kv_i64(kv, "seed", static_cast<std::int64_t>(c.seed)));
    c.variational_momentum = kv_bool(kv, "variational_momentum", c.variational_momentum);
    return c;
}

double beta_schedule(std::int64_t epoch, std::int64_t anneal_epochs) {
    if (epoch < 0) throw ConfigError("beta_schedule: epoch must be >= 0");
    if (anneal_epochs <= 0) return 1.0;
    return std::min(static_cast<double>(epoch) / static_cast<double>(anneal_epochs), 1.0);
}

double lr_schedule(std::int64_t epoch, double lambda0, std::int64_t start, std::int64_t duration,
                   double final_frac) {
    if (epoch < start) return lambda0;
    if (epoch >= start + duration) return final_frac * lambda0;
    const double t = static_cast<double>(epoch - start) / static_cast<double>(duration);
    return lambda0 * (1.0 - (1.0 - final_frac) * t);
}

std::vector<std::vector<std::int64_t>> slice_batch(std::span<const std::int64_t> batch,
                                                   std::int64_t K) {
    const auto B = static_cast<std::int64_t>(batch.size());
    if (K < 1) throw ConfigError("slice_batch: K must be >= 1");
    if (B % K != 0) {
        throw ConfigError("slice_batch: K = " + std::to_string(K) +
                          " does not divide batch size " + std::to_string(B));
    }
    const std::int64_t per = B / K;
    std::vector<std::vector<std::int64_t>> slices(static_cast<std::size_t>(K));
    for (std::int64_t k = 0; k < K; ++k) {
        slices[k].assign(batch.begin() + k * per, batch.begin() + (k + 1) * per);
    }
    return slices;
}

SgdGroup::SgdGroup(std::vector<ParamSpec> params, double momentum, bool use_momentum,
                   double weight_decay)
    : momentum_(momentum), use_momentum_(use_momentum), weight_decay_(weight_decay) {
    slots_.reserve(params.size());
    for (auto& p : params) {
        Slot slot;
        slot.velocity.assign(p.tensor->values.size(), 0.0);
        slot.spec = std::move(p);
        slots_.push_back(std::move(slot));
    }
}

void SgdGroup::zero_grad() {
    for (auto& slot : slots_) slot.spec.tensor->zero_grad();
}

void SgdGroup::step(double lr) {
    if (lr == 0.0) return;  // frozen group: no update, floor untouched
    for (auto& slot : slots_) {
        Tensor& t = *slot.spec.tensor;
        const double mu = momentum_;
        for (std::size_t i = 0; i < t.values.size(); ++i) {
            double g = t.grad[i];
            if (slot.spec.decay) g += weight_decay_ * t.values[i];
            double d = g;
            if (use_momentum_ && mu > 0.0) {
                slot.velocity[i] = mu * slot.velocity[i] + g;
                d = g + mu * slot.velocity[i];  // Nesterov
            }
            t.values[i] -= lr * d;
        }
        if (slot.spec.is_std) {
            for (auto& v : t.values) {
                if (v < slot.spec.floor) v = slot.spec.floor;
            }
        }
    }
}

namespace {

TensorPtr likelihood_nll(const Model& model, const TensorPtr& out, const Dataset& data,
                         std::span<const std::int64_t> slice) {
    if (model.likelihood == Likelihood::Classification) {
        const auto labels = gather_labels(data, slice);
        return nll_classification(out, labels);
    }
    auto targets = gather_targets(data, slice);
    auto target_t = make_tensor({static_cast<std::int64_t>(slice.size()), 1}, std::move(targets));
    return gaussian_nll_regression(out, target_t, model.noise_std);
}

// Mean per-sample NLL over the component-sliced batch.
TensorPtr batch_nll(const Model& model, const Dataset& data, std::span<const std::int64_t> batch,
                    const TrainConfig& config, std::int64_t step) {
    const std::int64_t K_eff = model.kind == ModelKind::Ibnn ? model.K : 1;
    const auto slices = slice_batch(batch, K_eff);
    TensorPtr sum;
    for (std::int64_t k = 0; k < K_eff; ++k) {
        const auto& slice = slices[(k + step) % K_eff];
        auto x = gather_inputs(data, slice);
        for (std::int64_t s = 0; s < config.S; ++s) {
            Rng rng = make_rng(config.seed, {0x5EEDull, static_cast<std::uint64_t>(step),
                                             static_cast<std::uint64_t>(k),
                                             static_cast<std::uint64_t>(s)});
            auto out = forward_sample(model, x, k, rng);
            auto nll = likelihood_nll(model, out, data, slice);
            sum = sum ? add(sum, nll) : nll;
        }
    }
    return scale(sum, 1.0 / static_cast<double>(K_eff * config.S));
}

}  // namespace

TensorPtr elbo_loss(const Model& model, const Dataset& data, std::span<const std::int64_t> batch,
                    const TrainConfig& config, std::int64_t step, double beta) {
    auto nll = batch_nll(model, data, batch, config, step);
    if (beta <= 0.0) return nll;
    const LatentPrior prior{config.prior_std};
    return add(nll, scale(model_kl(model, prior), beta / static_cast<double>(data.size())));
}

StepStats elbo_step(Model& model, const Dataset& data, std::span<const std::int64_t> batch,
                    const TrainConfig& config, TrainState& state) {
    const double beta =
        config.beta_scale * beta_schedule(state.epoch, config.beta_anneal_epochs);
    const double lr_w = lr_schedule(state.epoch, config.lambda0, config.lr_anneal_start,
                                    config.lr_anneal_duration, config.lr_final_frac);
    const LatentPrior prior{config.prior_std};

    state.weights.zero_grad();
    state.variational.zero_grad();

    auto nll = batch_nll(model, data, batch, config, state.step);
    const double kl_value = model_kl_value(model, prior);
    TensorPtr loss = nll;
    if (beta > 0.0) {
        loss = add(nll, scale(model_kl(model, prior), beta / static_cast<double>(data.size())));
    }
    if (!std::isfinite(loss->value())) {
        throw NumericError("non-finite loss at epoch " + std::to_string(state.epoch) + " step " +
                           std::to_string(state.step));
    }
    backward(loss);

    state.weights.step(lr_w);
    state.variational.step(config.lambda1);
    ++state.step;
    return {loss->value(), nll->value(), kl_value};
}

std::vector<EpochStats> train(Model& model, const Dataset& data, const TrainConfig& config) {
    config.validate();
    validate(model);
    if (data.size() < 1) throw DataError("train: empty dataset");
    if (config.batch_size > data.size()) {
        throw ConfigError("batch_size " + std::to_string(config.batch_size) +
                          " exceeds dataset size " + std::to_string(data.size()));
    }
    if (model.kind == ModelKind::Ibnn && model.K != config.K) {
        throw ConfigError("model K = " + std::to_string(model.K) + " != config K = " +
                          std::to_string(config.K));
    }

    auto groups = collect_params(model);
    TrainState state{
        0, 0,
        SgdGroup(std::move(groups.weights), config.momentum, /*use_momentum=*/true,
                 config.weight_decay),
        SgdGroup(std::move(groups.variational), config.momentum, config.variational_momentum,
                 0.0)};

    std::vector<std::int64_t> indices(static_cast<std::size_t>(data.size()));
    std::iota(indices.begin(), indices.end(), 0);

    std::vector<EpochStats> log;
    log.reserve(static_cast<std::size_t>(config.epochs));
    const std::int64_t steps_per_epoch = data.size() / config.batch_size;
    for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
        state.epoch = epoch;
        Rng shuffle_rng = make_rng(config.seed, {0x50FFull, static_cast<std::uint64_t>(epoch)});
        std::shuffle(indices.begin(), indices.end(), shuffle_rng);

        EpochStats stats;
        stats.epoch = epoch;
        stats.beta = config.beta_scale * beta_schedule(epoch, config.beta_anneal_epochs);
        stats.lr_weights = lr_schedule(epoch, config.lambda0, config.lr_anneal_start,
                                       config.lr_anneal_duration, config.lr_final_frac);
        stats.lr_variational = config.lambda1;
        for (std::int64_t b = 0; b < steps_per_epoch; ++b) {
            std::span<const std::int64_t> batch(indices.data() + b * config.batch_size,
                                                static_cast<std::size_t>(config.batch_size));
            const auto step_stats = elbo_step(model, data, batch, config, state);
            stats.loss += step_stats.loss;
            stats.nll += step_stats.nll;
            stats.kl += step_stats.kl;
        }
        stats.loss /= static_cast<double>(steps_per_epoch);
        stats.nll /= static_cast<double>(steps_per_epoch);
        stats.kl /= static_cast<double>(steps_per_epoch);
        log.push_back(stats);
    }
    return log;
}

void write_metrics_csv(std::span<const EpochStats> log, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open metrics csv for writing: " + path);
    out << "epoch,loss,nll,kl,beta,lr_weights,lr_variational\n";
    for (const auto& e : log) {
        out << e.epoch << ',' << g17(e.loss) << ',' << g17(e.nll) << ',' << g17(e.kl) << ','
            << g17(e.beta) << ',' << g17(e.lr_weights) << ',' << g17(e.lr_variational) << "\n";
    }
    if (!out) throw DataError("metrics csv write failed: " + path);
}

}  // namespace ibnn
