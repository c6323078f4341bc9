#pragma once

// Component-sliced minibatch ELBO training: each minibatch is split into K
// equal slices, component k draws S noise samples for slice (k + step) mod K,
// the mean per-sample NLL plus beta * KL / N is minimized with Nesterov SGD
// under dual learning rates (annealed lambda0 for weights, constant lambda1
// for the variational parameters).

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ibnn/data.hpp"
#include "ibnn/model.hpp"
#include "ibnn/posterior.hpp"

namespace ibnn {

struct TrainConfig {
    std::int64_t batch_size = 128;  // B; K must divide it
    std::int64_t epochs = 300;      // N
    std::int64_t K = 4;
    std::int64_t S = 2;             // noise samples per component
    double lambda0 = 0.05;          // initial deterministic-weight LR
    double lambda1 = 1.2;           // constant variational LR
    double sigma0 = 0.75;           // posterior mean init std
    double prior_std = 0.3;         // latent prior N(1, prior_std^2)
    double weight_decay = 5e-4;
    std::int64_t beta_anneal_epochs = 200;  // KL weight 0 -> 1 over this many epochs
    double beta_scale = 1.0;                // multiplier on beta; 0 disables the KL term
    double momentum = 0.9;
    std::int64_t lr_anneal_start = 150;
    std::int64_t lr_anneal_duration = 120;
    double lr_final_frac = 0.01;
    std::uint64_t seed = 0;
    bool variational_momentum = true;  // apply momentum to mu, sigma updates

    void validate() const;  // throws ConfigError
};

// Reads the Table-2-named keys (lambda0, lambda1, S, sigma0, prior_std,
// weight_decay, K, batch_size, epochs, beta_anneal_epochs, lr_anneal_start,
// lr_anneal_duration, seed) plus the optional extras (momentum,
// lr_final_frac, variational_momentum). Missing keys keep their defaults.
TrainConfig train_config_from_kv(const std::map<std::string, std::string>& kv);

// beta = min(epoch / anneal_epochs, 1); 0 at epoch 0.
double beta_schedule(std::int64_t epoch, std::int64_t anneal_epochs);

// lambda0 before `start`, linear to final_frac * lambda0 over `duration`,
// constant after.
double lr_schedule(std::int64_t epoch, double lambda0, std::int64_t start = 150,
                   std::int64_t duration = 120, double final_frac = 0.01);

// Order-preserving partition of a batch into K slices of size B/K.
std::vector<std::vector<std::int64_t>> slice_batch(std::span<const std::int64_t> batch,
                                                   std::int64_t K);

// Nesterov-momentum SGD over one parameter group.
class SgdGroup {
public:
    SgdGroup(std::vector<ParamSpec> params, double momentum, bool use_momentum,
             double weight_decay);
    void zero_grad();
    void step(double lr);  // consumes .grad, re-applies the std floor
    bool empty() const { return slots_.empty(); }

private:
    struct Slot {
        ParamSpec spec;
        std::vector<double> velocity;
    };
    std::vector<Slot> slots_;
    double momentum_;
    bool use_momentum_;
    double weight_decay_;
};

struct TrainState {
    std::int64_t epoch = 0;
    std::int64_t step = 0;
    SgdGroup weights;
    SgdGroup variational;
};

// The Eq.-16 minibatch objective as a graph node: mean per-sample NLL over
// the sliced batch plus beta * KL / dataset size. Does not update parameters.
TensorPtr elbo_loss(const Model& model, const Dataset& data,
                    std::span<const std::int64_t> batch, const TrainConfig& config,
                    std::int64_t step, double beta);

struct StepStats {
    double loss = 0.0;
    double nll = 0.0;
    double kl = 0.0;
};
StepStats elbo_step(Model& model, const Dataset& data, std::span<const std::int64_t> batch,
                    const TrainConfig& config, TrainState& state);

struct EpochStats {
    std::int64_t epoch = 0;
    double loss = 0.0;
    double nll = 0.0;
    double kl = 0.0;
    double beta = 0.0;
    double lr_weights = 0.0;
    double lr_variational = 0.0;
};

// N epochs of shuffled size-B minibatches (a trailing partial batch is
// dropped); deterministic given config.seed.
std::vector<EpochStats> train(Model& model, const Dataset& data, const TrainConfig& config);

void write_metrics_csv(std::span<const EpochStats> log, const std::string& path);

}  // namespace ibnn
