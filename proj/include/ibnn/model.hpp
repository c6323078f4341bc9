#pragma once

// Layer and model definitions: dense/conv layers with multiplicative latent
// input noise, a mean-field Gaussian weight-posterior baseline, and the
// implicit-weight view W = U diag(z).
//
// A forward draw materializes the implicit weights (column- or channel-scaled
// by z) and applies them to the raw input, so sampling a noisy forward pass
// and running the implicit-weight network are the same float path. In
// per-datapoint mode each row gets its own z and the input is scaled instead.

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "ibnn/posterior.hpp"
#include "ibnn/random.hpp"
#include "ibnn/tensor.hpp"

namespace ibnn {

// The per-weight KL gradient carries a -1/sigma term; a std parked at the
// 1e-6 posterior floor would get a catapult-sized restoring step, so the
// BNN-VI baseline floors its stds higher.
inline constexpr double kBnnViStdFloor = 0.01;

enum class Likelihood { Classification, Regression };
enum class ModelKind { Ibnn, BnnVi, Deterministic };

struct IbnnDenseLayer {
    TensorPtr U;  // out x in
    TensorPtr b;  // out
    MixturePosterior posterior;  // dim == in
    Activation act = Activation::Relu;
};

struct IbnnConvLayer {
    TensorPtr kernel;  // F x C x h x w
    TensorPtr bias;    // F
    MixturePosterior posterior;  // dim == C, one latent per input channel
    std::int64_t stride = 1;
    std::int64_t padding = 0;
    Activation act = Activation::Relu;
};

// Mean-field Gaussian posterior directly over weights and biases, prior
// N(0, sigma_w^2) on every entry.
struct BnnViDenseLayer {
    TensorPtr w_mean;  // out x in
    TensorPtr w_std;
    TensorPtr b_mean;  // out
    TensorPtr b_std;
    Activation act = Activation::Relu;
};

using Layer = std::variant<IbnnDenseLayer, IbnnConvLayer, BnnViDenseLayer>;

struct Model {
    ModelKind kind = ModelKind::Ibnn;
    std::vector<Layer> layers;
    Likelihood likelihood = Likelihood::Classification;
    double noise_std = 0.1;         // homoscedastic regression likelihood
    std::int64_t K = 1;             // shared across layers
    bool freeze_weights = false;    // exclude U, b from updates
    bool per_datapoint_noise = false;
    double weight_prior_std = 1.0;  // BNN-VI prior std
};

// ---- construction ----
IbnnDenseLayer make_ibnn_dense(std::int64_t in, std::int64_t out, std::int64_t K, double sigma0,
                               Activation act, Rng& rng, double init_scale = 1.0);
IbnnConvLayer make_ibnn_conv(std::int64_t in_channels, std::int64_t filters, std::int64_t kh,
                             std::int64_t kw, std::int64_t stride, std::int64_t padding,
                             std::int64_t K, double sigma0, Activation act, Rng& rng);
BnnViDenseLayer make_bnnvi_dense(std::int64_t in, std::int64_t out, Activation act, Rng& rng,
                                 double init_scale = 1.0);

// K=1 posterior pinned at z=1, used by deterministic models.
MixturePosterior degenerate_posterior(std::int64_t dim);

// Checks kind/layer agreement, adjacent dimensions, shared K.
void validate(const Model& model);

// ---- forward ----
// One z per layer drawn from component k (per-datapoint mode draws one per
// row). The input itself is perturbed by the first layer's z.
TensorPtr forward_sample(const Model& model, const TensorPtr& x, std::int64_t k, Rng& rng);

// Forward at z = 1 (mean weights for BNN-VI).
TensorPtr forward_deterministic(const Model& model, const TensorPtr& x);

// ---- implicit weights ----
// U diag(z) for dense layers (column n scaled by z_n); channel slice c of the
// kernel scaled by z_c for conv layers.
TensorPtr implicit_weights(const IbnnDenseLayer& layer, std::span<const double> z);
TensorPtr implicit_weights(const IbnnConvLayer& layer, std::span<const double> z);

// Flattened U_l diag(mu_{l,k}) over all layers, layer order, row-major.
std::vector<double> export_component_weights(const Model& model, std::int64_t k);
// Flattened U_l over all layers (the deterministic weights).
std::vector<double> export_deterministic_weights(const Model& model);

// ---- KL ----
// Sum of layer KL terms: mixture-mean KL for iBNN layers, closed-form
// Gaussian weight KL for BNN-VI layers, zero for deterministic models.
TensorPtr model_kl(const Model& model, const LatentPrior& prior);
double model_kl_value(const Model& model, const LatentPrior& prior);

// ---- parameters ----
struct ParamSpec {
    TensorPtr tensor;
    bool decay = false;       // weight decay applies
    bool is_std = false;      // positivity floor applies after updates
    double floor = kStdFloor;
};
struct ParamGroups {
    std::vector<ParamSpec> weights;      // deterministic weights, lambda0 schedule
    std::vector<ParamSpec> variational;  // posterior parameters, constant lambda1
};
ParamGroups collect_params(Model& model);

// Weight and bias count of the architecture (posterior parameters excluded).
std::int64_t count_parameters(const Model& model);

}  // namespace ibnn
