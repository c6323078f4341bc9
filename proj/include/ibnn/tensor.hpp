#pragma once

// Dense f64 tensors with reverse-mode differentiation.
//
// The graph is implicit: every op returns a new node holding its parents and
// a closure that scatters the node's grad into them. backward() on a scalar
// root topologically orders the reachable subgraph and runs the closures in
// reverse. Repeated backward() calls accumulate grads until zero_grad().
//
// Broadcasting is limited to the patterns the models need:
//   * broadcast_mul: (R x C) * v[C]         -- per-node vector over rows
//                    (N x C x H x W) * v[C] -- per-channel vector over N,H,W
//                    (N x C x H x W) * m[N x C] -- per-sample channel vector
//   * add_row_bias:  (R x C) + b[C]
//   * add_channel_bias: (N x F x H x W) + b[F]
// Everything else requires exact shape equality and fails before computing.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ibnn/errors.hpp"
#include "ibnn/random.hpp"

namespace ibnn {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

class Tensor : public std::enable_shared_from_this<Tensor> {
public:
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // same length as values while requires_grad
    bool requires_grad = false;

    std::vector<TensorPtr> parents;
    std::function<void(Tensor&)> backward_fn;

    Tensor(Shape s, std::vector<double> v, bool rg);
    Tensor(const Tensor&) = delete;
    Tensor& operator=(const Tensor&) = delete;

    std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
    std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }
    bool is_scalar() const { return values.size() == 1 && shape.empty(); }

    // Value of a scalar node.
    double value() const;

    double& at(std::initializer_list<std::int64_t> idx);
    double at(std::initializer_list<std::int64_t> idx) const;

    void zero_grad();
    void accumulate_grad(std::span<const double> g);
};

// ---- construction ----
TensorPtr make_tensor(Shape shape, std::vector<double> values, bool requires_grad = false);
TensorPtr zeros(Shape shape, bool requires_grad = false);
TensorPtr ones(Shape shape, bool requires_grad = false);
TensorPtr full(Shape shape, double value, bool requires_grad = false);
TensorPtr scalar(double value);
TensorPtr randn(Shape shape, double mean, double stddev, Rng& rng, bool requires_grad = false);

// ---- linear algebra ----
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
TensorPtr transpose(const TensorPtr& a);

// Cross-correlation of (N,C,H,W) input with (F,C,h,w) kernel. The output
// extents (H + 2*padding - h) / stride + 1 must be integral.
TensorPtr conv2d(const TensorPtr& input, const TensorPtr& kernel, std::int64_t stride,
                 std::int64_t padding);

// ---- elementwise ----
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr broadcast_mul(const TensorPtr& a, const TensorPtr& v);
TensorPtr add_row_bias(const TensorPtr& a, const TensorPtr& bias);
TensorPtr add_channel_bias(const TensorPtr& a, const TensorPtr& bias);
TensorPtr scale(const TensorPtr& a, double c);
TensorPtr add_scalar(const TensorPtr& a, double c);
TensorPtr log(const TensorPtr& a);

enum class OpKind { Add, Sub, Mul, BroadcastMul, Scale };
TensorPtr elementwise(OpKind kind, const TensorPtr& a, const TensorPtr& b);
TensorPtr elementwise(OpKind kind, const TensorPtr& a, double c);

// ---- activations ----
enum class Activation { Relu, Identity };
TensorPtr relu(const TensorPtr& x);
TensorPtr activation(Activation kind, const TensorPtr& x);

// ---- reductions / reshaping ----
TensorPtr sum_all(const TensorPtr& a);
TensorPtr mean_all(const TensorPtr& a);
TensorPtr column_sum(const TensorPtr& a);        // (K x D) -> (D)
TensorPtr row(const TensorPtr& a, std::int64_t k);  // (K x D) -> (D)
TensorPtr repeat_rows(const TensorPtr& v, std::int64_t n);  // (D) -> (n x D)
TensorPtr reshape(const TensorPtr& a, Shape shape);

// ---- classification / likelihood heads ----
// Row-wise log softmax via max subtraction; rejects non-finite logits.
TensorPtr log_softmax(const TensorPtr& logits);

// Mean over rows of -logp[i, labels[i]].
TensorPtr nll_from_log_probs(const TensorPtr& log_probs, std::span<const std::int64_t> labels);

// Mean NLL of logits under the labels (log_softmax + nll_from_log_probs).
TensorPtr nll_classification(const TensorPtr& logits, std::span<const std::int64_t> labels);

// Mean Gaussian NLL with fixed homoscedastic noise_std > 0.
TensorPtr gaussian_nll_regression(const TensorPtr& prediction, const TensorPtr& target,
                                  double noise_std);

// ---- reverse mode ----
void backward(const TensorPtr& root);

}  // namespace ibnn
