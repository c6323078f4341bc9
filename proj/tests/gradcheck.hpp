#pragma once

// Central finite-difference oracle for gradient tests. The closure must
// rebuild the graph from the leaf values on every call (fixed RNG seeds make
// stochastic losses a deterministic function of the parameters).

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ibnn/tensor.hpp"

namespace ibnn::testing {

inline double fd_derivative(const std::function<double()>& f, double& slot, double h = 1e-5) {
    const double saved = slot;
    slot = saved + h;
    const double up = f();
    slot = saved - h;
    const double down = f();
    slot = saved;
    return (up - down) / (2.0 * h);
}

inline double rel_err(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-3});
    return std::abs(a - b) / denom;
}

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst;  // "tensor[i]" of the worst entry
};

// Compares leaf->grad (already populated by backward on the loss built by f)
// against central differences of f w.r.t. every entry of every leaf.
inline GradCheckResult grad_check(const std::function<double()>& f,
                                  const std::vector<std::pair<std::string, TensorPtr>>& leaves,
                                  double h = 1e-5) {
    GradCheckResult result;
    for (const auto& [name, leaf] : leaves) {
        for (std::size_t i = 0; i < leaf->values.size(); ++i) {
            const double analytic = leaf->grad[i];
            const double numeric = fd_derivative(f, leaf->values[i], h);
            const double e = rel_err(analytic, numeric);
            if (e > result.max_rel_err) {
                result.max_rel_err = e;
                result.worst = name + "[" + std::to_string(i) + "] analytic=" +
                               std::to_string(analytic) + " fd=" + std::to_string(numeric);
            }
        }
    }
    return result;
}

}  // namespace ibnn::testing
