#include "ibnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace ibnn {

std::int64_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                           std::multiplies<std::int64_t>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> v, bool rg)
    : shape(std::move(s)), values(std::move(v)), requires_grad(rg) {
    if (numel(shape) != size()) {
        throw ShapeError("tensor shape " + shape_str(shape) + " does not match value count " +
                         std::to_string(values.size()));
    }
    for (std::int64_t e : shape) {
        if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (requires_grad) grad.assign(values.size(), 0.0);
}

double Tensor::value() const {
    if (values.size() != 1) {
        throw ShapeError("value() requires a scalar, got shape " + shape_str(shape));
    }
    return values[0];
}

static std::int64_t flat_index(const Shape& shape, std::initializer_list<std::int64_t> idx) {
    if (static_cast<std::int64_t>(idx.size()) != static_cast<std::int64_t>(shape.size())) {
        throw ShapeError("index rank mismatch for shape " + shape_str(shape));
    }
    std::int64_t flat = 0;
    std::size_t d = 0;
    for (std::int64_t i : idx) {
        if (i < 0 || i >= shape[d]) throw std::out_of_range("tensor index out of range");
        flat = flat * shape[d] + i;
        ++d;
    }
    return flat;
}

double& Tensor::at(std::initializer_list<std::int64_t> idx) {
    return values[static_cast<std::size_t>(flat_index(shape, idx))];
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
    return values[static_cast<std::size_t>(flat_index(shape, idx))];
}

void Tensor::zero_grad() {
    if (requires_grad) std::fill(grad.begin(), grad.end(), 0.0);
}

void Tensor::accumulate_grad(std::span<const double> g) {
    if (!requires_grad) return;
    if (g.size() != values.size()) throw ShapeError("gradient size mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

TensorPtr make_tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    return std::make_shared<Tensor>(std::move(shape), std::move(values), requires_grad);
}

TensorPtr zeros(Shape shape, bool requires_grad) {
    auto n = static_cast<std::size_t>(numel(shape));
    return make_tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

TensorPtr ones(Shape shape, bool requires_grad) {
    auto n = static_cast<std::size_t>(numel(shape));
    return make_tensor(std::move(shape), std::vector<double>(n, 1.0), requires_grad);
}

TensorPtr full(Shape shape, double value, bool requires_grad) {
    auto n = static_cast<std::size_t>(numel(shape));
    return make_tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

TensorPtr scalar(double value) { return make_tensor({}, {value}, false); }

TensorPtr randn(Shape shape, double mean, double stddev, Rng& rng, bool requires_grad) {
    auto n = static_cast<std::size_t>(numel(shape));
    std::vector<double> v(n, mean);
    if (stddev > 0.0) {
        std::normal_distribution<double> dist(mean, stddev);
        for (auto& x : v) x = dist(rng);
    }
    return make_tensor(std::move(shape), std::move(v), requires_grad);
}

namespace {

// Attaches graph edges and the pullback only when some parent needs grads.
TensorPtr make_node(Shape shape, std::vector<double> values, std::vector<TensorPtr> parents,
                    std::function<void(Tensor&)> backward_fn) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    auto out = make_tensor(std::move(shape), std::move(values), rg);
    if (rg) {
        out->parents = std::move(parents);
        out->backward_fn = std::move(backward_fn);
    }
    return out;
}

void require_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
    if (a->shape != b->shape) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    }
}

}  // namespace

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->rank() != 2 || b->rank() != 2) {
        throw ShapeError("matmul expects 2-D operands, got " + shape_str(a->shape) + " and " +
                         shape_str(b->shape));
    }
    const std::int64_t m = a->shape[0], k = a->shape[1];
    const std::int64_t k2 = b->shape[0], n = b->shape[1];
    if (k != k2) {
        throw ShapeError("matmul: inner extents disagree, " + shape_str(a->shape) + " x " +
                         shape_str(b->shape));
    }
    std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
    const double* ad = a->values.data();
    const double* bd = b->values.data();
    for (std::int64_t i = 0; i < m; ++i) {
        double* orow = out.data() + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = ad[i * k + p];
            const double* brow = bd + p * n;
            for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return make_node({m, n}, std::move(out), {a, b}, [a, b, m, k, n](Tensor& self) {
        const double* g = self.grad.data();
        if (a->requires_grad) {
            // dA = dC . B^T
            double* ga = a->grad.data();
            const double* bd = b->values.data();
            for (std::int64_t i = 0; i < m; ++i) {
                for (std::int64_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    const double* grow = g + i * n;
                    const double* brow = bd + p * n;
                    for (std::int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                    ga[i * k + p] += s;
                }
            }
        }
        if (b->requires_grad) {
            // dB = A^T . dC
            double* gb = b->grad.data();
            const double* ad = a->values.data();
            for (std::int64_t i = 0; i < m; ++i) {
                const double* grow = g + i * n;
                for (std::int64_t p = 0; p < k; ++p) {
                    const double av = ad[i * k + p];
                    double* gbrow = gb + p * n;
                    for (std::int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                }
            }
        }
    });
}

TensorPtr transpose(const TensorPtr& a) {
    if (a->rank() != 2) throw ShapeError("transpose expects 2-D, got " + shape_str(a->shape));
    const std::int64_t m = a->shape[0], n = a->shape[1];
    std::vector<double> out(static_cast<std::size_t>(m * n));
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out[j * m + i] = a->values[i * n + j];
    return make_node({n, m}, std::move(out), {a}, [a, m, n](Tensor& self) {
        if (!a->requires_grad) return;
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) a->grad[i * n + j] += self.grad[j * m + i];
    });
}

TensorPtr conv2d(const TensorPtr& input, const TensorPtr& kernel, std::int64_t stride,
                 std::int64_t padding) {
    if (input->rank() != 4 || kernel->rank() != 4) {
        throw ShapeError("conv2d expects (N,C,H,W) input and (F,C,h,w) kernel, got " +
                         shape_str(input->shape) + " and " + shape_str(kernel->shape));
    }
    const std::int64_t N = input->shape[0], C = input->shape[1];
    const std::int64_t H = input->shape[2], W = input->shape[3];
    const std::int64_t F = kernel->shape[0], Ck = kernel->shape[1];
    const std::int64_t kh = kernel->shape[2], kw = kernel->shape[3];
    if (C != Ck) {
        throw ShapeError("conv2d: channel mismatch " + shape_str(input->shape) + " vs " +
                         shape_str(kernel->shape));
    }
    if (stride < 1 || padding < 0) throw ShapeError("conv2d: stride must be >=1, padding >=0");
    const std::int64_t hspan = H + 2 * padding - kh;
    const std::int64_t wspan = W + 2 * padding - kw;
    if (hspan < 0 || wspan < 0 || hspan % stride != 0 || wspan % stride != 0) {
        throw ShapeError("conv2d: non-integral output extent for input " + shape_str(input->shape) +
                         ", kernel " + shape_str(kernel->shape) + ", stride " +
                         std::to_string(stride) + ", padding " + std::to_string(padding));
    }
    const std::int64_t Ho = hspan / stride + 1;
    const std::int64_t Wo = wspan / stride + 1;

    std::vector<double> out(static_cast<std::size_t>(N * F * Ho * Wo), 0.0);
    const double* xd = input->values.data();
    const double* kd = kernel->values.data();
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t f = 0; f < F; ++f) {
            double* oplane = out.data() + (n * F + f) * Ho * Wo;
            for (std::int64_t c = 0; c < C; ++c) {
                const double* xplane = xd + (n * C + c) * H * W;
                const double* kplane = kd + (f * C + c) * kh * kw;
                for (std::int64_t ho = 0; ho < Ho; ++ho) {
                    for (std::int64_t wo = 0; wo < Wo; ++wo) {
                        double acc = 0.0;
                        for (std::int64_t i = 0; i < kh; ++i) {
                            const std::int64_t hi = ho * stride - padding + i;
                            if (hi < 0 || hi >= H) continue;
                            for (std::int64_t j = 0; j < kw; ++j) {
                                const std::int64_t wi = wo * stride - padding + j;
                                if (wi < 0 || wi >= W) continue;
                                acc += xplane[hi * W + wi] * kplane[i * kw + j];
                            }
                        }
                        oplane[ho * Wo + wo] += acc;
                    }
                }
            }
        }
    }

    auto bw = [input, kernel, stride, padding, N, C, H, W, F, kh, kw, Ho, Wo](Tensor& self) {
        const double* g = self.grad.data();
        const double* xd = input->values.data();
        const double* kd = kernel->values.data();
        for (std::int64_t n = 0; n < N; ++n) {
            for (std::int64_t f = 0; f < F; ++f) {
                const double* gplane = g + (n * F + f) * Ho * Wo;
                for (std::int64_t c = 0; c < C; ++c) {
                    const double* xplane = xd + (n * C + c) * H * W;
                    const double* kplane = kd + (f * C + c) * kh * kw;
                    double* gx = input->requires_grad
                                     ? input->grad.data() + (n * C + c) * H * W
                                     : nullptr;
                    double* gk = kernel->requires_grad
                                     ? kernel->grad.data() + (f * C + c) * kh * kw
                                     : nullptr;
                    for (std::int64_t ho = 0; ho < Ho; ++ho) {
                        for (std::int64_t wo = 0; wo < Wo; ++wo) {
                            const double go = gplane[ho * Wo + wo];
                            if (go == 0.0) continue;
                            for (std::int64_t i = 0; i < kh; ++i) {
                                const std::int64_t hi = ho * stride - padding + i;
                                if (hi < 0 || hi >= H) continue;
                                for (std::int64_t j = 0; j < kw; ++j) {
                                    const std::int64_t wi = wo * stride - padding + j;
                                    if (wi < 0 || wi >= W) continue;
                                    if (gx) gx[hi * W + wi] += kplane[i * kw + j] * go;
                                    if (gk) gk[i * kw + j] += xplane[hi * W + wi] * go;
                                }
                            }
                        }
                    }
                }
            }
        }
    };
    return make_node({N, F, Ho, Wo}, std::move(out), {input, kernel}, std::move(bw));
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a->values.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->values[i] + b->values[i];
    return make_node(a->shape, std::move(out), {a, b}, [a, b](Tensor& self) {
        if (a->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) b->grad[i] += self.grad[i];
    });
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a->values.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->values[i] - b->values[i];
    return make_node(a->shape, std::move(out), {a, b}, [a, b](Tensor& self) {
        if (a->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) b->grad[i] -= self.grad[i];
    });
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a->values.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->values[i] * b->values[i];
    return make_node(a->shape, std::move(out), {a, b}, [a, b](Tensor& self) {
        if (a->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                a->grad[i] += b->values[i] * self.grad[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                b->grad[i] += a->values[i] * self.grad[i];
    });
}

TensorPtr broadcast_mul(const TensorPtr& a, const TensorPtr& v) {
    // (R x C) * v[C]
    if (a->rank() == 2 && v->rank() == 1 && a->shape[1] == v->shape[0]) {
        const std::int64_t R = a->shape[0], C = a->shape[1];
        std::vector<double> out(a->values.size());
        for (std::int64_t r = 0; r < R; ++r)
            for (std::int64_t c = 0; c < C; ++c)
                out[r * C + c] = a->values[r * C + c] * v->values[c];
        return make_node(a->shape, std::move(out), {a, v}, [a, v, R, C](Tensor& self) {
            if (a->requires_grad)
                for (std::int64_t r = 0; r < R; ++r)
                    for (std::int64_t c = 0; c < C; ++c)
                        a->grad[r * C + c] += v->values[c] * self.grad[r * C + c];
            if (v->requires_grad)
                for (std::int64_t r = 0; r < R; ++r)
                    for (std::int64_t c = 0; c < C; ++c)
                        v->grad[c] += a->values[r * C + c] * self.grad[r * C + c];
        });
    }
    // (N x C x H x W) * v[C]
    if (a->rank() == 4 && v->rank() == 1 && a->shape[1] == v->shape[0]) {
        const std::int64_t N = a->shape[0], C = a->shape[1];
        const std::int64_t HW = a->shape[2] * a->shape[3];
        std::vector<double> out(a->values.size());
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t c = 0; c < C; ++c) {
                const double z = v->values[c];
                const std::int64_t base = (n * C + c) * HW;
                for (std::int64_t s = 0; s < HW; ++s) out[base + s] = a->values[base + s] * z;
            }
        return make_node(a->shape, std::move(out), {a, v}, [a, v, N, C, HW](Tensor& self) {
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t c = 0; c < C; ++c) {
                    const std::int64_t base = (n * C + c) * HW;
                    if (a->requires_grad) {
                        const double z = v->values[c];
                        for (std::int64_t s = 0; s < HW; ++s)
                            a->grad[base + s] += z * self.grad[base + s];
                    }
                    if (v->requires_grad) {
                        double acc = 0.0;
                        for (std::int64_t s = 0; s < HW; ++s)
                            acc += a->values[base + s] * self.grad[base + s];
                        v->grad[c] += acc;
                    }
                }
        });
    }
    // (N x C x H x W) * m[N x C]
    if (a->rank() == 4 && v->rank() == 2 && a->shape[0] == v->shape[0] &&
        a->shape[1] == v->shape[1]) {
        const std::int64_t N = a->shape[0], C = a->shape[1];
        const std::int64_t HW = a->shape[2] * a->shape[3];
        std::vector<double> out(a->values.size());
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t c = 0; c < C; ++c) {
                const double z = v->values[n * C + c];
                const std::int64_t base = (n * C + c) * HW;
                for (std::int64_t s = 0; s < HW; ++s) out[base + s] = a->values[base + s] * z;
            }
        return make_node(a->shape, std::move(out), {a, v}, [a, v, N, C, HW](Tensor& self) {
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t c = 0; c < C; ++c) {
                    const std::int64_t base = (n * C + c) * HW;
                    if (a->requires_grad) {
                        const double z = v->values[n * C + c];
                        for (std::int64_t s = 0; s < HW; ++s)
                            a->grad[base + s] += z * self.grad[base + s];
                    }
                    if (v->requires_grad) {
                        double acc = 0.0;
                        for (std::int64_t s = 0; s < HW; ++s)
                            acc += a->values[base + s] * self.grad[base + s];
                        v->grad[n * C + c] += acc;
                    }
                }
        });
    }
    throw ShapeError("broadcast_mul: unsupported shapes " + shape_str(a->shape) + " and " +
                     shape_str(v->shape));
}

TensorPtr add_row_bias(const TensorPtr& a, const TensorPtr& bias) {
    if (a->rank() != 2 || bias->rank() != 1 || a->shape[1] != bias->shape[0]) {
        throw ShapeError("add_row_bias: shapes " + shape_str(a->shape) + " and " +
                         shape_str(bias->shape));
    }
    const std::int64_t R = a->shape[0], C = a->shape[1];
    std::vector<double> out(a->values.size());
    for (std::int64_t r = 0; r < R; ++r)
        for (std::int64_t c = 0; c < C; ++c) out[r * C + c] = a->values[r * C + c] + bias->values[c];
    return make_node(a->shape, std::move(out), {a, bias}, [a, bias, R, C](Tensor& self) {
        if (a->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
        if (bias->requires_grad)
            for (std::int64_t r = 0; r < R; ++r)
                for (std::int64_t c = 0; c < C; ++c) bias->grad[c] += self.grad[r * C + c];
    });
}

TensorPtr add_channel_bias(const TensorPtr& a, const TensorPtr& bias) {
    if (a->rank() != 4 || bias->rank() != 1 || a->shape[1] != bias->shape[0]) {
        throw ShapeError("add_channel_bias: shapes " + shape_str(a->shape) + " and " +
                         shape_str(bias->shape));
    }
    const std::int64_t N = a->shape[0], F = a->shape[1];
    const std::int64_t HW = a->shape[2] * a->shape[3];
    std::vector<double> out(a->values.size());
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t f = 0; f < F; ++f) {
            const std::int64_t base = (n * F + f) * HW;
            for (std::int64_t s = 0; s < HW; ++s) out[base + s] = a->values[base + s] + bias->values[f];
        }
    return make_node(a->shape, std::move(out), {a, bias}, [a, bias, N, F, HW](Tensor& self) {
        if (a->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
        if (bias->requires_grad)
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t f = 0; f < F; ++f) {
                    const std::int64_t base = (n * F + f) * HW;
                    double acc = 0.0;
                    for (std::int64_t s = 0; s < HW; ++s) acc += self.grad[base + s];
                    bias->grad[f] += acc;
                }
    });
}

TensorPtr scale(const TensorPtr& a, double c) {
    std::vector<double> out(a->values.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->values[i] * c;
    return make_node(a->shape, std::move(out), {a}, [a, c](Tensor& self) {
        if (a->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += c * self.grad[i];
    });
}

TensorPtr add_scalar(const TensorPtr& a, double c) {
    std::vector<double> out(a->values.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->values[i] + c;
    return make_node(a->shape, std::move(out), {a}, [a](Tensor& self) {
        if (a->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
    });
}

TensorPtr log(const TensorPtr& a) {
    std::vector<double> out(a->values.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(a->values[i] > 0.0)) {
            throw NumericError("log of non-positive value " + std::to_string(a->values[i]));
        }
        out[i] = std::log(a->values[i]);
    }
    return make_node(a->shape, std::move(out), {a}, [a](Tensor& self) {
        if (a->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                a->grad[i] += self.grad[i] / a->values[i];
    });
}

TensorPtr elementwise(OpKind kind, const TensorPtr& a, const TensorPtr& b) {
    switch (kind) {
        case OpKind::Add: return add(a, b);
        case OpKind::Sub: return sub(a, b);
        case OpKind::Mul: return mul(a, b);
        case OpKind::BroadcastMul: return broadcast_mul(a, b);
        case OpKind::Scale: break;
    }
    throw ConfigError("elementwise: Scale requires a scalar operand");
}

TensorPtr elementwise(OpKind kind, const TensorPtr& a, double c) {
    if (kind != OpKind::Scale) throw ConfigError("elementwise: scalar operand requires Scale");
    return scale(a, c);
}

TensorPtr relu(const TensorPtr& x) {
    std::vector<double> out(x->values.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->values[i] > 0.0 ? x->values[i] : 0.0;
    return make_node(x->shape, std::move(out), {x}, [x](Tensor& self) {
        if (!x->requires_grad) return;
        // subgradient 0 at exactly 0
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (x->values[i] > 0.0) x->grad[i] += self.grad[i];
    });
}

TensorPtr activation(Activation kind, const TensorPtr& x) {
    return kind == Activation::Relu ? relu(x) : x;
}

TensorPtr sum_all(const TensorPtr& a) {
    double s = 0.0;
    for (double v : a->values) s += v;
    return make_node({}, {s}, {a}, [a](Tensor& self) {
        if (a->requires_grad)
            for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += self.grad[0];
    });
}

TensorPtr mean_all(const TensorPtr& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a->size())); }

TensorPtr column_sum(const TensorPtr& a) {
    if (a->rank() != 2) throw ShapeError("column_sum expects 2-D, got " + shape_str(a->shape));
    const std::int64_t R = a->shape[0], C = a->shape[1];
    std::vector<double> out(static_cast<std::size_t>(C), 0.0);
    for (std::int64_t r = 0; r < R; ++r)
        for (std::int64_t c = 0; c < C; ++c) out[c] += a->values[r * C + c];
    return make_node({C}, std::move(out), {a}, [a, R, C](Tensor& self) {
        if (a->requires_grad)
            for (std::int64_t r = 0; r < R; ++r)
                for (std::int64_t c = 0; c < C; ++c) a->grad[r * C + c] += self.grad[c];
    });
}

TensorPtr row(const TensorPtr& a, std::int64_t k) {
    if (a->rank() != 2) throw ShapeError("row expects 2-D, got " + shape_str(a->shape));
    if (k < 0 || k >= a->shape[0]) throw std::out_of_range("row index out of range");
    const std::int64_t C = a->shape[1];
    std::vector<double> out(a->values.begin() + k * C, a->values.begin() + (k + 1) * C);
    return make_node({C}, std::move(out), {a}, [a, k, C](Tensor& self) {
        if (a->requires_grad)
            for (std::int64_t c = 0; c < C; ++c) a->grad[k * C + c] += self.grad[c];
    });
}

TensorPtr repeat_rows(const TensorPtr& v, std::int64_t n) {
    if (v->rank() != 1) throw ShapeError("repeat_rows expects 1-D, got " + shape_str(v->shape));
    if (n < 1) throw ShapeError("repeat_rows: row count must be positive");
    const std::int64_t C = v->shape[0];
    std::vector<double> out(static_cast<std::size_t>(n * C));
    for (std::int64_t r = 0; r < n; ++r)
        std::copy(v->values.begin(), v->values.end(), out.begin() + r * C);
    return make_node({n, C}, std::move(out), {v}, [v, n, C](Tensor& self) {
        if (v->requires_grad)
            for (std::int64_t r = 0; r < n; ++r)
                for (std::int64_t c = 0; c < C; ++c) v->grad[c] += self.grad[r * C + c];
    });
}

TensorPtr reshape(const TensorPtr& a, Shape shape) {
    if (numel(shape) != a->size()) {
        throw ShapeError("reshape: " + shape_str(a->shape) + " has different element count than " +
                         shape_str(shape));
    }
    return make_node(std::move(shape), a->values, {a}, [a](Tensor& self) {
        if (a->requires_grad)
            for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
    });
}

TensorPtr log_softmax(const TensorPtr& logits) {
    if (logits->rank() != 2) {
        throw ShapeError("log_softmax expects (N,C), got " + shape_str(logits->shape));
    }
    const std::int64_t N = logits->shape[0], C = logits->shape[1];
    for (double v : logits->values) {
        if (!std::isfinite(v)) throw NumericError("log_softmax: non-finite logit");
    }
    std::vector<double> out(logits->values.size());
    for (std::int64_t i = 0; i < N; ++i) {
        const double* rowv = logits->values.data() + i * C;
        double m = rowv[0];
        for (std::int64_t j = 1; j < C; ++j) m = std::max(m, rowv[j]);
        double sum = 0.0;
        for (std::int64_t j = 0; j < C; ++j) sum += std::exp(rowv[j] - m);
        const double lse = m + std::log(sum);
        for (std::int64_t j = 0; j < C; ++j) out[i * C + j] = rowv[j] - lse;
    }
    return make_node(logits->shape, std::move(out), {logits}, [logits, N, C](Tensor& self) {
        if (!logits->requires_grad) return;
        for (std::int64_t i = 0; i < N; ++i) {
            double gsum = 0.0;
            for (std::int64_t j = 0; j < C; ++j) gsum += self.grad[i * C + j];
            for (std::int64_t j = 0; j < C; ++j)
                logits->grad[i * C + j] += self.grad[i * C + j] - std::exp(self.values[i * C + j]) * gsum;
        }
    });
}

TensorPtr nll_from_log_probs(const TensorPtr& log_probs, std::span<const std::int64_t> labels) {
    if (log_probs->rank() != 2) {
        throw ShapeError("nll_from_log_probs expects (N,C), got " + shape_str(log_probs->shape));
    }
    const std::int64_t N = log_probs->shape[0], C = log_probs->shape[1];
    if (static_cast<std::int64_t>(labels.size()) != N) {
        throw ShapeError("nll_from_log_probs: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(N) + " rows");
    }
    double s = 0.0;
    for (std::int64_t i = 0; i < N; ++i) {
        const std::int64_t y = labels[i];
        if (y < 0 || y >= C) throw std::out_of_range("class index " + std::to_string(y) +
                                                     " outside [0," + std::to_string(C) + ")");
        s -= log_probs->values[i * C + y];
    }
    std::vector<std::int64_t> ycopy(labels.begin(), labels.end());
    return make_node({}, {s / static_cast<double>(N)}, {log_probs},
                     [log_probs, ycopy = std::move(ycopy), N, C](Tensor& self) {
                         if (!log_probs->requires_grad) return;
                         const double g = self.grad[0] / static_cast<double>(N);
                         for (std::int64_t i = 0; i < N; ++i)
                             log_probs->grad[i * C + ycopy[i]] -= g;
                     });
}

TensorPtr nll_classification(const TensorPtr& logits, std::span<const std::int64_t> labels) {
    return nll_from_log_probs(log_softmax(logits), labels);
}

TensorPtr gaussian_nll_regression(const TensorPtr& prediction, const TensorPtr& target,
                                  double noise_std) {
    if (!(noise_std > 0.0)) throw ConfigError("gaussian_nll_regression: noise_std must be > 0");
    require_same_shape(prediction, target, "gaussian_nll_regression");
    const auto n = static_cast<double>(prediction->size());
    const double inv_var = 1.0 / (noise_std * noise_std);
    const double log_norm = 0.5 * std::log(2.0 * M_PI * noise_std * noise_std);
    double s = 0.0;
    for (std::size_t i = 0; i < prediction->values.size(); ++i) {
        const double d = prediction->values[i] - target->values[i];
        s += log_norm + 0.5 * d * d * inv_var;
    }
    return make_node({}, {s / n}, {prediction, target},
                     [prediction, target, n, inv_var](Tensor& self) {
                         const double g = self.grad[0] / n;
                         for (std::size_t i = 0; i < prediction->values.size(); ++i) {
                             const double d = prediction->values[i] - target->values[i];
                             if (prediction->requires_grad) prediction->grad[i] += g * d * inv_var;
                             if (target->requires_grad) target->grad[i] -= g * d * inv_var;
                         }
                     });
}

void backward(const TensorPtr& root) {
    if (!root->is_scalar()) {
        throw ShapeError("backward requires a scalar root, got shape " + shape_str(root->shape));
    }
    if (!root->requires_grad) return;

    // Iterative post-order DFS; each node visited exactly once.
    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> visited;
    std::vector<std::pair<Tensor*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Tensor* p = node->parents[next].get();
            ++next;
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior grads are per-call scratch; only leaves accumulate across calls.
    for (Tensor* t : order) {
        if (t->backward_fn) t->zero_grad();
    }
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

}  // namespace ibnn
