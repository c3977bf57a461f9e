#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rng.hpp"

// Dense double-precision tensors with reverse-mode differentiation.
// The graph is built eagerly: every differentiable operation records a
// backward closure on its result node, and backward(loss) replays those
// closures in reverse execution order.

namespace unept {

class Tensor;

namespace detail {

struct AllocStats {
    std::size_t live_bytes = 0;
    std::size_t peak_bytes = 0;
};

inline AllocStats& alloc_stats() {
    thread_local AllocStats stats;
    return stats;
}

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

inline std::uint64_t fresh_node_id() {
    thread_local std::uint64_t counter = 0;
    return ++counter;
}

struct Node {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until backward touches this node
    bool requires_grad = false;
    bool leaf = true;
    std::uint64_t id = 0;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Node() = default;
    Node(const Node&) = delete;
    Node& operator=(const Node&) = delete;

    ~Node() {
        auto& s = alloc_stats();
        std::size_t bytes = (value.capacity() + grad.capacity()) * sizeof(double);
        s.live_bytes -= std::min(s.live_bytes, bytes);
    }

    void track_alloc() {
        auto& s = alloc_stats();
        s.live_bytes += (value.capacity() + grad.capacity()) * sizeof(double);
        s.peak_bytes = std::max(s.peak_bytes, s.live_bytes);
    }
};

inline std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("tensor extent must be non-negative");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

// C (+)= A[m x k] * B[k x n].
// Each output element accumulates strictly in ascending k order, one fused
// step at a time, for every tiling and row count. That makes results bitwise
// independent of row order (permutation equivariance holds exactly) and of
// how callers batch their rows. Keep this kernel free of -ffast-math-style
// reassociation.
inline void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n,
                    bool accumulate) {
    if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.0);
    constexpr int kTile = 64;
    for (int k0 = 0; k0 < k; k0 += kTile) {
        int k1 = std::min(k0 + kTile, k);
        for (int i = 0; i < m; ++i) {
            const double* arow = a + static_cast<std::size_t>(i) * k;
            double* crow = c + static_cast<std::size_t>(i) * n;
            for (int kk = k0; kk < k1; ++kk) {
                double av = arow[kk];
                const double* brow = b + static_cast<std::size_t>(kk) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
}

inline std::vector<double>& gemm_scratch() {
    thread_local std::vector<double> scratch;
    return scratch;
}

inline void transpose_into(const double* src, double* dst, int rows, int cols) {
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            dst[static_cast<std::size_t>(j) * rows + i] = src[static_cast<std::size_t>(i) * cols + j];
}

// C (+)= A[m x k] * B[n x k]^T (via one explicit transpose + the nn kernel)
inline void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n,
                    bool accumulate) {
    auto& scratch = gemm_scratch();
    scratch.resize(static_cast<std::size_t>(k) * n);
    transpose_into(b, scratch.data(), n, k);
    gemm_nn(a, scratch.data(), c, m, k, n, accumulate);
}

// C (+)= A[m x k]^T * B[m x n]
inline void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n,
                    bool accumulate) {
    auto& scratch = gemm_scratch();
    scratch.resize(static_cast<std::size_t>(k) * m);
    transpose_into(a, scratch.data(), m, k);
    gemm_nn(scratch.data(), b, c, k, m, n, accumulate);
}

}  // namespace detail

/// Pauses graph recording for the enclosing scope (evaluation, benchmarks,
/// finite-difference probes).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

class Tensor {
public:
    Tensor() = default;

    static Tensor from_data(std::vector<double> data, std::vector<int> shape) {
        if (detail::shape_numel(shape) != data.size())
            throw std::invalid_argument("tensor data length does not match shape");
        auto node = std::make_shared<detail::Node>();
        node->shape = std::move(shape);
        node->value = std::move(data);
        node->id = detail::fresh_node_id();
        node->track_alloc();
        return Tensor(std::move(node));
    }

    static Tensor zeros(std::vector<int> shape) {
        std::vector<double> data(detail::shape_numel(shape), 0.0);
        return from_data(std::move(data), std::move(shape));
    }

    static Tensor full(std::vector<int> shape, double v) {
        std::vector<double> data(detail::shape_numel(shape), v);
        return from_data(std::move(data), std::move(shape));
    }

    static Tensor scalar(double v) { return from_data({v}, {}); }

    /// A leaf that accumulates gradients (model parameters, probed inputs).
    static Tensor param(std::vector<double> data, std::vector<int> shape) {
        Tensor t = from_data(std::move(data), std::move(shape));
        t.node_->requires_grad = true;
        return t;
    }

    /// Central factory for differentiable operations. Validates that every
    /// produced element is finite, which is the numerics error contract.
    static Tensor from_op(const char* op, std::vector<int> shape, std::vector<double> value,
                          std::vector<Tensor> parents,
                          std::function<void(detail::Node&)> backward) {
        if (detail::shape_numel(shape) != value.size())
            throw std::invalid_argument(std::string(op) + ": result length does not match shape");
        for (double v : value) {
            if (!std::isfinite(v))
                throw std::runtime_error(std::string(op) + " produced a non-finite value");
        }
        auto node = std::make_shared<detail::Node>();
        node->shape = std::move(shape);
        node->value = std::move(value);
        node->leaf = false;
        node->op = op;
        node->id = detail::fresh_node_id();
        bool wants_grad = false;
        if (detail::grad_mode()) {
            for (const Tensor& p : parents) {
                if (p.defined() && p.requires_grad()) {
                    wants_grad = true;
                    break;
                }
            }
        }
        if (wants_grad) {
            node->requires_grad = true;
            node->parents.reserve(parents.size());
            for (Tensor& p : parents) node->parents.push_back(p.node_);
            node->backward = std::move(backward);
        }
        node->track_alloc();
        return Tensor(std::move(node));
    }

    bool defined() const { return static_cast<bool>(node_); }
    const std::vector<int>& shape() const { return require().shape; }
    int rank() const { return static_cast<int>(require().shape.size()); }
    int dim(int i) const { return require().shape.at(static_cast<std::size_t>(i)); }
    std::size_t numel() const { return require().value.size(); }
    bool requires_grad() const { return require().requires_grad; }
    bool is_leaf() const { return require().leaf; }

    void set_requires_grad(bool on) {
        auto& n = require();
        if (!n.leaf) throw std::invalid_argument("requires_grad can only be toggled on leaves");
        n.requires_grad = on;
    }

    const std::vector<double>& value() const { return require().value; }

    /// Mutable access for leaves only (parameter init and optimizer updates,
    /// which run between tapes).
    std::vector<double>& value_mut() {
        auto& n = require();
        if (!n.leaf) throw std::invalid_argument("only leaf tensors may be mutated");
        return n.value;
    }

    bool has_grad() const { return !require().grad.empty(); }

    const std::vector<double>& grad() const {
        const auto& n = require();
        if (n.grad.empty()) throw std::runtime_error("tensor has no gradient");
        return n.grad;
    }

    void zero_grad() {
        auto& n = require();
        std::fill(n.grad.begin(), n.grad.end(), 0.0);
    }

    double item() const {
        const auto& n = require();
        if (n.value.size() != 1) throw std::invalid_argument("item() requires a single element");
        return n.value[0];
    }

    double at(std::initializer_list<int> idx) const {
        const auto& n = require();
        if (idx.size() != n.shape.size()) throw std::invalid_argument("at(): rank mismatch");
        std::size_t flat = 0;
        std::size_t i = 0;
        for (int v : idx) {
            if (v < 0 || v >= n.shape[i]) throw std::invalid_argument("at(): index out of range");
            flat = flat * static_cast<std::size_t>(n.shape[i]) + static_cast<std::size_t>(v);
            ++i;
        }
        return n.value[flat];
    }

    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& handle() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

    detail::Node& require() const {
        if (!node_) throw std::runtime_error("use of undefined tensor");
        return *node_;
    }

    std::shared_ptr<detail::Node> node_;
};

/// Ordered record of the operations reachable from one output, in execution
/// order; backward() walks it once, in reverse.
struct GradTape {
    std::vector<std::shared_ptr<detail::Node>> order;

    static GradTape record_from(const Tensor& root) {
        GradTape tape;
        if (!root.defined() || !root.requires_grad()) return tape;
        std::unordered_set<detail::Node*> seen;
        std::vector<std::shared_ptr<detail::Node>> stack{root.handle()};
        seen.insert(root.node());
        while (!stack.empty()) {
            auto node = std::move(stack.back());
            stack.pop_back();
            for (const auto& p : node->parents) {
                if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p);
            }
            tape.order.push_back(std::move(node));
        }
        std::sort(tape.order.begin(), tape.order.end(),
                  [](const auto& a, const auto& b) { return a->id < b->id; });
        return tape;
    }
};

namespace detail {

inline void ensure_grad(Node& n) {
    if (n.grad.empty()) {
        n.grad.assign(n.value.size(), 0.0);
        n.track_alloc();
    }
}

/// Gradient buffer of parent i, or nullptr when that input does not need one.
inline std::vector<double>* parent_grad(Node& n, std::size_t i) {
    Node& p = *n.parents[i];
    if (!p.requires_grad) return nullptr;
    ensure_grad(p);
    return &p.grad;
}

inline const std::vector<double>& parent_value(Node& n, std::size_t i) {
    return n.parents[i]->value;
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
/// calls; intermediate gradients are transient.
inline void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw std::invalid_argument("backward() requires a scalar loss");
    if (!loss.requires_grad()) return;
    GradTape tape = GradTape::record_from(loss);
    detail::ensure_grad(*loss.node());
    loss.node()->grad[0] += 1.0;
    for (auto it = tape.order.rbegin(); it != tape.order.rend(); ++it) {
        detail::Node& n = **it;
        // A node whose grad was never populated has a zero adjoint (for
        // example upstream of a loss term with no contributing pixels);
        // nothing to propagate.
        if (n.backward && !n.grad.empty()) n.backward(n);
        if (!n.leaf) {
            n.grad.clear();
            n.grad.shrink_to_fit();
        }
    }
}

/// Named parameter listing used by optimizers, checkpoints and gradient
/// checks.
using NamedParams = std::vector<std::pair<std::string, Tensor>>;

inline std::size_t live_tensor_bytes() { return detail::alloc_stats().live_bytes; }
inline std::size_t peak_tensor_bytes() { return detail::alloc_stats().peak_bytes; }
inline void reset_peak_tensor_bytes() {
    detail::alloc_stats().peak_bytes = detail::alloc_stats().live_bytes;
}

// ---------------------------------------------------------------------------
// elementwise and shape ops

namespace detail {

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("add", a, b);
    std::vector<double> out(a.numel());
    const auto& av = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return Tensor::from_op("add", a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (auto* g = detail::parent_grad(n, p)) {
                for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i];
            }
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("sub", a, b);
    std::vector<double> out(a.numel());
    const auto& av = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return Tensor::from_op("sub", a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
        if (auto* g = detail::parent_grad(n, 0))
            for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i];
        if (auto* g = detail::parent_grad(n, 1))
            for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] -= n.grad[i];
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("mul", a, b);
    std::vector<double> out(a.numel());
    const auto& av = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return Tensor::from_op("mul", a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
        const auto& av = detail::parent_value(n, 0);
        const auto& bv = detail::parent_value(n, 1);
        if (auto* g = detail::parent_grad(n, 0))
            for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i] * bv[i];
        if (auto* g = detail::parent_grad(n, 1))
            for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i] * av[i];
    });
}

inline Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    const auto& av = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
    return Tensor::from_op("scale", a.shape(), std::move(out), {a}, [s](detail::Node& n) {
        if (auto* g = detail::parent_grad(n, 0))
            for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i] * s;
    });
}

inline Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    const auto& av = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + s;
    return Tensor::from_op("add_scalar", a.shape(), std::move(out), {a}, [](detail::Node& n) {
        if (auto* g = detail::parent_grad(n, 0))
            for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i];
    });
}

/// Elementwise op from a value function and its derivative df(x, y)=dy/dx.
template <typename F, typename DF>
Tensor unary_op(const char* name, const Tensor& a, F f, DF df) {
    std::vector<double> out(a.numel());
    const auto& av = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
    return Tensor::from_op(name, a.shape(), std::move(out), {a}, [df](detail::Node& n) {
        if (auto* g = detail::parent_grad(n, 0)) {
            const auto& x = detail::parent_value(n, 0);
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                (*g)[i] += n.grad[i] * df(x[i], n.value[i]);
        }
    });
}

inline Tensor relu(const Tensor& a) {
    return unary_op(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& a) {
    return unary_op(
        "sigmoid", a,
        [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
        [](double, double y) { return y * (1.0 - y); });
}

inline Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.value()) total += v;
    return Tensor::from_op("sum", {}, {total}, {a}, [](detail::Node& n) {
        if (auto* g = detail::parent_grad(n, 0)) {
            double gy = n.grad[0];
            for (double& v : *g) v += gy;
        }
    });
}

inline Tensor reshape(const Tensor& a, std::vector<int> shape) {
    if (detail::shape_numel(shape) != a.numel())
        throw std::invalid_argument("reshape: element count mismatch");
    std::vector<double> out = a.value();
    return Tensor::from_op("reshape", std::move(shape), std::move(out), {a}, [](detail::Node& n) {
        if (auto* g = detail::parent_grad(n, 0))
            for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i];
    });
}

// ---------------------------------------------------------------------------
// matrix ops

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: inner dimensions do not agree");
    int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(static_cast<std::size_t>(m) * n);
    detail::gemm_nn(a.value().data(), b.value().data(), out.data(), m, k, n, false);
    return Tensor::from_op("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& nd) {
        const auto& av = detail::parent_value(nd, 0);
        const auto& bv = detail::parent_value(nd, 1);
        if (auto* ga = detail::parent_grad(nd, 0))
            detail::gemm_nt(nd.grad.data(), bv.data(), ga->data(), m, n, k, true);
        if (auto* gb = detail::parent_grad(nd, 1))
            detail::gemm_tn(av.data(), nd.grad.data(), gb->data(), m, k, n, true);
    });
}

/// a * b^T without materialising the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        throw std::invalid_argument("matmul_nt: inner dimensions do not agree");
    int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    std::vector<double> out(static_cast<std::size_t>(m) * n);
    detail::gemm_nt(a.value().data(), b.value().data(), out.data(), m, k, n, false);
    return Tensor::from_op("matmul_nt", {m, n}, std::move(out), {a, b},
                           [m, k, n](detail::Node& nd) {
                               const auto& av = detail::parent_value(nd, 0);
                               const auto& bv = detail::parent_value(nd, 1);
                               // dA = dC * B ; dB = dC^T * A
                               if (auto* ga = detail::parent_grad(nd, 0))
                                   detail::gemm_nn(nd.grad.data(), bv.data(), ga->data(), m, n, k,
                                                   true);
                               if (auto* gb = detail::parent_grad(nd, 1))
                                   detail::gemm_tn(nd.grad.data(), av.data(), gb->data(), m, n, k,
                                                   true);
                           });
}

/// x[n x d] + bias[d], broadcast over rows.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
    if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1))
        throw std::invalid_argument("add_bias: bias width must match columns");
    int rows = x.dim(0), cols = x.dim(1);
    std::vector<double> out(x.numel());
    const auto& xv = x.value();
    const auto& bv = bias.value();
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            out[static_cast<std::size_t>(r) * cols + c] = xv[static_cast<std::size_t>(r) * cols + c] + bv[c];
    return Tensor::from_op("add_bias", x.shape(), std::move(out), {x, bias},
                           [rows, cols](detail::Node& nd) {
                               if (auto* gx = detail::parent_grad(nd, 0))
                                   for (std::size_t i = 0; i < nd.grad.size(); ++i)
                                       (*gx)[i] += nd.grad[i];
                               if (auto* gb = detail::parent_grad(nd, 1)) {
                                   for (int r = 0; r < rows; ++r)
                                       for (int c = 0; c < cols; ++c)
                                           (*gb)[c] += nd.grad[static_cast<std::size_t>(r) * cols + c];
                               }
                           });
}

// ---------------------------------------------------------------------------
// softmax / layer norm

/// Numerically stabilised softmax along `axis` (negative counts from the end).
inline Tensor softmax(const Tensor& x, int axis = -1) {
    int r = x.rank();
    if (r == 0) throw std::invalid_argument("softmax: scalar input has no axis");
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw std::invalid_argument("softmax: axis out of range");
    int n = x.dim(axis);
    if (n < 1) throw std::invalid_argument("softmax: reduced axis is empty");
    std::size_t inner = 1, outer = 1;
    for (int i = axis + 1; i < r; ++i) inner *= static_cast<std::size_t>(x.dim(i));
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(x.dim(i));

    const auto& xv = x.value();
    std::vector<double> out(x.numel());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            std::size_t base = o * static_cast<std::size_t>(n) * inner + in;
            double mx = xv[base];
            for (int i = 1; i < n; ++i) mx = std::max(mx, xv[base + static_cast<std::size_t>(i) * inner]);
            double denom = 0.0;
            for (int i = 0; i < n; ++i) {
                double e = std::exp(xv[base + static_cast<std::size_t>(i) * inner] - mx);
                out[base + static_cast<std::size_t>(i) * inner] = e;
                denom += e;
            }
            for (int i = 0; i < n; ++i) out[base + static_cast<std::size_t>(i) * inner] /= denom;
        }
    }
    return Tensor::from_op("softmax", x.shape(), std::move(out), {x},
                           [n, inner, outer](detail::Node& nd) {
                               if (auto* gx = detail::parent_grad(nd, 0)) {
                                   for (std::size_t o = 0; o < outer; ++o) {
                                       for (std::size_t in = 0; in < inner; ++in) {
                                           std::size_t base = o * static_cast<std::size_t>(n) * inner + in;
                                           double dot = 0.0;
                                           for (int i = 0; i < n; ++i) {
                                               std::size_t idx = base + static_cast<std::size_t>(i) * inner;
                                               dot += nd.grad[idx] * nd.value[idx];
                                           }
                                           for (int i = 0; i < n; ++i) {
                                               std::size_t idx = base + static_cast<std::size_t>(i) * inner;
                                               (*gx)[idx] += nd.value[idx] * (nd.grad[idx] - dot);
                                           }
                                       }
                                   }
                               }
                           });
}

/// Zero-mean unit-variance over the last axis, then affine gain/bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    if (x.rank() < 1) throw std::invalid_argument("layer_norm: input must have an axis");
    int d = x.dim(x.rank() - 1);
    if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d)
        throw std::invalid_argument("layer_norm: gain/bias must match the last axis");
    if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
    std::size_t rows = x.numel() / static_cast<std::size_t>(d);
    const auto& xv = x.value();
    const auto& gv = gain.value();
    const auto& bv = bias.value();
    std::vector<double> out(x.numel());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * static_cast<std::size_t>(d);
        double mean = 0.0;
        for (int i = 0; i < d; ++i) mean += row[i];
        mean /= d;
        double var = 0.0;
        for (int i = 0; i < d; ++i) {
            double c = row[i] - mean;
            var += c * c;
        }
        var /= d;
        double inv = 1.0 / std::sqrt(var + eps);
        inv_std[r] = inv;
        double* orow = out.data() + r * static_cast<std::size_t>(d);
        for (int i = 0; i < d; ++i) orow[i] = (row[i] - mean) * inv * gv[i] + bv[i];
    }
    return Tensor::from_op(
        "layer_norm", x.shape(), std::move(out), {x, gain, bias},
        [d, rows, inv_std = std::move(inv_std)](detail::Node& nd) {
            const auto& xv = detail::parent_value(nd, 0);
            const auto& gv = detail::parent_value(nd, 1);
            auto* gx = detail::parent_grad(nd, 0);
            auto* gg = detail::parent_grad(nd, 1);
            auto* gb = detail::parent_grad(nd, 2);
            for (std::size_t r = 0; r < rows; ++r) {
                std::size_t base = r * static_cast<std::size_t>(d);
                double inv = inv_std[r];
                double mean = 0.0;
                for (int i = 0; i < d; ++i) mean += xv[base + static_cast<std::size_t>(i)];
                mean /= d;
                if (gb) {
                    for (int i = 0; i < d; ++i) (*gb)[static_cast<std::size_t>(i)] += nd.grad[base + static_cast<std::size_t>(i)];
                }
                if (gg) {
                    for (int i = 0; i < d; ++i) {
                        double xhat = (xv[base + static_cast<std::size_t>(i)] - mean) * inv;
                        (*gg)[static_cast<std::size_t>(i)] += nd.grad[base + static_cast<std::size_t>(i)] * xhat;
                    }
                }
                if (gx) {
                    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                    for (int i = 0; i < d; ++i) {
                        double xhat = (xv[base + static_cast<std::size_t>(i)] - mean) * inv;
                        double dxhat = nd.grad[base + static_cast<std::size_t>(i)] * gv[static_cast<std::size_t>(i)];
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xhat;
                    }
                    mean_dxhat /= d;
                    mean_dxhat_xhat /= d;
                    for (int i = 0; i < d; ++i) {
                        double xhat = (xv[base + static_cast<std::size_t>(i)] - mean) * inv;
                        double dxhat = nd.grad[base + static_cast<std::size_t>(i)] * gv[static_cast<std::size_t>(i)];
                        (*gx)[base + static_cast<std::size_t>(i)] +=
                            inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// dropout

/// Inverted dropout; identity (and no tape node) outside training.
inline Tensor dropout(const Tensor& x, double rate, Prng& rng, bool training) {
    if (!training || rate <= 0.0) return x;
    if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be below 1");
    double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> mask(x.numel());
    for (double& m : mask) m = rng.uniform() >= rate ? keep_scale : 0.0;
    std::vector<double> out(x.numel());
    const auto& xv = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
    return Tensor::from_op("dropout", x.shape(), std::move(out), {x},
                           [mask = std::move(mask)](detail::Node& nd) {
                               if (auto* gx = detail::parent_grad(nd, 0))
                                   for (std::size_t i = 0; i < nd.grad.size(); ++i)
                                       (*gx)[i] += nd.grad[i] * mask[i];
                           });
}

// ---------------------------------------------------------------------------
// concatenation / slicing

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    int cols = parts[0].rank() == 2 ? parts[0].dim(1) : -1;
    if (cols < 0) throw std::invalid_argument("concat_rows: inputs must be rank-2");
    int rows = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != 2 || p.dim(1) != cols)
            throw std::invalid_argument("concat_rows: column widths differ");
        rows += p.dim(0);
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(rows) * cols);
    std::vector<int> sizes;
    for (const Tensor& p : parts) {
        out.insert(out.end(), p.value().begin(), p.value().end());
        sizes.push_back(p.dim(0));
    }
    return Tensor::from_op("concat_rows", {rows, cols}, std::move(out), parts,
                           [sizes, cols](detail::Node& nd) {
                               std::size_t off = 0;
                               for (std::size_t p = 0; p < sizes.size(); ++p) {
                                   std::size_t len = static_cast<std::size_t>(sizes[p]) * cols;
                                   if (auto* g = detail::parent_grad(nd, p))
                                       for (std::size_t i = 0; i < len; ++i)
                                           (*g)[i] += nd.grad[off + i];
                                   off += len;
                               }
                           });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    int rows = parts[0].rank() == 2 ? parts[0].dim(0) : -1;
    if (rows < 0) throw std::invalid_argument("concat_cols: inputs must be rank-2");
    int cols = 0;
    std::vector<int> widths;
    for (const Tensor& p : parts) {
        if (p.rank() != 2 || p.dim(0) != rows)
            throw std::invalid_argument("concat_cols: row counts differ");
        widths.push_back(p.dim(1));
        cols += p.dim(1);
    }
    std::vector<double> out(static_cast<std::size_t>(rows) * cols);
    int coff = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto& pv = parts[p].value();
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < widths[p]; ++c)
                out[static_cast<std::size_t>(r) * cols + coff + c] =
                    pv[static_cast<std::size_t>(r) * widths[p] + c];
        coff += widths[p];
    }
    return Tensor::from_op("concat_cols", {rows, cols}, std::move(out), parts,
                           [widths, rows, cols](detail::Node& nd) {
                               int coff = 0;
                               for (std::size_t p = 0; p < widths.size(); ++p) {
                                   if (auto* g = detail::parent_grad(nd, p)) {
                                       for (int r = 0; r < rows; ++r)
                                           for (int c = 0; c < widths[p]; ++c)
                                               (*g)[static_cast<std::size_t>(r) * widths[p] + c] +=
                                                   nd.grad[static_cast<std::size_t>(r) * cols + coff + c];
                                   }
                                   coff += widths[p];
                               }
                           });
}

inline Tensor slice_rows(const Tensor& x, int begin, int count) {
    if (x.rank() != 2) throw std::invalid_argument("slice_rows: input must be rank-2");
    if (begin < 0 || count < 0 || begin + count > x.dim(0))
        throw std::invalid_argument("slice_rows: range out of bounds");
    int cols = x.dim(1);
    std::vector<double> out(x.value().begin() + static_cast<std::size_t>(begin) * cols,
                            x.value().begin() + static_cast<std::size_t>(begin + count) * cols);
    return Tensor::from_op("slice_rows", {count, cols}, std::move(out), {x},
                           [begin, cols](detail::Node& nd) {
                               if (auto* g = detail::parent_grad(nd, 0)) {
                                   std::size_t off = static_cast<std::size_t>(begin) * cols;
                                   for (std::size_t i = 0; i < nd.grad.size(); ++i)
                                       (*g)[off + i] += nd.grad[i];
                               }
                           });
}

inline Tensor slice_cols(const Tensor& x, int begin, int count) {
    if (x.rank() != 2) throw std::invalid_argument("slice_cols: input must be rank-2");
    if (begin < 0 || count < 0 || begin + count > x.dim(1))
        throw std::invalid_argument("slice_cols: range out of bounds");
    int rows = x.dim(0), cols = x.dim(1);
    std::vector<double> out(static_cast<std::size_t>(rows) * count);
    const auto& xv = x.value();
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < count; ++c)
            out[static_cast<std::size_t>(r) * count + c] =
                xv[static_cast<std::size_t>(r) * cols + begin + c];
    return Tensor::from_op("slice_cols", {rows, count}, std::move(out), {x},
                           [begin, count, rows, cols](detail::Node& nd) {
                               if (auto* g = detail::parent_grad(nd, 0)) {
                                   for (int r = 0; r < rows; ++r)
                                       for (int c = 0; c < count; ++c)
                                           (*g)[static_cast<std::size_t>(r) * cols + begin + c] +=
                                               nd.grad[static_cast<std::size_t>(r) * count + c];
                               }
                           });
}

// ---------------------------------------------------------------------------
// layout transposes between token-major [H*W x C] and channel-major [C x H x W]

inline Tensor tokens_to_chw(const Tensor& x, int h, int w) {
    if (x.rank() != 2 || x.dim(0) != h * w)
        throw std::invalid_argument("tokens_to_chw: rows must equal h*w");
    int c = x.dim(1);
    std::vector<double> out(x.numel());
    const auto& xv = x.value();
    std::size_t hw = static_cast<std::size_t>(h) * w;
    for (std::size_t t = 0; t < hw; ++t)
        for (int ch = 0; ch < c; ++ch)
            out[static_cast<std::size_t>(ch) * hw + t] = xv[t * c + ch];
    return Tensor::from_op("tokens_to_chw", {c, h, w}, std::move(out), {x},
                           [c, hw](detail::Node& nd) {
                               if (auto* g = detail::parent_grad(nd, 0)) {
                                   for (std::size_t t = 0; t < hw; ++t)
                                       for (int ch = 0; ch < c; ++ch)
                                           (*g)[t * c + ch] +=
                                               nd.grad[static_cast<std::size_t>(ch) * hw + t];
                               }
                           });
}

inline Tensor chw_to_tokens(const Tensor& x) {
    if (x.rank() != 3) throw std::invalid_argument("chw_to_tokens: input must be rank-3");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<double> out(x.numel());
    const auto& xv = x.value();
    for (std::size_t t = 0; t < hw; ++t)
        for (int ch = 0; ch < c; ++ch)
            out[t * c + ch] = xv[static_cast<std::size_t>(ch) * hw + t];
    return Tensor::from_op("chw_to_tokens", {h * w, c}, std::move(out), {x},
                           [c, hw](detail::Node& nd) {
                               if (auto* g = detail::parent_grad(nd, 0)) {
                                   for (std::size_t t = 0; t < hw; ++t)
                                       for (int ch = 0; ch < c; ++ch)
                                           (*g)[static_cast<std::size_t>(ch) * hw + t] +=
                                               nd.grad[t * c + ch];
                               }
                           });
}

/// 2x2 average pooling over a channel-major map (extents must be even).
inline Tensor avg_pool2(const Tensor& x) {
    if (x.rank() != 3) throw std::invalid_argument("avg_pool2: input must be rank-3");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h % 2 != 0 || w % 2 != 0) throw std::invalid_argument("avg_pool2: extents must be even");
    int ho = h / 2, wo = w / 2;
    std::vector<double> out(static_cast<std::size_t>(c) * ho * wo);
    const auto& xv = x.value();
    for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) {
                std::size_t s = (static_cast<std::size_t>(ch) * h + 2 * i) * w + 2 * j;
                out[(static_cast<std::size_t>(ch) * ho + i) * wo + j] =
                    0.25 * (xv[s] + xv[s + 1] + xv[s + w] + xv[s + w + 1]);
            }
    }
    return Tensor::from_op("avg_pool2", {c, ho, wo}, std::move(out), {x},
                           [c, h, w, ho, wo](detail::Node& nd) {
                               if (auto* g = detail::parent_grad(nd, 0)) {
                                   for (int ch = 0; ch < c; ++ch)
                                       for (int i = 0; i < ho; ++i)
                                           for (int j = 0; j < wo; ++j) {
                                               double gy =
                                                   0.25 * nd.grad[(static_cast<std::size_t>(ch) * ho + i) * wo + j];
                                               std::size_t s =
                                                   (static_cast<std::size_t>(ch) * h + 2 * i) * w + 2 * j;
                                               (*g)[s] += gy;
                                               (*g)[s + 1] += gy;
                                               (*g)[s + w] += gy;
                                               (*g)[s + w + 1] += gy;
                                           }
                               }
                           });
}

/// out[q, :] = sum_t w[q, t] * samples[q*T + t, :]
inline Tensor weighted_sample_sum(const Tensor& weights, const Tensor& samples) {
    if (weights.rank() != 2 || samples.rank() != 2)
        throw std::invalid_argument("weighted_sample_sum: inputs must be rank-2");
    int nq = weights.dim(0), t = weights.dim(1), d = samples.dim(1);
    if (samples.dim(0) != nq * t)
        throw std::invalid_argument("weighted_sample_sum: sample rows must equal nq*T");
    std::vector<double> out(static_cast<std::size_t>(nq) * d, 0.0);
    const auto& wv = weights.value();
    const auto& sv = samples.value();
    for (int q = 0; q < nq; ++q)
        for (int i = 0; i < t; ++i) {
            double wqt = wv[static_cast<std::size_t>(q) * t + i];
            const double* srow = sv.data() + (static_cast<std::size_t>(q) * t + i) * d;
            double* orow = out.data() + static_cast<std::size_t>(q) * d;
            for (int k = 0; k < d; ++k) orow[k] += wqt * srow[k];
        }
    return Tensor::from_op(
        "weighted_sample_sum", {nq, d}, std::move(out), {weights, samples},
        [nq, t, d](detail::Node& nd) {
            const auto& wv = detail::parent_value(nd, 0);
            const auto& sv = detail::parent_value(nd, 1);
            auto* gw = detail::parent_grad(nd, 0);
            auto* gs = detail::parent_grad(nd, 1);
            for (int q = 0; q < nq; ++q) {
                const double* grow = nd.grad.data() + static_cast<std::size_t>(q) * d;
                for (int i = 0; i < t; ++i) {
                    std::size_t srow = (static_cast<std::size_t>(q) * t + i) * d;
                    if (gw) {
                        double dot = 0.0;
                        for (int k = 0; k < d; ++k) dot += grow[k] * sv[srow + k];
                        (*gw)[static_cast<std::size_t>(q) * t + i] += dot;
                    }
                    if (gs) {
                        double wqt = wv[static_cast<std::size_t>(q) * t + i];
                        for (int k = 0; k < d; ++k) (*gs)[srow + k] += wqt * grow[k];
                    }
                }
            }
        });
}

/// (1 - t) * a + t * b with a blend map broadcast across channels.
inline Tensor blend_chw(const Tensor& a, const Tensor& b, const Tensor& t) {
    if (a.rank() != 3 || b.shape() != a.shape())
        throw std::invalid_argument("blend_chw: maps must share a rank-3 shape");
    int c = a.dim(0), h = a.dim(1), w = a.dim(2);
    if (t.rank() != 2 || t.dim(0) != h || t.dim(1) != w)
        throw std::invalid_argument("blend_chw: blend map must be h x w");
    std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<double> out(a.numel());
    const auto& av = a.value();
    const auto& bv = b.value();
    const auto& tv = t.value();
    for (int ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < hw; ++p) {
            std::size_t i = static_cast<std::size_t>(ch) * hw + p;
            out[i] = (1.0 - tv[p]) * av[i] + tv[p] * bv[i];
        }
    return Tensor::from_op(
        "blend_chw", a.shape(), std::move(out), {a, b, t}, [c, hw](detail::Node& nd) {
            const auto& av = detail::parent_value(nd, 0);
            const auto& bv = detail::parent_value(nd, 1);
            const auto& tv = detail::parent_value(nd, 2);
            auto* ga = detail::parent_grad(nd, 0);
            auto* gb = detail::parent_grad(nd, 1);
            auto* gt = detail::parent_grad(nd, 2);
            for (int ch = 0; ch < c; ++ch)
                for (std::size_t p = 0; p < hw; ++p) {
                    std::size_t i = static_cast<std::size_t>(ch) * hw + p;
                    double gy = nd.grad[i];
                    if (ga) (*ga)[i] += (1.0 - tv[p]) * gy;
                    if (gb) (*gb)[i] += tv[p] * gy;
                    if (gt) (*gt)[p] += (bv[i] - av[i]) * gy;
                }
        });
}

}  // namespace unept
