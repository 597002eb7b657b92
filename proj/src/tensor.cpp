#include "hssnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <unordered_set>

namespace hssnet {

namespace {

bool g_grad_enabled = true;

i64 shape_numel(const std::vector<i64>& shape) {
    i64 n = 1;
    for (i64 e : shape) {
        if (e <= 0) throw std::invalid_argument("tensor: non-positive extent");
        n *= e;
    }
    return n;
}

void check_finite(const std::vector<double>& v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw std::runtime_error(std::string("non-finite value produced by ") + op);
        }
    }
}

std::string shape_str(const std::vector<i64>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Returns true if `small` is a right-aligned suffix of `big` (ignoring
// leading 1s in `small`).
bool suffix_broadcastable(const std::vector<i64>& big, const std::vector<i64>& small) {
    size_t lead = 0;
    while (lead < small.size() && small[lead] == 1) ++lead;
    size_t ns = small.size() - lead;
    if (ns > big.size()) return false;
    for (size_t i = 0; i < ns; ++i) {
        if (small[lead + i] != big[big.size() - ns + i]) return false;
    }
    return true;
}

}  // namespace

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set(bool on) { g_grad_enabled = on; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

// ---------------------------------------------------------------------------
// Tensor basics
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(std::vector<i64> shape, bool requires_grad) {
    auto n = std::make_shared<Node>();
    i64 count = shape_numel(shape);
    n->shape = std::move(shape);
    n->data.assign(static_cast<size_t>(count), 0.0);
    n->requires_grad = requires_grad;
    if (requires_grad) n->grad.assign(static_cast<size_t>(count), 0.0);
    return Tensor(std::move(n));
}

Tensor Tensor::full(std::vector<i64> shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->data.begin(), t.node_->data.end(), value);
    check_finite(t.node_->data, "full");
    return t;
}

Tensor Tensor::from(std::vector<i64> shape, std::vector<double> data, bool requires_grad) {
    i64 count = shape_numel(shape);
    if (static_cast<i64>(data.size()) != count) {
        throw std::invalid_argument("tensor: data length does not match shape " + shape_str(shape));
    }
    check_finite(data, "from");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    if (requires_grad) n->grad.assign(static_cast<size_t>(count), 0.0);
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

const std::vector<double>& Tensor::grad() const {
    if (!node_->requires_grad) throw std::runtime_error("grad() on tensor without requires_grad");
    return node_->grad;
}

std::vector<double>& Tensor::mutable_grad() {
    if (!node_->requires_grad) throw std::runtime_error("mutable_grad() on tensor without requires_grad");
    return node_->grad;
}

double Tensor::item() const {
    if (numel() != 1) throw std::runtime_error("item() on non-scalar tensor");
    return node_->data[0];
}

double Tensor::at(std::initializer_list<i64> idx) const {
    const auto& s = node_->shape;
    if (idx.size() != s.size()) throw std::invalid_argument("at(): wrong index rank");
    i64 flat = 0;
    size_t d = 0;
    for (i64 i : idx) {
        if (i < 0 || i >= s[d]) throw std::out_of_range("at(): index out of bounds");
        flat = flat * s[d] + i;
        ++d;
    }
    return node_->data[static_cast<size_t>(flat)];
}

void Tensor::zero_grad() {
    if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
    if (numel() != 1) throw std::invalid_argument("backward() requires a scalar loss");
    if (!node_->requires_grad) return;  // constant graph, nothing to do

    // Iterative postorder DFS: children appear after all their parents, so
    // reversing gives a topological order with the loss first.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i].get();
            ++i;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward) n->backward(*n);
    }
}

Tensor make_op(std::vector<i64> shape, std::vector<double> data,
               std::vector<Tensor> parents,
               std::function<void(Node&)> backward, const char* name) {
    i64 count = shape_numel(shape);
    if (static_cast<i64>(data.size()) != count) {
        throw std::invalid_argument(std::string(name) + ": output data/shape mismatch");
    }
    check_finite(data, name);

    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->op = name;

    bool needs_grad = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) {
            if (p.defined() && p.requires_grad()) { needs_grad = true; break; }
        }
    }
    if (needs_grad) {
        n->requires_grad = true;
        n->grad.assign(static_cast<size_t>(count), 0.0);
        n->parents.reserve(parents.size());
        for (auto& p : parents) {
            if (p.defined()) n->parents.push_back(p.node());
        }
        n->backward = std::move(backward);
    }
    return Tensor(std::move(n));
}

// ---------------------------------------------------------------------------
// Elementwise with leading broadcast
// ---------------------------------------------------------------------------

namespace {

// Orders (big, small) and applies out[i] = f(big[i], small[i % ns]).
// `swapped` tells the caller which argument was the big one.
struct BroadcastPlan {
    const Tensor* big;
    const Tensor* small;
    bool swapped;  // true if b is the big one
};

BroadcastPlan plan_broadcast(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return {&a, &b, false};
    if (suffix_broadcastable(a.shape(), b.shape())) return {&a, &b, false};
    if (suffix_broadcastable(b.shape(), a.shape())) return {&b, &a, true};
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void accumulate_into(Node& parent, const std::vector<double>& g) {
    for (size_t i = 0; i < g.size(); ++i) parent.grad[i] += g[i];
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    auto plan = plan_broadcast(a, b, "add");
    const auto& big = plan.big->data();
    const auto& small = plan.small->data();
    const size_t ns = small.size();
    std::vector<double> out(big.size());
    for (size_t i = 0; i < big.size(); ++i) out[i] = big[i] + small[i % ns];

    Tensor bigT = *plan.big, smallT = *plan.small;
    return make_op(plan.big->shape(), std::move(out), {bigT, smallT},
                   [bigT, smallT](Node& n) {
                       Node* pb = bigT.node().get();
                       Node* ps = smallT.node().get();
                       if (pb->requires_grad) accumulate_into(*pb, n.grad);
                       if (ps->requires_grad) {
                           const size_t ns2 = ps->data.size();
                           for (size_t i = 0; i < n.grad.size(); ++i) ps->grad[i % ns2] += n.grad[i];
                       }
                   },
                   "add");
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    auto plan = plan_broadcast(a, b, "mul");
    const auto& big = plan.big->data();
    const auto& small = plan.small->data();
    const size_t ns = small.size();
    std::vector<double> out(big.size());
    for (size_t i = 0; i < big.size(); ++i) out[i] = big[i] * small[i % ns];

    Tensor bigT = *plan.big, smallT = *plan.small;
    return make_op(plan.big->shape(), std::move(out), {bigT, smallT},
                   [bigT, smallT](Node& n) {
                       Node* pb = bigT.node().get();
                       Node* ps = smallT.node().get();
                       const size_t ns2 = ps->data.size();
                       if (pb->requires_grad) {
                           for (size_t i = 0; i < n.grad.size(); ++i)
                               pb->grad[i] += n.grad[i] * ps->data[i % ns2];
                       }
                       if (ps->requires_grad) {
                           for (size_t i = 0; i < n.grad.size(); ++i)
                               ps->grad[i % ns2] += n.grad[i] * pb->data[i];
                       }
                   },
                   "mul");
}

Tensor div(const Tensor& a, const Tensor& b) {
    auto plan = plan_broadcast(a, b, "div");
    if (plan.swapped) {
        // a is the small one: out = a / b elementwise needs big numerator.
        // Handled by computing reciprocal path instead.
        const auto& big = plan.big->data();    // b
        const auto& small = plan.small->data();  // a
        const size_t ns = small.size();
        std::vector<double> out(big.size());
        for (size_t i = 0; i < big.size(); ++i) out[i] = small[i % ns] / big[i];

        Tensor bT = *plan.big, aT = *plan.small;
        return make_op(plan.big->shape(), std::move(out), {aT, bT},
                       [aT, bT](Node& n) {
                           Node* pa = aT.node().get();
                           Node* pb = bT.node().get();
                           const size_t ns2 = pa->data.size();
                           if (pa->requires_grad) {
                               for (size_t i = 0; i < n.grad.size(); ++i)
                                   pa->grad[i % ns2] += n.grad[i] / pb->data[i];
                           }
                           if (pb->requires_grad) {
                               for (size_t i = 0; i < n.grad.size(); ++i)
                                   pb->grad[i] += -n.grad[i] * pa->data[i % ns2] /
                                                  (pb->data[i] * pb->data[i]);
                           }
                       },
                       "div");
    }
    const auto& big = plan.big->data();    // a
    const auto& small = plan.small->data();  // b
    const size_t ns = small.size();
    std::vector<double> out(big.size());
    for (size_t i = 0; i < big.size(); ++i) out[i] = big[i] / small[i % ns];

    Tensor aT = *plan.big, bT = *plan.small;
    return make_op(plan.big->shape(), std::move(out), {aT, bT},
                   [aT, bT](Node& n) {
                       Node* pa = aT.node().get();
                       Node* pb = bT.node().get();
                       const size_t ns2 = pb->data.size();
                       if (pa->requires_grad) {
                           for (size_t i = 0; i < n.grad.size(); ++i)
                               pa->grad[i] += n.grad[i] / pb->data[i % ns2];
                       }
                       if (pb->requires_grad) {
                           for (size_t i = 0; i < n.grad.size(); ++i)
                               pb->grad[i % ns2] += -n.grad[i] * pa->data[i] /
                                                    (pb->data[i % ns2] * pb->data[i % ns2]);
                       }
                   },
                   "div");
}

Tensor scale(const Tensor& a, double s) {
    if (!std::isfinite(s)) throw std::invalid_argument("scale: non-finite factor");
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
    Tensor aT = a;
    return make_op(a.shape(), std::move(out), {aT},
                   [aT, s](Node& n) {
                       Node* p = aT.node().get();
                       for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i] * s;
                   },
                   "scale");
}

Tensor add_scalar(const Tensor& a, double s) {
    if (!std::isfinite(s)) throw std::invalid_argument("add_scalar: non-finite addend");
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + s;
    Tensor aT = a;
    return make_op(a.shape(), std::move(out), {aT},
                   [aT](Node& n) { accumulate_into(*aT.node(), n.grad); }, "add_scalar");
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities
// ---------------------------------------------------------------------------

namespace {

double sigmoid_val(double x) {
    if (x >= 0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus_val(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

}  // namespace

Tensor silu(const Tensor& x) {
    std::vector<double> out(x.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * sigmoid_val(x.data()[i]);
    Tensor xT = x;
    return make_op(x.shape(), std::move(out), {xT},
                   [xT](Node& n) {
                       Node* p = xT.node().get();
                       for (size_t i = 0; i < n.grad.size(); ++i) {
                           double s = sigmoid_val(p->data[i]);
                           p->grad[i] += n.grad[i] * (s * (1.0 + p->data[i] * (1.0 - s)));
                       }
                   },
                   "silu");
}

Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_val(x.data()[i]);
    Tensor xT = x;
    return make_op(x.shape(), std::move(out), {xT},
                   [xT](Node& n) {
                       Node* p = xT.node().get();
                       for (size_t i = 0; i < n.grad.size(); ++i) {
                           double s = n.data[i];
                           p->grad[i] += n.grad[i] * s * (1.0 - s);
                       }
                   },
                   "sigmoid");
}

Tensor softplus(const Tensor& x) {
    std::vector<double> out(x.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = softplus_val(x.data()[i]);
    Tensor xT = x;
    return make_op(x.shape(), std::move(out), {xT},
                   [xT](Node& n) {
                       Node* p = xT.node().get();
                       for (size_t i = 0; i < n.grad.size(); ++i)
                           p->grad[i] += n.grad[i] * sigmoid_val(p->data[i]);
                   },
                   "softplus");
}

Tensor exp(const Tensor& x) {
    std::vector<double> out(x.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.data()[i]);
    Tensor xT = x;
    return make_op(x.shape(), std::move(out), {xT},
                   [xT](Node& n) {
                       Node* p = xT.node().get();
                       for (size_t i = 0; i < n.grad.size(); ++i)
                           p->grad[i] += n.grad[i] * n.data[i];
                   },
                   "exp");
}

Tensor log(const Tensor& x) {
    std::vector<double> out(x.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::log(x.data()[i]);
    Tensor xT = x;
    return make_op(x.shape(), std::move(out), {xT},
                   [xT](Node& n) {
                       Node* p = xT.node().get();
                       for (size_t i = 0; i < n.grad.size(); ++i)
                           p->grad[i] += n.grad[i] / p->data[i];
                   },
                   "log");
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    if (!(lo < hi)) throw std::invalid_argument("clamp: lo must be < hi");
    std::vector<double> out(x.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, x.data()[i]));
    Tensor xT = x;
    return make_op(x.shape(), std::move(out), {xT},
                   [xT, lo, hi](Node& n) {
                       Node* p = xT.node().get();
                       for (size_t i = 0; i < n.grad.size(); ++i) {
                           if (p->data[i] >= lo && p->data[i] <= hi) p->grad[i] += n.grad[i];
                       }
                   },
                   "clamp");
}

// ---------------------------------------------------------------------------
// GEMM kernels
// ---------------------------------------------------------------------------

namespace detail {

void gemm_nn(const double* a, const double* b, double* c, i64 m, i64 k, i64 n, bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, 0.0);
    for (i64 i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (i64 p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (i64 j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_tn(const double* a, const double* b, double* c, i64 m, i64 k, i64 n, bool accumulate) {
    // a is [k,m] stored row-major; c[i,j] += sum_p a[p,i]*b[p,j]
    if (!accumulate) std::fill(c, c + m * n, 0.0);
    for (i64 p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (i64 i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = c + i * n;
            for (i64 j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt(const double* a, const double* b, double* c, i64 m, i64 k, i64 n, bool accumulate) {
    // b is [n,k] stored row-major; c[i,j] += dot(a[i,:], b[j,:])
    for (i64 i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (i64 j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double s = 0.0;
            for (i64 p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] = accumulate ? crow[j] + s : s;
        }
    }
}

}  // namespace detail

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) throw std::invalid_argument("matmul: rank-2 tensors required");
    const i64 m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
    if (k != k2) {
        throw std::invalid_argument("matmul: inner extents differ " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
    std::vector<double> out(static_cast<size_t>(m * n));
    detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n, false);

    Tensor aT = a, bT = b;
    return make_op({m, n}, std::move(out), {aT, bT},
                   [aT, bT, m, k, n](Node& node) {
                       Node* pa = aT.node().get();
                       Node* pb = bT.node().get();
                       if (pa->requires_grad) {
                           // dA = dC * B^T
                           detail::gemm_nt(node.grad.data(), pb->data.data(), pa->grad.data(),
                                           m, n, k, true);
                       }
                       if (pb->requires_grad) {
                           // dB = A^T * dC
                           detail::gemm_tn(pa->data.data(), node.grad.data(), pb->grad.data(),
                                           k, m, n, true);
                       }
                   },
                   "matmul");
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 2) throw std::invalid_argument("linear: rank-2 tensors required");
    const i64 m = x.extent(0), k = x.extent(1), n = w.extent(1);
    if (w.extent(0) != k) {
        throw std::invalid_argument("linear: weight rows must equal input cols");
    }
    if (b.defined() && (b.rank() != 1 || b.extent(0) != n)) {
        throw std::invalid_argument("linear: bias extent must equal output cols");
    }
    std::vector<double> out(static_cast<size_t>(m * n));
    detail::gemm_nn(x.data().data(), w.data().data(), out.data(), m, k, n, false);
    if (b.defined()) {
        for (i64 i = 0; i < m; ++i) {
            double* row = out.data() + i * n;
            for (i64 j = 0; j < n; ++j) row[j] += b.data()[static_cast<size_t>(j)];
        }
    }

    Tensor xT = x, wT = w, bT = b;
    return make_op({m, n}, std::move(out), {xT, wT, bT},
                   [xT, wT, bT, m, k, n](Node& node) {
                       Node* px = xT.node().get();
                       Node* pw = wT.node().get();
                       if (px->requires_grad) {
                           detail::gemm_nt(node.grad.data(), pw->data.data(), px->grad.data(),
                                           m, n, k, true);
                       }
                       if (pw->requires_grad) {
                           detail::gemm_tn(px->data.data(), node.grad.data(), pw->grad.data(),
                                           k, m, n, true);
                       }
                       if (bT.defined() && bT.node()->requires_grad) {
                           Node* pbias = bT.node().get();
                           for (i64 i = 0; i < m; ++i) {
                               const double* grow = node.grad.data() + i * n;
                               for (i64 j = 0; j < n; ++j) pbias->grad[static_cast<size_t>(j)] += grow[j];
                           }
                       }
                   },
                   "linear");
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, std::vector<i64> shape) {
    if (shape_numel(shape) != x.numel()) {
        throw std::invalid_argument("reshape: element count mismatch");
    }
    std::vector<double> out = x.data();
    Tensor xT = x;
    return make_op(std::move(shape), std::move(out), {xT},
                   [xT](Node& n) { accumulate_into(*xT.node(), n.grad); }, "reshape");
}

Tensor transpose2d(const Tensor& x) {
    if (x.rank() != 2) throw std::invalid_argument("transpose2d: rank-2 tensor required");
    const i64 m = x.extent(0), n = x.extent(1);
    std::vector<double> out(static_cast<size_t>(m * n));
    for (i64 i = 0; i < m; ++i)
        for (i64 j = 0; j < n; ++j) out[static_cast<size_t>(j * m + i)] = x.data()[static_cast<size_t>(i * n + j)];
    Tensor xT = x;
    return make_op({n, m}, std::move(out), {xT},
                   [xT, m, n](Node& node) {
                       Node* p = xT.node().get();
                       for (i64 i = 0; i < m; ++i)
                           for (i64 j = 0; j < n; ++j)
                               p->grad[static_cast<size_t>(i * n + j)] += node.grad[static_cast<size_t>(j * m + i)];
                   },
                   "transpose2d");
}

Tensor nchw_to_rows(const Tensor& x) {
    if (x.rank() != 4) throw std::invalid_argument("nchw_to_rows: rank-4 tensor required");
    const i64 n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
    const i64 hw = h * w;
    std::vector<double> out(static_cast<size_t>(n * c * hw));
    const double* src = x.data().data();
    for (i64 b = 0; b < n; ++b) {
        for (i64 ch = 0; ch < c; ++ch) {
            const double* plane = src + (b * c + ch) * hw;
            double* dst = out.data() + b * hw * c + ch;
            for (i64 p = 0; p < hw; ++p) dst[p * c] = plane[p];
        }
    }
    Tensor xT = x;
    return make_op({n * hw, c}, std::move(out), {xT},
                   [xT, n, c, hw](Node& node) {
                       Node* px = xT.node().get();
                       for (i64 b = 0; b < n; ++b) {
                           for (i64 ch = 0; ch < c; ++ch) {
                               double* plane = px->grad.data() + (b * c + ch) * hw;
                               const double* g = node.grad.data() + b * hw * c + ch;
                               for (i64 p = 0; p < hw; ++p) plane[p] += g[p * c];
                           }
                       }
                   },
                   "nchw_to_rows");
}

Tensor rows_to_nchw(const Tensor& x, i64 n, i64 c, i64 h, i64 w) {
    if (x.rank() != 2 || x.extent(0) != n * h * w || x.extent(1) != c) {
        throw std::invalid_argument("rows_to_nchw: shape mismatch");
    }
    const i64 hw = h * w;
    std::vector<double> out(static_cast<size_t>(n * c * hw));
    const double* src = x.data().data();
    for (i64 b = 0; b < n; ++b) {
        for (i64 ch = 0; ch < c; ++ch) {
            double* plane = out.data() + (b * c + ch) * hw;
            const double* col = src + b * hw * c + ch;
            for (i64 p = 0; p < hw; ++p) plane[p] = col[p * c];
        }
    }
    Tensor xT = x;
    return make_op({n, c, h, w}, std::move(out), {xT},
                   [xT, n, c, hw](Node& node) {
                       Node* px = xT.node().get();
                       for (i64 b = 0; b < n; ++b) {
                           for (i64 ch = 0; ch < c; ++ch) {
                               const double* plane = node.grad.data() + (b * c + ch) * hw;
                               double* col = px->grad.data() + b * hw * c + ch;
                               for (i64 p = 0; p < hw; ++p) col[p * c] += plane[p];
                           }
                       }
                   },
                   "rows_to_nchw");
}

Tensor permute_cols(const Tensor& x, const std::vector<i64>& perm) {
    if (x.rank() != 2) throw std::invalid_argument("permute_cols: rank-2 tensor required");
    const i64 c = x.extent(0), l = x.extent(1);
    if (static_cast<i64>(perm.size()) != l) {
        throw std::invalid_argument("permute_cols: permutation length mismatch");
    }
    std::vector<double> out(static_cast<size_t>(c * l));
    for (i64 ch = 0; ch < c; ++ch) {
        const double* src = x.data().data() + ch * l;
        double* dst = out.data() + ch * l;
        for (i64 k = 0; k < l; ++k) dst[k] = src[perm[static_cast<size_t>(k)]];
    }
    Tensor xT = x;
    auto permCopy = perm;
    return make_op({c, l}, std::move(out), {xT},
                   [xT, permCopy, c, l](Node& node) {
                       Node* px = xT.node().get();
                       for (i64 ch = 0; ch < c; ++ch) {
                           double* dst = px->grad.data() + ch * l;
                           const double* g = node.grad.data() + ch * l;
                           for (i64 k = 0; k < l; ++k) dst[permCopy[static_cast<size_t>(k)]] += g[k];
                       }
                   },
                   "permute_cols");
}

Tensor narrow0(const Tensor& x, i64 start, i64 len) {
    if (x.rank() < 1) throw std::invalid_argument("narrow0: rank >= 1 required");
    const i64 d0 = x.extent(0);
    if (start < 0 || len <= 0 || start + len > d0) throw std::out_of_range("narrow0: bad range");
    const i64 inner = x.numel() / d0;
    std::vector<i64> shape = x.shape();
    shape[0] = len;
    std::vector<double> out(static_cast<size_t>(len * inner));
    std::memcpy(out.data(), x.data().data() + start * inner, sizeof(double) * out.size());
    Tensor xT = x;
    return make_op(std::move(shape), std::move(out), {xT},
                   [xT, start, inner](Node& node) {
                       Node* px = xT.node().get();
                       double* dst = px->grad.data() + start * inner;
                       for (size_t i = 0; i < node.grad.size(); ++i) dst[i] += node.grad[i];
                   },
                   "narrow0");
}

Tensor upsample_nearest(const Tensor& x, int factor) {
    if (x.rank() != 4) throw std::invalid_argument("upsample_nearest: rank-4 tensor required");
    if (factor < 1) throw std::invalid_argument("upsample_nearest: factor must be >= 1");
    const i64 n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
    const i64 f = factor, oh = h * f, ow = w * f;
    std::vector<double> out(static_cast<size_t>(n * c * oh * ow));
    const double* src = x.data().data();
    for (i64 bc = 0; bc < n * c; ++bc) {
        const double* plane = src + bc * h * w;
        double* oplane = out.data() + bc * oh * ow;
        for (i64 r = 0; r < oh; ++r) {
            const double* srow = plane + (r / f) * w;
            double* drow = oplane + r * ow;
            for (i64 col = 0; col < ow; ++col) drow[col] = srow[col / f];
        }
    }
    Tensor xT = x;
    return make_op({n, c, oh, ow}, std::move(out), {xT},
                   [xT, n, c, h, w, f](Node& node) {
                       Node* px = xT.node().get();
                       const i64 oh2 = h * f, ow2 = w * f;
                       for (i64 bc = 0; bc < n * c; ++bc) {
                           double* plane = px->grad.data() + bc * h * w;
                           const double* gplane = node.grad.data() + bc * oh2 * ow2;
                           for (i64 r = 0; r < oh2; ++r) {
                               double* drow = plane + (r / f) * w;
                               const double* grow = gplane + r * ow2;
                               for (i64 col = 0; col < ow2; ++col) drow[col / f] += grow[col];
                           }
                       }
                   },
                   "upsample_nearest");
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    Tensor xT = x;
    return make_op({1}, {s}, {xT},
                   [xT](Node& n) {
                       Node* p = xT.node().get();
                       const double g = n.grad[0];
                       for (auto& gv : p->grad) gv += g;
                   },
                   "sum_all");
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.numel())); }

// ---------------------------------------------------------------------------
// conv2d via im2col (+ direct depthwise fast path)
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
    i64 n, cin, h, w, cout, cpg, kh, kw, oh, ow;
    int stride, padding, groups;
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernel, int stride, int padding, int groups) {
    if (input.rank() != 4 || kernel.rank() != 4) {
        throw std::invalid_argument("conv2d: input and kernel must be rank-4");
    }
    if (stride <= 0) throw std::invalid_argument("conv2d: non-positive stride");
    if (padding < 0) throw std::invalid_argument("conv2d: negative padding");
    if (groups <= 0) throw std::invalid_argument("conv2d: non-positive groups");
    ConvDims d;
    d.n = input.extent(0); d.cin = input.extent(1); d.h = input.extent(2); d.w = input.extent(3);
    d.cout = kernel.extent(0); d.cpg = kernel.extent(1); d.kh = kernel.extent(2); d.kw = kernel.extent(3);
    d.stride = stride; d.padding = padding; d.groups = groups;
    if (d.cin % groups != 0 || d.cout % groups != 0) {
        throw std::invalid_argument("conv2d: channels not divisible by groups");
    }
    if (d.cpg * groups != d.cin) {
        throw std::invalid_argument("conv2d: kernel channel extent must be cin/groups");
    }
    if (d.kh > d.h + 2 * padding || d.kw > d.w + 2 * padding) {
        throw std::invalid_argument("conv2d: kernel larger than padded input");
    }
    d.oh = (d.h + 2 * padding - d.kh) / stride + 1;
    d.ow = (d.w + 2 * padding - d.kw) / stride + 1;
    return d;
}

// col buffer layout: [oh*ow, cpg*kh*kw] for one (image, group).
void im2col(const double* img, const ConvDims& d, double* col) {
    const i64 k2 = d.kh * d.kw;
    for (i64 oy = 0; oy < d.oh; ++oy) {
        for (i64 ox = 0; ox < d.ow; ++ox) {
            double* crow = col + (oy * d.ow + ox) * d.cpg * k2;
            const i64 iy0 = oy * d.stride - d.padding;
            const i64 ix0 = ox * d.stride - d.padding;
            for (i64 c = 0; c < d.cpg; ++c) {
                const double* plane = img + c * d.h * d.w;
                for (i64 ky = 0; ky < d.kh; ++ky) {
                    const i64 iy = iy0 + ky;
                    for (i64 kx = 0; kx < d.kw; ++kx) {
                        const i64 ix = ix0 + kx;
                        const bool in = iy >= 0 && iy < d.h && ix >= 0 && ix < d.w;
                        *crow++ = in ? plane[iy * d.w + ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_accum(const double* col, const ConvDims& d, double* img) {
    const i64 k2 = d.kh * d.kw;
    for (i64 oy = 0; oy < d.oh; ++oy) {
        for (i64 ox = 0; ox < d.ow; ++ox) {
            const double* crow = col + (oy * d.ow + ox) * d.cpg * k2;
            const i64 iy0 = oy * d.stride - d.padding;
            const i64 ix0 = ox * d.stride - d.padding;
            for (i64 c = 0; c < d.cpg; ++c) {
                double* plane = img + c * d.h * d.w;
                for (i64 ky = 0; ky < d.kh; ++ky) {
                    const i64 iy = iy0 + ky;
                    for (i64 kx = 0; kx < d.kw; ++kx) {
                        const i64 ix = ix0 + kx;
                        if (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w) {
                            plane[iy * d.w + ix] += *crow;
                        }
                        ++crow;
                    }
                }
            }
        }
    }
}

bool is_depthwise(const ConvDims& d) {
    return d.groups == d.cin && d.cpg == 1 && d.cout == d.cin;
}

void depthwise_forward(const double* in, const double* ker, double* out, const ConvDims& d) {
    for (i64 b = 0; b < d.n; ++b) {
        for (i64 c = 0; c < d.cin; ++c) {
            const double* plane = in + (b * d.cin + c) * d.h * d.w;
            const double* kk = ker + c * d.kh * d.kw;
            double* oplane = out + (b * d.cin + c) * d.oh * d.ow;
            for (i64 oy = 0; oy < d.oh; ++oy) {
                const i64 iy0 = oy * d.stride - d.padding;
                for (i64 ox = 0; ox < d.ow; ++ox) {
                    const i64 ix0 = ox * d.stride - d.padding;
                    double s = 0.0;
                    for (i64 ky = 0; ky < d.kh; ++ky) {
                        const i64 iy = iy0 + ky;
                        if (iy < 0 || iy >= d.h) continue;
                        const double* irow = plane + iy * d.w;
                        const double* krow = kk + ky * d.kw;
                        for (i64 kx = 0; kx < d.kw; ++kx) {
                            const i64 ix = ix0 + kx;
                            if (ix >= 0 && ix < d.w) s += irow[ix] * krow[kx];
                        }
                    }
                    oplane[oy * d.ow + ox] = s;
                }
            }
        }
    }
}

void depthwise_backward(const double* in, const double* ker, const double* gout,
                        double* gin, double* gker, const ConvDims& d) {
    for (i64 b = 0; b < d.n; ++b) {
        for (i64 c = 0; c < d.cin; ++c) {
            const double* plane = in + (b * d.cin + c) * d.h * d.w;
            const double* kk = ker + c * d.kh * d.kw;
            const double* gplane = gout + (b * d.cin + c) * d.oh * d.ow;
            double* giplane = gin ? gin + (b * d.cin + c) * d.h * d.w : nullptr;
            double* gkplane = gker ? gker + c * d.kh * d.kw : nullptr;
            for (i64 oy = 0; oy < d.oh; ++oy) {
                const i64 iy0 = oy * d.stride - d.padding;
                for (i64 ox = 0; ox < d.ow; ++ox) {
                    const i64 ix0 = ox * d.stride - d.padding;
                    const double g = gplane[oy * d.ow + ox];
                    if (g == 0.0) continue;
                    for (i64 ky = 0; ky < d.kh; ++ky) {
                        const i64 iy = iy0 + ky;
                        if (iy < 0 || iy >= d.h) continue;
                        for (i64 kx = 0; kx < d.kw; ++kx) {
                            const i64 ix = ix0 + kx;
                            if (ix < 0 || ix >= d.w) continue;
                            if (giplane) giplane[iy * d.w + ix] += g * kk[ky * d.kw + kx];
                            if (gkplane) gkplane[ky * d.kw + kx] += g * plane[iy * d.w + ix];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding, int groups) {
    const ConvDims d = conv_dims(input, kernel, stride, padding, groups);
    if (bias.defined() && (bias.rank() != 1 || bias.extent(0) != d.cout)) {
        throw std::invalid_argument("conv2d: bias extent must equal output channels");
    }

    std::vector<double> out(static_cast<size_t>(d.n * d.cout * d.oh * d.ow));
    const i64 copg = d.cout / d.groups;           // output channels per group
    const i64 patch = d.cpg * d.kh * d.kw;        // im2col row length
    const i64 spots = d.oh * d.ow;

    if (is_depthwise(d)) {
        depthwise_forward(input.data().data(), kernel.data().data(), out.data(), d);
    } else {
        std::vector<double> col(static_cast<size_t>(spots * patch));
        std::vector<double> prod(static_cast<size_t>(spots * copg));
        for (i64 b = 0; b < d.n; ++b) {
            for (i64 g = 0; g < d.groups; ++g) {
                const double* img = input.data().data() + (b * d.cin + g * d.cpg) * d.h * d.w;
                im2col(img, d, col.data());
                // kernel slice for group g: [copg, patch]; out_chunk = col * k^T
                const double* kslice = kernel.data().data() + g * copg * patch;
                detail::gemm_nt(col.data(), kslice, prod.data(), spots, patch, copg, false);
                // prod is [spots, copg]; scatter to [copg, spots]
                double* ochunk = out.data() + (b * d.cout + g * copg) * spots;
                for (i64 s = 0; s < spots; ++s) {
                    const double* prow = prod.data() + s * copg;
                    for (i64 oc = 0; oc < copg; ++oc) ochunk[oc * spots + s] = prow[oc];
                }
            }
        }
    }
    if (bias.defined()) {
        for (i64 b = 0; b < d.n; ++b) {
            for (i64 oc = 0; oc < d.cout; ++oc) {
                double* chunk = out.data() + (b * d.cout + oc) * spots;
                const double bv = bias.data()[static_cast<size_t>(oc)];
                for (i64 s = 0; s < spots; ++s) chunk[s] += bv;
            }
        }
    }

    Tensor inT = input, kT = kernel, bT = bias;
    return make_op({d.n, d.cout, d.oh, d.ow}, std::move(out), {inT, kT, bT},
                   [inT, kT, bT, d, copg, patch, spots](Node& node) {
                       Node* pin = inT.node().get();
                       Node* pk = kT.node().get();
                       const bool need_in = pin->requires_grad;
                       const bool need_k = pk->requires_grad;
                       if (is_depthwise(d)) {
                           if (need_in || need_k) {
                               depthwise_backward(pin->data.data(), pk->data.data(), node.grad.data(),
                                                  need_in ? pin->grad.data() : nullptr,
                                                  need_k ? pk->grad.data() : nullptr, d);
                           }
                       } else if (need_in || need_k) {
                           std::vector<double> col(static_cast<size_t>(spots * patch));
                           std::vector<double> gprod(static_cast<size_t>(spots * copg));
                           std::vector<double> gcol(static_cast<size_t>(spots * patch));
                           for (i64 b = 0; b < d.n; ++b) {
                               for (i64 g = 0; g < d.groups; ++g) {
                                   const double* gchunk = node.grad.data() + (b * d.cout + g * copg) * spots;
                                   for (i64 s = 0; s < spots; ++s)
                                       for (i64 oc = 0; oc < copg; ++oc)
                                           gprod[static_cast<size_t>(s * copg + oc)] = gchunk[oc * spots + s];
                                   const double* kslice = pk->data.data() + g * copg * patch;
                                   if (need_k) {
                                       const double* img = pin->data.data() + (b * d.cin + g * d.cpg) * d.h * d.w;
                                       im2col(img, d, col.data());
                                       // dK[oc,p] += sum_s gprod[s,oc] * col[s,p]
                                       detail::gemm_tn(gprod.data(), col.data(),
                                                       pk->grad.data() + g * copg * patch,
                                                       copg, spots, patch, true);
                                   }
                                   if (need_in) {
                                       // dcol[s,p] = sum_oc gprod[s,oc] * K[oc,p]
                                       detail::gemm_nn(gprod.data(), kslice, gcol.data(),
                                                       spots, copg, patch, false);
                                       double* gimg = pin->grad.data() + (b * d.cin + g * d.cpg) * d.h * d.w;
                                       col2im_accum(gcol.data(), d, gimg);
                                   }
                               }
                           }
                       }
                       if (bT.defined() && bT.node()->requires_grad) {
                           Node* pb = bT.node().get();
                           for (i64 b = 0; b < d.n; ++b)
                               for (i64 oc = 0; oc < d.cout; ++oc) {
                                   const double* chunk = node.grad.data() + (b * d.cout + oc) * spots;
                                   double s = 0.0;
                                   for (i64 sp = 0; sp < spots; ++sp) s += chunk[sp];
                                   pb->grad[static_cast<size_t>(oc)] += s;
                               }
                       }
                   },
                   "conv2d");
}

// ---------------------------------------------------------------------------
// layer_norm over the last dimension
// ---------------------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() < 1) throw std::invalid_argument("layer_norm: rank >= 1 required");
    const i64 k = x.extent(x.rank() - 1);
    if (k <= 0) throw std::invalid_argument("layer_norm: zero-length normalization axis");
    if (gamma.rank() != 1 || gamma.extent(0) != k || beta.rank() != 1 || beta.extent(0) != k) {
        throw std::invalid_argument("layer_norm: gamma/beta must match last extent");
    }
    const i64 rows = x.numel() / k;
    std::vector<double> out(x.data().size());
    auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(rows * 2));  // mean, rstd

    const double* src = x.data().data();
    const double* gv = gamma.data().data();
    const double* bv = beta.data().data();
    for (i64 r = 0; r < rows; ++r) {
        const double* row = src + r * k;
        double mean = 0.0;
        for (i64 j = 0; j < k; ++j) mean += row[j];
        mean /= static_cast<double>(k);
        double var = 0.0;
        for (i64 j = 0; j < k; ++j) {
            const double dlt = row[j] - mean;
            var += dlt * dlt;
        }
        var /= static_cast<double>(k);
        const double rstd = 1.0 / std::sqrt(var + eps);
        (*stats)[static_cast<size_t>(2 * r)] = mean;
        (*stats)[static_cast<size_t>(2 * r + 1)] = rstd;
        double* orow = out.data() + r * k;
        for (i64 j = 0; j < k; ++j) orow[j] = (row[j] - mean) * rstd * gv[j] + bv[j];
    }

    Tensor xT = x, gT = gamma, bT = beta;
    return make_op(x.shape(), std::move(out), {xT, gT, bT},
                   [xT, gT, bT, stats, rows, k](Node& node) {
                       Node* px = xT.node().get();
                       Node* pg = gT.node().get();
                       Node* pb = bT.node().get();
                       const double invk = 1.0 / static_cast<double>(k);
                       for (i64 r = 0; r < rows; ++r) {
                           const double mean = (*stats)[static_cast<size_t>(2 * r)];
                           const double rstd = (*stats)[static_cast<size_t>(2 * r + 1)];
                           const double* row = px->data.data() + r * k;
                           const double* grow = node.grad.data() + r * k;
                           if (pg->requires_grad || pb->requires_grad) {
                               for (i64 j = 0; j < k; ++j) {
                                   const double xhat = (row[j] - mean) * rstd;
                                   if (pg->requires_grad) pg->grad[static_cast<size_t>(j)] += grow[j] * xhat;
                                   if (pb->requires_grad) pb->grad[static_cast<size_t>(j)] += grow[j];
                               }
                           }
                           if (px->requires_grad) {
                               // dx = rstd * (gy - mean(gy) - xhat * mean(gy*xhat)),  gy = g*gamma
                               double m1 = 0.0, m2 = 0.0;
                               for (i64 j = 0; j < k; ++j) {
                                   const double gy = grow[j] * gT.data()[static_cast<size_t>(j)];
                                   const double xhat = (row[j] - mean) * rstd;
                                   m1 += gy;
                                   m2 += gy * xhat;
                               }
                               m1 *= invk;
                               m2 *= invk;
                               for (i64 j = 0; j < k; ++j) {
                                   const double gy = grow[j] * gT.data()[static_cast<size_t>(j)];
                                   const double xhat = (row[j] - mean) * rstd;
                                   px->grad[static_cast<size_t>(r * k + j)] += rstd * (gy - m1 - xhat * m2);
                               }
                           }
                       }
                   },
                   "layer_norm");
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

double fd_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
    Tensor probe = Tensor::from(x.shape(), x.data(), /*requires_grad=*/true);
    Tensor loss = f(probe);
    if (loss.numel() != 1) throw std::invalid_argument("fd_check: f must return a scalar");
    if (!std::isfinite(loss.item())) throw std::runtime_error("fd_check: f returned non-finite value");
    loss.backward();
    std::vector<double> analytic = probe.grad();

    double worst = 0.0;
    std::vector<double> base = x.data();
    NoGradGuard ng;
    for (size_t i = 0; i < base.size(); ++i) {
        std::vector<double> d = base;
        d[i] = base[i] + h;
        const double up = f(Tensor::from(x.shape(), d)).item();
        d[i] = base[i] - h;
        const double dn = f(Tensor::from(x.shape(), d)).item();
        if (!std::isfinite(up) || !std::isfinite(dn)) {
            throw std::runtime_error("fd_check: f returned non-finite value");
        }
        const double fd = (up - dn) / (2.0 * h);
        const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
        worst = std::max(worst, err);
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

static_assert(sizeof(double) == 8, "f64 payload assumed");

void write_tensor(std::ostream& os, const Tensor& t) {
    os.write("HSTN", 4);
    const std::uint32_t rank = static_cast<std::uint32_t>(t.rank());
    os.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
    for (i64 e : t.shape()) {
        const std::uint64_t ext = static_cast<std::uint64_t>(e);
        os.write(reinterpret_cast<const char*>(&ext), sizeof(ext));
    }
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.data().size() * sizeof(double)));
    if (!os) throw std::runtime_error("write_tensor: stream failure");
}

Tensor read_tensor(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "HSTN", 4) != 0) {
        throw std::runtime_error("read_tensor: bad magic");
    }
    std::uint32_t rank = 0;
    is.read(reinterpret_cast<char*>(&rank), sizeof(rank));
    if (!is || rank > 8) throw std::runtime_error("read_tensor: bad rank");
    std::vector<i64> shape(rank);
    i64 count = 1;
    for (auto& e : shape) {
        std::uint64_t ext = 0;
        is.read(reinterpret_cast<char*>(&ext), sizeof(ext));
        if (!is || ext == 0 || ext > (1ull << 32)) throw std::runtime_error("read_tensor: bad extent");
        e = static_cast<i64>(ext);
        count *= e;
    }
    std::vector<double> data(static_cast<size_t>(count));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw std::runtime_error("read_tensor: truncated payload");
    return Tensor::from(std::move(shape), std::move(data));
}

}  // namespace hssnet
