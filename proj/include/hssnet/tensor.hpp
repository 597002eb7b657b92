#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace hssnet {

using i64 = std::int64_t;

struct Node;
class Tensor;

/// Global switch for tape recording. Off => ops compute values only.
struct GradMode {
    static bool enabled();
    static void set(bool on);
};

struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// One recorded operation (or leaf). Gradients accumulate additively
/// across fan-out; backward() visits each node exactly once.
struct Node {
    std::vector<i64> shape;
    std::vector<double> data;   // row-major
    std::vector<double> grad;   // same length as data iff requires_grad
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this->grad, accumulates into parents' grad buffers.
    std::function<void(Node&)> backward;

    i64 numel() const { return static_cast<i64>(data.size()); }
};

/// Value-semantic handle to a shared tape node. Data is immutable after
/// creation except grad accumulation and optimizer updates on leaves.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor zeros(std::vector<i64> shape, bool requires_grad = false);
    static Tensor full(std::vector<i64> shape, double value, bool requires_grad = false);
    static Tensor from(std::vector<i64> shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return node_ != nullptr; }
    const std::vector<i64>& shape() const { return node_->shape; }
    i64 numel() const { return node_->numel(); }
    i64 extent(int dim) const { return node_->shape.at(static_cast<size_t>(dim)); }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    const std::vector<double>& data() const { return node_->data; }
    const std::vector<double>& grad() const;
    // Optimizer access; never call on tensors still referenced by a live tape.
    std::vector<double>& mutable_data() { return node_->data; }
    std::vector<double>& mutable_grad();

    double item() const;
    double at(std::initializer_list<i64> idx) const;

    void zero_grad();
    /// Reverse-mode sweep from a scalar. Throws if numel != 1.
    void backward() const;

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Builds an op node: validates finiteness of `data`, wires parents and the
/// backward rule when grad recording is active. Other modules use this to
/// define fused ops without touching Node internals.
Tensor make_op(std::vector<i64> shape, std::vector<double> data,
               std::vector<Tensor> parents,
               std::function<void(Node&)> backward, const char* name);

// ---- elementwise / broadcasting ----
// Broadcasting is restricted to leading extents: the smaller shape must be a
// right-aligned suffix of the larger (implied leading 1s).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);   // overflow-safe: x > 30 -> x
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);  // zero gradient outside [lo,hi]

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);                       // [M,K]x[K,N]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = {}); // rows [M,K] -> [M,N]

// ---- structural ----
Tensor reshape(const Tensor& x, std::vector<i64> shape);
Tensor transpose2d(const Tensor& x);
Tensor nchw_to_rows(const Tensor& x);                       // [N,C,H,W] -> [N*H*W, C]
Tensor rows_to_nchw(const Tensor& x, i64 n, i64 c, i64 h, i64 w);
Tensor permute_cols(const Tensor& x, const std::vector<i64>& perm);  // [C,L], out[:,k]=x[:,perm[k]]
Tensor narrow0(const Tensor& x, i64 start, i64 len);        // slice along dim 0
Tensor upsample_nearest(const Tensor& x, int factor);       // [N,C,H,W] -> [N,C,fH,fW]

// ---- reductions ----
Tensor sum_all(const Tensor& x);   // -> [1]
Tensor mean_all(const Tensor& x);  // -> [1]

// ---- convolution / normalization ----
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding, int groups);
inline Tensor conv2d(const Tensor& input, const Tensor& kernel,
                     int stride, int padding, int groups) {
    return conv2d(input, kernel, Tensor{}, stride, padding, groups);
}
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double fd_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                double h = 1e-5);

// ---- serialization: magic "HSTN", u32 rank, u64 extents, f64 payload (LE) ----
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

// Raw GEMM entry points shared by matmul/linear/conv2d.
namespace detail {
// C[M,N] (+)= A[M,K] * B[K,N]
void gemm_nn(const double* a, const double* b, double* c, i64 m, i64 k, i64 n, bool accumulate);
// C[M,N] (+)= A[K,M]^T * B[K,N]
void gemm_tn(const double* a, const double* b, double* c, i64 m, i64 k, i64 n, bool accumulate);
// C[M,N] (+)= A[M,K] * B[N,K]^T
void gemm_nt(const double* a, const double* b, double* c, i64 m, i64 k, i64 n, bool accumulate);
}  // namespace detail

}  // namespace hssnet
