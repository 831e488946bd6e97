#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "annosim/common.hpp"

namespace annosim {

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

/// One record of the computation graph. Holds the forward value, the gradient
/// buffer, and a closure that pushes this node's gradient into its parents.
/// The graph is the DAG spanned by `parents`; backward() walks it in reverse
/// topological order exactly once.
struct TensorNode {
    std::vector<size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // same length as data when requires_grad
    bool requires_grad = false;
    bool backward_done = false;  // set on the node backward() was called on
    const char* op = "leaf";
    std::vector<NodePtr> parents;
    std::function<void(TensorNode&)> backprop;

    size_t numel() const { return data.size(); }
};

/// Dense f64 array with shape and gradient slot; value-semantic handle over a
/// shared graph node. Rank 0 (shape {}) is a scalar, rank 1 a vector, rank 2
/// a batch of row vectors. All stored values are finite; ops that would
/// produce NaN/Inf throw NumericError instead.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

    static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<size_t> shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor from_data(std::vector<size_t> shape, std::vector<double> data,
                            bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<size_t>& shape() const { return node_->shape; }
    size_t rank() const { return node_->shape.size(); }
    size_t numel() const { return node_->data.size(); }

    std::span<const double> data() const { return node_->data; }
    /// In-place write access for leaves (parameter updates, perturbations).
    std::span<double> mutable_data() { return node_->data; }
    std::span<const double> grad() const { return node_->grad; }

    bool requires_grad() const { return node_->requires_grad; }
    void zero_grad();

    /// Scalar value; throws unless numel() == 1.
    double value() const;
    double at(size_t i) const { return node_->data[i]; }

    const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

/// Thread-local switch: when disabled, ops compute values but record no graph.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Elementwise binary ops. Shapes must match, or one operand's shape must be a
// suffix of the other's (broadcast over leading batch dims; scalars broadcast
// everywhere).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor add_const(const Tensor& x, double c);
Tensor mul_const(const Tensor& x, double c);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator+(const Tensor& x, double c) { return add_const(x, c); }
inline Tensor operator-(const Tensor& x, double c) { return add_const(x, -c); }
inline Tensor operator*(const Tensor& x, double c) { return mul_const(x, c); }
inline Tensor operator*(double c, const Tensor& x) { return mul_const(x, c); }

/// [m,k]x[k,n] -> [m,n]; rank-1 operands are lifted ([k] as [1,k] or [k,1])
/// and the lifted dimension squeezed from the result.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);  // throws on non-positive entries
Tensor softplus(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor pow_scalar(const Tensor& x, double p);

// Softmax family acts on the last dimension, log-domain stable.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
/// Sum over the last dimension: [B,d] -> [B], [d] -> scalar.
Tensor sum_last(const Tensor& x);

Tensor slice_last(const Tensor& x, size_t start, size_t len);
Tensor concat_last(const Tensor& a, const Tensor& b);

/// Stack rank-1 tensors of equal length into [n, d]. The same handle may
/// appear multiple times; its gradient accumulates across occurrences.
Tensor stack_rows(const std::vector<Tensor>& rows);
/// Repeat each row of [m, d] `times` times consecutively -> [m*times, d].
Tensor repeat_rows(const Tensor& x, size_t times);

/// Hook for modules that need ops with hand-written gradients (e.g. implicit
/// differentiation through a numeric solve). `backprop` receives the finished
/// node and must accumulate into parents' grad buffers.
Tensor make_op(std::vector<size_t> shape, std::vector<double> data, std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backprop, const char* name);

/// Reverse-mode sweep from a scalar loss. Gradients accumulate additively
/// into every requires_grad tensor reachable from `loss`. Throws if the loss
/// is not scalar or if called twice on the same node.
void backward(const Tensor& loss);

/// Max over all parameter entries of |analytic - central difference| /
/// max(1, |central difference|). `fn` must be deterministic given the
/// parameter values (fix any noise before calling).
double finite_diff_check(const std::function<Tensor()>& fn, const std::vector<Tensor>& params,
                         double h);
/// Same, but checks a random subsample of at most `max_entries` entries.
double finite_diff_check(const std::function<Tensor()>& fn, const std::vector<Tensor>& params,
                         double h, size_t max_entries, uint64_t seed);

}  // namespace annosim
