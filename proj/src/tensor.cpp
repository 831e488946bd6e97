#include "annosim/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "annosim/rng.hpp"

namespace annosim {

namespace {

thread_local bool g_grad_enabled = true;

size_t shape_numel(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

void check_finite(const std::vector<double>& data, const char* op) {
    for (size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i])) {
            throw NumericError(std::string(op) + " produced non-finite value at index " +
                               std::to_string(i));
        }
    }
}

NodePtr new_node(std::vector<size_t> shape, std::vector<double> data, const char* op) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->op = op;
    return n;
}

// Attach graph bookkeeping if grad mode is on and any parent needs it.
Tensor finish_op(NodePtr node, std::vector<Tensor> parents,
                 std::function<void(TensorNode&)> backprop) {
    bool need = false;
    if (g_grad_enabled) {
        for (const auto& p : parents)
            if (p.node()->requires_grad) need = true;
    }
    if (need) {
        node->requires_grad = true;
        node->grad.assign(node->data.size(), 0.0);
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node());
        node->backprop = std::move(backprop);
    }
    return Tensor(std::move(node));
}

// True if `small` equals the trailing dims of `big` (row-major suffix
// broadcast; the empty shape is a suffix of everything).
bool is_suffix(const std::vector<size_t>& small, const std::vector<size_t>& big) {
    if (small.size() > big.size()) return false;
    size_t off = big.size() - small.size();
    for (size_t i = 0; i < small.size(); ++i)
        if (small[i] != big[off + i]) return false;
    return true;
}

struct ElemwiseFns {
    // value(av, bv), d/da, d/db
    double (*f)(double, double);
    double (*dfa)(double, double);
    double (*dfb)(double, double);
};

Tensor binary_op(const Tensor& a, const Tensor& b, const ElemwiseFns& fns, const char* name) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    bool b_small;
    if (is_suffix(bs, as)) {
        b_small = true;
    } else if (is_suffix(as, bs)) {
        b_small = false;
    } else {
        throw std::invalid_argument(std::string(name) + ": shapes " + shape_str(as) + " and " +
                                    shape_str(bs) + " do not broadcast");
    }
    const Tensor& big = b_small ? a : b;
    const Tensor& small = b_small ? b : a;
    size_t n = big.numel();
    size_t m = small.numel();
    std::vector<double> out(n);
    auto bd = big.data();
    auto sd = small.data();
    for (size_t i = 0; i < n; ++i) {
        double av = b_small ? bd[i] : sd[i % m];
        double bv = b_small ? sd[i % m] : bd[i];
        out[i] = fns.f(av, bv);
    }
    check_finite(out, name);
    auto node = new_node(big.shape(), std::move(out), name);
    return finish_op(std::move(node), {a, b}, [fns, b_small, m](TensorNode& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        size_t n = self.numel();
        for (size_t i = 0; i < n; ++i) {
            double g = self.grad[i];
            if (g == 0.0) continue;
            size_t ia = b_small ? i : i % m;
            size_t ib = b_small ? i % m : i;
            double av = pa.data[ia];
            double bv = pb.data[ib];
            if (pa.requires_grad) pa.grad[ia] += g * fns.dfa(av, bv);
            if (pb.requires_grad) pb.grad[ib] += g * fns.dfb(av, bv);
        }
    });
}

struct UnaryFns {
    double (*f)(double);
    // derivative expressed in terms of (input, output) to reuse cached values
    double (*df)(double, double);
};

Tensor unary_op(const Tensor& x, const UnaryFns& fns, const char* name) {
    size_t n = x.numel();
    std::vector<double> out(n);
    auto xd = x.data();
    for (size_t i = 0; i < n; ++i) out[i] = fns.f(xd[i]);
    check_finite(out, name);
    auto node = new_node(x.shape(), std::move(out), name);
    return finish_op(std::move(node), {x}, [fns](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (size_t i = 0; i < self.numel(); ++i)
            p.grad[i] += self.grad[i] * fns.df(p.data[i], self.data[i]);
    });
}

}  // namespace

Tensor Tensor::zeros(std::vector<size_t> shape, bool requires_grad) {
    return from_data(std::move(shape), {}, requires_grad);
}

Tensor Tensor::full(std::vector<size_t> shape, double value, bool requires_grad) {
    std::vector<double> data(shape_numel(shape), value);
    return from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({}, {value}, requires_grad);
}

Tensor Tensor::from_data(std::vector<size_t> shape, std::vector<double> data, bool requires_grad) {
    size_t n = shape_numel(shape);
    if (data.empty()) data.assign(n, 0.0);
    if (data.size() != n) {
        throw std::invalid_argument("Tensor: data size " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    }
    check_finite(data, "Tensor::from_data");
    auto node = new_node(std::move(shape), std::move(data), "leaf");
    if (requires_grad) {
        node->requires_grad = true;
        node->grad.assign(node->data.size(), 0.0);
    }
    return Tensor(std::move(node));
}

void Tensor::zero_grad() {
    if (node_ && node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::value() const {
    if (!node_ || node_->data.size() != 1)
        throw std::invalid_argument("Tensor::value requires a scalar tensor");
    return node_->data[0];
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor add(const Tensor& a, const Tensor& b) {
    static const ElemwiseFns fns{[](double x, double y) { return x + y; },
                                 [](double, double) { return 1.0; },
                                 [](double, double) { return 1.0; }};
    return binary_op(a, b, fns, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    static const ElemwiseFns fns{[](double x, double y) { return x - y; },
                                 [](double, double) { return 1.0; },
                                 [](double, double) { return -1.0; }};
    return binary_op(a, b, fns, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    static const ElemwiseFns fns{[](double x, double y) { return x * y; },
                                 [](double, double y) { return y; },
                                 [](double x, double) { return x; }};
    return binary_op(a, b, fns, "mul");
}

Tensor div(const Tensor& a, const Tensor& b) {
    // report zero divisors with their index before the elementwise kernel runs
    auto bd = b.data();
    for (size_t i = 0; i < bd.size(); ++i) {
        if (bd[i] == 0.0)
            throw NumericError("div: zero divisor at index " + std::to_string(i));
    }
    static const ElemwiseFns fns{[](double x, double y) { return x / y; },
                                 [](double, double y) { return 1.0 / y; },
                                 [](double x, double y) { return -x / (y * y); }};
    return binary_op(a, b, fns, "div");
}

Tensor neg(const Tensor& x) {
    static const UnaryFns fns{[](double v) { return -v; }, [](double, double) { return -1.0; }};
    return unary_op(x, fns, "neg");
}

Tensor add_const(const Tensor& x, double c) {
    size_t n = x.numel();
    std::vector<double> out(n);
    auto xd = x.data();
    for (size_t i = 0; i < n; ++i) out[i] = xd[i] + c;
    check_finite(out, "add_const");
    auto node = new_node(x.shape(), std::move(out), "add_const");
    return finish_op(std::move(node), {x}, [](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (size_t i = 0; i < self.numel(); ++i) p.grad[i] += self.grad[i];
    });
}

Tensor mul_const(const Tensor& x, double c) {
    size_t n = x.numel();
    std::vector<double> out(n);
    auto xd = x.data();
    for (size_t i = 0; i < n; ++i) out[i] = xd[i] * c;
    check_finite(out, "mul_const");
    auto node = new_node(x.shape(), std::move(out), "mul_const");
    return finish_op(std::move(node), {x}, [c](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (size_t i = 0; i < self.numel(); ++i) p.grad[i] += self.grad[i] * c;
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() == 0 || a.rank() > 2 || b.rank() == 0 || b.rank() > 2)
        throw std::invalid_argument("matmul: operands must be rank 1 or 2");
    bool lift_a = a.rank() == 1;  // [k] -> [1,k]
    bool lift_b = b.rank() == 1;  // [k] -> [k,1]
    size_t m = lift_a ? 1 : a.shape()[0];
    size_t ka = lift_a ? a.shape()[0] : a.shape()[1];
    size_t kb = lift_b ? b.shape()[0] : b.shape()[0];
    size_t n = lift_b ? 1 : b.shape()[1];
    if (ka != kb) {
        throw std::invalid_argument("matmul: inner dims differ, " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    }
    size_t k = ka;
    std::vector<double> out(m * n, 0.0);
    auto ad = a.data();
    auto bd = b.data();
    for (size_t i = 0; i < m; ++i) {
        for (size_t kk = 0; kk < k; ++kk) {
            double av = ad[i * k + kk];
            if (av == 0.0) continue;
            const double* brow = &bd[kk * n];
            double* orow = &out[i * n];
            for (size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    check_finite(out, "matmul");
    std::vector<size_t> out_shape;
    if (!lift_a) out_shape.push_back(m);
    if (!lift_b) out_shape.push_back(n);
    auto node = new_node(std::move(out_shape), std::move(out), "matmul");
    return finish_op(std::move(node), {a, b}, [m, n, k](TensorNode& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        // dA = dC * B^T ; dB = A^T * dC
        if (pa.requires_grad) {
            for (size_t i = 0; i < m; ++i)
                for (size_t kk = 0; kk < k; ++kk) {
                    double s = 0.0;
                    const double* grow = &self.grad[i * n];
                    const double* brow = &pb.data[kk * n];
                    for (size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                    pa.grad[i * k + kk] += s;
                }
        }
        if (pb.requires_grad) {
            for (size_t i = 0; i < m; ++i) {
                const double* grow = &self.grad[i * n];
                for (size_t kk = 0; kk < k; ++kk) {
                    double av = pa.data[i * k + kk];
                    if (av == 0.0) continue;
                    double* brow = &pb.grad[kk * n];
                    for (size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                }
            }
        }
    });
}

Tensor tanh(const Tensor& x) {
    static const UnaryFns fns{[](double v) { return std::tanh(v); },
                              [](double, double y) { return 1.0 - y * y; }};
    return unary_op(x, fns, "tanh");
}

Tensor exp(const Tensor& x) {
    static const UnaryFns fns{[](double v) { return std::exp(v); },
                              [](double, double y) { return y; }};
    return unary_op(x, fns, "exp");
}

Tensor log(const Tensor& x) {
    auto xd = x.data();
    for (size_t i = 0; i < xd.size(); ++i) {
        if (xd[i] <= 0.0)
            throw NumericError("log: non-positive operand at index " + std::to_string(i));
    }
    static const UnaryFns fns{[](double v) { return std::log(v); },
                              [](double v, double) { return 1.0 / v; }};
    return unary_op(x, fns, "log");
}

Tensor softplus(const Tensor& x) {
    static const UnaryFns fns{
        [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
        [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); }};
    return unary_op(x, fns, "softplus");
}

Tensor abs(const Tensor& x) {
    static const UnaryFns fns{[](double v) { return std::abs(v); },
                              [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }};
    return unary_op(x, fns, "abs");
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    size_t n = x.numel();
    std::vector<double> out(n);
    auto xd = x.data();
    for (size_t i = 0; i < n; ++i) out[i] = std::min(std::max(xd[i], lo), hi);
    auto node = new_node(x.shape(), std::move(out), "clamp");
    return finish_op(std::move(node), {x}, [lo, hi](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (size_t i = 0; i < self.numel(); ++i) {
            double v = p.data[i];
            if (v >= lo && v <= hi) p.grad[i] += self.grad[i];
        }
    });
}

Tensor pow_scalar(const Tensor& x, double p) {
    size_t n = x.numel();
    std::vector<double> out(n);
    auto xd = x.data();
    for (size_t i = 0; i < n; ++i) out[i] = std::pow(xd[i], p);
    check_finite(out, "pow_scalar");
    auto node = new_node(x.shape(), std::move(out), "pow_scalar");
    return finish_op(std::move(node), {x}, [p](TensorNode& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        for (size_t i = 0; i < self.numel(); ++i)
            px.grad[i] += self.grad[i] * p * std::pow(px.data[i], p - 1.0);
    });
}

namespace {

// rows/cols view of the last dimension
std::pair<size_t, size_t> last_dim_view(const Tensor& x, const char* name) {
    if (x.rank() == 0) throw std::invalid_argument(std::string(name) + ": scalar input");
    size_t d = x.shape().back();
    return {x.numel() / d, d};
}

}  // namespace

Tensor softmax(const Tensor& x) {
    auto [rows, d] = last_dim_view(x, "softmax");
    std::vector<double> out(x.numel());
    auto xd = x.data();
    for (size_t r = 0; r < rows; ++r) {
        const double* in = &xd[r * d];
        double* o = &out[r * d];
        double mx = in[0];
        for (size_t j = 1; j < d; ++j) mx = std::max(mx, in[j]);
        double sum = 0.0;
        for (size_t j = 0; j < d; ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (size_t j = 0; j < d; ++j) o[j] /= sum;
    }
    check_finite(out, "softmax");
    auto node = new_node(x.shape(), std::move(out), "softmax");
    size_t dd = d, rr = rows;
    return finish_op(std::move(node), {x}, [rr, dd](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (size_t r = 0; r < rr; ++r) {
            const double* y = &self.data[r * dd];
            const double* g = &self.grad[r * dd];
            double dot = 0.0;
            for (size_t j = 0; j < dd; ++j) dot += g[j] * y[j];
            double* px = &p.grad[r * dd];
            for (size_t j = 0; j < dd; ++j) px[j] += y[j] * (g[j] - dot);
        }
    });
}

Tensor log_softmax(const Tensor& x) {
    auto [rows, d] = last_dim_view(x, "log_softmax");
    std::vector<double> out(x.numel());
    auto xd = x.data();
    for (size_t r = 0; r < rows; ++r) {
        const double* in = &xd[r * d];
        double* o = &out[r * d];
        double mx = in[0];
        for (size_t j = 1; j < d; ++j) mx = std::max(mx, in[j]);
        double sum = 0.0;
        for (size_t j = 0; j < d; ++j) sum += std::exp(in[j] - mx);
        double lse = mx + std::log(sum);
        for (size_t j = 0; j < d; ++j) o[j] = in[j] - lse;
    }
    check_finite(out, "log_softmax");
    auto node = new_node(x.shape(), std::move(out), "log_softmax");
    size_t dd = d, rr = rows;
    return finish_op(std::move(node), {x}, [rr, dd](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (size_t r = 0; r < rr; ++r) {
            const double* y = &self.data[r * dd];
            const double* g = &self.grad[r * dd];
            double gsum = 0.0;
            for (size_t j = 0; j < dd; ++j) gsum += g[j];
            double* px = &p.grad[r * dd];
            for (size_t j = 0; j < dd; ++j) px[j] += g[j] - std::exp(y[j]) * gsum;
        }
    });
}

Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    check_finite({s}, "sum_all");
    auto node = new_node({}, {s}, "sum_all");
    return finish_op(std::move(node), {x}, [](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        double g = self.grad[0];
        for (size_t i = 0; i < p.numel(); ++i) p.grad[i] += g;
    });
}

Tensor mean_all(const Tensor& x) {
    size_t n = x.numel();
    if (n == 0) throw std::invalid_argument("mean_all: empty tensor");
    double s = 0.0;
    for (double v : x.data()) s += v;
    s /= static_cast<double>(n);
    check_finite({s}, "mean_all");
    auto node = new_node({}, {s}, "mean_all");
    return finish_op(std::move(node), {x}, [n](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        double g = self.grad[0] / static_cast<double>(n);
        for (size_t i = 0; i < p.numel(); ++i) p.grad[i] += g;
    });
}

Tensor sum_last(const Tensor& x) {
    auto [rows, d] = last_dim_view(x, "sum_last");
    std::vector<double> out(rows, 0.0);
    auto xd = x.data();
    for (size_t r = 0; r < rows; ++r)
        for (size_t j = 0; j < d; ++j) out[r] += xd[r * d + j];
    check_finite(out, "sum_last");
    std::vector<size_t> out_shape(x.shape().begin(), x.shape().end() - 1);
    auto node = new_node(std::move(out_shape), std::move(out), "sum_last");
    size_t dd = d, rr = rows;
    return finish_op(std::move(node), {x}, [rr, dd](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (size_t r = 0; r < rr; ++r) {
            double g = self.grad[r];
            for (size_t j = 0; j < dd; ++j) p.grad[r * dd + j] += g;
        }
    });
}

Tensor slice_last(const Tensor& x, size_t start, size_t len) {
    auto [rows, d] = last_dim_view(x, "slice_last");
    if (start + len > d)
        throw std::invalid_argument("slice_last: range exceeds dimension " + std::to_string(d));
    std::vector<double> out(rows * len);
    auto xd = x.data();
    for (size_t r = 0; r < rows; ++r)
        for (size_t j = 0; j < len; ++j) out[r * len + j] = xd[r * d + start + j];
    std::vector<size_t> out_shape = x.shape();
    out_shape.back() = len;
    auto node = new_node(std::move(out_shape), std::move(out), "slice_last");
    size_t dd = d, rr = rows;
    return finish_op(std::move(node), {x}, [rr, dd, start, len](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (size_t r = 0; r < rr; ++r)
            for (size_t j = 0; j < len; ++j)
                p.grad[r * dd + start + j] += self.grad[r * len + j];
    });
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
    if (a.rank() != b.rank() || a.rank() == 0)
        throw std::invalid_argument("concat_last: rank mismatch");
    for (size_t i = 0; i + 1 < a.rank(); ++i)
        if (a.shape()[i] != b.shape()[i])
            throw std::invalid_argument("concat_last: leading dims differ");
    size_t da = a.shape().back(), db = b.shape().back();
    size_t rows = a.numel() / da;
    std::vector<double> out(rows * (da + db));
    auto ad = a.data();
    auto bd = b.data();
    for (size_t r = 0; r < rows; ++r) {
        for (size_t j = 0; j < da; ++j) out[r * (da + db) + j] = ad[r * da + j];
        for (size_t j = 0; j < db; ++j) out[r * (da + db) + da + j] = bd[r * db + j];
    }
    std::vector<size_t> out_shape = a.shape();
    out_shape.back() = da + db;
    auto node = new_node(std::move(out_shape), std::move(out), "concat_last");
    return finish_op(std::move(node), {a, b}, [rows, da, db](TensorNode& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        size_t d = da + db;
        for (size_t r = 0; r < rows; ++r) {
            if (pa.requires_grad)
                for (size_t j = 0; j < da; ++j) pa.grad[r * da + j] += self.grad[r * d + j];
            if (pb.requires_grad)
                for (size_t j = 0; j < db; ++j) pb.grad[r * db + j] += self.grad[r * d + da + j];
        }
    });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw std::invalid_argument("stack_rows: empty input");
    size_t d = rows[0].numel();
    for (const auto& r : rows) {
        if (r.rank() != 1 || r.numel() != d)
            throw std::invalid_argument("stack_rows: rows must be rank-1 of equal length");
    }
    std::vector<double> out;
    out.reserve(rows.size() * d);
    for (const auto& r : rows) out.insert(out.end(), r.data().begin(), r.data().end());
    auto node = new_node({rows.size(), d}, std::move(out), "stack_rows");
    return finish_op(std::move(node), rows, [d](TensorNode& self) {
        for (size_t r = 0; r < self.parents.size(); ++r) {
            auto& p = *self.parents[r];
            if (!p.requires_grad) continue;
            for (size_t j = 0; j < d; ++j) p.grad[j] += self.grad[r * d + j];
        }
    });
}

Tensor repeat_rows(const Tensor& x, size_t times) {
    if (x.rank() != 2) throw std::invalid_argument("repeat_rows: expected rank-2 input");
    if (times == 0) throw std::invalid_argument("repeat_rows: times must be positive");
    size_t m = x.shape()[0], d = x.shape()[1];
    std::vector<double> out(m * times * d);
    auto xd = x.data();
    for (size_t r = 0; r < m; ++r)
        for (size_t t = 0; t < times; ++t)
            std::copy(&xd[r * d], &xd[r * d] + d, &out[(r * times + t) * d]);
    auto node = new_node({m * times, d}, std::move(out), "repeat_rows");
    return finish_op(std::move(node), {x}, [m, d, times](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (size_t r = 0; r < m; ++r)
            for (size_t t = 0; t < times; ++t)
                for (size_t j = 0; j < d; ++j)
                    p.grad[r * d + j] += self.grad[(r * times + t) * d + j];
    });
}

Tensor make_op(std::vector<size_t> shape, std::vector<double> data, std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backprop, const char* name) {
    if (data.size() != shape_numel(shape))
        throw std::invalid_argument("make_op: data does not match shape");
    check_finite(data, name);
    auto node = new_node(std::move(shape), std::move(data), name);
    return finish_op(std::move(node), std::move(parents), std::move(backprop));
}

void backward(const Tensor& loss) {
    const NodePtr& root = loss.node();
    if (!root) throw std::invalid_argument("backward: undefined tensor");
    if (root->data.size() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    shape_str(root->shape));
    if (root->backward_done)
        throw std::runtime_error("backward: already called on this graph; rebuild or reset first");
    if (!root->requires_grad) {
        root->backward_done = true;
        return;  // nothing reachable requires grad
    }

    // iterative post-order DFS -> topological order
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    struct Frame {
        TensorNode* n;
        size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            TensorNode* p = f.n->parents[f.next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    root->grad.assign(1, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backprop) (*it)->backprop(**it);
    }
    root->backward_done = true;
}

namespace {

double eval_scalar(const std::function<Tensor()>& fn) {
    NoGradGuard ng;
    double v = fn().value();
    if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite function value");
    return v;
}

double fd_check_impl(const std::function<Tensor()>& fn, const std::vector<Tensor>& params,
                     double h, const std::vector<std::pair<size_t, size_t>>& entries) {
    if (h <= 0.0) throw std::invalid_argument("finite_diff_check: h must be positive");
    std::vector<Tensor> mut = params;
    for (auto& p : mut) {
        if (!p.requires_grad())
            throw std::invalid_argument("finite_diff_check: parameter without requires_grad");
        p.zero_grad();
    }
    Tensor loss = fn();
    if (!std::isfinite(loss.value()))
        throw NumericError("finite_diff_check: non-finite function value");
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(mut.size());
    for (auto& p : mut) analytic.emplace_back(p.grad().begin(), p.grad().end());

    double max_err = 0.0;
    for (auto [pi, i] : entries) {
        auto data = mut[pi].mutable_data();
        double orig = data[i];
        data[i] = orig + h;
        double fp = eval_scalar(fn);
        data[i] = orig - h;
        double fm = eval_scalar(fn);
        data[i] = orig;
        double fd = (fp - fm) / (2.0 * h);
        double err = std::abs(analytic[pi][i] - fd) / std::max(1.0, std::abs(fd));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace

double finite_diff_check(const std::function<Tensor()>& fn, const std::vector<Tensor>& params,
                         double h) {
    std::vector<std::pair<size_t, size_t>> entries;
    for (size_t pi = 0; pi < params.size(); ++pi)
        for (size_t i = 0; i < params[pi].numel(); ++i) entries.emplace_back(pi, i);
    return fd_check_impl(fn, params, h, entries);
}

double finite_diff_check(const std::function<Tensor()>& fn, const std::vector<Tensor>& params,
                         double h, size_t max_entries, uint64_t seed) {
    std::vector<std::pair<size_t, size_t>> entries;
    for (size_t pi = 0; pi < params.size(); ++pi)
        for (size_t i = 0; i < params[pi].numel(); ++i) entries.emplace_back(pi, i);
    if (entries.size() > max_entries) {
        RandomStream rng(seed);
        auto perm = rng.permutation(entries.size());
        std::vector<std::pair<size_t, size_t>> picked;
        picked.reserve(max_entries);
        for (size_t i = 0; i < max_entries; ++i) picked.push_back(entries[perm[i]]);
        entries = std::move(picked);
    }
    return fd_check_impl(fn, params, h, entries);
}

}  // namespace annosim
