#include "annosim/flow.hpp"

#include <algorithm>
#include <cmath>

#include "annosim/common.hpp"

namespace annosim {

namespace {

double softplus_inv(double y) {
    // inverse of log(1 + e^x); y must be positive
    return y + std::log1p(-std::exp(-y));
}

}  // namespace

CouplingLayer::CouplingLayer(size_t dim, size_t hidden, bool even, double s_max, RandomStream& rng)
    : s_max_(s_max) {
    if (dim < 2) throw std::invalid_argument("CouplingLayer requires dim >= 2");
    std::vector<double> m(dim);
    for (size_t j = 0; j < dim; ++j) m[j] = (j % 2 == 0) == even ? 1.0 : 0.0;
    std::vector<double> im(dim);
    for (size_t j = 0; j < dim; ++j) im[j] = 1.0 - m[j];
    mask_ = Tensor::from_data({dim}, std::move(m));
    inv_mask_ = Tensor::from_data({dim}, std::move(im));
    MlpConfig net_cfg{dim, {hidden}, Activation::tanh, {{"out", dim}}};
    scale_net_ = Mlp(net_cfg, rng);
    shift_net_ = Mlp(net_cfg, rng);
}

std::pair<Tensor, Tensor> CouplingLayer::forward(const Tensor& z) const {
    auto zm = mul(z, mask_);
    auto s = mul_const(tanh(scale_net_.forward(zm)[0]), s_max_);
    auto t = shift_net_.forward(zm)[0];
    auto v = add(zm, mul(inv_mask_, add(mul(z, exp(s)), t)));
    auto log_det = sum_last(mul(s, inv_mask_));
    return {v, log_det};
}

std::pair<Tensor, Tensor> CouplingLayer::inverse(const Tensor& v) const {
    auto vm = mul(v, mask_);
    auto s = mul_const(tanh(scale_net_.forward(vm)[0]), s_max_);
    auto t = shift_net_.forward(vm)[0];
    auto z = add(vm, mul(inv_mask_, mul(sub(v, t), exp(neg(s)))));
    auto log_det_inv = neg(sum_last(mul(s, inv_mask_)));
    return {z, log_det_inv};
}

std::vector<std::pair<std::string, Tensor>> CouplingLayer::named_parameters(
    const std::string& prefix) const {
    auto out = scale_net_.named_parameters(prefix + ".scale_net");
    auto shift = shift_net_.named_parameters(prefix + ".shift_net");
    out.insert(out.end(), shift.begin(), shift.end());
    return out;
}

ScalarMonotoneBlock::ScalarMonotoneBlock(RandomStream& rng) {
    a_raw_ = Tensor::scalar(softplus_inv(1.0 - kMonoEps), true);  // a starts at 1
    b_ = Tensor::scalar(0.0, true);
    c_ = Tensor::scalar(0.0, true);
    d_ = Tensor::scalar(rng.uniform(0.5, 1.5), true);
    e_ = Tensor::scalar(rng.uniform(-0.5, 0.5), true);
}

void ScalarMonotoneBlock::set_affine(double a, double b) {
    if (a <= kMonoEps) throw std::invalid_argument("set_affine: a must exceed the monotone floor");
    a_raw_.mutable_data()[0] = softplus_inv(a - kMonoEps);
    b_.mutable_data()[0] = b;
    c_.mutable_data()[0] = 0.0;
}

Tensor ScalarMonotoneBlock::scale() const {
    return add_const(add(softplus(a_raw_), abs(mul(c_, d_))), kMonoEps);
}

std::pair<Tensor, Tensor> ScalarMonotoneBlock::forward(const Tensor& z) const {
    auto a = scale();
    auto t = tanh(add(mul(d_, z), e_));
    auto v = add(add(mul(a, z), b_), mul(c_, t));
    auto one_minus_t2 = add_const(neg(mul(t, t)), 1.0);
    auto deriv = add(a, mul(mul(c_, d_), one_minus_t2));
    auto log_det = sum_last(log(deriv));
    return {v, log_det};
}

namespace {

struct ScalarBlockVals {
    double a, b, c, d, e;
};

double block_eval(const ScalarBlockVals& p, double z) {
    return p.a * z + p.b + p.c * std::tanh(p.d * z + p.e);
}

double block_deriv(const ScalarBlockVals& p, double z) {
    double t = std::tanh(p.d * z + p.e);
    return p.a + p.c * p.d * (1.0 - t * t);
}

// Safeguarded Newton: bisection fallback inside a bracket, tolerance 1e-12
// (relative to |v|), bracket limited to [-1e6, 1e6], at most 200 iterations.
double solve_scalar(const ScalarBlockVals& p, double v) {
    constexpr double kBound = 1e6;
    constexpr int kMaxIter = 200;
    double tol = 1e-12 * std::max(1.0, std::abs(v));
    double z = (v - p.b) / p.a;
    z = std::clamp(z, -kBound, kBound);

    // expand a bracket [lo, hi] with f(lo) <= v <= f(hi); f is increasing
    double lo = z, hi = z;
    double step = 1.0 + 2.0 * std::abs(p.c) / p.a;
    for (int i = 0; i < 80 && block_eval(p, lo) > v; ++i) {
        lo -= step;
        step *= 2.0;
        if (lo < -kBound) {
            lo = -kBound;
            break;
        }
    }
    step = 1.0 + 2.0 * std::abs(p.c) / p.a;
    for (int i = 0; i < 80 && block_eval(p, hi) < v; ++i) {
        hi += step;
        step *= 2.0;
        if (hi > kBound) {
            hi = kBound;
            break;
        }
    }
    if (block_eval(p, lo) > v + tol || block_eval(p, hi) < v - tol)
        throw NumericError("scalar flow inverse: target outside bracket [-1e6, 1e6]");

    z = std::clamp(z, lo, hi);
    for (int it = 0; it < kMaxIter; ++it) {
        double f = block_eval(p, z) - v;
        if (std::abs(f) <= tol) return z;
        if (f < 0.0)
            lo = z;
        else
            hi = z;
        double zn = z - f / block_deriv(p, z);
        if (!(zn > lo && zn < hi)) zn = 0.5 * (lo + hi);
        z = zn;
    }
    throw NumericError("scalar flow inverse: Newton failed to converge in 200 iterations");
}

}  // namespace

std::pair<Tensor, Tensor> ScalarMonotoneBlock::inverse(const Tensor& v) const {
    auto a = scale();
    ScalarBlockVals vals{a.at(0), b_.at(0), c_.at(0), d_.at(0), e_.at(0)};
    std::vector<double> zd(v.numel());
    auto vd = v.data();
    for (size_t i = 0; i < zd.size(); ++i) zd[i] = solve_scalar(vals, vd[i]);

    // Implicit differentiation of f(z) = v: dz/dv = 1/f'(z) and
    // dz/dp = -(df/dp)(z) / f'(z) for each block parameter.
    auto z = make_op(
        v.shape(), std::move(zd), {v, a, b_, c_, d_, e_},
        [vals](TensorNode& self) {
            auto& pv = *self.parents[0];
            auto& pa = *self.parents[1];
            auto& pb = *self.parents[2];
            auto& pc = *self.parents[3];
            auto& pd = *self.parents[4];
            auto& pe = *self.parents[5];
            for (size_t i = 0; i < self.numel(); ++i) {
                double g = self.grad[i];
                if (g == 0.0) continue;
                double zi = self.data[i];
                double t = std::tanh(vals.d * zi + vals.e);
                double sech2 = 1.0 - t * t;
                double fz = vals.a + vals.c * vals.d * sech2;
                if (pv.requires_grad) pv.grad[i] += g / fz;
                if (pa.requires_grad) pa.grad[0] -= g * zi / fz;
                if (pb.requires_grad) pb.grad[0] -= g / fz;
                if (pc.requires_grad) pc.grad[0] -= g * t / fz;
                if (pd.requires_grad) pd.grad[0] -= g * vals.c * zi * sech2 / fz;
                if (pe.requires_grad) pe.grad[0] -= g * vals.c * sech2 / fz;
            }
        },
        "scalar_flow_inverse");

    auto t = tanh(add(mul(d_, z), e_));
    auto one_minus_t2 = add_const(neg(mul(t, t)), 1.0);
    auto deriv = add(a, mul(mul(c_, d_), one_minus_t2));
    auto log_det_inv = neg(sum_last(log(deriv)));
    return {z, log_det_inv};
}

std::vector<std::pair<std::string, Tensor>> ScalarMonotoneBlock::named_parameters(
    const std::string& prefix) const {
    return {{prefix + ".a_raw", a_raw_},
            {prefix + ".b", b_},
            {prefix + ".c", c_},
            {prefix + ".d", d_},
            {prefix + ".e", e_}};
}

FlowStack::FlowStack(const FlowConfig& cfg, RandomStream& rng) : cfg_(cfg) {
    if (cfg.dim == 0) throw std::invalid_argument("FlowStack: dim must be >= 1");
    if (cfg.n_layers == 0) throw std::invalid_argument("FlowStack: need at least one layer");
    if (cfg.dim == 1) {
        for (size_t l = 0; l < cfg.n_layers; ++l) scalar_.emplace_back(rng);
    } else {
        for (size_t l = 0; l < cfg.n_layers; ++l)
            coupling_.emplace_back(cfg.dim, cfg.hidden, l % 2 == 0, cfg.s_max, rng);
    }
}

size_t FlowStack::n_layers() const { return cfg_.dim == 1 ? scalar_.size() : coupling_.size(); }

std::pair<Tensor, Tensor> FlowStack::forward(const Tensor& z) const {
    Tensor cur = z;
    Tensor log_det;
    auto apply = [&](const auto& layer) {
        auto [v, ld] = layer.forward(cur);
        cur = v;
        log_det = log_det.defined() ? add(log_det, ld) : ld;
    };
    if (cfg_.dim == 1)
        for (const auto& l : scalar_) apply(l);
    else
        for (const auto& l : coupling_) apply(l);
    return {cur, log_det};
}

std::pair<Tensor, Tensor> FlowStack::inverse(const Tensor& v) const {
    Tensor cur = v;
    Tensor log_det;
    auto apply = [&](const auto& layer) {
        auto [z, ld] = layer.inverse(cur);
        cur = z;
        log_det = log_det.defined() ? add(log_det, ld) : ld;
    };
    if (cfg_.dim == 1)
        for (auto it = scalar_.rbegin(); it != scalar_.rend(); ++it) apply(*it);
    else
        for (auto it = coupling_.rbegin(); it != coupling_.rend(); ++it) apply(*it);
    return {cur, log_det};
}

std::vector<std::pair<std::string, Tensor>> FlowStack::named_parameters(
    const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor>> out;
    size_t n = n_layers();
    for (size_t l = 0; l < n; ++l) {
        auto layer_params =
            cfg_.dim == 1 ? scalar_[l].named_parameters(prefix + ".layer" + std::to_string(l))
                          : coupling_[l].named_parameters(prefix + ".layer" + std::to_string(l));
        out.insert(out.end(), layer_params.begin(), layer_params.end());
    }
    return out;
}

Tensor cnf_log_pdf(const CnfModel& model, const Tensor& x, const Tensor& v) {
    if (v.shape().back() != model.flow.dim())
        throw std::invalid_argument("cnf_log_pdf: v dim does not match flow dim");
    auto params = prior_forward(model.prior_net, x);
    auto [z, log_det_inv] = model.flow.inverse(v);
    return add(gaussian_log_prob(z, params), log_det_inv);
}

Tensor cnf_sample(const CnfModel& model, const Tensor& x, size_t n, double temperature,
                  RandomStream& rng) {
    if (n == 0) throw std::invalid_argument("cnf_sample: n must be >= 1");
    if (!(temperature > 0.0)) throw std::invalid_argument("cnf_sample: temperature must be > 0");
    if (x.rank() != 1) throw std::invalid_argument("cnf_sample: x must be a single feature vector");
    NoGradGuard ng;
    size_t d = model.flow.dim();
    auto params = prior_forward(model.prior_net, x);
    std::vector<double> mu(params.mu.data().begin(), params.mu.data().end());
    std::vector<double> sigma(d);
    for (size_t j = 0; j < d; ++j) sigma[j] = std::exp(0.5 * params.log_var.at(j)) * temperature;

    std::vector<double> out(n * d);
    constexpr size_t kChunk = 4096;
    for (size_t row = 0; row < n; row += kChunk) {
        size_t rows = std::min(kChunk, n - row);
        std::vector<double> zs(rows * d);
        for (size_t r = 0; r < rows; ++r)
            for (size_t j = 0; j < d; ++j) zs[r * d + j] = mu[j] + sigma[j] * rng.normal();
        auto [v, ld] = model.flow.forward(Tensor::from_data({rows, d}, std::move(zs)));
        std::copy(v.data().begin(), v.data().end(), out.begin() + row * d);
    }
    return Tensor::from_data({n, d}, std::move(out));
}

std::vector<std::pair<std::string, Tensor>> cnf_named_parameters(const CnfModel& model) {
    auto out = model.prior_net.named_parameters("prior");
    auto fp = model.flow.named_parameters("flow");
    out.insert(out.end(), fp.begin(), fp.end());
    return out;
}

}  // namespace annosim
