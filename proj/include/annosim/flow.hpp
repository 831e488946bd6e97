#pragma once

#include <string>
#include <utility>
#include <vector>

#include "annosim/nets.hpp"
#include "annosim/rng.hpp"
#include "annosim/tensor.hpp"

namespace annosim {

struct FlowConfig {
    size_t dim = 1;
    size_t n_layers = 3;
    size_t hidden = 64;
    double s_max = 3.0;  // scale-net output bound: s = s_max * tanh(raw)
};

/// Affine coupling layer with multiplicative binary masks. The conditioning
/// half passes through, the other half is scaled and shifted by nets of the
/// conditioning half; both nets start at zero so a fresh layer is the
/// identity. Forward and inverse are closed form.
class CouplingLayer {
public:
    CouplingLayer(size_t dim, size_t hidden, bool even, double s_max, RandomStream& rng);

    /// z -> (v, per-row log|det dv/dz|).
    std::pair<Tensor, Tensor> forward(const Tensor& z) const;
    /// v -> (z, per-row log|det dz/dv|).
    std::pair<Tensor, Tensor> inverse(const Tensor& v) const;

    std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const;

private:
    Tensor mask_, inv_mask_;
    Mlp scale_net_, shift_net_;
    double s_max_;
};

/// Strictly monotone scalar bijection v = a*z + b + c*tanh(d*z + e) for the
/// one-dimensional flow, where coupling is undefined. The scale is
/// parameterized as a = softplus(a_raw) + |c*d| + eps so the derivative
/// a + c*d*(1 - tanh^2) stays above eps everywhere. The inverse is a
/// safeguarded Newton solve differentiated implicitly.
class ScalarMonotoneBlock {
public:
    explicit ScalarMonotoneBlock(RandomStream& rng);

    /// Pin the block to the affine map v = a*z + b (c = 0); test hook.
    void set_affine(double a, double b);

    Tensor scale() const;  // the effective a

    std::pair<Tensor, Tensor> forward(const Tensor& z) const;
    std::pair<Tensor, Tensor> inverse(const Tensor& v) const;

    std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const;

    static constexpr double kMonoEps = 1e-3;

private:
    Tensor a_raw_, b_, c_, d_, e_;
};

/// The invertible transform f: an ordered stack of coupling layers (dim >= 2)
/// or scalar monotone blocks (dim == 1).
class FlowStack {
public:
    FlowStack() = default;
    FlowStack(const FlowConfig& cfg, RandomStream& rng);

    size_t dim() const { return cfg_.dim; }
    const FlowConfig& config() const { return cfg_; }
    size_t n_layers() const;

    std::pair<Tensor, Tensor> forward(const Tensor& z) const;
    std::pair<Tensor, Tensor> inverse(const Tensor& v) const;

    std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const;

    ScalarMonotoneBlock& scalar_block(size_t i) { return scalar_[i]; }

private:
    FlowConfig cfg_;
    std::vector<CouplingLayer> coupling_;
    std::vector<ScalarMonotoneBlock> scalar_;
};

/// Conditional normalizing flow: Gaussian prior conditioned on the input
/// pushed through the input-independent invertible stack.
struct CnfModel {
    Mlp prior_net;
    FlowStack flow;
};

/// log p(v|x) by change of variables; v is [d] or a batch [B, d].
Tensor cnf_log_pdf(const CnfModel& model, const Tensor& x, const Tensor& v);

/// Draw n samples v = f(mu(x) + T * sigma(x) * eps); returns [n, d] with no
/// graph attached. Each caller owns its RandomStream.
Tensor cnf_sample(const CnfModel& model, const Tensor& x, size_t n, double temperature,
                  RandomStream& rng);

std::vector<std::pair<std::string, Tensor>> cnf_named_parameters(const CnfModel& model);

}  // namespace annosim
