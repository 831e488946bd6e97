#pragma once

#include <string>
#include <utility>
#include <vector>

#include "annosim/rng.hpp"
#include "annosim/tensor.hpp"

namespace annosim {

enum class Activation { tanh, relu };

struct MlpConfig {
    size_t input_dim = 1;
    std::vector<size_t> hidden_dims;
    Activation activation = Activation::tanh;
    std::vector<std::pair<std::string, size_t>> heads;  // name -> output dim
};

/// Fully connected network with one or more named output heads. Hidden
/// weights use fan-in-scaled uniform init; head layers start at zero so a
/// fresh encoder emits exactly zeros.
class Mlp {
public:
    Mlp() = default;
    Mlp(MlpConfig cfg, RandomStream& rng);

    /// x is [input_dim] or a batch [B, input_dim]; returns one tensor per
    /// configured head, in declaration order.
    std::vector<Tensor> forward(const Tensor& x) const;

    const MlpConfig& config() const { return cfg_; }
    std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const;

private:
    MlpConfig cfg_;
    std::vector<Tensor> weights_, biases_;
    std::vector<Tensor> head_weights_, head_biases_;
};

/// Diagonal Gaussian as (mu, log variance); log_var is clamped to [-10, 10]
/// at construction so sigma stays in [e^-5, e^5].
struct GaussianParams {
    Tensor mu;
    Tensor log_var;

    Tensor sigma() const { return exp(mul_const(log_var, 0.5)); }
    size_t dim() const { return mu.shape().back(); }
};

/// Conditional prior head: x -> N(mu(x), diag(sigma^2(x))).
GaussianParams prior_forward(const Mlp& encoder, const Tensor& x);

/// Variational posterior head over a simplex label (hard one-hot or soft);
/// rejects labels off the simplex beyond 1e-9.
GaussianParams posterior_forward(const Mlp& encoder, const Tensor& label);

/// Sum over dims of the factorized Gaussian log density. Returns a scalar
/// for v of shape [d], a [B] tensor for batched v; params broadcast across
/// rows when given as [d].
Tensor gaussian_log_prob(const Tensor& v, const GaussianParams& p);

/// v = mu + sigma * eps, differentiable w.r.t. mu and log_var.
Tensor reparam_sample(const GaussianParams& p, const Tensor& eps);

}  // namespace annosim
