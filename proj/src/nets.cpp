#include "annosim/nets.hpp"

#include <cmath>
#include <limits>

#include "annosim/common.hpp"

namespace annosim {

namespace {

constexpr double kLogVarLo = -10.0;
constexpr double kLogVarHi = 10.0;
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

Tensor fan_in_uniform(size_t in, size_t out, RandomStream& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::vector<double> w(in * out);
    for (auto& v : w) v = rng.uniform(-bound, bound);
    return Tensor::from_data({in, out}, std::move(w), true);
}

Tensor activate(const Tensor& h, Activation act) {
    if (act == Activation::tanh) return tanh(h);
    return clamp(h, 0.0, std::numeric_limits<double>::max());  // relu
}

}  // namespace

Mlp::Mlp(MlpConfig cfg, RandomStream& rng) : cfg_(std::move(cfg)) {
    if (cfg_.input_dim == 0) throw std::invalid_argument("Mlp: input_dim must be >= 1");
    if (cfg_.heads.empty()) throw std::invalid_argument("Mlp: at least one head required");
    for (size_t d : cfg_.hidden_dims)
        if (d == 0) throw std::invalid_argument("Mlp: hidden dims must be >= 1");
    size_t in = cfg_.input_dim;
    for (size_t d : cfg_.hidden_dims) {
        weights_.push_back(fan_in_uniform(in, d, rng));
        biases_.push_back(Tensor::zeros({d}, true));
        in = d;
    }
    for (const auto& [name, dim] : cfg_.heads) {
        if (dim == 0) throw std::invalid_argument("Mlp: head '" + name + "' has zero dim");
        head_weights_.push_back(Tensor::zeros({in, dim}, true));
        head_biases_.push_back(Tensor::zeros({dim}, true));
    }
}

std::vector<Tensor> Mlp::forward(const Tensor& x) const {
    if (x.rank() == 0 || x.rank() > 2 || x.shape().back() != cfg_.input_dim) {
        throw std::invalid_argument("Mlp: input dim mismatch, expected " +
                                    std::to_string(cfg_.input_dim));
    }
    Tensor h = x;
    for (size_t l = 0; l < weights_.size(); ++l)
        h = activate(add(matmul(h, weights_[l]), biases_[l]), cfg_.activation);
    std::vector<Tensor> outs;
    outs.reserve(head_weights_.size());
    for (size_t i = 0; i < head_weights_.size(); ++i)
        outs.push_back(add(matmul(h, head_weights_[i]), head_biases_[i]));
    return outs;
}

std::vector<std::pair<std::string, Tensor>> Mlp::named_parameters(
    const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (size_t l = 0; l < weights_.size(); ++l) {
        out.emplace_back(prefix + ".hidden" + std::to_string(l) + ".W", weights_[l]);
        out.emplace_back(prefix + ".hidden" + std::to_string(l) + ".b", biases_[l]);
    }
    for (size_t i = 0; i < head_weights_.size(); ++i) {
        out.emplace_back(prefix + ".head_" + cfg_.heads[i].first + ".W", head_weights_[i]);
        out.emplace_back(prefix + ".head_" + cfg_.heads[i].first + ".b", head_biases_[i]);
    }
    return out;
}

namespace {

GaussianParams gaussian_heads(const Mlp& encoder, const Tensor& input) {
    auto outs = encoder.forward(input);
    if (outs.size() != 2)
        throw std::invalid_argument("gaussian encoder must have exactly two heads (mu, log_var)");
    return {outs[0], clamp(outs[1], kLogVarLo, kLogVarHi)};
}

}  // namespace

GaussianParams prior_forward(const Mlp& encoder, const Tensor& x) {
    return gaussian_heads(encoder, x);
}

GaussianParams posterior_forward(const Mlp& encoder, const Tensor& label) {
    size_t k = label.shape().back();
    size_t rows = label.numel() / k;
    auto ld = label.data();
    for (size_t r = 0; r < rows; ++r) {
        double sum = 0.0;
        for (size_t j = 0; j < k; ++j) {
            double v = ld[r * k + j];
            if (v < 0.0)
                throw DataError("posterior_forward: negative label entry at row " +
                                std::to_string(r));
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw DataError("posterior_forward: label row " + std::to_string(r) + " sums to " +
                            std::to_string(sum) + ", not a simplex");
    }
    return gaussian_heads(encoder, label);
}

Tensor gaussian_log_prob(const Tensor& v, const GaussianParams& p) {
    auto diff = sub(v, p.mu);
    auto quad = mul(mul(diff, diff), exp(neg(p.log_var)));
    auto terms = mul_const(add(add_const(p.log_var, kLog2Pi), quad), -0.5);
    return sum_last(terms);
}

Tensor reparam_sample(const GaussianParams& p, const Tensor& eps) {
    return add(p.mu, mul(p.sigma(), eps));
}

}  // namespace annosim
