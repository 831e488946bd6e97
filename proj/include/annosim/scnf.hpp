#pragma once

#include <vector>

#include "annosim/data.hpp"
#include "annosim/flow.hpp"

namespace annosim {

/// Conditional softmax flow: the base CNF composed with softmax, so every
/// sample is a full categorical distribution. Trained by a variational ELBO
/// with a mean-field Gaussian posterior over the pre-softmax variable.
struct ScnfModel {
    CnfModel cnf;
    Mlp posterior_net;  // label -> q(v | label)
    size_t num_categories = 0;
};

struct ScnfArch {
    std::vector<size_t> prior_hidden{128, 128};
    size_t flow_layers = 3;
    size_t flow_hidden = 64;
    std::vector<size_t> posterior_hidden{64};
};

ScnfModel make_scnf_model(size_t feature_dim, size_t num_categories, const ScnfArch& arch,
                          uint64_t seed);

/// softmax(v)_k computed log-domain stably; strictly inside (0, 1).
double softmax_prob(const std::vector<double>& v, size_t k);

/// ELBO estimate from given posterior noise (eps is [Q, K]); exposing the
/// noise keeps gradient checks usable with common random numbers.
Tensor scnf_elbo(const ScnfModel& model, const Tensor& x, const std::vector<double>& label,
                 const Tensor& eps);
Tensor scnf_elbo(const ScnfModel& model, const Tensor& x, const std::vector<double>& label,
                 size_t q_samples, RandomStream& rng);

/// Average negative ELBO over one example's labels. All M*Q posterior draws
/// go through the flow as one batch.
Tensor scnf_loss(const ScnfModel& model, const AnnotatedExample& example, size_t q_samples,
                 RandomStream& rng);
Tensor scnf_loss_with_eps(const ScnfModel& model, const AnnotatedExample& example,
                          size_t q_samples, const Tensor& eps);

/// Monte-Carlo marginal P(c = k | x): the mean of softmax over CNF samples.
std::vector<double> scnf_marginal_mc(const ScnfModel& model, const Tensor& x, size_t q_samples,
                                     RandomStream& rng);

struct SimulatedAnnotation {
    std::vector<double> probs;
    size_t hard_label = 0;  // argmax of probs
};

std::vector<SimulatedAnnotation> scnf_sample(const ScnfModel& model, const Tensor& x,
                                             size_t m_star, double temperature, RandomStream& rng);

std::vector<std::pair<std::string, Tensor>> scnf_named_parameters(const ScnfModel& model);

}  // namespace annosim
