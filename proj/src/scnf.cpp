#include "annosim/scnf.hpp"

#include <algorithm>
#include <cmath>

#include "annosim/common.hpp"

namespace annosim {

ScnfModel make_scnf_model(size_t feature_dim, size_t num_categories, const ScnfArch& arch,
                          uint64_t seed) {
    if (num_categories < 2) throw std::invalid_argument("make_scnf_model: need k >= 2");
    RandomStream rng(mix_seed(seed, 5));
    MlpConfig prior_cfg{feature_dim, arch.prior_hidden, Activation::tanh,
                        {{"mu", num_categories}, {"log_var", num_categories}}};
    Mlp prior(prior_cfg, rng);
    FlowStack flow(FlowConfig{num_categories, arch.flow_layers, arch.flow_hidden}, rng);
    MlpConfig post_cfg{num_categories, arch.posterior_hidden, Activation::tanh,
                       {{"mu", num_categories}, {"log_var", num_categories}}};
    Mlp posterior(post_cfg, rng);
    return {{std::move(prior), std::move(flow)}, std::move(posterior), num_categories};
}

double softmax_prob(const std::vector<double>& v, size_t k) {
    if (k >= v.size()) throw std::invalid_argument("softmax_prob: index out of range");
    double mx = *std::max_element(v.begin(), v.end());
    double lse = 0.0;
    for (double x : v) lse += std::exp(x - mx);
    return std::exp(v[k] - mx - std::log(lse));
}

namespace {

void check_label(const std::vector<double>& label, size_t k) {
    if (label.size() != k) throw DataError("label arity does not match the model");
    double sum = 0.0;
    for (double p : label) {
        if (p < 0.0) throw DataError("label has a negative entry");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw DataError("label is off the simplex");
}

// Shared ELBO core over a stacked batch: labels_rep and eps are [M*Q, K];
// posterior params rows align with labels_rep. Returns the mean over rows of
// [ sum_k eta_k logsoftmax(v)_k + log p(v|x) - log q(v|label) ].
Tensor elbo_rows_mean(const ScnfModel& model, const Tensor& x, const Tensor& labels_rep,
                      const GaussianParams& q_rep, const Tensor& eps) {
    auto v = reparam_sample(q_rep, eps);
    auto label_term = sum_last(mul(labels_rep, log_softmax(v)));
    auto prior_term = cnf_log_pdf(model.cnf, x, v);
    auto q_term = gaussian_log_prob(v, q_rep);
    return mean_all(add(sub(label_term, q_term), prior_term));
}

}  // namespace

Tensor scnf_elbo(const ScnfModel& model, const Tensor& x, const std::vector<double>& label,
                 const Tensor& eps) {
    check_label(label, model.num_categories);
    size_t k = model.num_categories;
    if (eps.rank() != 2 || eps.shape()[1] != k)
        throw std::invalid_argument("scnf_elbo: eps must be [Q, K]");
    size_t q = eps.shape()[0];
    auto label_t = Tensor::from_data({k}, label);
    auto q_params = posterior_forward(model.posterior_net, label_t);
    GaussianParams q_rep{repeat_rows(stack_rows({q_params.mu}), q),
                         repeat_rows(stack_rows({q_params.log_var}), q)};
    auto labels_rep = repeat_rows(stack_rows({label_t}), q);
    return elbo_rows_mean(model, x, labels_rep, q_rep, eps);
}

Tensor scnf_elbo(const ScnfModel& model, const Tensor& x, const std::vector<double>& label,
                 size_t q_samples, RandomStream& rng) {
    if (q_samples == 0) throw std::invalid_argument("scnf_elbo: q_samples must be >= 1");
    std::vector<double> noise(q_samples * model.num_categories);
    rng.fill_normal(noise);
    return scnf_elbo(model, x, label, Tensor::from_data({q_samples, model.num_categories}, noise));
}

Tensor scnf_loss_with_eps(const ScnfModel& model, const AnnotatedExample& example,
                          size_t q_samples, const Tensor& eps) {
    size_t k = model.num_categories;
    std::vector<std::vector<double>> labels;
    for (int c : example.hard_annotations) {
        if (c < 0 || static_cast<size_t>(c) >= k)
            throw DataError("scnf_loss: category " + std::to_string(c) + " in example '" +
                            example.id + "' out of range");
        std::vector<double> one_hot(k, 0.0);
        one_hot[static_cast<size_t>(c)] = 1.0;
        labels.push_back(std::move(one_hot));
    }
    for (const auto& soft : example.soft_annotations) {
        check_label(soft, k);
        labels.push_back(soft);
    }
    if (labels.empty())
        throw DataError("scnf_loss: example '" + example.id + "' has no annotations");
    size_t m = labels.size();
    if (eps.rank() != 2 || eps.shape()[0] != m * q_samples || eps.shape()[1] != k)
        throw std::invalid_argument("scnf_loss: eps must be [M*Q, K]");

    std::vector<double> flat;
    flat.reserve(m * k);
    for (const auto& l : labels) flat.insert(flat.end(), l.begin(), l.end());
    auto labels_t = Tensor::from_data({m, k}, std::move(flat));
    auto q_params = posterior_forward(model.posterior_net, labels_t);
    GaussianParams q_rep{repeat_rows(q_params.mu, q_samples),
                         repeat_rows(q_params.log_var, q_samples)};
    auto labels_rep = repeat_rows(labels_t, q_samples);
    auto x = Tensor::from_data({example.features.size()}, example.features);
    return neg(elbo_rows_mean(model, x, labels_rep, q_rep, eps));
}

Tensor scnf_loss(const ScnfModel& model, const AnnotatedExample& example, size_t q_samples,
                 RandomStream& rng) {
    if (q_samples == 0) throw std::invalid_argument("scnf_loss: q_samples must be >= 1");
    size_t m = example.annotation_count();
    std::vector<double> noise(m * q_samples * model.num_categories);
    rng.fill_normal(noise);
    return scnf_loss_with_eps(
        model, example, q_samples,
        Tensor::from_data({m * q_samples, model.num_categories}, std::move(noise)));
}

std::vector<double> scnf_marginal_mc(const ScnfModel& model, const Tensor& x, size_t q_samples,
                                     RandomStream& rng) {
    if (q_samples == 0) throw std::invalid_argument("scnf_marginal_mc: q_samples must be >= 1");
    NoGradGuard ng;
    size_t k = model.num_categories;
    auto v = cnf_sample(model.cnf, x, q_samples, 1.0, rng);
    std::vector<double> mean(k, 0.0);
    std::vector<double> row(k);
    for (size_t j = 0; j < q_samples; ++j) {
        for (size_t c = 0; c < k; ++c) row[c] = v.at(j * k + c);
        double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (auto& rv : row) {
            rv = std::exp(rv - mx);
            sum += rv;
        }
        for (size_t c = 0; c < k; ++c) mean[c] += row[c] / sum;
    }
    for (auto& p : mean) p /= static_cast<double>(q_samples);
    return mean;
}

std::vector<SimulatedAnnotation> scnf_sample(const ScnfModel& model, const Tensor& x,
                                             size_t m_star, double temperature,
                                             RandomStream& rng) {
    if (m_star == 0) throw std::invalid_argument("scnf_sample: m_star must be >= 1");
    size_t k = model.num_categories;
    auto v = cnf_sample(model.cnf, x, m_star, temperature, rng);
    std::vector<SimulatedAnnotation> out(m_star);
    for (size_t j = 0; j < m_star; ++j) {
        std::vector<double> row(k);
        for (size_t c = 0; c < k; ++c) row[c] = v.at(j * k + c);
        double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (auto& rv : row) {
            rv = std::exp(rv - mx);
            sum += rv;
        }
        size_t argmax = 0;
        for (size_t c = 0; c < k; ++c) {
            row[c] /= sum;
            if (row[c] > row[argmax]) argmax = c;
        }
        out[j] = {std::move(row), argmax};
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> scnf_named_parameters(const ScnfModel& model) {
    auto out = cnf_named_parameters(model.cnf);
    auto post = model.posterior_net.named_parameters("posterior");
    out.insert(out.end(), post.begin(), post.end());
    return out;
}

}  // namespace annosim
