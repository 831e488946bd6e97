#include "annosim/icnf.hpp"

#include <cmath>

#include "annosim/common.hpp"

namespace annosim {

IcnfModel make_icnf_model(size_t feature_dim, OrdinalScale scale, const IcnfArch& arch,
                          uint64_t seed) {
    if (scale.min_rating >= scale.max_rating)
        throw std::invalid_argument("make_icnf_model: scale must satisfy min < max");
    RandomStream rng(mix_seed(seed, 3));
    MlpConfig prior_cfg{feature_dim, arch.prior_hidden, Activation::tanh,
                        {{"mu", 1}, {"log_var", 1}}};
    Mlp prior(prior_cfg, rng);
    FlowStack flow(FlowConfig{1, arch.flow_layers, arch.flow_hidden}, rng);
    return {{std::move(prior), std::move(flow)}, scale};
}

Tensor icnf_log_pmf_midpoint(const IcnfModel& model, const Tensor& x, int y, bool enforce) {
    if (enforce && !model.scale.contains(y))
        throw DataError("icnf_log_pmf_midpoint: rating " + std::to_string(y) +
                        " outside scale [" + std::to_string(model.scale.min_rating) + ", " +
                        std::to_string(model.scale.max_rating) + "]");
    return cnf_log_pdf(model.cnf, x, Tensor::from_data({1}, {static_cast<double>(y)}));
}

double icnf_pmf_exact(const IcnfModel& model, const Tensor& x, int y, size_t n_grid) {
    if (n_grid < 16) throw std::invalid_argument("icnf_pmf_exact: n_grid must be >= 16");
    NoGradGuard ng;
    double lo = y - 0.5, hi = y + 0.5;
    double h = (hi - lo) / static_cast<double>(n_grid - 1);
    std::vector<double> grid(n_grid);
    for (size_t i = 0; i < n_grid; ++i) grid[i] = lo + h * static_cast<double>(i);
    auto lp = cnf_log_pdf(model.cnf, x, Tensor::from_data({n_grid, 1}, std::move(grid)));
    double mass = 0.0;
    for (size_t i = 0; i < n_grid; ++i) {
        double density = std::exp(lp.at(i));
        if (!std::isfinite(density))
            throw NumericError("icnf_pmf_exact: non-finite density on the grid");
        mass += (i == 0 || i + 1 == n_grid) ? 0.5 * density : density;
    }
    return mass * h;
}

Tensor icnf_loss(const IcnfModel& model, const AnnotatedExample& example) {
    if (example.hard_annotations.empty())
        throw DataError("icnf_loss: example '" + example.id + "' has no annotations");
    std::vector<double> vals;
    vals.reserve(example.hard_annotations.size());
    for (int y : example.hard_annotations) {
        if (!model.scale.contains(y))
            throw DataError("icnf_loss: rating " + std::to_string(y) + " in example '" +
                            example.id + "' outside scale");
        vals.push_back(static_cast<double>(y));
    }
    size_t m = vals.size();
    auto x = Tensor::from_data({example.features.size()}, example.features);
    auto v = Tensor::from_data({m, 1}, std::move(vals));
    return neg(mean_all(cnf_log_pdf(model.cnf, x, v)));
}

int quantize_rating(double v) {
    // (y - 1/2, y + 1/2] intervals: ties at .5 round down
    return static_cast<int>(std::ceil(v - 0.5));
}

std::vector<int> icnf_sample(const IcnfModel& model, const Tensor& x, size_t m_star,
                             double temperature, RandomStream& rng, bool clamp) {
    if (m_star == 0) throw std::invalid_argument("icnf_sample: m_star must be >= 1");
    auto v = cnf_sample(model.cnf, x, m_star, temperature, rng);
    std::vector<int> out(m_star);
    for (size_t i = 0; i < m_star; ++i) {
        int y = quantize_rating(v.at(i));
        out[i] = clamp ? std::min(std::max(y, model.scale.min_rating), model.scale.max_rating) : y;
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> icnf_named_parameters(const IcnfModel& model) {
    return cnf_named_parameters(model.cnf);
}

}  // namespace annosim
