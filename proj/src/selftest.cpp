#include "annosim/selftest.hpp"

#include <algorithm>
#include <cmath>

#include "annosim/metrics.hpp"

namespace annosim {

namespace {

void perturb_all(const std::vector<std::pair<std::string, Tensor>>& named, RandomStream& rng,
                 double amount) {
    for (const auto& [name, t] : named) {
        Tensor tensor = t;
        for (auto& v : tensor.mutable_data()) v += rng.uniform(-amount, amount);
    }
}

CheckResult gradient_check_ordinal(uint64_t seed) {
    double worst = 0.0;
    for (uint64_t s = 0; s < 10; ++s) {
        auto model = make_icnf_model(3, {1, 5}, IcnfArch{{6}, 2, 8}, mix_seed(seed, s));
        auto named = icnf_named_parameters(model);
        RandomStream rng(mix_seed(seed, 100 + s));
        perturb_all(named, rng, 0.3);
        AnnotatedExample ex{"g", {0.2, -0.5, 0.8}, {2, 3, 4}, {}};
        auto fn = [&] { return icnf_loss(model, ex); };
        std::vector<Tensor> params;
        for (auto& [n, t] : named) params.push_back(t);
        worst = std::max(worst, finite_diff_check(fn, params, 1e-5));
    }
    return {"gradient ordinal loss", worst < 1e-4, worst, 1e-4};
}

CheckResult gradient_check_categorical(uint64_t seed) {
    double worst = 0.0;
    for (uint64_t s = 0; s < 10; ++s) {
        auto model = make_scnf_model(2, 3, ScnfArch{{6}, 2, 8, {6}}, mix_seed(seed, s));
        auto named = scnf_named_parameters(model);
        RandomStream rng(mix_seed(seed, 200 + s));
        perturb_all(named, rng, 0.3);
        AnnotatedExample ex{"g", {0.4, -0.1}, {0, 2}, {}};
        const size_t q = 3;
        std::vector<double> noise(2 * q * 3);
        rng.fill_normal(noise);
        auto eps = Tensor::from_data({2 * q, 3}, noise);  // common random numbers
        auto fn = [&] { return scnf_loss_with_eps(model, ex, q, eps); };
        std::vector<Tensor> params;
        for (auto& [n, t] : named) params.push_back(t);
        worst = std::max(worst, finite_diff_check(fn, params, 1e-5, 20, mix_seed(seed, s)));
    }
    return {"gradient elbo (common random numbers)", worst < 1e-3, worst, 1e-3};
}

CheckResult invertibility_check(uint64_t seed) {
    double worst = 0.0;
    for (size_t dim : {size_t(1), size_t(3), size_t(5)}) {
        RandomStream rng(mix_seed(seed, 300 + dim));
        FlowStack stack(FlowConfig{dim, 3, 8}, rng);
        perturb_all(stack.named_parameters("f"), rng, 0.4);
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<double> zv(dim);
            for (auto& v : zv) v = 3.0 * rng.normal();
            auto z = Tensor::from_data({dim}, zv);
            auto [v, ld] = stack.forward(z);
            auto [z2, ldi] = stack.inverse(v);
            for (size_t j = 0; j < dim; ++j)
                worst = std::max(worst, std::abs(z2.at(j) - zv[j]));
        }
    }
    return {"flow round trip", worst < 1e-9, worst, 1e-9};
}

CheckResult jacobian_check(uint64_t seed) {
    double worst = 0.0;
    for (size_t dim : {size_t(1), size_t(3), size_t(5)}) {
        RandomStream rng(mix_seed(seed, 400 + dim));
        FlowStack stack(FlowConfig{dim, 3, 8}, rng);
        perturb_all(stack.named_parameters("f"), rng, 0.4);
        std::vector<double> zv(dim);
        for (auto& v : zv) v = rng.normal();
        auto [v0, ld] = stack.forward(Tensor::from_data({dim}, zv));
        const double h = 1e-5;
        // numerical Jacobian, log|det| via Gaussian elimination
        std::vector<std::vector<double>> jac(dim, std::vector<double>(dim));
        for (size_t j = 0; j < dim; ++j) {
            auto zp = zv, zm = zv;
            zp[j] += h;
            zm[j] -= h;
            auto [vp, l1] = stack.forward(Tensor::from_data({dim}, zp));
            auto [vm, l2] = stack.forward(Tensor::from_data({dim}, zm));
            for (size_t i = 0; i < dim; ++i) jac[i][j] = (vp.at(i) - vm.at(i)) / (2.0 * h);
        }
        double num = 0.0;
        for (size_t col = 0; col < dim; ++col) {
            size_t piv = col;
            for (size_t r = col + 1; r < dim; ++r)
                if (std::abs(jac[r][col]) > std::abs(jac[piv][col])) piv = r;
            std::swap(jac[piv], jac[col]);
            num += std::log(std::abs(jac[col][col]));
            for (size_t r = col + 1; r < dim; ++r) {
                double f = jac[r][col] / jac[col][col];
                for (size_t c = col; c < dim; ++c) jac[r][c] -= f * jac[col][c];
            }
        }
        worst = std::max(worst, std::abs(ld.value() - num) / std::max(1.0, std::abs(num)));
    }
    return {"analytic vs numerical log det", worst < 1e-5, worst, 1e-5};
}

CheckResult exact_pmf_mass_check(uint64_t seed) {
    auto model = make_icnf_model(2, {-9, 9}, IcnfArch{{6}, 3, 8}, mix_seed(seed, 7));
    RandomStream rng(mix_seed(seed, 500));
    perturb_all(icnf_named_parameters(model), rng, 0.2);
    auto x = Tensor::from_data({2}, {0.3, -0.4});
    double total = 0.0;
    for (int y = -9; y <= 9; ++y) total += icnf_pmf_exact(model, x, y, 512);
    double err = std::abs(total - 1.0);
    return {"exact interval pmf mass", err < 1e-6, err, 1e-6};
}

CheckResult elbo_bound_check(uint64_t seed) {
    double worst = -1e300;
    for (uint64_t s = 0; s < 10; ++s) {
        auto model = make_scnf_model(2, 3, ScnfArch{{6}, 2, 8, {6}}, mix_seed(seed, 600 + s));
        RandomStream rng(mix_seed(seed, 700 + s));
        perturb_all(scnf_named_parameters(model), rng, 0.5);
        auto x = Tensor::from_data({2}, {0.5, -0.2});
        auto elbo = scnf_elbo(model, x, {1.0, 0.0, 0.0}, 2000, rng);
        auto marginal = scnf_marginal_mc(model, x, 100000, rng);
        worst = std::max(worst, elbo.value() - std::log(marginal[0]));
    }
    return {"elbo below mc log marginal", worst < 0.02, worst, 0.02};
}

CheckResult metric_identity_check(uint64_t seed) {
    RandomStream rng(mix_seed(seed, 800));
    double worst = -1e300;
    for (int trial = 0; trial < 200; ++trial) {
        size_t n_items = 1 + rng.integer(6);
        std::vector<OrdinalEvalPair> pairs(n_items);
        for (auto& p : pairs) {
            size_t mh = 1 + rng.integer(5), ms = 1 + rng.integer(5);
            for (size_t i = 0; i < mh; ++i)
                p.human.push_back(1 + static_cast<int>(rng.integer(5)));
            for (size_t i = 0; i < ms; ++i)
                p.simulated.push_back(1 + static_cast<int>(rng.integer(5)));
        }
        auto sm = std_metrics(pairs);
        worst = std::max(worst, sm.err_avg_std - sm.mae_std);
        worst = std::max(worst, sm.mae_std - sm.rmse_std);
    }
    std::vector<std::vector<int>> perfect{{0, 0, 0}, {1, 1, 1}, {2, 2, 2}};
    worst = std::max(worst, std::abs(fleiss_kappa(perfect, 3) - 1.0));
    return {"metric identities", worst <= 1e-12, worst, 1e-12};
}

}  // namespace

CheckResult normalization_check(const std::function<double(double)>& log_pdf, double lo,
                                double hi, size_t n_points, double tol) {
    double h = (hi - lo) / static_cast<double>(n_points - 1);
    double mass = 0.0;
    for (size_t i = 0; i < n_points; ++i) {
        double density = std::exp(log_pdf(lo + h * static_cast<double>(i)));
        mass += (i == 0 || i + 1 == n_points) ? 0.5 * density : density;
    }
    mass *= h;
    double err = std::abs(mass - 1.0);
    return {"density normalization", err < tol, err, tol};
}

std::vector<CheckResult> run_selftest(uint64_t seed) {
    std::vector<CheckResult> results;
    results.push_back(gradient_check_ordinal(seed));
    results.push_back(gradient_check_categorical(seed));
    results.push_back(invertibility_check(seed));
    results.push_back(jacobian_check(seed));

    auto model = make_icnf_model(2, {-9, 9}, IcnfArch{{6}, 3, 8}, mix_seed(seed, 1));
    RandomStream rng(mix_seed(seed, 2));
    perturb_all(icnf_named_parameters(model), rng, 0.2);
    auto x = Tensor::from_data({2}, {0.1, 0.7});
    results.push_back(normalization_check(
        [&](double v) {
            return cnf_log_pdf(model.cnf, x, Tensor::from_data({1}, {v})).value();
        },
        -12.0, 12.0, 4000, 1e-3));

    results.push_back(exact_pmf_mass_check(seed));
    results.push_back(elbo_bound_check(seed));
    results.push_back(metric_identity_check(seed));
    return results;
}

}  // namespace annosim
