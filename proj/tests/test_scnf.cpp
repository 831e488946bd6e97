#include <cmath>

#include "annosim/common.hpp"
#include "annosim/scnf.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace annosim;

namespace {

ScnfModel small_model(size_t k, uint64_t seed, double perturb = 0.0) {
    auto model = make_scnf_model(2, k, ScnfArch{{8}, 3, 8, {8}}, seed);
    if (perturb > 0.0) {
        RandomStream rng(mix_seed(seed, 99));
        testutil::perturb_params(scnf_named_parameters(model), rng, perturb);
    }
    return model;
}

const Tensor kX = Tensor::from_data({2}, {0.6, -0.1});

}  // namespace

TEST_CASE("softmax likelihood reference values") {
    CHECK(softmax_prob({0, 0, 0, 0, 0}, 2) == doctest::Approx(0.2).epsilon(1e-12));
    std::vector<double> v{10.0, 0.0, 0.0};
    CHECK(softmax_prob(v, 0) == doctest::Approx(0.9999092).epsilon(1e-6));
    CHECK(softmax_prob(v, 1) == doctest::Approx(0.0000454).epsilon(1e-2));
    std::vector<double> shifted{10.0 + 3.7, 3.7, 3.7};
    for (size_t k = 0; k < 3; ++k)
        CHECK(std::abs(softmax_prob(v, k) - softmax_prob(shifted, k)) < 1e-12);
    CHECK_THROWS_AS(softmax_prob(v, 3), std::invalid_argument);
    for (size_t k = 0; k < 3; ++k) {
        CHECK(softmax_prob(v, k) > 0.0);
        CHECK(softmax_prob(v, k) < 1.0);
    }
}

TEST_CASE("elbo with matched densities reduces to the label term") {
    // fresh model: identity flow, prior = posterior = standard normal, so the
    // Gaussian terms cancel exactly at v = 0
    auto model = small_model(2, 1);
    auto elbo = scnf_elbo(model, kX, {0.5, 0.5}, Tensor::zeros({1, 2}));
    CHECK(elbo.value() == doctest::Approx(std::log(0.5)).epsilon(1e-9));
}

TEST_CASE("elbo stays below the Monte Carlo log marginal") {
    auto model = small_model(3, 0, 0.5);
    RandomStream rng(5);
    auto elbo = scnf_elbo(model, kX, {1.0, 0.0, 0.0}, 2000, rng);
    auto marginal = scnf_marginal_mc(model, kX, 100000, rng);
    CHECK(elbo.value() <= std::log(marginal[0]) + 0.02);
}

TEST_CASE("elbo is finite for hard labels on random models") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        auto model = small_model(3, seed, 0.8);
        RandomStream rng(seed + 50);
        for (size_t k = 0; k < 3; ++k) {
            std::vector<double> label(3, 0.0);
            label[k] = 1.0;
            CHECK(std::isfinite(scnf_elbo(model, kX, label, 8, rng).value()));
        }
    }
}

TEST_CASE("scnf_loss is the negative mean elbo and respects permutations") {
    auto model = small_model(3, 2, 0.4);
    const size_t q = 4, k = 3;

    AnnotatedExample single{"a", {0.6, -0.1}, {1}, {}};
    RandomStream rng(11);
    std::vector<double> noise(q * k);
    rng.fill_normal(noise);
    auto eps = Tensor::from_data({q, k}, noise);
    auto loss = scnf_loss_with_eps(model, single, q, eps);
    auto elbo = scnf_elbo(model, kX, {0.0, 1.0, 0.0}, eps);
    CHECK(loss.value() == doctest::Approx(-elbo.value()).epsilon(1e-12));

    AnnotatedExample two{"b", {0.6, -0.1}, {1, 2}, {}};
    AnnotatedExample swapped{"c", {0.6, -0.1}, {2, 1}, {}};
    std::vector<double> noise2(2 * q * k);
    RandomStream rng2(12);
    rng2.fill_normal(noise2);
    // swap the per-annotation noise blocks along with the annotations
    std::vector<double> noise2_swapped(noise2.begin() + q * k, noise2.end());
    noise2_swapped.insert(noise2_swapped.end(), noise2.begin(), noise2.begin() + q * k);
    auto l1 = scnf_loss_with_eps(model, two, q, Tensor::from_data({2 * q, k}, noise2));
    auto l2 = scnf_loss_with_eps(model, swapped, q, Tensor::from_data({2 * q, k}, noise2_swapped));
    CHECK(l1.value() == doctest::Approx(l2.value()).epsilon(1e-12));

    AnnotatedExample empty{"d", {0.6, -0.1}, {}, {}};
    RandomStream rng3(13);
    CHECK_THROWS_AS(scnf_loss(model, empty, q, rng3), DataError);
}

TEST_CASE("scnf_loss accepts soft labels") {
    auto model = small_model(3, 3, 0.3);
    AnnotatedExample soft{"a", {0.6, -0.1}, {0}, {{0.4, 0.4, 0.2}}};
    RandomStream rng(21);
    CHECK(std::isfinite(scnf_loss(model, soft, 4, rng).value()));
}

TEST_CASE("loss gradients pass finite differences with common random numbers") {
    auto model = small_model(3, 4, 0.4);
    auto named = scnf_named_parameters(model);
    AnnotatedExample ex{"a", {0.6, -0.1}, {0, 2}, {}};
    const size_t q = 3;
    std::vector<double> noise(2 * q * 3);
    RandomStream rng(9);
    rng.fill_normal(noise);
    auto eps = Tensor::from_data({2 * q, 3}, noise);
    auto fn = [&] { return scnf_loss_with_eps(model, ex, q, eps); };
    CHECK(finite_diff_check(fn, testutil::param_tensors(named), 1e-5, 60, 31) < 1e-3);
}

TEST_CASE("marginal of the fresh model is uniform") {
    auto model = small_model(2, 5);
    RandomStream rng(17);
    const size_t q = 10000;
    auto m = scnf_marginal_mc(model, kX, q, rng);
    CHECK(m[0] + m[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(m[0] - 0.5) < 3.0 / std::sqrt(4.0 * q));
}

TEST_CASE("degenerate prior pushes the marginal to the softmax point") {
    auto model = small_model(3, 6);
    for (auto& [name, t] : scnf_named_parameters(model)) {
        if (name == "prior.head_mu.b") {
            Tensor tt = t;
            tt.mutable_data()[0] = 10.0;
        }
        if (name == "prior.head_log_var.b") {
            Tensor tt = t;
            for (auto& v : tt.mutable_data()) v = -10.0;
        }
    }
    RandomStream rng(19);
    auto samples = scnf_sample(model, kX, 200, 1e-9, rng);
    for (const auto& s : samples) {
        CHECK(s.probs[0] == doctest::Approx(0.9999092).epsilon(1e-5));
        CHECK(s.hard_label == 0);
    }
}

TEST_CASE("samples are simplex points consistent with the marginal") {
    auto model = small_model(3, 7, 0.5);
    RandomStream rng(23);
    const size_t n = 20000;
    auto samples = scnf_sample(model, kX, n, 1.0, rng);
    std::vector<double> mean(3, 0.0);
    for (const auto& s : samples) {
        double sum = 0.0;
        for (double p : s.probs) sum += p;
        CHECK(std::abs(sum - 1.0) < 1e-12);
        for (size_t c = 0; c < 3; ++c) mean[c] += s.probs[c];
    }
    for (auto& m : mean) m /= n;
    auto marginal = scnf_marginal_mc(model, kX, n, rng);
    for (size_t c = 0; c < 3; ++c) CHECK(std::abs(mean[c] - marginal[c]) < 0.01);

    RandomStream rng2(29);
    auto frozen = scnf_sample(model, kX, 10, 1e-9, rng2);
    for (const auto& s : frozen)
        for (size_t c = 0; c < 3; ++c) CHECK(std::abs(s.probs[c] - frozen[0].probs[c]) < 1e-7);
}
