#include <cmath>
#include <vector>

#include "annosim/rng.hpp"
#include "annosim/tensor.hpp"
#include "doctest.h"

using namespace annosim;

TEST_CASE("softmax of zeros is uniform") {
    auto v = Tensor::from_data({3}, {0.0, 0.0, 0.0});
    auto y = softmax(v);
    for (size_t i = 0; i < 3; ++i) CHECK(y.at(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("log and exp are inverse") {
    auto x = Tensor::scalar(2.5);
    CHECK(log(exp(x)).value() == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("matmul of ones") {
    auto a = Tensor::full({2, 3}, 1.0);
    auto b = Tensor::full({3, 2}, 1.0);
    auto c = matmul(a, b);
    REQUIRE(c.shape() == std::vector<size_t>{2, 2});
    for (size_t i = 0; i < 4; ++i) CHECK(c.at(i) == doctest::Approx(3.0));
}

TEST_CASE("matmul rank-1 lifting") {
    auto v = Tensor::from_data({3}, {1.0, 2.0, 3.0});
    auto w = Tensor::from_data({3, 2}, {1, 0, 0, 1, 1, 1});
    auto y = matmul(v, w);
    REQUIRE(y.shape() == std::vector<size_t>{2});
    CHECK(y.at(0) == doctest::Approx(4.0));
    CHECK(y.at(1) == doctest::Approx(5.0));
}

TEST_CASE("grad of x squared") {
    auto x = Tensor::scalar(3.0, true);
    auto loss = mul(x, x);
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("grad of product routes to both factors") {
    auto a = Tensor::scalar(2.0, true);
    auto b = Tensor::scalar(5.0, true);
    backward(mul(a, b));
    CHECK(a.grad()[0] == doctest::Approx(5.0));
    CHECK(b.grad()[0] == doctest::Approx(2.0));
}

TEST_CASE("sum log softmax gradient matches finite differences") {
    auto v = Tensor::from_data({3}, {1.0, 2.0, 3.0}, true);
    auto fn = [&] { return sum_all(log(softmax(v))); };
    double err = finite_diff_check(fn, {v}, 1e-5);
    CHECK(err < 1e-6);
}

TEST_CASE("finite_diff_check on constant function is zero") {
    auto v = Tensor::from_data({4}, {1.0, -1.0, 0.5, 2.0}, true);
    auto c = Tensor::scalar(7.0);
    auto fn = [&] { return add(mul_const(sum_all(v), 0.0), c); };
    CHECK(finite_diff_check(fn, {v}, 1e-5) == doctest::Approx(0.0));
}

TEST_CASE("gradient correctness across the op set") {
    // randomized inputs over 10 seeds per the module contract
    for (uint64_t seed = 0; seed < 10; ++seed) {
        RandomStream rng(seed);
        std::vector<double> av(6), bv(3), mvals(6);
        for (auto& v : av) v = rng.normal();
        for (auto& v : bv) v = rng.normal();
        for (auto& v : mvals) v = 0.5 + rng.uniform();  // positive for log/div
        auto a = Tensor::from_data({2, 3}, av, true);
        auto b = Tensor::from_data({3}, bv, true);
        auto m = Tensor::from_data({2, 3}, mvals, true);
        auto w = Tensor::from_data({3, 2}, {0.3, -0.1, 0.2, 0.4, -0.5, 0.7}, true);

        auto fn = [&] {
            auto h = tanh(add(a, b));                    // broadcast add
            auto s = softmax(add_const(matmul(h, w), 0.1));  // matmul + const
            auto t1 = sum_all(log(s));
            auto t2 = sum_all(div(exp(mul_const(b, 0.3)), m));
            auto t3 = sum_all(softplus(sub(a, b)));
            auto t4 = sum_all(pow_scalar(m, 1.7));
            auto t5 = sum_all(mul(slice_last(a, 1, 2), slice_last(m, 0, 2)));
            auto t6 = mean_all(log_softmax(concat_last(a, m)));
            auto t7 = sum_all(abs(clamp(b, -0.5, 0.5)));
            return add(add(add(t1, t2), add(t3, t4)), add(add(t5, t6), t7));
        };
        double err = finite_diff_check(fn, {a, b, m, w}, 1e-5);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("gradients accumulate across uses and across backward calls") {
    auto x = Tensor::scalar(2.0, true);
    auto y = add(mul(x, x), x);  // x used twice -> dy/dx = 2x + 1 = 5
    backward(y);
    CHECK(x.grad()[0] == doctest::Approx(5.0));
    backward(mul_const(x, 3.0));  // new graph accumulates
    CHECK(x.grad()[0] == doctest::Approx(8.0));
    x.zero_grad();
    CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("backward rejects non-scalar loss and double calls") {
    auto x = Tensor::from_data({2}, {1.0, 2.0}, true);
    CHECK_THROWS_AS(backward(mul(x, x)), std::invalid_argument);
    auto loss = sum_all(x);
    backward(loss);
    CHECK_THROWS_AS(backward(loss), std::runtime_error);
}

TEST_CASE("shape mismatch and domain errors are reported") {
    auto a = Tensor::from_data({2}, {1.0, 2.0});
    auto b = Tensor::from_data({3}, {1.0, 2.0, 3.0});
    CHECK_THROWS_AS(add(a, b), std::invalid_argument);
    auto z = Tensor::from_data({2}, {1.0, 0.0});
    CHECK_THROWS_AS(div(a, z), NumericError);
    auto neg_vals = Tensor::from_data({2}, {1.0, -1.0});
    CHECK_THROWS_AS(log(neg_vals), NumericError);
    CHECK_THROWS_AS(Tensor::from_data({1}, {std::nan("")}), NumericError);
}

TEST_CASE("determinism: identical seeds give bit-identical values and grads") {
    auto run = [](uint64_t seed) {
        RandomStream rng(seed);
        std::vector<double> xv(8);
        for (auto& v : xv) v = rng.normal();
        auto x = Tensor::from_data({2, 4}, xv, true);
        auto w = Tensor::from_data({4, 2}, {0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.8}, true);
        auto loss = mean_all(tanh(matmul(x, w)));
        backward(loss);
        std::vector<double> out{loss.value()};
        out.insert(out.end(), x.grad().begin(), x.grad().end());
        out.insert(out.end(), w.grad().begin(), w.grad().end());
        return out;
    };
    CHECK(run(42) == run(42));
}

TEST_CASE("broadcast soundness: batched equals stacked per-item evaluation") {
    RandomStream rng(7);
    std::vector<double> bv(5);
    for (auto& v : bv) v = rng.normal();
    auto shift = Tensor::from_data({5}, bv);
    std::vector<Tensor> rows;
    for (size_t r = 0; r < 4; ++r) {
        std::vector<double> rv(5);
        for (auto& v : rv) v = rng.normal();
        rows.push_back(Tensor::from_data({5}, rv));
    }
    auto batch = stack_rows(rows);
    auto batched = softmax(add(batch, shift));
    for (size_t r = 0; r < 4; ++r) {
        auto single = softmax(add(rows[r], shift));
        for (size_t j = 0; j < 5; ++j)
            CHECK(std::abs(batched.at(r * 5 + j) - single.at(j)) < 1e-12);
    }
}

TEST_CASE("repeat_rows repeats consecutively and sums gradients") {
    auto x = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
    auto y = repeat_rows(x, 3);
    REQUIRE(y.shape() == std::vector<size_t>{6, 2});
    CHECK(y.at(0) == 1.0);
    CHECK(y.at(5) == 2.0);
    CHECK(y.at(6) == 3.0);
    backward(sum_all(y));
    for (size_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == doctest::Approx(3.0));
}

TEST_CASE("no-grad mode records no graph") {
    auto x = Tensor::scalar(2.0, true);
    NoGradGuard ng;
    auto y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->parents.empty());
}
