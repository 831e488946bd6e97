#include <cmath>
#include <cstdio>

#include "annosim/common.hpp"
#include "annosim/train.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace annosim;

namespace {

std::pair<Corpus, Corpus> tiny_ordinal_corpora(uint64_t seed, size_t n = 24) {
    SynthConfig cfg;
    cfg.task_type = TaskType::ordinal;
    cfg.n_items = n;
    cfg.feature_dim = 2;
    cfg.annotators_min = 3;
    cfg.annotators_max = 5;
    cfg.seed = seed;
    auto [corpus, oracle] = synth_ordinal(cfg);
    Corpus train = corpus, valid = corpus;
    train.examples.assign(corpus.examples.begin(), corpus.examples.end() - 4);
    valid.examples.assign(corpus.examples.end() - 4, corpus.examples.end());
    return {train, valid};
}

}  // namespace

TEST_CASE("adam converges on a quadratic") {
    auto x = Tensor::scalar(1.0, true);
    Optimizer opt(OptimizerKind::adam, 0.1);
    for (int i = 0; i < 100; ++i) {
        x.zero_grad();
        backward(mul(x, x));
        opt.step({x});
    }
    CHECK(std::abs(x.value()) < 0.05);
}

TEST_CASE("zero gradient leaves parameters unchanged") {
    auto x = Tensor::scalar(2.5, true);
    Optimizer opt(OptimizerKind::adam, 0.1);
    x.zero_grad();
    opt.step({x});
    CHECK(x.value() == 2.5);
    Optimizer opt2(OptimizerKind::adadelta, 1.0);
    x.zero_grad();
    opt2.step({x});
    CHECK(x.value() == 2.5);
}

TEST_CASE("adadelta first step has the closed-form magnitude") {
    auto x = Tensor::scalar(0.0, true);
    Optimizer opt(OptimizerKind::adadelta, 1.0);
    x.zero_grad();
    backward(mul_const(x, 1.0));  // unit gradient
    opt.step({x});
    double expected = std::sqrt(1e-6) / std::sqrt(0.05 + 1e-6);
    CHECK(std::abs(x.value()) == doctest::Approx(expected).epsilon(1e-6));
    CHECK(std::abs(x.value()) == doctest::Approx(4.47e-3).epsilon(1e-2));
}

TEST_CASE("gradient clipping caps the global norm") {
    auto a = Tensor::from_data({2}, {0.0, 0.0}, true);
    auto b = Tensor::scalar(0.0, true);
    backward(add(mul_const(sum_all(a), 30.0), mul_const(b, 40.0)));
    double norm = clip_gradients({a, b}, 5.0);
    CHECK(norm == doctest::Approx(std::sqrt(30. * 30. * 2 + 40. * 40.)));
    double after = 0.0;
    for (double g : a.grad()) after += g * g;
    after += b.grad()[0] * b.grad()[0];
    CHECK(std::sqrt(after) == doctest::Approx(5.0).epsilon(1e-9));
}

TEST_CASE("newbob annealing rules") {
    CHECK(newbob_schedule({1.0, 0.9, 0.8}, 0.8, 1, 0.5) == doctest::Approx(0.5));
    CHECK(newbob_schedule({1.0, 1.1}, 0.8, 1, 1.0) == doctest::Approx(0.8));
    CHECK(newbob_schedule({1.0, 1.1, 1.2}, 0.8, 1, 1.0) == doctest::Approx(0.64));
    CHECK(newbob_schedule({1.0, 1.1, 0.9, 1.2}, 0.8, 2, 1.0) == doctest::Approx(1.0));
    CHECK_THROWS_AS(newbob_schedule({}, 0.8, 1, 1.0), std::invalid_argument);
}

TEST_CASE("overfit smoke test: loss decreases on a single example") {
    auto [train, valid] = tiny_ordinal_corpora(3, 8);
    train.examples.resize(1);
    auto model = make_icnf_model(2, train.scale, IcnfArch{{16}, 2, 8}, 5);
    auto trainable = make_trainable(model, IcnfArch{{16}, 2, 8}, 2);
    TrainConfig cfg;
    cfg.epochs = 40;  // one example per episode -> 40 steps
    cfg.batch_size = 1;
    cfg.lr = 0.02;
    cfg.seed = 1;
    auto result = meta_train(trainable, train, valid, cfg);
    double first = result.history.front().train_loss;
    double last = result.history.back().train_loss;
    CHECK(last < first * 0.9);
}

TEST_CASE("zero epochs returns the initialization checkpoint") {
    auto [train, valid] = tiny_ordinal_corpora(4);
    auto model = make_icnf_model(2, train.scale, IcnfArch{{8}, 2, 8}, 6);
    auto trainable = make_trainable(model, IcnfArch{{8}, 2, 8}, 2);
    TrainConfig cfg;
    cfg.epochs = 0;
    auto result = meta_train(trainable, train, valid, cfg);
    CHECK(result.history.empty());
    CHECK(result.best.epoch == 0);
    CHECK(result.best.params.at("flow.layer0.b")[0] == 0.0);
}

TEST_CASE("same seed reproduces the loss history") {
    auto [train, valid] = tiny_ordinal_corpora(5);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.seed = 9;
    auto run = [&] {
        auto model = make_icnf_model(2, train.scale, IcnfArch{{8}, 2, 8}, 7);
        auto trainable = make_trainable(model, IcnfArch{{8}, 2, 8}, 2);
        return meta_train(trainable, train, valid, cfg);
    };
    auto r1 = run();
    auto r2 = run();
    REQUIRE(r1.history.size() == r2.history.size());
    for (size_t i = 0; i < r1.history.size(); ++i) {
        CHECK(r1.history[i].train_loss == r2.history[i].train_loss);
        CHECK(r1.history[i].valid_loss == r2.history[i].valid_loss);
    }
}

TEST_CASE("best checkpoint has the minimal validation loss") {
    auto [train, valid] = tiny_ordinal_corpora(6);
    auto model = make_icnf_model(2, train.scale, IcnfArch{{8}, 2, 8}, 8);
    auto trainable = make_trainable(model, IcnfArch{{8}, 2, 8}, 2);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 4;
    cfg.seed = 2;
    auto result = meta_train(trainable, train, valid, cfg);
    for (const auto& e : result.history) CHECK(result.best.valid_loss <= e.valid_loss);
}

TEST_CASE("one step at the default rate does not blow up the episode loss") {
    auto [train, valid] = tiny_ordinal_corpora(7);
    auto model = make_icnf_model(2, train.scale, IcnfArch{{16, 16}, 3, 8}, 9);
    auto trainable = make_trainable(model, IcnfArch{{16, 16}, 3, 8}, 2);
    std::vector<Tensor> params = testutil::param_tensors(trainable.named_params);

    RandomStream rng(3);
    auto episode_loss = [&] {
        Tensor total = icnf_loss(model, train.examples[0]);
        for (size_t i = 1; i < 4; ++i) total = add(total, icnf_loss(model, train.examples[i]));
        return mul_const(total, 0.25);
    };
    double before = episode_loss().value();
    for (auto& p : params) p.zero_grad();
    backward(episode_loss());
    clip_gradients(params, 5.0);
    Optimizer opt(OptimizerKind::adam, 1e-3);
    opt.step(params);
    double after = episode_loss().value();
    CHECK(after <= before * 1.10 + 1e-9);
}

TEST_CASE("checkpoint save/load round-trips and resume is bit-exact") {
    auto [train, valid] = tiny_ordinal_corpora(8);
    TrainConfig full_cfg;
    full_cfg.epochs = 4;
    full_cfg.batch_size = 4;
    full_cfg.seed = 13;
    full_cfg.newbob = NewbobConfig{0.8, 1};

    auto make_model = [&] { return make_icnf_model(2, train.scale, IcnfArch{{8}, 2, 8}, 21); };

    auto model_a = make_model();
    auto trainable_a = make_trainable(model_a, IcnfArch{{8}, 2, 8}, 2);
    auto full = meta_train(trainable_a, train, valid, full_cfg);

    TrainConfig half_cfg = full_cfg;
    half_cfg.epochs = 2;
    auto model_b = make_model();
    auto trainable_b = make_trainable(model_b, IcnfArch{{8}, 2, 8}, 2);
    auto half = meta_train(trainable_b, train, valid, half_cfg);

    const std::string path = "/tmp/annosim_test_ckpt.json";
    save_checkpoint(path, half.final);
    auto reloaded = load_checkpoint(path);
    std::remove(path.c_str());
    CHECK(reloaded.epoch == 2);
    CHECK(reloaded.params == half.final.params);
    CHECK(reloaded.rng_state == half.final.rng_state);

    auto model_c = make_model();
    auto trainable_c = make_trainable(model_c, IcnfArch{{8}, 2, 8}, 2);
    auto resumed = meta_train(trainable_c, train, valid, full_cfg, &reloaded);
    CHECK(resumed.final.params == full.final.params);
    CHECK(resumed.final.valid_loss == full.final.valid_loss);

    auto rebuilt = icnf_from_checkpoint(resumed.final);
    auto x = Tensor::from_data({2}, {0.3, -0.2});
    auto direct = icnf_log_pmf_midpoint(model_c, x, 3).value();
    CHECK(icnf_log_pmf_midpoint(rebuilt, x, 3).value() == doctest::Approx(direct).epsilon(1e-15));
}

TEST_CASE("task type mismatch is rejected") {
    auto [train, valid] = tiny_ordinal_corpora(9);
    auto model = make_scnf_model(2, 3, ScnfArch{{8}, 2, 8, {8}}, 3);
    auto trainable = make_trainable(model, ScnfArch{{8}, 2, 8, {8}}, 2, 4);
    TrainConfig cfg;
    CHECK_THROWS_AS(meta_train(trainable, train, valid, cfg), DataError);
}

TEST_CASE("scnf training is reproducible and improves") {
    SynthConfig scfg;
    scfg.task_type = TaskType::categorical;
    scfg.n_items = 30;
    scfg.feature_dim = 2;
    scfg.seed = 31;
    auto [corpus, oracle] = synth_categorical(scfg);
    Corpus train = corpus, valid = corpus;
    train.examples.assign(corpus.examples.begin(), corpus.examples.end() - 5);
    valid.examples.assign(corpus.examples.end() - 5, corpus.examples.end());

    auto model = make_scnf_model(2, 3, ScnfArch{{16}, 2, 8, {8}}, 17);
    auto trainable = make_trainable(model, ScnfArch{{16}, 2, 8, {8}}, 2, 4);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.lr = 5e-3;
    cfg.seed = 23;
    auto result = meta_train(trainable, train, valid, cfg);
    CHECK(result.history.back().train_loss < result.history.front().train_loss);
}
