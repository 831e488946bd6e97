#include "annosim/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "annosim/common.hpp"

namespace annosim {

using nlohmann::json;

Optimizer::Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {
    if (!(lr > 0.0)) throw ConfigError("optimizer: lr must be positive");
}

void Optimizer::step(const std::vector<Tensor>& params) {
    if (slots_.empty()) slots_.resize(params.size());
    if (slots_.size() != params.size())
        throw std::invalid_argument("optimizer: parameter list changed size");
    ++step_count_;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        auto grad = p.grad();
        auto data = p.mutable_data();
        auto& slot = slots_[pi];
        if (slot.a.empty()) {
            slot.a.assign(grad.size(), 0.0);
            slot.b.assign(grad.size(), 0.0);
        }
        for (size_t i = 0; i < grad.size(); ++i) {
            double g = grad[i];
            if (!std::isfinite(g)) throw NumericError("optimizer: non-finite gradient");
            if (kind_ == OptimizerKind::adam) {
                constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
                slot.a[i] = b1 * slot.a[i] + (1.0 - b1) * g;
                slot.b[i] = b2 * slot.b[i] + (1.0 - b2) * g * g;
                double mhat = slot.a[i] / (1.0 - std::pow(b1, double(step_count_)));
                double vhat = slot.b[i] / (1.0 - std::pow(b2, double(step_count_)));
                data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps);
            } else {
                constexpr double rho = 0.95, eps = 1e-6;
                slot.a[i] = rho * slot.a[i] + (1.0 - rho) * g * g;
                double dx = -std::sqrt(slot.b[i] + eps) / std::sqrt(slot.a[i] + eps) * g;
                slot.b[i] = rho * slot.b[i] + (1.0 - rho) * dx * dx;
                data[i] += lr_ * dx;
            }
        }
    }
}

json Optimizer::serialize() const {
    json slots = json::array();
    for (const auto& s : slots_) slots.push_back({{"a", s.a}, {"b", s.b}});
    return {{"kind", kind_ == OptimizerKind::adam ? "adam" : "adadelta"},
            {"lr", lr_},
            {"step_count", step_count_},
            {"slots", slots}};
}

void Optimizer::restore(const json& state) {
    std::string kind = state.at("kind").get<std::string>();
    kind_ = kind == "adam" ? OptimizerKind::adam : OptimizerKind::adadelta;
    lr_ = state.at("lr").get<double>();
    step_count_ = state.at("step_count").get<long long>();
    slots_.clear();
    for (const auto& s : state.at("slots")) {
        Slot slot;
        slot.a = s.at("a").get<std::vector<double>>();
        slot.b = s.at("b").get<std::vector<double>>();
        slots_.push_back(std::move(slot));
    }
}

double clip_gradients(const std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        for (double g : p.grad()) {
            if (!std::isfinite(g)) throw NumericError("clip_gradients: non-finite gradient");
            sq += g * g;
        }
    }
    double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        double scale = max_norm / norm;
        for (const auto& p : params) {
            Tensor t = p;
            auto node = t.node();
            for (auto& g : node->grad) g *= scale;
        }
    }
    return norm;
}

double newbob_schedule(const std::vector<double>& history, double factor, int patience,
                       double lr) {
    if (history.empty()) throw std::invalid_argument("newbob_schedule: empty history");
    if (!(factor > 0.0 && factor < 1.0))
        throw ConfigError("newbob_schedule: factor must be in (0, 1)");
    if (patience < 1) throw ConfigError("newbob_schedule: patience must be >= 1");
    double best = std::numeric_limits<double>::infinity();
    int streak = 0;
    double out = lr;
    for (double loss : history) {
        if (loss < best) {
            best = loss;
            streak = 0;
        } else {
            ++streak;
            if (streak >= patience) out *= factor;
        }
    }
    return out;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    json j{{"schema_version", ckpt.schema_version},
           {"task_type", ckpt.task_type},
           {"model", ckpt.model},
           {"epoch", ckpt.epoch},
           {"valid_loss", ckpt.valid_loss},
           {"lr", ckpt.lr},
           {"rng_state", ckpt.rng_state},
           {"valid_history", ckpt.valid_history},
           {"optimizer_state", ckpt.optimizer_state}};
    json params;
    for (const auto& [name, values] : ckpt.params) params[name] = values;
    j["params"] = params;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write checkpoint '" + path + "'");
    out << j.dump();
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("invalid checkpoint '" + path + "': " + e.what());
    }
    Checkpoint ckpt;
    try {
        ckpt.schema_version = j.at("schema_version").get<int>();
        ckpt.task_type = j.at("task_type").get<std::string>();
        ckpt.model = j.at("model");
        ckpt.epoch = j.at("epoch").get<int>();
        ckpt.valid_loss = j.at("valid_loss").get<double>();
        ckpt.lr = j.at("lr").get<double>();
        ckpt.rng_state = j.at("rng_state").get<std::string>();
        ckpt.valid_history = j.at("valid_history").get<std::vector<double>>();
        ckpt.optimizer_state = j.at("optimizer_state");
        for (const auto& [name, values] : j.at("params").items())
            ckpt.params[name] = values.get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw DataError("checkpoint '" + path + "' missing fields: " + e.what());
    }
    return ckpt;
}

void apply_checkpoint_params(const std::vector<std::pair<std::string, Tensor>>& named,
                             const Checkpoint& ckpt) {
    for (const auto& [name, tensor] : named) {
        auto it = ckpt.params.find(name);
        if (it == ckpt.params.end())
            throw DataError("checkpoint is missing parameter '" + name + "'");
        Tensor t = tensor;
        if (it->second.size() != t.numel())
            throw DataError("checkpoint parameter '" + name + "' has wrong size");
        std::copy(it->second.begin(), it->second.end(), t.mutable_data().begin());
    }
}

Trainable make_trainable(IcnfModel& model, const IcnfArch& arch, size_t feature_dim) {
    Trainable t;
    t.named_params = icnf_named_parameters(model);
    t.example_loss = [&model](const AnnotatedExample& ex, RandomStream&) {
        return icnf_loss(model, ex);
    };
    t.task_type = "ordinal";
    t.model_json = {{"kind", "icnf"},
                    {"feature_dim", feature_dim},
                    {"scale", {model.scale.min_rating, model.scale.max_rating}},
                    {"prior_hidden", arch.prior_hidden},
                    {"flow_layers", arch.flow_layers},
                    {"flow_hidden", arch.flow_hidden}};
    return t;
}

Trainable make_trainable(ScnfModel& model, const ScnfArch& arch, size_t feature_dim,
                         size_t q_samples) {
    Trainable t;
    t.named_params = scnf_named_parameters(model);
    t.example_loss = [&model, q_samples](const AnnotatedExample& ex, RandomStream& rng) {
        return scnf_loss(model, ex, q_samples, rng);
    };
    t.task_type = "categorical";
    t.model_json = {{"kind", "scnf"},
                    {"feature_dim", feature_dim},
                    {"k", model.num_categories},
                    {"prior_hidden", arch.prior_hidden},
                    {"flow_layers", arch.flow_layers},
                    {"flow_hidden", arch.flow_hidden},
                    {"posterior_hidden", arch.posterior_hidden},
                    {"q_samples", q_samples}};
    return t;
}

namespace {

std::string episode_ids(const Corpus& corpus, const Episode& ep) {
    std::string ids;
    for (size_t i : ep.indices) {
        if (!ids.empty()) ids += ", ";
        ids += corpus.examples[i].id;
    }
    return ids;
}

Checkpoint snapshot(const Trainable& model, const Optimizer& opt, const RandomStream& rng,
                    int epoch, double valid_loss, double lr,
                    const std::vector<double>& valid_history) {
    Checkpoint ckpt;
    ckpt.task_type = model.task_type;
    ckpt.model = model.model_json;
    ckpt.epoch = epoch;
    ckpt.valid_loss = valid_loss;
    ckpt.lr = lr;
    ckpt.rng_state = rng.serialize();
    ckpt.valid_history = valid_history;
    for (const auto& [name, tensor] : model.named_params)
        ckpt.params[name] = std::vector<double>(tensor.data().begin(), tensor.data().end());
    ckpt.optimizer_state = opt.serialize();
    return ckpt;
}

}  // namespace

TrainResult meta_train(const Trainable& model, const Corpus& corpus_train,
                       const Corpus& corpus_valid, const TrainConfig& config,
                       const Checkpoint* resume) {
    if (config.epochs < 0) throw ConfigError("meta_train: epochs must be >= 0");
    if (config.batch_size == 0) throw ConfigError("meta_train: batch_size must be >= 1");
    if (corpus_train.examples.empty()) throw DataError("meta_train: empty training corpus");
    if (corpus_valid.examples.empty()) throw DataError("meta_train: empty validation corpus");
    if (task_type_name(corpus_train.task_type) != model.task_type)
        throw DataError("meta_train: model is " + model.task_type + " but corpus is " +
                        task_type_name(corpus_train.task_type));

    std::vector<Tensor> params;
    for (const auto& [name, t] : model.named_params) params.push_back(t);

    RandomStream rng(config.seed);
    Optimizer opt(config.optimizer, config.lr);
    std::vector<double> valid_history;
    int start_epoch = 0;
    if (resume) {
        apply_checkpoint_params(model.named_params, *resume);
        opt.restore(resume->optimizer_state);
        rng.restore(resume->rng_state);
        valid_history = resume->valid_history;
        start_epoch = resume->epoch;
    }

    // validation uses the same noise stream every epoch so that model
    // selection compares like with like
    auto valid_loss_fn = [&] {
        NoGradGuard ng;
        RandomStream vrng(mix_seed(config.seed, 0x7a11d));
        double acc = 0.0;
        for (const auto& ex : corpus_valid.examples)
            acc += model.example_loss(ex, vrng).value();
        return acc / static_cast<double>(corpus_valid.size());
    };

    TrainResult result;
    if (config.epochs == 0 || start_epoch >= config.epochs) {
        double vl = valid_loss_fn();
        result.best = snapshot(model, opt, rng, start_epoch, vl, opt.lr(), valid_history);
        result.final = result.best;
        return result;
    }

    double best_valid = std::numeric_limits<double>::infinity();
    double initial_loss = std::numeric_limits<double>::quiet_NaN();
    int diverged_epochs = 0;
    for (int epoch = start_epoch + 1; epoch <= config.epochs; ++epoch) {
        double lr_used = opt.lr();
        EpisodeSampler sampler(corpus_train.size(), config.batch_size);
        size_t n_episodes = sampler.episodes_per_epoch();
        double loss_sum = 0.0;
        for (size_t e = 0; e < n_episodes; ++e) {
            Episode episode = sampler.next(rng);
            for (auto& p : params) p.zero_grad();
            Tensor loss;
            try {
                std::vector<Tensor> per_example;
                per_example.reserve(episode.indices.size());
                for (size_t idx : episode.indices)
                    per_example.push_back(
                        model.example_loss(corpus_train.examples[idx], rng));
                Tensor total = per_example[0];
                for (size_t i = 1; i < per_example.size(); ++i)
                    total = add(total, per_example[i]);
                loss = mul_const(total, 1.0 / static_cast<double>(per_example.size()));
            } catch (const NumericError& err) {
                throw NumericError(std::string(err.what()) + " (episode: " +
                                   episode_ids(corpus_train, episode) + ")");
            }
            backward(loss);
            clip_gradients(params, config.grad_clip_norm);
            opt.step(params);
            loss_sum += loss.value();
        }
        double train_loss = loss_sum / static_cast<double>(n_episodes);
        if (std::isnan(initial_loss)) initial_loss = train_loss;
        if (train_loss > 10.0 * std::max(std::abs(initial_loss), 1e-3)) {
            if (++diverged_epochs >= 3)
                throw NumericError("meta_train: loss diverged for 3 consecutive epochs");
        } else {
            diverged_epochs = 0;
        }

        double valid_loss = valid_loss_fn();
        valid_history.push_back(valid_loss);
        result.history.push_back({epoch, train_loss, valid_loss, lr_used});
        if (valid_loss < best_valid) {
            best_valid = valid_loss;
            result.best = snapshot(model, opt, rng, epoch, valid_loss, opt.lr(), valid_history);
        }
        if (epoch == config.epochs)
            result.final = snapshot(model, opt, rng, epoch, valid_loss, opt.lr(), valid_history);
        if (config.newbob)
            opt.set_lr(newbob_schedule(valid_history, config.newbob->annealing_factor,
                                       config.newbob->patience, config.lr));
    }
    if (result.best.params.empty()) result.best = result.final;  // resumed past all epochs
    return result;
}

IcnfModel icnf_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.model.at("kind").get<std::string>() != "icnf")
        throw DataError("checkpoint is not an ordinal (icnf) model");
    IcnfArch arch;
    arch.prior_hidden = ckpt.model.at("prior_hidden").get<std::vector<size_t>>();
    arch.flow_layers = ckpt.model.at("flow_layers").get<size_t>();
    arch.flow_hidden = ckpt.model.at("flow_hidden").get<size_t>();
    auto scale = ckpt.model.at("scale");
    auto model = make_icnf_model(ckpt.model.at("feature_dim").get<size_t>(),
                                 {scale.at(0).get<int>(), scale.at(1).get<int>()}, arch, 0);
    apply_checkpoint_params(icnf_named_parameters(model), ckpt);
    return model;
}

ScnfModel scnf_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.model.at("kind").get<std::string>() != "scnf")
        throw DataError("checkpoint is not a categorical (scnf) model");
    ScnfArch arch;
    arch.prior_hidden = ckpt.model.at("prior_hidden").get<std::vector<size_t>>();
    arch.flow_layers = ckpt.model.at("flow_layers").get<size_t>();
    arch.flow_hidden = ckpt.model.at("flow_hidden").get<size_t>();
    arch.posterior_hidden = ckpt.model.at("posterior_hidden").get<std::vector<size_t>>();
    auto model = make_scnf_model(ckpt.model.at("feature_dim").get<size_t>(),
                                 ckpt.model.at("k").get<size_t>(), arch, 0);
    apply_checkpoint_params(scnf_named_parameters(model), ckpt);
    return model;
}

}  // namespace annosim
