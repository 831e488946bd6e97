#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "annosim/data.hpp"
#include "annosim/icnf.hpp"
#include "annosim/scnf.hpp"
#include "json.hpp"

namespace annosim {

enum class OptimizerKind { adam, adadelta };

struct NewbobConfig {
    double annealing_factor = 0.8;
    int patience = 1;
};

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::adam;
    double lr = 1e-3;
    std::optional<NewbobConfig> newbob;
    int epochs = 30;
    size_t batch_size = 32;
    size_t q_samples = 20;  // ELBO samples (categorical only)
    uint64_t seed = 0;
    double grad_clip_norm = 5.0;
    std::string checkpoint_dir;
};

/// Adam (beta1 0.9, beta2 0.999, eps 1e-8) or Adadelta (rho 0.95, eps 1e-6)
/// over a fixed parameter list; state is kept per parameter by position.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double lr);

    void step(const std::vector<Tensor>& params);
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    OptimizerKind kind() const { return kind_; }

    nlohmann::json serialize() const;
    void restore(const nlohmann::json& state);

private:
    struct Slot {
        std::vector<double> a, b;  // adam: m, v; adadelta: E[g^2], E[dx^2]
    };
    OptimizerKind kind_;
    double lr_;
    long long step_count_ = 0;
    std::vector<Slot> slots_;
};

/// Scale all gradients so their global norm is at most max_norm; returns the
/// pre-clip norm. Throws on non-finite gradients.
double clip_gradients(const std::vector<Tensor>& params, double max_norm);

/// NewBob annealing applied over a validation-loss history: once the loss has
/// failed to improve on the best seen for `patience` consecutive epochs, every
/// further non-improving epoch multiplies the rate by `factor`.
double newbob_schedule(const std::vector<double>& history, double factor, int patience,
                       double lr);

struct Checkpoint {
    int schema_version = 1;
    std::string task_type;
    nlohmann::json model;  // architecture + dims, enough to rebuild
    int epoch = 0;
    double valid_loss = 0.0;
    double lr = 0.0;
    std::string rng_state;
    std::vector<double> valid_history;
    std::map<std::string, std::vector<double>> params;
    nlohmann::json optimizer_state;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Copy checkpointed arrays into the live parameter tensors (by name).
void apply_checkpoint_params(const std::vector<std::pair<std::string, Tensor>>& named,
                             const Checkpoint& ckpt);

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double valid_loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    Checkpoint best;    // minimal validation loss
    Checkpoint final;   // end of the last epoch; resume point
    std::vector<EpochStats> history;
};

/// Adapter binding a model's parameters and per-example loss to the generic
/// meta-training loop.
struct Trainable {
    std::vector<std::pair<std::string, Tensor>> named_params;
    std::function<Tensor(const AnnotatedExample&, RandomStream&)> example_loss;
    std::string task_type;
    nlohmann::json model_json;
};

Trainable make_trainable(IcnfModel& model, const IcnfArch& arch, size_t feature_dim);
Trainable make_trainable(ScnfModel& model, const ScnfArch& arch, size_t feature_dim,
                         size_t q_samples);

/// Episodic meta-training: per step, the mean per-example loss over a
/// uniformly drawn episode. Validation runs each epoch with a fixed noise
/// stream; the checkpoint with minimal validation loss is returned alongside
/// the final state. Pass `resume` to continue a run bit-exactly.
TrainResult meta_train(const Trainable& model, const Corpus& corpus_train,
                       const Corpus& corpus_valid, const TrainConfig& config,
                       const Checkpoint* resume = nullptr);

/// Rebuild models from a checkpoint's architecture record.
IcnfModel icnf_from_checkpoint(const Checkpoint& ckpt);
ScnfModel scnf_from_checkpoint(const Checkpoint& ckpt);

}  // namespace annosim
