#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "annosim/rng.hpp"

namespace annosim {

enum class TaskType { ordinal, categorical };

std::string task_type_name(TaskType t);
TaskType task_type_from_name(const std::string& name);

struct OrdinalScale {
    int min_rating = 1;
    int max_rating = 5;

    int size() const { return max_rating - min_rating + 1; }
    bool contains(int y) const { return y >= min_rating && y <= max_rating; }
};

/// One input with its multiset of human annotations. Ordinal corpora store
/// integer ratings in `hard_annotations`; categorical corpora store category
/// indices there and may additionally carry soft simplex labels.
struct AnnotatedExample {
    std::string id;
    std::vector<double> features;
    std::vector<int> hard_annotations;
    std::vector<std::vector<double>> soft_annotations;

    size_t annotation_count() const { return hard_annotations.size() + soft_annotations.size(); }
};

struct Corpus {
    TaskType task_type = TaskType::ordinal;
    OrdinalScale scale;        // ordinal tasks
    size_t num_categories = 0;  // categorical tasks
    size_t feature_dim = 0;
    std::vector<AnnotatedExample> examples;

    size_t size() const { return examples.size(); }
    /// All annotations of example i as simplex vectors (one-hot for hard
    /// labels). Categorical tasks only.
    std::vector<std::vector<double>> simplex_labels(size_t i) const;
};

/// JSONL with a header line carrying task_type/scale|k/feature_dim followed
/// by one example per line. Rejects out-of-scale ratings, off-simplex labels
/// and duplicate ids; errors carry the line number or example id.
Corpus load_corpus(const std::string& path);
void save_corpus(const std::string& path, const Corpus& corpus);

struct Episode {
    std::vector<size_t> indices;
};

/// Draws minibatches uniformly without replacement within an epoch
/// permutation; reshuffles when the permutation is exhausted. The final
/// episode of an epoch may be short.
class EpisodeSampler {
public:
    EpisodeSampler(size_t corpus_size, size_t batch_size);

    Episode next(RandomStream& rng);
    bool epoch_done() const { return cursor_ >= order_.size(); }
    size_t episodes_per_epoch() const;

private:
    size_t corpus_size_, batch_size_, cursor_;
    std::vector<size_t> order_;
};

struct SynthConfig {
    TaskType task_type = TaskType::categorical;
    size_t n_items = 1000;
    size_t feature_dim = 8;
    size_t annotators_min = 5;
    size_t annotators_max = 9;
    uint64_t seed = 0;
    size_t k = 3;                       // categorical arity
    OrdinalScale scale{1, 5};           // ordinal rating range
    std::optional<double> tau_override;  // categorical: fix the ambiguity temperature
};

/// Known conditional annotation distribution of a synthetic corpus: one pmf
/// per item (over scale integers for ordinal, categories for categorical).
struct Oracle {
    TaskType task_type = TaskType::ordinal;
    int pmf_offset = 0;  // ordinal: pmf[0] is this rating
    std::vector<std::vector<double>> pmf;

    double entropy(size_t item) const;
    double mean_entropy() const;
    double mean_rating(size_t item) const;  // ordinal
};

/// Ratings drawn as clamp(round(Normal(m(x), s(x))), scale) with
/// m(x) = clamp(3 + 2 tanh(w.x), 1, 5) and s(x) = 0.3 + 0.5 sigmoid(u.x);
/// w, u fixed from the seed. The oracle pmf is the exact Gaussian interval
/// mass with clamp mass absorbed at the scale ends.
std::pair<Corpus, Oracle> synth_ordinal(const SynthConfig& config);

/// Labels drawn from Categorical(softmax(W.x / tau(x))) with
/// tau(x) = 0.5 + 2 sigmoid(u.x) unless overridden; W, u fixed from the seed.
std::pair<Corpus, Oracle> synth_categorical(const SynthConfig& config);

/// Expected Fleiss kappa of annotations drawn from the oracle pmfs.
double oracle_expected_fleiss_kappa(const Oracle& oracle);

void save_oracle(const std::string& path, const Oracle& oracle,
                 const std::vector<std::string>& ids);
Oracle load_oracle(const std::string& path, TaskType task_type, int pmf_offset);

/// Seeded 8:1:1 split (train, valid, test) by shuffled item order.
std::array<Corpus, 3> split_corpus(const Corpus& corpus, uint64_t seed);
std::array<std::vector<size_t>, 3> split_indices(size_t n, uint64_t seed);

}  // namespace annosim
