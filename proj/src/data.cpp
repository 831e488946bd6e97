#include "annosim/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "annosim/common.hpp"
#include "json.hpp"

namespace annosim {

using nlohmann::json;

std::string task_type_name(TaskType t) {
    return t == TaskType::ordinal ? "ordinal" : "categorical";
}

TaskType task_type_from_name(const std::string& name) {
    if (name == "ordinal") return TaskType::ordinal;
    if (name == "categorical") return TaskType::categorical;
    throw DataError("unknown task_type '" + name + "'");
}

std::vector<std::vector<double>> Corpus::simplex_labels(size_t i) const {
    if (task_type != TaskType::categorical)
        throw std::invalid_argument("simplex_labels: corpus is not categorical");
    const auto& ex = examples.at(i);
    std::vector<std::vector<double>> out;
    out.reserve(ex.annotation_count());
    for (int c : ex.hard_annotations) {
        std::vector<double> one_hot(num_categories, 0.0);
        one_hot[static_cast<size_t>(c)] = 1.0;
        out.push_back(std::move(one_hot));
    }
    for (const auto& soft : ex.soft_annotations) out.push_back(soft);
    return out;
}

namespace {

void validate_example(const Corpus& corpus, const AnnotatedExample& ex) {
    if (ex.annotation_count() == 0)
        throw DataError("example '" + ex.id + "' has no annotations");
    if (ex.features.size() != corpus.feature_dim)
        throw DataError("example '" + ex.id + "': feature dim " +
                        std::to_string(ex.features.size()) + ", corpus declares " +
                        std::to_string(corpus.feature_dim));
    for (double f : ex.features)
        if (!std::isfinite(f)) throw DataError("example '" + ex.id + "': non-finite feature");
    if (corpus.task_type == TaskType::ordinal) {
        if (!ex.soft_annotations.empty())
            throw DataError("example '" + ex.id + "': simplex annotation in ordinal corpus");
        for (int y : ex.hard_annotations)
            if (!corpus.scale.contains(y))
                throw DataError("example '" + ex.id + "': rating " + std::to_string(y) +
                                " outside scale [" + std::to_string(corpus.scale.min_rating) +
                                ", " + std::to_string(corpus.scale.max_rating) + "]");
    } else {
        for (int c : ex.hard_annotations)
            if (c < 0 || static_cast<size_t>(c) >= corpus.num_categories)
                throw DataError("example '" + ex.id + "': category " + std::to_string(c) +
                                " outside [0, " + std::to_string(corpus.num_categories) + ")");
        for (const auto& soft : ex.soft_annotations) {
            if (soft.size() != corpus.num_categories)
                throw DataError("example '" + ex.id + "': simplex label of wrong arity");
            double sum = 0.0;
            for (double p : soft) {
                if (p < 0.0)
                    throw DataError("example '" + ex.id + "': negative simplex entry");
                sum += p;
            }
            if (std::abs(sum - 1.0) > 1e-9)
                throw DataError("example '" + ex.id + "': simplex label sums to " +
                                std::to_string(sum));
        }
    }
}

void validate_corpus(const Corpus& corpus) {
    std::unordered_set<std::string> ids;
    for (const auto& ex : corpus.examples) {
        if (!ids.insert(ex.id).second) throw DataError("duplicate example id '" + ex.id + "'");
        validate_example(corpus, ex);
    }
}

}  // namespace

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open corpus file '" + path + "'");
    Corpus corpus;
    std::string line;
    size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError("parse error at " + path + ":" + std::to_string(line_no) + ": " +
                            e.what());
        }
        try {
            if (!have_header) {
                corpus.task_type = task_type_from_name(j.at("task_type").get<std::string>());
                corpus.feature_dim = j.at("feature_dim").get<size_t>();
                if (corpus.task_type == TaskType::ordinal) {
                    auto sc = j.at("scale");
                    corpus.scale = {sc.at(0).get<int>(), sc.at(1).get<int>()};
                    if (corpus.scale.min_rating >= corpus.scale.max_rating)
                        throw DataError("scale must satisfy min < max");
                } else {
                    corpus.num_categories = j.at("k").get<size_t>();
                    if (corpus.num_categories < 2) throw DataError("k must be >= 2");
                }
                have_header = true;
                continue;
            }
            AnnotatedExample ex;
            ex.id = j.at("id").get<std::string>();
            ex.features = j.at("features").get<std::vector<double>>();
            for (const auto& a : j.at("annotations")) {
                if (a.is_number_integer())
                    ex.hard_annotations.push_back(a.get<int>());
                else if (a.is_array())
                    ex.soft_annotations.push_back(a.get<std::vector<double>>());
                else
                    throw DataError("annotation must be an integer or a simplex array");
            }
            corpus.examples.push_back(std::move(ex));
        } catch (const json::exception& e) {
            throw DataError("invalid record at " + path + ":" + std::to_string(line_no) + ": " +
                            e.what());
        }
    }
    if (!have_header) throw DataError("corpus file '" + path + "' is empty");
    validate_corpus(corpus);
    return corpus;
}

void save_corpus(const std::string& path, const Corpus& corpus) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write corpus file '" + path + "'");
    json header{{"task_type", task_type_name(corpus.task_type)},
                {"feature_dim", corpus.feature_dim}};
    if (corpus.task_type == TaskType::ordinal)
        header["scale"] = {corpus.scale.min_rating, corpus.scale.max_rating};
    else
        header["k"] = corpus.num_categories;
    out << header.dump() << "\n";
    for (const auto& ex : corpus.examples) {
        json ann = json::array();
        for (int a : ex.hard_annotations) ann.push_back(a);
        for (const auto& s : ex.soft_annotations) ann.push_back(s);
        json j{{"id", ex.id}, {"features", ex.features}, {"annotations", ann}};
        out << j.dump() << "\n";
    }
}

EpisodeSampler::EpisodeSampler(size_t corpus_size, size_t batch_size)
    : corpus_size_(corpus_size), batch_size_(batch_size), cursor_(0) {
    if (corpus_size == 0) throw std::invalid_argument("EpisodeSampler: empty corpus");
    if (batch_size == 0) throw std::invalid_argument("EpisodeSampler: batch_size must be >= 1");
}

Episode EpisodeSampler::next(RandomStream& rng) {
    if (cursor_ >= order_.size()) {
        order_ = rng.permutation(corpus_size_);
        cursor_ = 0;
    }
    size_t take = std::min(batch_size_, order_.size() - cursor_);
    Episode ep;
    ep.indices.assign(order_.begin() + cursor_, order_.begin() + cursor_ + take);
    cursor_ += take;
    return ep;
}

size_t EpisodeSampler::episodes_per_epoch() const {
    return (corpus_size_ + batch_size_ - 1) / batch_size_;
}

double Oracle::entropy(size_t item) const {
    double h = 0.0;
    for (double p : pmf.at(item))
        if (p > 0.0) h -= p * std::log(p);
    return h;
}

double Oracle::mean_entropy() const {
    double s = 0.0;
    for (size_t i = 0; i < pmf.size(); ++i) s += entropy(i);
    return pmf.empty() ? 0.0 : s / static_cast<double>(pmf.size());
}

double Oracle::mean_rating(size_t item) const {
    if (task_type != TaskType::ordinal)
        throw std::invalid_argument("mean_rating: oracle is not ordinal");
    double m = 0.0;
    const auto& p = pmf.at(item);
    for (size_t j = 0; j < p.size(); ++j) m += p[j] * (pmf_offset + static_cast<int>(j));
    return m;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

size_t draw_annotator_count(const SynthConfig& cfg, RandomStream& rng) {
    if (cfg.annotators_min > cfg.annotators_max || cfg.annotators_min == 0)
        throw ConfigError("invalid annotators range");
    return cfg.annotators_min + rng.integer(cfg.annotators_max - cfg.annotators_min + 1);
}

std::vector<double> random_features(size_t d, RandomStream& rng) {
    std::vector<double> x(d);
    for (auto& v : x) v = rng.normal();
    return x;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// Nearest-integer quantizer with half-open intervals (y-1/2, y+1/2].
int round_half_down(double v) { return static_cast<int>(std::ceil(v - 0.5)); }

}  // namespace

std::pair<Corpus, Oracle> synth_ordinal(const SynthConfig& cfg) {
    if (cfg.n_items == 0) throw ConfigError("synth_ordinal: n_items must be >= 1");
    if (cfg.feature_dim == 0) throw ConfigError("synth_ordinal: feature_dim must be >= 1");
    RandomStream rng(mix_seed(cfg.seed, 17));
    const int lo = cfg.scale.min_rating, hi = cfg.scale.max_rating;
    const double mid = 0.5 * (lo + hi);
    const double span = 0.5 * (hi - lo);

    std::vector<double> w(cfg.feature_dim), u(cfg.feature_dim);
    double fd = std::sqrt(static_cast<double>(cfg.feature_dim));
    for (auto& v : w) v = rng.normal() / fd;
    for (auto& v : u) v = rng.normal() / fd;

    Corpus corpus;
    corpus.task_type = TaskType::ordinal;
    corpus.scale = cfg.scale;
    corpus.feature_dim = cfg.feature_dim;
    Oracle oracle;
    oracle.task_type = TaskType::ordinal;
    oracle.pmf_offset = lo;

    for (size_t i = 0; i < cfg.n_items; ++i) {
        AnnotatedExample ex;
        ex.id = "ord" + std::to_string(i);
        ex.features = random_features(cfg.feature_dim, rng);
        double m = mid + span * std::tanh(dot(w, ex.features));
        m = std::clamp(m, static_cast<double>(lo), static_cast<double>(hi));
        double s = 0.3 + 0.5 * sigmoid(dot(u, ex.features));
        size_t n_ann = draw_annotator_count(cfg, rng);
        for (size_t a = 0; a < n_ann; ++a) {
            int y = round_half_down(m + s * rng.normal());
            ex.hard_annotations.push_back(std::clamp(y, lo, hi));
        }
        corpus.examples.push_back(std::move(ex));

        // interval masses; clamped tails absorbed at the scale ends
        std::vector<double> pmf(static_cast<size_t>(hi - lo + 1));
        for (int y = lo; y <= hi; ++y) {
            double upper = y == hi ? 1.0 : normal_cdf((y + 0.5 - m) / s);
            double lower = y == lo ? 0.0 : normal_cdf((y - 0.5 - m) / s);
            pmf[static_cast<size_t>(y - lo)] = upper - lower;
        }
        oracle.pmf.push_back(std::move(pmf));
    }
    return {std::move(corpus), std::move(oracle)};
}

std::pair<Corpus, Oracle> synth_categorical(const SynthConfig& cfg) {
    if (cfg.n_items == 0) throw ConfigError("synth_categorical: n_items must be >= 1");
    if (cfg.feature_dim == 0) throw ConfigError("synth_categorical: feature_dim must be >= 1");
    if (cfg.k < 2) throw ConfigError("synth_categorical: k must be >= 2");
    RandomStream rng(mix_seed(cfg.seed, 23));

    // Fixed random logit map with a graded class axis: class k's row is
    // c_k * w plus its own perturbation, so confusions concentrate between
    // neighboring classes the way they do in real rating tasks (a shared
    // score direction plus class-specific variation).
    std::vector<std::vector<double>> W(cfg.k, std::vector<double>(cfg.feature_dim));
    double scale = 1.6 / std::sqrt(static_cast<double>(cfg.feature_dim));
    std::vector<double> axis(cfg.feature_dim);
    for (auto& v : axis) v = rng.normal() * scale;
    for (size_t kk = 0; kk < cfg.k; ++kk) {
        double c = cfg.k == 1 ? 0.0 : 2.0 * double(kk) / double(cfg.k - 1) - 1.0;
        for (size_t j = 0; j < cfg.feature_dim; ++j)
            W[kk][j] = c * axis[j] + 0.35 * rng.normal() * scale;
    }
    std::vector<double> u(cfg.feature_dim);
    double fd = std::sqrt(static_cast<double>(cfg.feature_dim));
    for (auto& v : u) v = rng.normal() / fd;

    Corpus corpus;
    corpus.task_type = TaskType::categorical;
    corpus.num_categories = cfg.k;
    corpus.feature_dim = cfg.feature_dim;
    Oracle oracle;
    oracle.task_type = TaskType::categorical;

    for (size_t i = 0; i < cfg.n_items; ++i) {
        AnnotatedExample ex;
        ex.id = "cat" + std::to_string(i);
        ex.features = random_features(cfg.feature_dim, rng);
        double tau = cfg.tau_override ? *cfg.tau_override : 0.5 + 2.0 * sigmoid(dot(u, ex.features));
        if (tau <= 0.0) throw ConfigError("synth_categorical: tau must be positive");

        std::vector<double> pmf(cfg.k);
        double mx = -1e300;
        for (size_t c = 0; c < cfg.k; ++c) {
            pmf[c] = dot(W[c], ex.features) / tau;
            mx = std::max(mx, pmf[c]);
        }
        double sum = 0.0;
        for (auto& p : pmf) {
            p = std::exp(p - mx);
            sum += p;
        }
        for (auto& p : pmf) p /= sum;

        size_t n_ann = draw_annotator_count(cfg, rng);
        for (size_t a = 0; a < n_ann; ++a) {
            double r = rng.uniform();
            double acc = 0.0;
            int label = static_cast<int>(cfg.k) - 1;
            for (size_t c = 0; c < cfg.k; ++c) {
                acc += pmf[c];
                if (r < acc) {
                    label = static_cast<int>(c);
                    break;
                }
            }
            ex.hard_annotations.push_back(label);
        }
        corpus.examples.push_back(std::move(ex));
        oracle.pmf.push_back(std::move(pmf));
    }
    return {std::move(corpus), std::move(oracle)};
}

double oracle_expected_fleiss_kappa(const Oracle& oracle) {
    // E[P_i] = sum_k p_ik^2 for iid raters; chance term from pooled means.
    size_t n = oracle.pmf.size();
    if (n == 0) throw std::invalid_argument("oracle_expected_fleiss_kappa: empty oracle");
    size_t k = oracle.pmf[0].size();
    double p_bar = 0.0;
    std::vector<double> pooled(k, 0.0);
    for (const auto& p : oracle.pmf) {
        double pi = 0.0;
        for (size_t c = 0; c < k; ++c) {
            pi += p[c] * p[c];
            pooled[c] += p[c];
        }
        p_bar += pi;
    }
    p_bar /= static_cast<double>(n);
    double pe = 0.0;
    for (double pc : pooled) {
        pc /= static_cast<double>(n);
        pe += pc * pc;
    }
    if (std::abs(1.0 - pe) < 1e-15) return 1.0;
    return (p_bar - pe) / (1.0 - pe);
}

void save_oracle(const std::string& path, const Oracle& oracle,
                 const std::vector<std::string>& ids) {
    if (ids.size() != oracle.pmf.size())
        throw std::invalid_argument("save_oracle: id count does not match oracle size");
    std::ofstream out(path);
    if (!out) throw DataError("cannot write oracle file '" + path + "'");
    for (size_t i = 0; i < ids.size(); ++i) {
        json j{{"id", ids[i]}, {"pmf", oracle.pmf[i]}};
        out << j.dump() << "\n";
    }
}

Oracle load_oracle(const std::string& path, TaskType task_type, int pmf_offset) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open oracle file '" + path + "'");
    Oracle oracle;
    oracle.task_type = task_type;
    oracle.pmf_offset = pmf_offset;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            auto j = json::parse(line);
            oracle.pmf.push_back(j.at("pmf").get<std::vector<double>>());
        } catch (const json::exception& e) {
            throw DataError("invalid oracle record at " + path + ":" + std::to_string(line_no) +
                            ": " + e.what());
        }
    }
    return oracle;
}

std::array<std::vector<size_t>, 3> split_indices(size_t n, uint64_t seed) {
    RandomStream rng(mix_seed(seed, 91));
    auto perm = rng.permutation(n);
    size_t n_train = n * 8 / 10;
    size_t n_valid = n / 10;
    std::array<std::vector<size_t>, 3> out;
    out[0].assign(perm.begin(), perm.begin() + n_train);
    out[1].assign(perm.begin() + n_train, perm.begin() + n_train + n_valid);
    out[2].assign(perm.begin() + n_train + n_valid, perm.end());
    for (auto& part : out) std::sort(part.begin(), part.end());
    return out;
}

std::array<Corpus, 3> split_corpus(const Corpus& corpus, uint64_t seed) {
    auto idx = split_indices(corpus.size(), seed);
    std::array<Corpus, 3> out;
    for (size_t s = 0; s < 3; ++s) {
        out[s].task_type = corpus.task_type;
        out[s].scale = corpus.scale;
        out[s].num_categories = corpus.num_categories;
        out[s].feature_dim = corpus.feature_dim;
        for (size_t i : idx[s]) out[s].examples.push_back(corpus.examples[i]);
    }
    return out;
}

}  // namespace annosim
