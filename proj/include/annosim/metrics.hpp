#pragma once

#include <optional>
#include <string>
#include <vector>

#include "annosim/icnf.hpp"
#include "annosim/scnf.hpp"

namespace annosim {

/// One test item's human ratings next to its simulated ratings.
struct OrdinalEvalPair {
    std::vector<int> human;
    std::vector<int> simulated;
};

/// One test item's human labels (one-hot rows) next to simulated
/// categorical distributions.
struct CategoricalEvalPair {
    std::vector<std::vector<double>> human;
    std::vector<std::vector<double>> simulated;
};

struct StdMetrics {
    double rmse_std = 0.0;
    double mae_std = 0.0;
    double err_avg_std = 0.0;
    double mean_std_human = 0.0;
    double mean_std_sim = 0.0;
};

/// RMSE between per-item simulated and human annotation means (ordinal).
double rmse_of_means(const std::vector<OrdinalEvalPair>& pairs);

/// Accuracy of the argmax of the mean simulated distribution against the
/// strict-plurality human vote; items without a strict plurality are
/// excluded. Returns (accuracy, number of items with a majority).
std::pair<double, size_t> majority_accuracy(const std::vector<CategoricalEvalPair>& pairs);

/// Per-item population standard deviations compared across the corpus:
/// RMSE, MAE and the error of the item-averaged stds.
StdMetrics std_metrics(const std::vector<OrdinalEvalPair>& pairs);
StdMetrics std_metrics(const std::vector<CategoricalEvalPair>& pairs);

/// Fleiss's kappa over per-item category votes; handles unequal rater counts
/// via per-item n_i(n_i - 1) pair counts and pooled chance proportions.
/// Every item needs at least two raters.
double fleiss_kappa(const std::vector<std::vector<int>>& item_votes, size_t num_categories);

double kappa_error(double human_kappa, double sim_kappa);

/// Mean negative log midpoint likelihood of the human ratings.
double nll_all_ordinal(const IcnfModel& model, const Corpus& corpus);

/// Cross entropy between the averaged label and the averaged sample, the
/// Monte-Carlo estimator of the categorical NLL. Pure form plus a wrapper
/// that draws the marginals from a model.
double nll_all_categorical(const std::vector<std::vector<double>>& avg_labels,
                           const std::vector<std::vector<double>>& marginals);
double nll_all_categorical(const ScnfModel& model, const Corpus& corpus, size_t q_samples,
                           RandomStream& rng);

/// The full report; fields that do not apply to the task stay unset.
struct MetricsReport {
    std::optional<double> rmse_mean;
    std::optional<double> acc;
    double nll_all = 0.0;
    double rmse_std = 0.0;
    double mae_std = 0.0;
    double err_avg_std = 0.0;
    double mean_std_human = 0.0;
    double mean_std_sim = 0.0;
    std::optional<double> kappa_human;
    std::optional<double> kappa_sim;
    std::optional<double> kappa_err;
    size_t n_items = 0;
    size_t n_majority_items = 0;

    /// Enforces err_avg_std <= mae_std <= rmse_std (up to rounding).
    void validate() const;
    std::string to_json() const;
};

MetricsReport evaluate_ordinal(const std::vector<OrdinalEvalPair>& pairs, const IcnfModel& model,
                               const Corpus& corpus);
/// `marginals` must align with `pairs`; hard simulated votes for kappa are
/// the argmax of each simulated distribution.
MetricsReport evaluate_categorical(const std::vector<CategoricalEvalPair>& pairs,
                                   const std::vector<std::vector<double>>& marginals);

}  // namespace annosim
