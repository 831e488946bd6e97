#include "annosim/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "annosim/common.hpp"
#include "json.hpp"

namespace annosim {

namespace {

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double population_std(const std::vector<double>& v) {
    double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

std::vector<double> to_double(const std::vector<int>& v) {
    return std::vector<double>(v.begin(), v.end());
}

// sigma_i for categorical annotations: average over categories of the
// per-category population std across raters
double categorical_item_std(const std::vector<std::vector<double>>& rows) {
    size_t k = rows[0].size();
    double acc = 0.0;
    for (size_t c = 0; c < k; ++c) {
        std::vector<double> col(rows.size());
        for (size_t m = 0; m < rows.size(); ++m) col[m] = rows[m][c];
        acc += population_std(col);
    }
    return acc / static_cast<double>(k);
}

StdMetrics aggregate_std(const std::vector<double>& sigma, const std::vector<double>& s) {
    StdMetrics out;
    size_t n = sigma.size();
    for (size_t i = 0; i < n; ++i) {
        double d = sigma[i] - s[i];
        out.rmse_std += d * d;
        out.mae_std += std::abs(d);
    }
    out.rmse_std = std::sqrt(out.rmse_std / static_cast<double>(n));
    out.mae_std /= static_cast<double>(n);
    out.mean_std_human = mean_of(sigma);
    out.mean_std_sim = mean_of(s);
    out.err_avg_std = std::abs(out.mean_std_human - out.mean_std_sim);
    return out;
}

}  // namespace

double rmse_of_means(const std::vector<OrdinalEvalPair>& pairs) {
    if (pairs.empty()) throw std::invalid_argument("rmse_of_means: empty corpus");
    double acc = 0.0;
    for (const auto& p : pairs) {
        if (p.human.empty() || p.simulated.empty())
            throw std::invalid_argument("rmse_of_means: item with no annotations");
        double d = mean_of(to_double(p.simulated)) - mean_of(to_double(p.human));
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(pairs.size()));
}

std::pair<double, size_t> majority_accuracy(const std::vector<CategoricalEvalPair>& pairs) {
    if (pairs.empty()) throw std::invalid_argument("majority_accuracy: empty corpus");
    size_t n_majority = 0, n_correct = 0;
    for (const auto& p : pairs) {
        if (p.human.empty() || p.simulated.empty())
            throw std::invalid_argument("majority_accuracy: item with no annotations");
        size_t k = p.human[0].size();
        std::vector<double> votes(k, 0.0);
        for (const auto& row : p.human)
            for (size_t c = 0; c < k; ++c) votes[c] += row[c];
        size_t best = 0;
        bool tie = false;
        for (size_t c = 1; c < k; ++c) {
            if (votes[c] > votes[best]) {
                best = c;
                tie = false;
            } else if (votes[c] == votes[best]) {
                tie = true;
            }
        }
        if (tie) continue;  // no strict plurality
        ++n_majority;
        std::vector<double> mean_sim(k, 0.0);
        for (const auto& row : p.simulated)
            for (size_t c = 0; c < k; ++c) mean_sim[c] += row[c];
        size_t pred = static_cast<size_t>(
            std::max_element(mean_sim.begin(), mean_sim.end()) - mean_sim.begin());
        if (pred == best) ++n_correct;
    }
    double acc = n_majority == 0 ? 0.0 : static_cast<double>(n_correct) / n_majority;
    return {acc, n_majority};
}

StdMetrics std_metrics(const std::vector<OrdinalEvalPair>& pairs) {
    if (pairs.empty()) throw std::invalid_argument("std_metrics: empty corpus");
    std::vector<double> sigma, s;
    for (const auto& p : pairs) {
        sigma.push_back(population_std(to_double(p.human)));
        s.push_back(population_std(to_double(p.simulated)));
    }
    return aggregate_std(sigma, s);
}

StdMetrics std_metrics(const std::vector<CategoricalEvalPair>& pairs) {
    if (pairs.empty()) throw std::invalid_argument("std_metrics: empty corpus");
    std::vector<double> sigma, s;
    for (const auto& p : pairs) {
        sigma.push_back(categorical_item_std(p.human));
        s.push_back(categorical_item_std(p.simulated));
    }
    return aggregate_std(sigma, s);
}

double fleiss_kappa(const std::vector<std::vector<int>>& item_votes, size_t num_categories) {
    if (item_votes.empty()) throw std::invalid_argument("fleiss_kappa: no items");
    double p_bar = 0.0;
    std::vector<double> pooled(num_categories, 0.0);
    double total_votes = 0.0;
    for (const auto& votes : item_votes) {
        size_t n = votes.size();
        if (n < 2) throw std::invalid_argument("fleiss_kappa: every item needs >= 2 raters");
        std::vector<double> counts(num_categories, 0.0);
        for (int c : votes) {
            if (c < 0 || static_cast<size_t>(c) >= num_categories)
                throw std::invalid_argument("fleiss_kappa: category out of range");
            counts[static_cast<size_t>(c)] += 1.0;
            pooled[static_cast<size_t>(c)] += 1.0;
        }
        total_votes += static_cast<double>(n);
        double agree = 0.0;
        for (double cnt : counts) agree += cnt * (cnt - 1.0);
        p_bar += agree / (static_cast<double>(n) * static_cast<double>(n - 1));
    }
    p_bar /= static_cast<double>(item_votes.size());
    double pe = 0.0;
    for (double cnt : pooled) {
        double frac = cnt / total_votes;
        pe += frac * frac;
    }
    if (std::abs(1.0 - pe) < 1e-15) {
        if (p_bar >= 1.0 - 1e-15) return 1.0;  // all raters in the single used category
        throw NumericError("fleiss_kappa: chance agreement is 1 but agreement is not perfect");
    }
    return (p_bar - pe) / (1.0 - pe);
}

double kappa_error(double human_kappa, double sim_kappa) {
    return std::abs(sim_kappa - human_kappa);
}

double nll_all_ordinal(const IcnfModel& model, const Corpus& corpus) {
    if (corpus.examples.empty()) throw std::invalid_argument("nll_all_ordinal: empty corpus");
    NoGradGuard ng;
    double acc = 0.0;
    for (const auto& ex : corpus.examples) acc += icnf_loss(model, ex).value();
    return acc / static_cast<double>(corpus.size());
}

double nll_all_categorical(const std::vector<std::vector<double>>& avg_labels,
                           const std::vector<std::vector<double>>& marginals) {
    if (avg_labels.empty() || avg_labels.size() != marginals.size())
        throw std::invalid_argument("nll_all_categorical: size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < avg_labels.size(); ++i) {
        double ce = 0.0;
        for (size_t c = 0; c < avg_labels[i].size(); ++c) {
            if (avg_labels[i][c] == 0.0) continue;
            if (marginals[i][c] <= 0.0)
                throw NumericError("nll_all_categorical: zero marginal with label mass");
            ce -= avg_labels[i][c] * std::log(marginals[i][c]);
        }
        acc += ce;
    }
    return acc / static_cast<double>(avg_labels.size());
}

double nll_all_categorical(const ScnfModel& model, const Corpus& corpus, size_t q_samples,
                           RandomStream& rng) {
    std::vector<std::vector<double>> avg_labels, marginals;
    for (size_t i = 0; i < corpus.size(); ++i) {
        auto labels = corpus.simplex_labels(i);
        std::vector<double> avg(model.num_categories, 0.0);
        for (const auto& l : labels)
            for (size_t c = 0; c < l.size(); ++c) avg[c] += l[c];
        for (auto& v : avg) v /= static_cast<double>(labels.size());
        avg_labels.push_back(std::move(avg));
        auto x = Tensor::from_data({corpus.examples[i].features.size()},
                                   corpus.examples[i].features);
        marginals.push_back(scnf_marginal_mc(model, x, q_samples, rng));
    }
    return nll_all_categorical(avg_labels, marginals);
}

void MetricsReport::validate() const {
    const double slack = 1e-9;
    if (err_avg_std > mae_std + slack || mae_std > rmse_std + slack)
        throw NumericError("MetricsReport: std metric ordering violated");
}

std::string MetricsReport::to_json() const {
    nlohmann::json j;
    auto put = [&](const char* key, const std::optional<double>& v) {
        if (v)
            j[key] = *v;
        else
            j[key] = nullptr;
    };
    put("rmse_mean", rmse_mean);
    put("acc", acc);
    j["nll_all"] = nll_all;
    j["rmse_std"] = rmse_std;
    j["mae_std"] = mae_std;
    j["err_avg_std"] = err_avg_std;
    j["mean_std_human"] = mean_std_human;
    j["mean_std_sim"] = mean_std_sim;
    put("kappa_human", kappa_human);
    put("kappa_sim", kappa_sim);
    put("kappa_err", kappa_err);
    j["n_items"] = n_items;
    j["n_majority_items"] = n_majority_items;
    return j.dump();
}

MetricsReport evaluate_ordinal(const std::vector<OrdinalEvalPair>& pairs, const IcnfModel& model,
                               const Corpus& corpus) {
    MetricsReport report;
    report.rmse_mean = rmse_of_means(pairs);
    report.nll_all = nll_all_ordinal(model, corpus);
    auto sm = std_metrics(pairs);
    report.rmse_std = sm.rmse_std;
    report.mae_std = sm.mae_std;
    report.err_avg_std = sm.err_avg_std;
    report.mean_std_human = sm.mean_std_human;
    report.mean_std_sim = sm.mean_std_sim;
    report.n_items = pairs.size();
    report.validate();
    return report;
}

MetricsReport evaluate_categorical(const std::vector<CategoricalEvalPair>& pairs,
                                   const std::vector<std::vector<double>>& marginals) {
    if (pairs.size() != marginals.size())
        throw std::invalid_argument("evaluate_categorical: marginals must align with pairs");
    MetricsReport report;
    auto [acc, n_majority] = majority_accuracy(pairs);
    report.acc = acc;
    report.n_majority_items = n_majority;
    report.n_items = pairs.size();

    std::vector<std::vector<double>> avg_labels;
    std::vector<std::vector<int>> human_votes, sim_votes;
    for (const auto& p : pairs) {
        size_t k = p.human[0].size();
        std::vector<double> avg(k, 0.0);
        std::vector<int> hv, sv;
        for (const auto& row : p.human) {
            for (size_t c = 0; c < k; ++c) avg[c] += row[c];
            hv.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) -
                                          row.begin()));
        }
        for (auto& v : avg) v /= static_cast<double>(p.human.size());
        for (const auto& row : p.simulated)
            sv.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) -
                                          row.begin()));
        avg_labels.push_back(std::move(avg));
        human_votes.push_back(std::move(hv));
        sim_votes.push_back(std::move(sv));
    }
    size_t k = pairs[0].human[0].size();
    report.nll_all = nll_all_categorical(avg_labels, marginals);
    report.kappa_human = fleiss_kappa(human_votes, k);
    report.kappa_sim = fleiss_kappa(sim_votes, k);
    report.kappa_err = kappa_error(*report.kappa_human, *report.kappa_sim);

    auto sm = std_metrics(pairs);
    report.rmse_std = sm.rmse_std;
    report.mae_std = sm.mae_std;
    report.err_avg_std = sm.err_avg_std;
    report.mean_std_human = sm.mean_std_human;
    report.mean_std_sim = sm.mean_std_sim;
    report.validate();
    return report;
}

}  // namespace annosim
