#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kasper/features.hpp"
#include "kasper/model.hpp"

namespace kasper {

// Model under attribution: maps one feature vector to a scalar output.
using EvalFn = std::function<double(const Eigen::VectorXd&)>;

// Exact Shapley attribution by full subset enumeration with the classical
// combinatorial weights. Feature "absence" replaces the coordinate with the
// baseline value. Limited to 16 features (2^|F| model calls); beyond that a
// parameter_error directs the caller to mc_shapley.
Eigen::VectorXd exact_shapley(const EvalFn& f, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& baseline);

// Monte Carlo permutation estimator: each of N permutations contributes one
// marginal per feature; the estimate is the mean. Deterministic in `seed`.
Eigen::VectorXd mc_shapley(const EvalFn& f, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& baseline, int n_permutations,
                           std::uint64_t seed);

// Exponential-decay weighting of a T x F attribution history:
// w_t = gamma^(T-t) / sum_s gamma^(T-s), phi_tilde = sum_t w_t phi^t.
Eigen::VectorXd temporal_weight(const Eigen::MatrixXd& phi_series, double gamma);

struct AttributionConfig {
    int n_samples = 100;   // Monte Carlo permutations per evaluation
    double gamma = 0.9;    // temporal decay
    int window = 30;       // T most-confident samples per regime
    int top_m = 3;         // features per rule
    std::uint64_t seed = 42;

    void validate() const;
};

struct RegimeRule {
    int regime = 0;
    bool insufficient_data = false;
    std::vector<std::string> feature_names;     // top_m, by descending |phi|
    std::vector<double> phi;                     // matching weighted attributions
    Eigen::VectorXd phi_all;                     // weighted attribution per feature
    Eigen::VectorXd phi_abs_mean;                // mean |phi| per feature across samples
    Eigen::VectorXd phi_std;                     // std per feature across samples
    double mean_predicted_return = 0.0;          // return units
    long n_samples = 0;
    std::string rule_string;                     // "Regime k: A + B + C -> Y"
};

struct RegimeRules {
    std::vector<RegimeRule> rules;
};

// Rule extraction over the rows of `fm` tagged with `split`: per regime, the
// window of most-confident assigned samples (all of them when fewer than the
// window) is attributed with mc_shapley in time order, temporally weighted,
// and summarized as a top-m rule. Attributions are computed on the
// inverse-transformed (return-unit) forecast with the standardized-zero
// baseline.
RegimeRules extract_rules(const KasperModel& model, const PipelineState& pipe,
                          const FeatureMatrix& fm, Split split, const AttributionConfig& cfg);

nlohmann::json rules_to_json(const RegimeRules& rules);
void write_attribution_csv(const RegimeRules& rules, const std::vector<std::string>& names,
                           const std::string& path, const std::string& comment = "");

}  // namespace kasper
