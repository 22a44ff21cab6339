#include "kasper/shapley.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "kasper/errors.hpp"
#include "kasper/metrics.hpp"
#include "kasper/rng.hpp"

namespace kasper {

Eigen::VectorXd exact_shapley(const EvalFn& f, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& baseline) {
    const int nf = static_cast<int>(x.size());
    if (baseline.size() != x.size()) throw shape_error("exact_shapley: baseline size mismatch");
    if (nf > 16) {
        throw parameter_error("exact_shapley enumerates 2^" + std::to_string(nf) +
                              " subsets; use mc_shapley above 16 features");
    }
    // factorials up to 16! are exact in double
    std::vector<double> fact(static_cast<std::size_t>(nf) + 1, 1.0);
    for (int i = 1; i <= nf; ++i) fact[static_cast<std::size_t>(i)] = fact[static_cast<std::size_t>(i - 1)] * i;

    const std::uint32_t n_masks = 1u << nf;
    std::vector<double> value(n_masks);
    Eigen::VectorXd probe(nf);
    for (std::uint32_t mask = 0; mask < n_masks; ++mask) {
        for (int j = 0; j < nf; ++j) probe(j) = (mask >> j) & 1u ? x(j) : baseline(j);
        value[mask] = f(probe);
    }

    Eigen::VectorXd phi = Eigen::VectorXd::Zero(nf);
    for (std::uint32_t mask = 0; mask < n_masks; ++mask) {
        const int s = __builtin_popcount(mask);
        const double w = fact[static_cast<std::size_t>(s)] *
                         fact[static_cast<std::size_t>(nf - s - 1)] /
                         fact[static_cast<std::size_t>(nf)];
        for (int j = 0; j < nf; ++j) {
            if ((mask >> j) & 1u) continue;
            phi(j) += w * (value[mask | (1u << j)] - value[mask]);
        }
    }
    return phi;
}

Eigen::VectorXd mc_shapley(const EvalFn& f, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& baseline, int n_permutations,
                           std::uint64_t seed) {
    const int nf = static_cast<int>(x.size());
    if (baseline.size() != x.size()) throw shape_error("mc_shapley: baseline size mismatch");
    if (n_permutations < 1) throw parameter_error("mc_shapley needs N >= 1");

    Rng rng(seed);
    std::vector<int> perm(static_cast<std::size_t>(nf));
    std::iota(perm.begin(), perm.end(), 0);
    Eigen::VectorXd phi = Eigen::VectorXd::Zero(nf);
    Eigen::VectorXd probe(nf);
    for (int it = 0; it < n_permutations; ++it) {
        rng.shuffle(perm);
        probe = baseline;
        double prev = f(probe);
        for (int j : perm) {
            probe(j) = x(j);
            const double cur = f(probe);
            phi(j) += cur - prev;
            prev = cur;
        }
    }
    return phi / static_cast<double>(n_permutations);
}

Eigen::VectorXd temporal_weight(const Eigen::MatrixXd& phi_series, double gamma) {
    if (phi_series.rows() < 1) throw insufficient_data_error("temporal_weight: empty series");
    if (gamma <= 0.0 || gamma >= 1.0) throw parameter_error("gamma must lie in (0, 1)");
    const Eigen::Index t_len = phi_series.rows();
    Eigen::VectorXd w(t_len);
    for (Eigen::Index t = 0; t < t_len; ++t) {
        // rows are ordered oldest..newest; t is 1-based in the decay exponent
        w(t) = std::pow(gamma, static_cast<double>(t_len - (t + 1)));
    }
    w /= w.sum();
    return phi_series.transpose() * w;
}

void AttributionConfig::validate() const {
    if (n_samples < 1) throw parameter_error("attribution n_samples must be >= 1");
    if (gamma <= 0.0 || gamma >= 1.0) throw parameter_error("gamma must lie in (0, 1)");
    if (window < 1) throw parameter_error("attribution window must be >= 1");
    if (top_m < 1) throw parameter_error("top_m must be >= 1");
}

namespace {

std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

}  // namespace

RegimeRules extract_rules(const KasperModel& model, const PipelineState& pipe,
                          const FeatureMatrix& fm, Split split, const AttributionConfig& cfg) {
    cfg.validate();
    if (!fm.scaled) throw contract_error("extract_rules expects standardized features");
    const int k = model.config().detector.n_regimes;
    const int nf = static_cast<int>(fm.n_features());

    auto rows = fm.rows_in(split);
    if (rows.empty()) throw insufficient_data_error("extract_rules: no rows in requested split");
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), nf);
    for (std::size_t i = 0; i < rows.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = fm.X.row(rows[i]);
    const Eigen::MatrixXd probs = model.predict_probs(x);

    // Return-unit forecast with standardized-zero (train-mean) baseline.
    const EvalFn f = [&](const Eigen::VectorXd& v) {
        const Eigen::MatrixXd row = v.transpose();
        return pipe.target_scaler.inverse1(model.predict(row)(0));
    };
    const Eigen::VectorXd baseline = Eigen::VectorXd::Zero(nf);

    RegimeRules out;
    for (int regime = 0; regime < k; ++regime) {
        RegimeRule rule;
        rule.regime = regime;
        std::vector<Eigen::Index> assigned;
        for (Eigen::Index r = 0; r < probs.rows(); ++r) {
            if (argmax_lowest(probs.row(r).transpose()) == regime) assigned.push_back(r);
        }
        if (assigned.empty()) {
            rule.insufficient_data = true;
            rule.rule_string = "Regime " + std::to_string(regime) + ": insufficient data";
            out.rules.push_back(std::move(rule));
            continue;
        }
        // most confident assigned samples, then back to time order
        std::stable_sort(assigned.begin(), assigned.end(), [&](Eigen::Index a, Eigen::Index b) {
            return probs(a, regime) > probs(b, regime);
        });
        if (static_cast<int>(assigned.size()) > cfg.window) {
            assigned.resize(static_cast<std::size_t>(cfg.window));
        }
        std::sort(assigned.begin(), assigned.end());

        const auto t_len = static_cast<Eigen::Index>(assigned.size());
        Eigen::MatrixXd phi_series(t_len, nf);
        double mean_pred = 0.0;
        for (Eigen::Index s = 0; s < t_len; ++s) {
            const Eigen::VectorXd sample = x.row(assigned[static_cast<std::size_t>(s)]).transpose();
            phi_series.row(s) = mc_shapley(f, sample, baseline, cfg.n_samples,
                                           mix_seed(cfg.seed, static_cast<std::uint64_t>(regime),
                                                    static_cast<std::uint64_t>(s)))
                                    .transpose();
            mean_pred += f(sample);
        }
        mean_pred /= static_cast<double>(t_len);

        rule.phi_all = temporal_weight(phi_series, cfg.gamma);
        rule.phi_abs_mean = phi_series.array().abs().colwise().mean().transpose();
        rule.phi_std.resize(nf);
        for (int j = 0; j < nf; ++j) rule.phi_std(j) = sample_std(phi_series.col(j));
        rule.n_samples = t_len;
        rule.mean_predicted_return = mean_pred;

        std::vector<int> order(static_cast<std::size_t>(nf));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return std::abs(rule.phi_all(a)) > std::abs(rule.phi_all(b));
        });
        const int m = std::min(cfg.top_m, nf);
        std::string rhs;
        for (int i = 0; i < m; ++i) {
            const int j = order[static_cast<std::size_t>(i)];
            rule.feature_names.push_back(fm.names[static_cast<std::size_t>(j)]);
            rule.phi.push_back(rule.phi_all(j));
            if (i > 0) rhs += " + ";
            rhs += fm.names[static_cast<std::size_t>(j)];
        }
        rule.rule_string = "Regime " + std::to_string(regime) + ": " + rhs + " -> " +
                           format_value(rule.mean_predicted_return);
        out.rules.push_back(std::move(rule));
    }
    return out;
}

nlohmann::json rules_to_json(const RegimeRules& rules) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rules.rules) {
        nlohmann::json j;
        j["regime"] = r.regime;
        j["insufficient_data"] = r.insufficient_data;
        j["rule_string"] = r.rule_string;
        j["mean_predicted_return"] = r.mean_predicted_return;
        j["n_samples"] = r.n_samples;
        nlohmann::json feats = nlohmann::json::array();
        for (std::size_t i = 0; i < r.feature_names.size(); ++i) {
            feats.push_back({{"name", r.feature_names[i]}, {"phi", r.phi[i]}});
        }
        j["features"] = std::move(feats);
        arr.push_back(std::move(j));
    }
    return {{"rules", arr}};
}

void write_attribution_csv(const RegimeRules& rules, const std::vector<std::string>& names,
                           const std::string& path, const std::string& comment) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write '" + path + "'");
    if (!comment.empty()) out << "# " << comment << '\n';
    out << "regime,feature,phi_weighted,share,phi_abs_mean,phi_std\n";
    out.precision(12);
    for (const auto& r : rules.rules) {
        if (r.insufficient_data) continue;
        const double total = r.phi_all.array().abs().sum();
        for (std::size_t j = 0; j < names.size(); ++j) {
            const auto ji = static_cast<Eigen::Index>(j);
            out << r.regime << ',' << names[j] << ',' << r.phi_all(ji) << ','
                << (total > 0.0 ? std::abs(r.phi_all(ji)) / total : 0.0) << ','
                << r.phi_abs_mean(ji) << ',' << r.phi_std(ji) << '\n';
        }
    }
    if (!out) throw io_error("short write to '" + path + "'");
}

}  // namespace kasper
