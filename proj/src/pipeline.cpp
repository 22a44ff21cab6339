#include "kasper/pipeline.hpp"

#include "kasper/errors.hpp"

namespace kasper {

FeatureMatrix apply_pipeline_state(const MarketFrame& frame, const PipelineState& state) {
    FeatureMatrix fm = engineer_features(frame);
    if (!state.selected.empty()) {
        const auto k = static_cast<Eigen::Index>(state.selected.size());
        Eigen::MatrixXd x(fm.n_rows(), k);
        std::vector<std::string> names(state.selected.size());
        for (Eigen::Index j = 0; j < k; ++j) {
            const int src = state.selected[static_cast<std::size_t>(j)];
            if (src < 0 || src >= fm.n_features()) {
                throw schema_error("pipeline state selects feature index " + std::to_string(src) +
                                   " outside the engineered set");
            }
            x.col(j) = fm.X.col(src);
            names[static_cast<std::size_t>(j)] = fm.names[static_cast<std::size_t>(src)];
        }
        fm.X = std::move(x);
        fm.names = std::move(names);
        fm.selected = state.selected;
    }
    if (!state.scaler.fitted || !state.target_scaler.fitted) {
        throw schema_error("pipeline state has no fitted scaler");
    }
    if (state.scaler.mean.size() != fm.n_features()) {
        throw schema_error("pipeline scaler width does not match selected features");
    }
    for (Eigen::Index c = 0; c < fm.n_features(); ++c) {
        const double m = state.scaler.mean(c);
        const double sd = state.scaler.std(c);
        for (Eigen::Index r = 0; r < fm.n_rows(); ++r) {
            fm.X(r, c) = sd > 0.0 ? (fm.X(r, c) - m) / sd : 0.0;
        }
    }
    for (Eigen::Index r = 0; r < fm.n_rows(); ++r) {
        fm.y(r) = state.target_scaler.transform1(fm.y(r));
    }
    fm.scaler = state.scaler;
    fm.target_scaler = state.target_scaler;
    fm.scaled = true;
    return fm;
}

FeatureMatrix fit_pipeline(const MarketFrame& frame, double train_frac, double val_frac,
                           int k_best) {
    FeatureMatrix fm = engineer_features(frame);
    temporal_split(fm, train_frac, val_frac);
    select_k_best(fm, k_best);
    standardize(fm);
    return fm;
}

SplitView gather_split(const FeatureMatrix& fm, Split s) {
    const auto rows = fm.rows_in(s);
    SplitView v;
    v.x.resize(static_cast<Eigen::Index>(rows.size()), fm.n_features());
    v.y.resize(static_cast<Eigen::Index>(rows.size()));
    v.dates.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        v.x.row(static_cast<Eigen::Index>(i)) = fm.X.row(rows[i]);
        v.y(static_cast<Eigen::Index>(i)) = fm.y(rows[i]);
        v.dates.push_back(fm.dates[static_cast<std::size_t>(rows[i])]);
    }
    return v;
}

}  // namespace kasper
