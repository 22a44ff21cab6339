#pragma once

#include "kasper/features.hpp"
#include "kasper/model.hpp"

namespace kasper {

// Re-run feature engineering on a frame and apply a previously fitted
// selection + scaling state (no refitting).
FeatureMatrix apply_pipeline_state(const MarketFrame& frame, const PipelineState& state);

// Full fit path: engineer -> split -> select -> standardize.
FeatureMatrix fit_pipeline(const MarketFrame& frame, double train_frac, double val_frac, int k_best);

// Rows of one split gathered into dense arrays.
struct SplitView {
    Eigen::MatrixXd x;
    Eigen::VectorXd y;
    std::vector<Date> dates;
};
SplitView gather_split(const FeatureMatrix& fm, Split s);

}  // namespace kasper
