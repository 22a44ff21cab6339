#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "kasper/market_frame.hpp"

namespace kasper {

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

const char* split_name(Split s);

// Per-column affine scaling statistics fitted on the train split.
struct Scaler {
    Eigen::VectorXd mean;
    Eigen::VectorXd std;  // sample (n-1) convention; 0 marks a constant column
    bool fitted = false;

    Eigen::VectorXd transform(const Eigen::VectorXd& x) const;
    Eigen::VectorXd inverse(const Eigen::VectorXd& z) const;
    double transform1(double x) const { return std(0) > 0.0 ? (x - mean(0)) / std(0) : 0.0; }
    double inverse1(double z) const { return z * std(0) + mean(0); }
};

// Engineered per-day feature vectors with the next-day-return target.
struct FeatureMatrix {
    std::vector<std::string> names;
    Eigen::MatrixXd X;       // rows x features
    Eigen::VectorXd y;       // next-day fractional return (same units as scaling state)
    std::vector<Date> dates;
    std::vector<Split> split;
    Scaler scaler;           // per-feature, train-fitted
    Scaler target_scaler;    // 1-dim
    bool scaled = false;
    std::vector<int> selected;  // indices into the original feature set, empty = all

    Eigen::Index n_rows() const { return X.rows(); }
    Eigen::Index n_features() const { return X.cols(); }

    std::vector<Eigen::Index> rows_in(Split s) const;
    FeatureMatrix slice_rows(Eigen::Index begin, Eigen::Index end) const;
};

// Names of the 15 engineered features, in column order.
const std::vector<std::string>& feature_names();

// Build the 15-feature matrix plus target from an ingested frame. Rows
// lacking full history for the longest rolling window, and the final row
// (no next-day close), are dropped. Throws insufficient_data_error when
// nothing remains.
FeatureMatrix engineer_features(const MarketFrame& frame);

// Tag contiguous chronological train/val/test blocks:
// train = floor(f0*N), val = floor(f1*N), test = remainder.
void temporal_split(FeatureMatrix& fm, double train_frac = 0.70, double val_frac = 0.15);

// Univariate F-statistics F = r^2/(1-r^2)*(n-2) of each feature against the
// target over train rows. Zero-variance features score 0; |r| = 1 scores +inf.
Eigen::VectorXd f_regression_scores(const FeatureMatrix& fm);

// Keep the k features with the largest train-split F-statistic (ties by
// lower index). Applies to all splits. Requires split tags.
void select_k_best(FeatureMatrix& fm, int k);

// Z-score all columns and the target with train-split statistics. Constant
// columns transform to zeros.
void standardize(FeatureMatrix& fm);

// Eq-style n x 3 state matrix of one-day log ratios ending at row t
// (default: last row). Row i holds ln(close/high/low ratios) between days
// t-i and t-i-1.
Eigen::MatrixXd build_state_matrix(const MarketFrame& frame, int n, std::optional<std::size_t> t = {});

// Columnar text bundle (CSV of date,split,features...,target) with a JSON
// sidecar (<path>.meta.json) holding names, selection, scaler statistics and
// split boundaries.
void save_bundle(const FeatureMatrix& fm, const std::string& path);
FeatureMatrix load_bundle(const std::string& path);

}  // namespace kasper
