#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kasper/features.hpp"
#include "kasper/metrics.hpp"
#include "kasper/model.hpp"
#include "kasper/trainer.hpp"

namespace kasper {

struct WalkForwardConfig {
    int train_len = 252;
    int test_len = 63;
    int n_windows = 0;  // 0 = every feasible window
    int n_runs = 5;
    double val_frac = 0.15;  // tail of each training window held out for early stopping
    int k_best = 8;
    int hidden_dim = 64;
    int n_regimes = 3;
    int n_basis_fns = 8;
    int n_bsplines = 8;
    double theta = 0.01;
    double risk_free = 0.0;
    int trading_days = 252;
    std::uint64_t seed = 42;
    TrainConfig train;  // per-window seed is derived from `seed`
};

struct WindowRun {
    int window = 0;
    int run = 0;
    Date train_begin, train_end, test_begin, test_end;
    RegressionMetrics regression;
    TradingMetrics trading;
    Eigen::VectorXd yhat;  // return units over the test segment
    Eigen::VectorXd y;
};

struct AggregateStat {
    double mean = 0.0;
    double sd = 0.0;  // sample (n-1)
    long n = 0;
};

AggregateStat aggregate(const std::vector<double>& values);

struct BacktestReport {
    std::vector<WindowRun> runs;
    int n_windows = 0;
    int n_runs = 0;
    // per-window across-run stats for the chart quartet
    std::vector<AggregateStat> window_sharpe;
    std::vector<AggregateStat> window_cumulative;
    std::vector<AggregateStat> window_win_rate;
    std::vector<AggregateStat> window_mdd;
    // across all (window, run) samples
    std::map<std::string, AggregateStat> metric_stats;
    // pooled trade statistics: windows concatenated within a run, aggregated
    // across runs
    std::map<std::string, AggregateStat> pooled_stats;
};

// Rolling-origin evaluation: window w trains on rows
// [w*test_len, w*test_len + train_len) and tests on the following test_len
// rows; every window is repeated for n_runs seeds. `engineered` must be the
// unscaled, unsplit output of engineer_features. Throws
// insufficient_data_error naming the maximum feasible window count when the
// request cannot be sized.
BacktestReport walk_forward(const FeatureMatrix& engineered, const WalkForwardConfig& cfg,
                            std::ostream* log = nullptr);

int feasible_windows(Eigen::Index n_rows, int train_len, int test_len);

nlohmann::json backtest_to_json(const BacktestReport& report);
void write_backtest_csv(const BacktestReport& report, const std::string& path,
                        const std::string& comment = "");

}  // namespace kasper
