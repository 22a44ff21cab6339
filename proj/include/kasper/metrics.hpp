#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace kasper {

struct RegressionMetrics {
    double mse = 0.0;
    double rmse = 0.0;
    double mae = 0.0;
    std::optional<double> r2;  // empty when the target has zero variance
};

RegressionMetrics regression_metrics(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat);

// Unit long/short by prediction sign: r_t = sign(yhat_t) * y_t, with
// sign(0) = 0 (no position).
Eigen::VectorXd strategy_returns(const Eigen::VectorXd& yhat, const Eigen::VectorXd& y);

struct TradingMetrics {
    std::optional<double> sharpe;          // annualized; empty on zero return variance
    double direction_accuracy = 0.0;       // percent over all days
    double win_rate = 0.0;                 // percent of profitable trades
    double max_drawdown = 0.0;             // fractional, <= 0
    double cumulative_return = 0.0;        // fractional
    long total_trades = 0;
    long profitable_trades = 0;
    double avg_return = 0.0;               // mean strategy return over trade days
    double avg_win = 0.0;
    double avg_loss = 0.0;
    std::optional<double> profit_factor;   // empty when there are no losing trades
    std::vector<std::string> flags;
};

// Financial metrics under the sign-position convention. `rf` is the per-day
// risk-free rate (annualization multiplies mean and std by sqrt(days)).
TradingMetrics trading_metrics(const Eigen::VectorXd& yhat, const Eigen::VectorXd& y,
                               double rf = 0.0, int trading_days = 252);

// Path helpers shared with the report layer.
double cumulative_return(const Eigen::VectorXd& returns);
double max_drawdown(const Eigen::VectorXd& returns);  // min_t V_t / peak_t - 1
std::optional<double> sharpe_ratio(const Eigen::VectorXd& returns, double rf, int trading_days);

double sample_std(const Eigen::VectorXd& v);  // (n-1) convention
double sample_mean(const Eigen::VectorXd& v);

}  // namespace kasper
