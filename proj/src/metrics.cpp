#include "kasper/metrics.hpp"

#include <cmath>

#include "kasper/errors.hpp"

namespace kasper {

double sample_mean(const Eigen::VectorXd& v) { return v.mean(); }

double sample_std(const Eigen::VectorXd& v) {
    if (v.size() < 2) return 0.0;
    const double m = v.mean();
    return std::sqrt((v.array() - m).square().sum() / static_cast<double>(v.size() - 1));
}

RegressionMetrics regression_metrics(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat) {
    if (y.size() != yhat.size()) throw shape_error("regression_metrics: length mismatch");
    if (y.size() == 0) throw insufficient_data_error("regression_metrics: empty input");
    RegressionMetrics m;
    const Eigen::ArrayXd err = (yhat - y).array();
    m.mse = err.square().mean();
    m.rmse = std::sqrt(m.mse);
    m.mae = err.abs().mean();
    const double sst = (y.array() - y.mean()).square().sum();
    if (sst > 0.0) {
        m.r2 = 1.0 - err.square().sum() / sst;
    }
    return m;
}

Eigen::VectorXd strategy_returns(const Eigen::VectorXd& yhat, const Eigen::VectorXd& y) {
    if (y.size() != yhat.size()) throw shape_error("strategy_returns: length mismatch");
    Eigen::VectorXd r(y.size());
    for (Eigen::Index t = 0; t < y.size(); ++t) {
        const double s = yhat(t) > 0.0 ? 1.0 : (yhat(t) < 0.0 ? -1.0 : 0.0);
        r(t) = s * y(t);
    }
    return r;
}

double cumulative_return(const Eigen::VectorXd& returns) {
    double v = 1.0;
    for (Eigen::Index t = 0; t < returns.size(); ++t) v *= 1.0 + returns(t);
    return v - 1.0;
}

double max_drawdown(const Eigen::VectorXd& returns) {
    double v = 1.0;
    double peak = 1.0;
    double mdd = 0.0;
    for (Eigen::Index t = 0; t < returns.size(); ++t) {
        v *= 1.0 + returns(t);
        peak = std::max(peak, v);
        mdd = std::min(mdd, v / peak - 1.0);
    }
    return mdd;
}

std::optional<double> sharpe_ratio(const Eigen::VectorXd& returns, double rf, int trading_days) {
    if (returns.size() == 0) throw insufficient_data_error("sharpe: empty return series");
    const double sd = sample_std(returns);
    if (sd == 0.0) return std::nullopt;
    return (returns.mean() - rf) / sd * std::sqrt(static_cast<double>(trading_days));
}

TradingMetrics trading_metrics(const Eigen::VectorXd& yhat, const Eigen::VectorXd& y, double rf,
                               int trading_days) {
    if (y.size() != yhat.size()) throw shape_error("trading_metrics: length mismatch");
    if (y.size() == 0) throw insufficient_data_error("trading_metrics: empty input");
    const Eigen::VectorXd r = strategy_returns(yhat, y);

    TradingMetrics m;
    m.sharpe = sharpe_ratio(r, rf, trading_days);
    if (!m.sharpe) m.flags.push_back("zero_variance_sharpe");
    m.cumulative_return = cumulative_return(r);
    m.max_drawdown = max_drawdown(r);

    long agree = 0;
    double win_sum = 0.0, loss_sum = 0.0, trade_sum = 0.0;
    long wins = 0, losses = 0;
    for (Eigen::Index t = 0; t < y.size(); ++t) {
        const auto sg = [](double x) { return x > 0.0 ? 1 : (x < 0.0 ? -1 : 0); };
        if (sg(yhat(t)) == sg(y(t))) ++agree;
        if (sg(yhat(t)) == 0) continue;  // no position, no trade
        ++m.total_trades;
        trade_sum += r(t);
        if (r(t) > 0.0) {
            ++wins;
            win_sum += r(t);
        } else if (r(t) < 0.0) {
            ++losses;
            loss_sum += r(t);
        }
    }
    m.direction_accuracy = 100.0 * static_cast<double>(agree) / static_cast<double>(y.size());
    m.profitable_trades = wins;
    m.win_rate = m.total_trades > 0
                     ? 100.0 * static_cast<double>(wins) / static_cast<double>(m.total_trades)
                     : 0.0;
    m.avg_return = m.total_trades > 0 ? trade_sum / static_cast<double>(m.total_trades) : 0.0;
    m.avg_win = wins > 0 ? win_sum / static_cast<double>(wins) : 0.0;
    m.avg_loss = losses > 0 ? loss_sum / static_cast<double>(losses) : 0.0;
    if (losses > 0) {
        m.profit_factor = win_sum / std::abs(loss_sum);
    } else {
        m.flags.push_back("no_losing_trades");
    }
    return m;
}

}  // namespace kasper
