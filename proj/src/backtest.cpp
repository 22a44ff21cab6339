#include "kasper/backtest.hpp"

#include <cmath>
#include <fstream>
#include <ostream>

#include "kasper/errors.hpp"
#include "kasper/rng.hpp"

namespace kasper {

AggregateStat aggregate(const std::vector<double>& values) {
    AggregateStat s;
    s.n = static_cast<long>(values.size());
    if (values.empty()) return s;
    Eigen::Map<const Eigen::VectorXd> v(values.data(), static_cast<Eigen::Index>(values.size()));
    s.mean = sample_mean(v);
    s.sd = sample_std(v);
    return s;
}

int feasible_windows(Eigen::Index n_rows, int train_len, int test_len) {
    if (train_len < 1 || test_len < 1) throw parameter_error("window lengths must be >= 1");
    const auto usable = static_cast<long>(n_rows) - train_len;
    return usable < test_len ? 0 : static_cast<int>(usable / test_len);
}

namespace {

struct FittedWindow {
    Eigen::VectorXd yhat;  // return units
    Eigen::VectorXd y;
};

FittedWindow fit_one(const FeatureMatrix& engineered, const WalkForwardConfig& cfg,
                     Eigen::Index start, int window, int run) {
    const Eigen::Index span = cfg.train_len + cfg.test_len;
    FeatureMatrix fm = engineered.slice_rows(start, start + span);
    const auto n_val = static_cast<Eigen::Index>(
        std::floor(cfg.val_frac * static_cast<double>(cfg.train_len)));
    const Eigen::Index n_train = cfg.train_len - n_val;
    if (n_train < 2 || n_val < 1) throw insufficient_data_error("train window too small to split");
    fm.split.assign(static_cast<std::size_t>(span), Split::test);
    for (Eigen::Index i = 0; i < n_train; ++i) fm.split[static_cast<std::size_t>(i)] = Split::train;
    for (Eigen::Index i = n_train; i < cfg.train_len; ++i) {
        fm.split[static_cast<std::size_t>(i)] = Split::val;
    }
    select_k_best(fm, cfg.k_best);
    standardize(fm);

    ModelConfig mc = ModelConfig::with_dims(cfg.k_best, cfg.hidden_dim, cfg.n_regimes);
    mc.forecaster.n_basis_fns = cfg.n_basis_fns;
    mc.forecaster.n_bsplines = cfg.n_bsplines;
    mc.forecaster.theta = cfg.theta;

    TrainConfig tc = cfg.train;
    tc.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(window) + 1,
                       static_cast<std::uint64_t>(run) + 1);

    KasperModel model(mc);
    const auto train_rows = fm.rows_in(Split::train);
    Eigen::MatrixXd train_x(static_cast<Eigen::Index>(train_rows.size()), fm.n_features());
    for (std::size_t i = 0; i < train_rows.size(); ++i) {
        train_x.row(static_cast<Eigen::Index>(i)) = fm.X.row(train_rows[i]);
    }
    model.init(tc.seed, train_x);
    train(model, fm, tc, nullptr);

    const auto test_rows = fm.rows_in(Split::test);
    FittedWindow out;
    out.yhat.resize(static_cast<Eigen::Index>(test_rows.size()));
    out.y.resize(static_cast<Eigen::Index>(test_rows.size()));
    Eigen::MatrixXd test_x(static_cast<Eigen::Index>(test_rows.size()), fm.n_features());
    for (std::size_t i = 0; i < test_rows.size(); ++i) {
        test_x.row(static_cast<Eigen::Index>(i)) = fm.X.row(test_rows[i]);
    }
    const Eigen::VectorXd pred_std = model.predict(test_x);
    for (Eigen::Index i = 0; i < pred_std.size(); ++i) {
        out.yhat(i) = fm.target_scaler.inverse1(pred_std(i));
        out.y(i) = fm.target_scaler.inverse1(fm.y(test_rows[static_cast<std::size_t>(i)]));
    }
    return out;
}

void push(std::map<std::string, std::vector<double>>& acc, const std::string& key, double v) {
    acc[key].push_back(v);
}

}  // namespace

BacktestReport walk_forward(const FeatureMatrix& engineered, const WalkForwardConfig& cfg,
                            std::ostream* log) {
    const int feasible = feasible_windows(engineered.n_rows(), cfg.train_len, cfg.test_len);
    if (feasible < 1) {
        throw insufficient_data_error(
            "not enough rows for any walk-forward window (have " +
            std::to_string(engineered.n_rows()) + ", need " +
            std::to_string(cfg.train_len + cfg.test_len) + "); maximum feasible windows: 0");
    }
    const int n_windows = cfg.n_windows == 0 ? feasible : cfg.n_windows;
    if (n_windows > feasible) {
        throw insufficient_data_error("requested " + std::to_string(cfg.n_windows) +
                                      " windows; maximum feasible windows: " +
                                      std::to_string(feasible));
    }
    if (cfg.n_runs < 1) throw parameter_error("n_runs must be >= 1");

    BacktestReport report;
    report.n_windows = n_windows;
    report.n_runs = cfg.n_runs;

    std::map<std::string, std::vector<double>> flat;
    std::vector<std::vector<double>> win_sharpe(static_cast<std::size_t>(n_windows));
    std::vector<std::vector<double>> win_cum(static_cast<std::size_t>(n_windows));
    std::vector<std::vector<double>> win_wr(static_cast<std::size_t>(n_windows));
    std::vector<std::vector<double>> win_mdd(static_cast<std::size_t>(n_windows));
    std::map<std::string, std::vector<double>> pooled;

    for (int run = 0; run < cfg.n_runs; ++run) {
        std::vector<double> run_yhat, run_y;
        for (int w = 0; w < n_windows; ++w) {
            const Eigen::Index start = static_cast<Eigen::Index>(w) * cfg.test_len;
            WindowRun wr;
            wr.window = w;
            wr.run = run;
            wr.train_begin = engineered.dates[static_cast<std::size_t>(start)];
            wr.train_end = engineered.dates[static_cast<std::size_t>(start + cfg.train_len - 1)];
            wr.test_begin = engineered.dates[static_cast<std::size_t>(start + cfg.train_len)];
            wr.test_end =
                engineered.dates[static_cast<std::size_t>(start + cfg.train_len + cfg.test_len - 1)];
            if (!(wr.train_end < wr.test_begin)) {
                throw contract_error("walk-forward window overlap: test begins at or before "
                                     "the end of its training window");
            }
            FittedWindow fit = fit_one(engineered, cfg, start, w, run);
            wr.regression = regression_metrics(fit.y, fit.yhat);
            wr.trading = trading_metrics(fit.yhat, fit.y, cfg.risk_free, cfg.trading_days);
            wr.yhat = fit.yhat;
            wr.y = fit.y;

            if (wr.trading.sharpe) {
                push(flat, "sharpe", *wr.trading.sharpe);
                win_sharpe[static_cast<std::size_t>(w)].push_back(*wr.trading.sharpe);
            }
            push(flat, "direction_accuracy", wr.trading.direction_accuracy);
            push(flat, "win_rate", wr.trading.win_rate);
            push(flat, "cumulative_return", wr.trading.cumulative_return);
            push(flat, "max_drawdown", wr.trading.max_drawdown);
            push(flat, "mse", wr.regression.mse);
            push(flat, "mae", wr.regression.mae);
            if (wr.regression.r2) push(flat, "r2", *wr.regression.r2);
            if (wr.trading.profit_factor) push(flat, "profit_factor", *wr.trading.profit_factor);
            win_cum[static_cast<std::size_t>(w)].push_back(wr.trading.cumulative_return);
            win_wr[static_cast<std::size_t>(w)].push_back(wr.trading.win_rate);
            win_mdd[static_cast<std::size_t>(w)].push_back(wr.trading.max_drawdown);

            for (Eigen::Index i = 0; i < fit.y.size(); ++i) {
                run_yhat.push_back(fit.yhat(i));
                run_y.push_back(fit.y(i));
            }
            if (log) {
                (*log) << "window " << w << " run " << run << " sharpe "
                       << (wr.trading.sharpe ? *wr.trading.sharpe : 0.0) << " win_rate "
                       << wr.trading.win_rate << "%\n";
            }
            report.runs.push_back(std::move(wr));
        }
        // pooled trade statistics across the run's concatenated test segments
        Eigen::Map<Eigen::VectorXd> py(run_yhat.data(), static_cast<Eigen::Index>(run_yhat.size()));
        Eigen::Map<Eigen::VectorXd> ay(run_y.data(), static_cast<Eigen::Index>(run_y.size()));
        const TradingMetrics pm = trading_metrics(py, ay, cfg.risk_free, cfg.trading_days);
        if (pm.sharpe) push(pooled, "sharpe", *pm.sharpe);
        push(pooled, "direction_accuracy", pm.direction_accuracy);
        push(pooled, "win_rate", pm.win_rate);
        push(pooled, "cumulative_return", pm.cumulative_return);
        push(pooled, "max_drawdown", pm.max_drawdown);
        push(pooled, "total_trades", static_cast<double>(pm.total_trades));
        push(pooled, "profitable_trades", static_cast<double>(pm.profitable_trades));
        push(pooled, "avg_return", pm.avg_return);
        push(pooled, "avg_win", pm.avg_win);
        push(pooled, "avg_loss", pm.avg_loss);
        if (pm.profit_factor) push(pooled, "profit_factor", *pm.profit_factor);
    }

    for (auto& [key, values] : flat) report.metric_stats[key] = aggregate(values);
    for (auto& [key, values] : pooled) report.pooled_stats[key] = aggregate(values);
    for (int w = 0; w < n_windows; ++w) {
        report.window_sharpe.push_back(aggregate(win_sharpe[static_cast<std::size_t>(w)]));
        report.window_cumulative.push_back(aggregate(win_cum[static_cast<std::size_t>(w)]));
        report.window_win_rate.push_back(aggregate(win_wr[static_cast<std::size_t>(w)]));
        report.window_mdd.push_back(aggregate(win_mdd[static_cast<std::size_t>(w)]));
    }
    return report;
}

namespace {

nlohmann::json stat_json(const AggregateStat& s) {
    return {{"mean", s.mean}, {"std", s.sd}, {"n", s.n}};
}

nlohmann::json trading_json(const TradingMetrics& t) {
    nlohmann::json j;
    j["sharpe"] = t.sharpe ? nlohmann::json(*t.sharpe) : nlohmann::json(nullptr);
    j["direction_accuracy"] = t.direction_accuracy;
    j["win_rate"] = t.win_rate;
    j["max_drawdown"] = t.max_drawdown;
    j["cumulative_return"] = t.cumulative_return;
    j["total_trades"] = t.total_trades;
    j["profitable_trades"] = t.profitable_trades;
    j["avg_return"] = t.avg_return;
    j["avg_win"] = t.avg_win;
    j["avg_loss"] = t.avg_loss;
    j["profit_factor"] = t.profit_factor ? nlohmann::json(*t.profit_factor) : nlohmann::json(nullptr);
    if (!t.flags.empty()) j["flags"] = t.flags;
    return j;
}

}  // namespace

nlohmann::json backtest_to_json(const BacktestReport& report) {
    nlohmann::json j;
    j["n_windows"] = report.n_windows;
    j["n_runs"] = report.n_runs;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& wr : report.runs) {
        nlohmann::json r;
        r["window"] = wr.window;
        r["run"] = wr.run;
        r["train_begin"] = format_date(wr.train_begin);
        r["train_end"] = format_date(wr.train_end);
        r["test_begin"] = format_date(wr.test_begin);
        r["test_end"] = format_date(wr.test_end);
        r["trading"] = trading_json(wr.trading);
        r["mse"] = wr.regression.mse;
        r["rmse"] = wr.regression.rmse;
        r["mae"] = wr.regression.mae;
        r["r2"] = wr.regression.r2 ? nlohmann::json(*wr.regression.r2) : nlohmann::json(nullptr);
        rows.push_back(std::move(r));
    }
    j["windows"] = std::move(rows);
    for (const auto& [key, stat] : report.metric_stats) j["metrics"][key] = stat_json(stat);
    for (const auto& [key, stat] : report.pooled_stats) j["pooled"][key] = stat_json(stat);
    auto series = [](const std::vector<AggregateStat>& v) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& s : v) arr.push_back(stat_json(s));
        return arr;
    };
    j["per_window"]["sharpe"] = series(report.window_sharpe);
    j["per_window"]["cumulative_return"] = series(report.window_cumulative);
    j["per_window"]["win_rate"] = series(report.window_win_rate);
    j["per_window"]["max_drawdown"] = series(report.window_mdd);
    return j;
}

void write_backtest_csv(const BacktestReport& report, const std::string& path,
                        const std::string& comment) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write '" + path + "'");
    if (!comment.empty()) out << "# " << comment << '\n';
    out << "window,run,train_begin,train_end,test_begin,test_end,sharpe,direction_accuracy,"
           "win_rate,cumulative_return,max_drawdown,total_trades,profitable_trades,avg_return,"
           "avg_win,avg_loss,profit_factor,mse,rmse,mae,r2\n";
    out.precision(12);
    for (const auto& wr : report.runs) {
        out << wr.window << ',' << wr.run << ',' << format_date(wr.train_begin) << ','
            << format_date(wr.train_end) << ',' << format_date(wr.test_begin) << ','
            << format_date(wr.test_end) << ',';
        if (wr.trading.sharpe) out << *wr.trading.sharpe;
        out << ',' << wr.trading.direction_accuracy << ',' << wr.trading.win_rate << ','
            << wr.trading.cumulative_return << ',' << wr.trading.max_drawdown << ','
            << wr.trading.total_trades << ',' << wr.trading.profitable_trades << ','
            << wr.trading.avg_return << ',' << wr.trading.avg_win << ',' << wr.trading.avg_loss
            << ',';
        if (wr.trading.profit_factor) out << *wr.trading.profit_factor;
        out << ',' << wr.regression.mse << ',' << wr.regression.rmse << ',' << wr.regression.mae
            << ',';
        if (wr.regression.r2) out << *wr.regression.r2;
        out << '\n';
    }
    if (!out) throw io_error("short write to '" + path + "'");
}

}  // namespace kasper
