#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "kasper/backtest.hpp"
#include "kasper/checkpoint.hpp"
#include "kasper/config.hpp"
#include "kasper/errors.hpp"
#include "kasper/pipeline.hpp"
#include "kasper/shapley.hpp"
#include "kasper/svg.hpp"
#include "kasper/synthgen.hpp"
#include "kasper/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::string data_path;
    std::string seed;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "run configuration file (key = value lines)");
    cmd->add_option("--seed", args.seed, "run seed (overrides config)");
    cmd->add_option("--out", args.out_dir, "output directory (overrides config)");
    cmd->add_option("--data", args.data_path, "input OHLCV file (overrides config)");
    cmd->add_option("--set", args.overrides, "override any config key, e.g. --set train.lr=0.01");
}

kasper::RunConfig resolve_config(const CommonArgs& args) {
    kasper::RunConfig cfg;
    if (const char* env = std::getenv("KASPER_OUT")) cfg.set("out_dir", env);
    if (!args.config_path.empty()) cfg.apply_file(args.config_path);
    for (const auto& kv : args.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw kasper::parameter_error("--set expects key=value, got '" + kv + "'");
        }
        cfg.apply_override(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!args.seed.empty()) cfg.set("seed", args.seed);
    if (!args.out_dir.empty()) cfg.set("out_dir", args.out_dir);
    if (!args.data_path.empty()) cfg.set("data.path", args.data_path);
    return cfg;
}

fs::path ensure_out_dir(const kasper::RunConfig& cfg) {
    fs::path dir = cfg.get("out_dir");
    fs::create_directories(dir);
    return dir;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw kasper::io_error("cannot write '" + tmp.string() + "'");
        out << text;
        if (!out) throw kasper::io_error("short write to '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

void write_json_artifact(const fs::path& path, json payload, const kasper::RunConfig& cfg) {
    payload["config"] = cfg.echo();
    write_text_atomic(path, payload.dump(2) + "\n");
}

kasper::MarketFrame load_frame(const kasper::RunConfig& cfg) {
    const std::string path = cfg.get("data.path");
    if (path.empty()) throw kasper::parameter_error("no input data: set data.path or pass --data");
    const std::string delim = cfg.get("data.delimiter");
    return kasper::load_ohlcv(path, delim.empty() ? ',' : delim[0]);
}

json train_report_json(const kasper::TrainReport& r) {
    json j;
    j["stopped_epoch"] = r.stopped_epoch;
    j["best_epoch"] = r.best_epoch;
    j["best_val_loss"] = r.best_val_loss;
    j["max_postclip_grad_norm"] = r.max_postclip_grad_norm;
    j["clipped_steps"] = r.clipped_steps;
    j["total_steps"] = r.total_steps;
    json epochs = json::array();
    for (const auto& e : r.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"val_loss", e.val_loss},
                          {"lr", e.lr}});
    }
    j["epochs"] = std::move(epochs);
    return j;
}

json metrics_json(const kasper::RegressionMetrics& rm, const kasper::TradingMetrics& tm,
                  Eigen::Index n_test) {
    json j;
    j["n_test"] = n_test;
    j["mse"] = rm.mse;
    j["rmse"] = rm.rmse;
    j["mae"] = rm.mae;
    j["r2"] = rm.r2 ? json(*rm.r2) : json(nullptr);
    j["sharpe"] = tm.sharpe ? json(*tm.sharpe) : json(nullptr);
    j["direction_accuracy"] = tm.direction_accuracy;
    j["win_rate"] = tm.win_rate;
    j["max_drawdown"] = tm.max_drawdown;
    j["cumulative_return"] = tm.cumulative_return;
    j["total_trades"] = tm.total_trades;
    j["profitable_trades"] = tm.profitable_trades;
    j["avg_return"] = tm.avg_return;
    j["avg_win"] = tm.avg_win;
    j["avg_loss"] = tm.avg_loss;
    j["profit_factor"] = tm.profit_factor ? json(*tm.profit_factor) : json(nullptr);
    json flags = json::array();
    for (const auto& f : tm.flags) flags.push_back(f);
    j["flags"] = std::move(flags);
    return j;
}

int cmd_ingest(const kasper::RunConfig& cfg) {
    const auto out = ensure_out_dir(cfg);
    const auto frame = load_frame(cfg);
    auto fm = kasper::fit_pipeline(frame, cfg.get_double("pipeline.train_frac"),
                                   cfg.get_double("pipeline.val_frac"),
                                   cfg.get_int("pipeline.k_best"));
    kasper::save_bundle(fm, (out / "features.csv").string());
    std::cout << "ingested " << frame.size() << " rows -> " << fm.n_rows() << " feature rows ("
              << fm.n_features() << " selected features), bundle at " << (out / "features.csv")
              << "\n";
    std::cout << "forward-filled cells: " << frame.stats.cells_filled
              << ", dropped leading rows: " << frame.stats.rows_dropped_leading << "\n";
    return 0;
}

int cmd_train(const kasper::RunConfig& cfg) {
    const auto out = ensure_out_dir(cfg);
    const auto frame = load_frame(cfg);
    auto fm = kasper::fit_pipeline(frame, cfg.get_double("pipeline.train_frac"),
                                   cfg.get_double("pipeline.val_frac"),
                                   cfg.get_int("pipeline.k_best"));
    kasper::ModelConfig mc = cfg.model_config();
    mc.detector.input_dim = static_cast<int>(fm.n_features());
    mc.forecaster.input_dim = static_cast<int>(fm.n_features());
    kasper::KasperModel model(mc);
    const auto train_view = kasper::gather_split(fm, kasper::Split::train);
    const std::uint64_t seed = cfg.get_u64("seed");
    model.init(seed, train_view.x);

    kasper::TrainConfig tc = cfg.train_config();
    std::ostringstream log;
    kasper::TrainReport report;
    if (cfg.get_bool("train.tune_sparsity")) {
        const double lambda = kasper::train_with_sparsity_tuning(model, fm, tc, &report, &log);
        log << "selected lambda_sparsity " << lambda << "\n";
    } else {
        report = kasper::train(model, fm, tc, &log);
    }
    std::cout << log.str();

    kasper::save_checkpoint(model, kasper::PipelineState::from(fm), cfg.echo(), seed,
                            (out / "checkpoint.bin").string());
    write_json_artifact(out / "train_report.json", train_report_json(report), cfg);
    write_text_atomic(out / "train_log.txt", log.str());
    std::cout << "trained " << report.stopped_epoch << " epochs (best epoch " << report.best_epoch
              << ", val loss " << report.best_val_loss << "), checkpoint at "
              << (out / "checkpoint.bin") << "\n";
    return 0;
}

std::string checkpoint_path(const kasper::RunConfig& cfg, const std::string& explicit_path) {
    if (!explicit_path.empty()) return explicit_path;
    return (fs::path(cfg.get("out_dir")) / "checkpoint.bin").string();
}

int cmd_evaluate(const kasper::RunConfig& cfg, const std::string& ckpt_path) {
    const auto out = ensure_out_dir(cfg);
    auto loaded = kasper::load_checkpoint(checkpoint_path(cfg, ckpt_path));
    const auto frame = load_frame(cfg);
    auto fm = kasper::apply_pipeline_state(frame, loaded.pipeline);
    kasper::temporal_split(fm, cfg.get_double("pipeline.train_frac"),
                           cfg.get_double("pipeline.val_frac"));
    const auto test = kasper::gather_split(fm, kasper::Split::test);

    const Eigen::VectorXd pred_std = loaded.model->predict(test.x);
    Eigen::VectorXd yhat(pred_std.size()), y(pred_std.size());
    for (Eigen::Index i = 0; i < pred_std.size(); ++i) {
        yhat(i) = loaded.pipeline.target_scaler.inverse1(pred_std(i));
        y(i) = loaded.pipeline.target_scaler.inverse1(test.y(i));
    }
    const auto rm = kasper::regression_metrics(y, yhat);
    const auto tm = kasper::trading_metrics(yhat, y, cfg.get_double("eval.risk_free"),
                                            cfg.get_int("eval.trading_days"));
    write_json_artifact(out / "metrics.json", metrics_json(rm, tm, test.x.rows()), cfg);
    std::cout << "test rows " << test.x.rows() << ": r2 "
              << (rm.r2 ? std::to_string(*rm.r2) : "null") << ", sharpe "
              << (tm.sharpe ? std::to_string(*tm.sharpe) : "null") << ", win rate " << tm.win_rate
              << "%, metrics at " << (out / "metrics.json") << "\n";
    return 0;
}

int cmd_backtest(const kasper::RunConfig& cfg) {
    const auto out = ensure_out_dir(cfg);
    const auto frame = load_frame(cfg);
    auto engineered = kasper::engineer_features(frame);
    auto report = kasper::walk_forward(engineered, cfg.walkforward_config(), &std::cout);

    write_json_artifact(out / "backtest.json", kasper::backtest_to_json(report), cfg);
    const std::string comment = "config seed=" + cfg.get("seed");
    kasper::write_backtest_csv(report, (out / "backtest.csv").string() + ".tmp", comment);
    fs::rename((out / "backtest.csv").string() + ".tmp", out / "backtest.csv");

    auto chart = [&](const std::vector<kasper::AggregateStat>& stats, const std::string& title,
                     const std::string& ylab, const std::string& file) {
        kasper::ChartSeries s;
        for (const auto& st : stats) {
            s.mean.push_back(st.mean);
            s.sd.push_back(st.sd);
        }
        kasper::write_line_chart(s, title, ylab, (out / file).string() + ".tmp", comment);
        fs::rename((out / file).string() + ".tmp", out / file);
    };
    chart(report.window_sharpe, "Sharpe ratio per walk-forward window", "sharpe",
          "chart_sharpe.svg");
    chart(report.window_cumulative, "Cumulative return per window", "cumulative return",
          "chart_cumulative.svg");
    chart(report.window_win_rate, "Win rate per window", "win rate (%)", "chart_winrate.svg");
    chart(report.window_mdd, "Maximum drawdown per window", "max drawdown", "chart_mdd.svg");

    std::cout << report.n_windows << " windows x " << report.n_runs << " runs, report at "
              << (out / "backtest.json") << "\n";
    return 0;
}

int cmd_explain(const kasper::RunConfig& cfg, const std::string& ckpt_path) {
    const auto out = ensure_out_dir(cfg);
    auto loaded = kasper::load_checkpoint(checkpoint_path(cfg, ckpt_path));
    const auto frame = load_frame(cfg);
    auto fm = kasper::apply_pipeline_state(frame, loaded.pipeline);
    kasper::temporal_split(fm, cfg.get_double("pipeline.train_frac"),
                           cfg.get_double("pipeline.val_frac"));
    const std::string split_name = cfg.get("explain.split");
    kasper::Split split = kasper::Split::test;
    if (split_name == "train") split = kasper::Split::train;
    else if (split_name == "val") split = kasper::Split::val;
    else if (split_name != "test") throw kasper::parameter_error("explain.split must be train/val/test");

    const auto rules = kasper::extract_rules(*loaded.model, loaded.pipeline, fm, split,
                                             cfg.attribution_config());
    write_json_artifact(out / "rules.json", kasper::rules_to_json(rules), cfg);
    kasper::write_attribution_csv(rules, fm.names, (out / "attributions.csv").string() + ".tmp",
                                  "config seed=" + cfg.get("seed"));
    fs::rename((out / "attributions.csv").string() + ".tmp", out / "attributions.csv");
    for (const auto& r : rules.rules) std::cout << r.rule_string << "\n";
    std::cout << "rules at " << (out / "rules.json") << "\n";
    return 0;
}

int cmd_simulate(const kasper::RunConfig& cfg) {
    const auto out = ensure_out_dir(cfg);
    const std::string kind = cfg.get("sim.kind");
    if (kind == "markov") {
        const auto result = kasper::gen_markov(cfg.markov_spec());
        kasper::write_ohlcv(result.frame, (out / "synthetic.csv").string());
        std::vector<double> labels(result.regimes.begin(), result.regimes.end());
        kasper::write_labels(result.frame, labels, "regime",
                             (out / "synthetic_labels.csv").string());
    } else if (kind == "star") {
        const auto result = kasper::gen_smooth_transition(cfg.transition_spec());
        kasper::write_ohlcv(result.frame, (out / "synthetic.csv").string());
        kasper::write_labels(result.frame, result.transition_path, "transition",
                             (out / "synthetic_labels.csv").string());
    } else {
        throw kasper::parameter_error("sim.kind must be 'markov' or 'star'");
    }
    std::cout << "synthetic series at " << (out / "synthetic.csv") << " with labels sidecar\n";
    return 0;
}

int cmd_report(const kasper::RunConfig& cfg) {
    const fs::path out = cfg.get("out_dir");
    std::ostringstream text;
    text << "kasper run summary (" << out.string() << ")\n";
    text << std::string(60, '-') << "\n";
    auto maybe = [&](const char* file) -> json {
        std::ifstream in(out / file);
        if (!in) return json();
        return json::parse(in, nullptr, false);
    };
    const json train = maybe("train_report.json");
    if (!train.is_discarded() && !train.is_null()) {
        text << "training: stopped at epoch " << train["stopped_epoch"] << ", best epoch "
             << train["best_epoch"] << ", best val loss " << train["best_val_loss"] << "\n";
    }
    const json metrics = maybe("metrics.json");
    if (!metrics.is_discarded() && !metrics.is_null()) {
        text << "test metrics: r2 " << metrics["r2"] << ", mse " << metrics["mse"] << ", sharpe "
             << metrics["sharpe"] << ", direction accuracy " << metrics["direction_accuracy"]
             << "%, win rate " << metrics["win_rate"] << "%\n";
    }
    const json bt = maybe("backtest.json");
    if (!bt.is_discarded() && !bt.is_null()) {
        text << "walk-forward: " << bt["n_windows"] << " windows x " << bt["n_runs"] << " runs\n";
        if (bt.contains("pooled")) {
            for (const auto& key : {"sharpe", "direction_accuracy", "win_rate",
                                    "cumulative_return", "max_drawdown", "profit_factor"}) {
                if (bt["pooled"].contains(key)) {
                    text << "  " << key << ": " << bt["pooled"][key]["mean"] << " +/- "
                         << bt["pooled"][key]["std"] << "\n";
                }
            }
        }
    }
    const json rules = maybe("rules.json");
    if (!rules.is_discarded() && !rules.is_null() && rules.contains("rules")) {
        text << "regime rules:\n";
        for (const auto& r : rules["rules"]) {
            text << "  " << r["rule_string"].get<std::string>() << "\n";
        }
    }
    if (train.is_null() && metrics.is_null() && bt.is_null() && rules.is_null()) {
        text << "no artifacts found; run train/evaluate/backtest/explain first\n";
    }
    std::cout << text.str();
    write_text_atomic(out / "report.txt", text.str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"regime-aware spline forecasting toolkit"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    CommonArgs args;
    std::string ckpt;

    auto* ingest = app.add_subcommand("ingest", "load OHLCV data and write the feature bundle");
    add_common(ingest, args);
    auto* train = app.add_subcommand("train", "fit the model and write a checkpoint");
    add_common(train, args);
    auto* evaluate = app.add_subcommand("evaluate", "score the test split of the data");
    add_common(evaluate, args);
    evaluate->add_option("--checkpoint", ckpt, "checkpoint file (default <out>/checkpoint.bin)");
    auto* backtest = app.add_subcommand("backtest", "walk-forward evaluation with charts");
    add_common(backtest, args);
    auto* explain = app.add_subcommand("explain", "Shapley attributions and regime rules");
    add_common(explain, args);
    explain->add_option("--checkpoint", ckpt, "checkpoint file (default <out>/checkpoint.bin)");
    auto* simulate = app.add_subcommand("simulate", "generate a synthetic regime-switching series");
    add_common(simulate, args);
    auto* report = app.add_subcommand("report", "summarize artifacts in the output directory");
    add_common(report, args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        const kasper::RunConfig cfg = resolve_config(args);
        if (ingest->parsed()) return cmd_ingest(cfg);
        if (train->parsed()) return cmd_train(cfg);
        if (evaluate->parsed()) return cmd_evaluate(cfg, ckpt);
        if (backtest->parsed()) return cmd_backtest(cfg);
        if (explain->parsed()) return cmd_explain(cfg, ckpt);
        if (simulate->parsed()) return cmd_simulate(cfg);
        if (report->parsed()) return cmd_report(cfg);
        return 2;
    } catch (const kasper::error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
