#include "kasper/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kasper/errors.hpp"

namespace kasper {

using json = nlohmann::json;

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        default: return "test";
    }
}

Eigen::VectorXd Scaler::transform(const Eigen::VectorXd& x) const {
    Eigen::VectorXd out(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        out(i) = std(i) > 0.0 ? (x(i) - mean(i)) / std(i) : 0.0;
    }
    return out;
}

Eigen::VectorXd Scaler::inverse(const Eigen::VectorXd& z) const {
    Eigen::VectorXd out(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) out(i) = z(i) * std(i) + mean(i);
    return out;
}

std::vector<Eigen::Index> FeatureMatrix::rows_in(Split s) const {
    std::vector<Eigen::Index> idx;
    for (std::size_t r = 0; r < split.size(); ++r) {
        if (split[r] == s) idx.push_back(static_cast<Eigen::Index>(r));
    }
    return idx;
}

FeatureMatrix FeatureMatrix::slice_rows(Eigen::Index begin, Eigen::Index end) const {
    FeatureMatrix out;
    out.names = names;
    out.selected = selected;
    const Eigen::Index n = end - begin;
    out.X = X.middleRows(begin, n);
    out.y = y.segment(begin, n);
    out.dates.assign(dates.begin() + begin, dates.begin() + end);
    if (!split.empty()) out.split.assign(split.begin() + begin, split.begin() + end);
    out.scaler = scaler;
    out.target_scaler = target_scaler;
    out.scaled = scaled;
    return out;
}

const std::vector<std::string>& feature_names() {
    static const std::vector<std::string> kNames = {
        "ret_lag_1",     "ret_lag_2",        "ret_lag_3",      "roll_mean_5",
        "roll_std_5",    "roll_std_20",      "OC_spread",      "HL_spread",
        "price_velocity", "price_acceleration", "momentum_state", "volatility_ratio",
        "ATR_14",        "volume_z_20",      "day_of_week"};
    return kNames;
}

namespace {

double sample_mean(const std::vector<double>& v, std::size_t lo, std::size_t hi) {
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += v[i];
    return s / static_cast<double>(hi - lo);
}

double sample_std(const std::vector<double>& v, std::size_t lo, std::size_t hi) {
    const std::size_t n = hi - lo;
    if (n < 2) return 0.0;
    const double m = sample_mean(v, lo, hi);
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) acc += (v[i] - m) * (v[i] - m);
    return std::sqrt(acc / static_cast<double>(n - 1));
}

double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

FeatureMatrix engineer_features(const MarketFrame& frame) {
    // Longest closed-left window: 20 returns (roll_std_20), which need a
    // close 21 days back. First featurizable day is index 21; the final row
    // has no next-day close.
    constexpr std::size_t kFirst = 21;
    const std::size_t n = frame.rows.size();
    if (n < kFirst + 2) {
        throw insufficient_data_error("need at least " + std::to_string(kFirst + 2) +
                                      " rows for feature engineering, got " + std::to_string(n));
    }

    // daily returns r[t] = close_t/close_{t-1} - 1, defined from t = 1
    std::vector<double> ret(n, 0.0);
    for (std::size_t t = 1; t < n; ++t) {
        ret[t] = (frame.rows[t].close - frame.rows[t - 1].close) / frame.rows[t - 1].close;
    }
    // true range (needs previous close), defined from t = 1
    std::vector<double> tr(n, 0.0);
    for (std::size_t t = 1; t < n; ++t) {
        const Bar& b = frame.rows[t];
        const double pc = frame.rows[t - 1].close;
        tr[t] = std::max({b.high - b.low, std::abs(b.high - pc), std::abs(b.low - pc)});
    }
    std::vector<double> vol(n);
    for (std::size_t t = 0; t < n; ++t) vol[t] = frame.rows[t].volume;

    const std::vector<double> target = compute_target(frame);

    const std::size_t last = n - 2;  // last row with a defined target
    const std::size_t rows = last - kFirst + 1;
    FeatureMatrix fm;
    fm.names = feature_names();
    fm.X.resize(static_cast<Eigen::Index>(rows), 15);
    fm.y.resize(static_cast<Eigen::Index>(rows));
    fm.dates.resize(rows);

    auto roll_mean_ret = [&](std::size_t t, std::size_t w) { return sample_mean(ret, t - w, t); };
    auto roll_std_ret = [&](std::size_t t, std::size_t w) { return sample_std(ret, t - w, t); };

    for (std::size_t t = kFirst; t <= last; ++t) {
        const Bar& b = frame.rows[t];
        const std::size_t r = t - kFirst;
        const double rm5 = roll_mean_ret(t, 5);
        const double rs5 = roll_std_ret(t, 5);
        const double rs20 = roll_std_ret(t, 20);
        const double vel = roll_mean_ret(t, 3);
        const double vel_prev = roll_mean_ret(t - 1, 3);
        const double vmean = sample_mean(vol, t - 20, t);
        const double vstd = sample_std(vol, t - 20, t);
        double atr = 0.0;
        for (std::size_t s = t - 14; s < t; ++s) atr += tr[s];
        atr /= 14.0;

        Eigen::Index c = 0;
        fm.X(static_cast<Eigen::Index>(r), c++) = ret[t - 1];
        fm.X(static_cast<Eigen::Index>(r), c++) = ret[t - 2];
        fm.X(static_cast<Eigen::Index>(r), c++) = ret[t - 3];
        fm.X(static_cast<Eigen::Index>(r), c++) = rm5;
        fm.X(static_cast<Eigen::Index>(r), c++) = rs5;
        fm.X(static_cast<Eigen::Index>(r), c++) = rs20;
        fm.X(static_cast<Eigen::Index>(r), c++) = (b.close - b.open) / b.open;
        fm.X(static_cast<Eigen::Index>(r), c++) = (b.high - b.low) / b.close;
        fm.X(static_cast<Eigen::Index>(r), c++) = vel;
        fm.X(static_cast<Eigen::Index>(r), c++) = vel - vel_prev;
        fm.X(static_cast<Eigen::Index>(r), c++) = sign_of(rm5);
        fm.X(static_cast<Eigen::Index>(r), c++) = rs20 > 0.0 ? rs5 / rs20 : 0.0;
        fm.X(static_cast<Eigen::Index>(r), c++) = atr / b.close;
        fm.X(static_cast<Eigen::Index>(r), c++) = vstd > 0.0 ? (vol[t] - vmean) / vstd : 0.0;
        fm.X(static_cast<Eigen::Index>(r), c++) = static_cast<double>(weekday(b.date));
        fm.y(static_cast<Eigen::Index>(r)) = target[t];
        fm.dates[r] = b.date;
    }
    return fm;
}

void temporal_split(FeatureMatrix& fm, double train_frac, double val_frac) {
    if (train_frac <= 0.0 || val_frac <= 0.0 || train_frac + val_frac >= 1.0) {
        throw parameter_error("split fractions must be positive and sum below 1");
    }
    const auto n = static_cast<std::size_t>(fm.n_rows());
    if (n < 3) throw insufficient_data_error("need >= 3 rows to split");
    const auto n_train = static_cast<std::size_t>(std::floor(train_frac * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::floor(val_frac * static_cast<double>(n)));
    const std::size_t n_test = n - n_train - n_val;
    if (n_train == 0 || n_val == 0 || n_test == 0) {
        throw insufficient_data_error("a split block is empty (" + std::to_string(n_train) + "/" +
                                      std::to_string(n_val) + "/" + std::to_string(n_test) + ")");
    }
    fm.split.assign(n, Split::test);
    for (std::size_t i = 0; i < n_train; ++i) fm.split[i] = Split::train;
    for (std::size_t i = n_train; i < n_train + n_val; ++i) fm.split[i] = Split::val;
}

Eigen::VectorXd f_regression_scores(const FeatureMatrix& fm) {
    if (fm.split.empty()) throw contract_error("f_regression_scores requires split tags");
    const auto train = fm.rows_in(Split::train);
    const auto n = static_cast<double>(train.size());
    if (train.size() < 3) throw insufficient_data_error("need >= 3 train rows for F scores");

    double ymean = 0.0;
    for (auto r : train) ymean += fm.y(r);
    ymean /= n;
    double yvar = 0.0;
    for (auto r : train) yvar += (fm.y(r) - ymean) * (fm.y(r) - ymean);

    Eigen::VectorXd scores(fm.n_features());
    for (Eigen::Index c = 0; c < fm.n_features(); ++c) {
        double xmean = 0.0;
        for (auto r : train) xmean += fm.X(r, c);
        xmean /= n;
        double xvar = 0.0, cov = 0.0;
        for (auto r : train) {
            const double dx = fm.X(r, c) - xmean;
            xvar += dx * dx;
            cov += dx * (fm.y(r) - ymean);
        }
        if (xvar <= 0.0 || yvar <= 0.0) {
            scores(c) = 0.0;
            continue;
        }
        const double r2 = (cov * cov) / (xvar * yvar);
        if (r2 >= 1.0) {
            scores(c) = std::numeric_limits<double>::infinity();
        } else {
            scores(c) = r2 / (1.0 - r2) * (n - 2.0);
        }
    }
    return scores;
}

void select_k_best(FeatureMatrix& fm, int k) {
    if (k > fm.n_features()) {
        throw parameter_error("k (" + std::to_string(k) + ") exceeds feature count (" +
                              std::to_string(fm.n_features()) + ")");
    }
    if (k == fm.n_features()) {
        if (fm.selected.empty()) {
            fm.selected.resize(static_cast<std::size_t>(k));
            std::iota(fm.selected.begin(), fm.selected.end(), 0);
        }
        return;
    }
    const Eigen::VectorXd scores = f_regression_scores(fm);
    std::vector<int> order(static_cast<std::size_t>(fm.n_features()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scores(a) > scores(b); });
    std::vector<int> keep(order.begin(), order.begin() + k);
    std::sort(keep.begin(), keep.end());  // preserve column order

    Eigen::MatrixXd nx(fm.n_rows(), k);
    std::vector<std::string> nn(static_cast<std::size_t>(k));
    std::vector<int> global(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
        nx.col(j) = fm.X.col(keep[static_cast<std::size_t>(j)]);
        nn[static_cast<std::size_t>(j)] = fm.names[static_cast<std::size_t>(keep[static_cast<std::size_t>(j)])];
        global[static_cast<std::size_t>(j)] =
            fm.selected.empty() ? keep[static_cast<std::size_t>(j)]
                                : fm.selected[static_cast<std::size_t>(keep[static_cast<std::size_t>(j)])];
    }
    fm.X = std::move(nx);
    fm.names = std::move(nn);
    fm.selected = std::move(global);
}

void standardize(FeatureMatrix& fm) {
    if (fm.split.empty()) throw contract_error("standardize requires split tags");
    if (fm.scaled) throw contract_error("feature matrix already standardized");
    const auto train = fm.rows_in(Split::train);
    const auto n = static_cast<double>(train.size());
    if (train.size() < 2) throw insufficient_data_error("need >= 2 train rows to standardize");

    fm.scaler.mean.resize(fm.n_features());
    fm.scaler.std.resize(fm.n_features());
    for (Eigen::Index c = 0; c < fm.n_features(); ++c) {
        double m = 0.0;
        for (auto r : train) m += fm.X(r, c);
        m /= n;
        double acc = 0.0;
        for (auto r : train) acc += (fm.X(r, c) - m) * (fm.X(r, c) - m);
        const double sd = std::sqrt(acc / (n - 1.0));
        fm.scaler.mean(c) = m;
        fm.scaler.std(c) = sd;
        for (Eigen::Index r = 0; r < fm.n_rows(); ++r) {
            fm.X(r, c) = sd > 0.0 ? (fm.X(r, c) - m) / sd : 0.0;
        }
    }
    fm.scaler.fitted = true;

    double ym = 0.0;
    for (auto r : train) ym += fm.y(r);
    ym /= n;
    double yacc = 0.0;
    for (auto r : train) yacc += (fm.y(r) - ym) * (fm.y(r) - ym);
    const double ysd = std::sqrt(yacc / (n - 1.0));
    fm.target_scaler.mean.resize(1);
    fm.target_scaler.std.resize(1);
    fm.target_scaler.mean(0) = ym;
    fm.target_scaler.std(0) = ysd;
    fm.target_scaler.fitted = true;
    for (Eigen::Index r = 0; r < fm.n_rows(); ++r) {
        fm.y(r) = ysd > 0.0 ? (fm.y(r) - ym) / ysd : 0.0;
    }
    fm.scaled = true;
}

Eigen::MatrixXd build_state_matrix(const MarketFrame& frame, int n, std::optional<std::size_t> t) {
    if (n < 1) throw parameter_error("state window must be >= 1");
    const std::size_t ti = t.value_or(frame.rows.size() - 1);
    if (ti >= frame.rows.size() || ti < static_cast<std::size_t>(n)) {
        throw insufficient_data_error("state matrix needs " + std::to_string(n + 1) +
                                      " rows of history at t");
    }
    Eigen::MatrixXd s(n, 3);
    for (int i = 1; i <= n; ++i) {
        const Bar& num = frame.rows[ti - static_cast<std::size_t>(i) + 1];
        const Bar& den = frame.rows[ti - static_cast<std::size_t>(i)];
        s(i - 1, 0) = std::log(num.close / den.close);
        s(i - 1, 1) = std::log(num.high / den.high);
        s(i - 1, 2) = std::log(num.low / den.low);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Bundle IO
// ---------------------------------------------------------------------------

void save_bundle(const FeatureMatrix& fm, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write '" + path + "'");
    out << "date,split";
    for (const auto& n : fm.names) out << ',' << n;
    out << ",target\n";
    out.precision(17);
    for (Eigen::Index r = 0; r < fm.n_rows(); ++r) {
        out << format_date(fm.dates[static_cast<std::size_t>(r)]) << ','
            << (fm.split.empty() ? "none" : split_name(fm.split[static_cast<std::size_t>(r)]));
        for (Eigen::Index c = 0; c < fm.n_features(); ++c) out << ',' << fm.X(r, c);
        out << ',' << fm.y(r) << '\n';
    }
    if (!out) throw io_error("short write to '" + path + "'");

    json meta;
    meta["names"] = fm.names;
    meta["selected"] = fm.selected;
    meta["scaled"] = fm.scaled;
    if (fm.scaler.fitted) {
        meta["scaler"]["mean"] = std::vector<double>(fm.scaler.mean.data(),
                                                     fm.scaler.mean.data() + fm.scaler.mean.size());
        meta["scaler"]["std"] = std::vector<double>(fm.scaler.std.data(),
                                                    fm.scaler.std.data() + fm.scaler.std.size());
    }
    if (fm.target_scaler.fitted) {
        meta["target_scaler"]["mean"] = fm.target_scaler.mean(0);
        meta["target_scaler"]["std"] = fm.target_scaler.std(0);
    }
    std::size_t n_train = 0, n_val = 0;
    for (auto s : fm.split) {
        n_train += s == Split::train;
        n_val += s == Split::val;
    }
    meta["split_sizes"] = {{"train", n_train}, {"val", n_val},
                           {"test", fm.split.size() - n_train - n_val}};
    std::ofstream mout(path + ".meta.json", std::ios::binary);
    if (!mout) throw io_error("cannot write '" + path + ".meta.json'");
    mout << meta.dump(2) << '\n';
}

FeatureMatrix load_bundle(const std::string& path) {
    std::ifstream meta_in(path + ".meta.json", std::ios::binary);
    if (!meta_in) throw io_error("cannot open '" + path + ".meta.json'");
    json meta = json::parse(meta_in, nullptr, true);

    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw empty_input_error("empty bundle '" + path + "'");

    FeatureMatrix fm;
    fm.names = meta.at("names").get<std::vector<std::string>>();
    fm.selected = meta.at("selected").get<std::vector<int>>();
    fm.scaled = meta.at("scaled").get<bool>();
    if (meta.contains("scaler")) {
        auto mv = meta["scaler"]["mean"].get<std::vector<double>>();
        auto sv = meta["scaler"]["std"].get<std::vector<double>>();
        fm.scaler.mean = Eigen::Map<Eigen::VectorXd>(mv.data(), static_cast<Eigen::Index>(mv.size()));
        fm.scaler.std = Eigen::Map<Eigen::VectorXd>(sv.data(), static_cast<Eigen::Index>(sv.size()));
        fm.scaler.fitted = true;
    }
    if (meta.contains("target_scaler")) {
        fm.target_scaler.mean = Eigen::VectorXd::Constant(1, meta["target_scaler"]["mean"].get<double>());
        fm.target_scaler.std = Eigen::VectorXd::Constant(1, meta["target_scaler"]["std"].get<double>());
        fm.target_scaler.fitted = true;
    }

    std::vector<std::vector<double>> rows;
    std::vector<Date> dates;
    std::vector<Split> splits;
    const std::size_t width = fm.names.size() + 1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::getline(ls, cell, ',');
        dates.push_back(parse_date(cell));
        std::getline(ls, cell, ',');
        if (cell == "train") splits.push_back(Split::train);
        else if (cell == "val") splits.push_back(Split::val);
        else splits.push_back(Split::test);
        std::vector<double> vals;
        while (std::getline(ls, cell, ',')) vals.push_back(std::stod(cell));
        if (vals.size() != width) {
            throw schema_error("bundle row width mismatch in '" + path + "'");
        }
        rows.push_back(std::move(vals));
    }
    if (rows.empty()) throw empty_input_error("no rows in bundle '" + path + "'");
    fm.X.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(fm.names.size()));
    fm.y.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < fm.names.size(); ++c) {
            fm.X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        }
        fm.y(static_cast<Eigen::Index>(r)) = rows[r].back();
    }
    fm.dates = std::move(dates);
    fm.split = std::move(splits);
    return fm;
}

}  // namespace kasper
