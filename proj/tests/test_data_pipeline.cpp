#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <numeric>

#include "kasper/errors.hpp"
#include "kasper/features.hpp"
#include "kasper/market_frame.hpp"
#include "kasper/pipeline.hpp"
#include "kasper/rng.hpp"
#include "kasper/synthgen.hpp"

using namespace kasper;

namespace {

// deterministic price walk long enough for every rolling window
MarketFrame make_frame(int n, std::uint64_t seed = 7) {
    Rng rng(seed);
    MarketFrame f;
    f.source_id = "test";
    Date d{2020, 1, 2};
    double close = 100.0;
    for (int i = 0; i < n; ++i) {
        Bar b;
        b.date = d;
        const double prev = close;
        close = std::max(close * (1.0 + 0.01 * rng.normal()), 1.0);
        b.open = prev;
        b.close = close;
        b.adj_close = close;
        b.high = std::max(prev, close) * (1.0 + 0.002 + 0.001 * rng.uniform01());
        b.low = std::min(prev, close) * (1.0 - 0.002 - 0.001 * rng.uniform01());
        b.volume = 1e6 * (1.0 + rng.uniform01());
        f.rows.push_back(b);
        d = next_business_day(d);
    }
    return f;
}

}  // namespace

TEST_CASE("forward fill takes the most recent prior value") {
    const std::string csv =
        "Date,Open,High,Low,Close,Adj Close,Volume\n"
        "2021-01-04,10,11,9,100,100,1000\n"
        "2021-01-05,10,11,9,,100,1000\n";
    const MarketFrame f = parse_ohlcv(csv, "mem");
    REQUIRE(f.rows.size() == 2);
    CHECK(f.rows[1].close == 100.0);
    CHECK(f.stats.cells_filled == 1);
}

TEST_CASE("shuffled dates come out ascending") {
    const std::string csv =
        "Date,Open,High,Low,Close,Adj Close,Volume\n"
        "2021-01-06,1,2,0.5,1.5,1.5,10\n"
        "2021-01-04,1,2,0.5,1.5,1.5,10\n"
        "2021-01-05,1,2,0.5,1.5,1.5,10\n";
    const MarketFrame f = parse_ohlcv(csv, "mem");
    REQUIRE(f.rows.size() == 3);
    CHECK(f.rows[0].date < f.rows[1].date);
    CHECK(f.rows[1].date < f.rows[2].date);
}

TEST_CASE("missing volume column is a schema error naming it") {
    const std::string csv = "Date,Open,High,Low,Close,Adj Close\n2021-01-04,1,2,0.5,1.5,1.5\n";
    try {
        parse_ohlcv(csv, "mem");
        FAIL("expected schema_error");
    } catch (const schema_error& e) {
        CHECK(std::string(e.what()).find("volume") != std::string::npos);
    }
}

TEST_CASE("Close* and Adj Close** aliases and quoted thousands parse") {
    const std::string csv =
        "Date,Open,High,Low,Close*,Adj Close**,Volume\n"
        "\"Jan 04, 2021\",10,11,9,10.5,10.4,\"1,234,567\"\n";
    const MarketFrame f = parse_ohlcv(csv, "mem");
    REQUIRE(f.rows.size() == 1);
    CHECK(f.rows[0].close == 10.5);
    CHECK(f.rows[0].adj_close == 10.4);
    CHECK(f.rows[0].volume == 1234567.0);
    CHECK(f.rows[0].date == Date{2021, 1, 4});
}

TEST_CASE("leading rows with unfillable cells are dropped and counted") {
    const std::string csv =
        "Date,Open,High,Low,Close,Adj Close,Volume\n"
        "2021-01-04,,11,9,10,10,100\n"
        "2021-01-05,10,11,9,10,10,100\n";
    const MarketFrame f = parse_ohlcv(csv, "mem");
    CHECK(f.rows.size() == 1);
    CHECK(f.stats.rows_dropped_leading == 1);
}

TEST_CASE("zero parseable rows is an empty-input error") {
    CHECK_THROWS_AS(parse_ohlcv("Date,Open,High,Low,Close,Adj Close,Volume\n", "mem"),
                    empty_input_error);
}

TEST_CASE("next-day return examples") {
    MarketFrame f = make_frame(5);
    f.rows[0].close = 100;
    f.rows[1].close = 102;
    f.rows[2].close = 102;
    const auto y = compute_target(f);
    CHECK(y.size() == f.rows.size() - 1);
    CHECK(y[0] == doctest::Approx(0.02));
    CHECK(y[1] == 0.0);
    MarketFrame tiny;
    tiny.rows.push_back(f.rows[0]);
    CHECK_THROWS_AS(compute_target(tiny), insufficient_data_error);
}

TEST_CASE("engineered features follow their formulas") {
    MarketFrame f = make_frame(60);
    const FeatureMatrix fm = engineer_features(f);
    CHECK(fm.n_features() == 15);
    CHECK(fm.names == feature_names());
    // rows: drop 21 warmup + final row
    CHECK(fm.n_rows() == static_cast<Eigen::Index>(f.rows.size()) - 22);

    auto col = [&](const std::string& name) {
        for (std::size_t i = 0; i < fm.names.size(); ++i) {
            if (fm.names[i] == name) return static_cast<Eigen::Index>(i);
        }
        FAIL("missing feature ", name);
        return Eigen::Index(0);
    };

    const std::size_t t = 30;  // frame row index
    const auto r = static_cast<Eigen::Index>(t) - 21;
    const Bar& b = f.rows[t];
    CHECK(fm.X(r, col("OC_spread")) == doctest::Approx((b.close - b.open) / b.open));
    CHECK(fm.X(r, col("HL_spread")) == doctest::Approx((b.high - b.low) / b.close));
    auto ret = [&](std::size_t i) {
        return (f.rows[i].close - f.rows[i - 1].close) / f.rows[i - 1].close;
    };
    CHECK(fm.X(r, col("ret_lag_1")) == doctest::Approx(ret(t - 1)));
    CHECK(fm.X(r, col("ret_lag_3")) == doctest::Approx(ret(t - 3)));
    double m5 = 0;
    for (std::size_t i = t - 5; i < t; ++i) m5 += ret(i);
    m5 /= 5;
    CHECK(fm.X(r, col("roll_mean_5")) == doctest::Approx(m5));
    CHECK(fm.X(r, col("momentum_state")) == (m5 > 0 ? 1.0 : (m5 < 0 ? -1.0 : 0.0)));
    const double vel = (ret(t - 1) + ret(t - 2) + ret(t - 3)) / 3.0;
    CHECK(fm.X(r, col("price_velocity")) == doctest::Approx(vel));
    CHECK(fm.X(r, col("day_of_week")) == weekday(b.date));
    // target alignment: y at row r is the next-day return of frame row t
    CHECK(fm.y(r) == doctest::Approx(ret(t + 1)));
}

TEST_CASE("OC and HL spread formulas on crafted bars") {
    MarketFrame f = make_frame(60);
    Bar& b = f.rows[40];
    b.open = 100;
    b.close = 105;
    b.high = 110;
    b.low = 100;
    const FeatureMatrix fm = engineer_features(f);
    const Eigen::Index r = 40 - 21;
    CHECK(fm.X(r, 6) == doctest::Approx(0.05));        // OC_spread
    CHECK(fm.X(r, 7) == doctest::Approx(10.0 / 105));  // HL_spread
}

TEST_CASE("insufficient history raises") {
    MarketFrame f = make_frame(20);
    CHECK_THROWS_AS(engineer_features(f), insufficient_data_error);
}

TEST_CASE("temporal split sizes and ordering") {
    MarketFrame f = make_frame(122);  // 100 feature rows
    FeatureMatrix fm = engineer_features(f);
    REQUIRE(fm.n_rows() == 100);
    temporal_split(fm);
    CHECK(fm.rows_in(Split::train).size() == 70);
    CHECK(fm.rows_in(Split::val).size() == 15);
    CHECK(fm.rows_in(Split::test).size() == 15);
    const auto train = fm.rows_in(Split::train);
    const auto val = fm.rows_in(Split::val);
    const auto test = fm.rows_in(Split::test);
    CHECK(fm.dates[static_cast<std::size_t>(train.back())] <
          fm.dates[static_cast<std::size_t>(val.front())]);
    CHECK(fm.dates[static_cast<std::size_t>(val.back())] <
          fm.dates[static_cast<std::size_t>(test.front())]);
}

TEST_CASE("split of ten rows is 7/1/2 by the floor-remainder rule") {
    MarketFrame f = make_frame(32);  // 10 feature rows
    FeatureMatrix fm = engineer_features(f);
    REQUIRE(fm.n_rows() == 10);
    temporal_split(fm);
    CHECK(fm.rows_in(Split::train).size() == 7);
    CHECK(fm.rows_in(Split::val).size() == 1);
    CHECK(fm.rows_in(Split::test).size() == 2);
}

TEST_CASE("select_k_best ranks a target clone first and matches a least-squares oracle") {
    Rng rng(99);
    FeatureMatrix fm;
    const int n = 200, p = 6;
    fm.X.resize(n, p);
    fm.y.resize(n);
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < p; ++c) fm.X(r, c) = rng.normal();
        fm.y(r) = rng.normal();
    }
    fm.X.col(2) = fm.y;                      // clone of the target: |r| = 1
    fm.X.col(4) = Eigen::VectorXd::Zero(n);  // zero variance: F = 0
    fm.names = {"f0", "f1", "clone", "f3", "zero", "f5"};
    fm.dates.assign(n, Date{2020, 1, 1});
    fm.split.assign(n, Split::train);
    for (int r = 150; r < n; ++r) fm.split[static_cast<std::size_t>(r)] = Split::test;

    const Eigen::VectorXd scores = f_regression_scores(fm);
    CHECK(std::isinf(scores(2)));
    CHECK(scores(4) == 0.0);

    // oracle: per-feature univariate least-squares SSE ordering on train rows
    const auto train_rows = fm.rows_in(Split::train);
    Eigen::VectorXd sse(p);
    for (int c = 0; c < p; ++c) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        const auto m = static_cast<double>(train_rows.size());
        for (auto r : train_rows) {
            sx += fm.X(r, c);
            sy += fm.y(r);
            sxx += fm.X(r, c) * fm.X(r, c);
            sxy += fm.X(r, c) * fm.y(r);
        }
        const double denom = sxx - sx * sx / m;
        const double slope = denom > 0 ? (sxy - sx * sy / m) / denom : 0.0;
        const double intercept = (sy - slope * sx) / m;
        double acc = 0;
        for (auto r : train_rows) {
            const double e = fm.y(r) - slope * fm.X(r, c) - intercept;
            acc += e * e;
        }
        sse(c) = acc;
    }
    std::vector<int> by_f(p), by_sse(p);
    std::iota(by_f.begin(), by_f.end(), 0);
    by_sse = by_f;
    std::stable_sort(by_f.begin(), by_f.end(), [&](int a, int b) { return scores(a) > scores(b); });
    std::stable_sort(by_sse.begin(), by_sse.end(), [&](int a, int b) { return sse(a) < sse(b); });
    CHECK(by_f == by_sse);

    FeatureMatrix cut = fm;
    select_k_best(cut, 3);
    CHECK(cut.n_features() == 3);
    CHECK(std::find(cut.names.begin(), cut.names.end(), "clone") != cut.names.end());
    CHECK_THROWS_AS(select_k_best(cut, 10), parameter_error);
}

TEST_CASE("k = 8 over the 15 engineered features keeps exactly 8 columns") {
    MarketFrame f = make_frame(140);
    FeatureMatrix fm = engineer_features(f);
    temporal_split(fm);
    select_k_best(fm, 8);
    CHECK(fm.n_features() == 8);
    CHECK(fm.selected.size() == 8);
}

TEST_CASE("standardization uses train statistics only") {
    MarketFrame f = make_frame(140);
    FeatureMatrix fm = engineer_features(f);
    temporal_split(fm);
    const FeatureMatrix raw = fm;
    standardize(fm);

    const auto train = fm.rows_in(Split::train);
    for (Eigen::Index c = 0; c < fm.n_features(); ++c) {
        double mean = 0, acc = 0;
        for (auto r : train) mean += fm.X(r, c);
        mean /= static_cast<double>(train.size());
        for (auto r : train) acc += (fm.X(r, c) - mean) * (fm.X(r, c) - mean);
        const double sd = std::sqrt(acc / static_cast<double>(train.size() - 1));
        if (fm.scaler.std(c) > 0) {
            CHECK(std::abs(mean) < 1e-9);
            CHECK(sd == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
    // val rows use train statistics, not their own
    const auto val = fm.rows_in(Split::val);
    const Eigen::Index c0 = 0;
    const double expect = (raw.X(val[0], c0) - fm.scaler.mean(c0)) / fm.scaler.std(c0);
    CHECK(fm.X(val[0], c0) == doctest::Approx(expect).epsilon(1e-12));

    Rng rng(3);
    for (int rep = 0; rep < 20; ++rep) {
        Eigen::VectorXd v(fm.n_features());
        for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal() * 5;
        const Eigen::VectorXd rt = fm.scaler.inverse(fm.scaler.transform(v));
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            if (fm.scaler.std(i) > 0) CHECK(std::abs(rt(i) - v(i)) < 1e-12);
        }
    }
}

TEST_CASE("constant train column standardizes to zeros") {
    MarketFrame f = make_frame(80);
    FeatureMatrix fm = engineer_features(f);
    fm.X.col(3).setConstant(42.0);
    temporal_split(fm);
    standardize(fm);
    CHECK(fm.X.col(3).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("no-lookahead: truncating the frame leaves earlier features bit-identical") {
    const MarkovSpec spec = MarkovSpec::three_state(
        0.9, Eigen::Vector3d(0.001, 0.0, -0.001), Eigen::Vector3d(0.01, 0.02, 0.015), 300, 17);
    const MarketFrame full = gen_markov(spec).frame;
    const FeatureMatrix whole = engineer_features(full);
    Rng rng(23);
    for (int rep = 0; rep < 10; ++rep) {
        const std::size_t cut = 60 + static_cast<std::size_t>(rng.below(200));
        MarketFrame trunc = full;
        trunc.rows.resize(cut);
        const FeatureMatrix part = engineer_features(trunc);
        bool identical = true;
        for (Eigen::Index r = 0; r < part.n_rows() && identical; ++r) {
            for (Eigen::Index c = 0; c < part.n_features(); ++c) {
                if (part.X(r, c) != whole.X(r, c)) {
                    identical = false;
                    break;
                }
            }
        }
        CHECK(identical);
    }
}

TEST_CASE("state matrix log ratios") {
    MarketFrame f = make_frame(10);
    for (auto& b : f.rows) {
        b.close = 50;
        b.high = 60;
        b.low = 40;
    }
    const Eigen::MatrixXd s = build_state_matrix(f, 3);
    CHECK(s.rows() == 3);
    CHECK(s.cols() == 3);
    CHECK(s.cwiseAbs().maxCoeff() == 0.0);

    MarketFrame g = make_frame(4);
    g.rows[2].close = 100;
    g.rows[3].close = 200;
    const Eigen::MatrixXd s2 = build_state_matrix(g, 1);
    CHECK(s2.rows() == 1);
    CHECK(s2(0, 0) == doctest::Approx(std::log(2.0)));
    CHECK_THROWS_AS(build_state_matrix(g, 9), insufficient_data_error);
}

TEST_CASE("bundle round trip preserves the matrix and metadata") {
    MarketFrame f = make_frame(120);
    FeatureMatrix fm = engineer_features(f);
    temporal_split(fm);
    select_k_best(fm, 8);
    standardize(fm);
    const std::string path = "test_bundle.csv";
    save_bundle(fm, path);
    const FeatureMatrix back = load_bundle(path);
    CHECK(back.names == fm.names);
    CHECK(back.selected == fm.selected);
    CHECK(back.n_rows() == fm.n_rows());
    CHECK((back.X - fm.X).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((back.y - fm.y).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(back.split == fm.split);
    CHECK(back.scaler.mean.isApprox(fm.scaler.mean));
    std::remove(path.c_str());
    std::remove((path + ".meta.json").c_str());
}

TEST_CASE("apply_pipeline_state reproduces the fitted transformation") {
    MarketFrame f = make_frame(140);
    FeatureMatrix fm = engineer_features(f);
    temporal_split(fm);
    select_k_best(fm, 8);
    standardize(fm);
    const PipelineState st = PipelineState::from(fm);
    const FeatureMatrix again = apply_pipeline_state(f, st);
    CHECK(again.names == fm.names);
    CHECK((again.X - fm.X).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((again.y - fm.y).cwiseAbs().maxCoeff() < 1e-12);
}
