#include <doctest.h>

#include <cmath>

#include "kasper/backtest.hpp"
#include "kasper/errors.hpp"
#include "kasper/metrics.hpp"
#include "kasper/rng.hpp"

using namespace kasper;

TEST_CASE("regression metric examples") {
    Eigen::Vector3d y(1, 2, 3);
    SUBCASE("perfect fit") {
        const auto m = regression_metrics(y, y);
        CHECK(m.mse == 0.0);
        CHECK(m.rmse == 0.0);
        REQUIRE(m.r2.has_value());
        CHECK(*m.r2 == doctest::Approx(1.0));
    }
    SUBCASE("constant mean prediction has r2 = 0") {
        Eigen::Vector3d yhat(2, 2, 2);
        const auto m = regression_metrics(y, yhat);
        REQUIRE(m.r2.has_value());
        CHECK(*m.r2 == doctest::Approx(0.0));
    }
    SUBCASE("hand-computed errors") {
        Eigen::Vector3d yhat(1, 2, 4);
        const auto m = regression_metrics(y, yhat);
        CHECK(m.mse == doctest::Approx(1.0 / 3));
        CHECK(m.mae == doctest::Approx(1.0 / 3));
        CHECK(m.rmse == doctest::Approx(std::sqrt(m.mse)));
    }
    SUBCASE("zero target variance flags r2 as null") {
        Eigen::Vector3d flat(5, 5, 5);
        Eigen::Vector3d yhat(5, 5, 6);
        const auto m = regression_metrics(flat, yhat);
        CHECK(!m.r2.has_value());
    }
    SUBCASE("length mismatch raises") {
        Eigen::Vector2d bad(1, 2);
        CHECK_THROWS_AS(regression_metrics(y, bad), shape_error);
    }
}

TEST_CASE("rmse is the square root of mse") {
    Rng rng(3);
    for (int rep = 0; rep < 20; ++rep) {
        Eigen::VectorXd y(50), yhat(50);
        for (int i = 0; i < 50; ++i) {
            y(i) = rng.normal();
            yhat(i) = rng.normal();
        }
        const auto m = regression_metrics(y, yhat);
        CHECK(std::abs(m.rmse - std::sqrt(m.mse)) < 1e-12);
    }
}

TEST_CASE("strategy return sign conventions") {
    Eigen::Vector3d yhat(0.5, -0.2, 0.0);
    Eigen::Vector3d y(0.01, 0.01, 0.01);
    const Eigen::VectorXd r = strategy_returns(yhat, y);
    CHECK(r(0) == doctest::Approx(0.01));
    CHECK(r(1) == doctest::Approx(-0.01));
    CHECK(r(2) == 0.0);
}

TEST_CASE("trading metric analytic examples") {
    SUBCASE("cumulative return of (0.1, -0.05)") {
        Eigen::Vector2d r(0.1, -0.05);
        CHECK(cumulative_return(r) == doctest::Approx(1.1 * 0.95 - 1.0));
    }
    SUBCASE("max drawdown of the path (1, 1.2, 0.9, 1.5)") {
        // returns reproducing the V path
        Eigen::Vector3d r(0.2, 0.9 / 1.2 - 1.0, 1.5 / 0.9 - 1.0);
        CHECK(max_drawdown(r) == doctest::Approx(0.9 / 1.2 - 1.0));
    }
    SUBCASE("win rate of (+, -, +, +) is 75%") {
        Eigen::Vector4d y(0.01, -0.02, 0.03, 0.004);
        Eigen::Vector4d yhat = Eigen::Vector4d::Ones();
        const auto m = trading_metrics(yhat, y);
        CHECK(m.total_trades == 4);
        CHECK(m.profitable_trades == 3);
        CHECK(m.win_rate == doctest::Approx(75.0));
    }
    SUBCASE("monotone non-decreasing path has zero drawdown") {
        Eigen::Vector4d r(0.01, 0.0, 0.02, 0.005);
        CHECK(max_drawdown(r) == 0.0);
    }
}

TEST_CASE("sharpe is scale invariant with zero risk-free rate") {
    Rng rng(7);
    Eigen::VectorXd r(100);
    for (int i = 0; i < 100; ++i) r(i) = rng.normal() * 0.01;
    const auto base = sharpe_ratio(r, 0.0, 252);
    REQUIRE(base.has_value());
    for (double c : {0.5, 2.0, 17.0}) {
        const auto scaled = sharpe_ratio(c * r, 0.0, 252);
        REQUIRE(scaled.has_value());
        CHECK(std::abs(*scaled - *base) < 1e-9);
    }
}

TEST_CASE("degenerate series flag their metrics") {
    Eigen::Vector3d y(0.01, 0.01, 0.01);
    Eigen::Vector3d yhat(1.0, 1.0, 1.0);
    const auto m = trading_metrics(yhat, y);  // constant strategy returns
    CHECK(!m.sharpe.has_value());
    CHECK(!m.profit_factor.has_value());  // no losing trades
    CHECK(std::find(m.flags.begin(), m.flags.end(), "zero_variance_sharpe") != m.flags.end());
    CHECK(std::find(m.flags.begin(), m.flags.end(), "no_losing_trades") != m.flags.end());
}

TEST_CASE("direction accuracy equals win rate when positions are always taken") {
    Rng rng(11);
    Eigen::VectorXd y(200), yhat(200);
    for (int i = 0; i < 200; ++i) {
        double v = rng.normal();
        y(i) = v == 0.0 ? 0.001 : v;  // no zero actual returns
        double p = rng.normal();
        yhat(i) = p == 0.0 ? 0.001 : p;  // always positioned
    }
    const auto m = trading_metrics(yhat, y);
    CHECK(m.total_trades == 200);
    CHECK(m.direction_accuracy == doctest::Approx(m.win_rate).epsilon(1e-12));
}

TEST_CASE("metrics match independent brute-force implementations on random data") {
    Rng rng(13);
    for (int rep = 0; rep < 1000; ++rep) {
        const int n = 5 + static_cast<int>(rng.below(60));
        Eigen::VectorXd y(n), yhat(n);
        for (int i = 0; i < n; ++i) {
            y(i) = rng.normal() * 0.02;
            yhat(i) = rng.normal();
        }
        const auto m = trading_metrics(yhat, y, 0.0, 252);

        // brute force, deliberately different formulations
        std::vector<double> r(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            double pos = 0.0;
            if (yhat(i) > 0) pos = 1.0;
            if (yhat(i) < 0) pos = -1.0;
            r[static_cast<std::size_t>(i)] = pos * y(i);
        }
        // sharpe: two-pass mean/std
        double mean = 0;
        for (double v : r) mean += v;
        mean /= n;
        double var = 0;
        for (double v : r) var += (v - mean) * (v - mean);
        var /= (n - 1);
        if (var > 0) {
            const double sharpe = mean / std::sqrt(var) * std::sqrt(252.0);
            REQUIRE(m.sharpe.has_value());
            CHECK(std::abs(*m.sharpe - sharpe) < 1e-9);
        }
        // cumulative: running product
        double v = 1.0;
        for (double x : r) v *= 1.0 + x;
        CHECK(std::abs(m.cumulative_return - (v - 1.0)) < 1e-9);
        // max drawdown: O(n^2) peak scan
        double worst = 0.0;
        double path = 1.0;
        std::vector<double> vs;
        for (double x : r) {
            path *= 1.0 + x;
            vs.push_back(path);
        }
        for (std::size_t t = 0; t < vs.size(); ++t) {
            double peak = 1.0;
            for (std::size_t s = 0; s <= t; ++s) peak = std::max(peak, vs[s]);
            worst = std::min(worst, vs[t] / peak - 1.0);
        }
        CHECK(std::abs(m.max_drawdown - worst) < 1e-9);
        // win rate / profit factor by direct counting
        long trades = 0, wins = 0;
        double up = 0, down = 0;
        for (int i = 0; i < n; ++i) {
            if (yhat(i) == 0.0) continue;
            ++trades;
            const double x = r[static_cast<std::size_t>(i)];
            if (x > 0) {
                ++wins;
                up += x;
            }
            if (x < 0) down += -x;
        }
        CHECK(m.total_trades == trades);
        CHECK(m.profitable_trades == wins);
        if (trades > 0) {
            CHECK(std::abs(m.win_rate - 100.0 * wins / trades) < 1e-9);
        }
        if (down > 0) {
            REQUIRE(m.profit_factor.has_value());
            CHECK(std::abs(*m.profit_factor - up / down) < 1e-9);
        }
        // direction accuracy
        long agree = 0;
        for (int i = 0; i < n; ++i) {
            const int sp = yhat(i) > 0 ? 1 : (yhat(i) < 0 ? -1 : 0);
            const int sa = y(i) > 0 ? 1 : (y(i) < 0 ? -1 : 0);
            agree += sp == sa;
        }
        CHECK(std::abs(m.direction_accuracy - 100.0 * agree / n) < 1e-9);
    }
}

TEST_CASE("aggregate uses the sample standard deviation") {
    const AggregateStat s = aggregate({10.0, 14.0});
    CHECK(s.mean == doctest::Approx(12.0));
    CHECK(s.sd == doctest::Approx(std::sqrt(8.0)));  // 2.828..., (n-1) convention
    CHECK(s.n == 2);
}
