#include <doctest.h>

#include <cmath>

#include "kasper/errors.hpp"
#include "kasper/forecaster.hpp"
#include "kasper/rng.hpp"

using namespace kasper;

namespace {

RegimeForecaster make_forecaster(double theta, std::uint64_t seed = 3, int d = 4, int k = 6) {
    ForecasterConfig cfg;
    cfg.input_dim = 4;
    cfg.n_regimes = 3;
    cfg.n_basis_fns = d;
    cfg.n_bsplines = k;
    cfg.theta = theta;
    RegimeForecaster fore(cfg);
    Rng rng(seed);
    fore.init_params(rng);
    Eigen::MatrixXd x(80, 4);
    for (int r = 0; r < 80; ++r)
        for (int c = 0; c < 4; ++c) x(r, c) = rng.normal();
    fore.init_knots(x);
    return fore;
}

}  // namespace

TEST_CASE("soft threshold examples") {
    CHECK(soft_threshold(0.5, 0.2) == doctest::Approx(0.3));
    CHECK(soft_threshold(-0.5, 0.2) == doctest::Approx(-0.3));
    CHECK(soft_threshold(0.1, 0.2) == 0.0);
    CHECK_THROWS_AS(soft_threshold(0.5, -0.1), parameter_error);
}

TEST_CASE("effective weights never exceed raw weights in magnitude") {
    Rng rng(5);
    for (int rep = 0; rep < 200; ++rep) {
        const double w = rng.normal();
        const double theta = rng.uniform01();
        CHECK(std::abs(soft_threshold(w, theta)) <= std::abs(w) + 1e-15);
    }
}

TEST_CASE("zero weights give a zero head for any input") {
    RegimeForecaster fore = make_forecaster(0.0);
    auto* w0 = const_cast<ad::Parameter*>(&fore.weights(0));
    w0->value.setZero();
    Rng rng(7);
    for (int rep = 0; rep < 10; ++rep) {
        Eigen::VectorXd x(4);
        for (int i = 0; i < 4; ++i) x(i) = rng.normal();
        CHECK(fore.regime_head(0, x) == 0.0);
    }
}

TEST_CASE("partition of unity collapses a constant-coefficient basis function") {
    // d = 1, all beta equal: phi(x) = c for every x, so the head is w * c.
    ForecasterConfig cfg;
    cfg.input_dim = 4;
    cfg.n_regimes = 3;
    cfg.n_basis_fns = 1;
    cfg.n_bsplines = 6;
    cfg.theta = 0.0;
    RegimeForecaster fore(cfg);
    Rng rng(11);
    fore.init_params(rng);
    Eigen::MatrixXd x(50, 4);
    for (int r = 0; r < 50; ++r)
        for (int c = 0; c < 4; ++c) x(r, c) = rng.normal();
    fore.init_knots(x);
    for (int i = 0; i < 3; ++i) {
        auto params = fore.parameters();
        // params layout per regime: proj_w, proj_b, beta, w
        params[static_cast<std::size_t>(4 * i + 2)]->value.setOnes();  // beta = 1
        params[static_cast<std::size_t>(4 * i + 3)]->value.setConstant(0.5);
    }
    Eigen::VectorXd probe(4);
    probe << 2.0, -1.0, 0.3, 0.9;
    CHECK(fore.regime_head(1, probe) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("a threshold above every weight silences the head") {
    RegimeForecaster fore = make_forecaster(10.0);
    Rng rng(13);
    Eigen::VectorXd x(4);
    for (int i = 0; i < 4; ++i) x(i) = rng.normal();
    for (int regime = 0; regime < 3; ++regime) CHECK(fore.regime_head(regime, x) == 0.0);
    CHECK(fore.zero_effective_weights() == 3 * 4);
}

TEST_CASE("forecast is the probability mixture of heads") {
    RegimeForecaster fore = make_forecaster(0.0, 17);
    Rng rng(19);
    Eigen::VectorXd x(4);
    for (int i = 0; i < 4; ++i) x(i) = rng.normal();
    const Eigen::VectorXd heads = fore.eval_heads(x);

    SUBCASE("one-hot probabilities pick a single head") {
        Eigen::Vector3d p(0.0, 1.0, 0.0);
        CHECK(fore.forecast(x, p) == doctest::Approx(heads(1)).epsilon(1e-12));
    }
    SUBCASE("uniform mixture averages the heads") {
        Eigen::Vector3d p(1.0 / 3, 1.0 / 3, 1.0 / 3);
        CHECK(fore.forecast(x, p) == doctest::Approx(heads.mean()).epsilon(1e-12));
    }
    SUBCASE("mixture stays inside the head range") {
        for (int rep = 0; rep < 50; ++rep) {
            Eigen::Vector3d logits(rng.normal(), rng.normal(), rng.normal());
            Eigen::Vector3d p = (logits.array() - logits.maxCoeff()).exp();
            p /= p.sum();
            const double f = fore.forecast(x, p);
            CHECK(f >= heads.minCoeff() - 1e-12);
            CHECK(f <= heads.maxCoeff() + 1e-12);
        }
    }
    SUBCASE("off-simplex probabilities are rejected") {
        CHECK_THROWS_AS(fore.forecast(x, Eigen::Vector3d(0.5, 0.5, 0.5)), contract_error);
        CHECK_THROWS_AS(fore.forecast(x, Eigen::Vector3d(1.5, -0.5, 0.0)), contract_error);
    }
}

TEST_CASE("explicit head values average exactly") {
    // constant heads via d = 1, beta all-equal, w = 1, theta = 0
    ForecasterConfig cfg;
    cfg.input_dim = 4;
    cfg.n_regimes = 3;
    cfg.n_basis_fns = 1;
    cfg.n_bsplines = 6;
    cfg.theta = 0.0;
    RegimeForecaster fore(cfg);
    Rng rng(23);
    fore.init_params(rng);
    Eigen::MatrixXd x(50, 4);
    for (int r = 0; r < 50; ++r)
        for (int c = 0; c < 4; ++c) x(r, c) = rng.normal();
    fore.init_knots(x);
    auto params = fore.parameters();
    for (int i = 0; i < 3; ++i) {
        params[static_cast<std::size_t>(4 * i + 2)]->value.setConstant(static_cast<double>(i + 1));
        params[static_cast<std::size_t>(4 * i + 3)]->value.setOnes();
    }
    Eigen::VectorXd probe(4);
    probe << 0.5, 0.5, -0.5, 0.0;
    CHECK(fore.forecast(probe, Eigen::Vector3d(1.0 / 3, 1.0 / 3, 1.0 / 3)) ==
          doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("sparsity penalty arithmetic") {
    RegimeForecaster fore = make_forecaster(0.01, 29, 1, 6);
    auto params = fore.parameters();
    for (int i = 0; i < 3; ++i) params[static_cast<std::size_t>(4 * i + 3)]->value.setZero();
    fore.lambda_sparsity = 0.001;
    CHECK(fore.sparsity_penalty() == 0.0);
    params[3]->value(0, 0) = 0.5;
    params[7]->value(0, 0) = -0.5;
    CHECK(fore.sparsity_penalty() == doctest::Approx(0.001));
    params[3]->value(0, 0) = 1.0;
    params[7]->value(0, 0) = -1.0;
    CHECK(fore.sparsity_penalty() == doctest::Approx(0.002));
}

TEST_CASE("raising the threshold never adds nonzero effective weights") {
    Rng rng(31);
    Eigen::VectorXd w(20);
    for (int i = 0; i < 20; ++i) w(i) = rng.normal();
    int prev = 21;
    for (double theta : {0.0, 0.1, 0.3, 0.8, 2.0}) {
        int nz = 0;
        for (int i = 0; i < 20; ++i) nz += soft_threshold(w(i), theta) != 0.0;
        CHECK(nz <= prev);
        prev = nz;
    }
}

TEST_CASE("invalid regime index raises a range error") {
    RegimeForecaster fore = make_forecaster(0.01);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(4);
    CHECK_THROWS_AS(fore.regime_head(3, x), std::out_of_range);
    CHECK_THROWS_AS(fore.regime_head(-1, x), std::out_of_range);
}

TEST_CASE("forecast gradients match finite differences away from kinks") {
    RegimeForecaster fore = make_forecaster(0.01, 37);
    Rng rng(41);
    Eigen::MatrixXd x(6, 4);
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 4; ++c) x(r, c) = rng.normal();
    Eigen::MatrixXd probs(6, 3);
    for (int r = 0; r < 6; ++r) {
        Eigen::Vector3d l(rng.normal(), rng.normal(), rng.normal());
        Eigen::Vector3d p = (l.array() - l.maxCoeff()).exp();
        probs.row(r) = (p / p.sum()).transpose();
    }
    // keep weights away from the |w| = theta kink
    auto params = fore.parameters();
    for (int i = 0; i < 3; ++i) {
        auto& w = params[static_cast<std::size_t>(4 * i + 3)]->value;
        for (int c = 0; c < w.cols(); ++c) {
            if (std::abs(std::abs(w(0, c)) - 0.01) < 1e-3) w(0, c) += 0.01;
        }
    }
    const double err = ad::check_gradients(
        [&](ad::Tape& t) {
            return ad::mean(fore.build_forecast(t, t.constant(x), t.constant(probs)));
        },
        fore.parameters(), 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("forecaster graph equals the eval path") {
    RegimeForecaster fore = make_forecaster(0.01, 43);
    Rng rng(47);
    Eigen::MatrixXd x(7, 4);
    for (int r = 0; r < 7; ++r)
        for (int c = 0; c < 4; ++c) x(r, c) = rng.normal();
    Eigen::MatrixXd probs(7, 3);
    for (int r = 0; r < 7; ++r) {
        Eigen::Vector3d l(rng.normal(), rng.normal(), rng.normal());
        Eigen::Vector3d p = (l.array() - l.maxCoeff()).exp();
        probs.row(r) = (p / p.sum()).transpose();
    }
    const Eigen::VectorXd eval = fore.eval_forecast(x, probs);
    ad::Tape tape;
    const ad::Var graph = fore.build_forecast(tape, tape.constant(x), tape.constant(probs));
    CHECK((graph.value().col(0) - eval).cwiseAbs().maxCoeff() < 1e-12);
}
