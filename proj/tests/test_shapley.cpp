#include <doctest.h>

#include <cmath>
#include <regex>

#include "kasper/errors.hpp"
#include "kasper/metrics.hpp"
#include "kasper/pipeline.hpp"
#include "kasper/rng.hpp"
#include "kasper/shapley.hpp"

using namespace kasper;

namespace {

// small nonlinear model with interactions for estimator tests
EvalFn nonlinear_model() {
    return [](const Eigen::VectorXd& x) {
        return std::tanh(x(0)) + 0.5 * x(1) * x(2) + 0.3 * x(3) * x(3) + 0.2 * x(0) * x(3);
    };
}

}  // namespace

TEST_CASE("exact Shapley of a linear model is a_j * (x_j - baseline_j)") {
    Rng rng(3);
    for (int rep = 0; rep < 20; ++rep) {
        Eigen::VectorXd a(5), x(5);
        for (int i = 0; i < 5; ++i) {
            a(i) = rng.normal();
            x(i) = rng.normal();
        }
        const EvalFn f = [&](const Eigen::VectorXd& v) { return a.dot(v); };
        const Eigen::VectorXd phi = exact_shapley(f, x, Eigen::VectorXd::Zero(5));
        for (int i = 0; i < 5; ++i) CHECK(phi(i) == doctest::Approx(a(i) * x(i)).epsilon(1e-10));
    }
}

TEST_CASE("exact Shapley satisfies efficiency on random nonlinear inputs") {
    Rng rng(5);
    const EvalFn f = nonlinear_model();
    const Eigen::VectorXd baseline = Eigen::VectorXd::Zero(4);
    for (int rep = 0; rep < 100; ++rep) {
        Eigen::VectorXd x(4);
        for (int i = 0; i < 4; ++i) x(i) = rng.normal();
        const Eigen::VectorXd phi = exact_shapley(f, x, baseline);
        CHECK(std::abs(phi.sum() - (f(x) - f(baseline))) < 1e-9);
    }
}

TEST_CASE("symmetric features with equal values get equal attribution") {
    const EvalFn f = [](const Eigen::VectorXd& v) { return v(0) * v(1) + v(0) + v(1) + v(2); };
    Eigen::VectorXd x(3);
    x << 0.7, 0.7, -0.3;
    const Eigen::VectorXd phi = exact_shapley(f, x, Eigen::VectorXd::Zero(3));
    CHECK(std::abs(phi(0) - phi(1)) < 1e-9);
}

TEST_CASE("exact enumeration refuses more than 16 features") {
    const EvalFn f = [](const Eigen::VectorXd& v) { return v.sum(); };
    Eigen::VectorXd x = Eigen::VectorXd::Ones(17);
    try {
        exact_shapley(f, x, Eigen::VectorXd::Zero(17));
        FAIL("expected parameter_error");
    } catch (const parameter_error& e) {
        CHECK(std::string(e.what()).find("mc_shapley") != std::string::npos);
    }
}

TEST_CASE("single-feature Monte Carlo is exact for any permutation count") {
    const EvalFn f = [](const Eigen::VectorXd& v) { return 3.0 * v(0) * v(0) + 1.0; };
    Eigen::VectorXd x(1), b(1);
    x << 2.0;
    b << 0.5;
    for (int n : {1, 3, 10}) {
        const Eigen::VectorXd phi = mc_shapley(f, x, b, n, 99);
        CHECK(phi(0) == doctest::Approx(f(x) - f(b)).epsilon(1e-12));
    }
}

TEST_CASE("Monte Carlo estimates are seed-deterministic") {
    const EvalFn f = nonlinear_model();
    Eigen::VectorXd x(4);
    x << 0.2, -1.0, 0.5, 1.5;
    const Eigen::VectorXd a = mc_shapley(f, x, Eigen::VectorXd::Zero(4), 50, 7);
    const Eigen::VectorXd b = mc_shapley(f, x, Eigen::VectorXd::Zero(4), 50, 7);
    const Eigen::VectorXd c = mc_shapley(f, x, Eigen::VectorXd::Zero(4), 50, 8);
    CHECK((a.array() == b.array()).all());
    CHECK(!(a.array() == c.array()).all());
}

TEST_CASE("Monte Carlo converges to the exact values") {
    const EvalFn f = nonlinear_model();
    Eigen::VectorXd x(4);
    x << 0.8, -0.6, 1.2, -1.5;
    const Eigen::VectorXd baseline = Eigen::VectorXd::Zero(4);
    const Eigen::VectorXd exact = exact_shapley(f, x, baseline);
    const Eigen::VectorXd mc = mc_shapley(f, x, baseline, 2000, 11);
    const double scale = exact.cwiseAbs().maxCoeff();
    CHECK((mc - exact).cwiseAbs().maxCoeff() < 0.05 * scale);
}

TEST_CASE("estimator spread shrinks with more permutations") {
    const EvalFn f = nonlinear_model();
    Eigen::VectorXd x(4);
    x << 1.0, 0.7, -0.9, 0.4;
    const Eigen::VectorXd baseline = Eigen::VectorXd::Zero(4);
    auto spread = [&](int n_perm) {
        Eigen::MatrixXd estimates(10, 4);
        for (int s = 0; s < 10; ++s) {
            estimates.row(s) =
                mc_shapley(f, x, baseline, n_perm, 1000 + static_cast<std::uint64_t>(s))
                    .transpose();
        }
        double total = 0;
        for (int j = 0; j < 4; ++j) total += sample_std(estimates.col(j));
        return total;
    };
    CHECK(spread(2000) < spread(50));
}

TEST_CASE("a feature the model ignores gets zero attribution") {
    const EvalFn f = [](const Eigen::VectorXd& v) { return v(0) * v(0) - 2.0 * v(2); };
    Eigen::VectorXd x(3);
    x << 1.2, 5.0, -0.4;  // feature 1 is ignored
    const Eigen::VectorXd baseline = Eigen::VectorXd::Zero(3);
    const Eigen::VectorXd exact = exact_shapley(f, x, baseline);
    CHECK(exact(1) == 0.0);
    // MC estimate of a null feature is exactly zero per permutation too
    const Eigen::VectorXd mc = mc_shapley(f, x, baseline, 200, 13);
    CHECK(std::abs(mc(1)) < 1e-12);
}

TEST_CASE("temporal weighting follows the decay formula") {
    SUBCASE("gamma 0.5 over two steps weights (1/3, 2/3)") {
        Eigen::MatrixXd phi(2, 1);
        phi << 1.0, 1.0;
        CHECK(temporal_weight(phi, 0.5)(0) == doctest::Approx(1.0));
        Eigen::MatrixXd ramp(2, 1);
        ramp << 0.0, 3.0;
        CHECK(temporal_weight(ramp, 0.5)(0) == doctest::Approx(2.0));  // 1/3*0 + 2/3*3
    }
    SUBCASE("equal history is a fixed point for any gamma") {
        Eigen::MatrixXd phi(7, 3);
        phi.setConstant(0.42);
        for (double g : {0.1, 0.5, 0.9}) {
            const Eigen::VectorXd w = temporal_weight(phi, g);
            for (int j = 0; j < 3; ++j) CHECK(w(j) == doctest::Approx(0.42).epsilon(1e-12));
        }
    }
    SUBCASE("gamma near one approaches the simple mean") {
        Rng rng(17);
        Eigen::MatrixXd phi(30, 2);
        for (int t = 0; t < 30; ++t)
            for (int j = 0; j < 2; ++j) phi(t, j) = rng.normal();
        const Eigen::VectorXd w = temporal_weight(phi, 0.9999);
        const Eigen::VectorXd mean = phi.colwise().mean();
        CHECK((w - mean).cwiseAbs().maxCoeff() < 1e-3);
    }
    SUBCASE("domain checks") {
        Eigen::MatrixXd empty(0, 2);
        CHECK_THROWS_AS(temporal_weight(empty, 0.9), insufficient_data_error);
        Eigen::MatrixXd one(1, 1);
        one << 1.0;
        CHECK_THROWS_AS(temporal_weight(one, 1.0), parameter_error);
    }
}

TEST_CASE("rule extraction emits one well-formed rule per regime") {
    // small trained-ish model over 4 features
    ModelConfig mc = ModelConfig::with_dims(4, 8, 3);
    mc.forecaster.n_basis_fns = 3;
    mc.forecaster.n_bsplines = 5;
    KasperModel model(mc);
    Rng rng(19);
    Eigen::MatrixXd x(160, 4);
    for (int r = 0; r < 160; ++r)
        for (int c = 0; c < 4; ++c) x(r, c) = rng.normal();
    model.init(19, x);

    FeatureMatrix fm;
    fm.X = x;
    fm.y = Eigen::VectorXd::Zero(160);
    fm.names = {"a", "b", "c", "d"};
    fm.dates.resize(160);
    Date d{2020, 1, 2};
    for (int r = 0; r < 160; ++r) {
        fm.dates[static_cast<std::size_t>(r)] = d;
        d = next_business_day(d);
    }
    fm.split.assign(160, Split::test);
    fm.scaled = true;
    fm.scaler.mean = Eigen::VectorXd::Zero(4);
    fm.scaler.std = Eigen::VectorXd::Ones(4);
    fm.scaler.fitted = true;
    fm.target_scaler.mean = Eigen::VectorXd::Zero(1);
    fm.target_scaler.std = Eigen::VectorXd::Ones(1);
    fm.target_scaler.fitted = true;

    AttributionConfig cfg;
    cfg.n_samples = 20;
    cfg.window = 10;
    cfg.seed = 21;
    const PipelineState pipe = PipelineState::from(fm);
    const RegimeRules rules = extract_rules(model, pipe, fm, Split::test, cfg);
    REQUIRE(rules.rules.size() == 3);

    const std::regex grammar(R"(^Regime \d+: \S+ \+ \S+ \+ \S+ -> -?[0-9][0-9.eE+-]*$)");
    for (const auto& rule : rules.rules) {
        if (rule.insufficient_data) continue;
        INFO(rule.rule_string);
        CHECK(std::regex_match(rule.rule_string, grammar));
        REQUIRE(rule.feature_names.size() == 3);
        // ordered by descending |phi|, ties by lower index
        CHECK(std::abs(rule.phi[0]) >= std::abs(rule.phi[1]) - 1e-15);
        CHECK(std::abs(rule.phi[1]) >= std::abs(rule.phi[2]) - 1e-15);
        CHECK(rule.n_samples <= 10);
    }

    // determinism of the whole extraction
    const RegimeRules again = extract_rules(model, pipe, fm, Split::test, cfg);
    for (std::size_t i = 0; i < rules.rules.size(); ++i) {
        CHECK(rules.rules[i].rule_string == again.rules[i].rule_string);
    }
}

TEST_CASE("top features are ranked by weighted attribution with index tie-break") {
    Eigen::VectorXd phi(5);
    phi << 5.0, -3.0, 1.0, 0.1, 3.0;  // |phi|: 5, 3, 1, 0.1, 3 -> order 0, 1, 4, 2, 3
    std::vector<int> order(5);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return std::abs(phi(a)) > std::abs(phi(b)); });
    CHECK(order[0] == 0);
    CHECK(order[1] == 1);  // ties between 1 and 4 resolve to the lower index
    CHECK(order[2] == 4);
}
