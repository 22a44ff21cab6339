#include <doctest.h>

#include <cmath>

#include "kasper/detector.hpp"
#include "kasper/errors.hpp"
#include "kasper/rng.hpp"

using namespace kasper;

namespace {

RegimeDetector small_detector(std::uint64_t seed = 5) {
    DetectorConfig cfg;
    cfg.input_dim = 4;
    cfg.hidden_dim = 6;
    cfg.n_regimes = 3;
    RegimeDetector det(cfg);
    Rng rng(seed);
    det.init_params(rng);
    Eigen::MatrixXd x(64, 4);
    for (int r = 0; r < 64; ++r) {
        for (int c = 0; c < 4; ++c) x(r, c) = rng.normal();
    }
    det.init_knots(x);
    return det;
}

}  // namespace

TEST_CASE("temperature softmax values") {
    CHECK(regime_probabilities(Eigen::Vector3d(1, 1, 1), 1.0)
              .isApprox(Eigen::Vector3d(1.0 / 3, 1.0 / 3, 1.0 / 3), 1e-12));
    const Eigen::VectorXd p = regime_probabilities(Eigen::Vector3d(2, 1, 0), 1.0);
    CHECK(p(0) == doctest::Approx(0.66524).epsilon(1e-4));
    CHECK(p(1) == doctest::Approx(0.24473).epsilon(1e-4));
    CHECK(p(2) == doctest::Approx(0.09003).epsilon(1e-4));
    const Eigen::VectorXd sharp = regime_probabilities(Eigen::Vector3d(2, 1, 0), 0.1);
    CHECK(sharp.maxCoeff() > 0.9999);
}

TEST_CASE("confidence is monotone in temperature and argmax is invariant") {
    Rng rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        Eigen::VectorXd logits(3);
        for (int i = 0; i < 3; ++i) logits(i) = rng.normal() * 2.0;
        if ((logits.array() - logits(0)).abs().maxCoeff() < 1e-9) continue;
        const Eigen::VectorXd cold = regime_probabilities(logits, 0.1);
        const Eigen::VectorXd norm = regime_probabilities(logits, 1.0);
        const Eigen::VectorXd hot = regime_probabilities(logits, 10.0);
        CHECK(cold.maxCoeff() >= norm.maxCoeff() - 1e-12);
        CHECK(norm.maxCoeff() >= hot.maxCoeff() - 1e-12);
        CHECK(argmax_lowest(cold) == argmax_lowest(norm));
        CHECK(argmax_lowest(norm) == argmax_lowest(hot));
    }
}

TEST_CASE("detect emits simplex probabilities and matches shapes") {
    RegimeDetector det = small_detector();
    Rng rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        Eigen::VectorXd x(4);
        for (int i = 0; i < 4; ++i) x(i) = rng.normal();
        const RegimeOutput out = det.detect(x);
        CHECK(out.probs.size() == 3);
        CHECK(out.embedding.size() == 6);
        CHECK(out.probs.minCoeff() >= 0.0);
        CHECK(out.probs.sum() == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(out.hard_label == argmax_lowest(out.probs));
    }
    Eigen::VectorXd wrong(5);
    wrong.setZero();
    CHECK_THROWS_AS(det.detect(wrong), shape_error);
}

TEST_CASE("gumbel noise is seed-deterministic and eval mode ignores it") {
    RegimeDetector det = small_detector();
    Eigen::VectorXd x(4);
    x << 0.3, -0.5, 1.0, 0.1;
    det.train_mode = true;
    const RegimeOutput a = det.detect(x, 77);
    const RegimeOutput b = det.detect(x, 77);
    const RegimeOutput c = det.detect(x, 78);
    CHECK((a.probs.array() == b.probs.array()).all());
    CHECK(!(a.probs.array() == c.probs.array()).all());
    det.train_mode = false;
    const RegimeOutput d = det.detect(x, 77);
    const RegimeOutput e = det.detect(x, 123456);
    CHECK((d.probs.array() == e.probs.array()).all());
}

TEST_CASE("contrastive loss term values") {
    Eigen::MatrixXd z(4, 3);
    z.setZero();
    z.row(1) << 0.5, 0.0, 0.0;   // distance 0.5 from row 0
    z.row(2) << 0.0, 2.0, 0.0;   // distance 2 from row 0
    z.row(3) << 0.0, 2.0, 0.0;

    SUBCASE("identical embeddings in the same regime contribute zero") {
        CHECK(contrastive_loss(z, {{2, 3, true}}, 1.0) == doctest::Approx(0.0));
    }
    SUBCASE("separated different-regime pairs beyond the margin contribute zero") {
        CHECK(contrastive_loss(z, {{0, 2, false}}, 1.0) == doctest::Approx(0.0));
    }
    SUBCASE("same-regime pair at distance 0.5 contributes 0.25") {
        CHECK(contrastive_loss(z, {{0, 1, true}}, 1.0) == doctest::Approx(0.25));
    }
    SUBCASE("empty pair set gives zero") {
        CHECK(contrastive_loss(z, {}, 1.0) == 0.0);
    }
}

TEST_CASE("contrastive pair construction") {
    std::vector<int> labels = {0, 1, 0, 2};
    const auto pairs = contrastive_pairs(labels);
    CHECK(pairs.size() == 6);  // all pairs for a small batch
    int same = 0;
    for (const auto& p : pairs) same += p.same;
    CHECK(same == 1);  // only (0, 2)
    Rng rng(5);
    std::vector<int> big(100, 0);
    const auto sampled = contrastive_pairs(big, 32, 512, &rng);
    CHECK(sampled.size() == 512);
    for (const auto& p : sampled) CHECK(p.i != p.j);
}

TEST_CASE("orthogonality loss values") {
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(3, 3);
    CHECK(orthogonality_loss({eye}) == doctest::Approx(0.0));
    CHECK(orthogonality_loss({2.0 * eye}) == doctest::Approx(27.0));
    // rotation matrix about z
    Eigen::MatrixXd rot(3, 3);
    const double a = 0.7;
    rot << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
    CHECK(orthogonality_loss({rot}) < 1e-12);
    Eigen::MatrixXd rect(2, 3);
    rect.setZero();
    CHECK_THROWS_AS(orthogonality_loss({rect}), shape_error);
}

TEST_CASE("balance loss values") {
    Eigen::MatrixXd uniform(4, 3);
    uniform.setConstant(1.0 / 3);
    CHECK(balance_loss(uniform) == doctest::Approx(0.0));
    Eigen::MatrixXd onehot(4, 3);
    onehot.setZero();
    onehot.col(1).setOnes();
    CHECK(balance_loss(onehot) == doctest::Approx(std::log(3.0)));
    Rng rng(9);
    for (int rep = 0; rep < 20; ++rep) {
        Eigen::MatrixXd p(8, 3);
        for (int r = 0; r < 8; ++r) {
            Eigen::Vector3d logits(rng.normal(), rng.normal(), rng.normal());
            p.row(r) = regime_probabilities(logits, 1.0).transpose();
        }
        CHECK(balance_loss(p) >= -1e-15);
    }
}

TEST_CASE("all three regularizer gradients match finite differences") {
    Rng rng(13);
    SUBCASE("contrastive") {
        ad::Parameter z("z", Eigen::MatrixXd::Zero(5, 4));
        for (int r = 0; r < 5; ++r)
            for (int c = 0; c < 4; ++c) z.value(r, c) = rng.normal();
        std::vector<ad::Pair> pairs = {{0, 1, true}, {1, 2, false}, {3, 4, false}, {0, 3, true}};
        CHECK(ad::check_gradients(
                  [&](ad::Tape& t) { return ad::contrastive(t.leaf(z), pairs, 1.0); }, {&z},
                  1e-5) < 1e-5);
    }
    SUBCASE("orthogonality") {
        ad::Parameter w("w", Eigen::MatrixXd::Zero(4, 4));
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) w.value(r, c) = rng.normal() * 0.5;
        CHECK(ad::check_gradients(
                  [&](ad::Tape& t) {
                      return orthogonality_loss_graph(t, {t.leaf(w)});
                  },
                  {&w}, 1e-5) < 1e-5);
    }
    SUBCASE("balance through softmax") {
        ad::Parameter logits("l", Eigen::MatrixXd::Zero(6, 3));
        for (int r = 0; r < 6; ++r)
            for (int c = 0; c < 3; ++c) logits.value(r, c) = rng.normal();
        CHECK(ad::check_gradients(
                  [&](ad::Tape& t) {
                      return ad::balance_kl(ad::softmax_rows(t.leaf(logits), 1.0));
                  },
                  {&logits}, 1e-5) < 1e-5);
    }
}

TEST_CASE("detector graph forward equals the eval path") {
    RegimeDetector det = small_detector(21);
    Rng rng(31);
    Eigen::MatrixXd x(9, 4);
    for (int r = 0; r < 9; ++r)
        for (int c = 0; c < 4; ++c) x(r, c) = rng.normal();
    const auto eval = det.forward_eval(x);
    ad::Tape tape;
    auto graph = det.build(tape, tape.constant(x), nullptr);
    CHECK((graph.probs.value() - eval.probs).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((graph.embedding.value() - eval.embedding).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("detector graph gradients match finite differences end to end") {
    RegimeDetector det = small_detector(43);
    Rng rng(47);
    Eigen::MatrixXd x(5, 4);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 4; ++c) x(r, c) = rng.normal();
    Eigen::MatrixXd pick(3, 1);
    pick << 0.3, -1.1, 0.7;
    const double err = ad::check_gradients(
        [&](ad::Tape& t) {
            auto out = det.build(t, t.constant(x), nullptr);
            return ad::sum(ad::matmul(out.probs, t.constant(pick)));
        },
        det.parameters(), 1e-5);
    CHECK(err < 1e-4);
}
