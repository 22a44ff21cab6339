#pragma once

#include <Eigen/Dense>
#include <memory>
#include <vector>

#include "kasper/autodiff.hpp"
#include "kasper/rng.hpp"

namespace kasper {

struct ForecasterConfig {
    int input_dim = 8;
    int n_regimes = 3;
    int n_basis_fns = 8;   // d: basis functions per regime
    int n_bsplines = 8;    // K: B-splines per basis function
    double theta = 0.01;   // fixed sparsity threshold per regime
};

// Scalar soft-thresholding, sign preserving.
double soft_threshold(double w, double theta);

// KAN layer 2: per regime, d learned scalar projections of the input feed
// cubic B-spline function approximators; soft-thresholded weights mix them
// into the regime forecast, and regime probabilities aggregate the heads.
class RegimeForecaster {
   public:
    explicit RegimeForecaster(ForecasterConfig cfg);

    const ForecasterConfig& config() const { return cfg_; }

    void init_params(Rng& rng);
    // Regime-agnostic knots from quantiles of the train-set projections.
    void init_knots(const Eigen::MatrixXd& train_x);
    // Regime-conditional knots from warm-up regime assignments; coefficients
    // are refit so each basis function keeps its learned shape. Regimes with
    // fewer than max(2K, 16) samples keep their current knots.
    void reinit_knots(const Eigen::MatrixXd& train_x, const std::vector<int>& regime_of_row);

    // Eval-mode single-sample regime head (Eq-20-style sparse mix).
    double regime_head(int regime, const Eigen::VectorXd& x) const;
    // Probability-weighted aggregate forecast; probs must lie on the simplex
    // within 1e-6.
    double forecast(const Eigen::VectorXd& x, const Eigen::VectorXd& probs) const;

    Eigen::VectorXd eval_heads(const Eigen::VectorXd& x) const;                // k heads
    Eigen::VectorXd eval_forecast(const Eigen::MatrixXd& x,
                                  const Eigen::MatrixXd& probs) const;         // batch

    // lambda * sum_{i,j} |w_j^(i)| over raw (unthresholded) weights.
    double sparsity_penalty() const;
    double lambda_sparsity = 0.001;

    // Count of effective (soft-thresholded) weights that are exactly zero.
    int zero_effective_weights() const;

    ad::Var build_head(ad::Tape& tape, const ad::Var& x, int regime);          // B x 1
    ad::Var build_forecast(ad::Tape& tape, const ad::Var& x, const ad::Var& probs);
    ad::Var build_sparsity_penalty(ad::Tape& tape);

    std::vector<ad::Parameter*> parameters();

    double theta(int regime) const;
    const std::vector<BSplineBasis>& bases(int regime) const;
    void set_basis(int regime, int j, BSplineBasis basis);
    const ad::Parameter& weights(int regime) const;

   private:
    ForecasterConfig cfg_;
    std::vector<ad::Parameter> proj_w_;     // per regime: input_dim x d
    std::vector<ad::Parameter> proj_b_;     // per regime: 1 x d
    std::vector<ad::Parameter> beta_;       // per regime: K x d
    std::vector<ad::Parameter> weights_;    // per regime: 1 x d
    std::vector<std::shared_ptr<std::vector<BSplineBasis>>> bases_;  // per regime, d bases
    Eigen::VectorXd theta_;

    void check_regime(int regime) const;
    void knots_for_rows(int regime, const Eigen::MatrixXd& rows_x, bool refit);
};

}  // namespace kasper
