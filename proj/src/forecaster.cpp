#include "kasper/forecaster.hpp"

#include <cmath>

#include "kasper/errors.hpp"

namespace kasper {

double soft_threshold(double w, double theta) {
    if (theta < 0.0) throw parameter_error("sparsity threshold must be non-negative");
    const double shrunk = std::abs(w) - theta;
    if (shrunk <= 0.0) return 0.0;
    return w > 0.0 ? shrunk : -shrunk;
}

RegimeForecaster::RegimeForecaster(ForecasterConfig cfg) : cfg_(cfg) {
    if (cfg.input_dim < 1 || cfg.n_regimes < 1 || cfg.n_basis_fns < 1) {
        throw parameter_error("invalid forecaster dimensions");
    }
    if (cfg.n_bsplines < BSplineBasis::kDegree + 1) {
        throw parameter_error("need at least degree+1 B-splines per basis function");
    }
    if (cfg.theta < 0.0) throw parameter_error("sparsity threshold must be non-negative");
    theta_ = Eigen::VectorXd::Constant(cfg.n_regimes, cfg.theta);
    for (int i = 0; i < cfg.n_regimes; ++i) {
        const std::string p = "forecaster.r" + std::to_string(i) + ".";
        proj_w_.emplace_back(p + "proj_w", Eigen::MatrixXd::Zero(cfg.input_dim, cfg.n_basis_fns));
        proj_b_.emplace_back(p + "proj_b", Eigen::MatrixXd::Zero(1, cfg.n_basis_fns));
        beta_.emplace_back(p + "beta", Eigen::MatrixXd::Zero(cfg.n_bsplines, cfg.n_basis_fns));
        weights_.emplace_back(p + "w", Eigen::MatrixXd::Zero(1, cfg.n_basis_fns));
        // Placeholder bases over [-3, 3] until knots are initialized from data.
        auto bb = std::make_shared<std::vector<BSplineBasis>>();
        const int nb = cfg.n_bsplines - BSplineBasis::kDegree + 1;
        Eigen::VectorXd bp(nb);
        for (int q = 0; q < nb; ++q) bp(q) = -3.0 + 6.0 * static_cast<double>(q) / (nb - 1);
        for (int j = 0; j < cfg.n_basis_fns; ++j) bb->push_back(BSplineBasis(bp));
        bases_.push_back(std::move(bb));
    }
}

void RegimeForecaster::check_regime(int regime) const {
    if (regime < 0 || regime >= cfg_.n_regimes) {
        throw std::out_of_range("regime index " + std::to_string(regime) + " out of range [0, " +
                                std::to_string(cfg_.n_regimes) + ")");
    }
}

void RegimeForecaster::init_params(Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(cfg_.input_dim + 1));
    for (int i = 0; i < cfg_.n_regimes; ++i) {
        auto& pw = proj_w_[static_cast<std::size_t>(i)].value;
        for (int r = 0; r < pw.rows(); ++r) {
            for (int c = 0; c < pw.cols(); ++c) pw(r, c) = (2.0 * rng.uniform01() - 1.0) * a;
        }
        auto& bv = beta_[static_cast<std::size_t>(i)].value;
        for (int r = 0; r < bv.rows(); ++r) {
            for (int c = 0; c < bv.cols(); ++c) bv(r, c) = rng.normal() * 0.1;
        }
        // weights start clear of the threshold so heads are live from step one
        auto& wv = weights_[static_cast<std::size_t>(i)].value;
        for (int c = 0; c < wv.cols(); ++c) {
            const double mag = 0.1 + 0.4 * rng.uniform01();
            wv(0, c) = rng.uniform01() < 0.5 ? mag : -mag;
        }
    }
}

void RegimeForecaster::knots_for_rows(int regime, const Eigen::MatrixXd& rows_x, bool refit) {
    const auto i = static_cast<std::size_t>(regime);
    Eigen::MatrixXd u = rows_x * proj_w_[i].value;
    u.rowwise() += proj_b_[i].value.row(0);
    for (int j = 0; j < cfg_.n_basis_fns; ++j) {
        BSplineBasis fresh;
        try {
            fresh = BSplineBasis::from_samples(u.col(j), cfg_.n_bsplines);
        } catch (const degenerate_input_error&) {
            continue;  // keep current knots for this projection
        }
        if (refit) {
            Eigen::VectorXd refitted;
            try {
                refitted = refit_coefficients((*bases_[i])[static_cast<std::size_t>(j)],
                                              beta_[i].value.col(j), fresh, 256);
            } catch (const numeric_fault&) {
                continue;  // near-degenerate target span: keep current knots
            }
            beta_[i].value.col(j) = refitted;
        }
        (*bases_[i])[static_cast<std::size_t>(j)] = std::move(fresh);
    }
}

void RegimeForecaster::init_knots(const Eigen::MatrixXd& train_x) {
    if (train_x.cols() != cfg_.input_dim) throw shape_error("init_knots: input dim mismatch");
    for (int i = 0; i < cfg_.n_regimes; ++i) knots_for_rows(i, train_x, false);
}

void RegimeForecaster::reinit_knots(const Eigen::MatrixXd& train_x,
                                    const std::vector<int>& regime_of_row) {
    if (static_cast<Eigen::Index>(regime_of_row.size()) != train_x.rows()) {
        throw shape_error("reinit_knots: label count != rows");
    }
    const int min_rows = std::max(2 * cfg_.n_bsplines, 16);
    for (int i = 0; i < cfg_.n_regimes; ++i) {
        std::vector<Eigen::Index> rows;
        for (std::size_t r = 0; r < regime_of_row.size(); ++r) {
            if (regime_of_row[r] == i) rows.push_back(static_cast<Eigen::Index>(r));
        }
        if (static_cast<int>(rows.size()) < min_rows) continue;
        Eigen::MatrixXd sub(static_cast<Eigen::Index>(rows.size()), train_x.cols());
        for (std::size_t r = 0; r < rows.size(); ++r) sub.row(static_cast<Eigen::Index>(r)) = train_x.row(rows[r]);
        knots_for_rows(i, sub, true);
    }
}

double RegimeForecaster::regime_head(int regime, const Eigen::VectorXd& x) const {
    check_regime(regime);
    if (x.size() != cfg_.input_dim) throw shape_error("regime_head: input dim mismatch");
    const auto i = static_cast<std::size_t>(regime);
    const Eigen::VectorXd u =
        (x.transpose() * proj_w_[i].value + proj_b_[i].value.row(0)).transpose();
    double out = 0.0;
    for (int j = 0; j < cfg_.n_basis_fns; ++j) {
        const double wj = soft_threshold(weights_[i].value(0, j), theta_(regime));
        if (wj == 0.0) continue;
        out += wj * (*bases_[i])[static_cast<std::size_t>(j)].dot(beta_[i].value.col(j), u(j));
    }
    return out;
}

Eigen::VectorXd RegimeForecaster::eval_heads(const Eigen::VectorXd& x) const {
    Eigen::VectorXd heads(cfg_.n_regimes);
    for (int i = 0; i < cfg_.n_regimes; ++i) heads(i) = regime_head(i, x);
    return heads;
}

double RegimeForecaster::forecast(const Eigen::VectorXd& x, const Eigen::VectorXd& probs) const {
    if (probs.size() != cfg_.n_regimes) throw shape_error("forecast: probability count mismatch");
    if (probs.minCoeff() < -1e-6 || std::abs(probs.sum() - 1.0) > 1e-6) {
        throw contract_error("regime probabilities are off the simplex");
    }
    double out = 0.0;
    for (int i = 0; i < cfg_.n_regimes; ++i) out += probs(i) * regime_head(i, x);
    return out;
}

Eigen::VectorXd RegimeForecaster::eval_forecast(const Eigen::MatrixXd& x,
                                                const Eigen::MatrixXd& probs) const {
    if (x.rows() != probs.rows()) throw shape_error("eval_forecast: row count mismatch");
    Eigen::VectorXd out(x.rows());
    for (Eigen::Index b = 0; b < x.rows(); ++b) {
        out(b) = forecast(x.row(b).transpose(), probs.row(b).transpose());
    }
    return out;
}

double RegimeForecaster::sparsity_penalty() const {
    double l1 = 0.0;
    for (const auto& w : weights_) l1 += w.value.array().abs().sum();
    return lambda_sparsity * l1;
}

int RegimeForecaster::zero_effective_weights() const {
    int zeros = 0;
    for (int i = 0; i < cfg_.n_regimes; ++i) {
        const auto& w = weights_[static_cast<std::size_t>(i)].value;
        for (int j = 0; j < w.cols(); ++j) {
            if (soft_threshold(w(0, j), theta_(i)) == 0.0) ++zeros;
        }
    }
    return zeros;
}

ad::Var RegimeForecaster::build_head(ad::Tape& tape, const ad::Var& x, int regime) {
    using namespace ad;
    check_regime(regime);
    const auto i = static_cast<std::size_t>(regime);
    Var u = affine(x, tape.leaf(proj_w_[i]), tape.leaf(proj_b_[i]));     // B x d
    Var phi = bspline_mix(u, tape.leaf(beta_[i]), bases_[i]);            // B x d
    Var wt = soft_threshold(tape.leaf(weights_[i]), theta_(regime));     // 1 x d
    // B x 1 = phi * wt^T
    return matmul_nt(phi, wt);
}

ad::Var RegimeForecaster::build_forecast(ad::Tape& tape, const ad::Var& x, const ad::Var& probs) {
    std::vector<ad::Var> heads;
    heads.reserve(static_cast<std::size_t>(cfg_.n_regimes));
    for (int i = 0; i < cfg_.n_regimes; ++i) heads.push_back(build_head(tape, x, i));
    return ad::mix(probs, ad::hstack(heads));
}

ad::Var RegimeForecaster::build_sparsity_penalty(ad::Tape& tape) {
    using namespace ad;
    Var total = tape.constant(Eigen::MatrixXd::Zero(1, 1), "l1_zero");
    for (auto& w : weights_) total = add(total, abs_sum(tape.leaf(w)));
    return scale(total, lambda_sparsity);
}

std::vector<ad::Parameter*> RegimeForecaster::parameters() {
    std::vector<ad::Parameter*> ps;
    for (int i = 0; i < cfg_.n_regimes; ++i) {
        const auto s = static_cast<std::size_t>(i);
        ps.push_back(&proj_w_[s]);
        ps.push_back(&proj_b_[s]);
        ps.push_back(&beta_[s]);
        ps.push_back(&weights_[s]);
    }
    return ps;
}

double RegimeForecaster::theta(int regime) const {
    check_regime(regime);
    return theta_(regime);
}

const std::vector<BSplineBasis>& RegimeForecaster::bases(int regime) const {
    check_regime(regime);
    return *bases_[static_cast<std::size_t>(regime)];
}

void RegimeForecaster::set_basis(int regime, int j, BSplineBasis basis) {
    check_regime(regime);
    if (j < 0 || j >= cfg_.n_basis_fns) throw std::out_of_range("basis index out of range");
    if (basis.size() != cfg_.n_bsplines) throw shape_error("basis size mismatch");
    (*bases_[static_cast<std::size_t>(regime)])[static_cast<std::size_t>(j)] = std::move(basis);
}

const ad::Parameter& RegimeForecaster::weights(int regime) const {
    check_regime(regime);
    return weights_[static_cast<std::size_t>(regime)];
}

}  // namespace kasper
