#include "kasper/detector.hpp"

#include <cmath>

#include "kasper/errors.hpp"

namespace kasper {

namespace {

double gelu_scalar(double x) {
    constexpr double kC = 0.7978845608028654;
    constexpr double kA = 0.044715;
    return 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
}

Eigen::MatrixXd xavier(Rng& rng, int rows, int cols) {
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) m(r, c) = (2.0 * rng.uniform01() - 1.0) * a;
    }
    return m;
}

Eigen::MatrixXd gaussian(Rng& rng, int rows, int cols, double std_dev) {
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) m(r, c) = rng.normal() * std_dev;
    }
    return m;
}

}  // namespace

Eigen::VectorXd regime_probabilities(const Eigen::VectorXd& logits, double tau) {
    if (tau <= 0.0) throw parameter_error("temperature must be positive");
    Eigen::ArrayXd z = logits.array() / tau;
    z -= z.maxCoeff();
    Eigen::ArrayXd e = z.exp();
    return (e / e.sum()).matrix();
}

int argmax_lowest(const Eigen::VectorXd& v) {
    int best = 0;
    for (int i = 1; i < v.size(); ++i) {
        if (v(i) > v(best)) best = i;
    }
    return best;
}

RegimeDetector::RegimeDetector(DetectorConfig cfg)
    : cfg_(cfg),
      w_in_("detector.w_in", Eigen::MatrixXd::Zero(cfg.input_dim, cfg.hidden_dim)),
      b_in_("detector.b_in", Eigen::MatrixXd::Zero(1, cfg.hidden_dim)),
      spline_w_("detector.spline_w", Eigen::MatrixXd::Zero(cfg.n_linear, cfg.hidden_dim)),
      spline_v_("detector.spline_v", Eigen::MatrixXd::Zero(cfg.n_cubic, cfg.hidden_dim)),
      w_hidden_("detector.w_hidden", Eigen::MatrixXd::Zero(cfg.hidden_dim, cfg.hidden_dim)),
      b_hidden_("detector.b_hidden", Eigen::MatrixXd::Zero(1, cfg.hidden_dim)),
      w_head_("detector.w_head", Eigen::MatrixXd::Zero(cfg.hidden_dim, cfg.n_regimes)),
      b_head_("detector.b_head", Eigen::MatrixXd::Zero(1, cfg.n_regimes)),
      stack_(std::make_shared<SplineStack>()) {
    if (cfg.input_dim < 1 || cfg.hidden_dim < 1 || cfg.n_regimes < 2) {
        throw parameter_error("invalid detector dimensions");
    }
    if (cfg.tau <= 0.0) throw parameter_error("temperature must be positive");
    regime_mats_.reserve(static_cast<std::size_t>(cfg.n_regimes));
    for (int r = 0; r < cfg.n_regimes; ++r) {
        regime_mats_.emplace_back("detector.w_regime" + std::to_string(r),
                                  Eigen::MatrixXd::Zero(cfg.hidden_dim, cfg.hidden_dim));
    }
    // Default knots: unit-ish range until init_knots sees data.
    Eigen::MatrixXd knots(cfg.n_linear + 1, cfg.hidden_dim);
    for (int i = 0; i <= cfg.n_linear; ++i) {
        knots.row(i).setConstant(-1.5 + 3.0 * static_cast<double>(i) / cfg.n_linear);
    }
    stack_->knots = std::move(knots);
}

void RegimeDetector::init_params(Rng& rng) {
    w_in_.value = xavier(rng, cfg_.input_dim, cfg_.hidden_dim);
    spline_w_.value = gaussian(rng, cfg_.n_linear, cfg_.hidden_dim, 0.5);
    spline_v_.value = gaussian(rng, cfg_.n_cubic, cfg_.hidden_dim, 0.5);
    w_hidden_.value = xavier(rng, cfg_.hidden_dim, cfg_.hidden_dim);
    w_head_.value = xavier(rng, cfg_.hidden_dim, cfg_.n_regimes);
    const double wr_std = 1.0 / std::sqrt(static_cast<double>(cfg_.hidden_dim));
    for (auto& wr : regime_mats_) {
        wr.value = gaussian(rng, cfg_.hidden_dim, cfg_.hidden_dim, wr_std);
    }
}

void RegimeDetector::init_knots(const Eigen::MatrixXd& train_x) {
    if (train_x.cols() != cfg_.input_dim) throw shape_error("init_knots: input dim mismatch");
    Eigen::MatrixXd pre = train_x * w_in_.value;
    pre.rowwise() += b_in_.value.row(0);
    Eigen::MatrixXd knots(cfg_.n_linear + 1, cfg_.hidden_dim);
    for (int j = 0; j < cfg_.hidden_dim; ++j) {
        Eigen::VectorXd col = pre.col(j);
        try {
            knots.col(j) = init_knots_from_quantiles(col, cfg_.n_linear + 1);
        } catch (const degenerate_input_error&) {
            // constant pre-activation: fall back to a unit window around it
            const double center = col.size() > 0 ? col(0) : 0.0;
            for (int i = 0; i <= cfg_.n_linear; ++i) {
                knots(i, j) = center - 1.5 + 3.0 * static_cast<double>(i) / cfg_.n_linear;
            }
        }
    }
    stack_->knots = std::move(knots);
}

void RegimeDetector::set_knots(Eigen::MatrixXd knots) {
    if (knots.rows() != cfg_.n_linear + 1 || knots.cols() != cfg_.hidden_dim) {
        throw shape_error("set_knots: wrong shape");
    }
    stack_->knots = std::move(knots);
}

Eigen::MatrixXd RegimeDetector::hidden_eval(const Eigen::MatrixXd& x) const {
    if (x.cols() != cfg_.input_dim) throw shape_error("detector input dimension mismatch");
    Eigen::MatrixXd pre = x * w_in_.value;
    pre.rowwise() += b_in_.value.row(0);
    Eigen::MatrixXd act(pre.rows(), pre.cols());
    for (int j = 0; j < cfg_.hidden_dim; ++j) {
        const SplineActivation unit = stack_->unit(j);
        for (Eigen::Index b = 0; b < pre.rows(); ++b) {
            act(b, j) = spline_forward(unit, spline_w_.value.col(j), spline_v_.value.col(j),
                                       pre(b, j));
        }
    }
    Eigen::MatrixXd h = act * w_hidden_.value;
    h.rowwise() += b_hidden_.value.row(0);
    return h.unaryExpr(&gelu_scalar);
}

Eigen::MatrixXd RegimeDetector::logits_eval(const Eigen::MatrixXd& z) const {
    Eigen::MatrixXd logits = z * w_head_.value;
    logits.rowwise() += b_head_.value.row(0);
    const double inv_h = 1.0 / static_cast<double>(cfg_.hidden_dim);
    for (int r = 0; r < cfg_.n_regimes; ++r) {
        logits.col(r) += (z * regime_mats_[static_cast<std::size_t>(r)].value.transpose())
                             .rowwise()
                             .sum() *
                         inv_h;
    }
    return logits;
}

RegimeDetector::EvalOut RegimeDetector::forward_eval(const Eigen::MatrixXd& x) const {
    EvalOut out;
    out.embedding = hidden_eval(x);
    out.logits = logits_eval(out.embedding);
    out.probs.resize(out.logits.rows(), out.logits.cols());
    for (Eigen::Index b = 0; b < out.logits.rows(); ++b) {
        out.probs.row(b) = regime_probabilities(out.logits.row(b).transpose(), cfg_.tau).transpose();
    }
    return out;
}

RegimeOutput RegimeDetector::detect(const Eigen::VectorXd& x,
                                    std::optional<std::uint64_t> noise_seed) const {
    if (x.size() != cfg_.input_dim) throw shape_error("detect: input dimension mismatch");
    EvalOut fe = forward_eval(x.transpose());
    Eigen::VectorXd logits = fe.logits.row(0).transpose();
    if (train_mode && noise_seed) {
        Rng rng(*noise_seed);
        for (int i = 0; i < logits.size(); ++i) logits(i) += rng.gumbel();
    }
    RegimeOutput out;
    out.probs = regime_probabilities(logits, cfg_.tau);
    out.embedding = fe.embedding.row(0).transpose();
    out.hard_label = argmax_lowest(out.probs);
    return out;
}

RegimeDetector::GraphOut RegimeDetector::build(ad::Tape& tape, const ad::Var& x,
                                               const Eigen::MatrixXd* gumbel_noise) {
    using namespace ad;
    Var pre = affine(x, tape.leaf(w_in_), tape.leaf(b_in_));
    Var act = spline_apply(pre, tape.leaf(spline_w_), tape.leaf(spline_v_), stack_);
    Var h = affine(act, tape.leaf(w_hidden_), tape.leaf(b_hidden_));
    Var z = gelu(h);
    Var logits = affine(z, tape.leaf(w_head_), tape.leaf(b_head_));

    const double inv_h = 1.0 / static_cast<double>(cfg_.hidden_dim);
    std::vector<Var> wr_leaves;
    std::vector<Var> pooled_cols;
    wr_leaves.reserve(regime_mats_.size());
    for (auto& wr : regime_mats_) {
        Var w = tape.leaf(wr);
        wr_leaves.push_back(w);
        // column r of the pooled response: mean over hidden of z * W_r^T
        Var zr = matmul_nt(z, w);  // B x hidden
        Var ones = tape.constant(Eigen::MatrixXd::Constant(cfg_.hidden_dim, 1, inv_h), "pool");
        pooled_cols.push_back(matmul(zr, ones));  // B x 1
    }
    logits = add(logits, hstack(pooled_cols));
    if (gumbel_noise != nullptr) logits = add_constant(logits, *gumbel_noise);

    GraphOut out;
    out.probs = softmax_rows(logits, cfg_.tau);
    out.embedding = z;
    out.regime_mats = std::move(wr_leaves);
    return out;
}

std::vector<ad::Parameter*> RegimeDetector::parameters() {
    std::vector<ad::Parameter*> ps = {&w_in_,     &b_in_,     &spline_w_, &spline_v_,
                                      &w_hidden_, &b_hidden_, &w_head_,   &b_head_};
    for (auto& wr : regime_mats_) ps.push_back(&wr);
    return ps;
}

std::vector<ad::Pair> contrastive_pairs(const std::vector<int>& hard_labels,
                                        std::size_t all_pairs_cap, std::size_t n_sampled,
                                        Rng* rng) {
    const std::size_t b = hard_labels.size();
    std::vector<ad::Pair> pairs;
    if (b < 2) return pairs;
    if (b <= all_pairs_cap || rng == nullptr) {
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = i + 1; j < b; ++j) {
                pairs.push_back({static_cast<int>(i), static_cast<int>(j),
                                 hard_labels[i] == hard_labels[j]});
            }
        }
    } else {
        pairs.reserve(n_sampled);
        for (std::size_t s = 0; s < n_sampled; ++s) {
            auto i = static_cast<std::size_t>(rng->below(b));
            auto j = static_cast<std::size_t>(rng->below(b - 1));
            if (j >= i) ++j;
            pairs.push_back({static_cast<int>(i), static_cast<int>(j),
                             hard_labels[i] == hard_labels[j]});
        }
    }
    return pairs;
}

double contrastive_loss(const Eigen::MatrixXd& embeddings, const std::vector<ad::Pair>& pairs,
                        double margin) {
    ad::Tape tape;
    ad::Var z = tape.constant(embeddings, "emb");
    return ad::contrastive(z, pairs, margin).value()(0, 0);
}

double orthogonality_loss(const std::vector<Eigen::MatrixXd>& regime_mats) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    vars.reserve(regime_mats.size());
    for (const auto& w : regime_mats) {
        if (w.rows() != w.cols()) throw shape_error("orthogonality_loss: matrix not square");
        vars.push_back(tape.constant(w, "w_r"));
    }
    return orthogonality_loss_graph(tape, vars).value()(0, 0);
}

double balance_loss(const Eigen::MatrixXd& probs) {
    ad::Tape tape;
    return ad::balance_kl(tape.constant(probs, "probs")).value()(0, 0);
}

ad::Var orthogonality_loss_graph(ad::Tape& tape, const std::vector<ad::Var>& regime_mats) {
    using namespace ad;
    if (regime_mats.empty()) return tape.constant(Eigen::MatrixXd::Zero(1, 1), "orth_empty");
    Var total = tape.constant(Eigen::MatrixXd::Zero(1, 1), "orth_zero");
    for (const Var& w : regime_mats) {
        if (w.rows() != w.cols()) throw shape_error("orthogonality loss needs square matrices");
        Var eye = tape.constant(Eigen::MatrixXd::Identity(w.rows(), w.cols()), "eye");
        total = add(total, sqnorm(sub(matmul_nt(w, w), eye)));
    }
    return scale(total, 1.0 / static_cast<double>(regime_mats.size()));
}

}  // namespace kasper
