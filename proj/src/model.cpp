#include "kasper/model.hpp"

#include "kasper/errors.hpp"

namespace kasper {

ModelConfig ModelConfig::with_dims(int input_dim, int hidden_dim, int n_regimes) {
    ModelConfig cfg;
    cfg.detector.input_dim = input_dim;
    cfg.detector.hidden_dim = hidden_dim;
    cfg.detector.n_regimes = n_regimes;
    cfg.forecaster.input_dim = input_dim;
    cfg.forecaster.n_regimes = n_regimes;
    return cfg;
}

KasperModel::KasperModel(ModelConfig cfg)
    : cfg_(cfg), detector_(cfg.detector), forecaster_(cfg.forecaster) {
    if (cfg.detector.input_dim != cfg.forecaster.input_dim ||
        cfg.detector.n_regimes != cfg.forecaster.n_regimes) {
        throw parameter_error("detector/forecaster dimensions disagree");
    }
}

void KasperModel::init(std::uint64_t seed, const Eigen::MatrixXd& train_x) {
    Rng rng(seed);
    detector_.init_params(rng);
    forecaster_.init_params(rng);
    detector_.init_knots(train_x);
    forecaster_.init_knots(train_x);
}

Eigen::VectorXd KasperModel::predict(const Eigen::MatrixXd& x) const {
    const auto det = detector_.forward_eval(x);
    return forecaster_.eval_forecast(x, det.probs);
}

Eigen::MatrixXd KasperModel::predict_probs(const Eigen::MatrixXd& x) const {
    return detector_.forward_eval(x).probs;
}

std::vector<int> KasperModel::hard_labels(const Eigen::MatrixXd& x) const {
    const Eigen::MatrixXd probs = predict_probs(x);
    std::vector<int> labels(static_cast<std::size_t>(probs.rows()));
    for (Eigen::Index b = 0; b < probs.rows(); ++b) {
        labels[static_cast<std::size_t>(b)] = argmax_lowest(probs.row(b).transpose());
    }
    return labels;
}

KasperModel::LossGraph KasperModel::build_loss(ad::Tape& tape, const Eigen::MatrixXd& x,
                                               const Eigen::VectorXd& y, const LossWeights& w,
                                               bool train_mode, Rng* noise_rng, Rng* pair_rng) {
    using namespace ad;
    if (x.rows() != y.size()) throw shape_error("build_loss: batch row mismatch");
    if (x.rows() < 1) throw insufficient_data_error("build_loss: empty batch");

    Var xin = tape.constant(x, "batch_x");
    Eigen::MatrixXd noise;
    if (train_mode && noise_rng != nullptr) {
        noise.resize(x.rows(), cfg_.detector.n_regimes);
        for (Eigen::Index b = 0; b < noise.rows(); ++b) {
            for (Eigen::Index k = 0; k < noise.cols(); ++k) noise(b, k) = noise_rng->gumbel();
        }
    }
    auto det = detector_.build(tape, xin, noise.size() > 0 ? &noise : nullptr);
    Var pred = forecaster_.build_forecast(tape, xin, det.probs);
    Var target = tape.constant(y, "batch_y");

    LossGraph out;
    Var huber = huber_mean(pred, target, w.huber_delta);

    forecaster_.lambda_sparsity = w.lambda_sparsity;
    Var sparsity = forecaster_.build_sparsity_penalty(tape);

    // pairs follow the hard labels of the current forward pass
    const Eigen::MatrixXd& probs_v = det.probs.value();
    std::vector<int> labels(static_cast<std::size_t>(probs_v.rows()));
    for (Eigen::Index b = 0; b < probs_v.rows(); ++b) {
        labels[static_cast<std::size_t>(b)] = argmax_lowest(probs_v.row(b).transpose());
    }
    const auto pairs = contrastive_pairs(labels, 32, 512, pair_rng);
    Var contr = contrastive(det.embedding, pairs, w.contrastive_margin);
    Var orth = orthogonality_loss_graph(tape, det.regime_mats);
    Var bal = balance_kl(det.probs);

    Var total = add(huber, sparsity);
    total = add(total, scale(contr, w.lambda_contrastive));
    total = add(total, scale(orth, w.lambda_orth));
    total = add(total, scale(bal, w.lambda_balance));

    out.total = total;
    out.terms.total = total.value()(0, 0);
    out.terms.huber = huber.value()(0, 0);
    out.terms.sparsity = sparsity.value()(0, 0);
    out.terms.contrastive = contr.value()(0, 0) * w.lambda_contrastive;
    out.terms.orthogonality = orth.value()(0, 0) * w.lambda_orth;
    out.terms.balance = bal.value()(0, 0) * w.lambda_balance;
    return out;
}

LossTerms KasperModel::eval_loss(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                 const LossWeights& w, std::uint64_t pair_seed) {
    Rng pair_rng(pair_seed);
    ad::Tape tape;
    return build_loss(tape, x, y, w, false, nullptr, &pair_rng).terms;
}

std::vector<ad::Parameter*> KasperModel::parameters() {
    auto ps = detector_.parameters();
    auto fs = forecaster_.parameters();
    ps.insert(ps.end(), fs.begin(), fs.end());
    return ps;
}

std::vector<std::pair<std::string, Eigen::MatrixXd>> KasperModel::state_arrays() const {
    std::vector<std::pair<std::string, Eigen::MatrixXd>> arrays;
    arrays.emplace_back("detector.knots", detector_.spline_stack().knots);
    for (int i = 0; i < cfg_.forecaster.n_regimes; ++i) {
        const auto& bases = forecaster_.bases(i);
        for (int j = 0; j < cfg_.forecaster.n_basis_fns; ++j) {
            arrays.emplace_back(
                "forecaster.r" + std::to_string(i) + ".basis" + std::to_string(j) + ".breakpoints",
                bases[static_cast<std::size_t>(j)].breakpoints());
        }
    }
    return arrays;
}

void KasperModel::load_state_array(const std::string& name, const Eigen::MatrixXd& value) {
    if (name == "detector.knots") {
        detector_.set_knots(value);
        return;
    }
    for (int i = 0; i < cfg_.forecaster.n_regimes; ++i) {
        for (int j = 0; j < cfg_.forecaster.n_basis_fns; ++j) {
            const std::string expect =
                "forecaster.r" + std::to_string(i) + ".basis" + std::to_string(j) + ".breakpoints";
            if (name == expect) {
                forecaster_.set_basis(i, j, BSplineBasis(Eigen::VectorXd(value.col(0))));
                return;
            }
        }
    }
    throw schema_error("unknown state array '" + name + "'");
}

KasperModel::Snapshot KasperModel::snapshot() {
    Snapshot s;
    for (auto* p : parameters()) s.params.push_back(p->value);
    s.state = state_arrays();
    return s;
}

void KasperModel::restore(const Snapshot& snap) {
    auto ps = parameters();
    if (ps.size() != snap.params.size()) throw contract_error("snapshot parameter count mismatch");
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = snap.params[i];
    for (const auto& [name, value] : snap.state) load_state_array(name, value);
}

PipelineState PipelineState::from(const FeatureMatrix& fm) {
    PipelineState st;
    st.feature_names = fm.names;
    st.selected = fm.selected;
    st.scaler = fm.scaler;
    st.target_scaler = fm.target_scaler;
    return st;
}

}  // namespace kasper
