#include "kasper/trainer.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "kasper/errors.hpp"
#include "kasper/rng.hpp"

namespace kasper {

double huber(double residual, double delta) {
    if (delta <= 0.0) throw parameter_error("huber delta must be positive");
    const double ae = std::abs(residual);
    return ae <= delta ? 0.5 * residual * residual : delta * (ae - 0.5 * delta);
}

void TrainConfig::validate() const {
    if (lr <= 0.0 || weight_decay < 0.0 || grad_clip_norm <= 0.0 || huber_delta <= 0.0) {
        throw parameter_error("rates and thresholds must be positive");
    }
    if (lambda_contrastive < 0.0 || lambda_sparsity < 0.0 || lambda_orth < 0.0 ||
        lambda_balance < 0.0) {
        throw parameter_error("loss weights must be non-negative");
    }
    if (batch_size < 1 || max_epochs < 1 || early_stop_patience < 1 || plateau_patience < 1) {
        throw parameter_error("counts and patience values must be >= 1");
    }
    if (warmup_epochs < 0) throw parameter_error("warmup_epochs must be >= 0");
    if (pretrain_epochs < 0) throw parameter_error("pretrain_epochs must be >= 0");
    if (plateau_factor <= 0.0 || plateau_factor >= 1.0) {
        throw parameter_error("plateau factor must lie in (0, 1)");
    }
}

PlateauController::PlateauController(double factor, int lr_patience, int stop_patience)
    : factor_(factor),
      lr_patience_(lr_patience),
      stop_patience_(stop_patience),
      best_(std::numeric_limits<double>::infinity()) {
    if (lr_patience < 1 || stop_patience < 1) throw parameter_error("patience must be >= 1");
    if (factor <= 0.0 || factor >= 1.0) throw parameter_error("factor must lie in (0, 1)");
}

PlateauController::Decision PlateauController::observe(double val_loss) {
    Decision d;
    if (val_loss < best_) {
        best_ = val_loss;
        stale_lr_ = 0;
        stale_stop_ = 0;
        d.improved = true;
        return d;
    }
    ++stale_lr_;
    ++stale_stop_;
    if (stale_lr_ >= lr_patience_) {
        d.reduce_lr = true;
        stale_lr_ = 0;
    }
    if (stale_stop_ >= stop_patience_) d.stop = true;
    return d;
}

AdamW::AdamW(std::vector<ad::Parameter*> params, double lr, double weight_decay)
    : params_(std::move(params)), lr_(lr), weight_decay_(weight_decay) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto* p : params_) {
        m_.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
    }
}

void AdamW::step() {
    constexpr double kBeta1 = 0.9;
    constexpr double kBeta2 = 0.999;
    constexpr double kEps = 1e-8;
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, t_);
    const double bc2 = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        ad::Parameter& p = *params_[i];
        m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * p.grad;
        v_[i] = (kBeta2 * v_[i].array() + (1.0 - kBeta2) * p.grad.array().square()).matrix();
        // decoupled weight decay
        p.value *= (1.0 - lr_ * weight_decay_);
        p.value.array() -=
            lr_ * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + kEps);
    }
}

double clip_global_norm(const std::vector<ad::Parameter*>& params, double clip, bool* fired) {
    double sq = 0.0;
    for (auto* p : params) sq += p->grad.squaredNorm();
    const double norm = std::sqrt(sq);
    bool did = false;
    if (norm > clip && norm > 0.0) {
        const double s = clip / norm;
        for (auto* p : params) p->grad *= s;
        did = true;
    }
    if (fired) *fired = did;
    double post = 0.0;
    for (auto* p : params) post += p->grad.squaredNorm();
    return std::sqrt(post);
}

namespace {

struct SplitData {
    Eigen::MatrixXd x;
    Eigen::VectorXd y;
};

SplitData gather(const FeatureMatrix& fm, Split s) {
    const auto rows = fm.rows_in(s);
    SplitData d;
    d.x.resize(static_cast<Eigen::Index>(rows.size()), fm.n_features());
    d.y.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        d.x.row(static_cast<Eigen::Index>(i)) = fm.X.row(rows[i]);
        d.y(static_cast<Eigen::Index>(i)) = fm.y(rows[i]);
    }
    return d;
}

double batched_loss(KasperModel& model, const SplitData& val, const LossWeights& w,
                    int batch_size, std::uint64_t pair_seed) {
    double acc = 0.0;
    Eigen::Index done = 0;
    while (done < val.x.rows()) {
        const Eigen::Index n = std::min<Eigen::Index>(batch_size, val.x.rows() - done);
        const LossTerms terms = model.eval_loss(val.x.middleRows(done, n), val.y.segment(done, n),
                                                w, pair_seed);
        acc += terms.total * static_cast<double>(n);
        done += n;
    }
    return acc / static_cast<double>(val.x.rows());
}

}  // namespace

namespace {

// Cold-start pseudo-labels: terciles of the train-split feature that tracks
// |target| most strongly (the usual volatility-tercile seeding of
// regime-switching models). Returns one label per train row.
std::vector<int> volatility_tercile_labels(const SplitData& train_data) {
    const Eigen::Index n = train_data.x.rows();
    const Eigen::ArrayXd ay = train_data.y.array().abs();
    const double ay_mean = ay.mean();
    double best_corr = -1.0;
    Eigen::Index proxy = 0;
    for (Eigen::Index c = 0; c < train_data.x.cols(); ++c) {
        const Eigen::ArrayXd xc = train_data.x.col(c).array();
        const double xm = xc.mean();
        const double cov = ((xc - xm) * (ay - ay_mean)).sum();
        const double den = std::sqrt((xc - xm).square().sum() * (ay - ay_mean).square().sum());
        const double corr = den > 0.0 ? std::abs(cov / den) : 0.0;
        if (corr > best_corr) {
            best_corr = corr;
            proxy = c;
        }
    }
    std::vector<double> vals(train_data.x.col(proxy).data(),
                             train_data.x.col(proxy).data() + n);
    std::vector<double> sorted = vals;
    std::sort(sorted.begin(), sorted.end());
    const double t1 = sorted[static_cast<std::size_t>(n / 3)];
    const double t2 = sorted[static_cast<std::size_t>(2 * n / 3)];
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        labels[static_cast<std::size_t>(i)] = vals[static_cast<std::size_t>(i)] < t1
                                                  ? 0
                                                  : (vals[static_cast<std::size_t>(i)] < t2 ? 1 : 2);
    }
    return labels;
}

// Brier-score fit of the detector's regime probabilities to the cold-start
// labels. Shares the clipping contract and step accounting with the main
// loop.
void pretrain_detector(KasperModel& model, const SplitData& train_data,
                       const std::vector<int>& labels, const TrainConfig& cfg,
                       TrainReport& report) {
    auto det_params = model.detector().parameters();
    AdamW opt(det_params, cfg.lr, cfg.weight_decay);
    Rng rng(mix_seed(cfg.seed, 0x9u));
    const int k = model.config().detector.n_regimes;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(train_data.x.rows()));
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t off = 0; off < order.size();
             off += static_cast<std::size_t>(cfg.batch_size)) {
            const auto n = static_cast<Eigen::Index>(std::min<std::size_t>(
                static_cast<std::size_t>(cfg.batch_size), order.size() - off));
            Eigen::MatrixXd bx(n, train_data.x.cols());
            Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, k);
            for (Eigen::Index i = 0; i < n; ++i) {
                const auto row = order[off + static_cast<std::size_t>(i)];
                bx.row(i) = train_data.x.row(row);
                onehot(i, labels[static_cast<std::size_t>(row)]) = 1.0;
            }
            for (auto* p : det_params) p->zero_grad();
            ad::Tape tape;
            auto det = model.detector().build(tape, tape.constant(bx), nullptr);
            ad::Var loss = ad::scale(ad::sqnorm(ad::sub(det.probs, tape.constant(onehot))),
                                     1.0 / static_cast<double>(n));
            tape.backward(loss);
            bool fired = false;
            const double post = clip_global_norm(det_params, cfg.grad_clip_norm, &fired);
            report.max_postclip_grad_norm = std::max(report.max_postclip_grad_norm, post);
            report.clipped_steps += fired;
            ++report.total_steps;
            opt.step();
        }
    }
}

}  // namespace

double validation_loss(KasperModel& model, const FeatureMatrix& fm, const TrainConfig& cfg) {
    const SplitData val = gather(fm, Split::val);
    if (val.x.rows() == 0) throw insufficient_data_error("validation_loss: empty val split");
    return batched_loss(model, val, cfg.loss_weights(), cfg.batch_size, mix_seed(cfg.seed, 0x8u));
}

TrainReport train(KasperModel& model, const FeatureMatrix& fm, const TrainConfig& cfg,
                  std::ostream* log) {
    cfg.validate();
    if (fm.split.empty()) throw contract_error("train: feature matrix has no split tags");
    const SplitData train_data = gather(fm, Split::train);
    const SplitData val_data = gather(fm, Split::val);
    if (train_data.x.rows() == 0 || val_data.x.rows() == 0) {
        throw insufficient_data_error("train: empty train or val split");
    }

    Rng shuffle_rng(mix_seed(cfg.seed, 0x5u));
    Rng noise_rng(mix_seed(cfg.seed, 0x6u));
    Rng pair_rng(mix_seed(cfg.seed, 0x7u));
    const std::uint64_t val_pair_seed = mix_seed(cfg.seed, 0x8u);

    auto params = model.parameters();
    AdamW opt(params, cfg.lr, cfg.weight_decay);
    PlateauController controller(cfg.plateau_factor, cfg.plateau_patience,
                                 cfg.early_stop_patience);

    TrainReport report;
    if (cfg.pretrain_epochs > 0) {
        pretrain_detector(model, train_data, volatility_tercile_labels(train_data), cfg, report);
    }
    KasperModel::Snapshot best = model.snapshot();
    report.best_val_loss = std::numeric_limits<double>::infinity();

    std::vector<Eigen::Index> order(static_cast<std::size_t>(train_data.x.rows()));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const bool warming = epoch <= cfg.warmup_epochs;
        LossWeights w = cfg.loss_weights();
        if (warming && cfg.warmup_double_balance) w.lambda_balance *= 2.0;
        if (warming && cfg.warmup_gate_contrastive) w.lambda_contrastive = 0.0;

        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        Eigen::Index seen = 0;
        int batch_index = 0;
        for (std::size_t off = 0; off < order.size(); off += static_cast<std::size_t>(cfg.batch_size)) {
            const auto n = static_cast<Eigen::Index>(
                std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size),
                                      order.size() - off));
            Eigen::MatrixXd bx(n, train_data.x.cols());
            Eigen::VectorXd by(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                bx.row(i) = train_data.x.row(order[off + static_cast<std::size_t>(i)]);
                by(i) = train_data.y(order[off + static_cast<std::size_t>(i)]);
            }
            for (auto* p : params) p->zero_grad();
            ad::Tape tape;
            KasperModel::LossGraph loss;
            try {
                loss = model.build_loss(tape, bx, by, w, true, &noise_rng, &pair_rng);
                tape.backward(loss.total);
            } catch (const numeric_fault& f) {
                throw numeric_fault("non-finite loss at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(batch_index) + ": " + f.what());
            }
            bool fired = false;
            const double post = clip_global_norm(params, cfg.grad_clip_norm, &fired);
            report.max_postclip_grad_norm = std::max(report.max_postclip_grad_norm, post);
            report.clipped_steps += fired;
            ++report.total_steps;
            opt.step();
            epoch_loss += loss.terms.total * static_cast<double>(n);
            seen += n;
            ++batch_index;
            report.final_train_terms = loss.terms;
        }
        epoch_loss /= static_cast<double>(seen);

        // Warm-up knot refresh once, before the epoch's validation pass, so
        // snapshots stay consistent with the bases they were trained with.
        if (epoch == cfg.warmup_epochs && cfg.warmup_knot_refit) {
            model.forecaster().reinit_knots(train_data.x, model.hard_labels(train_data.x));
        }

        const double val_loss =
            batched_loss(model, val_data, cfg.loss_weights(), cfg.batch_size, val_pair_seed);
        report.epochs.push_back({epoch, epoch_loss, val_loss, opt.lr()});
        report.stopped_epoch = epoch;
        if (log) {
            (*log) << "epoch " << epoch << " train " << epoch_loss << " val " << val_loss
                   << " lr " << opt.lr() << '\n';
        }

        const auto decision = controller.observe(val_loss);
        if (decision.improved) {
            best = model.snapshot();
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
        }
        if (decision.reduce_lr) opt.set_lr(opt.lr() * cfg.plateau_factor);
        if (decision.stop) break;
    }

    model.restore(best);
    return report;
}

double train_with_sparsity_tuning(KasperModel& model, const FeatureMatrix& fm, TrainConfig cfg,
                                  TrainReport* report, std::ostream* log) {
    const double grid[] = {1e-4, 1e-3, 1e-2};
    double best_lambda = grid[0];
    double best_val = std::numeric_limits<double>::infinity();
    KasperModel::Snapshot best_state = model.snapshot();
    TrainReport best_report;
    const KasperModel::Snapshot init_state = model.snapshot();
    for (double lambda : grid) {
        model.restore(init_state);
        cfg.lambda_sparsity = lambda;
        TrainReport r = train(model, fm, cfg, log);
        if (log) (*log) << "lambda_sparsity " << lambda << " -> val " << r.best_val_loss << '\n';
        if (r.best_val_loss < best_val) {
            best_val = r.best_val_loss;
            best_lambda = lambda;
            best_state = model.snapshot();
            best_report = r;
        }
    }
    model.restore(best_state);
    if (report) *report = best_report;
    return best_lambda;
}

}  // namespace kasper
