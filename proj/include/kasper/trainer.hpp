#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "kasper/features.hpp"
#include "kasper/model.hpp"

namespace kasper {

// Huber loss of one residual: 0.5 e^2 inside delta, linear outside.
double huber(double residual, double delta);

struct TrainConfig {
    double lr = 0.001;
    double weight_decay = 1e-5;
    int batch_size = 32;
    int max_epochs = 100;
    int early_stop_patience = 15;
    double plateau_factor = 0.7;
    int plateau_patience = 7;
    double grad_clip_norm = 0.5;
    double huber_delta = 1.0;
    double lambda_contrastive = 0.01;
    double lambda_sparsity = 0.001;
    double lambda_orth = 0.01;
    double lambda_balance = 0.05;
    double contrastive_margin = 1.0;
    std::uint64_t seed = 42;
    // Regime cold start: before the main loop the detector is briefly fitted
    // (Brier score) to volatility terciles of the feature most correlated
    // with |target| on the train split. This is the usual regime-switching
    // initialization (k-means/vol-tercile seeding) expressed through the
    // detector; the end-to-end phase is free to move the boundaries.
    int pretrain_epochs = 3;
    // Warm-up phase: for the first `warmup_epochs` epochs the balance weight
    // is doubled (early-collapse guard) and the contrastive term is held off
    // so that pseudo-label pairs never come from an untrained detector. The
    // forecaster knots are re-initialized from the regime assignments reached
    // at the end of the phase.
    int warmup_epochs = 1;
    bool warmup_double_balance = true;
    bool warmup_knot_refit = true;
    bool warmup_gate_contrastive = true;

    LossWeights loss_weights() const {
        return {huber_delta,  lambda_sparsity,     lambda_contrastive,
                lambda_orth,  lambda_balance,      contrastive_margin};
    }

    void validate() const;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    int stopped_epoch = 0;
    int best_epoch = 0;
    double best_val_loss = 0.0;
    double max_postclip_grad_norm = 0.0;
    long clipped_steps = 0;
    long total_steps = 0;
    LossTerms final_train_terms;
};

// Min-mode plateau/early-stop bookkeeping (strict improvement). The learning
// rate factor fires every `lr_patience` consecutive stale epochs; stop fires
// after `stop_patience` stale epochs.
class PlateauController {
   public:
    PlateauController(double factor, int lr_patience, int stop_patience);

    struct Decision {
        bool improved = false;
        bool reduce_lr = false;
        bool stop = false;
    };
    Decision observe(double val_loss);

    double best() const { return best_; }

   private:
    double factor_;
    int lr_patience_;
    int stop_patience_;
    double best_;
    int stale_lr_ = 0;
    int stale_stop_ = 0;
};

// Decoupled-weight-decay adaptive moment optimizer (beta1 0.9, beta2 0.999,
// eps 1e-8) over a fixed parameter list.
class AdamW {
   public:
    AdamW(std::vector<ad::Parameter*> params, double lr, double weight_decay);

    void step();
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

   private:
    std::vector<ad::Parameter*> params_;
    std::vector<Eigen::MatrixXd> m_;
    std::vector<Eigen::MatrixXd> v_;
    double lr_;
    double weight_decay_;
    long t_ = 0;
};

// Scale all gradients so the global norm is at most `clip`. Returns the
// recomputed post-clip global norm; `fired` reports whether scaling happened.
double clip_global_norm(const std::vector<ad::Parameter*>& params, double clip, bool* fired);

// The deterministic validation objective the trainer monitors: composite
// loss in eval mode over the val split, in fixed batch order with a pair
// sample derived from the run seed.
double validation_loss(KasperModel& model, const FeatureMatrix& fm, const TrainConfig& cfg);

// Optimize the model on the train split, monitor the val split, return the
// best-validation parameters. The feature matrix must be selected, split and
// standardized. Throws numeric_fault with epoch/batch context if the loss
// goes non-finite.
TrainReport train(KasperModel& model, const FeatureMatrix& fm, const TrainConfig& cfg,
                  std::ostream* log = nullptr);

// Validation-driven lambda_sparsity grid {1e-4, 1e-3, 1e-2}; trains one model
// per value and keeps the best. Returns the chosen lambda.
double train_with_sparsity_tuning(KasperModel& model, const FeatureMatrix& fm, TrainConfig cfg,
                                  TrainReport* report, std::ostream* log = nullptr);

}  // namespace kasper
