#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "kasper/detector.hpp"
#include "kasper/features.hpp"
#include "kasper/forecaster.hpp"

namespace kasper {

struct ModelConfig {
    DetectorConfig detector;
    ForecasterConfig forecaster;

    static ModelConfig with_dims(int input_dim, int hidden_dim, int n_regimes);
};

struct LossWeights {
    double huber_delta = 1.0;
    double lambda_sparsity = 0.001;
    double lambda_contrastive = 0.01;
    double lambda_orth = 0.01;
    double lambda_balance = 0.05;
    double contrastive_margin = 1.0;
};

struct LossTerms {
    double total = 0.0;
    double huber = 0.0;
    double sparsity = 0.0;
    double contrastive = 0.0;
    double orthogonality = 0.0;
    double balance = 0.0;
};

// Both KAN layers plus the parameter registry. The scaling/selection state
// travels separately (PipelineState) and is bound back together by the
// checkpoint.
class KasperModel {
   public:
    explicit KasperModel(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    RegimeDetector& detector() { return detector_; }
    const RegimeDetector& detector() const { return detector_; }
    RegimeForecaster& forecaster() { return forecaster_; }
    const RegimeForecaster& forecaster() const { return forecaster_; }

    // Random parameter init plus data-dependent knot init.
    void init(std::uint64_t seed, const Eigen::MatrixXd& train_x);

    // Eval-mode batch prediction in standardized target units.
    Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;
    Eigen::MatrixXd predict_probs(const Eigen::MatrixXd& x) const;
    std::vector<int> hard_labels(const Eigen::MatrixXd& x) const;

    struct LossGraph {
        ad::Var total;
        LossTerms terms;
    };
    // Composite training objective on one batch. In train mode, Gumbel noise
    // drawn from `noise_rng` perturbs the regime logits and contrastive pairs
    // beyond the all-pairs cap are sampled from `pair_rng`.
    LossGraph build_loss(ad::Tape& tape, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                         const LossWeights& w, bool train_mode, Rng* noise_rng, Rng* pair_rng);

    // Deterministic composite loss value (eval mode, fixed pair seed).
    LossTerms eval_loss(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const LossWeights& w,
                        std::uint64_t pair_seed);

    std::vector<ad::Parameter*> parameters();

    // Named non-trainable state (knots, breakpoints, thresholds).
    std::vector<std::pair<std::string, Eigen::MatrixXd>> state_arrays() const;
    void load_state_array(const std::string& name, const Eigen::MatrixXd& value);

    // Deep copy / restore of everything the optimizer can touch.
    struct Snapshot {
        std::vector<Eigen::MatrixXd> params;
        std::vector<std::pair<std::string, Eigen::MatrixXd>> state;
    };
    Snapshot snapshot();
    void restore(const Snapshot& snap);

   private:
    ModelConfig cfg_;
    RegimeDetector detector_;
    RegimeForecaster forecaster_;
};

// Scaling/selection state needed to run a trained model on raw data.
struct PipelineState {
    std::vector<std::string> feature_names;
    std::vector<int> selected;
    Scaler scaler;
    Scaler target_scaler;

    static PipelineState from(const FeatureMatrix& fm);
};

}  // namespace kasper
