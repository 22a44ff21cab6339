#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <vector>

#include "kasper/autodiff.hpp"
#include "kasper/rng.hpp"

namespace kasper {

struct DetectorConfig {
    int input_dim = 8;
    int hidden_dim = 64;
    int n_regimes = 3;
    int n_linear = 3;  // spline segments
    int n_cubic = 2;
    double tau = 1.0;
};

struct RegimeOutput {
    Eigen::VectorXd probs;
    Eigen::VectorXd embedding;
    int hard_label = 0;  // argmax, ties to the lowest index
};

// Temperature softmax of a logit vector (eval-mode regime probabilities).
Eigen::VectorXd regime_probabilities(const Eigen::VectorXd& logits, double tau);

int argmax_lowest(const Eigen::VectorXd& v);

// KAN layer 1: spline-activated feature map -> GELU hidden embedding ->
// regime logits. Each regime owns a hidden x hidden matrix W_r whose
// row-pooled response is added to that regime's logit, which keeps the
// orthogonality-regularized matrices on the gradient path.
class RegimeDetector {
   public:
    explicit RegimeDetector(DetectorConfig cfg);

    const DetectorConfig& config() const { return cfg_; }

    void init_params(Rng& rng);
    // Quantile knots per hidden unit from the train-set pre-activations.
    void init_knots(const Eigen::MatrixXd& train_x);

    bool train_mode = false;

    // Single-sample detection. Gumbel noise is injected only in train mode
    // and only when a seed is supplied.
    RegimeOutput detect(const Eigen::VectorXd& x,
                        std::optional<std::uint64_t> noise_seed = {}) const;

    struct EvalOut {
        Eigen::MatrixXd probs;      // B x k
        Eigen::MatrixXd embedding;  // B x hidden
        Eigen::MatrixXd logits;     // B x k
    };
    EvalOut forward_eval(const Eigen::MatrixXd& x) const;  // no noise

    struct GraphOut {
        ad::Var probs;
        ad::Var embedding;
        std::vector<ad::Var> regime_mats;  // W_r leaves, for the orthogonality loss
    };
    // Builds the forward graph; `gumbel_noise` (B x k), when given, is added
    // to the logits before the temperature softmax.
    GraphOut build(ad::Tape& tape, const ad::Var& x, const Eigen::MatrixXd* gumbel_noise);

    std::vector<ad::Parameter*> parameters();
    const SplineStack& spline_stack() const { return *stack_; }
    void set_knots(Eigen::MatrixXd knots);

   private:
    DetectorConfig cfg_;
    ad::Parameter w_in_, b_in_;        // input -> hidden
    ad::Parameter spline_w_, spline_v_;  // segments x hidden, n_cubic x hidden
    ad::Parameter w_hidden_, b_hidden_;
    ad::Parameter w_head_, b_head_;
    std::vector<ad::Parameter> regime_mats_;  // k of hidden x hidden
    std::shared_ptr<SplineStack> stack_;

    Eigen::MatrixXd hidden_eval(const Eigen::MatrixXd& x) const;  // embedding
    Eigen::MatrixXd logits_eval(const Eigen::MatrixXd& z) const;
};

// Pair sampling for the contrastive loss: all pairs when the batch is small,
// otherwise `n_sampled` random pairs.
std::vector<ad::Pair> contrastive_pairs(const std::vector<int>& hard_labels,
                                        std::size_t all_pairs_cap = 32,
                                        std::size_t n_sampled = 512, Rng* rng = nullptr);

// Plain-value regularizer evaluations (the graph ops are the implementation).
double contrastive_loss(const Eigen::MatrixXd& embeddings, const std::vector<ad::Pair>& pairs,
                        double margin);
double orthogonality_loss(const std::vector<Eigen::MatrixXd>& regime_mats);
double balance_loss(const Eigen::MatrixXd& probs);

// Graph builder for the orthogonality penalty: mean_r ||W_r W_r^T - I||_F^2.
ad::Var orthogonality_loss_graph(ad::Tape& tape, const std::vector<ad::Var>& regime_mats);

}  // namespace kasper
