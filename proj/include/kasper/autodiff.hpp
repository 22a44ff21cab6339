#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "kasper/spline.hpp"

namespace kasper {

// Per-unit hybrid spline activations applied columnwise to a (batch x units)
// pre-activation matrix. Knot layout: column j holds the knots of unit j.
struct SplineStack {
    Eigen::MatrixXd knots;  // (n_segments + 1) x units, strictly ascending per column

    int units() const { return static_cast<int>(knots.cols()); }
    int segments() const { return static_cast<int>(knots.rows()) - 1; }

    SplineActivation unit(int j) const { return SplineActivation{knots.col(j)}; }
};

namespace ad {

using Mat = Eigen::MatrixXd;

// A named trainable array. Gradients accumulate across backward passes until
// zero_grad() is called.
struct Parameter {
    std::string name;
    Mat value;
    Mat grad;

    Parameter(std::string n, Mat v)
        : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}

    void zero_grad() { grad.setZero(); }
};

class Tape;

// Lightweight handle to a node on a tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Mat& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
};

// Reverse-mode tape. Nodes are appended in evaluation order (which is a
// topological order by construction); backward() walks them once in reverse.
// Each forward value is checked for NaN/Inf at creation.
class Tape {
   public:
    Var leaf(Parameter& p);
    Var constant(Mat v, const char* label = "const");

    const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

    // Backpropagate from a scalar (1x1) root. Leaf gradients are added into
    // their bound Parameters.
    void backward(const Var& root);

    std::size_t size() const { return nodes_.size(); }

    // --- node construction (used by the op functions below) ---
    using Backprop = std::function<void(Tape&, const Mat&)>;
    Var make(const char* op, Mat value, Backprop backprop);
    void add_grad(int id, const Mat& g);

   private:
    struct Node {
        const char* op;
        Mat value;
        Mat grad;
        bool has_grad = false;
        Backprop backprop;
        Parameter* bound = nullptr;
    };
    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Primitive operations. All enforce the shapes they state and define
// subgradient conventions at kinks (relu'(0) = 0, sign(0) = 0).
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b);        // same shape
Var sub(const Var& a, const Var& b);        // same shape
Var mul(const Var& a, const Var& b);        // elementwise, same shape
Var scale(const Var& a, double c);
Var add_constant(const Var& a, const Mat& c);           // elementwise constant offset
Var matmul(const Var& a, const Var& b);     // (m x k) * (k x n)
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var affine(const Var& x, const Var& w, const Var& b);   // x*w + rowwise b (b is 1 x out)

Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var gelu(const Var& a);  // tanh approximation
Var cube(const Var& a);

Var sum(const Var& a);      // scalar
Var mean(const Var& a);     // scalar
Var colmean(const Var& a);  // (B x C) -> (1 x C)
Var sqnorm(const Var& a);   // sum of squares, scalar
Var abs_sum(const Var& a);  // L1, scalar

Var softmax_rows(const Var& logits, double tau);  // temperature softmax per row
Var soft_threshold(const Var& w, double theta);   // sign(w) * max(0, |w| - theta)
Var huber_mean(const Var& pred, const Var& target, double delta);  // scalar

// KL(mean of rows(probs) || uniform) over k = cols categories. Zero entries
// contribute zero by the limit convention.
Var balance_kl(const Var& probs);

// Contrastive embedding loss over explicit pairs: mean over pairs of
// y*d^2 + (1-y)*max(0, margin - d)^2 with d the Euclidean row distance.
struct Pair {
    int i;
    int j;
    bool same;
};
Var contrastive(const Var& embeddings, const std::vector<Pair>& pairs, double margin);

// Row-broadcast hybrid spline activation stack: column j of `pre` (B x U) is
// passed through unit j's activation; `w` is (segments x U), `v` (n_cubic x U).
Var spline_apply(const Var& pre, const Var& w, const Var& v,
                 std::shared_ptr<const SplineStack> stack);

// Per-column B-spline mixing: out(b, j) = sum_k beta(k, j) * B_k(u(b, j))
// with a separate basis per column. `bases` must outlive the tape.
Var bspline_mix(const Var& u, const Var& beta,
                std::shared_ptr<const std::vector<BSplineBasis>> bases);

// Probability-weighted mixture of per-regime forecasts:
// out(b) = sum_i probs(b, i) * heads(b, i).
Var mix(const Var& probs, const Var& heads);

// Stack k column vectors (B x 1) into (B x k).
Var hstack(const std::vector<Var>& cols);

Var col(const Var& a, int j);  // (B x C) -> (B x 1)

// ---------------------------------------------------------------------------
// Whole-expression helpers. `build` must construct the expression on the
// given tape and return its scalar root; it is re-invoked for perturbed
// parameter values, so it must read parameter values through leaves.
// ---------------------------------------------------------------------------

using ExprBuilder = std::function<Var(Tape&)>;

// Forward value plus analytic per-parameter gradients (resets accumulated
// gradients first).
std::pair<double, std::vector<Mat>> evaluate_with_gradients(
    const ExprBuilder& build, const std::vector<Parameter*>& params);

// Max over all parameter entries of |analytic - central difference| /
// max(1, |analytic|). `epsilon` must lie in [1e-7, 1e-3].
double check_gradients(const ExprBuilder& build, const std::vector<Parameter*>& params,
                       double epsilon);

}  // namespace ad
}  // namespace kasper
