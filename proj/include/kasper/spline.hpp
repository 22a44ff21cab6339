#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

namespace kasper {

// --------------------------------------------------------------------------
// Hybrid linear+cubic activation
//
// f(x) = L(x) + C(x) over the input normalized to [0,1] by the knot extremes:
//   x_norm = clamp((x - k_front) / (k_back - k_front), 0, 1)
//   L(x)   = sum_i tanh(w_i) * [relu(x_norm - kh_i) - relu(x_norm - kh_{i+1})]
//   C(x)   = sum_i sigmoid(v_i) * x_norm^3
// where kh are the knots mapped into [0,1]. The linear part is a ramp basis:
// each term rises linearly across its knot segment and saturates past it.
// --------------------------------------------------------------------------
struct SplineActivation {
    Eigen::VectorXd knots;  // strictly ascending, n_linear + 1 entries

    int n_segments() const { return static_cast<int>(knots.size()) - 1; }
    double lo() const { return knots(0); }
    double hi() const { return knots(knots.size() - 1); }

    // Knots rescaled into [0,1].
    Eigen::VectorXd normalized_knots() const;
};

// Knots at evenly spaced percentiles from the 1st to the 99th of `samples`.
// Ties are perturbed by a minimal epsilon spacing so knots stay strictly
// ascending. Throws degenerate_input_error when there are fewer distinct
// values than knots.
Eigen::VectorXd init_knots_from_quantiles(const Eigen::VectorXd& samples, int n_knots);

// Empirical percentile (linear interpolation between order statistics).
double percentile(const Eigen::VectorXd& samples, double pct);

double spline_forward(const SplineActivation& act, const Eigen::VectorXd& w,
                      const Eigen::VectorXd& v, double x);

// Forward value plus partials wrt x, w and v. Any of the output pointers may
// be null. Derivative conventions at kinks: relu'(0) = 0, clamp' = 0 outside
// the open interval (lo, hi).
double spline_forward_grad(const SplineActivation& act, const Eigen::VectorXd& w,
                           const Eigen::VectorXd& v, double x, double* df_dx,
                           Eigen::VectorXd* df_dw, Eigen::VectorXd* df_dv);

// --------------------------------------------------------------------------
// B-spline basis (cubic by default) on a clamped knot vector built from
// strictly ascending breakpoints. K = n_breakpoints + degree - 1 basis
// functions. Inputs outside [front, back] are clamped to the boundary span,
// so the basis extends constantly outside its range.
// --------------------------------------------------------------------------
class BSplineBasis {
   public:
    static constexpr int kDegree = 3;  // production degree; lower only in tests

    BSplineBasis() = default;
    explicit BSplineBasis(Eigen::VectorXd breakpoints, int degree = kDegree);

    // Basis sized for K functions over breakpoints at evenly spaced
    // percentiles of `samples` (K - kDegree + 1 breakpoints).
    static BSplineBasis from_samples(const Eigen::VectorXd& samples, int n_basis);

    int size() const { return n_basis_; }
    int degree() const { return degree_; }
    const Eigen::VectorXd& breakpoints() const { return breakpoints_; }
    const Eigen::VectorXd& padded_knots() const { return knots_; }

    // All K basis values at x (Cox-de Boor).
    Eigen::VectorXd eval(double x) const;

    // Nonzero window: values[0..degree] and derivative for the degree+1
    // active functions starting at index `first`. Model hot path.
    void eval_local(double x, int* first, double values[kDegree + 1],
                    double derivs[kDegree + 1]) const;

    // sum_k coeffs[k] * B_k(x) and optionally its derivative.
    double dot(const Eigen::VectorXd& coeffs, double x, double* deriv = nullptr) const;

   private:
    Eigen::VectorXd breakpoints_;
    Eigen::VectorXd knots_;  // padded: degree extra copies at each end
    int n_basis_ = 0;
    int degree_ = kDegree;

    int find_span(double x) const;
};

// Refined basis with `new_k` functions (new breakpoints inserted at midpoints
// of the largest gaps in breakpoint-index space, so existing breakpoints are
// preserved) plus coefficients refit by least squares on a dense grid so the
// refined spline matches the original. Throws parameter_error when
// new_k < basis.size() and numeric_fault when the refit system is singular.
std::pair<BSplineBasis, Eigen::VectorXd> extend_grid(const BSplineBasis& basis,
                                                     const Eigen::VectorXd& coeffs, int new_k,
                                                     int dense_grid = 1024);

// Least-squares refit of `fn` sampled on a dense grid onto `target` basis.
Eigen::VectorXd refit_coefficients(const BSplineBasis& source, const Eigen::VectorXd& coeffs,
                                   const BSplineBasis& target, int dense_grid = 1024);

}  // namespace kasper
