#include "kasper/spline.hpp"

#include <algorithm>
#include <cmath>

#include "kasper/errors.hpp"

namespace kasper {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Eigen::VectorXd SplineActivation::normalized_knots() const {
    const double a = lo();
    const double span = hi() - a;
    Eigen::VectorXd kh = (knots.array() - a) / span;
    kh(0) = 0.0;
    kh(kh.size() - 1) = 1.0;
    return kh;
}

double percentile(const Eigen::VectorXd& samples, double pct) {
    std::vector<double> s(samples.data(), samples.data() + samples.size());
    std::sort(s.begin(), s.end());
    if (s.size() == 1) return s[0];
    double rank = pct / 100.0 * static_cast<double>(s.size() - 1);
    auto i = static_cast<std::size_t>(std::floor(rank));
    if (i + 1 >= s.size()) return s.back();
    double frac = rank - static_cast<double>(i);
    return s[i] + frac * (s[i + 1] - s[i]);
}

Eigen::VectorXd init_knots_from_quantiles(const Eigen::VectorXd& samples, int n_knots) {
    if (n_knots < 2) throw parameter_error("need at least 2 knots");
    std::vector<double> distinct(samples.data(), samples.data() + samples.size());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (static_cast<int>(distinct.size()) < n_knots) {
        throw degenerate_input_error("fewer distinct sample values (" +
                                     std::to_string(distinct.size()) + ") than knots (" +
                                     std::to_string(n_knots) + ")");
    }
    Eigen::VectorXd knots(n_knots);
    for (int i = 0; i < n_knots; ++i) {
        double pct = 1.0 + 98.0 * static_cast<double>(i) / static_cast<double>(n_knots - 1);
        knots(i) = percentile(samples, pct);
    }
    // Enforce strict ascent: perturb ties by a minimal spacing.
    const double span = std::max(knots(n_knots - 1) - knots(0), 1e-12);
    const double eps = span * 1e-9 + 1e-12;
    for (int i = 1; i < n_knots; ++i) {
        if (knots(i) <= knots(i - 1)) knots(i) = knots(i - 1) + eps;
    }
    return knots;
}

double spline_forward(const SplineActivation& act, const Eigen::VectorXd& w,
                      const Eigen::VectorXd& v, double x) {
    return spline_forward_grad(act, w, v, x, nullptr, nullptr, nullptr);
}

double spline_forward_grad(const SplineActivation& act, const Eigen::VectorXd& w,
                           const Eigen::VectorXd& v, double x, double* df_dx,
                           Eigen::VectorXd* df_dw, Eigen::VectorXd* df_dv) {
    const int n_seg = act.n_segments();
    if (w.size() != n_seg) throw shape_error("linear weight count != knot segments");
    const double a = act.lo();
    const double span = act.hi() - a;
    double u = (x - a) / span;
    const bool interior = u > 0.0 && u < 1.0;
    u = std::clamp(u, 0.0, 1.0);
    const Eigen::VectorXd kh = act.normalized_knots();

    double value = 0.0;
    double du = 0.0;
    if (df_dw) df_dw->setZero(n_seg);
    for (int i = 0; i < n_seg; ++i) {
        const double r0 = std::max(u - kh(i), 0.0);
        const double r1 = std::max(u - kh(i + 1), 0.0);
        const double ramp = r0 - r1;
        const double tw = std::tanh(w(i));
        value += tw * ramp;
        if (df_dx) du += tw * ((u > kh(i) ? 1.0 : 0.0) - (u > kh(i + 1) ? 1.0 : 0.0));
        if (df_dw) (*df_dw)(i) = (1.0 - tw * tw) * ramp;
    }
    const double u3 = u * u * u;
    if (df_dv) df_dv->setZero(v.size());
    for (int i = 0; i < v.size(); ++i) {
        const double s = sigmoid(v(i));
        value += s * u3;
        if (df_dx) du += s * 3.0 * u * u;
        if (df_dv) (*df_dv)(i) = s * (1.0 - s) * u3;
    }
    if (df_dx) *df_dx = interior ? du / span : 0.0;
    return value;
}

// ---------------------------------------------------------------------------
// BSplineBasis
// ---------------------------------------------------------------------------

BSplineBasis::BSplineBasis(Eigen::VectorXd breakpoints, int degree)
    : breakpoints_(std::move(breakpoints)), degree_(degree) {
    if (degree_ < 0 || degree_ > kDegree) {
        throw parameter_error("B-spline degree must lie in [0, " + std::to_string(kDegree) + "]");
    }
    const int nb = static_cast<int>(breakpoints_.size());
    if (nb < 2) throw parameter_error("B-spline basis needs >= 2 breakpoints");
    for (int i = 1; i < nb; ++i) {
        if (breakpoints_(i) <= breakpoints_(i - 1)) {
            throw parameter_error("breakpoints must be strictly ascending");
        }
    }
    n_basis_ = nb + degree_ - 1;
    knots_.resize(nb + 2 * degree_);
    for (int i = 0; i < degree_; ++i) knots_(i) = breakpoints_(0);
    knots_.segment(degree_, nb) = breakpoints_;
    for (int i = 0; i < degree_; ++i) knots_(degree_ + nb + i) = breakpoints_(nb - 1);
}

BSplineBasis BSplineBasis::from_samples(const Eigen::VectorXd& samples, int n_basis) {
    if (n_basis < kDegree + 1) throw parameter_error("need at least degree+1 basis functions");
    const int nb = n_basis - kDegree + 1;
    return BSplineBasis(init_knots_from_quantiles(samples, nb));
}

int BSplineBasis::find_span(double x) const {
    // Span index into padded knots: largest i with knots_(i) <= x, clamped to
    // the valid basis range [degree_, n_basis_-1].
    const auto* begin = knots_.data();
    const auto* end = begin + knots_.size();
    auto it = std::upper_bound(begin, end, x);
    int i = static_cast<int>(it - begin) - 1;
    return std::clamp(i, degree_, n_basis_ - 1);
}

void BSplineBasis::eval_local(double x, int* first, double values[kDegree + 1],
                              double derivs[kDegree + 1]) const {
    x = std::clamp(x, breakpoints_(0), breakpoints_(breakpoints_.size() - 1));
    const int span = find_span(x);
    // Cox-de Boor triangle (NURBS book A2.2): ndu[r][j] = N_{span-j+r, j}(x).
    double left[kDegree + 1] = {};
    double right[kDegree + 1] = {};
    double ndu[kDegree + 1][kDegree + 1] = {};
    ndu[0][0] = 1.0;
    for (int j = 1; j <= degree_; ++j) {
        left[j] = x - knots_(span + 1 - j);
        right[j] = knots_(span + j) - x;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double denom = right[r + 1] + left[j - r];
            const double temp = denom != 0.0 ? ndu[r][j - 1] / denom : 0.0;
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    for (int r = 0; r <= degree_; ++r) values[r] = ndu[r][degree_];
    if (derivs) {
        // B'_{k,p}(x) = p * (N_{k,p-1}/(xi_{k+p}-xi_k) - N_{k+1,p-1}/(xi_{k+p+1}-xi_{k+1}))
        for (int r = 0; r <= degree_; ++r) {
            const int k = span - degree_ + r;
            double d = 0.0;
            if (degree_ > 0) {
                const double den1 = knots_(k + degree_) - knots_(k);
                const double den2 = knots_(k + degree_ + 1) - knots_(k + 1);
                const int j1 = r - 1;
                const int j2 = r;
                const double n1 = (j1 >= 0 && j1 <= degree_ - 1) ? ndu[j1][degree_ - 1] : 0.0;
                const double n2 = (j2 >= 0 && j2 <= degree_ - 1) ? ndu[j2][degree_ - 1] : 0.0;
                if (den1 != 0.0) d += n1 / den1;
                if (den2 != 0.0) d -= n2 / den2;
            }
            derivs[r] = degree_ * d;
        }
    }
    *first = span - degree_;
}

Eigen::VectorXd BSplineBasis::eval(double x) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n_basis_);
    int first = 0;
    double vals[kDegree + 1];
    eval_local(x, &first, vals, nullptr);
    for (int r = 0; r <= degree_; ++r) {
        const int k = first + r;
        if (k >= 0 && k < n_basis_) out(k) = vals[r];
    }
    return out;
}

double BSplineBasis::dot(const Eigen::VectorXd& coeffs, double x, double* deriv) const {
    if (coeffs.size() != n_basis_) throw shape_error("coefficient count != basis size");
    int first = 0;
    double vals[kDegree + 1];
    double ders[kDegree + 1];
    eval_local(x, &first, vals, deriv ? ders : nullptr);
    double v = 0.0;
    double d = 0.0;
    const bool interior = x > breakpoints_(0) && x < breakpoints_(breakpoints_.size() - 1);
    for (int r = 0; r <= degree_; ++r) {
        const int k = first + r;
        if (k < 0 || k >= n_basis_) continue;
        v += coeffs(k) * vals[r];
        if (deriv) d += coeffs(k) * ders[r];
    }
    if (deriv) *deriv = interior ? d : 0.0;
    return v;
}

Eigen::VectorXd refit_coefficients(const BSplineBasis& source, const Eigen::VectorXd& coeffs,
                                   const BSplineBasis& target, int dense_grid) {
    const double a = source.breakpoints()(0);
    const double b = source.breakpoints()(source.breakpoints().size() - 1);
    Eigen::MatrixXd design(dense_grid, target.size());
    Eigen::VectorXd rhs(dense_grid);
    for (int g = 0; g < dense_grid; ++g) {
        const double x = a + (b - a) * static_cast<double>(g) / static_cast<double>(dense_grid - 1);
        design.row(g) = target.eval(x).transpose();
        rhs(g) = source.dot(coeffs, x);
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    if (qr.rank() < target.size()) {
        throw numeric_fault("singular least-squares system in grid refinement");
    }
    return qr.solve(rhs);
}

std::pair<BSplineBasis, Eigen::VectorXd> extend_grid(const BSplineBasis& basis,
                                                     const Eigen::VectorXd& coeffs, int new_k,
                                                     int dense_grid) {
    if (new_k < basis.size()) throw parameter_error("grid extension cannot shrink the basis");
    const int n_insert = new_k - basis.size();
    // Work in breakpoint-index (quantile rank) space: each insertion bisects
    // the currently largest index gap, keeping old breakpoints nested.
    std::vector<std::pair<double, double>> pts;  // (index position, value)
    const auto& bp = basis.breakpoints();
    for (int i = 0; i < bp.size(); ++i) pts.emplace_back(static_cast<double>(i), bp(i));
    for (int ins = 0; ins < n_insert; ++ins) {
        std::size_t widest = 0;
        double wgap = -1.0;
        for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
            const double gap = pts[i + 1].first - pts[i].first;
            if (gap > wgap + 1e-15) {
                wgap = gap;
                widest = i;
            }
        }
        const double mid_idx = 0.5 * (pts[widest].first + pts[widest + 1].first);
        const double mid_val = 0.5 * (pts[widest].second + pts[widest + 1].second);
        pts.insert(pts.begin() + static_cast<std::ptrdiff_t>(widest) + 1, {mid_idx, mid_val});
    }
    Eigen::VectorXd new_bp(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) new_bp(static_cast<int>(i)) = pts[i].second;
    BSplineBasis refined(new_bp, basis.degree());
    Eigen::VectorXd new_coeffs = refit_coefficients(basis, coeffs, refined, dense_grid);
    return {std::move(refined), std::move(new_coeffs)};
}

}  // namespace kasper
