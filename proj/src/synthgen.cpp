#include "kasper/synthgen.hpp"

#include <cmath>
#include <fstream>

#include "kasper/errors.hpp"
#include "kasper/rng.hpp"

namespace kasper {

void MarkovSpec::validate() const {
    const auto k = transition.rows();
    if (k < 1 || transition.cols() != k) throw parameter_error("transition matrix must be square");
    for (Eigen::Index i = 0; i < k; ++i) {
        double row = 0.0;
        for (Eigen::Index j = 0; j < k; ++j) {
            if (transition(i, j) < 0.0) throw parameter_error("transition entries must be >= 0");
            row += transition(i, j);
        }
        if (std::abs(row - 1.0) > 1e-12) {
            throw parameter_error("transition row " + std::to_string(i) + " sums to " +
                                  std::to_string(row) + ", expected 1");
        }
    }
    if (mu.size() != k || sigma.size() != k) throw parameter_error("mu/sigma size != regime count");
    if ((sigma.array() <= 0.0).any()) throw parameter_error("sigma entries must be positive");
    if (length < 1) throw parameter_error("length must be >= 1");
    if (start_regime < 0 || start_regime >= k) throw parameter_error("start regime out of range");
    if (start_price <= 0.0) throw parameter_error("start price must be positive");
}

MarkovSpec MarkovSpec::three_state(double diag, const Eigen::Vector3d& mu,
                                   const Eigen::Vector3d& sigma, int length, std::uint64_t seed) {
    MarkovSpec spec;
    spec.transition = Eigen::MatrixXd::Constant(3, 3, (1.0 - diag) / 2.0);
    spec.transition.diagonal().setConstant(diag);
    spec.mu = mu;
    spec.sigma = sigma;
    spec.length = length;
    spec.seed = seed;
    return spec;
}

namespace {

// Half-range factor with mean/CV matched to Brownian-motion intraday range,
// so range-based features carry the same volatility signal they do on real
// data.
double half_range(Rng& rng) { return 0.8 + 0.4 * std::abs(rng.normal()); }

Bar synth_bar(Rng& rng, const Date& date, double prev_close, double close, double day_sigma) {
    Bar b;
    b.date = date;
    b.open = prev_close;
    b.close = close;
    b.adj_close = close;
    const double up = day_sigma * close * half_range(rng);
    const double down = day_sigma * close * half_range(rng);
    b.high = close + up;
    b.low = std::max(close - down, 0.01 * close);
    b.volume = std::floor(1e6 * std::exp(0.3 * rng.normal()));
    return b;
}

}  // namespace

MarkovResult gen_markov(const MarkovSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const auto k = static_cast<int>(spec.transition.rows());

    MarkovResult out;
    out.returns.reserve(static_cast<std::size_t>(spec.length));
    out.regimes.reserve(static_cast<std::size_t>(spec.length));
    out.frame.source_id = "synthetic-markov";
    out.frame.rows.reserve(static_cast<std::size_t>(spec.length));

    int z = spec.start_regime;
    double close = spec.start_price;
    Date date = spec.start_date;
    if (weekday(date) >= 5) date = next_business_day(date);
    for (int t = 0; t < spec.length; ++t) {
        if (t > 0) {
            const double u = rng.uniform01();
            double acc = 0.0;
            int next = k - 1;
            for (int j = 0; j < k; ++j) {
                acc += spec.transition(z, j);
                if (u < acc) {
                    next = j;
                    break;
                }
            }
            z = next;
        }
        const double y = spec.mu(z) + spec.sigma(z) * rng.normal();
        const double prev_close = close;
        close = std::max(prev_close * (1.0 + y), 1e-6 * spec.start_price);
        out.returns.push_back(y);
        out.regimes.push_back(z);
        out.frame.rows.push_back(synth_bar(rng, date, prev_close, close, spec.sigma(z)));
        date = next_business_day(date);
    }
    return out;
}

void TransitionSpec::validate() const {
    if (gamma <= 0.0) throw parameter_error("gamma must be positive");
    if (sigma_eps <= 0.0) throw parameter_error("sigma_eps must be positive");
    if (phi0.size() != phi1.size()) throw parameter_error("phi0/phi1 length mismatch");
    if (length < 1) throw parameter_error("length must be >= 1");
    if (start_price <= 0.0) throw parameter_error("start price must be positive");
}

double logistic_transition(double s, double gamma, double c) {
    if (gamma <= 0.0) throw parameter_error("gamma must be positive");
    return 1.0 / (1.0 + std::exp(-gamma * (s - c)));
}

TransitionResult gen_smooth_transition(const TransitionSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const auto p = static_cast<int>(spec.phi0.size());

    TransitionResult out;
    out.returns.reserve(static_cast<std::size_t>(spec.length));
    out.transition_path.reserve(static_cast<std::size_t>(spec.length));
    out.frame.source_id = "synthetic-star";
    out.frame.rows.reserve(static_cast<std::size_t>(spec.length));

    double close = spec.start_price;
    Date date = spec.start_date;
    if (weekday(date) >= 5) date = next_business_day(date);
    for (int t = 0; t < spec.length; ++t) {
        const double s = t > 0 ? out.returns[static_cast<std::size_t>(t - 1)] : 0.0;
        const double g = logistic_transition(s, spec.gamma, spec.c);
        double linear = spec.mu0;
        double regime1 = spec.mu1;
        for (int j = 1; j <= p; ++j) {
            const double lag = t - j >= 0 ? out.returns[static_cast<std::size_t>(t - j)] : 0.0;
            linear += spec.phi0(j - 1) * lag;
            regime1 += spec.phi1(j - 1) * lag;
        }
        const double y = linear + g * regime1 + spec.sigma_eps * rng.normal();
        const double prev_close = close;
        close = std::max(prev_close * (1.0 + y), 1e-6 * spec.start_price);
        out.returns.push_back(y);
        out.transition_path.push_back(g);
        out.frame.rows.push_back(synth_bar(rng, date, prev_close, close, spec.sigma_eps));
        date = next_business_day(date);
    }
    return out;
}

void write_labels(const MarketFrame& frame, const std::vector<double>& labels,
                  const std::string& column_name, const std::string& path) {
    if (frame.rows.size() != labels.size()) throw shape_error("write_labels: size mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write '" + path + "'");
    out << "date," << column_name << '\n';
    out.precision(12);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        out << format_date(frame.rows[i].date) << ',' << labels[i] << '\n';
    }
    if (!out) throw io_error("short write to '" + path + "'");
}

}  // namespace kasper
