#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "kasper/market_frame.hpp"

namespace kasper {

// Hamilton-style Markov switching: y_t = mu[z_t] + sigma[z_t]*eps,
// P(z_t = j | z_{t-1} = i) = A(i, j).
struct MarkovSpec {
    Eigen::MatrixXd transition;  // k x k row-stochastic
    Eigen::VectorXd mu;
    Eigen::VectorXd sigma;       // > 0
    int length = 1000;
    std::uint64_t seed = 42;
    int start_regime = 0;
    double start_price = 100.0;
    Date start_date{2018, 1, 2};

    void validate() const;

    static MarkovSpec three_state(double diag, const Eigen::Vector3d& mu,
                                  const Eigen::Vector3d& sigma, int length, std::uint64_t seed);
};

struct MarkovResult {
    std::vector<double> returns;
    std::vector<int> regimes;
    MarketFrame frame;
};

// Generates the return path plus a synthetic OHLCV frame: open = previous
// close, close compounds the returns, half-ranges are drawn with the day's
// regime sigma (moments calibrated to Brownian intraday range), volume is
// log-normal.
MarkovResult gen_markov(const MarkovSpec& spec);

// Two-regime logistic smooth transition (VLSTAR-style):
// y_t = mu0 + sum_j phi0_j y_{t-j} + G(s_t)*(mu1 + sum_j phi1_j y_{t-j}) + eps,
// with s_t the lagged return y_{t-1}.
struct TransitionSpec {
    double gamma = 50.0;  // slope, > 0
    double c = 0.0;       // threshold
    double mu0 = 0.0005;
    double mu1 = -0.001;
    Eigen::VectorXd phi0;  // lag coefficients, may be empty
    Eigen::VectorXd phi1;
    double sigma_eps = 0.01;
    int length = 1000;
    std::uint64_t seed = 42;
    double start_price = 100.0;
    Date start_date{2018, 1, 2};

    void validate() const;
};

struct TransitionResult {
    std::vector<double> returns;
    std::vector<double> transition_path;  // G_t
    MarketFrame frame;
};

TransitionResult gen_smooth_transition(const TransitionSpec& spec);

// Eq-8 logistic transition function G(s; gamma, c).
double logistic_transition(double s, double gamma, double c);

// Labels sidecar: date,<column_name> rows aligned with the frame.
void write_labels(const MarketFrame& frame, const std::vector<double>& labels,
                  const std::string& column_name, const std::string& path);

}  // namespace kasper
