#include "kasper/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "kasper/errors.hpp"

namespace kasper {

namespace {

std::string trim(std::string s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    return s;
}

}  // namespace

RunConfig::RunConfig() {
    values_ = {
        {"data.path", ""},
        {"data.delimiter", ","},
        {"pipeline.k_best", "8"},
        {"pipeline.train_frac", "0.70"},
        {"pipeline.val_frac", "0.15"},
        {"model.n_regimes", "3"},
        {"model.hidden_dim", "64"},
        {"model.n_linear", "3"},
        {"model.n_cubic", "2"},
        {"model.n_basis_fns", "8"},
        {"model.n_bsplines", "8"},
        {"model.theta", "0.01"},
        {"model.tau", "1.0"},
        {"train.lr", "0.001"},
        {"train.weight_decay", "1e-5"},
        {"train.batch_size", "32"},
        {"train.max_epochs", "100"},
        {"train.early_stop_patience", "15"},
        {"train.plateau_factor", "0.7"},
        {"train.plateau_patience", "7"},
        {"train.grad_clip", "0.5"},
        {"train.huber_delta", "1.0"},
        {"train.lambda_contrastive", "0.01"},
        {"train.lambda_sparsity", "0.001"},
        {"train.lambda_orth", "0.01"},
        {"train.lambda_balance", "0.05"},
        {"train.margin", "1.0"},
        {"train.warmup_double_balance", "true"},
        {"train.warmup_knot_refit", "true"},
        {"train.tune_sparsity", "false"},
        {"explain.n_samples", "100"},
        {"explain.gamma", "0.9"},
        {"explain.window", "30"},
        {"explain.top_m", "3"},
        {"explain.split", "test"},
        {"eval.risk_free", "0"},
        {"eval.trading_days", "252"},
        {"walkforward.train_len", "252"},
        {"walkforward.test_len", "63"},
        {"walkforward.n_windows", "0"},
        {"walkforward.n_runs", "5"},
        {"walkforward.val_frac", "0.15"},
        {"sim.kind", "markov"},
        {"sim.length", "1000"},
        {"sim.mu", "0.002,0,-0.002"},
        {"sim.sigma", "0.005,0.02,0.01"},
        {"sim.diag", "0.95"},
        {"sim.gamma", "50"},
        {"sim.c", "0"},
        {"sim.mu0", "0.0005"},
        {"sim.mu1", "-0.001"},
        {"sim.phi0", "0.1"},
        {"sim.phi1", "-0.2"},
        {"sim.sigma_eps", "0.01"},
        {"seed", "42"},
        {"out_dir", "kasper_out"},
    };
}

RunConfig RunConfig::from_file(const std::string& path) {
    RunConfig cfg;
    cfg.apply_file(path);
    return cfg;
}

void RunConfig::apply_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config '" + path + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw schema_error("config line " + std::to_string(lineno) + " is not key = value");
        }
        apply_override(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
}

void RunConfig::apply_override(const std::string& key, const std::string& value) {
    if (values_.find(key) == values_.end()) {
        throw parameter_error("unknown configuration key '" + key + "'");
    }
    values_[key] = value;
}

void RunConfig::set(const std::string& key, const std::string& value) { values_[key] = value; }

bool RunConfig::has(const std::string& key) const { return values_.count(key) > 0; }

std::string RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw parameter_error("unknown configuration key '" + key + "'");
    return it->second;
}

double RunConfig::get_double(const std::string& key) const {
    try {
        return std::stod(get(key));
    } catch (const std::exception&) {
        throw parameter_error("config key '" + key + "' is not a number: '" + get(key) + "'");
    }
}

int RunConfig::get_int(const std::string& key) const {
    try {
        return std::stoi(get(key));
    } catch (const std::exception&) {
        throw parameter_error("config key '" + key + "' is not an integer: '" + get(key) + "'");
    }
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
    try {
        return std::stoull(get(key));
    } catch (const std::exception&) {
        throw parameter_error("config key '" + key + "' is not an integer: '" + get(key) + "'");
    }
}

bool RunConfig::get_bool(const std::string& key) const {
    std::string v = get(key);
    std::transform(v.begin(), v.end(), v.begin(), ::tolower);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw parameter_error("config key '" + key + "' is not a boolean: '" + v + "'");
}

std::vector<double> RunConfig::get_list(const std::string& key) const {
    std::vector<double> out;
    std::istringstream s(get(key));
    std::string item;
    while (std::getline(s, item, ',')) {
        if (trim(item).empty()) continue;
        out.push_back(std::stod(item));
    }
    return out;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig tc;
    tc.lr = get_double("train.lr");
    tc.weight_decay = get_double("train.weight_decay");
    tc.batch_size = get_int("train.batch_size");
    tc.max_epochs = get_int("train.max_epochs");
    tc.early_stop_patience = get_int("train.early_stop_patience");
    tc.plateau_factor = get_double("train.plateau_factor");
    tc.plateau_patience = get_int("train.plateau_patience");
    tc.grad_clip_norm = get_double("train.grad_clip");
    tc.huber_delta = get_double("train.huber_delta");
    tc.lambda_contrastive = get_double("train.lambda_contrastive");
    tc.lambda_sparsity = get_double("train.lambda_sparsity");
    tc.lambda_orth = get_double("train.lambda_orth");
    tc.lambda_balance = get_double("train.lambda_balance");
    tc.contrastive_margin = get_double("train.margin");
    tc.warmup_double_balance = get_bool("train.warmup_double_balance");
    tc.warmup_knot_refit = get_bool("train.warmup_knot_refit");
    tc.seed = get_u64("seed");
    return tc;
}

ModelConfig RunConfig::model_config() const {
    ModelConfig mc = ModelConfig::with_dims(get_int("pipeline.k_best"),
                                            get_int("model.hidden_dim"),
                                            get_int("model.n_regimes"));
    mc.detector.n_linear = get_int("model.n_linear");
    mc.detector.n_cubic = get_int("model.n_cubic");
    mc.detector.tau = get_double("model.tau");
    mc.forecaster.n_basis_fns = get_int("model.n_basis_fns");
    mc.forecaster.n_bsplines = get_int("model.n_bsplines");
    mc.forecaster.theta = get_double("model.theta");
    return mc;
}

WalkForwardConfig RunConfig::walkforward_config() const {
    WalkForwardConfig wf;
    wf.train_len = get_int("walkforward.train_len");
    wf.test_len = get_int("walkforward.test_len");
    wf.n_windows = get_int("walkforward.n_windows");
    wf.n_runs = get_int("walkforward.n_runs");
    wf.val_frac = get_double("walkforward.val_frac");
    wf.k_best = get_int("pipeline.k_best");
    wf.hidden_dim = get_int("model.hidden_dim");
    wf.n_regimes = get_int("model.n_regimes");
    wf.n_basis_fns = get_int("model.n_basis_fns");
    wf.n_bsplines = get_int("model.n_bsplines");
    wf.theta = get_double("model.theta");
    wf.risk_free = get_double("eval.risk_free");
    wf.trading_days = get_int("eval.trading_days");
    wf.seed = get_u64("seed");
    wf.train = train_config();
    return wf;
}

AttributionConfig RunConfig::attribution_config() const {
    AttributionConfig ac;
    ac.n_samples = get_int("explain.n_samples");
    ac.gamma = get_double("explain.gamma");
    ac.window = get_int("explain.window");
    ac.top_m = get_int("explain.top_m");
    ac.seed = get_u64("seed");
    return ac;
}

MarkovSpec RunConfig::markov_spec() const {
    const auto mu = get_list("sim.mu");
    const auto sigma = get_list("sim.sigma");
    if (mu.size() != 3 || sigma.size() != 3) {
        throw parameter_error("sim.mu and sim.sigma must each list 3 values");
    }
    return MarkovSpec::three_state(get_double("sim.diag"),
                                   Eigen::Vector3d(mu[0], mu[1], mu[2]),
                                   Eigen::Vector3d(sigma[0], sigma[1], sigma[2]),
                                   get_int("sim.length"), get_u64("seed"));
}

TransitionSpec RunConfig::transition_spec() const {
    TransitionSpec ts;
    ts.gamma = get_double("sim.gamma");
    ts.c = get_double("sim.c");
    ts.mu0 = get_double("sim.mu0");
    ts.mu1 = get_double("sim.mu1");
    const auto p0 = get_list("sim.phi0");
    const auto p1 = get_list("sim.phi1");
    ts.phi0 = Eigen::Map<const Eigen::VectorXd>(p0.data(), static_cast<Eigen::Index>(p0.size()));
    ts.phi1 = Eigen::Map<const Eigen::VectorXd>(p1.data(), static_cast<Eigen::Index>(p1.size()));
    ts.sigma_eps = get_double("sim.sigma_eps");
    ts.length = get_int("sim.length");
    ts.seed = get_u64("seed");
    return ts;
}

nlohmann::json RunConfig::echo() const {
    nlohmann::json j;
    for (const auto& [key, value] : values_) j[key] = value;
    return j;
}

}  // namespace kasper
