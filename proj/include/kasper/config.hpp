#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kasper/backtest.hpp"
#include "kasper/shapley.hpp"
#include "kasper/synthgen.hpp"
#include "kasper/trainer.hpp"

namespace kasper {

// Flat dotted key-value run configuration. Resolution order:
// flag overrides > config file > defaults.
class RunConfig {
   public:
    RunConfig();  // defaults

    static RunConfig from_file(const std::string& path);
    void apply_file(const std::string& path);
    void apply_override(const std::string& key, const std::string& value);

    std::string get(const std::string& key) const;
    double get_double(const std::string& key) const;
    int get_int(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<double> get_list(const std::string& key) const;  // comma separated
    bool has(const std::string& key) const;

    void set(const std::string& key, const std::string& value);

    // Typed views assembled from the flat keys.
    TrainConfig train_config() const;
    ModelConfig model_config() const;
    WalkForwardConfig walkforward_config() const;
    AttributionConfig attribution_config() const;
    MarkovSpec markov_spec() const;
    TransitionSpec transition_spec() const;

    // The complete effective configuration, echoed into artifacts.
    nlohmann::json echo() const;

    const std::map<std::string, std::string>& entries() const { return values_; }

   private:
    std::map<std::string, std::string> values_;
};

}  // namespace kasper
