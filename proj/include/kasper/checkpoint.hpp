#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "kasper/model.hpp"

namespace kasper {

// Single-file container: magic line, header length, JSON header, raw
// little-endian float64 array payload, and a trailing 16-hex-char FNV-1a
// digest over every preceding byte.
inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointMagic = "KASPERCHK1";

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);

struct LoadedCheckpoint {
    std::unique_ptr<KasperModel> model;
    PipelineState pipeline;
    std::uint64_t seed = 0;
    nlohmann::json config;  // effective run configuration echo
};

// Serializes all trainable parameters and model state arrays plus the
// pipeline scaling/selection state. `config_echo` is stored verbatim.
void save_checkpoint(const KasperModel& model, const PipelineState& pipeline,
                     const nlohmann::json& config_echo, std::uint64_t seed,
                     const std::string& path);

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace kasper
