#include "kasper/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "kasper/errors.hpp"

namespace kasper {

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

void append_array_le(std::string& payload, const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            const double v = m(r, c);
            std::uint64_t bits = 0;
            std::memcpy(&bits, &v, sizeof(bits));
            for (int b = 0; b < 8; ++b) payload.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
        }
    }
}

Eigen::MatrixXd read_array_le(const std::string& payload, std::size_t offset_doubles,
                              Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    std::size_t pos = offset_doubles * 8;
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) {
                bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(payload[pos + static_cast<std::size_t>(b)]))
                        << (8 * b);
            }
            pos += 8;
            double v = 0.0;
            std::memcpy(&v, &bits, sizeof(v));
            m(r, c) = v;
        }
    }
    return m;
}

std::string digest_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

nlohmann::json scaler_json(const Scaler& s) {
    nlohmann::json j;
    j["mean"] = std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size());
    j["std"] = std::vector<double>(s.std.data(), s.std.data() + s.std.size());
    return j;
}

Scaler scaler_from_json(const nlohmann::json& j) {
    Scaler s;
    auto mv = j.at("mean").get<std::vector<double>>();
    auto sv = j.at("std").get<std::vector<double>>();
    s.mean = Eigen::Map<Eigen::VectorXd>(mv.data(), static_cast<Eigen::Index>(mv.size()));
    s.std = Eigen::Map<Eigen::VectorXd>(sv.data(), static_cast<Eigen::Index>(sv.size()));
    s.fitted = true;
    return s;
}

}  // namespace

void save_checkpoint(const KasperModel& model, const PipelineState& pipeline,
                     const nlohmann::json& config_echo, std::uint64_t seed,
                     const std::string& path) {
    auto& mutable_model = const_cast<KasperModel&>(model);
    for (auto* p : mutable_model.parameters()) {
        if (!p->value.allFinite()) {
            throw numeric_fault("refusing to checkpoint non-finite parameter '" + p->name + "'");
        }
    }

    nlohmann::json header;
    header["format_version"] = kCheckpointVersion;
    header["seed"] = seed;
    header["config"] = config_echo;
    const ModelConfig& mc = model.config();
    header["model"] = {{"input_dim", mc.detector.input_dim},
                       {"hidden_dim", mc.detector.hidden_dim},
                       {"n_regimes", mc.detector.n_regimes},
                       {"n_linear", mc.detector.n_linear},
                       {"n_cubic", mc.detector.n_cubic},
                       {"tau", mc.detector.tau},
                       {"n_basis_fns", mc.forecaster.n_basis_fns},
                       {"n_bsplines", mc.forecaster.n_bsplines},
                       {"theta", mc.forecaster.theta}};
    header["pipeline"] = {{"feature_names", pipeline.feature_names},
                          {"selected", pipeline.selected},
                          {"scaler", scaler_json(pipeline.scaler)},
                          {"target_scaler", scaler_json(pipeline.target_scaler)}};

    std::string payload;
    nlohmann::json arrays = nlohmann::json::array();
    std::size_t offset = 0;
    auto put = [&](const std::string& name, const Eigen::MatrixXd& value) {
        arrays.push_back({{"name", name},
                          {"rows", value.rows()},
                          {"cols", value.cols()},
                          {"offset", offset}});
        append_array_le(payload, value);
        offset += static_cast<std::size_t>(value.rows() * value.cols());
    };
    for (auto* p : mutable_model.parameters()) put(p->name, p->value);
    for (const auto& [name, value] : model.state_arrays()) put(name, value);
    header["arrays"] = std::move(arrays);

    const std::string header_str = header.dump();
    std::string bytes;
    bytes += kCheckpointMagic;
    bytes += '\n';
    bytes += std::to_string(header_str.size());
    bytes += '\n';
    bytes += header_str;
    bytes += payload;
    bytes += digest_hex(fnv1a64(bytes.data(), bytes.size()));

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw io_error("cannot write '" + tmp + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw io_error("short write to '" + tmp + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw io_error("cannot rename '" + tmp + "' to '" + path + "'");
    }
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string bytes = buf.str();
    if (bytes.size() < 16 + std::strlen(kCheckpointMagic) + 2) {
        throw digest_error("checkpoint '" + path + "' is too short");
    }

    const std::string stored = bytes.substr(bytes.size() - 16);
    const std::string body = bytes.substr(0, bytes.size() - 16);
    if (digest_hex(fnv1a64(body.data(), body.size())) != stored) {
        throw digest_error("checkpoint digest mismatch in '" + path + "'");
    }

    std::size_t pos = body.find('\n');
    if (pos == std::string::npos || body.substr(0, pos) != kCheckpointMagic) {
        throw schema_error("'" + path + "' is not a checkpoint file");
    }
    std::size_t pos2 = body.find('\n', pos + 1);
    if (pos2 == std::string::npos) throw schema_error("checkpoint header length missing");
    const std::size_t header_len = std::stoul(body.substr(pos + 1, pos2 - pos - 1));
    if (pos2 + 1 + header_len > body.size()) throw schema_error("checkpoint header truncated");
    const nlohmann::json header = nlohmann::json::parse(body.substr(pos2 + 1, header_len));
    const std::string payload = body.substr(pos2 + 1 + header_len);

    const int version = header.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
        throw version_error("unsupported checkpoint format_version " + std::to_string(version) +
                            " (expected " + std::to_string(kCheckpointVersion) + ")");
    }

    const auto& mj = header.at("model");
    ModelConfig mc = ModelConfig::with_dims(mj.at("input_dim").get<int>(),
                                            mj.at("hidden_dim").get<int>(),
                                            mj.at("n_regimes").get<int>());
    mc.detector.n_linear = mj.at("n_linear").get<int>();
    mc.detector.n_cubic = mj.at("n_cubic").get<int>();
    mc.detector.tau = mj.at("tau").get<double>();
    mc.forecaster.n_basis_fns = mj.at("n_basis_fns").get<int>();
    mc.forecaster.n_bsplines = mj.at("n_bsplines").get<int>();
    mc.forecaster.theta = mj.at("theta").get<double>();

    LoadedCheckpoint out;
    out.model = std::make_unique<KasperModel>(mc);
    out.seed = header.at("seed").get<std::uint64_t>();
    out.config = header.value("config", nlohmann::json::object());

    const auto& pj = header.at("pipeline");
    out.pipeline.feature_names = pj.at("feature_names").get<std::vector<std::string>>();
    out.pipeline.selected = pj.at("selected").get<std::vector<int>>();
    if (!pj.contains("scaler")) throw schema_error("checkpoint missing 'scaler'");
    out.pipeline.scaler = scaler_from_json(pj.at("scaler"));
    out.pipeline.target_scaler = scaler_from_json(pj.at("target_scaler"));

    std::map<std::string, Eigen::MatrixXd> arrays;
    for (const auto& a : header.at("arrays")) {
        const auto rows = a.at("rows").get<Eigen::Index>();
        const auto cols = a.at("cols").get<Eigen::Index>();
        const auto offset = a.at("offset").get<std::size_t>();
        if ((offset + static_cast<std::size_t>(rows * cols)) * 8 > payload.size()) {
            throw schema_error("checkpoint array '" + a.at("name").get<std::string>() +
                               "' exceeds payload");
        }
        arrays[a.at("name").get<std::string>()] = read_array_le(payload, offset, rows, cols);
    }

    // every model array must exist in the checkpoint, and vice versa
    std::map<std::string, bool> consumed;
    for (auto& [name, value] : arrays) consumed[name] = false;
    for (auto* p : out.model->parameters()) {
        auto it = arrays.find(p->name);
        if (it == arrays.end()) throw schema_error("checkpoint missing parameter '" + p->name + "'");
        if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
            throw schema_error("checkpoint parameter '" + p->name + "' has wrong shape");
        }
        p->value = it->second;
        consumed[p->name] = true;
    }
    for (const auto& [name, value] : out.model->state_arrays()) {
        auto it = arrays.find(name);
        if (it == arrays.end()) throw schema_error("checkpoint missing state array '" + name + "'");
        out.model->load_state_array(name, it->second);
        consumed[name] = true;
    }
    for (const auto& [name, used] : consumed) {
        if (!used) throw schema_error("checkpoint has unknown array '" + name + "'");
    }
    return out;
}

}  // namespace kasper
