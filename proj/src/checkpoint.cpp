// SPDX-License-Identifier: Apache-2.0
#include "metapoint/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace metapoint {

namespace {

constexpr char kMagic[8] = {'M', 'P', 'T', 'C', 'K', 'P', 'T', '\x01'};

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

void write_doubles(std::ofstream& out, const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_doubles(std::ifstream& in, std::vector<double>& v, std::size_t n) {
    v.resize(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated payload");
}

}  // namespace

Checkpoint snapshot(const RunConfig& config, long long step, const nn::ParameterStore& store, const Adam* optimizer) {
    Checkpoint c;
    c.config = config;
    c.step = step;
    for (const auto& name : store.names()) {
        const ag::Var& p = store.get(name);
        c.parameters.push_back({name, p.rows(), p.cols(), {p.value().begin(), p.value().end()}});
    }
    if (optimizer != nullptr) {
        c.optimizer_steps = optimizer->steps_taken();
        c.moments = optimizer->moments();
    }
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    nlohmann::json header;
    header["schema_version"] = c.schema_version;
    header["config"] = c.config;
    header["config_hash"] = c.config.structural_hash();
    header["step"] = c.step;
    header["optimizer_steps"] = c.optimizer_steps;
    header["has_moments"] = !c.moments.empty();
    nlohmann::json index = nlohmann::json::array();
    for (const auto& a : c.parameters) index.push_back({{"name", a.name}, {"rows", a.rows}, {"cols", a.cols}});
    header["arrays"] = index;
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
        out.write(kMagic, sizeof kMagic);
        const std::uint64_t len = text.size();
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& a : c.parameters) write_doubles(out, a.data);
        for (const auto& m : c.moments) {
            write_doubles(out, m.first);
            write_doubles(out, m.second);
        }
        if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw std::runtime_error("not a checkpoint: " + path.string());
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || len > (std::uint64_t{1} << 30)) throw std::runtime_error("checkpoint: bad header length");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error("checkpoint: truncated header");
    const auto header = nlohmann::json::parse(text);

    Checkpoint c;
    c.schema_version = header.at("schema_version").get<int>();
    if (c.schema_version > kCheckpointSchemaVersion) throw std::runtime_error("checkpoint schema is newer than supported");
    c.config = header.at("config").get<RunConfig>();
    c.step = header.at("step").get<long long>();
    c.optimizer_steps = header.value("optimizer_steps", 0LL);
    for (const auto& a : header.at("arrays")) {
        Checkpoint::Array arr{a.at("name").get<std::string>(), a.at("rows").get<int>(), a.at("cols").get<int>(), {}};
        c.parameters.push_back(std::move(arr));
    }
    for (auto& a : c.parameters) read_doubles(in, a.data, static_cast<std::size_t>(a.rows) * a.cols);
    if (header.value("has_moments", false)) {
        for (const auto& a : c.parameters) {
            Adam::Moments m;
            read_doubles(in, m.first, a.data.size());
            read_doubles(in, m.second, a.data.size());
            c.moments.push_back(std::move(m));
        }
    }
    return c;
}

void restore_parameters(const Checkpoint& c, nn::ParameterStore& store) {
    if (c.parameters.size() != store.count()) throw std::invalid_argument("checkpoint: parameter count differs from model");
    for (const auto& a : c.parameters) {
        if (!store.contains(a.name)) throw std::invalid_argument("checkpoint: unknown parameter " + a.name);
        ag::Var& p = store.get(a.name);
        if (p.rows() != a.rows || p.cols() != a.cols) throw std::invalid_argument("checkpoint: shape mismatch for " + a.name);
        std::copy(a.data.begin(), a.data.end(), p.mutable_value().begin());
    }
}

void restore_optimizer(const Checkpoint& c, Adam& optimizer) {
    if (c.moments.empty()) throw std::invalid_argument("checkpoint: no optimizer state saved");
    optimizer.restore(c.optimizer_steps, c.moments);
}

}  // namespace metapoint
