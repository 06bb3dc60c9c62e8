// SPDX-License-Identifier: Apache-2.0
#include "metapoint/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace metapoint {

void RunConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("config: " + what); };
    if (num_meta_points < 1) fail("num_meta_points must be >= 1");
    if (layers < 1) fail("layers must be >= 1");
    if (levels < 2 || levels > 4) fail("levels must be in {2, 3, 4}");
    if (dim < 4 || dim % 4 != 0) fail("dim must be a positive multiple of 4");
    if (heads < 1 || dim % heads != 0) fail("dim must be divisible by heads");
    if (sampling_points < 1) fail("sampling_points must be >= 1");
    if (ffn_dim < 1) fail("ffn_dim must be >= 1");
    if (slack < 0) fail("slack must be >= 0");
    if (alpha < 0) fail("alpha must be >= 0");
    if (pool_sigma <= 0) fail("pool_sigma must be > 0");
    if (refine_from_layer < 0 || refine_from_layer > layers) fail("refine_from_layer must be in [0, layers]");
    if (learning_rate <= 0) fail("learning_rate must be > 0");
    if (steps < 0) fail("steps must be >= 0");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (shots < 1) fail("shots must be >= 1");
    if (checkpoint_every < 1) fail("checkpoint_every must be >= 1");
}

std::string RunConfig::structural_hash() const {
    std::ostringstream os;
    os << num_meta_points << '/' << layers << '/' << levels << '/' << dim << '/' << heads << '/' << sampling_points
       << '/' << ffn_dim;
    // FNV-1a, stable across platforms
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : os.str()) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    std::ostringstream hex;
    hex << std::hex << h;
    return hex.str();
}

void to_json(nlohmann::json& j, const RunConfig& c) {
    j = nlohmann::json{{"num_meta_points", c.num_meta_points},
                       {"layers", c.layers},
                       {"levels", c.levels},
                       {"dim", c.dim},
                       {"heads", c.heads},
                       {"sampling_points", c.sampling_points},
                       {"ffn_dim", c.ffn_dim},
                       {"slack", c.slack},
                       {"alpha", c.alpha},
                       {"pool_sigma", c.pool_sigma},
                       {"refine_from_layer", c.refine_from_layer},
                       {"learning_rate", c.learning_rate},
                       {"steps", c.steps},
                       {"batch_size", c.batch_size},
                       {"shots", c.shots},
                       {"checkpoint_every", c.checkpoint_every},
                       {"seed", c.seed},
                       {"ablation",
                        {{"visibility", c.ablation.visibility},
                         {"support_features", c.ablation.support_features},
                         {"support_embeddings", c.ablation.support_embeddings},
                         {"slacked_loss", c.ablation.slacked_loss}}}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
    RunConfig d;
    c.num_meta_points = j.value("num_meta_points", d.num_meta_points);
    c.layers = j.value("layers", d.layers);
    c.levels = j.value("levels", d.levels);
    c.dim = j.value("dim", d.dim);
    c.heads = j.value("heads", d.heads);
    c.sampling_points = j.value("sampling_points", d.sampling_points);
    c.ffn_dim = j.value("ffn_dim", d.ffn_dim);
    c.slack = j.value("slack", d.slack);
    c.alpha = j.value("alpha", d.alpha);
    c.pool_sigma = j.value("pool_sigma", d.pool_sigma);
    c.refine_from_layer = j.value("refine_from_layer", d.refine_from_layer);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.steps = j.value("steps", d.steps);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.shots = j.value("shots", d.shots);
    c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
    c.seed = j.value("seed", d.seed);
    if (j.contains("ablation")) {
        const auto& a = j.at("ablation");
        c.ablation.visibility = a.value("visibility", true);
        c.ablation.support_features = a.value("support_features", true);
        c.ablation.support_embeddings = a.value("support_embeddings", true);
        c.ablation.slacked_loss = a.value("slacked_loss", true);
    }
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    int out = 0;
    try {
        out = std::stoi(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty()) throw std::invalid_argument("config: " + key + " expects an integer, got '" + v + "'");
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty()) throw std::invalid_argument("config: " + key + " expects a number, got '" + v + "'");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw std::invalid_argument("config: " + key + " expects a boolean, got '" + v + "'");
}

}  // namespace

void apply_setting(RunConfig& cfg, const std::string& raw_key, const std::string& raw_value) {
    const std::string key = trim(raw_key);
    const std::string v = trim(raw_value);
    using Setter = std::function<void()>;
    const std::map<std::string, Setter> table{
        {"num_meta_points", [&] { cfg.num_meta_points = to_int(key, v); }},
        {"layers", [&] { cfg.layers = to_int(key, v); }},
        {"levels", [&] { cfg.levels = to_int(key, v); }},
        {"dim", [&] { cfg.dim = to_int(key, v); }},
        {"heads", [&] { cfg.heads = to_int(key, v); }},
        {"sampling_points", [&] { cfg.sampling_points = to_int(key, v); }},
        {"ffn_dim", [&] { cfg.ffn_dim = to_int(key, v); }},
        {"slack", [&] { cfg.slack = to_double(key, v); }},
        {"alpha", [&] { cfg.alpha = to_double(key, v); }},
        {"pool_sigma", [&] { cfg.pool_sigma = to_double(key, v); }},
        {"refine_from_layer", [&] { cfg.refine_from_layer = to_int(key, v); }},
        {"learning_rate", [&] { cfg.learning_rate = to_double(key, v); }},
        {"steps", [&] { cfg.steps = to_int(key, v); }},
        {"batch_size", [&] { cfg.batch_size = to_int(key, v); }},
        {"shots", [&] { cfg.shots = to_int(key, v); }},
        {"checkpoint_every", [&] { cfg.checkpoint_every = to_int(key, v); }},
        {"seed", [&] { cfg.seed = static_cast<std::uint64_t>(std::stoull(v)); }},
        {"ablation.visibility", [&] { cfg.ablation.visibility = to_bool(key, v); }},
        {"ablation.support_features", [&] { cfg.ablation.support_features = to_bool(key, v); }},
        {"ablation.support_embeddings", [&] { cfg.ablation.support_embeddings = to_bool(key, v); }},
        {"ablation.slacked_loss", [&] { cfg.ablation.slacked_loss = to_bool(key, v); }},
        {"ablate",
         [&] {
             std::stringstream list(v);
             std::string item;
             while (std::getline(list, item, ',')) {
                 item = trim(item);
                 if (item == "no-vis") cfg.ablation.visibility = false;
                 else if (item == "no-fs") cfg.ablation.support_features = false;
                 else if (item == "no-es") cfg.ablation.support_embeddings = false;
                 else if (item == "plain-l1") cfg.ablation.slacked_loss = false;
                 else if (item == "none") cfg.ablation = Ablation{};
                 else throw std::invalid_argument("config: unknown ablation '" + item + "'");
             }
         }},
    };
    auto it = table.find(key);
    if (it == table.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
    it->second();
}

std::map<std::string, std::string> read_key_value_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path.string());
    std::map<std::string, std::string> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
        }
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

std::uint64_t seed_from_environment(std::uint64_t fallback) {
    const char* env = std::getenv("METAPOINT_SEED");
    if (env == nullptr || *env == '\0') return fallback;
    return static_cast<std::uint64_t>(std::stoull(env));
}

}  // namespace metapoint
