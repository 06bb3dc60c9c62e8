// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"

namespace metapoint {

/// Component toggles for ablation runs. All on is the full model.
struct Ablation {
    bool visibility = true;          // visibility head, its loss, and the -log(v) cost term
    bool support_features = true;    // F_s in the fused refinement embedding
    bool support_embeddings = true;  // assigned support meta-embeddings in the fused embedding
    bool slacked_loss = true;        // false -> plain L1 on every layer (slack 0)

    friend bool operator==(const Ablation&, const Ablation&) = default;
};

struct RunConfig {
    // structure
    int num_meta_points = 100;
    int layers = 3;
    int levels = 3;
    int dim = 64;
    int heads = 4;
    int sampling_points = 4;
    int ffn_dim = 256;
    // objective
    double slack = 0.1;
    double alpha = 0.5;
    double pool_sigma = 1.5;
    // 1-based meta layer that launches refinement; 0 means the last layer
    int refine_from_layer = 0;
    // optimization
    double learning_rate = 1e-3;
    int steps = 5000;
    int batch_size = 1;
    int shots = 1;
    int checkpoint_every = 1000;
    std::uint64_t seed = 0;
    Ablation ablation;

    /// Throws std::invalid_argument when an invariant does not hold.
    void validate() const;
    [[nodiscard]] double effective_slack() const { return ablation.slacked_loss ? slack : 0.0; }
    [[nodiscard]] double effective_alpha() const { return ablation.visibility ? alpha : 0.0; }

    /// Hash of the fields that determine parameter shapes and the forward pass.
    [[nodiscard]] std::string structural_hash() const;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// Applies one "key = value" override. Keys match the JSON field names;
/// ablation toggles are "ablate" with values no-vis, no-fs, no-es, plain-l1.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// Reads a UTF-8 key-value file: one "key = value" per line, '#' comments.
[[nodiscard]] std::map<std::string, std::string> read_key_value_file(const std::filesystem::path& path);

/// Seed fallback from METAPOINT_SEED, else `fallback`.
[[nodiscard]] std::uint64_t seed_from_environment(std::uint64_t fallback);

}  // namespace metapoint
