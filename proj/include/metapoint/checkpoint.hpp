// SPDX-License-Identifier: Apache-2.0
#pragma once

// Single-file checkpoint: an 8-byte magic, a little-endian uint64 header
// length, a UTF-8 JSON header (schema version, run config, step, array
// index), then the raw float64 payload in index order.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "metapoint/config.hpp"
#include "metapoint/nn.hpp"
#include "metapoint/optimizer.hpp"

namespace metapoint {

inline constexpr int kCheckpointSchemaVersion = 1;

struct Checkpoint {
    int schema_version = kCheckpointSchemaVersion;
    RunConfig config;
    long long step = 0;  // completed training steps
    struct Array {
        std::string name;
        int rows = 0;
        int cols = 0;
        std::vector<double> data;
    };
    std::vector<Array> parameters;
    long long optimizer_steps = 0;
    std::vector<Adam::Moments> moments;  // empty when not saved
};

[[nodiscard]] Checkpoint snapshot(const RunConfig& config, long long step, const nn::ParameterStore& store,
                                  const Adam* optimizer);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Throws std::runtime_error on a missing, truncated, or foreign file.
[[nodiscard]] Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies arrays into the store by name. Throws std::invalid_argument if a
/// name is missing or a shape differs.
void restore_parameters(const Checkpoint& checkpoint, nn::ParameterStore& store);
void restore_optimizer(const Checkpoint& checkpoint, Adam& optimizer);

}  // namespace metapoint
