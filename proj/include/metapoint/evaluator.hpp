// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "metapoint/episodes.hpp"
#include "metapoint/metrics.hpp"
#include "metapoint/model.hpp"

namespace metapoint {

/// metapoint: assigned query meta-points. metapoint-plus: refined points.
/// grid: support keypoints matched onto a frozen uniform grid.
enum class EvalMode { MetaPoint, MetaPointPlus, Grid };

[[nodiscard]] std::string to_string(EvalMode mode);
[[nodiscard]] EvalMode eval_mode_from_string(const std::string& s);

struct EvalOptions {
    int shots = 1;
    int episodes = 100;            // per evaluation seed
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::vector<double> thresholds{kMpckThresholds.begin(), kMpckThresholds.end()};
};

struct EvalReport {
    EvalMode mode = EvalMode::MetaPointPlus;
    std::string split;
    std::string config_hash;
    int shots = 1;
    int episodes = 0;   // scored episodes over all seeds
    int skipped = 0;
    std::vector<double> thresholds;
    std::vector<double> pck_mean;  // per threshold, mean over seeds
    std::vector<double> pck_std;   // population std over seeds
    double mpck_mean = 0.0;
    double mpck_std = 0.0;

    /// PCK mean at the given threshold; throws if it was not evaluated.
    [[nodiscard]] double pck_at(double threshold) const;
};

[[nodiscard]] nlohmann::json to_json(const EvalReport& report);

/// Evaluation episode seed for (evaluation seed, episode index).
[[nodiscard]] std::uint64_t eval_episode_seed(std::uint64_t seed, int index);

/// Scores `mode` on episodes drawn from `class_ids`. `model` may be null
/// only for the grid mode.
[[nodiscard]] EvalReport evaluate(const MetaPointModel* model, const Dataset& dataset, std::span<const int> class_ids,
                                  EvalMode mode, const EvalOptions& options, int grid_points = 0);

/// All three modes from one forward per episode.
[[nodiscard]] std::vector<EvalReport> evaluate_all(const MetaPointModel& model, const Dataset& dataset,
                                                   std::span<const int> class_ids, const EvalOptions& options);

}  // namespace metapoint
