// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "metapoint/autograd.hpp"
#include "metapoint/geometry.hpp"

namespace metapoint {

struct Assignment;

inline constexpr double kDefaultSlack = 0.1;
inline constexpr double kDefaultAlpha = 0.5;
inline constexpr double kProbabilityClamp = 1e-6;

/// relu(|d|_1 - slack * (L - l)) for a single deviation; l is 1-based.
[[nodiscard]] double slacked_deviation(double l1_deviation, int layer, int total_layers, double slack);

/// Sum over points of the slacked per-point L1 deviation.
[[nodiscard]] double slacked_l1(const PointSet& pred, const PointSet& gt, int layer, int total_layers, double slack);

/// Graph version on a K x 2 prediction; masked rows (mask[k] == false) are skipped.
[[nodiscard]] ag::Var slacked_l1(const ag::Var& pred, const PointSet& gt, std::span<const bool> mask, int layer,
                                 int total_layers, double slack);

/// Both streams, all layers. meta_layers and refined_layers are K x 2 each.
[[nodiscard]] ag::Var regression_loss(std::span<const ag::Var> meta_layers, std::span<const ag::Var> refined_layers,
                                      const PointSet& gt, std::span<const bool> mask, double slack);

/// Mean BCE of the M visibilities against the indicator of assigned slots.
[[nodiscard]] ag::Var visibility_loss(const ag::Var& visibility, const Assignment& assignment);

struct LossReport {
    double reg = 0.0;
    double vis = 0.0;
    double full = 0.0;
    std::vector<double> per_layer_meta;
    std::vector<double> per_layer_refined;
};

}  // namespace metapoint
