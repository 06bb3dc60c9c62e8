// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "metapoint/geometry.hpp"

namespace metapoint {

inline constexpr std::array<double, 4> kMpckThresholds{0.05, 0.1, 0.15, 0.2};

/// Axis-aligned normalized rectangle [x0, x1] x [y0, y1].
struct BoundingBox {
    double x0 = 0.0;
    double y0 = 0.0;
    double x1 = 1.0;
    double y1 = 1.0;

    [[nodiscard]] double longest_side() const;
    [[nodiscard]] bool contains(Point2 p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
};

/// Fraction of valid keypoints within threshold * normalizer (Euclidean).
/// Returns nullopt when no keypoint is valid. Throws std::invalid_argument
/// for a non-positive normalizer or mismatched lengths.
[[nodiscard]] std::optional<double> pck(const PointSet& pred, const PointSet& gt, std::span<const bool> mask,
                                        double threshold, double normalizer);

/// Mean of PCK over kMpckThresholds.
[[nodiscard]] std::optional<double> mpck(const PointSet& pred, const PointSet& gt, std::span<const bool> mask,
                                         double normalizer);

/// Running mean of per-episode PCK values at a fixed threshold list.
class PckAccumulator {
public:
    explicit PckAccumulator(std::vector<double> thresholds);

    /// Returns false (and records a skip) when the episode has no valid keypoint.
    bool add(const PointSet& pred, const PointSet& gt, std::span<const bool> mask, double normalizer);

    [[nodiscard]] const std::vector<double>& thresholds() const { return thresholds_; }
    [[nodiscard]] std::vector<double> means() const;
    [[nodiscard]] double mean_of_thresholds(std::span<const double> subset) const;
    [[nodiscard]] int episodes() const { return episodes_; }
    [[nodiscard]] int skipped() const { return skipped_; }
    void merge(const PckAccumulator& other);

private:
    std::vector<double> thresholds_;
    std::vector<double> sums_;
    int episodes_ = 0;
    int skipped_ = 0;
};

}  // namespace metapoint
