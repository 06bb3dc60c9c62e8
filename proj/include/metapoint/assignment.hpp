// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "metapoint/autograd.hpp"
#include "metapoint/geometry.hpp"
#include "metapoint/meta_stage.hpp"

namespace metapoint {

/// M x K matrix; entry (m, k) is the cost of giving keypoint k to meta-point m.
class CostMatrix {
public:
    CostMatrix() = default;
    CostMatrix(int meta_points, int keypoints);
    CostMatrix(int meta_points, int keypoints, std::vector<double> entries);

    [[nodiscard]] int meta_points() const { return rows_; }
    [[nodiscard]] int keypoints() const { return cols_; }
    [[nodiscard]] double& at(int m, int k) { return data_[static_cast<std::size_t>(m) * cols_ + k]; }
    [[nodiscard]] double at(int m, int k) const { return data_[static_cast<std::size_t>(m) * cols_ + k]; }
    [[nodiscard]] std::span<const double> entries() const { return data_; }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

/// delta[k] is the (0-based) meta-point assigned to keypoint k.
struct Assignment {
    std::vector<int> delta;
    int meta_points = 0;

    [[nodiscard]] int keypoints() const { return static_cast<int>(delta.size()); }
    [[nodiscard]] double total_cost(const CostMatrix& cost) const;
    [[nodiscard]] bool injective() const;
    /// M-vector with 1 at assigned meta-points.
    [[nodiscard]] std::vector<double> indicator() const;
};

struct CostOptions {
    double slack = 0.1;
    double alpha = 0.5;
    double visibility_floor = 1e-6;
};

/// C[m, k] = sum_l slacked_l1(P_l[m], gt[k], l) - alpha * log(clamp(v[m])).
/// The visibility term is added once per entry. Throws std::invalid_argument when K > M.
[[nodiscard]] CostMatrix cost_matrix(const MetaPrediction& support_meta, const PointSet& support_gt,
                                     const CostOptions& options = {});

/// Exact minimum-cost injective matching of the K keypoints into the M
/// meta-points (shortest augmenting paths with potentials). Scans prefer
/// the lower meta-point index on ties, so results are deterministic.
[[nodiscard]] Assignment solve_assignment(const CostMatrix& cost);

/// Per-shot support data entering N-shot aggregation.
struct ShotSupport {
    CostMatrix cost;
    ag::Var meta_embeddings;   // M x D, last meta layer on this support image
    ag::Var keypoint_features; // K x D, pooled support keypoint features
};

struct AggregatedSupport {
    CostMatrix cost;
    Assignment assignment;
    ag::Var assigned_embeddings;  // K x D
    ag::Var keypoint_features;    // K x D
};

/// Elementwise mean of N shots. The assignment is solved once on the mean
/// cost and every shot's embeddings are gathered with it before averaging.
/// Means are computed as x_1 + sum_n (x_n - x_1) / N, which reproduces x_1
/// bitwise when all shots are identical.
[[nodiscard]] AggregatedSupport nshot_aggregate(std::span<const ShotSupport> shots);

[[nodiscard]] CostMatrix mean_cost(std::span<const CostMatrix> costs);

}  // namespace metapoint
