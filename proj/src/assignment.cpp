// SPDX-License-Identifier: Apache-2.0
#include "metapoint/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "metapoint/losses.hpp"

namespace metapoint {

CostMatrix::CostMatrix(int meta_points, int keypoints)
    : rows_(meta_points), cols_(keypoints), data_(static_cast<std::size_t>(meta_points) * keypoints, 0.0) {}

CostMatrix::CostMatrix(int meta_points, int keypoints, std::vector<double> entries)
    : rows_(meta_points), cols_(keypoints), data_(std::move(entries)) {
    if (data_.size() != static_cast<std::size_t>(rows_) * cols_) {
        throw std::invalid_argument("CostMatrix: entry count does not match shape");
    }
}

double Assignment::total_cost(const CostMatrix& cost) const {
    double t = 0.0;
    for (int k = 0; k < keypoints(); ++k) t += cost.at(delta[k], k);
    return t;
}

bool Assignment::injective() const {
    std::vector<int> sorted = delta;
    std::sort(sorted.begin(), sorted.end());
    return std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end();
}

std::vector<double> Assignment::indicator() const {
    std::vector<double> out(static_cast<std::size_t>(meta_points), 0.0);
    for (int m : delta) out[static_cast<std::size_t>(m)] = 1.0;
    return out;
}

CostMatrix cost_matrix(const MetaPrediction& support_meta, const PointSet& support_gt, const CostOptions& options) {
    if (support_meta.layers.empty()) throw std::invalid_argument("cost_matrix: meta prediction has no layers");
    const int m_count = static_cast<int>(support_meta.last().size());
    const int k_count = static_cast<int>(support_gt.size());
    if (k_count > m_count) throw std::invalid_argument("cost_matrix: more keypoints than meta-points");
    const int total = static_cast<int>(support_meta.layers.size());
    CostMatrix c(m_count, k_count);
    for (int m = 0; m < m_count; ++m) {
        const double v = std::clamp(support_meta.visibility.at(static_cast<std::size_t>(m)), options.visibility_floor, 1.0);
        const double vis_term = -options.alpha * std::log(v);
        for (int k = 0; k < k_count; ++k) {
            double geo = 0.0;
            for (int l = 1; l <= total; ++l) {
                const Point2 p = support_meta.layers[static_cast<std::size_t>(l - 1)][static_cast<std::size_t>(m)];
                const Point2 g = support_gt[static_cast<std::size_t>(k)];
                geo += slacked_deviation(std::fabs(p.x - g.x) + std::fabs(p.y - g.y), l, total, options.slack);
            }
            c.at(m, k) = geo + vis_term;
        }
    }
    return c;
}

Assignment solve_assignment(const CostMatrix& cost) {
    const int n = cost.keypoints();
    const int m = cost.meta_points();
    if (n > m) throw std::invalid_argument("solve_assignment: more keypoints than meta-points");
    for (double e : cost.entries()) {
        if (!std::isfinite(e)) throw std::invalid_argument("solve_assignment: non-finite cost");
    }
    Assignment out;
    out.meta_points = m;
    if (n == 0) return out;

    // Rows are keypoints (1..n), columns meta-points (1..m); index 0 is the
    // virtual source column.
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<double> v(static_cast<std::size_t>(m) + 1, 0.0);
    std::vector<int> row_of(static_cast<std::size_t>(m) + 1, 0);
    std::vector<int> way(static_cast<std::size_t>(m) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        row_of[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(m) + 1, kInf);
        std::vector<char> used(static_cast<std::size_t>(m) + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = row_of[j0];
            double delta = kInf;
            int j1 = 0;
            for (int j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = cost.at(j - 1, i0 - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (row_of[j0] != 0);
        do {
            const int j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    out.delta.assign(static_cast<std::size_t>(n), -1);
    for (int j = 1; j <= m; ++j) {
        if (row_of[j] != 0) out.delta[static_cast<std::size_t>(row_of[j] - 1)] = j - 1;
    }
    return out;
}

CostMatrix mean_cost(std::span<const CostMatrix> costs) {
    if (costs.empty()) throw std::invalid_argument("mean_cost: no shots");
    const CostMatrix& first = costs.front();
    for (const auto& c : costs) {
        if (c.keypoints() != first.keypoints() || c.meta_points() != first.meta_points()) {
            throw std::invalid_argument("mean_cost: shots disagree on cost matrix shape");
        }
    }
    const double n = static_cast<double>(costs.size());
    std::vector<double> out(first.entries().begin(), first.entries().end());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double spread = 0.0;
        for (std::size_t s = 1; s < costs.size(); ++s) spread += costs[s].entries()[i] - first.entries()[i];
        out[i] += spread / n;
    }
    return CostMatrix(first.meta_points(), first.keypoints(), std::move(out));
}

namespace {

ag::Var shifted_mean(std::span<const ag::Var> xs) {
    if (xs.size() == 1) return xs.front();
    ag::Var spread = ag::sub(xs[1], xs[0]);
    for (std::size_t i = 2; i < xs.size(); ++i) spread = ag::add(spread, ag::sub(xs[i], xs[0]));
    return ag::add(xs[0], ag::scale(spread, 1.0 / static_cast<double>(xs.size())));
}

}  // namespace

AggregatedSupport nshot_aggregate(std::span<const ShotSupport> shots) {
    if (shots.empty()) throw std::invalid_argument("nshot_aggregate: need at least one shot");
    const int k = shots.front().cost.keypoints();
    for (const auto& s : shots) {
        if (s.cost.keypoints() != k || s.keypoint_features.rows() != k) {
            throw std::invalid_argument("nshot_aggregate: shots disagree on keypoint count");
        }
    }
    std::vector<CostMatrix> costs;
    for (const auto& s : shots) costs.push_back(s.cost);

    AggregatedSupport out;
    out.cost = mean_cost(costs);
    out.assignment = solve_assignment(out.cost);
    std::vector<ag::Var> embeddings;
    std::vector<ag::Var> features;
    for (const auto& s : shots) {
        embeddings.push_back(ag::gather_rows(s.meta_embeddings, out.assignment.delta));
        features.push_back(s.keypoint_features);
    }
    out.assigned_embeddings = shifted_mean(embeddings);
    out.keypoint_features = shifted_mean(features);
    return out;
}

}  // namespace metapoint
