// SPDX-License-Identifier: Apache-2.0
#include "metapoint/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "metapoint/assignment.hpp"

namespace metapoint {

double slacked_deviation(double l1_deviation, int layer, int total_layers, double slack) {
    if (layer < 1 || layer > total_layers) throw std::invalid_argument("slacked_l1: layer out of range");
    return std::max(l1_deviation - slack * (total_layers - layer), 0.0);
}

double slacked_l1(const PointSet& pred, const PointSet& gt, int layer, int total_layers, double slack) {
    if (pred.size() != gt.size()) throw std::invalid_argument("slacked_l1: length mismatch");
    double total = 0.0;
    for (std::size_t k = 0; k < gt.size(); ++k) {
        const double d = std::fabs(pred[k].x - gt[k].x) + std::fabs(pred[k].y - gt[k].y);
        total += slacked_deviation(d, layer, total_layers, slack);
    }
    return total;
}

ag::Var slacked_l1(const ag::Var& pred, const PointSet& gt, std::span<const bool> mask, int layer, int total_layers,
                   double slack) {
    if (pred.rows() != static_cast<int>(gt.size()) || pred.cols() != 2 || mask.size() != gt.size()) {
        throw std::invalid_argument("slacked_l1: length mismatch");
    }
    if (layer < 1 || layer > total_layers) throw std::invalid_argument("slacked_l1: layer out of range");
    std::vector<int> keep;
    for (std::size_t k = 0; k < mask.size(); ++k) {
        if (mask[k]) keep.push_back(static_cast<int>(k));
    }
    if (keep.empty()) return ag::Var::scalar(0.0);
    std::vector<double> target;
    for (int k : keep) {
        target.push_back(gt[static_cast<std::size_t>(k)].x);
        target.push_back(gt[static_cast<std::size_t>(k)].y);
    }
    const ag::Var sel = ag::gather_rows(pred, keep);
    const ag::Var dev = ag::sum_cols(ag::abs(ag::sub(sel, ag::Var::constant(sel.rows(), 2, std::move(target)))));
    return ag::sum(ag::relu(ag::add_scalar(dev, -slack * (total_layers - layer))));
}

ag::Var regression_loss(std::span<const ag::Var> meta_layers, std::span<const ag::Var> refined_layers,
                        const PointSet& gt, std::span<const bool> mask, double slack) {
    if (meta_layers.size() != refined_layers.size() || meta_layers.empty()) {
        throw std::invalid_argument("regression_loss: both streams need the same non-zero layer count");
    }
    const int total = static_cast<int>(meta_layers.size());
    ag::Var loss = ag::Var::scalar(0.0);
    for (int l = 1; l <= total; ++l) {
        loss = ag::add(loss, slacked_l1(meta_layers[static_cast<std::size_t>(l - 1)], gt, mask, l, total, slack));
        loss = ag::add(loss, slacked_l1(refined_layers[static_cast<std::size_t>(l - 1)], gt, mask, l, total, slack));
    }
    return loss;
}

ag::Var visibility_loss(const ag::Var& visibility, const Assignment& assignment) {
    if (visibility.rows() != assignment.meta_points || visibility.cols() != 1) {
        throw std::invalid_argument("visibility_loss: expected M x 1 visibilities");
    }
    return ag::bce_mean(visibility, assignment.indicator(), kProbabilityClamp);
}

}  // namespace metapoint
