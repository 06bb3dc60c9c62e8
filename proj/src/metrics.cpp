// SPDX-License-Identifier: Apache-2.0
#include "metapoint/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace metapoint {

double BoundingBox::longest_side() const { return std::max(x1 - x0, y1 - y0); }

std::optional<double> pck(const PointSet& pred, const PointSet& gt, std::span<const bool> mask, double threshold,
                          double normalizer) {
    if (!(normalizer > 0.0)) throw std::invalid_argument("pck: normalizer must be positive");
    if (pred.size() != gt.size() || mask.size() != gt.size()) throw std::invalid_argument("pck: length mismatch");
    int valid = 0;
    int correct = 0;
    for (std::size_t k = 0; k < gt.size(); ++k) {
        if (!mask[k]) continue;
        ++valid;
        const double d = std::hypot(pred[k].x - gt[k].x, pred[k].y - gt[k].y);
        if (d <= threshold * normalizer) ++correct;
    }
    if (valid == 0) return std::nullopt;
    return static_cast<double>(correct) / valid;
}

std::optional<double> mpck(const PointSet& pred, const PointSet& gt, std::span<const bool> mask, double normalizer) {
    double total = 0.0;
    for (double t : kMpckThresholds) {
        const auto v = pck(pred, gt, mask, t, normalizer);
        if (!v) return std::nullopt;
        total += *v;
    }
    return total / static_cast<double>(kMpckThresholds.size());
}

PckAccumulator::PckAccumulator(std::vector<double> thresholds)
    : thresholds_(std::move(thresholds)), sums_(thresholds_.size(), 0.0) {}

bool PckAccumulator::add(const PointSet& pred, const PointSet& gt, std::span<const bool> mask, double normalizer) {
    std::vector<double> vals;
    for (double t : thresholds_) {
        const auto v = pck(pred, gt, mask, t, normalizer);
        if (!v) {
            ++skipped_;
            return false;
        }
        vals.push_back(*v);
    }
    for (std::size_t i = 0; i < vals.size(); ++i) sums_[i] += vals[i];
    ++episodes_;
    return true;
}

std::vector<double> PckAccumulator::means() const {
    std::vector<double> out(sums_.size(), 0.0);
    if (episodes_ == 0) return out;
    for (std::size_t i = 0; i < sums_.size(); ++i) out[i] = sums_[i] / episodes_;
    return out;
}

double PckAccumulator::mean_of_thresholds(std::span<const double> subset) const {
    const auto m = means();
    double total = 0.0;
    for (double t : subset) {
        auto it = std::find_if(thresholds_.begin(), thresholds_.end(), [t](double x) { return std::fabs(x - t) < 1e-12; });
        if (it == thresholds_.end()) throw std::invalid_argument("PckAccumulator: threshold not tracked");
        total += m[static_cast<std::size_t>(it - thresholds_.begin())];
    }
    return total / static_cast<double>(subset.size());
}

void PckAccumulator::merge(const PckAccumulator& other) {
    if (other.thresholds_ != thresholds_) throw std::invalid_argument("PckAccumulator: threshold lists differ");
    for (std::size_t i = 0; i < sums_.size(); ++i) sums_[i] += other.sums_[i];
    episodes_ += other.episodes_;
    skipped_ += other.skipped_;
}

}  // namespace metapoint
