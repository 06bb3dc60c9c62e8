// SPDX-License-Identifier: Apache-2.0
#include "metapoint/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace metapoint {

PointSet::PointSet(std::vector<Point2> points, std::vector<double> visibilities)
    : points_(std::move(points)), visibilities_(std::move(visibilities)) {
    if (visibilities_->size() != points_.size()) {
        throw std::invalid_argument("PointSet: visibility count differs from point count");
    }
}

std::vector<double> PointSet::flatten() const {
    std::vector<double> out;
    out.reserve(points_.size() * 2);
    for (const auto& p : points_) {
        out.push_back(p.x);
        out.push_back(p.y);
    }
    return out;
}

PointSet PointSet::from_flat(std::span<const double> xy) {
    if (xy.size() % 2 != 0) throw std::invalid_argument("PointSet::from_flat: odd length");
    std::vector<Point2> pts(xy.size() / 2);
    for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = {xy[2 * i], xy[2 * i + 1]};
    return PointSet(std::move(pts));
}

double sigmoid(double z) {
    if (z >= 0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double inverse_sigmoid(double p) {
    if (!std::isfinite(p)) throw std::invalid_argument("inverse_sigmoid: non-finite input");
    const double c = std::clamp(p, kLogitEps, 1.0 - kLogitEps);
    return std::log(c / (1.0 - c));
}

PointSet uniform_grid(int count) {
    if (count <= 0) throw std::invalid_argument("uniform_grid: count must be positive");
    const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(count)) - 1e-12));
    std::vector<Point2> pts;
    pts.reserve(static_cast<std::size_t>(count));
    for (int r = 0; r < side && static_cast<int>(pts.size()) < count; ++r) {
        for (int c = 0; c < side && static_cast<int>(pts.size()) < count; ++c) {
            pts.push_back({(c + 0.5) / side, (r + 0.5) / side});
        }
    }
    return PointSet(std::move(pts));
}

namespace {

// Continuous cell coordinate of a normalized position, clamped to the
// border cell centers. Returns the derivative with respect to the input
// (zero where clamped).
std::pair<double, double> cell_coordinate(double v, int extent) {
    const double u = v * extent - 0.5;
    const double hi = extent - 1;
    if (u <= 0.0) return {0.0, 0.0};
    if (u >= hi) return {hi, 0.0};
    return {u, static_cast<double>(extent)};
}

}  // namespace

BilinearTaps bilinear_taps(int height, int width, double x, double y) {
    BilinearTaps taps;
    const auto [u, du] = cell_coordinate(x, width);
    const auto [v, dv] = cell_coordinate(y, height);
    const int x0 = std::min(static_cast<int>(std::floor(u)), std::max(width - 2, 0));
    const int y0 = std::min(static_cast<int>(std::floor(v)), std::max(height - 2, 0));
    const int x1 = std::min(x0 + 1, width - 1);
    const int y1 = std::min(y0 + 1, height - 1);
    const double fx = u - x0;
    const double fy = v - y0;

    taps.index = {y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1};
    taps.weight = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    taps.dweight_dx = {-(1 - fy) * du, (1 - fy) * du, -fy * du, fy * du};
    taps.dweight_dy = {-(1 - fx) * dv, -fx * dv, (1 - fx) * dv, fx * dv};
    return taps;
}

std::vector<double> bilinear_sample(const FeatureMap& map, Point2 p) {
    return bilinear_sample_with_gradient(map, p).value;
}

SampleWithGradient bilinear_sample_with_gradient(const FeatureMap& map, Point2 p) {
    if (map.height <= 0 || map.width <= 0 || map.channels <= 0) {
        throw std::invalid_argument("bilinear_sample: empty feature map");
    }
    const auto taps = bilinear_taps(map.height, map.width, p.x, p.y);
    const auto c = static_cast<std::size_t>(map.channels);
    SampleWithGradient out{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
    for (int t = 0; t < 4; ++t) {
        const double* src = map.data.data() + static_cast<std::size_t>(taps.index[t]) * c;
        for (std::size_t ch = 0; ch < c; ++ch) {
            out.value[ch] += taps.weight[t] * src[ch];
            out.d_dx[ch] += taps.dweight_dx[t] * src[ch];
            out.d_dy[ch] += taps.dweight_dy[t] * src[ch];
        }
    }
    return out;
}

}  // namespace metapoint
