// SPDX-License-Identifier: Apache-2.0
#pragma once

// Normalized-coordinate primitives. Convention: x is horizontal, y is
// vertical, origin at the top-left corner, both divided by image extent.

#include <array>
#include <optional>
#include <span>
#include <vector>

namespace metapoint {

inline constexpr double kLogitEps = 1e-5;

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point2&, const Point2&) = default;
};

class PointSet {
public:
    PointSet() = default;
    explicit PointSet(std::vector<Point2> points) : points_(std::move(points)) {}
    PointSet(std::vector<Point2> points, std::vector<double> visibilities);

    [[nodiscard]] std::size_t size() const { return points_.size(); }
    [[nodiscard]] const Point2& operator[](std::size_t i) const { return points_[i]; }
    [[nodiscard]] Point2& operator[](std::size_t i) { return points_[i]; }
    [[nodiscard]] std::span<const Point2> points() const { return points_; }
    [[nodiscard]] bool has_visibilities() const { return visibilities_.has_value(); }
    [[nodiscard]] const std::vector<double>& visibilities() const { return visibilities_.value(); }

    /// Row-major K x 2 flattening.
    [[nodiscard]] std::vector<double> flatten() const;
    static PointSet from_flat(std::span<const double> xy);

private:
    std::vector<Point2> points_;
    std::optional<std::vector<double>> visibilities_;
};

[[nodiscard]] double sigmoid(double z);
/// Logit with the input clamped into [kLogitEps, 1 - kLogitEps]. Throws
/// std::invalid_argument on non-finite input.
[[nodiscard]] double inverse_sigmoid(double p);

/// sqrt(M) x sqrt(M) cell-center grid, row-major. Non-square M fills a
/// ceil(sqrt(M)) grid row-major and keeps the first M points.
[[nodiscard]] PointSet uniform_grid(int count);

/// Dense H x W x C feature map, row-major.
struct FeatureMap {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    FeatureMap() = default;
    FeatureMap(int h, int w, int c) : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, 0.0) {}

    [[nodiscard]] double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    [[nodiscard]] double at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
};

/// Four bilinear taps for a normalized point on an H x W grid, plus the
/// derivative of each tap weight with respect to the normalized x and y.
/// Cell (i, j) has its center at ((j + 0.5) / W, (i + 0.5) / H); points
/// outside the border are clamped to it.
struct BilinearTaps {
    std::array<int, 4> index{};  // flat y*W + x
    std::array<double, 4> weight{};
    std::array<double, 4> dweight_dx{};
    std::array<double, 4> dweight_dy{};
};

[[nodiscard]] BilinearTaps bilinear_taps(int height, int width, double x, double y);

[[nodiscard]] std::vector<double> bilinear_sample(const FeatureMap& map, Point2 p);

struct SampleWithGradient {
    std::vector<double> value;
    std::vector<double> d_dx;
    std::vector<double> d_dy;
};

[[nodiscard]] SampleWithGradient bilinear_sample_with_gradient(const FeatureMap& map, Point2 p);

}  // namespace metapoint
