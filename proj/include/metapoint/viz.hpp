// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include "metapoint/image.hpp"
#include "metapoint/model.hpp"

namespace metapoint::viz {

using Color = std::array<double, 3>;

inline constexpr double kTrackingVisibility = 0.5;

[[nodiscard]] Image upscale(const Image& image, int factor);
/// Side-by-side concatenation; heights must agree.
[[nodiscard]] Image hstack(std::span<const Image> images);

// Pixel-space drawing helpers; everything is clipped to the canvas.
void draw_disc(Image& canvas, double cx, double cy, double radius, const Color& color);
void draw_ring(Image& canvas, double cx, double cy, double radius, double thickness, const Color& color);
void draw_line(Image& canvas, double x0, double y0, double x1, double y1, const Color& color);
void draw_cross(Image& canvas, double cx, double cy, double half, const Color& color);

/// Three panels: support with its keypoints; query with every meta-point
/// (radius grows with visibility, assigned ones ringed in red); query with
/// ground truth and refined keypoints joined by error lines.
[[nodiscard]] Image episode_figure(const MetaPointModel& model, const EpisodeView& episode, int scale = 4);

/// One tile per image showing the tracked meta-point, drawn only where its
/// visibility exceeds 0.5. `drawn`, if given, receives the per-tile decision.
[[nodiscard]] Image tracking_figure(std::span<const Image* const> images, std::span<const Point2> points,
                                    std::span<const double> visibilities, int scale = 4,
                                    std::vector<bool>* drawn = nullptr);

/// Runs the meta stage on each image and tracks meta-point `meta_index`.
[[nodiscard]] Image tracking_figure(const MetaPointModel& model, std::span<const Image* const> images, int meta_index,
                                    int scale = 4, std::vector<bool>* drawn = nullptr);

}  // namespace metapoint::viz
