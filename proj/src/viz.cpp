// SPDX-License-Identifier: Apache-2.0
#include "metapoint/viz.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace metapoint::viz {

namespace {

constexpr Color kGreen{0.1, 0.9, 0.2};
constexpr Color kRed{0.95, 0.1, 0.1};
constexpr Color kYellow{1.0, 0.85, 0.1};
constexpr Color kBlue{0.15, 0.45, 1.0};
constexpr Color kWhite{1.0, 1.0, 1.0};

void put(Image& c, int x, int y, const Color& color) {
    if (x < 0 || y < 0 || x >= c.width || y >= c.height) return;
    for (int ch = 0; ch < 3; ++ch) c.at(y, x, ch) = color[static_cast<std::size_t>(ch)];
}

}  // namespace

Image upscale(const Image& image, int factor) {
    if (factor < 1) throw std::invalid_argument("upscale: factor must be >= 1");
    Image out(image.height * factor, image.width * factor);
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = image.at(y / factor, x / factor, c);
        }
    }
    return out;
}

Image hstack(std::span<const Image> images) {
    if (images.empty()) return {};
    const int h = images.front().height;
    int w = 0;
    for (const auto& im : images) {
        if (im.height != h) throw std::invalid_argument("hstack: heights differ");
        w += im.width;
    }
    Image out(h, w);
    int x0 = 0;
    for (const auto& im : images) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < im.width; ++x) {
                for (int c = 0; c < 3; ++c) out.at(y, x0 + x, c) = im.at(y, x, c);
            }
        }
        x0 += im.width;
    }
    return out;
}

void draw_disc(Image& canvas, double cx, double cy, double radius, const Color& color) {
    const int x0 = static_cast<int>(std::floor(cx - radius));
    const int x1 = static_cast<int>(std::ceil(cx + radius));
    const int y0 = static_cast<int>(std::floor(cy - radius));
    const int y1 = static_cast<int>(std::ceil(cy + radius));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double dx = x + 0.5 - cx;
            const double dy = y + 0.5 - cy;
            if (dx * dx + dy * dy <= radius * radius) put(canvas, x, y, color);
        }
    }
}

void draw_ring(Image& canvas, double cx, double cy, double radius, double thickness, const Color& color) {
    const double outer = radius + thickness;
    const int x0 = static_cast<int>(std::floor(cx - outer));
    const int x1 = static_cast<int>(std::ceil(cx + outer));
    const int y0 = static_cast<int>(std::floor(cy - outer));
    const int y1 = static_cast<int>(std::ceil(cy + outer));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
            if (d >= radius && d <= outer) put(canvas, x, y, color);
        }
    }
}

void draw_line(Image& canvas, double x0, double y0, double x1, double y1, const Color& color) {
    const int n = static_cast<int>(std::ceil(std::max(std::fabs(x1 - x0), std::fabs(y1 - y0)))) + 1;
    for (int i = 0; i <= n; ++i) {
        const double t = static_cast<double>(i) / n;
        put(canvas, static_cast<int>(std::floor(x0 + t * (x1 - x0))), static_cast<int>(std::floor(y0 + t * (y1 - y0))), color);
    }
}

void draw_cross(Image& canvas, double cx, double cy, double half, const Color& color) {
    draw_line(canvas, cx - half, cy - half, cx + half, cy + half, color);
    draw_line(canvas, cx - half, cy + half, cx + half, cy - half, color);
}

Image episode_figure(const MetaPointModel& model, const EpisodeView& episode, int scale) {
    ag::NoGradGuard guard;
    const ForwardResult r = model.forward(episode);
    const auto& query = episode.query;
    const auto& support = episode.supports.front();
    const double w = query.image->width * scale;
    const double h = query.image->height * scale;

    Image left = upscale(*support.image, scale);
    for (std::size_t k = 0; k < support.keypoints.size(); ++k) {
        if (!support.mask[k]) continue;
        draw_disc(left, support.keypoints[k].x * w, support.keypoints[k].y * h, 1.5 * scale / 2.0, kGreen);
    }

    Image middle = upscale(*query.image, scale);
    const MetaPrediction meta = MetaPrediction::from(r.query_meta);
    std::vector<bool> assigned(meta.visibility.size(), false);
    for (int m : r.support.assignment.delta) assigned[static_cast<std::size_t>(m)] = true;
    for (std::size_t m = 0; m < meta.visibility.size(); ++m) {
        const Point2 p = meta.last()[m];
        const double radius = std::max(0.5, 2.0 * scale * meta.visibility[m] / 2.0);
        draw_disc(middle, p.x * w, p.y * h, radius, kYellow);
        if (assigned[m]) draw_ring(middle, p.x * w, p.y * h, radius + 0.5, 1.5, kRed);
    }

    Image right = upscale(*query.image, scale);
    const PointSet refined = r.refined_prediction(static_cast<int>(query.keypoints.size()));
    for (int k : r.active) {
        const Point2 g = query.keypoints[static_cast<std::size_t>(k)];
        const Point2 p = refined[static_cast<std::size_t>(k)];
        if (query.mask[static_cast<std::size_t>(k)]) {
            draw_line(right, g.x * w, g.y * h, p.x * w, p.y * h, kWhite);
            draw_cross(right, g.x * w, g.y * h, scale / 2.0 + 1, kGreen);
        }
        draw_disc(right, p.x * w, p.y * h, scale / 2.0 + 0.5, kBlue);
    }
    const Image panels[] = {left, middle, right};
    return hstack(panels);
}

Image tracking_figure(std::span<const Image* const> images, std::span<const Point2> points,
                      std::span<const double> visibilities, int scale, std::vector<bool>* drawn) {
    if (images.size() != points.size() || images.size() != visibilities.size()) {
        throw std::invalid_argument("tracking_figure: inputs disagree in length");
    }
    if (images.empty()) throw std::invalid_argument("tracking_figure: no images");
    std::vector<Image> tiles;
    if (drawn != nullptr) drawn->clear();
    for (std::size_t i = 0; i < images.size(); ++i) {
        Image tile = upscale(*images[i], scale);
        const bool show = visibilities[i] > kTrackingVisibility;
        if (show) {
            const double x = points[i].x * tile.width;
            const double y = points[i].y * tile.height;
            draw_disc(tile, x, y, scale, kYellow);
            draw_ring(tile, x, y, scale, 1.0, kRed);
        }
        if (drawn != nullptr) drawn->push_back(show);
        tiles.push_back(std::move(tile));
    }
    return hstack(tiles);
}

Image tracking_figure(const MetaPointModel& model, std::span<const Image* const> images, int meta_index, int scale,
                      std::vector<bool>* drawn) {
    if (meta_index < 0 || meta_index >= model.config().num_meta_points) {
        throw std::out_of_range("tracking_figure: meta index out of range");
    }
    ag::NoGradGuard guard;
    std::vector<Point2> points;
    std::vector<double> vis;
    for (const Image* im : images) {
        const MetaPrediction p = MetaPrediction::from(model.predict_meta(*im));
        points.push_back(p.last()[static_cast<std::size_t>(meta_index)]);
        vis.push_back(p.visibility[static_cast<std::size_t>(meta_index)]);
    }
    return tracking_figure(images, points, vis, scale, drawn);
}

}  // namespace metapoint::viz
