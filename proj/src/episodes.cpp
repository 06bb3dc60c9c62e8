// SPDX-License-Identifier: Apache-2.0
#include "metapoint/episodes.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace metapoint {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw std::invalid_argument("unknown split '" + s + "'");
}

const std::vector<std::string>& shape_families() {
    static const std::vector<std::string> families{"polygons", "stars", "creatures", "furniture"};
    return families;
}

const ClassRecord& Dataset::class_record(int class_id) const {
    for (const auto& c : classes) {
        if (c.class_id == class_id) return c;
    }
    throw std::out_of_range("unknown class id " + std::to_string(class_id));
}

std::vector<int> Dataset::class_ids(Split split) const {
    std::vector<int> out;
    for (const auto& c : classes) {
        if (c.split == split) out.push_back(c.class_id);
    }
    return out;
}

std::vector<int> Dataset::sample_indices(int class_id) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].class_id == class_id) out.push_back(static_cast<int>(i));
    }
    return out;
}

namespace {

using Polygon = std::vector<Point2>;
using Rgb = std::array<double, 3>;

struct Part {
    Polygon outline;
    double shade = 1.0;  // multiplier on the class fill color
};

// Canonical shape in [-1, 1]^2 with named anchors.
struct ShapeTemplate {
    std::vector<Part> parts;
    std::vector<Point2> anchors;
    std::vector<std::string> names;
};

struct ClassStyle {
    ShapeTemplate shape;
    Rgb fill{};
    Rgb background{};
    double base_rotation = 0.0;
    double rotation_range = 0.0;
    double aspect = 1.0;
    double scale_lo = 0.25;
    double scale_hi = 0.38;
};

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Polygon ellipse(Point2 c, double rx, double ry, double angle, int segments = 24) {
    Polygon out;
    const double ca = std::cos(angle);
    const double sa = std::sin(angle);
    for (int i = 0; i < segments; ++i) {
        const double t = 2.0 * std::numbers::pi * i / segments;
        const double ex = rx * std::cos(t);
        const double ey = ry * std::sin(t);
        out.push_back({c.x + ca * ex - sa * ey, c.y + sa * ex + ca * ey});
    }
    return out;
}

Polygon rect(double x0, double y0, double x1, double y1) { return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}; }

ShapeTemplate polygon_template(std::mt19937_64& rng) {
    const int n = uniform_int(rng, 3, 8);
    const double phase = uniform(rng, 0.0, std::numbers::pi / n);
    ShapeTemplate t;
    Polygon poly;
    for (int i = 0; i < n; ++i) {
        const double a = -std::numbers::pi / 2 + phase + 2.0 * std::numbers::pi * i / n;
        poly.push_back({std::cos(a), std::sin(a)});
        t.anchors.push_back(poly.back());
        t.names.push_back("vertex_" + std::to_string(i));
    }
    t.parts.push_back({poly, 1.0});
    t.anchors.push_back({0.0, 0.0});
    t.names.emplace_back("center");
    return t;
}

ShapeTemplate star_template(std::mt19937_64& rng) {
    const int n = uniform_int(rng, 4, 6);
    const double inner = uniform(rng, 0.38, 0.55);
    const double phase = uniform(rng, 0.0, std::numbers::pi / n);
    ShapeTemplate t;
    Polygon poly;
    std::vector<Point2> tips;
    std::vector<Point2> inners;
    for (int i = 0; i < 2 * n; ++i) {
        const double a = -std::numbers::pi / 2 + phase + std::numbers::pi * i / n;
        const double r = (i % 2 == 0) ? 1.0 : inner;
        poly.push_back({r * std::cos(a), r * std::sin(a)});
        (i % 2 == 0 ? tips : inners).push_back(poly.back());
    }
    t.parts.push_back({poly, 1.0});
    for (std::size_t i = 0; i < tips.size(); ++i) {
        t.anchors.push_back(tips[i]);
        t.names.push_back("tip_" + std::to_string(i));
    }
    for (std::size_t i = 0; i < inners.size(); ++i) {
        t.anchors.push_back(inners[i]);
        t.names.push_back("inner_" + std::to_string(i));
    }
    return t;
}

ShapeTemplate creature_template(std::mt19937_64& rng) {
    const int segments = uniform_int(rng, 2, 4);
    const double bend = uniform(rng, -0.35, 0.35);
    const double thickness = uniform(rng, 0.28, 0.42);
    ShapeTemplate t;
    const double seg_len = 2.0 / segments;
    std::vector<Point2> centers;
    for (int i = 0; i < segments; ++i) {
        const double u = -1.0 + seg_len * (i + 0.5);
        centers.push_back({u, bend * (u * u - 0.5)});
    }
    for (int i = 0; i < segments; ++i) {
        const double taper = 1.0 - 0.18 * i;
        const Point2 c = centers[static_cast<std::size_t>(i)];
        const double slope = 2.0 * bend * c.x;
        t.parts.push_back({ellipse(c, 0.62 * seg_len, thickness * taper, std::atan(slope)), i == 0 ? 0.8 : 1.0});
    }
    const double head_slope = std::atan(2.0 * bend * centers.front().x);
    const double tail_slope = std::atan(2.0 * bend * centers.back().x);
    const Point2 head{centers.front().x - 0.62 * seg_len * std::cos(head_slope),
                      centers.front().y - 0.62 * seg_len * std::sin(head_slope)};
    const Point2 tail{centers.back().x + 0.62 * seg_len * std::cos(tail_slope),
                      centers.back().y + 0.62 * seg_len * std::sin(tail_slope)};
    t.anchors.push_back(head);
    t.names.emplace_back("head");
    for (int i = 0; i < segments; ++i) {
        t.anchors.push_back(centers[static_cast<std::size_t>(i)]);
        t.names.push_back("segment_" + std::to_string(i));
    }
    t.anchors.push_back(tail);
    t.names.emplace_back("tail");
    return t;
}

ShapeTemplate furniture_template(std::mt19937_64& rng) {
    const int legs = uniform_int(rng, 2, 3);
    const bool backrest = uniform_int(rng, 0, 1) == 1;
    const double slab_top = uniform(rng, -0.35, -0.05);
    const double slab_h = uniform(rng, 0.15, 0.3);
    const double leg_w = uniform(rng, 0.1, 0.18);
    const double foot = 1.0;
    ShapeTemplate t;
    t.parts.push_back({rect(-1.0, slab_top, 1.0, slab_top + slab_h), 1.0});
    t.anchors = {{-1.0, slab_top}, {1.0, slab_top}, {1.0, slab_top + slab_h}, {-1.0, slab_top + slab_h}};
    t.names = {"slab_top_left", "slab_top_right", "slab_bottom_right", "slab_bottom_left"};
    for (int i = 0; i < legs; ++i) {
        const double cx = legs == 1 ? 0.0 : -0.9 + 1.8 * i / (legs - 1);
        const double x0 = std::clamp(cx - leg_w / 2, -1.0, 1.0 - leg_w);
        t.parts.push_back({rect(x0, slab_top + slab_h, x0 + leg_w, foot), 0.75});
        t.anchors.push_back({x0 + leg_w / 2, foot});
        t.names.push_back("leg_" + std::to_string(i) + "_foot");
    }
    if (backrest) {
        t.parts.push_back({rect(-1.0, -1.0, -1.0 + leg_w, slab_top), 0.75});
        t.anchors.push_back({-1.0 + leg_w / 2, -1.0});
        t.names.emplace_back("back_top");
    }
    return t;
}

// Recenters and rescales so the template spans at most [-1, 1].
void normalize_template(ShapeTemplate& t) {
    double lo_x = 1e9, lo_y = 1e9, hi_x = -1e9, hi_y = -1e9;
    for (const auto& part : t.parts) {
        for (const auto& p : part.outline) {
            lo_x = std::min(lo_x, p.x);
            hi_x = std::max(hi_x, p.x);
            lo_y = std::min(lo_y, p.y);
            hi_y = std::max(hi_y, p.y);
        }
    }
    const double cx = (lo_x + hi_x) / 2;
    const double cy = (lo_y + hi_y) / 2;
    const double half = std::max(hi_x - lo_x, hi_y - lo_y) / 2;
    auto fix = [&](Point2& p) { p = {(p.x - cx) / half, (p.y - cy) / half}; };
    for (auto& part : t.parts) std::for_each(part.outline.begin(), part.outline.end(), fix);
    std::for_each(t.anchors.begin(), t.anchors.end(), fix);
}

Rgb random_color(std::mt19937_64& rng) { return {uniform(rng, 0.1, 0.95), uniform(rng, 0.1, 0.95), uniform(rng, 0.1, 0.95)}; }

double color_distance(const Rgb& a, const Rgb& b) {
    return std::fabs(a[0] - b[0]) + std::fabs(a[1] - b[1]) + std::fabs(a[2] - b[2]);
}

ClassStyle make_class(const std::string& family, std::mt19937_64& rng) {
    ClassStyle style;
    if (family == "polygons") style.shape = polygon_template(rng);
    else if (family == "stars") style.shape = star_template(rng);
    else if (family == "creatures") style.shape = creature_template(rng);
    else style.shape = furniture_template(rng);
    normalize_template(style.shape);
    style.fill = random_color(rng);
    do {
        style.background = random_color(rng);
    } while (color_distance(style.fill, style.background) < 0.9);
    style.base_rotation = uniform(rng, -0.3, 0.3);
    style.rotation_range = uniform(rng, 0.05, 0.2);
    style.aspect = uniform(rng, 0.8, 1.2);
    return style;
}

bool inside(const Polygon& poly, double x, double y) {
    bool in = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const Point2 a = poly[i];
        const Point2 b = poly[j];
        if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) in = !in;
    }
    return in;
}

double round6(double v) { return std::round(v * 1e6) / 1e6; }

Sample render_sample(const ClassStyle& style, int class_id, int sample_id, int size, double occlusion_rate,
                     double color_jitter, std::mt19937_64& rng) {
    const double theta = style.base_rotation + uniform(rng, -style.rotation_range, style.rotation_range);
    const double aspect = style.aspect * uniform(rng, 0.92, 1.08);
    const double radius = uniform(rng, style.scale_lo, style.scale_hi);
    const double ct = std::cos(theta);
    const double st = std::sin(theta);
    auto place = [&](Point2 p) {
        const double x = p.x * aspect * radius;
        const double y = p.y * radius / aspect;
        return Point2{ct * x - st * y, st * x + ct * y};
    };

    std::vector<Part> parts = style.shape.parts;
    double lo_x = 1e9, lo_y = 1e9, hi_x = -1e9, hi_y = -1e9;
    for (auto& part : parts) {
        for (auto& p : part.outline) {
            p = place(p);
            lo_x = std::min(lo_x, p.x);
            hi_x = std::max(hi_x, p.x);
            lo_y = std::min(lo_y, p.y);
            hi_y = std::max(hi_y, p.y);
        }
    }
    constexpr double kMargin = 0.03;
    const double tx = uniform(rng, kMargin - lo_x, std::max(kMargin - lo_x, 1.0 - kMargin - hi_x));
    const double ty = uniform(rng, kMargin - lo_y, std::max(kMargin - lo_y, 1.0 - kMargin - hi_y));
    for (auto& part : parts) {
        for (auto& p : part.outline) p = {p.x + tx, p.y + ty};
    }

    Rgb fill = style.fill;
    Rgb bg = style.background;
    do {
        for (int c = 0; c < 3; ++c) {
            fill[c] = std::clamp(style.fill[c] + uniform(rng, -color_jitter, color_jitter), 0.0, 1.0);
            bg[c] = std::clamp(style.background[c] + uniform(rng, -color_jitter, color_jitter), 0.0, 1.0);
        }
    } while (color_distance(fill, bg) < 0.6);

    Image img(size, size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = std::clamp(bg[c] + uniform(rng, -0.05, 0.05), 0.0, 1.0);
        }
    }
    // 2x2 supersampled coverage, later parts drawn over earlier ones.
    for (const auto& part : parts) {
        double px0 = 1e9, py0 = 1e9, px1 = -1e9, py1 = -1e9;
        for (const auto& p : part.outline) {
            px0 = std::min(px0, p.x);
            px1 = std::max(px1, p.x);
            py0 = std::min(py0, p.y);
            py1 = std::max(py1, p.y);
        }
        const int x_lo = std::max(0, static_cast<int>(std::floor(px0 * size)));
        const int x_hi = std::min(size - 1, static_cast<int>(std::ceil(px1 * size)));
        const int y_lo = std::max(0, static_cast<int>(std::floor(py0 * size)));
        const int y_hi = std::min(size - 1, static_cast<int>(std::ceil(py1 * size)));
        for (int y = y_lo; y <= y_hi; ++y) {
            for (int x = x_lo; x <= x_hi; ++x) {
                int hits = 0;
                for (int sy = 0; sy < 2; ++sy) {
                    for (int sx = 0; sx < 2; ++sx) {
                        if (inside(part.outline, (x + 0.25 + 0.5 * sx) / size, (y + 0.25 + 0.5 * sy) / size)) ++hits;
                    }
                }
                if (hits == 0) continue;
                const double a = hits / 4.0;
                for (int c = 0; c < 3; ++c) {
                    img.at(y, x, c) = (1 - a) * img.at(y, x, c) + a * std::clamp(fill[c] * part.shade, 0.0, 1.0);
                }
            }
        }
    }

    Sample s;
    s.sample_id = sample_id;
    s.class_id = class_id;
    std::vector<Point2> kps;
    for (const auto& a : style.shape.anchors) {
        const Point2 p = place(a);
        kps.push_back({round6(std::clamp(p.x + tx, 0.0, 1.0)), round6(std::clamp(p.y + ty, 0.0, 1.0))});
    }
    s.kp_mask.assign(kps.size(), true);

    // Occluders: background-textured squares hiding the keypoints under them.
    constexpr double kOccluderHalf = 0.06;
    for (std::size_t k = 0; k < kps.size(); ++k) {
        if (uniform(rng, 0.0, 1.0) >= occlusion_rate) continue;
        const Point2 c = kps[k];
        const int x0 = std::max(0, static_cast<int>(std::floor((c.x - kOccluderHalf) * size)));
        const int x1 = std::min(size - 1, static_cast<int>(std::floor((c.x + kOccluderHalf) * size)));
        const int y0 = std::max(0, static_cast<int>(std::floor((c.y - kOccluderHalf) * size)));
        const int y1 = std::min(size - 1, static_cast<int>(std::floor((c.y + kOccluderHalf) * size)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = std::clamp(bg[ch] + uniform(rng, -0.05, 0.05), 0.0, 1.0);
            }
        }
        for (std::size_t j = 0; j < kps.size(); ++j) {
            const int px = std::min(size - 1, static_cast<int>(kps[j].x * size));
            const int py = std::min(size - 1, static_cast<int>(kps[j].y * size));
            if (px >= x0 && px <= x1 && py >= y0 && py <= y1) s.kp_mask[j] = false;
        }
    }
    quantize_8bit(img);
    s.image = std::move(img);
    s.keypoints = PointSet(std::move(kps));
    s.bbox = {round6(std::clamp(lo_x + tx, 0.0, 1.0)), round6(std::clamp(lo_y + ty, 0.0, 1.0)),
              round6(std::clamp(hi_x + tx, 0.0, 1.0)), round6(std::clamp(hi_y + ty, 0.0, 1.0))};
    return s;
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

Dataset generate_dataset(const GenerateSpec& spec) {
    if (spec.classes < 7) throw std::invalid_argument("generate_dataset: need at least 7 classes for a 70:10:20 split");
    if (spec.per_class < 1) throw std::invalid_argument("generate_dataset: per_class must be positive");
    if (spec.image_size < 16 || spec.image_size % 16 != 0) {
        throw std::invalid_argument("generate_dataset: image size must be a positive multiple of 16");
    }
    if (spec.occlusion_rate < 0.0 || spec.occlusion_rate > 1.0) {
        throw std::invalid_argument("generate_dataset: occlusion rate must be in [0, 1]");
    }
    Dataset ds;
    ds.image_size = spec.image_size;
    ds.seed = spec.seed;

    std::vector<int> order(static_cast<std::size_t>(spec.classes));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 split_rng(mix(spec.seed, 0xC1A55));
    std::shuffle(order.begin(), order.end(), split_rng);
    const int n_train = static_cast<int>(std::lround(0.7 * spec.classes));
    const int n_val = std::max(1, static_cast<int>(std::lround(0.1 * spec.classes)));
    std::vector<Split> split_of(static_cast<std::size_t>(spec.classes), Split::Test);
    for (int i = 0; i < spec.classes; ++i) {
        split_of[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] =
            i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);
    }

    const auto& families = shape_families();
    for (int c = 0; c < spec.classes; ++c) {
        std::mt19937_64 rng(mix(spec.seed, static_cast<std::uint64_t>(c) + 1));
        const std::string family = families[static_cast<std::size_t>(c) % families.size()];
        const ClassStyle style = make_class(family, rng);
        ClassRecord rec;
        rec.class_id = c;
        rec.family = family;
        rec.keypoint_count = static_cast<int>(style.shape.anchors.size());
        rec.split = split_of[static_cast<std::size_t>(c)];
        rec.keypoint_names = style.shape.names;
        ds.classes.push_back(rec);
        for (int i = 0; i < spec.per_class; ++i) {
            ds.samples.push_back(render_sample(style, c, c * spec.per_class + i, spec.image_size, spec.occlusion_rate,
                                             spec.color_jitter, rng));
        }
    }
    return ds;
}

namespace {

std::string image_relpath(const Sample& s) {
    return "images/" + std::to_string(s.class_id) + "/" + std::to_string(s.sample_id) + ".png";
}

}  // namespace

std::string manifest_json(const Dataset& ds) {
    json j;
    j["schema_version"] = ds.schema_version;
    j["image_size"] = {{"height", ds.image_size}, {"width", ds.image_size}};
    j["seed"] = ds.seed;
    json classes = json::array();
    for (const auto& c : ds.classes) {
        classes.push_back({{"class_id", c.class_id},
                           {"family", c.family},
                           {"K", c.keypoint_count},
                           {"split", to_string(c.split)},
                           {"keypoint_names", c.keypoint_names}});
    }
    j["classes"] = classes;
    json samples = json::array();
    for (const auto& s : ds.samples) {
        json kps = json::array();
        for (const auto& p : s.keypoints.points()) kps.push_back({round6(p.x), round6(p.y)});
        json mask = json::array();
        for (bool b : s.kp_mask) mask.push_back(b ? 1 : 0);
        samples.push_back({{"sample_id", s.sample_id},
                           {"class_id", s.class_id},
                           {"image", image_relpath(s)},
                           {"keypoints", kps},
                           {"kp_mask", mask},
                           {"bbox", {round6(s.bbox.x0), round6(s.bbox.y0), round6(s.bbox.x1), round6(s.bbox.y1)}}});
    }
    j["samples"] = samples;
    return j.dump(1) + "\n";
}

void write_dataset(const Dataset& ds, const fs::path& root) {
    std::error_code ec;
    fs::create_directories(root / "images", ec);
    if (ec) throw std::runtime_error("cannot create " + (root / "images").string() + ": " + ec.message());
    for (const auto& c : ds.classes) {
        fs::create_directories(root / "images" / std::to_string(c.class_id), ec);
        if (ec) throw std::runtime_error("cannot create image directory: " + ec.message());
    }
    for (const auto& s : ds.samples) write_png(root / image_relpath(s), s.image);
    std::ofstream out(root / "manifest.json", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (root / "manifest.json").string());
    out << manifest_json(ds);
    if (!out) throw std::runtime_error("failed writing manifest");
}

Dataset load_dataset(const fs::path& root) {
    std::ifstream in(root / "manifest.json");
    if (!in) throw std::runtime_error("cannot open " + (root / "manifest.json").string());
    const json j = json::parse(in);
    Dataset ds;
    ds.schema_version = j.at("schema_version").get<int>();
    if (ds.schema_version > kManifestSchemaVersion) throw std::runtime_error("manifest schema is newer than supported");
    ds.image_size = j.at("image_size").at("height").get<int>();
    ds.seed = j.value("seed", std::uint64_t{0});
    for (const auto& c : j.at("classes")) {
        ClassRecord rec;
        rec.class_id = c.at("class_id").get<int>();
        rec.family = c.at("family").get<std::string>();
        rec.keypoint_count = c.at("K").get<int>();
        rec.split = split_from_string(c.at("split").get<std::string>());
        rec.keypoint_names = c.at("keypoint_names").get<std::vector<std::string>>();
        ds.classes.push_back(std::move(rec));
    }
    for (const auto& s : j.at("samples")) {
        Sample smp;
        smp.sample_id = s.at("sample_id").get<int>();
        smp.class_id = s.at("class_id").get<int>();
        std::vector<Point2> kps;
        for (const auto& p : s.at("keypoints")) kps.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        smp.keypoints = PointSet(std::move(kps));
        for (const auto& m : s.at("kp_mask")) smp.kp_mask.push_back(m.get<int>() != 0);
        const auto& b = s.at("bbox");
        smp.bbox = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
        smp.image = read_png(root / s.at("image").get<std::string>());
        ds.samples.push_back(std::move(smp));
    }
    return ds;
}

Episode sample_episode(const Dataset& dataset, std::span<const int> class_ids, int shots, std::uint64_t seed) {
    if (shots < 1) throw std::invalid_argument("sample_episode: shots must be >= 1");
    std::vector<std::pair<int, std::vector<int>>> eligible;
    for (int c : class_ids) {
        auto idx = dataset.sample_indices(c);
        if (static_cast<int>(idx.size()) >= shots + 1) eligible.emplace_back(c, std::move(idx));
    }
    if (eligible.empty()) throw std::invalid_argument("sample_episode: no class has shots + 1 samples");
    std::mt19937_64 rng(mix(seed, 0xE915));
    const auto& [cls, members] = eligible[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(eligible.size()) - 1))];
    std::vector<int> pool = members;
    // partial Fisher-Yates for shots + 1 distinct picks
    for (int i = 0; i <= shots; ++i) {
        const int j = uniform_int(rng, i, static_cast<int>(pool.size()) - 1);
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    Episode ep;
    ep.class_id = cls;
    ep.query = &dataset.samples[static_cast<std::size_t>(pool[0])];
    for (int i = 1; i <= shots; ++i) ep.supports.push_back(&dataset.samples[static_cast<std::size_t>(pool[static_cast<std::size_t>(i)])]);
    return ep;
}

Episode sample_episode(const Dataset& dataset, Split split, int shots, std::uint64_t seed) {
    const auto ids = dataset.class_ids(split);
    return sample_episode(dataset, ids, shots, seed);
}

ClassPartition cross_supercat_splits(const Dataset& dataset, const std::string& held_out_family) {
    const auto& fams = shape_families();
    if (std::find(fams.begin(), fams.end(), held_out_family) == fams.end()) {
        throw std::invalid_argument("cross_supercat_splits: unknown family '" + held_out_family + "'");
    }
    ClassPartition part;
    for (const auto& c : dataset.classes) (c.family == held_out_family ? part.test : part.train).push_back(c.class_id);
    return part;
}

}  // namespace metapoint
