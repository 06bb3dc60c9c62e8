// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include "doctest.h"
#include "metapoint/assignment.hpp"
#include "metapoint/losses.hpp"
#include "metapoint/metrics.hpp"
#include "support.hpp"

using namespace metapoint;

namespace {

ag::Var points_var(const PointSet& p) { return ag::Var::parameter(static_cast<int>(p.size()), 2, p.flatten()); }

const bool kAll[] = {true, true, true, true, true, true, true, true};

}  // namespace

TEST_CASE("slacked deviation values") {
    // last layer carries no slack
    CHECK(slacked_deviation(0.05, 3, 3, 0.1) == doctest::Approx(0.05).epsilon(1e-12));
    // one layer from the end absorbs 0.1
    CHECK(slacked_deviation(0.08, 2, 3, 0.1) == 0.0);
    CHECK(slacked_deviation(0.35, 2, 3, 0.1) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(slacked_deviation(0.35, 1, 3, 0.1) == doctest::Approx(0.15).epsilon(1e-12));
    CHECK(slacked_deviation(0.35, 1, 3, 0.0) == doctest::Approx(0.35).epsilon(1e-12));

    const PointSet pred({{0.53, 0.52}});
    const PointSet gt({{0.5, 0.5}});
    CHECK(slacked_l1(pred, gt, 3, 3, 0.1) == doctest::Approx(0.05).epsilon(1e-9));
}

TEST_CASE("graph slacked_l1 matches the value version and respects the mask") {
    std::mt19937_64 rng(1);
    const auto a = testing::random_values(8, rng, 0.0, 1.0);
    const auto b = testing::random_values(8, rng, 0.0, 1.0);
    const PointSet pred = PointSet::from_flat(a);
    const PointSet gt = PointSet::from_flat(b);
    for (int l = 1; l <= 3; ++l) {
        CHECK(slacked_l1(points_var(pred), gt, std::span(kAll, 4), l, 3, 0.1).item() ==
              doctest::Approx(slacked_l1(pred, gt, l, 3, 0.1)).epsilon(1e-12));
    }
    const bool some[] = {true, false, true, false};
    const PointSet pred_kept({pred[0], pred[2]});
    const PointSet gt_kept({gt[0], gt[2]});
    CHECK(slacked_l1(points_var(pred), gt, some, 2, 3, 0.1).item() ==
          doctest::Approx(slacked_l1(pred_kept, gt_kept, 2, 3, 0.1)).epsilon(1e-12));
}

TEST_CASE("regression loss with one layer equals the sum of both streams' L1") {
    const PointSet gt({{0.5, 0.5}, {0.2, 0.2}});
    const PointSet meta({{0.6, 0.55}, {0.2, 0.2}});
    const PointSet refined({{0.5, 0.5}, {0.2, 0.1}});
    const ag::Var m[] = {points_var(meta)};
    const ag::Var r[] = {points_var(refined)};
    const ag::Var loss = regression_loss(m, r, gt, std::span(kAll, 2), 0.1);
    CHECK(loss.item() == doctest::Approx(0.15 + 0.1).epsilon(1e-12));
}

TEST_CASE("regression loss gradient matches finite differences") {
    std::mt19937_64 rng(2);
    const PointSet gt = PointSet::from_flat(testing::random_values(6, rng, 0.0, 1.0));
    std::vector<ag::Var> meta, refined;
    for (int l = 0; l < 3; ++l) {
        meta.push_back(testing::random_parameter(3, 2, rng));
        refined.push_back(testing::random_parameter(3, 2, rng));
    }
    const std::size_t all[] = {0, 1, 2, 3, 4, 5};
    for (int l = 0; l < 3; ++l) {
        const auto fd = testing::finite_difference([&] { return regression_loss(meta, refined, gt, std::span(kAll, 3), 0.1); },
                                                   meta[static_cast<std::size_t>(l)], all);
        CHECK(fd.error() < 1e-6);
    }
}

TEST_CASE("visibility loss values") {
    Assignment a;
    a.delta = {0};
    a.meta_points = 1;
    const ag::Var v = ag::Var::parameter(1, 1, {0.9});
    CHECK(visibility_loss(v, a).item() == doctest::Approx(-std::log(0.9)).epsilon(1e-12));
    CHECK(visibility_loss(v, a).item() == doctest::Approx(0.1054).epsilon(1e-3));

    Assignment none;
    none.meta_points = 2;
    const ag::Var half = ag::Var::parameter(2, 1, {0.5, 0.5});
    CHECK(visibility_loss(half, none).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // clamped at the probability floor
    const ag::Var zero = ag::Var::parameter(1, 1, {0.0});
    CHECK(std::isfinite(visibility_loss(zero, a).item()));

    // mean over M slots
    Assignment second;
    second.delta = {1};
    second.meta_points = 2;
    const ag::Var pv = ag::Var::parameter(2, 1, {0.2, 0.7});
    CHECK(visibility_loss(pv, second).item() == doctest::Approx(-(std::log(0.8) + std::log(0.7)) / 2).epsilon(1e-12));

    std::mt19937_64 rng(3);
    ag::Var p = ag::Var::parameter(4, 1, testing::random_values(4, rng, 0.1, 0.9));
    Assignment two;
    two.delta = {3, 1};
    two.meta_points = 4;
    const std::size_t entries[] = {0, 1, 2, 3};
    CHECK(testing::finite_difference([&] { return visibility_loss(p, two); }, p, entries).error() < 1e-6);
}

TEST_CASE("pck counts keypoints inside the scaled radius") {
    const PointSet gt({{0.5, 0.5}, {0.2, 0.2}, {0.8, 0.8}});
    const PointSet pred({{0.5, 0.54}, {0.2, 0.3}, {0.8, 0.8}});
    CHECK(*pck(pred, gt, std::span(kAll, 3), 0.1, 0.5) == doctest::Approx(2.0 / 3.0));
    CHECK(*pck(pred, gt, std::span(kAll, 3), 0.2, 0.5) == 1.0);
    const bool mask[] = {false, true, false};
    CHECK(*pck(pred, gt, mask, 0.1, 0.5) == 0.0);
    const bool none[] = {false, false, false};
    CHECK_FALSE(pck(pred, gt, none, 0.1, 0.5).has_value());
    CHECK_THROWS_AS((void)pck(pred, gt, std::span(kAll, 3), 0.1, 0.0), std::invalid_argument);
    CHECK_THROWS_AS((void)pck(pred, PointSet({{0.5, 0.5}}), std::span(kAll, 3), 0.1, 1.0), std::invalid_argument);
    const PointSet exact = gt;
    CHECK(*mpck(exact, gt, std::span(kAll, 3), 0.5) == 1.0);
}

TEST_CASE("mpck averages the four thresholds") {
    const PointSet gt({{0.5, 0.5}});
    // distance 0.07 with normalizer 1: pass at 0.1, 0.15, 0.2
    const PointSet pred({{0.57, 0.5}});
    CHECK(*mpck(pred, gt, std::span(kAll, 1), 1.0) == doctest::Approx(0.75));
}

TEST_CASE("pck is invariant under joint scaling of points and normalizer") {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 50; ++t) {
        const PointSet gt = PointSet::from_flat(testing::random_values(10, rng, 0.0, 1.0));
        const PointSet pred = PointSet::from_flat(testing::random_values(10, rng, 0.0, 1.0));
        const double s = 0.25 + t * 0.05;
        std::vector<Point2> gs, ps;
        for (std::size_t i = 0; i < gt.size(); ++i) {
            gs.push_back({gt[i].x * s, gt[i].y * s});
            ps.push_back({pred[i].x * s, pred[i].y * s});
        }
        for (double thr : kMpckThresholds) {
            CHECK(*pck(pred, gt, std::span(kAll, 5), thr, 0.7) ==
                  *pck(PointSet(ps), PointSet(gs), std::span(kAll, 5), thr, 0.7 * s));
        }
    }
}

TEST_CASE("accumulator averages per-episode values and tracks skips") {
    PckAccumulator acc({0.1, 0.2});
    const PointSet gt({{0.5, 0.5}, {0.1, 0.1}});
    CHECK(acc.add(PointSet({{0.5, 0.5}, {0.1, 0.25}}), gt, std::span(kAll, 2), 1.0));
    CHECK(acc.add(PointSet({{0.9, 0.9}, {0.9, 0.9}}), gt, std::span(kAll, 2), 1.0));
    const bool none[] = {false, false};
    CHECK_FALSE(acc.add(gt, gt, none, 1.0));
    CHECK(acc.episodes() == 2);
    CHECK(acc.skipped() == 1);
    const auto m = acc.means();
    CHECK(m[0] == doctest::Approx(0.25));
    CHECK(m[1] == doctest::Approx(0.5));
    PckAccumulator other({0.1, 0.2});
    CHECK(other.add(gt, gt, std::span(kAll, 2), 1.0));
    acc.merge(other);
    CHECK(acc.episodes() == 3);
    CHECK(acc.means()[0] == doctest::Approx(0.5));
}

TEST_CASE("bounding box longest side") {
    CHECK(BoundingBox{0.1, 0.2, 0.5, 0.9}.longest_side() == doctest::Approx(0.7));
    CHECK(BoundingBox{0.1, 0.2, 0.5, 0.3}.longest_side() == doctest::Approx(0.4));
}
