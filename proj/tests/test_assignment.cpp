// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include "doctest.h"
#include "metapoint/assignment.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace metapoint;

namespace {

CostMatrix random_cost(int m, int k, std::mt19937_64& rng) {
    return CostMatrix(m, k, testing::random_values(static_cast<std::size_t>(m * k), rng, 0.0, 5.0));
}

MetaPrediction single_layer(std::vector<Point2> pts, std::vector<double> vis) {
    MetaPrediction p;
    p.layers.push_back(PointSet(std::move(pts)));
    p.visibility = std::move(vis);
    return p;
}

}  // namespace

TEST_CASE("cost matrix hand cases") {
    // meta-point coincides with the keypoint at every layer, visibility 1
    MetaPrediction exact;
    exact.layers = {PointSet({{0.2, 0.3}}), PointSet({{0.2, 0.3}}), PointSet({{0.2, 0.3}})};
    exact.visibility = {1.0};
    CHECK(cost_matrix(exact, PointSet({{0.2, 0.3}})).at(0, 0) == 0.0);

    // L = 1, deviation 0.3, visibility 0.5 -> 0.3 + 0.5 ln 2
    const MetaPrediction one = single_layer({{0.5, 0.5}}, {0.5});
    const CostMatrix c = cost_matrix(one, PointSet({{0.7, 0.6}}));
    CHECK(c.at(0, 0) == doctest::Approx(0.3 + 0.5 * std::log(2.0)).epsilon(1e-12));
    CHECK(c.at(0, 0) == doctest::Approx(0.6466).epsilon(1e-4));

    // vanishing visibility stays finite through the clamp
    const MetaPrediction dead = single_layer({{0.5, 0.5}}, {0.0});
    const double big = cost_matrix(dead, PointSet({{0.5, 0.5}})).at(0, 0);
    CHECK(std::isfinite(big));
    CHECK(big == doctest::Approx(-0.5 * std::log(1e-6)));
}

TEST_CASE("cost matrix sums slacked deviations over layers and adds the visibility term once") {
    MetaPrediction p;
    p.layers = {PointSet({{0.1, 0.1}, {0.9, 0.9}}), PointSet({{0.2, 0.1}, {0.8, 0.9}}), PointSet({{0.3, 0.3}, {0.7, 0.7}})};
    p.visibility = {0.8, 0.3};
    const PointSet gt({{0.35, 0.3}});
    const CostMatrix c = cost_matrix(p, gt);
    REQUIRE(c.meta_points() == 2);
    REQUIRE(c.keypoints() == 1);
    for (int m = 0; m < 2; ++m) {
        double expect = 0.0;
        for (int l = 1; l <= 3; ++l) {
            const Point2 q = p.layers[static_cast<std::size_t>(l - 1)][static_cast<std::size_t>(m)];
            const double d = std::fabs(q.x - 0.35) + std::fabs(q.y - 0.3);
            expect += std::max(0.0, d - 0.1 * (3 - l));
        }
        expect -= 0.5 * std::log(p.visibility[static_cast<std::size_t>(m)]);
        CHECK(c.at(m, 0) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("cost matrix rejects K > M") {
    const MetaPrediction p = single_layer({{0.5, 0.5}}, {0.5});
    CHECK_THROWS_AS((void)cost_matrix(p, PointSet({{0.1, 0.1}, {0.2, 0.2}})), std::invalid_argument);
    CHECK_THROWS_AS((void)solve_assignment(CostMatrix(1, 2)), std::invalid_argument);
}

TEST_CASE("solve_assignment hand cases") {
    const Assignment a = solve_assignment(CostMatrix(2, 2, {1, 2, 2, 1}));
    CHECK(a.delta == std::vector<int>{0, 1});
    CHECK(a.total_cost(CostMatrix(2, 2, {1, 2, 2, 1})) == 2.0);
    const Assignment b = solve_assignment(CostMatrix(2, 2, {2, 1, 1, 2}));
    CHECK(b.delta == std::vector<int>{1, 0});
}

TEST_CASE("solve_assignment equals brute force on random 6x4 matrices") {
    std::mt19937_64 rng(42);
    CHECK(testing::injective_map_count(6, 4) == 360);
    for (int t = 0; t < 200; ++t) {
        const CostMatrix c = random_cost(6, 4, rng);
        const Assignment a = solve_assignment(c);
        CHECK(a.injective());
        CHECK(a.keypoints() == 4);
        CHECK(a.total_cost(c) == doctest::Approx(testing::brute_force_min_cost(c)).epsilon(1e-12));
    }
}

TEST_CASE("solve_assignment on every shape up to 7 x 5, including integer ties") {
    std::mt19937_64 rng(43);
    std::uniform_int_distribution<int> small(0, 3);
    for (int m = 1; m <= 7; ++m) {
        for (int k = 0; k <= std::min(m, 5); ++k) {
            for (int t = 0; t < 10; ++t) {
                std::vector<double> e(static_cast<std::size_t>(m * k));
                for (auto& x : e) x = t % 2 == 0 ? small(rng) : testing::random_values(1, rng, -3.0, 3.0)[0];
                const CostMatrix c(m, k, e);
                const Assignment a = solve_assignment(c);
                CHECK(a.injective());
                CHECK(a.total_cost(c) == testing::brute_force_min_cost(c));
            }
        }
    }
}

TEST_CASE("ties resolve to the lower meta-point index") {
    const Assignment a = solve_assignment(CostMatrix(3, 1, {1, 1, 1}));
    CHECK(a.delta == std::vector<int>{0});
    const Assignment b = solve_assignment(CostMatrix(4, 2, std::vector<double>(8, 0.0)));
    CHECK(b.delta == std::vector<int>{0, 1});
    // repeated calls agree
    std::mt19937_64 rng(44);
    const CostMatrix c = random_cost(7, 5, rng);
    CHECK(solve_assignment(c).delta == solve_assignment(c).delta);
}

TEST_CASE("column shift leaves the optimal assignment unchanged") {
    std::mt19937_64 rng(45);
    for (int t = 0; t < 50; ++t) {
        CostMatrix c = random_cost(7, 4, rng);
        const auto base = solve_assignment(c).delta;
        const int col = t % 4;
        for (int m = 0; m < 7; ++m) c.at(m, col) += 3.7;
        CHECK(solve_assignment(c).delta == base);
    }
}

TEST_CASE("solve_assignment rejects non-finite costs") {
    CHECK_THROWS_AS((void)solve_assignment(CostMatrix(2, 1, {1.0, std::nan("")})), std::invalid_argument);
}

TEST_CASE("nshot aggregation of cost matrices") {
    const std::vector<CostMatrix> two{CostMatrix(2, 2, {0, 2, 2, 0}), CostMatrix(2, 2, {2, 0, 0, 2})};
    const CostMatrix avg = mean_cost(two);
    for (double e : avg.entries()) CHECK(e == 1.0);
    const Assignment a = solve_assignment(avg);
    CHECK(a.injective());
    CHECK(a.total_cost(avg) == testing::brute_force_min_cost(avg));
    CHECK(a.delta == std::vector<int>{0, 1});

    std::mt19937_64 rng(46);
    const CostMatrix single = random_cost(5, 3, rng);
    const CostMatrix one = mean_cost(std::vector<CostMatrix>{single});
    CHECK(std::equal(one.entries().begin(), one.entries().end(), single.entries().begin()));
    CHECK_THROWS_AS((void)mean_cost(std::vector<CostMatrix>{CostMatrix(5, 3), CostMatrix(5, 2)}), std::invalid_argument);
}

TEST_CASE("nshot_aggregate: identity for one shot, bitwise stable for identical shots, elementwise means") {
    std::mt19937_64 rng(47);
    const int m = 6, k = 3, d = 4;
    auto make_shot = [&] {
        ShotSupport s;
        s.cost = random_cost(m, k, rng);
        s.meta_embeddings = ag::Var::constant(m, d, testing::random_values(m * d, rng));
        s.keypoint_features = ag::Var::constant(k, d, testing::random_values(k * d, rng));
        return s;
    };
    const ShotSupport s0 = make_shot();
    const AggregatedSupport one = nshot_aggregate(std::vector<ShotSupport>{s0});
    CHECK(one.assignment.delta == solve_assignment(s0.cost).delta);
    for (int i = 0; i < k; ++i) {
        for (int c = 0; c < d; ++c) {
            CHECK(one.assigned_embeddings.at(i, c) == s0.meta_embeddings.at(one.assignment.delta[static_cast<std::size_t>(i)], c));
            CHECK(one.keypoint_features.at(i, c) == s0.keypoint_features.at(i, c));
        }
    }

    const AggregatedSupport five = nshot_aggregate(std::vector<ShotSupport>(5, s0));
    CHECK(five.assignment.delta == one.assignment.delta);
    for (std::size_t i = 0; i < one.assigned_embeddings.size(); ++i) {
        CHECK(five.assigned_embeddings.value()[i] == one.assigned_embeddings.value()[i]);
        CHECK(five.keypoint_features.value()[i] == one.keypoint_features.value()[i]);
    }
    for (std::size_t i = 0; i < one.cost.entries().size(); ++i) CHECK(five.cost.entries()[i] == one.cost.entries()[i]);

    const std::vector<ShotSupport> distinct{s0, make_shot(), make_shot()};
    const AggregatedSupport agg = nshot_aggregate(distinct);
    for (int r = 0; r < m; ++r) {
        for (int c = 0; c < k; ++c) {
            const double mean = (distinct[0].cost.at(r, c) + distinct[1].cost.at(r, c) + distinct[2].cost.at(r, c)) / 3.0;
            CHECK(std::fabs(agg.cost.at(r, c) - mean) < 1e-7);
        }
    }
    for (int i = 0; i < k; ++i) {
        const int row = agg.assignment.delta[static_cast<std::size_t>(i)];
        for (int c = 0; c < d; ++c) {
            double e = 0, f = 0;
            for (const auto& s : distinct) {
                e += s.meta_embeddings.at(row, c) / 3.0;
                f += s.keypoint_features.at(i, c) / 3.0;
            }
            CHECK(agg.assigned_embeddings.at(i, c) == doctest::Approx(e).epsilon(1e-12));
            CHECK(agg.keypoint_features.at(i, c) == doctest::Approx(f).epsilon(1e-12));
        }
    }

    std::vector<ShotSupport> bad{s0, make_shot()};
    bad[1].cost = random_cost(m, k + 1, rng);
    CHECK_THROWS_AS((void)nshot_aggregate(bad), std::invalid_argument);
}
