// SPDX-License-Identifier: Apache-2.0
#pragma once

// Shared fixtures for the test binaries: finite-difference checks, random
// inputs, and a tiny model configuration.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "metapoint/autograd.hpp"
#include "metapoint/config.hpp"
#include "metapoint/episodes.hpp"
#include "metapoint/image.hpp"
#include "metapoint/nn.hpp"

namespace testing {

using metapoint::ag::Var;

/// ||a - n|| / max(||a||, ||n||, floor). The floor keeps groups whose true
/// gradient is ~0 from reporting roundoff noise as relative error.
inline double relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor = 1e-6) {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
}

struct GradCheck {
    std::vector<double> analytic;
    std::vector<double> numeric;
    [[nodiscard]] double error(double floor = 1e-6) const { return relative_error(analytic, numeric, floor); }
};

/// Central differences of `loss` w.r.t. selected entries of a leaf.
/// `loss` must rebuild its graph on every call.
inline GradCheck finite_difference(const std::function<Var()>& loss, Var& leaf, std::span<const std::size_t> entries,
                                   double h = 1e-6) {
    leaf.zero_grad();
    metapoint::ag::backward(loss());
    GradCheck out;
    const auto g = leaf.grad();
    for (std::size_t e : entries) out.analytic.push_back(g[e]);
    auto w = leaf.mutable_value();
    for (std::size_t e : entries) {
        const double keep = w[e];
        w[e] = keep + h;
        const double up = loss().item();
        w[e] = keep - h;
        const double down = loss().item();
        w[e] = keep;
        out.numeric.push_back((up - down) / (2 * h));
    }
    leaf.zero_grad();
    return out;
}

inline std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

inline Var random_parameter(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
    return Var::parameter(rows, cols, random_values(static_cast<std::size_t>(rows) * cols, rng, -scale, scale));
}

inline metapoint::Image random_image(int h, int w, std::mt19937_64& rng) {
    metapoint::Image im(h, w);
    std::uniform_real_distribution<double> d(0.0, 1.0);
    for (auto& v : im.rgb) v = d(rng);
    return im;
}

/// Adds uniform noise to every parameter so zero-initialized heads are
/// exercised too.
inline void jitter_parameters(metapoint::nn::ParameterStore& store, std::mt19937_64& rng, double scale) {
    std::uniform_real_distribution<double> d(-scale, scale);
    for (const auto& name : store.names()) {
        for (auto& v : store.get(name).mutable_value()) v += d(rng);
    }
}

inline metapoint::RunConfig tiny_config() {
    metapoint::RunConfig c;
    c.num_meta_points = 9;
    c.layers = 2;
    c.levels = 3;
    c.dim = 16;
    c.heads = 2;
    c.sampling_points = 2;
    c.ffn_dim = 32;
    c.seed = 3;
    return c;
}

/// Small dataset kept in memory for model-level tests.
inline const metapoint::Dataset& tiny_dataset() {
    static const metapoint::Dataset ds = [] {
        metapoint::GenerateSpec s;
        s.classes = 8;
        s.per_class = 6;
        s.image_size = 32;
        s.seed = 11;
        return metapoint::generate_dataset(s);
    }();
    return ds;
}

}  // namespace testing
