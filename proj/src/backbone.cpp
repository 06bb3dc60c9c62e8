// SPDX-License-Identifier: Apache-2.0
#include "metapoint/backbone.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace metapoint {

FeatureMap FeatureLevel::to_map() const {
    FeatureMap map(height, width, values.cols());
    std::copy(values.value().begin(), values.value().end(), map.data.begin());
    return map;
}

namespace {
constexpr std::array<int, Backbone::kStages> kWidths{16, 32, 64, 64};
constexpr double kInputVarianceFloor = 1e-4;
}

Backbone::Backbone(nn::ParameterStore& store, const std::string& name, int dim, int levels, std::mt19937_64& rng)
    : dim_(dim), levels_(levels) {
    if (levels < 1 || levels > kStages) throw std::invalid_argument("Backbone: levels must be in [1, 4]");
    int cin = 3;
    for (int s = 0; s < kStages; ++s) {
        const int cout = kWidths[s];
        const std::string p = name + ".stage" + std::to_string(s);
        Stage st;
        st.in_channels = cin;
        st.out_channels = cout;
        st.down_weight = store.create(p + ".down.weight", 9 * cin, cout, nn::initialize(nn::Init::KaimingNormal, 9 * cin, cout, rng));
        st.down_bias = store.create(p + ".down.bias", 1, cout, nn::initialize(nn::Init::Zeros, 1, cout, rng));
        st.conv_weight = store.create(p + ".conv.weight", 9 * cout, cout, nn::initialize(nn::Init::KaimingNormal, 9 * cout, cout, rng));
        st.conv_bias = store.create(p + ".conv.bias", 1, cout, nn::initialize(nn::Init::Zeros, 1, cout, rng));
        stages_.push_back(std::move(st));
        cin = cout;
    }
    projections_.resize(kStages);
    for (int s = kStages - levels; s < kStages; ++s) {
        projections_[s] = nn::Linear(store, name + ".proj" + std::to_string(s), kWidths[s], dim, rng);
    }
}

FeaturePyramid Backbone::extract_pyramid(const Image& image) const {
    if (image.height <= 0 || image.width <= 0 || image.height % kStride != 0 || image.width % kStride != 0) {
        throw std::invalid_argument("Backbone: image height and width must be positive multiples of 16");
    }
    // Per-image, per-channel standardization keeps the features from keying
    // on the absolute colors of the training classes.
    const std::size_t pixels = static_cast<std::size_t>(image.height) * image.width;
    std::vector<double> centered(image.rgb.size());
    for (int c = 0; c < 3; ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < pixels; ++i) mean += image.rgb[3 * i + c];
        mean /= static_cast<double>(pixels);
        double var = 0.0;
        for (std::size_t i = 0; i < pixels; ++i) var += (image.rgb[3 * i + c] - mean) * (image.rgb[3 * i + c] - mean);
        const double inv = 1.0 / std::sqrt(var / static_cast<double>(pixels) + kInputVarianceFloor);
        for (std::size_t i = 0; i < pixels; ++i) centered[3 * i + c] = (image.rgb[3 * i + c] - mean) * inv;
    }
    ag::Var x = ag::Var::constant(image.height * image.width, 3, std::move(centered));
    int h = image.height;
    int w = image.width;
    FeaturePyramid pyr;
    pyr.channels = dim_;
    for (int s = 0; s < kStages; ++s) {
        const auto& st = stages_[s];
        x = ag::relu(ag::conv2d(x, h, w, st.down_weight, st.down_bias, 3, 2, 1));
        h /= 2;
        w /= 2;
        x = ag::relu(ag::conv2d(x, h, w, st.conv_weight, st.conv_bias, 3, 1, 1));
        if (s >= kStages - levels_) pyr.levels.push_back({projections_[s](x), h, w});
    }
    std::reverse(pyr.levels.begin(), pyr.levels.end());
    return pyr;
}

}  // namespace metapoint
