// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <string>
#include <vector>

#include "metapoint/autograd.hpp"
#include "metapoint/geometry.hpp"
#include "metapoint/image.hpp"
#include "metapoint/nn.hpp"

namespace metapoint {

struct FeatureLevel {
    ag::Var values;  // (height*width) x channels
    int height = 0;
    int width = 0;

    [[nodiscard]] FeatureMap to_map() const;
};

/// Feature maps ordered deep-to-shallow (coarsest first), common width.
struct FeaturePyramid {
    std::vector<FeatureLevel> levels;
    int channels = 0;

    [[nodiscard]] int size() const { return static_cast<int>(levels.size()); }
    [[nodiscard]] const FeatureLevel& shallowest() const { return levels.back(); }
};

/// Four stride-2 convolutional stages (16/32/64/64 channels), each a
/// strided 3x3 conv followed by a 3x3 conv, ReLU after both. The last
/// `levels` stage outputs are projected to `dim` with 1x1 convolutions and
/// returned deep-to-shallow; levels = 3 yields strides 16, 8, 4.
class Backbone {
public:
    static constexpr int kStride = 16;
    static constexpr int kStages = 4;

    Backbone() = default;
    Backbone(nn::ParameterStore& store, const std::string& name, int dim, int levels, std::mt19937_64& rng);

    /// Throws std::invalid_argument unless H and W are divisible by 16.
    [[nodiscard]] FeaturePyramid extract_pyramid(const Image& image) const;

    [[nodiscard]] int levels() const { return levels_; }
    [[nodiscard]] int dim() const { return dim_; }

private:
    struct Stage {
        ag::Var down_weight, down_bias;
        ag::Var conv_weight, conv_bias;
        int in_channels = 0;
        int out_channels = 0;
    };
    std::vector<Stage> stages_;
    std::vector<nn::Linear> projections_;  // indexed by stage, only tapped ones used
    int dim_ = 0;
    int levels_ = 0;
};

}  // namespace metapoint
