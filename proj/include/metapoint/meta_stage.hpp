// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <vector>

#include "metapoint/backbone.hpp"
#include "metapoint/decoder.hpp"
#include "metapoint/geometry.hpp"
#include "metapoint/nn.hpp"

namespace metapoint {

/// Decoder outputs of the support-free stage plus per-meta-point visibility.
struct MetaState {
    std::vector<DecoderState> per_layer;
    ag::Var visibility;  // M x 1, in (0, 1)

    [[nodiscard]] int layers() const { return static_cast<int>(per_layer.size()); }
    [[nodiscard]] int count() const { return per_layer.empty() ? 0 : per_layer.front().count(); }
    /// 1-based layer, 0 = last.
    [[nodiscard]] const DecoderState& layer(int l) const;
};

/// Plain-value snapshot of a MetaState, used by the matcher and reports.
struct MetaPrediction {
    std::vector<PointSet> layers;  // L sets of M points
    std::vector<double> visibility;

    [[nodiscard]] const PointSet& last() const { return layers.back(); }
    static MetaPrediction from(const MetaState& state);
};

/// M trainable meta-embeddings decoded against an image's pyramid from a
/// fixed uniform grid. Consumes only image features.
class MetaStage {
public:
    MetaStage() = default;
    MetaStage(nn::ParameterStore& store, const std::string& name, int num_meta_points, const DecoderConfig& cfg,
              std::mt19937_64& rng);

    [[nodiscard]] MetaState predict_meta(const FeaturePyramid& pyramid) const;

    [[nodiscard]] int num_meta_points() const { return num_meta_points_; }
    [[nodiscard]] const PointDecoder& decoder() const { return decoder_; }
    [[nodiscard]] const ag::Var& meta_embeddings() const { return embeddings_; }
    [[nodiscard]] const ag::Var& identity_embeddings() const { return identity_; }
    [[nodiscard]] const ag::Var& initial_points() const { return grid_; }

private:
    int num_meta_points_ = 0;
    ag::Var embeddings_;
    ag::Var identity_;
    ag::Var grid_;
    PointDecoder decoder_;
    nn::Linear visibility_head_;
};

}  // namespace metapoint
