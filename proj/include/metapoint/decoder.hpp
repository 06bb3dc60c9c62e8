// SPDX-License-Identifier: Apache-2.0
#pragma once

// Progressive deformable point decoder. Each layer runs self-attention over
// the point embeddings, multi-scale deformable cross-attention with the
// current points as references, a feed-forward block, and a logit-space
// point update. Layer l takes layer l-1's points as its references.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "metapoint/autograd.hpp"
#include "metapoint/backbone.hpp"
#include "metapoint/nn.hpp"

namespace metapoint {

struct DecoderConfig {
    int dim = 64;
    int heads = 4;
    int levels = 3;
    int sampling_points = 4;
    int layers = 3;
    int ffn_dim = 256;
};

struct DecoderState {
    ag::Var points;      // Q x 2, normalized (x, y)
    ag::Var embeddings;  // Q x D
    int layer_index = 0;

    [[nodiscard]] int count() const { return points.rows(); }
};

class DecoderLayer {
public:
    DecoderLayer() = default;
    DecoderLayer(nn::ParameterStore& store, const std::string& name, const DecoderConfig& cfg, std::mt19937_64& rng);

    /// Self-attention with positional encodings of the current points and
    /// the given identity embeddings added to queries and keys; residual and
    /// layer norm. Points are unchanged.
    [[nodiscard]] DecoderState self_attention_block(const DecoderState& state, const ag::Var& identity,
                                                    std::vector<double>* attention_out = nullptr) const;

    /// Raw deformable aggregation (before output residual and norm), Q x D.
    [[nodiscard]] ag::Var deformable_attention(const ag::Var& embeddings, const ag::Var& points,
                                               const FeaturePyramid& pyramid) const;

    /// Deformable aggregation, residual, layer norm.
    [[nodiscard]] DecoderState deformable_cross_attention(const DecoderState& state,
                                                          const FeaturePyramid& pyramid) const;

    [[nodiscard]] DecoderState feed_forward(const DecoderState& state) const;

    /// P <- sigmoid(logit(P) + head(E)).
    [[nodiscard]] DecoderState point_update(const DecoderState& state) const;

    [[nodiscard]] DecoderState forward(const DecoderState& state, const ag::Var& identity,
                                       const FeaturePyramid& pyramid) const;

    /// Offsets and attention logits used by deformable_attention, for tests.
    [[nodiscard]] ag::Var sampling_locations(const ag::Var& embeddings, const ag::Var& points,
                                             const FeaturePyramid& pyramid) const;
    [[nodiscard]] ag::Var attention_weights(const ag::Var& embeddings, const ag::Var& points) const;

private:
    DecoderConfig cfg_;
    nn::Linear q_proj_, k_proj_, v_proj_, sa_out_;
    nn::LayerNorm norm_sa_;
    nn::Linear offset_head_, weight_head_, value_proj_, ca_out_;
    nn::LayerNorm norm_ca_;
    nn::Linear ffn_in_, ffn_out_;
    nn::LayerNorm norm_ffn_;
    nn::Linear point_hidden_, point_out_;
};

class PointDecoder {
public:
    /// Called with (layer index, reference points consumed by that layer).
    using ReferenceObserver = std::function<void(int, const ag::Var&)>;

    PointDecoder() = default;
    PointDecoder(nn::ParameterStore& store, const std::string& name, const DecoderConfig& cfg, std::mt19937_64& rng);

    /// Returns the L per-layer states, layer_index 1..L.
    [[nodiscard]] std::vector<DecoderState> run(const ag::Var& initial_embeddings, const ag::Var& initial_points,
                                                const ag::Var& identity, const FeaturePyramid& pyramid,
                                                const ReferenceObserver& observer = {}) const;

    [[nodiscard]] const DecoderLayer& layer(int i) const { return layers_.at(static_cast<std::size_t>(i)); }
    [[nodiscard]] int layer_count() const { return static_cast<int>(layers_.size()); }
    [[nodiscard]] const DecoderConfig& config() const { return cfg_; }

private:
    DecoderConfig cfg_;
    std::vector<DecoderLayer> layers_;
};

}  // namespace metapoint
