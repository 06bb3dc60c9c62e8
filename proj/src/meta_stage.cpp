// SPDX-License-Identifier: Apache-2.0
#include "metapoint/meta_stage.hpp"

#include <stdexcept>

namespace metapoint {

const DecoderState& MetaState::layer(int l) const {
    if (l == 0) return per_layer.back();
    if (l < 1 || l > layers()) throw std::out_of_range("MetaState: layer index out of range");
    return per_layer[static_cast<std::size_t>(l - 1)];
}

MetaPrediction MetaPrediction::from(const MetaState& state) {
    MetaPrediction out;
    for (const auto& s : state.per_layer) out.layers.push_back(PointSet::from_flat(s.points.value()));
    out.visibility.assign(state.visibility.value().begin(), state.visibility.value().end());
    return out;
}

MetaStage::MetaStage(nn::ParameterStore& store, const std::string& name, int num_meta_points,
                     const DecoderConfig& cfg, std::mt19937_64& rng)
    : num_meta_points_(num_meta_points) {
    if (num_meta_points < 1) throw std::invalid_argument("MetaStage: need at least one meta-point");
    embeddings_ = store.create(name + ".meta_embeddings", num_meta_points, cfg.dim,
                               nn::initialize(nn::Init::Normal002, num_meta_points, cfg.dim, rng));
    identity_ = store.create(name + ".identity_embeddings", num_meta_points, cfg.dim,
                             nn::initialize(nn::Init::Normal002, num_meta_points, cfg.dim, rng));
    grid_ = ag::Var::constant(num_meta_points, 2, uniform_grid(num_meta_points).flatten());
    decoder_ = PointDecoder(store, name + ".decoder", cfg, rng);
    visibility_head_ = nn::Linear(store, name + ".visibility", cfg.dim, 1, rng);
}

MetaState MetaStage::predict_meta(const FeaturePyramid& pyramid) const {
    MetaState out;
    out.per_layer = decoder_.run(embeddings_, grid_, identity_, pyramid);
    out.visibility = ag::sigmoid(visibility_head_(out.per_layer.back().embeddings));
    return out;
}

}  // namespace metapoint
