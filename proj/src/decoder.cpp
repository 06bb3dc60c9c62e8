// SPDX-License-Identifier: Apache-2.0
#include "metapoint/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "metapoint/geometry.hpp"

namespace metapoint {

namespace {

// Negative slope of the point-head activation. Plain ReLU units went silent
// for good once the residuals they chase became small.
constexpr double kPointHeadSlope = 0.1;

void check_state(const DecoderState& s, int dim) {
    if (s.points.cols() != 2 || s.embeddings.rows() != s.points.rows() || s.embeddings.cols() != dim) {
        throw std::invalid_argument("decoder: points must be Q x 2 and embeddings Q x D");
    }
}

}  // namespace

DecoderLayer::DecoderLayer(nn::ParameterStore& store, const std::string& name, const DecoderConfig& cfg,
                           std::mt19937_64& rng)
    : cfg_(cfg) {
    const int d = cfg.dim;
    const int slots = cfg.heads * cfg.levels * cfg.sampling_points;
    q_proj_ = nn::Linear(store, name + ".self_attn.q", d, d, rng);
    k_proj_ = nn::Linear(store, name + ".self_attn.k", d, d, rng);
    v_proj_ = nn::Linear(store, name + ".self_attn.v", d, d, rng);
    sa_out_ = nn::Linear(store, name + ".self_attn.out", d, d, rng);
    norm_sa_ = nn::LayerNorm(store, name + ".self_attn.norm", d);
    offset_head_ = nn::Linear(store, name + ".deform.offsets", d, 2 * slots, rng, nn::Init::Zeros);
    // Start each head looking along its own direction, sampling point s at
    // s + 1 cells, so the initial samples spread around the reference.
    auto bias = offset_head_.bias().mutable_value();
    for (int h = 0; h < cfg.heads; ++h) {
        const double angle = 2.0 * std::numbers::pi * h / cfg.heads;
        const double c = std::cos(angle), s = std::sin(angle);
        const double norm = std::max(std::fabs(c), std::fabs(s));
        for (int l = 0; l < cfg.levels; ++l) {
            for (int p = 0; p < cfg.sampling_points; ++p) {
                const int slot = (h * cfg.levels + l) * cfg.sampling_points + p;
                bias[2 * static_cast<std::size_t>(slot)] = c / norm * (p + 1);
                bias[2 * static_cast<std::size_t>(slot) + 1] = s / norm * (p + 1);
            }
        }
    }
    weight_head_ = nn::Linear(store, name + ".deform.weights", d, slots, rng);
    value_proj_ = nn::Linear(store, name + ".deform.value", d, d, rng);
    ca_out_ = nn::Linear(store, name + ".deform.out", d, d, rng);
    norm_ca_ = nn::LayerNorm(store, name + ".deform.norm", d);
    ffn_in_ = nn::Linear(store, name + ".ffn.in", d, cfg.ffn_dim, rng, nn::Init::KaimingNormal);
    ffn_out_ = nn::Linear(store, name + ".ffn.out", cfg.ffn_dim, d, rng);
    norm_ffn_ = nn::LayerNorm(store, name + ".ffn.norm", d);
    point_hidden_ = nn::Linear(store, name + ".point_head.hidden", d, d, rng, nn::Init::KaimingNormal);
    point_out_ = nn::Linear(store, name + ".point_head.out", d, 2, rng, nn::Init::Zeros);
}

DecoderState DecoderLayer::self_attention_block(const DecoderState& state, const ag::Var& identity,
                                                std::vector<double>* attention_out) const {
    check_state(state, cfg_.dim);
    if (identity.rows() != state.count() || identity.cols() != cfg_.dim) {
        throw std::invalid_argument("decoder: identity embeddings must be Q x D");
    }
    const ag::Var pos = ag::sine_position_encoding(state.points, cfg_.dim);
    const ag::Var qk_in = ag::add(ag::add(state.embeddings, pos), identity);
    const ag::Var attended =
        ag::multi_head_attention(q_proj_(qk_in), k_proj_(qk_in), v_proj_(state.embeddings), cfg_.heads, attention_out);
    return {state.points, norm_sa_(ag::add(state.embeddings, sa_out_(attended))), state.layer_index};
}

ag::Var DecoderLayer::sampling_locations(const ag::Var& embeddings, const ag::Var& points,
                                         const FeaturePyramid& pyramid) const {
    if (pyramid.size() != cfg_.levels) throw std::invalid_argument("decoder: pyramid level count mismatch");
    const ag::Var query = ag::add(embeddings, ag::sine_position_encoding(points, cfg_.dim));
    const ag::Var offsets = offset_head_(query);  // Q x 2*slots

    // Offsets are in units of cells of their level; the reference point is
    // broadcast into every slot through a constant selection matrix.
    const int slots = cfg_.heads * cfg_.levels * cfg_.sampling_points;
    std::vector<double> select(2 * static_cast<std::size_t>(2 * slots), 0.0);
    std::vector<double> cell(2 * static_cast<std::size_t>(slots), 0.0);
    for (int h = 0; h < cfg_.heads; ++h) {
        for (int l = 0; l < cfg_.levels; ++l) {
            for (int s = 0; s < cfg_.sampling_points; ++s) {
                const int slot = (h * cfg_.levels + l) * cfg_.sampling_points + s;
                select[0 * 2 * slots + 2 * slot] = 1.0;
                select[1 * 2 * slots + 2 * slot + 1] = 1.0;
                cell[2 * slot] = 1.0 / pyramid.levels[l].width;
                cell[2 * slot + 1] = 1.0 / pyramid.levels[l].height;
            }
        }
    }
    const ag::Var broadcast = ag::matmul(points, ag::Var::constant(2, 2 * slots, std::move(select)));
    std::vector<double> cell_rows(static_cast<std::size_t>(points.rows()) * 2 * slots);
    for (int r = 0; r < points.rows(); ++r) std::copy(cell.begin(), cell.end(), cell_rows.begin() + static_cast<std::ptrdiff_t>(r) * 2 * slots);
    const ag::Var scaled = ag::mul(offsets, ag::Var::constant(points.rows(), 2 * slots, std::move(cell_rows)));
    return ag::add(broadcast, scaled);
}

ag::Var DecoderLayer::attention_weights(const ag::Var& embeddings, const ag::Var& points) const {
    const ag::Var query = ag::add(embeddings, ag::sine_position_encoding(points, cfg_.dim));
    return ag::softmax_groups(weight_head_(query), cfg_.levels * cfg_.sampling_points);
}

ag::Var DecoderLayer::deformable_attention(const ag::Var& embeddings, const ag::Var& points,
                                           const FeaturePyramid& pyramid) const {
    const ag::Var locations = sampling_locations(embeddings, points, pyramid);
    const ag::Var weights = attention_weights(embeddings, points);
    std::vector<ag::SampledLevel> values;
    values.reserve(pyramid.levels.size());
    for (const auto& lv : pyramid.levels) values.push_back({value_proj_(lv.values), lv.height, lv.width});
    return ca_out_(ag::deformable_sample(values, locations, weights, cfg_.heads, cfg_.sampling_points));
}

DecoderState DecoderLayer::deformable_cross_attention(const DecoderState& state, const FeaturePyramid& pyramid) const {
    check_state(state, cfg_.dim);
    const ag::Var aggregated = deformable_attention(state.embeddings, state.points, pyramid);
    return {state.points, norm_ca_(ag::add(state.embeddings, aggregated)), state.layer_index};
}

DecoderState DecoderLayer::feed_forward(const DecoderState& state) const {
    const ag::Var hidden = ag::relu(ffn_in_(state.embeddings));
    return {state.points, norm_ffn_(ag::add(state.embeddings, ffn_out_(hidden))), state.layer_index};
}

DecoderState DecoderLayer::point_update(const DecoderState& state) const {
    check_state(state, cfg_.dim);
    const ag::Var hidden = ag::leaky_relu(point_hidden_(state.embeddings), kPointHeadSlope);
    const ag::Var delta = point_out_(hidden);
    const ag::Var moved = ag::sigmoid(ag::add(ag::logit(state.points, kLogitEps), delta));
    return {moved, state.embeddings, state.layer_index};
}

DecoderState DecoderLayer::forward(const DecoderState& state, const ag::Var& identity,
                                   const FeaturePyramid& pyramid) const {
    DecoderState s = self_attention_block(state, identity);
    s = deformable_cross_attention(s, pyramid);
    s = feed_forward(s);
    s = point_update(s);
    s.layer_index = state.layer_index + 1;
    return s;
}

PointDecoder::PointDecoder(nn::ParameterStore& store, const std::string& name, const DecoderConfig& cfg,
                           std::mt19937_64& rng)
    : cfg_(cfg) {
    if (cfg.dim % cfg.heads != 0) throw std::invalid_argument("PointDecoder: dim must be divisible by heads");
    for (int l = 0; l < cfg.layers; ++l) layers_.emplace_back(store, name + ".layer" + std::to_string(l), cfg, rng);
}

std::vector<DecoderState> PointDecoder::run(const ag::Var& initial_embeddings, const ag::Var& initial_points,
                                            const ag::Var& identity, const FeaturePyramid& pyramid,
                                            const ReferenceObserver& observer) const {
    if (initial_points.rows() < 1) throw std::invalid_argument("PointDecoder: need at least one query");
    std::vector<DecoderState> out;
    out.reserve(layers_.size());
    DecoderState state{initial_points, initial_embeddings, 0};
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        if (observer) observer(static_cast<int>(l) + 1, state.points);
        state = layers_[l].forward(state, identity, pyramid);
        out.push_back(state);
    }
    return out;
}

}  // namespace metapoint
