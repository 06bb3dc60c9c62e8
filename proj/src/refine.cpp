// SPDX-License-Identifier: Apache-2.0
#include "metapoint/refine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace metapoint {

std::vector<double> gaussian_pool_weights(int height, int width, Point2 center, double sigma) {
    if (height <= 0 || width <= 0) throw std::invalid_argument("gaussian_pool_weights: empty grid");
    if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_pool_weights: sigma must be positive");
    const double u = center.x * width - 0.5;
    const double v = center.y * height - 0.5;
    std::vector<double> logw(static_cast<std::size_t>(height) * width);
    for (int i = 0; i < height; ++i) {
        for (int j = 0; j < width; ++j) {
            const double dx = j - u;
            const double dy = i - v;
            logw[static_cast<std::size_t>(i) * width + j] = -(dx * dx + dy * dy) / (2.0 * sigma * sigma);
        }
    }
    // Shift by the max exponent so tiny sigma still yields a proper delta.
    const double mx = *std::max_element(logw.begin(), logw.end());
    double z = 0.0;
    for (auto& w : logw) z += (w = std::exp(w - mx));
    for (auto& w : logw) w /= z;
    return logw;
}

ag::Var soft_roi_pool(const FeaturePyramid& support_pyramid, const PointSet& support_gt, double sigma) {
    if (support_pyramid.levels.empty()) throw std::invalid_argument("soft_roi_pool: empty pyramid");
    const FeatureLevel& level = support_pyramid.shallowest();
    const std::size_t cells = static_cast<std::size_t>(level.height) * level.width;
    std::vector<double> weights(support_gt.size() * cells);
    for (std::size_t k = 0; k < support_gt.size(); ++k) {
        const auto w = gaussian_pool_weights(level.height, level.width, support_gt[k], sigma);
        std::copy(w.begin(), w.end(), weights.begin() + static_cast<std::ptrdiff_t>(k * cells));
    }
    const ag::Var pool =
        ag::Var::constant(static_cast<int>(support_gt.size()), static_cast<int>(cells), std::move(weights));
    return ag::matmul(pool, level.values);
}

RefineStage::RefineStage(nn::ParameterStore& store, const std::string& name, int num_meta_points,
                         const DecoderConfig& cfg, std::mt19937_64& rng)
    : dim_(cfg.dim) {
    squeeze_ = nn::Linear(store, name + ".squeeze", 3 * cfg.dim, cfg.dim, rng);
    identity_ = store.create(name + ".identity_embeddings", num_meta_points, cfg.dim,
                             nn::initialize(nn::Init::Normal002, num_meta_points, cfg.dim, rng));
    decoder_ = PointDecoder(store, name + ".decoder", cfg, rng);
}

ag::Var RefineStage::fuse_embeddings(const ag::Var& assigned_query_embeddings,
                                     const ag::Var& assigned_support_embeddings,
                                     const ag::Var& support_features) const {
    const int k = assigned_query_embeddings.rows();
    if (assigned_support_embeddings.rows() != k || support_features.rows() != k) {
        throw std::invalid_argument("fuse_embeddings: inputs disagree on keypoint count");
    }
    const ag::Var parts[] = {assigned_query_embeddings, assigned_support_embeddings, support_features};
    return squeeze_(ag::concat_cols(parts));
}

std::vector<DecoderState> RefineStage::refine(const MetaState& meta_q, const SupportBundle& bundle,
                                              const FeaturePyramid& pyramid, const RefineOptions& options) const {
    const auto& delta = bundle.assignment.delta;
    const int k = static_cast<int>(delta.size());
    if (k == 0) throw std::invalid_argument("refine: empty assignment");
    if (bundle.assignment.meta_points != meta_q.count()) throw std::invalid_argument("refine: assignment does not match meta state");
    if (bundle.support_features.rows() != k || bundle.assigned_support_embeddings.rows() != k) {
        throw std::invalid_argument("refine: support bundle rows differ from keypoint count");
    }

    // order[i] = keypoint decoded at internal row i (ascending meta index).
    std::vector<int> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return delta[a] < delta[b]; });
    std::vector<int> meta_rows(order.size());
    std::vector<int> inverse(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        meta_rows[i] = delta[static_cast<std::size_t>(order[i])];
        inverse[static_cast<std::size_t>(order[i])] = static_cast<int>(i);
    }

    const DecoderState& source = meta_q.layer(options.from_layer);
    const ag::Var query_points = ag::gather_rows(source.points, meta_rows);
    const ag::Var query_emb = ag::gather_rows(source.embeddings, meta_rows);
    const ag::Var support_emb = options.use_support_embeddings ? ag::gather_rows(bundle.assigned_support_embeddings, order)
                                                               : ag::Var::zeros(k, dim_);
    const ag::Var support_feat = options.use_support_features ? ag::gather_rows(bundle.support_features, order)
                                                              : ag::Var::zeros(k, dim_);
    const ag::Var fused = fuse_embeddings(query_emb, support_emb, support_feat);
    const ag::Var identity = ag::gather_rows(identity_, meta_rows);

    auto states = decoder_.run(fused, query_points, identity, pyramid);
    for (auto& s : states) {
        s.points = ag::gather_rows(s.points, inverse);
        s.embeddings = ag::gather_rows(s.embeddings, inverse);
    }
    return states;
}

}  // namespace metapoint
