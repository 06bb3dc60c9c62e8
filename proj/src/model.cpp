// SPDX-License-Identifier: Apache-2.0
#include "metapoint/model.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace metapoint {

AnnotatedImage annotated(const Sample& sample) {
    return {&sample.image, sample.keypoints, sample.kp_mask, sample.bbox};
}

EpisodeView view_of(const Episode& episode) {
    if (episode.query == nullptr || episode.supports.empty()) throw std::invalid_argument("view_of: incomplete episode");
    EpisodeView v;
    v.query = annotated(*episode.query);
    for (const Sample* s : episode.supports) v.supports.push_back(annotated(*s));
    return v;
}

std::vector<int> active_keypoints(std::span<const AnnotatedImage> supports) {
    if (supports.empty()) throw std::invalid_argument("active_keypoints: no supports");
    const std::size_t k = supports.front().keypoints.size();
    std::vector<int> out;
    for (std::size_t i = 0; i < k; ++i) {
        bool all = true;
        for (const auto& s : supports) {
            if (s.keypoints.size() != k || s.mask.size() != k) throw std::invalid_argument("active_keypoints: supports disagree on K");
            all = all && s.mask[i];
        }
        if (all) out.push_back(static_cast<int>(i));
    }
    return out;
}

namespace {

PointSet select(const PointSet& points, std::span<const int> rows) {
    std::vector<Point2> out;
    out.reserve(rows.size());
    for (int r : rows) out.push_back(points[static_cast<std::size_t>(r)]);
    return PointSet(std::move(out));
}

std::vector<bool> select(const std::vector<bool>& mask, std::span<const int> rows) {
    std::vector<bool> out;
    for (int r : rows) out.push_back(mask[static_cast<std::size_t>(r)]);
    return out;
}

PointSet scatter(const ag::Var& rows_xy, std::span<const int> active, int keypoint_count) {
    std::vector<Point2> out(static_cast<std::size_t>(keypoint_count), Point2{0.5, 0.5});
    for (std::size_t i = 0; i < active.size(); ++i) {
        out[static_cast<std::size_t>(active[i])] = {rows_xy.at(static_cast<int>(i), 0), rows_xy.at(static_cast<int>(i), 1)};
    }
    return PointSet(std::move(out));
}

DecoderConfig decoder_config(const RunConfig& c) {
    return {c.dim, c.heads, c.levels, c.sampling_points, c.layers, c.ffn_dim};
}

}  // namespace

PointSet ForwardResult::metapoint_prediction(int keypoint_count) const {
    return scatter(assigned_meta.back(), active, keypoint_count);
}

PointSet ForwardResult::refined_prediction(int keypoint_count) const {
    return scatter(refined.back(), active, keypoint_count);
}

MetaPointModel::MetaPointModel(const RunConfig& config) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(config_.seed);
    const DecoderConfig dc = decoder_config(config_);
    backbone_ = Backbone(store_, "backbone", config_.dim, config_.levels, rng);
    meta_ = MetaStage(store_, "meta", config_.num_meta_points, dc, rng);
    refine_ = RefineStage(store_, "refine", config_.num_meta_points, dc, rng);
}

ForwardResult MetaPointModel::forward(const EpisodeView& episode) const {
    if (episode.query.image == nullptr || episode.supports.empty()) throw std::invalid_argument("forward: incomplete episode");
    ForwardResult out;
    out.active = active_keypoints(episode.supports);
    if (out.active.empty()) throw std::invalid_argument("forward: no keypoint is visible on every support");
    if (static_cast<int>(out.active.size()) > config_.num_meta_points) {
        throw std::invalid_argument("forward: more keypoints than meta-points");
    }

    const CostOptions cost_options{config_.effective_slack(), config_.effective_alpha()};
    std::vector<ShotSupport> shots;
    for (const auto& support : episode.supports) {
        const FeaturePyramid pyr = pyramid(*support.image);
        const MetaState meta_s = meta_.predict_meta(pyr);
        const PointSet gt = select(support.keypoints, out.active);
        ShotSupport shot;
        shot.cost = cost_matrix(MetaPrediction::from(meta_s), gt, cost_options);
        shot.meta_embeddings = meta_s.layer(0).embeddings;
        shot.keypoint_features = soft_roi_pool(pyr, gt, config_.pool_sigma);
        shots.push_back(std::move(shot));
    }
    out.support = nshot_aggregate(shots);

    const FeaturePyramid pyr_q = pyramid(*episode.query.image);
    out.query_meta = meta_.predict_meta(pyr_q);
    for (const auto& layer : out.query_meta.per_layer) {
        out.assigned_meta.push_back(ag::gather_rows(layer.points, out.support.assignment.delta));
    }

    const SupportBundle bundle{out.support.keypoint_features, out.support.assigned_embeddings, out.support.assignment};
    const RefineOptions options{config_.ablation.support_features, config_.ablation.support_embeddings,
                                config_.refine_from_layer};
    for (const auto& s : refine_.refine(out.query_meta, bundle, pyr_q, options)) out.refined.push_back(s.points);
    return out;
}

ag::Var MetaPointModel::loss(const ForwardResult& result, const AnnotatedImage& query, LossReport* report) const {
    const PointSet gt = select(query.keypoints, result.active);
    const std::vector<bool> mask_vec = select(query.mask, result.active);
    // std::vector<bool> has no contiguous storage; copy into a plain array for spans
    const std::unique_ptr<bool[]> mask(new bool[mask_vec.size()]);
    for (std::size_t i = 0; i < mask_vec.size(); ++i) mask[i] = mask_vec[i];
    const std::span<const bool> mask_span(mask.get(), mask_vec.size());

    const double slack = config_.effective_slack();
    const ag::Var reg = regression_loss(result.assigned_meta, result.refined, gt, mask_span, slack);

    // Visibility targets: assigned meta-points whose keypoint is visible on the query.
    Assignment visible;
    visible.meta_points = result.support.assignment.meta_points;
    for (std::size_t i = 0; i < mask_vec.size(); ++i) {
        if (mask_vec[i]) visible.delta.push_back(result.support.assignment.delta[i]);
    }
    const ag::Var vis = visibility_loss(result.query_meta.visibility, visible);
    const double alpha = config_.effective_alpha();
    const ag::Var full = config_.ablation.visibility ? ag::add(reg, ag::scale(vis, alpha)) : reg;

    if (report != nullptr) {
        report->reg = reg.item();
        report->vis = vis.item();
        report->full = full.item();
        report->per_layer_meta.clear();
        report->per_layer_refined.clear();
        const int total = static_cast<int>(result.refined.size());
        for (int l = 1; l <= total; ++l) {
            report->per_layer_meta.push_back(
                slacked_l1(result.assigned_meta[static_cast<std::size_t>(l - 1)], gt, mask_span, l, total, slack).item());
            report->per_layer_refined.push_back(
                slacked_l1(result.refined[static_cast<std::size_t>(l - 1)], gt, mask_span, l, total, slack).item());
        }
    }
    return full;
}

PointSet grid_baseline_prediction(const EpisodeView& episode, int num_meta_points) {
    const std::vector<int> active = active_keypoints(episode.supports);
    const PointSet grid = uniform_grid(num_meta_points);
    const int k = static_cast<int>(active.size());
    std::vector<CostMatrix> costs;
    for (const auto& support : episode.supports) {
        CostMatrix c(num_meta_points, k);
        for (int m = 0; m < num_meta_points; ++m) {
            for (int j = 0; j < k; ++j) {
                const Point2 g = grid[static_cast<std::size_t>(m)];
                const Point2 p = support.keypoints[static_cast<std::size_t>(active[static_cast<std::size_t>(j)])];
                c.at(m, j) = std::fabs(g.x - p.x) + std::fabs(g.y - p.y);
            }
        }
        costs.push_back(std::move(c));
    }
    const Assignment a = solve_assignment(mean_cost(costs));
    std::vector<Point2> out(episode.query.keypoints.size(), Point2{0.5, 0.5});
    for (int j = 0; j < k; ++j) {
        out[static_cast<std::size_t>(active[static_cast<std::size_t>(j)])] = grid[static_cast<std::size_t>(a.delta[static_cast<std::size_t>(j)])];
    }
    return PointSet(std::move(out));
}

}  // namespace metapoint
