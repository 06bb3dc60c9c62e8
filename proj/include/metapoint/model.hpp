// SPDX-License-Identifier: Apache-2.0
#pragma once

// End-to-end model: shared backbone, support-free meta stage run on query and
// supports alike, support-side assignment, and the refinement stage.

#include <cstdint>
#include <span>
#include <vector>

#include "metapoint/assignment.hpp"
#include "metapoint/backbone.hpp"
#include "metapoint/config.hpp"
#include "metapoint/episodes.hpp"
#include "metapoint/losses.hpp"
#include "metapoint/meta_stage.hpp"
#include "metapoint/refine.hpp"

namespace metapoint {

/// One image with its annotation. Keypoints with mask false are treated as
/// absent everywhere.
struct AnnotatedImage {
    const Image* image = nullptr;
    PointSet keypoints;
    std::vector<bool> mask;
    BoundingBox bbox;
};

[[nodiscard]] AnnotatedImage annotated(const Sample& sample);

struct EpisodeView {
    AnnotatedImage query;
    std::vector<AnnotatedImage> supports;
};

[[nodiscard]] EpisodeView view_of(const Episode& episode);

/// Keypoints visible on every support, in ascending order. Only these are
/// matched, refined, and scored.
[[nodiscard]] std::vector<int> active_keypoints(std::span<const AnnotatedImage> supports);

struct ForwardResult {
    std::vector<int> active;           // original keypoint index per row
    AggregatedSupport support;         // cost and assignment over the active rows
    MetaState query_meta;
    std::vector<ag::Var> assigned_meta;  // L tensors, |active| x 2
    std::vector<ag::Var> refined;        // L tensors, |active| x 2

    /// Full-length K predictions; inactive rows hold (0.5, 0.5).
    [[nodiscard]] PointSet metapoint_prediction(int keypoint_count) const;
    [[nodiscard]] PointSet refined_prediction(int keypoint_count) const;
};

class MetaPointModel {
public:
    explicit MetaPointModel(const RunConfig& config);

    [[nodiscard]] const RunConfig& config() const { return config_; }
    [[nodiscard]] nn::ParameterStore& parameters() { return store_; }
    [[nodiscard]] const nn::ParameterStore& parameters() const { return store_; }
    [[nodiscard]] const Backbone& backbone() const { return backbone_; }
    [[nodiscard]] const MetaStage& meta_stage() const { return meta_; }
    [[nodiscard]] const RefineStage& refine_stage() const { return refine_; }

    [[nodiscard]] FeaturePyramid pyramid(const Image& image) const { return backbone_.extract_pyramid(image); }
    [[nodiscard]] MetaState predict_meta(const Image& image) const { return meta_.predict_meta(pyramid(image)); }

    /// Both stages on one episode. Throws std::invalid_argument when no
    /// keypoint is visible on every support or K > M.
    [[nodiscard]] ForwardResult forward(const EpisodeView& episode) const;

    /// Full objective on a forward result against the query annotation.
    [[nodiscard]] ag::Var loss(const ForwardResult& result, const AnnotatedImage& query, LossReport* report = nullptr) const;

private:
    RunConfig config_;
    nn::ParameterStore store_;
    Backbone backbone_;
    MetaStage meta_;
    RefineStage refine_;
};

/// Matching of the support keypoints onto a fixed uniform grid of M points
/// by L1 distance, with the grid points reported as the query prediction.
/// Support images are never looked at, only their annotations.
[[nodiscard]] PointSet grid_baseline_prediction(const EpisodeView& episode, int num_meta_points);

}  // namespace metapoint
