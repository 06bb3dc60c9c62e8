// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "metapoint/assignment.hpp"
#include "metapoint/backbone.hpp"
#include "metapoint/decoder.hpp"
#include "metapoint/meta_stage.hpp"
#include "metapoint/nn.hpp"

namespace metapoint {

inline constexpr double kDefaultPoolSigma = 1.5;

/// Normalized Gaussian weights (H*W entries summing to 1) centered at the
/// keypoint, with sigma in cells of the H x W grid.
[[nodiscard]] std::vector<double> gaussian_pool_weights(int height, int width, Point2 center, double sigma);

/// K x D support keypoint features: Gaussian-weighted pooling of the
/// shallowest pyramid level around each keypoint.
[[nodiscard]] ag::Var soft_roi_pool(const FeaturePyramid& support_pyramid, const PointSet& support_gt,
                                    double sigma = kDefaultPoolSigma);

/// Support-side inputs of the refinement, row k for keypoint k.
struct SupportBundle {
    ag::Var support_features;             // F_s, K x D
    ag::Var assigned_support_embeddings;  // K x D
    Assignment assignment;
};

struct RefineOptions {
    bool use_support_features = true;
    bool use_support_embeddings = true;
    int from_layer = 0;  // 1-based meta layer; 0 = last
};

/// Refinement decoder plus the squeeze map over [query emb; support emb; F_s].
class RefineStage {
public:
    RefineStage() = default;
    RefineStage(nn::ParameterStore& store, const std::string& name, int num_meta_points, const DecoderConfig& cfg,
                std::mt19937_64& rng);

    /// Rowwise concat to K x 3D, then the learned K x D squeeze.
    [[nodiscard]] ag::Var fuse_embeddings(const ag::Var& assigned_query_embeddings,
                                          const ag::Var& assigned_support_embeddings,
                                          const ag::Var& support_features) const;

    /// Reorders the chosen query meta layer by the assignment, fuses, and
    /// decodes. Returns L states of K points in keypoint order. Keypoints are
    /// decoded internally in ascending meta-point order, so relabeling the
    /// support keypoints permutes the output rows exactly.
    [[nodiscard]] std::vector<DecoderState> refine(const MetaState& meta_q, const SupportBundle& bundle,
                                                   const FeaturePyramid& pyramid,
                                                   const RefineOptions& options = {}) const;

    [[nodiscard]] const PointDecoder& decoder() const { return decoder_; }

private:
    nn::Linear squeeze_;
    ag::Var identity_;  // M x D, gathered by the assignment
    PointDecoder decoder_;
    int dim_ = 0;
};

}  // namespace metapoint
