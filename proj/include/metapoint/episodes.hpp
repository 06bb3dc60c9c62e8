// SPDX-License-Identifier: Apache-2.0
#pragma once

// Procedural multi-class keypoint dataset and episodic sampling.
//
// On-disk layout:
//   root/manifest.json
//   root/images/<class_id>/<sample_id>.png   (8-bit RGB)

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "metapoint/geometry.hpp"
#include "metapoint/image.hpp"
#include "metapoint/metrics.hpp"

namespace metapoint {

inline constexpr int kManifestSchemaVersion = 1;

enum class Split { Train, Val, Test };

[[nodiscard]] std::string to_string(Split s);
[[nodiscard]] Split split_from_string(const std::string& s);

/// The four shape super-categories.
[[nodiscard]] const std::vector<std::string>& shape_families();

struct ClassRecord {
    int class_id = 0;
    std::string family;
    int keypoint_count = 0;
    Split split = Split::Train;
    std::vector<std::string> keypoint_names;
};

struct Sample {
    int sample_id = 0;
    int class_id = 0;
    PointSet keypoints;
    std::vector<bool> kp_mask;  // true = visible / annotated
    BoundingBox bbox;
    Image image;
};

struct Dataset {
    int schema_version = kManifestSchemaVersion;
    int image_size = 64;
    std::uint64_t seed = 0;
    std::vector<ClassRecord> classes;
    std::vector<Sample> samples;

    [[nodiscard]] const ClassRecord& class_record(int class_id) const;
    [[nodiscard]] std::vector<int> class_ids(Split split) const;
    [[nodiscard]] std::vector<int> sample_indices(int class_id) const;
};

struct GenerateSpec {
    int classes = 10;
    int per_class = 20;
    int image_size = 64;
    std::uint64_t seed = 0;
    double occlusion_rate = 0.1;
    double color_jitter = 0.06;  // per-sample offset range around the class colors
};

/// Deterministic in-memory generation. Throws std::invalid_argument for
/// fewer than 7 classes, a non-positive sample count, or an image size not
/// divisible by 16.
[[nodiscard]] Dataset generate_dataset(const GenerateSpec& spec);

/// Writes images and manifest under root (created if needed). Throws
/// std::runtime_error if the path cannot be written.
void write_dataset(const Dataset& dataset, const std::filesystem::path& root);

[[nodiscard]] Dataset load_dataset(const std::filesystem::path& root);

[[nodiscard]] std::string manifest_json(const Dataset& dataset);

struct Episode {
    int class_id = 0;
    const Sample* query = nullptr;
    std::vector<const Sample*> supports;
};

/// Uniform class from the candidates that have at least shots + 1 samples,
/// then shots + 1 distinct samples; the first is the query.
[[nodiscard]] Episode sample_episode(const Dataset& dataset, std::span<const int> class_ids, int shots,
                                     std::uint64_t seed);
[[nodiscard]] Episode sample_episode(const Dataset& dataset, Split split, int shots, std::uint64_t seed);

struct ClassPartition {
    std::vector<int> train;
    std::vector<int> test;
};

/// Every class of `held_out_family` goes to test, all others to train.
[[nodiscard]] ClassPartition cross_supercat_splits(const Dataset& dataset, const std::string& held_out_family);

}  // namespace metapoint
