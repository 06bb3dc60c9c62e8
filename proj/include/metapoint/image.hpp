// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace metapoint {

/// H x W x 3 image with unit-interval intensities, row-major, RGB interleaved.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> rgb;

    Image() = default;
    Image(int h, int w) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, 0.0) {}

    [[nodiscard]] double& at(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    [[nodiscard]] double at(int y, int x, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    [[nodiscard]] bool empty() const { return rgb.empty(); }
};

/// 8-bit RGB PNG. Intensities are clamped to [0, 1] and rounded.
void write_png(const std::filesystem::path& path, const Image& image);
[[nodiscard]] Image read_png(const std::filesystem::path& path);

/// Quantizes intensities to the 8-bit grid write_png stores, so in-memory
/// images match their on-disk round trip exactly.
void quantize_8bit(Image& image);

}  // namespace metapoint
