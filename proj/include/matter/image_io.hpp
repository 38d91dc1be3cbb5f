#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "matter/tasks.hpp"

namespace matter {

using Rgb = std::array<std::uint8_t, 3>;

// 8-bit grayscale, linearly stretched from the map's [min, max].
// Accepts [H,W] or [1,H,W].
void write_png_gray(const std::filesystem::path& path, const Tensor& map);

// Blue-to-red ramp over [min, max], for feature magnitude views.
void write_png_heatmap(const std::filesystem::path& path, const Tensor& map);

// One seeded colour per cluster index.
std::vector<Rgb> word_palette(int clusters, std::uint64_t seed);
void write_png_words(const std::filesystem::path& path, const WordMap& words,
                     std::uint64_t seed);

void write_png_rgb(const std::filesystem::path& path, int width, int height,
                   const std::vector<std::uint8_t>& rgb);

}  // namespace matter
