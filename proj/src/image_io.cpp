#include "matter/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <random>

#include "matter/random.hpp"

namespace matter {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

void write_png(const std::filesystem::path& path, int width, int height,
               int color_type, int channels, const std::vector<std::uint8_t>& pixels) {
  if (width <= 0 || height <= 0) throw ShapeError("cannot write an empty PNG");
  if (pixels.size() != static_cast<std::size_t>(width) * height * channels)
    throw ShapeError("PNG pixel buffer has the wrong size");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw DataError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    throw DataError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, pixels.data() + static_cast<std::size_t>(y) * width * channels);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void plane_extents(const Tensor& map, int& h, int& w) {
  if (map.rank() == 2) {
    h = map.dim(0);
    w = map.dim(1);
  } else if (map.rank() == 3 && map.dim(0) == 1) {
    h = map.dim(1);
    w = map.dim(2);
  } else {
    throw ShapeError("expected a [H,W] or [1,H,W] map, got " + map.shape_string());
  }
}

std::vector<double> stretched(const Tensor& map) {
  std::vector<double> out(map.size());
  if (map.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(map.values().begin(), map.values().end());
  const double lo = *lo_it, span = *hi_it - *lo_it;
  for (std::size_t i = 0; i < map.size(); ++i)
    out[i] = span > 0 ? (map[i] - lo) / span : 0.0;
  return out;
}

std::uint8_t byte(double unit) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(unit, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_png_rgb(const std::filesystem::path& path, int width, int height,
                   const std::vector<std::uint8_t>& rgb) {
  write_png(path, width, height, PNG_COLOR_TYPE_RGB, 3, rgb);
}

void write_png_gray(const std::filesystem::path& path, const Tensor& map) {
  int h = 0, w = 0;
  plane_extents(map, h, w);
  const std::vector<double> u = stretched(map);
  std::vector<std::uint8_t> px(u.size());
  std::transform(u.begin(), u.end(), px.begin(), byte);
  write_png(path, w, h, PNG_COLOR_TYPE_GRAY, 1, px);
}

void write_png_heatmap(const std::filesystem::path& path, const Tensor& map) {
  int h = 0, w = 0;
  plane_extents(map, h, w);
  const std::vector<double> u = stretched(map);
  std::vector<std::uint8_t> px;
  px.reserve(u.size() * 3);
  for (double v : u) {
    px.push_back(byte(v));
    px.push_back(byte(1.0 - std::abs(2.0 * v - 1.0)));
    px.push_back(byte(1.0 - v));
  }
  write_png_rgb(path, w, h, px);
}

std::vector<Rgb> word_palette(int clusters, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "palette"));
  std::uniform_int_distribution<int> dist(32, 255);
  std::vector<Rgb> palette(static_cast<std::size_t>(std::max(clusters, 0)));
  for (Rgb& c : palette)
    for (auto& ch : c) ch = static_cast<std::uint8_t>(dist(rng));
  return palette;
}

void write_png_words(const std::filesystem::path& path, const WordMap& words,
                     std::uint64_t seed) {
  const std::vector<Rgb> palette = word_palette(words.clusters, seed);
  std::vector<std::uint8_t> px;
  px.reserve(words.words.size() * 3);
  for (int word : words.words) {
    if (word < 0 || word >= words.clusters) throw ShapeError("word index out of range");
    const Rgb& c = palette[static_cast<std::size_t>(word)];
    px.insert(px.end(), c.begin(), c.end());
  }
  write_png_rgb(path, words.width, words.height, px);
}

}  // namespace matter
