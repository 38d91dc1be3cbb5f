#pragma once

#include <cstdint>
#include <filesystem>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "matter/tensor.hpp"

namespace matter {

struct MultiSpectralImage {
  Tensor pixels;  // [B,H,W]
  std::string region_id;
  std::int64_t timestamp = 0;

  int bands() const { return pixels.dim(0); }
  int height() const { return pixels.dim(1); }
  int width() const { return pixels.dim(2); }

  // Throws DataError unless the raster is [B,H,W], finite and non-negative.
  void validate() const;
  // Cosine similarity between pixels is constant for single-band rasters.
  bool cosine_informative() const { return bands() >= 2; }
};

struct CatalogEntry {
  std::string region_id;
  std::int64_t timestamp = 0;
  double cloud_cover = 0.0;
  double data_coverage = 1.0;
  std::string path;

  friend bool operator==(const CatalogEntry&, const CatalogEntry&) = default;
};

// P aligned patch stacks, each [P,B,h,w]. Row k of anchor and positive
// covers the same pixel window of their source images.
struct Triplet {
  Tensor anchor;
  Tensor positive;
  Tensor negative;
  std::string anchor_region;
  std::string negative_region;
  std::int64_t anchor_time = 0;
  std::int64_t positive_time = 0;
  std::vector<std::pair<int, int>> origins;  // (row, col) of each aligned patch

  int patches() const { return anchor.dim(0); }
  friend bool operator==(const Triplet&, const Triplet&) = default;
};

// Raster file: "MSR1 <B> <H> <W>\n" then B·H·W little-endian f32,
// band-sequential, row-major.
Tensor read_raster(const std::filesystem::path& path);
void write_raster(const std::filesystem::path& path, const Tensor& pixels);
MultiSpectralImage load_image(const CatalogEntry& entry);

// Tab-separated manifest "region  timestamp  cloud  coverage  path"; '#'
// starts a comment. Relative paths resolve against the manifest directory.
std::vector<CatalogEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path,
                    std::span<const CatalogEntry> entries);

struct CatalogFilter {
  double max_cloud_cover = 0.20;
  double min_data_coverage = 0.80;
  int max_per_region = 100;
};

// Drops cloudy or poorly covered scenes, keeps the earliest max_per_region
// per region and sorts by (region, timestamp).
std::vector<CatalogEntry> filter_catalog(std::span<const CatalogEntry> entries,
                                         const CatalogFilter& filter = {});

// Non-overlapping tile×tile crops in row-major order; partial remainders at
// the right and bottom are dropped.
std::vector<MultiSpectralImage> tile_image(const MultiSpectralImage& img,
                                           int tile);

// Catalog entries with their rasters loaded once.
struct Corpus {
  std::vector<CatalogEntry> entries;
  std::vector<MultiSpectralImage> images;

  static Corpus load(std::span<const CatalogEntry> entries);
};

// max_patches > 0 keeps a seeded random subset of the aligned tiles.
Triplet sample_triplet(const Corpus& corpus, std::uint64_t seed, int patch,
                       int max_patches = 0);
Triplet sample_triplet(std::span<const CatalogEntry> catalog,
                       std::uint64_t seed, int patch, int max_patches = 0);

// Copies the B×win×win reflect-padded window centred at (row, col) into dst.
void extract_window(const Tensor& pixels, int row, int col, int win, float* dst);

// One window per pixel in row-major order.
class DenseWindows {
 public:
  struct Window {
    int row = 0;
    int col = 0;
    Tensor patch;  // [B,win,win]
  };

  class iterator {
   public:
    using iterator_category = std::input_iterator_tag;
    using value_type = Window;
    using difference_type = std::ptrdiff_t;
    using pointer = const Window*;
    using reference = const Window&;

    iterator() = default;
    iterator(const DenseWindows* owner, std::size_t index);
    reference operator*() const { return current_; }
    pointer operator->() const { return &current_; }
    iterator& operator++();
    iterator operator++(int) {
      iterator tmp = *this;
      ++*this;
      return tmp;
    }
    friend bool operator==(const iterator& a, const iterator& b) {
      return a.index_ == b.index_;
    }

   private:
    void load();
    const DenseWindows* owner_ = nullptr;
    std::size_t index_ = 0;
    Window current_;
  };

  DenseWindows(const MultiSpectralImage& img, int win);
  iterator begin() const { return iterator(this, 0); }
  iterator end() const { return iterator(this, count()); }
  std::size_t count() const {
    return static_cast<std::size_t>(img_->height()) * img_->width();
  }
  int window() const { return win_; }

 private:
  const MultiSpectralImage* img_;
  int win_;
};

DenseWindows dense_windows(const MultiSpectralImage& img, int win);

// Gathers windows centred on pixels [first, first + count) (row-major pixel
// index) into a [count,B,win,win] batch.
Tensor window_batch(const Tensor& pixels, int win, std::size_t first,
                    std::size_t count);

enum class TextureKind { checkerboard, grating, noise };

struct SynthSpec {
  std::uint64_t seed = 7;
  int regions = 4;
  int timesteps = 8;
  int height = 64;
  int width = 64;
  int bands = 4;
  std::vector<TextureKind> textures{TextureKind::checkerboard,
                                    TextureKind::grating, TextureKind::noise};
  double gain_min = 0.7;
  double gain_max = 1.3;
  double noise_sigma = 0.01;
  int segments = 5;       // Voronoi cells per region layout
  int heldout_pairs = 4;  // change pairs written under heldout/

  void validate() const;
  friend bool operator==(const SynthSpec&, const SynthSpec&) = default;
};

std::string texture_name(TextureKind kind);
TextureKind parse_texture(const std::string& name);

struct HeldoutPair {
  std::string name;
  std::filesystem::path before, after, change, labels;
};

struct SynthOutput {
  std::filesystem::path manifest;
  std::vector<CatalogEntry> catalog;
  std::vector<HeldoutPair> pairs;
  std::filesystem::path mosaic, mosaic_labels;
};

// Writes region rasters, per-region label maps, catalog.tsv and the held-out
// evaluation set (change pairs with ground-truth masks plus one mosaic that
// contains every texture class). Output is a pure function of the spec.
SynthOutput synth_generate(const SynthSpec& spec,
                           const std::filesystem::path& out_dir);

// Reads heldout/index.tsv written by synth_generate.
std::vector<HeldoutPair> read_heldout_index(const std::filesystem::path& dir);

}  // namespace matter
