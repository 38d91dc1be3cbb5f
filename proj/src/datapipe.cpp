#include "matter/datapipe.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "matter/numcore.hpp"
#include "matter/random.hpp"

namespace matter {

namespace fs = std::filesystem;

void MultiSpectralImage::validate() const {
  if (pixels.rank() != 3 || pixels.dim(0) < 1 || pixels.dim(1) < 1 ||
      pixels.dim(2) < 1)
    throw DataError("image must be a non-empty [B,H,W] raster, got " +
                    pixels.shape_string());
  for (float v : pixels.values())
    if (!std::isfinite(v) || v < 0.0f)
      throw DataError("image " + region_id +
                      " has a negative or non-finite pixel value");
}

namespace {

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) |
        (v >> 24);
  }
  return v;
}

}  // namespace

Tensor read_raster(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open raster " + path.string());
  std::string header;
  if (!std::getline(in, header))
    throw DataError("raster " + path.string() + " has no header");
  std::istringstream hs(header);
  std::string magic;
  long b = 0, h = 0, w = 0;
  if (!(hs >> magic >> b >> h >> w) || magic != "MSR1" || b < 1 || h < 1 ||
      w < 1)
    throw DataError("raster " + path.string() + " has a malformed MSR1 header");
  const std::size_t count = static_cast<std::size_t>(b * h * w);
  std::vector<float> data(count);
  std::vector<std::uint32_t> raw(count);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(count * sizeof(std::uint32_t)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(std::uint32_t))
    throw DataError("raster " + path.string() + " is truncated");
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t bits = to_little(raw[i]);
    std::memcpy(&data[i], &bits, sizeof(float));
  }
  return Tensor({static_cast<int>(b), static_cast<int>(h), static_cast<int>(w)},
                std::move(data));
}

void write_raster(const fs::path& path, const Tensor& pixels) {
  if (pixels.rank() != 3) throw ShapeError("write_raster expects [B,H,W]");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write raster " + path.string());
  out << "MSR1 " << pixels.dim(0) << ' ' << pixels.dim(1) << ' '
      << pixels.dim(2) << '\n';
  std::vector<std::uint32_t> raw(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &pixels[i], sizeof(float));
    raw[i] = to_little(bits);
  }
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(std::uint32_t)));
  if (!out) throw DataError("failed writing raster " + path.string());
}

MultiSpectralImage load_image(const CatalogEntry& entry) {
  MultiSpectralImage img{read_raster(entry.path), entry.region_id,
                         entry.timestamp};
  img.validate();
  return img;
}

std::vector<CatalogEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  std::vector<CatalogEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 5)
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": expected 5 tab-separated fields");
    CatalogEntry e;
    try {
      e.region_id = fields[0];
      e.timestamp = std::stoll(fields[1]);
      e.cloud_cover = std::stod(fields[2]);
      e.data_coverage = std::stod(fields[3]);
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": malformed numeric field");
    }
    if (e.cloud_cover < 0 || e.cloud_cover > 1 || e.data_coverage < 0 ||
        e.data_coverage > 1)
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": fractions must lie in [0,1]");
    fs::path p = fields[4];
    e.path = (p.is_relative() ? base / p : p).string();
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const fs::path& path, std::span<const CatalogEntry> entries) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  const fs::path base = path.parent_path();
  out << "# region_id\ttimestamp\tcloud\tcoverage\tpath\n";
  for (const CatalogEntry& e : entries) {
    fs::path p = e.path;
    if (!base.empty() && p.parent_path() == base) p = p.filename();
    out << e.region_id << '\t' << e.timestamp << '\t' << e.cloud_cover << '\t'
        << e.data_coverage << '\t' << p.string() << '\n';
  }
}

std::vector<CatalogEntry> filter_catalog(std::span<const CatalogEntry> entries,
                                         const CatalogFilter& filter) {
  std::vector<CatalogEntry> kept;
  for (const CatalogEntry& e : entries)
    if (e.cloud_cover <= filter.max_cloud_cover &&
        e.data_coverage >= filter.min_data_coverage)
      kept.push_back(e);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const CatalogEntry& a, const CatalogEntry& b) {
                     if (a.region_id != b.region_id)
                       return a.region_id < b.region_id;
                     return a.timestamp < b.timestamp;
                   });
  std::vector<CatalogEntry> out;
  std::map<std::string, int> per_region;
  for (CatalogEntry& e : kept)
    if (per_region[e.region_id]++ < filter.max_per_region)
      out.push_back(std::move(e));
  return out;
}

std::vector<MultiSpectralImage> tile_image(const MultiSpectralImage& img,
                                           int tile) {
  if (tile < 1) throw ShapeError("tile size must be positive");
  if (img.height() < tile || img.width() < tile)
    throw ShapeError("image " + img.pixels.shape_string() +
                     " is smaller than tile " + std::to_string(tile));
  const int rows = img.height() / tile;
  const int cols = img.width() / tile;
  const int bands = img.bands();
  std::vector<MultiSpectralImage> tiles;
  tiles.reserve(static_cast<std::size_t>(rows * cols));
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      Tensor t({bands, tile, tile});
      for (int b = 0; b < bands; ++b)
        for (int y = 0; y < tile; ++y)
          std::memcpy(&t.at(b, y, 0), &img.pixels.at(b, r * tile + y, c * tile),
                      sizeof(float) * static_cast<std::size_t>(tile));
      tiles.push_back({std::move(t), img.region_id, img.timestamp});
    }
  return tiles;
}

Corpus Corpus::load(std::span<const CatalogEntry> entries) {
  Corpus corpus;
  corpus.entries.assign(entries.begin(), entries.end());
  std::stable_sort(corpus.entries.begin(), corpus.entries.end(),
                   [](const CatalogEntry& a, const CatalogEntry& b) {
                     if (a.region_id != b.region_id)
                       return a.region_id < b.region_id;
                     return a.timestamp < b.timestamp;
                   });
  for (const CatalogEntry& e : corpus.entries)
    corpus.images.push_back(load_image(e));
  return corpus;
}

namespace {

// Copies tile `index` of a tile×tile grid into row `row` of a patch stack.
void copy_tile(const Tensor& img, int tile, int origin_r, int origin_c,
               Tensor& stack, int row) {
  const int bands = img.dim(0);
  for (int b = 0; b < bands; ++b)
    for (int y = 0; y < tile; ++y)
      std::memcpy(&stack.at(row, b, y, 0), &img.at(b, origin_r + y, origin_c),
                  sizeof(float) * static_cast<std::size_t>(tile));
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace

Triplet sample_triplet(const Corpus& corpus, std::uint64_t seed, int patch,
                       int max_patches) {
  if (patch < 1) throw ShapeError("patch size must be positive");
  // Region boundaries in the (region, timestamp)-sorted corpus.
  std::vector<std::pair<std::size_t, std::size_t>> regions;
  for (std::size_t i = 0; i < corpus.entries.size();) {
    std::size_t j = i;
    while (j < corpus.entries.size() &&
           corpus.entries[j].region_id == corpus.entries[i].region_id)
      ++j;
    regions.emplace_back(i, j);
    i = j;
  }
  if (regions.size() < 2)
    throw DataError("triplet sampling needs at least two regions");
  std::vector<std::size_t> anchors;
  for (const auto& [lo, hi] : regions)
    for (std::size_t i = lo; i + 1 < hi; ++i) anchors.push_back(i);
  if (anchors.empty())
    throw DataError("no region has a temporally succeeding image");

  Rng rng(seed);
  const std::size_t a = anchors[uniform_index(rng, anchors.size())];
  const std::size_t p = a + 1;
  std::size_t anchor_region = 0;
  while (!(regions[anchor_region].first <= a && a < regions[anchor_region].second))
    ++anchor_region;
  std::size_t neg_region = uniform_index(rng, regions.size() - 1);
  if (neg_region >= anchor_region) ++neg_region;
  const auto [nlo, nhi] = regions[neg_region];
  const std::size_t n = nlo + uniform_index(rng, nhi - nlo);

  const MultiSpectralImage& ia = corpus.images[a];
  const MultiSpectralImage& ip = corpus.images[p];
  const MultiSpectralImage& in = corpus.images[n];
  if (ia.pixels.shape() != ip.pixels.shape())
    throw DataError("anchor and positive rasters of " + ia.region_id +
                    " are not aligned");
  if (in.bands() != ia.bands())
    throw DataError("negative region " + in.region_id + " has a different band count");
  if (ia.height() < patch || ia.width() < patch || in.height() < patch ||
      in.width() < patch)
    throw ShapeError("image smaller than training patch");

  std::vector<std::pair<int, int>> origins;
  for (int r = 0; r + patch <= ia.height(); r += patch)
    for (int c = 0; c + patch <= ia.width(); c += patch) origins.emplace_back(r, c);
  std::vector<std::pair<int, int>> neg_origins;
  for (int r = 0; r + patch <= in.height(); r += patch)
    for (int c = 0; c + patch <= in.width(); c += patch)
      neg_origins.emplace_back(r, c);
  std::shuffle(neg_origins.begin(), neg_origins.end(), rng);
  if (max_patches > 0 && static_cast<int>(origins.size()) > max_patches) {
    std::shuffle(origins.begin(), origins.end(), rng);
    origins.resize(static_cast<std::size_t>(max_patches));
  }

  const int count = static_cast<int>(origins.size());
  const int bands = ia.bands();
  Triplet t;
  t.anchor = Tensor({count, bands, patch, patch});
  t.positive = Tensor({count, bands, patch, patch});
  t.negative = Tensor({count, bands, patch, patch});
  for (int k = 0; k < count; ++k) {
    const auto [r, c] = origins[static_cast<std::size_t>(k)];
    copy_tile(ia.pixels, patch, r, c, t.anchor, k);
    copy_tile(ip.pixels, patch, r, c, t.positive, k);
    const auto [nr, nc] = neg_origins[static_cast<std::size_t>(k) % neg_origins.size()];
    copy_tile(in.pixels, patch, nr, nc, t.negative, k);
  }
  t.anchor_region = ia.region_id;
  t.negative_region = in.region_id;
  t.anchor_time = ia.timestamp;
  t.positive_time = ip.timestamp;
  t.origins = std::move(origins);
  return t;
}

Triplet sample_triplet(std::span<const CatalogEntry> catalog,
                       std::uint64_t seed, int patch, int max_patches) {
  return sample_triplet(Corpus::load(catalog), seed, patch, max_patches);
}

void extract_window(const Tensor& pixels, int row, int col, int win,
                    float* dst) {
  const int bands = pixels.dim(0);
  const int h = pixels.dim(1);
  const int w = pixels.dim(2);
  const int r = win / 2;
  for (int b = 0; b < bands; ++b)
    for (int y = 0; y < win; ++y) {
      const int sy = reflect_index(row + y - r, h);
      const float* line = &pixels.at(b, sy, 0);
      for (int x = 0; x < win; ++x)
        *dst++ = line[reflect_index(col + x - r, w)];
    }
}

Tensor window_batch(const Tensor& pixels, int win, std::size_t first,
                    std::size_t count) {
  if (win < 1 || win % 2 == 0) throw ShapeError("window size must be odd");
  const int bands = pixels.dim(0);
  const int w = pixels.dim(2);
  Tensor batch({static_cast<int>(count), bands, win, win});
  const std::size_t stride = static_cast<std::size_t>(bands) * win * win;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t pix = first + i;
    extract_window(pixels, static_cast<int>(pix / w), static_cast<int>(pix % w),
                   win, batch.data() + i * stride);
  }
  return batch;
}

DenseWindows::DenseWindows(const MultiSpectralImage& img, int win)
    : img_(&img), win_(win) {
  if (win < 1 || win % 2 == 0) throw ShapeError("window size must be odd");
}

DenseWindows::iterator::iterator(const DenseWindows* owner, std::size_t index)
    : owner_(owner), index_(index) {
  load();
}

DenseWindows::iterator& DenseWindows::iterator::operator++() {
  ++index_;
  load();
  return *this;
}

void DenseWindows::iterator::load() {
  if (!owner_ || index_ >= owner_->count()) return;
  const Tensor& px = owner_->img_->pixels;
  const int w = px.dim(2);
  current_.row = static_cast<int>(index_ / w);
  current_.col = static_cast<int>(index_ % w);
  current_.patch = Tensor({px.dim(0), owner_->win_, owner_->win_});
  extract_window(px, current_.row, current_.col, owner_->win_,
                 current_.patch.data());
}

DenseWindows dense_windows(const MultiSpectralImage& img, int win) {
  return DenseWindows(img, win);
}

// ---------------------------------------------------------------------------
// Synthetic corpus

void SynthSpec::validate() const {
  if (textures.size() < 2) throw ConfigError("synth needs at least two texture classes");
  if (timesteps < 2) throw ConfigError("synth needs at least two timesteps");
  if (regions < 1 || height < 1 || width < 1 || bands < 1)
    throw ConfigError("synth extents must be positive");
  if (gain_min <= 0 || gain_max < gain_min)
    throw ConfigError("synth gain range must be positive and ordered");
  if (noise_sigma < 0) throw ConfigError("synth noise sigma must be non-negative");
  if (segments < 1) throw ConfigError("synth segments must be positive");
  if (heldout_pairs < 0) throw ConfigError("synth heldout_pairs must be non-negative");
}

std::string texture_name(TextureKind kind) {
  switch (kind) {
    case TextureKind::checkerboard: return "checkerboard";
    case TextureKind::grating: return "grating";
    case TextureKind::noise: return "noise";
  }
  return "unknown";
}

TextureKind parse_texture(const std::string& name) {
  if (name == "checkerboard") return TextureKind::checkerboard;
  if (name == "grating") return TextureKind::grating;
  if (name == "noise") return TextureKind::noise;
  throw ConfigError("unknown texture class '" + name + "'");
}

namespace {

double uniform(Rng& rng, double lo, double hi) {
  if (!(hi > lo)) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Intensity modulation in [0.5, 1] for one texture instance over H×W.
std::vector<double> texture_field(TextureKind kind, int h, int w, Rng& rng) {
  std::vector<double> f(static_cast<std::size_t>(h) * w);
  switch (kind) {
    case TextureKind::checkerboard: {
      const int period = 3 + static_cast<int>(uniform_index(rng, 3));
      const int oy = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(period)));
      const int ox = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(period)));
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          f[y * w + x] = (((y + oy) / period + (x + ox) / period) % 2) ? 1.0 : 0.55;
      break;
    }
    case TextureKind::grating: {
      const double wavelength = uniform(rng, 4.0, 8.0);
      const double angle = uniform(rng, 0.0, std::numbers::pi);
      const double phase = uniform(rng, 0.0, 2 * std::numbers::pi);
      const double cy = std::sin(angle), cx = std::cos(angle);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          f[y * w + x] =
              0.75 + 0.25 * std::sin(2 * std::numbers::pi * (x * cx + y * cy) /
                                         wavelength + phase);
      break;
    }
    case TextureKind::noise: {
      std::normal_distribution<double> gauss(0.0, 1.0);
      std::vector<double> raw(f.size());
      for (double& v : raw) v = gauss(rng);
      // 3×3 box blur gives spatial correlation; the same field modulates
      // every band, so the noise is band-correlated.
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double s = 0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
              s += raw[reflect_index(y + dy, h) * w + reflect_index(x + dx, w)];
          const double v = std::clamp(s / 3.0, -1.0, 1.0);
          f[y * w + x] = 0.75 + 0.25 * v;
        }
      break;
    }
  }
  return f;
}

struct Layout {
  std::vector<int> segment;  // per pixel
  std::vector<int> segment_class;
  std::vector<std::size_t> segment_area;
};

// Random layouts scatter `segments` Voronoi seeds uniformly. Balanced layouts
// put one seed per class on a circle around the centre, which yields sectors
// of near-equal area.
Layout make_layout(const SynthSpec& spec, Rng& rng, bool balanced) {
  const int h = spec.height, w = spec.width;
  const int classes = static_cast<int>(spec.textures.size());
  const int nseg = balanced ? classes : spec.segments;
  std::vector<std::pair<double, double>> seeds(static_cast<std::size_t>(nseg));
  if (balanced) {
    const double phase = uniform(rng, 0, 2 * std::numbers::pi);
    const double radius = 0.25 * std::min(h, w);
    for (int s = 0; s < nseg; ++s) {
      const double a = phase + 2 * std::numbers::pi * s / nseg;
      seeds[s] = {0.5 * h + radius * std::sin(a), 0.5 * w + radius * std::cos(a)};
    }
  } else {
    for (auto& s : seeds) s = {uniform(rng, 0, h), uniform(rng, 0, w)};
  }
  Layout layout;
  layout.segment.resize(static_cast<std::size_t>(h) * w);
  layout.segment_area.assign(static_cast<std::size_t>(nseg), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int best = 0;
      double best_d = 1e300;
      for (int s = 0; s < nseg; ++s) {
        const double dy = y + 0.5 - seeds[s].first, dx = x + 0.5 - seeds[s].second;
        const double d = dy * dy + dx * dx;
        if (d < best_d) {
          best_d = d;
          best = s;
        }
      }
      layout.segment[y * w + x] = best;
      ++layout.segment_area[best];
    }
  std::vector<int> perm(static_cast<std::size_t>(classes));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (int s = 0; s < nseg; ++s) layout.segment_class.push_back(perm[s % classes]);
  return layout;
}

struct Scene {
  Layout layout;
  std::vector<std::vector<double>> fields;  // one per texture class
};

Scene make_scene(const SynthSpec& spec, Rng& rng, bool balanced = false) {
  Scene scene{make_layout(spec, rng, balanced), {}};
  for (TextureKind kind : spec.textures)
    scene.fields.push_back(texture_field(kind, spec.height, spec.width, rng));
  return scene;
}

Tensor render(const SynthSpec& spec, const Scene& scene,
              const std::vector<int>& segment_class,
              const std::vector<std::vector<double>>& signatures, Rng& rng) {
  const double gain = uniform(rng, spec.gain_min, spec.gain_max);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Tensor img({spec.bands, spec.height, spec.width});
  const std::size_t pixels = static_cast<std::size_t>(spec.height) * spec.width;
  for (int b = 0; b < spec.bands; ++b)
    for (std::size_t i = 0; i < pixels; ++i) {
      const int c = segment_class[scene.layout.segment[i]];
      double v = gain * signatures[c][b] * scene.fields[c][i];
      if (spec.noise_sigma > 0) v += spec.noise_sigma * gauss(rng);
      img[b * pixels + i] = static_cast<float>(std::max(0.0, v));
    }
  return img;
}

Tensor label_map(const SynthSpec& spec, const Scene& scene,
                 const std::vector<int>& segment_class) {
  Tensor labels({1, spec.height, spec.width});
  for (std::size_t i = 0; i < labels.size(); ++i)
    labels[i] = static_cast<float>(segment_class[scene.layout.segment[i]]);
  return labels;
}

std::string numbered(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%02d", prefix, i);
  return buf;
}

}  // namespace

SynthOutput synth_generate(const SynthSpec& spec, const fs::path& out_dir) {
  spec.validate();
  fs::create_directories(out_dir / "heldout");
  const int classes = static_cast<int>(spec.textures.size());

  Rng sig_rng(derive_seed(spec.seed, "signatures"));
  std::vector<std::vector<double>> signatures(static_cast<std::size_t>(classes));
  for (auto& s : signatures) {
    s.resize(static_cast<std::size_t>(spec.bands));
    for (double& v : s) v = uniform(sig_rng, 0.15, 1.0);
  }

  SynthOutput out;
  constexpr std::int64_t kEpoch = 1577836800;  // 2020-01-01
  constexpr std::int64_t kRevisit = 5 * 86400;
  for (int r = 0; r < spec.regions; ++r) {
    Rng rng(derive_seed(derive_seed(spec.seed, "region"), static_cast<std::uint64_t>(r)));
    const Scene scene = make_scene(spec, rng);
    const std::string region = numbered("region", r);
    write_raster(out_dir / (region + "_labels.msr"),
                 label_map(spec, scene, scene.layout.segment_class));
    for (int t = 0; t < spec.timesteps; ++t) {
      const std::string file = region + numbered("_t", t) + ".msr";
      write_raster(out_dir / file,
                   render(spec, scene, scene.layout.segment_class, signatures, rng));
      out.catalog.push_back({region, kEpoch + t * kRevisit, 0.0, 1.0,
                             (out_dir / file).string()});
    }
  }
  out.manifest = out_dir / "catalog.tsv";
  write_manifest(out.manifest, out.catalog);

  const fs::path held = out_dir / "heldout";
  std::ofstream index(held / "index.tsv", std::ios::trunc);
  index << "# name\tbefore\tafter\tchange\tlabels\n";
  for (int i = 0; i < spec.heldout_pairs; ++i) {
    Rng rng(derive_seed(derive_seed(spec.seed, "heldout"), static_cast<std::uint64_t>(i)));
    const Scene scene = make_scene(spec, rng);
    // Swap the texture of one sizeable segment.
    const std::size_t min_area = static_cast<std::size_t>(spec.height) *
                                 spec.width / (2 * static_cast<std::size_t>(spec.segments));
    std::vector<int> candidates;
    for (int s = 0; s < spec.segments; ++s)
      if (scene.layout.segment_area[s] >= min_area) candidates.push_back(s);
    if (candidates.empty()) {
      candidates.push_back(static_cast<int>(
          std::max_element(scene.layout.segment_area.begin(),
                           scene.layout.segment_area.end()) -
          scene.layout.segment_area.begin()));
    }
    const int swapped = candidates[uniform_index(rng, candidates.size())];
    std::vector<int> after_class = scene.layout.segment_class;
    int replacement = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(classes - 1)));
    if (replacement >= after_class[swapped]) ++replacement;
    after_class[swapped] = replacement;

    HeldoutPair pair;
    pair.name = numbered("pair", i);
    pair.before = held / (pair.name + "_before.msr");
    pair.after = held / (pair.name + "_after.msr");
    pair.change = held / (pair.name + "_change.msr");
    pair.labels = held / (pair.name + "_labels.msr");
    write_raster(pair.before, render(spec, scene, scene.layout.segment_class, signatures, rng));
    write_raster(pair.after, render(spec, scene, after_class, signatures, rng));
    Tensor change({1, spec.height, spec.width});
    for (std::size_t p = 0; p < change.size(); ++p)
      change[p] = scene.layout.segment[p] == swapped ? 1.0f : 0.0f;
    write_raster(pair.change, change);
    write_raster(pair.labels, label_map(spec, scene, scene.layout.segment_class));
    index << pair.name << '\t' << pair.before.filename().string() << '\t'
          << pair.after.filename().string() << '\t'
          << pair.change.filename().string() << '\t'
          << pair.labels.filename().string() << '\n';
    out.pairs.push_back(std::move(pair));
  }

  Rng rng(derive_seed(spec.seed, "mosaic"));
  SynthSpec mosaic_spec = spec;
  mosaic_spec.segments = classes;
  const Scene scene = make_scene(mosaic_spec, rng, true);
  out.mosaic = held / "mosaic.msr";
  out.mosaic_labels = held / "mosaic_labels.msr";
  write_raster(out.mosaic, render(mosaic_spec, scene, scene.layout.segment_class, signatures, rng));
  write_raster(out.mosaic_labels, label_map(mosaic_spec, scene, scene.layout.segment_class));
  return out;
}

std::vector<HeldoutPair> read_heldout_index(const fs::path& dir) {
  std::ifstream in(dir / "index.tsv");
  if (!in) throw DataError("cannot open " + (dir / "index.tsv").string());
  std::vector<HeldoutPair> pairs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    HeldoutPair p;
    std::string before, after, change, labels;
    if (!std::getline(ls, p.name, '\t') || !std::getline(ls, before, '\t') ||
        !std::getline(ls, after, '\t') || !std::getline(ls, change, '\t') ||
        !std::getline(ls, labels))
      throw DataError("malformed held-out index line: " + line);
    p.before = dir / before;
    p.after = dir / after;
    p.change = dir / change;
    p.labels = dir / labels;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace matter
