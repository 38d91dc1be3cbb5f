#include "matter/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "matter/parallel.hpp"

namespace matter {

OtsuResult otsu_threshold(std::span<const float> values, int bins) {
  if (values.empty()) throw DataError("otsu_threshold: no values");
  if (bins < 2) throw ConfigError("otsu_threshold: at least two bins required");
  float lo = values[0], hi = values[0];
  for (float v : values) {
    if (!std::isfinite(v)) throw NumericalError("otsu_threshold: non-finite value");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  OtsuResult res;
  if (!(hi > lo)) {
    res.threshold = lo;
    res.degenerate = true;
    return res;
  }
  const double width = (static_cast<double>(hi) - lo) / bins;
  std::vector<std::int64_t> count(static_cast<std::size_t>(bins), 0);
  for (float v : values) {
    int b = static_cast<int>((static_cast<double>(v) - lo) / width);
    count[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))] += 1;
  }
  const double total_n = static_cast<double>(values.size());
  double total_s = 0;
  for (int b = 0; b < bins; ++b) total_s += count[b] * (lo + (b + 0.5) * width);

  double best = -1;
  int first = 0;
  double n0 = 0, s0 = 0;
  for (int t = 1; t < bins; ++t) {
    n0 += count[t - 1];
    s0 += count[t - 1] * (lo + (t - 0.5) * width);
    const double n1 = total_n - n0;
    if (n0 == 0 || n1 == 0) continue;
    const double diff = s0 / n0 - (total_s - s0) / n1;
    const double var = (n0 / total_n) * (n1 / total_n) * diff * diff;
    // Splits within rounding of each other count as ties; the lowest wins.
    if (var > best + 1e-12 * std::abs(best)) {
      best = var;
      first = t;
    }
  }
  int last = first;
  while (last + 1 < bins && count[static_cast<std::size_t>(last)] == 0) ++last;
  res.edge = first + (last - first) / 2;
  res.threshold = lo + res.edge * width;
  return res;
}

Tensor dense_features(const MultiSpectralImage& img, const Model& model, int win) {
  if (win < 1 || win % 2 == 0) throw ShapeError("window size must be odd");
  retain_heap_memory();
  if (img.bands() != model.backbone.in_bands)
    throw ShapeError("image has " + std::to_string(img.bands()) +
                     " bands, model expects " + std::to_string(model.backbone.in_bands));
  const std::size_t pixels = static_cast<std::size_t>(img.height()) * img.width();
  const int dim = model.backbone.descriptor_dim;
  Tensor out({static_cast<int>(pixels), dim});
  constexpr std::size_t block = 1024;
  for (std::size_t first = 0; first < pixels; first += block) {
    const std::size_t count = std::min(block, pixels - first);
    const Tensor f = describe(model, window_batch(img.pixels, win, first, count));
    std::copy(f.data(), f.data() + f.size(), out.data() + first * dim);
  }
  return out;
}

Tensor change_scores(const MultiSpectralImage& before,
                     const MultiSpectralImage& after, const Model& model, int win) {
  if (before.pixels.shape() != after.pixels.shape())
    throw ShapeError("change pair shapes differ: " + before.pixels.shape_string() +
                     " vs " + after.pixels.shape_string());
  const Tensor f1 = dense_features(before, model, win);
  const Tensor f2 = dense_features(after, model, win);
  const int dim = f1.dim(1);
  Tensor score({before.height(), before.width()});
  for (std::size_t i = 0; i < score.size(); ++i) {
    const float* a = f1.data() + i * dim;
    const float* b = f2.data() + i * dim;
    double ss = 0;
    for (int d = 0; d < dim; ++d) {
      const double diff = static_cast<double>(a[d]) - b[d];
      ss += diff * diff;
    }
    score[i] = static_cast<float>(std::sqrt(ss));
  }
  return score;
}

ChangeMap threshold_scores(Tensor score) {
  ChangeMap map;
  const OtsuResult o = otsu_threshold(score.values());
  map.threshold = o.threshold;
  map.degenerate = o.degenerate;
  map.mask = Tensor(score.shape());
  if (!o.degenerate)
    for (std::size_t i = 0; i < score.size(); ++i)
      map.mask[i] = score[i] > o.threshold ? 1.0f : 0.0f;
  map.score = std::move(score);
  return map;
}

ChangeMap detect_change(const MultiSpectralImage& before,
                        const MultiSpectralImage& after, const Model& model, int win) {
  return threshold_scores(change_scores(before, after, model, win));
}

WordMap word_map(const MultiSpectralImage& img, const Model& model, int win) {
  if (win < 1 || win % 2 == 0) throw ShapeError("window size must be odd");
  const std::size_t pixels = static_cast<std::size_t>(img.height()) * img.width();
  WordMap map;
  map.height = img.height();
  map.width = img.width();
  map.clusters = model.bank.clusters();
  map.words.reserve(pixels);
  constexpr std::size_t block = 1024;
  for (std::size_t first = 0; first < pixels; first += block) {
    const std::size_t count = std::min(block, pixels - first);
    const Tensor z = describe_raw(model, window_batch(img.pixels, win, first, count));
    const std::vector<int> w = word_assign_batch(z, model.bank);
    map.words.insert(map.words.end(), w.begin(), w.end());
  }
  return map;
}

double f1_score(double precision, double recall) {
  return precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
}

PrfReport prf_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
  PrfReport r;
  r.tp = tp;
  r.fp = fp;
  r.fn = fn;
  r.precision = tp + fp > 0 ? 100.0 * tp / static_cast<double>(tp + fp) : 0.0;
  r.recall = tp + fn > 0 ? 100.0 * tp / static_cast<double>(tp + fn) : 0.0;
  r.f1 = f1_score(r.precision, r.recall);
  return r;
}

PrfReport prf1(const Tensor& pred, const Tensor& truth) {
  if (pred.shape() != truth.shape())
    throw ShapeError("prf1: prediction " + pred.shape_string() + " vs truth " +
                     truth.shape_string());
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] > 0.5f;
    const bool t = truth[i] > 0.5f;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  return prf_from_counts(tp, fp, fn);
}

std::vector<double> word_purity(const WordMap& words, const Tensor& labels) {
  if (labels.size() != words.words.size())
    throw ShapeError("word_purity: label map size differs from word map");
  std::map<int, std::map<int, std::int64_t>> hist;
  int max_class = -1;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int c = static_cast<int>(std::lround(labels[i]));
    if (c < 0) throw DataError("word_purity: negative class id");
    hist[c][words.words[i]] += 1;
    max_class = std::max(max_class, c);
  }
  std::vector<double> purity(static_cast<std::size_t>(max_class + 1), -1.0);
  for (const auto& [c, h] : hist) {
    std::int64_t total = 0, best = 0;
    for (const auto& [w, n] : h) {
      total += n;
      best = std::max(best, n);
    }
    purity[static_cast<std::size_t>(c)] = static_cast<double>(best) / total;
  }
  return purity;
}

PrfReport evaluate_pairs(const Model& model, std::span<const HeldoutPair> pairs,
                         int win) {
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (const HeldoutPair& pair : pairs) {
    MultiSpectralImage before, after;
    before.pixels = read_raster(pair.before);
    after.pixels = read_raster(pair.after);
    const Tensor truth = read_raster(pair.change);
    const ChangeMap map = detect_change(before, after, model, win);
    const PrfReport r = prf1(map.mask, truth.reshaped(map.mask.shape()));
    tp += r.tp;
    fp += r.fp;
    fn += r.fn;
  }
  return prf_from_counts(tp, fp, fn);
}

Model train_model(const Corpus& corpus, const ModelSetup& setup,
                  const TrainConfig& train, std::vector<float>* losses) {
  Model model = init_model(setup.backbone, setup.clusters, setup.residual_encoder,
                           setup.bank_seed);
  TrainState state = init_train_state(model, train);
  pretrain(corpus, train, state);
  if (losses) *losses = state.loss_history;
  return std::move(state.model);
}

std::string SweepGrid::to_tsv() const {
  std::ostringstream out;
  out << "train\\infer";
  for (int s : infer_sizes) out << '\t' << s;
  out << '\n' << std::fixed << std::setprecision(2);
  for (std::size_t t = 0; t < train_sizes.size(); ++t) {
    out << train_sizes[t];
    for (std::size_t i = 0; i < infer_sizes.size(); ++i) out << '\t' << at(t, i);
    out << '\n';
  }
  return out.str();
}

SweepGrid rf_sweep(const Corpus& corpus, std::span<const HeldoutPair> pairs,
                   std::span<const int> train_sizes,
                   std::span<const int> infer_sizes, const ModelSetup& setup,
                   const TrainConfig& train,
                   const std::map<int, const Model*>& trained,
                   const std::function<void(int, const Model&)>& on_model) {
  for (int s : train_sizes)
    if (s < 1 || s % 2 == 0) throw ConfigError("sweep sizes must be odd");
  for (int s : infer_sizes)
    if (s < 1 || s % 2 == 0) throw ConfigError("sweep sizes must be odd");
  SweepGrid grid;
  grid.train_sizes.assign(train_sizes.begin(), train_sizes.end());
  grid.infer_sizes.assign(infer_sizes.begin(), infer_sizes.end());
  for (int ts : train_sizes) {
    Model fresh;
    const Model* model = nullptr;
    if (const auto it = trained.find(ts); it != trained.end() && it->second) {
      model = it->second;
    } else {
      TrainConfig cfg = train;
      cfg.patch = ts;
      fresh = train_model(corpus, setup, cfg);
      model = &fresh;
    }
    if (on_model) on_model(ts, *model);
    for (int is : infer_sizes) grid.f1.push_back(evaluate_pairs(*model, pairs, is).f1);
  }
  return grid;
}

std::string metric_report(const PrfReport& r) {
  std::ostringstream out;
  out << std::setprecision(6);
  out << "precision\t" << r.precision << '\n'
      << "recall\t" << r.recall << '\n'
      << "f1\t" << r.f1 << '\n'
      << "tp\t" << r.tp << '\n'
      << "fp\t" << r.fp << '\n'
      << "fn\t" << r.fn << '\n';
  return out.str();
}

}  // namespace matter
