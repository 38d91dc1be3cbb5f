#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "matter/datapipe.hpp"
#include "matter/selfsup.hpp"

namespace matter {

struct ChangeMap {
  Tensor score;  // [H,W] distances between per-pixel features
  Tensor mask;   // [H,W] 0/1, score > threshold
  double threshold = 0.0;
  bool degenerate = false;
};

struct WordMap {
  int height = 0;
  int width = 0;
  int clusters = 0;
  std::vector<int> words;  // row-major

  int at(int row, int col) const { return words[static_cast<std::size_t>(row) * width + col]; }
};

struct PrfReport {
  double precision = 0.0;  // percent
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t tp = 0, fp = 0, fn = 0;
};

struct OtsuResult {
  double threshold = 0.0;
  int edge = 0;  // histogram edge index in [1, bins-1]; 0 when degenerate
  bool degenerate = false;
};

// 256-bin (by default) Otsu threshold over [min, max]. Candidate thresholds
// are the interior bin edges. Among edges giving the same best split of the
// populated bins the middle one is returned; between distinct splits with
// equal between-class variance the lowest wins.
OtsuResult otsu_threshold(std::span<const float> values, int bins = 256);

// Per-pixel features of every dense window of an image -> [H·W, D].
Tensor dense_features(const MultiSpectralImage& img, const Model& model, int win);

Tensor change_scores(const MultiSpectralImage& before,
                     const MultiSpectralImage& after, const Model& model,
                     int win = 9);

ChangeMap threshold_scores(Tensor score);

ChangeMap detect_change(const MultiSpectralImage& before,
                        const MultiSpectralImage& after, const Model& model,
                        int win = 9);

WordMap word_map(const MultiSpectralImage& img, const Model& model, int win = 9);

// Masks are compared as value > 0.5.
PrfReport prf1(const Tensor& pred, const Tensor& truth);
PrfReport prf_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn);
double f1_score(double precision, double recall);

// Fraction of each ground-truth class covered by that class's most frequent
// word, indexed by class id (classes absent from the labels get -1).
std::vector<double> word_purity(const WordMap& words, const Tensor& labels);

// Change detection pooled over held-out pairs (counts are summed before the
// rates are formed).
PrfReport evaluate_pairs(const Model& model, std::span<const HeldoutPair> pairs,
                         int win);

struct ModelSetup {
  BackboneConfig backbone;
  int clusters = 64;
  bool residual_encoder = true;
  std::uint64_t bank_seed = 2;
};

struct SweepGrid {
  std::vector<int> train_sizes;
  std::vector<int> infer_sizes;
  std::vector<double> f1;  // row-major [train][infer], percent

  double at(std::size_t t, std::size_t i) const { return f1[t * infer_sizes.size() + i]; }
  std::string to_tsv() const;
};

// Trains one model per train size and scores each inference size on the
// held-out pairs. Models listed in `trained` (keyed by train size, produced
// with the same setup and schedule) are reused instead of retrained.
// on_model sees every model before evaluation.
SweepGrid rf_sweep(const Corpus& corpus, std::span<const HeldoutPair> pairs,
                   std::span<const int> train_sizes,
                   std::span<const int> infer_sizes, const ModelSetup& setup,
                   const TrainConfig& train,
                   const std::map<int, const Model*>& trained = {},
                   const std::function<void(int, const Model&)>& on_model = {});

Model train_model(const Corpus& corpus, const ModelSetup& setup,
                  const TrainConfig& train, std::vector<float>* losses = nullptr);

// "metric\tvalue\n" lines.
std::string metric_report(const PrfReport& r);

}  // namespace matter
