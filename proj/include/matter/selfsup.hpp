#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "matter/backbone.hpp"
#include "matter/datapipe.hpp"
#include "matter/numcore.hpp"
#include "matter/resenc.hpp"

namespace matter {

struct TrainConfig {
  int batch_size = 32;  // triplets per step
  double learning_rate = 0.01;
  double momentum = 0.6;
  double weight_decay = 0.001;
  double temperature = 0.05;
  int patch = 7;
  int iterations = 2000;
  std::uint64_t rng_seed = 1;
  int checkpoint_every = 0;      // 0 = final checkpoint only
  int negatives_per_anchor = 0;  // 0 = every non-positive descriptor in batch
  int patches_per_triplet = 4;   // aligned tiles drawn per triplet; 0 = all
  double grad_clip = 5.0;        // global gradient-norm cap; 0 = off

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Encoder plus cluster bank. With residual_encoder off the descriptor z is
// used directly as the contrastive feature.
struct Model {
  BackboneConfig backbone;
  BackboneParams params;
  ClusterBank bank;
  bool residual_encoder = true;

  std::vector<std::pair<std::string, Tensor*>> trainable();
};

Model init_model(const BackboneConfig& cfg, int clusters, bool residual_encoder,
                 std::uint64_t bank_seed);

// Contrastive features f for patches [N,B,h,w] -> [N,D]. Evaluated in fixed
// chunks so results do not depend on the worker count.
Tensor describe(const Model& model, const Tensor& patches);

// Raw descriptors z (before the residual encoder) -> [N,D].
Tensor describe_raw(const Model& model, const Tensor& patches);

// -log softmax_0([a·p, a·n_1, ..., a·n_N] / tau)
double nce_loss(std::span<const float> anchor, std::span<const float> positive,
                const Tensor& negatives, double temperature);

// nce_loss with gradients: anchor and positive are [D], negatives [N,D].
// Gradient tensors are overwritten.
template <typename T>
double nce_loss_grad(const BasicTensor<T>& anchor, const BasicTensor<T>& positive,
                     const BasicTensor<T>& negatives, double temperature,
                     BasicTensor<T>& grad_anchor, BasicTensor<T>& grad_positive,
                     BasicTensor<T>& grad_negatives);

struct TrainState {
  Model model;
  SgdState sgd;
  int iteration = 0;
  std::vector<float> loss_history;
};

TrainState init_train_state(const Model& model, const TrainConfig& cfg);

// Row layout of a stacked batch: anchors, then positives, then negatives.
struct BatchLayout {
  int anchors = 0;
  int negatives = 0;
  std::vector<int> triplet_of_anchor;
  std::vector<std::pair<int, int>> negative_range;  // per triplet, [lo,hi)
  std::vector<int> region_of_triplet;  // anchor region id; empty = all distinct
  // Negative rows for anchor k, in order: the triplet's negatives then the
  // anchors of triplets from other regions, truncated to
  // negatives_per_anchor when positive.
  std::vector<int> negatives_for(int anchor, int cap) const;
};

struct StackedBatch {
  Tensor patches;  // [2·anchors + negatives, B, h, w]
  BatchLayout layout;
};

StackedBatch stack_triplets(std::span<const Triplet> triplets);

template <typename T>
struct ModelGradients {
  BasicBackboneParams<T> backbone;
  BasicClusterBank<T> bank;
};

// Mean NCE over all anchors of a stacked batch, with parameter gradients
// when grads is non-null. Works on either precision.
template <typename T>
double batch_loss(const BasicBackboneParams<T>& params,
                  const BasicClusterBank<T>& bank, const BackboneConfig& cfg,
                  bool residual_encoder, const BasicTensor<T>& patches,
                  const BatchLayout& layout, double temperature,
                  int negatives_per_anchor, ModelGradients<T>* grads);

// One optimiser step on a batch of triplets. Returns the batch loss.
double train_step(TrainState& state, std::span<const Triplet> batch,
                  const TrainConfig& cfg);

// Triplets drawn for a given iteration; depends only on (seed, iteration).
std::vector<Triplet> sample_batch(const Corpus& corpus, const TrainConfig& cfg,
                                  int iteration);

struct PretrainHooks {
  // Called every checkpoint_every iterations and at the end.
  std::function<void(const TrainState&)> on_checkpoint;
  std::function<void(int iteration, double loss)> on_step;
};

// Runs from state.iteration up to cfg.iterations.
void pretrain(const Corpus& corpus, const TrainConfig& cfg, TrainState& state,
              const PretrainHooks& hooks = {});

// "iteration\tloss\n" lines.
void write_loss_curve(const std::filesystem::path& path,
                      std::span<const float> losses);

}  // namespace matter
