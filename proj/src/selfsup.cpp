#include "matter/selfsup.hpp"

#include <algorithm>
#include <map>
#include <cmath>
#include <cstring>
#include <fstream>

#include "matter/parallel.hpp"
#include "matter/random.hpp"

namespace matter {

namespace {

constexpr int kTrainChunk = 96;
constexpr int kDescribeChunk = 256;

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (!(learning_rate >= 0)) throw ConfigError("train.learning_rate must be non-negative");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train.momentum must lie in [0,1)");
  if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay must be non-negative");
  if (!(temperature > 0)) throw ConfigError("train.temperature must be positive");
  if (patch < 1) throw ConfigError("train.patch must be positive");
  if (iterations < 0) throw ConfigError("train.iterations must be non-negative");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be non-negative");
  if (negatives_per_anchor < 0)
    throw ConfigError("train.negatives_per_anchor must be non-negative");
  if (patches_per_triplet < 0)
    throw ConfigError("train.patches_per_triplet must be non-negative");
  if (!(grad_clip >= 0)) throw ConfigError("train.grad_clip must be non-negative");
}

std::vector<std::pair<std::string, Tensor*>> Model::trainable() {
  auto out = params.named();
  if (residual_encoder)
    for (auto& nt : bank.named()) out.push_back(nt);
  return out;
}

Model init_model(const BackboneConfig& cfg, int clusters, bool residual_encoder,
                 std::uint64_t bank_seed) {
  Model m;
  m.backbone = cfg;
  m.params = init_backbone(cfg);
  m.bank = init_bank(clusters, cfg.descriptor_dim, bank_seed);
  m.residual_encoder = residual_encoder;
  return m;
}

namespace {

Tensor describe_impl(const Model& model, const Tensor& patches, bool raw) {
  if (patches.rank() != 4) throw ShapeError("describe expects [N,B,h,w]");
  const int n = patches.dim(0);
  const int dim = model.backbone.descriptor_dim;
  const std::size_t per = patches.size() / std::max(1, n);
  Tensor out({n, dim});
  const std::size_t chunks = (static_cast<std::size_t>(n) + kDescribeChunk - 1) / kDescribeChunk;
  parallel_for(chunks, [&](std::size_t c) {
    const int lo = static_cast<int>(c) * kDescribeChunk;
    const int hi = std::min(n, lo + kDescribeChunk);
    std::vector<int> shape = patches.shape();
    shape[0] = hi - lo;
    Tensor chunk(shape, std::vector<float>(patches.data() + lo * per,
                                           patches.data() + hi * per));
    Tensor f = encode_batch(model.params, model.backbone, chunk);
    if (model.residual_encoder && !raw) f = encode_residuals(model.bank, f);
    std::memcpy(out.data() + static_cast<std::size_t>(lo) * dim, f.data(),
                f.size() * sizeof(float));
  });
  require_finite(out, "descriptors");
  return out;
}

}  // namespace

Tensor describe(const Model& model, const Tensor& patches) {
  return describe_impl(model, patches, false);
}

Tensor describe_raw(const Model& model, const Tensor& patches) {
  return describe_impl(model, patches, true);
}

double nce_loss(std::span<const float> anchor, std::span<const float> positive,
                const Tensor& negatives, double temperature) {
  if (negatives.rank() != 2 || negatives.dim(0) < 1)
    throw ShapeError("nce_loss needs at least one negative");
  const std::size_t dim = anchor.size();
  if (positive.size() != dim || static_cast<std::size_t>(negatives.dim(1)) != dim)
    throw ShapeError("nce_loss: descriptor dimensions differ");
  if (!(temperature > 0)) throw Error("nce_loss: temperature must be positive");
  auto dot = [&](const float* b) {
    double s = 0;
    for (std::size_t d = 0; d < dim; ++d) s += static_cast<double>(anchor[d]) * b[d];
    return s / temperature;
  };
  std::vector<double> logits;
  logits.push_back(dot(positive.data()));
  for (int j = 0; j < negatives.dim(0); ++j)
    logits.push_back(dot(negatives.data() + static_cast<std::size_t>(j) * dim));
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0;
  for (double l : logits) sum += std::exp(l - mx);
  return mx + std::log(sum) - logits[0];
}

template <typename T>
double nce_loss_grad(const BasicTensor<T>& anchor, const BasicTensor<T>& positive,
                     const BasicTensor<T>& negatives, double temperature,
                     BasicTensor<T>& grad_anchor, BasicTensor<T>& grad_positive,
                     BasicTensor<T>& grad_negatives) {
  if (negatives.rank() != 2 || negatives.dim(0) < 1)
    throw ShapeError("nce_loss needs at least one negative");
  const int dim = static_cast<int>(anchor.size());
  if (static_cast<int>(positive.size()) != dim || negatives.dim(1) != dim)
    throw ShapeError("nce_loss: descriptor dimensions differ");
  if (!(temperature > 0)) throw Error("nce_loss: temperature must be positive");
  const int n = negatives.dim(0);
  auto row = [&](int j) { return j == 0 ? positive.data() : negatives.data() + static_cast<std::size_t>(j - 1) * dim; };
  std::vector<double> logits(static_cast<std::size_t>(n) + 1);
  for (int j = 0; j <= n; ++j) {
    const T* c = row(j);
    double s = 0;
    for (int d = 0; d < dim; ++d) s += static_cast<double>(anchor[d]) * c[d];
    logits[j] = s / temperature;
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0;
  for (double l : logits) sum += std::exp(l - mx);
  const double lse = mx + std::log(sum);
  grad_anchor = BasicTensor<T>(anchor.shape());
  grad_positive = BasicTensor<T>(positive.shape());
  grad_negatives = BasicTensor<T>(negatives.shape());
  for (int j = 0; j <= n; ++j) {
    const double coef = (std::exp(logits[j] - lse) - (j == 0 ? 1.0 : 0.0)) / temperature;
    const T* c = row(j);
    T* gc = j == 0 ? grad_positive.data() : grad_negatives.data() + static_cast<std::size_t>(j - 1) * dim;
    for (int d = 0; d < dim; ++d) {
      grad_anchor[d] += static_cast<T>(coef * c[d]);
      gc[d] = static_cast<T>(coef * anchor[d]);
    }
  }
  return lse - logits[0];
}

template double nce_loss_grad(const Tensor&, const Tensor&, const Tensor&, double,
                              Tensor&, Tensor&, Tensor&);
template double nce_loss_grad(const TensorD&, const TensorD&, const TensorD&, double,
                              TensorD&, TensorD&, TensorD&);

TrainState init_train_state(const Model& model, const TrainConfig& cfg) {
  cfg.validate();
  TrainState state;
  state.model = model;
  state.sgd.learning_rate = cfg.learning_rate;
  state.sgd.momentum = cfg.momentum;
  state.sgd.weight_decay = cfg.weight_decay;
  for (auto& [name, t] : state.model.trainable())
    state.sgd.velocity.emplace_back(t->shape());
  return state;
}

std::vector<int> BatchLayout::negatives_for(int anchor, int cap) const {
  std::vector<int> rows;
  const auto [lo, hi] = negative_range[static_cast<std::size_t>(triplet_of_anchor[anchor])];
  for (int r = lo; r < hi; ++r) rows.push_back(2 * anchors + r);
  const int own = triplet_of_anchor[anchor];
  auto region = [&](int t) { return region_of_triplet.empty() ? t : region_of_triplet[t]; };
  for (int k = 0; k < anchors; ++k)
    if (region(triplet_of_anchor[k]) != region(own)) rows.push_back(k);
  if (cap > 0 && static_cast<int>(rows.size()) > cap) rows.resize(static_cast<std::size_t>(cap));
  return rows;
}

StackedBatch stack_triplets(std::span<const Triplet> triplets) {
  if (triplets.empty()) throw ShapeError("empty triplet batch");
  const auto& ref = triplets.front().anchor;
  const int bands = ref.dim(1), h = ref.dim(2), w = ref.dim(3);
  StackedBatch sb;
  BatchLayout& lay = sb.layout;
  std::map<std::string, int> region_ids;
  for (std::size_t t = 0; t < triplets.size(); ++t) {
    const Triplet& tr = triplets[t];
    lay.region_of_triplet.push_back(
        region_ids.emplace(tr.anchor_region, static_cast<int>(region_ids.size())).first->second);
    if (tr.anchor.dim(1) != bands || tr.anchor.dim(2) != h || tr.anchor.dim(3) != w ||
        tr.negative.dim(1) != bands || tr.negative.dim(2) != h || tr.negative.dim(3) != w)
      throw ShapeError("triplets in a batch must share B, h and w");
    for (int k = 0; k < tr.patches(); ++k) lay.triplet_of_anchor.push_back(static_cast<int>(t));
    lay.negative_range.emplace_back(lay.negatives, lay.negatives + tr.negative.dim(0));
    lay.anchors += tr.patches();
    lay.negatives += tr.negative.dim(0);
  }
  const int rows = 2 * lay.anchors + lay.negatives;
  sb.patches = Tensor({rows, bands, h, w});
  float* dst = sb.patches.data();
  for (const Triplet& tr : triplets) dst = std::copy(tr.anchor.data(), tr.anchor.data() + tr.anchor.size(), dst);
  for (const Triplet& tr : triplets) dst = std::copy(tr.positive.data(), tr.positive.data() + tr.positive.size(), dst);
  for (const Triplet& tr : triplets) dst = std::copy(tr.negative.data(), tr.negative.data() + tr.negative.size(), dst);
  return sb;
}

template <typename T>
double batch_loss(const BasicBackboneParams<T>& params,
                  const BasicClusterBank<T>& bank, const BackboneConfig& cfg,
                  bool residual_encoder, const BasicTensor<T>& patches,
                  const BatchLayout& layout, double temperature,
                  int negatives_per_anchor, ModelGradients<T>* grads) {
  const int rows = patches.dim(0);
  if (rows != 2 * layout.anchors + layout.negatives)
    throw ShapeError("batch_loss: patch count does not match layout");
  if (layout.anchors < 1) throw ShapeError("batch_loss: no anchors");
  const int dim = cfg.descriptor_dim;
  const std::size_t per = patches.size() / static_cast<std::size_t>(rows);
  const std::size_t chunks = (static_cast<std::size_t>(rows) + kTrainChunk - 1) / kTrainChunk;

  std::vector<BackboneTape<T>> tapes(chunks);
  std::vector<ResidualTape<T>> rtapes(chunks);
  BasicTensor<T> feats({rows, dim});
  parallel_for(chunks, [&](std::size_t c) {
    const int lo = static_cast<int>(c) * kTrainChunk;
    const int hi = std::min(rows, lo + kTrainChunk);
    std::vector<int> shape = patches.shape();
    shape[0] = hi - lo;
    BasicTensor<T> chunk(shape, std::vector<T>(patches.data() + lo * per,
                                               patches.data() + hi * per));
    BasicTensor<T> f = encode_batch(params, cfg, chunk, &tapes[c]);
    if (residual_encoder) f = encode_residuals(bank, f, &rtapes[c]);
    std::copy(f.data(), f.data() + f.size(), feats.data() + static_cast<std::size_t>(lo) * dim);
  });

  const int m = layout.anchors;
  BasicTensor<T> grad_f({rows, dim});
  double total = 0;
  for (int k = 0; k < m; ++k) {
    const std::vector<int> negs = layout.negatives_for(k, negatives_per_anchor);
    if (negs.empty()) throw ShapeError("batch_loss: anchor without negatives");
    const T* a = feats.data() + static_cast<std::size_t>(k) * dim;
    std::vector<int> cand;
    cand.reserve(negs.size() + 1);
    cand.push_back(m + k);
    cand.insert(cand.end(), negs.begin(), negs.end());
    std::vector<double> logits(cand.size());
    for (std::size_t j = 0; j < cand.size(); ++j) {
      const T* c = feats.data() + static_cast<std::size_t>(cand[j]) * dim;
      double s = 0;
      for (int d = 0; d < dim; ++d) s += static_cast<double>(a[d]) * c[d];
      logits[j] = s / temperature;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0;
    for (double l : logits) sum += std::exp(l - mx);
    const double lse = mx + std::log(sum);
    total += lse - logits[0];
    if (!grads) continue;
    T* ga = grad_f.data() + static_cast<std::size_t>(k) * dim;
    for (std::size_t j = 0; j < cand.size(); ++j) {
      const double p = std::exp(logits[j] - lse);
      const T coef = static_cast<T>((p - (j == 0 ? 1.0 : 0.0)) / (temperature * m));
      const T* c = feats.data() + static_cast<std::size_t>(cand[j]) * dim;
      T* gc = grad_f.data() + static_cast<std::size_t>(cand[j]) * dim;
      for (int d = 0; d < dim; ++d) {
        ga[d] += coef * c[d];
        gc[d] += coef * a[d];
      }
    }
  }
  const double loss = total / m;
  if (!grads) return loss;

  std::vector<ModelGradients<T>> partial(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    const int lo = static_cast<int>(c) * kTrainChunk;
    const int hi = std::min(rows, lo + kTrainChunk);
    BasicTensor<T> gf({hi - lo, dim},
                      std::vector<T>(grad_f.data() + static_cast<std::size_t>(lo) * dim,
                                     grad_f.data() + static_cast<std::size_t>(hi) * dim));
    ModelGradients<T>& g = partial[c];
    g.backbone = params.zeros_like();
    g.bank = bank.zeros_like();
    BasicTensor<T> gz;
    if (residual_encoder) {
      residual_backward(bank, rtapes[c], gf, gz, g.bank);
    } else {
      gz = std::move(gf);
    }
    backbone_backward(params, cfg, tapes[c], gz, g.backbone);
  });
  grads->backbone = params.zeros_like();
  grads->bank = bank.zeros_like();
  auto dst_b = grads->backbone.named();
  auto dst_q = grads->bank.named();
  for (auto& g : partial) {
    auto src_b = g.backbone.named();
    for (std::size_t i = 0; i < dst_b.size(); ++i)
      for (std::size_t j = 0; j < dst_b[i].second->size(); ++j)
        (*dst_b[i].second)[j] += (*src_b[i].second)[j];
    auto src_q = g.bank.named();
    for (std::size_t i = 0; i < dst_q.size(); ++i)
      for (std::size_t j = 0; j < dst_q[i].second->size(); ++j)
        (*dst_q[i].second)[j] += (*src_q[i].second)[j];
  }
  return loss;
}

double train_step(TrainState& state, std::span<const Triplet> batch,
                  const TrainConfig& cfg) {
  for (const Triplet& t : batch)
    if (t.anchor.dim(2) != cfg.patch || t.anchor.dim(3) != cfg.patch)
      throw ShapeError("triplet patch size " + std::to_string(t.anchor.dim(2)) +
                       " differs from train.patch " + std::to_string(cfg.patch));
  const StackedBatch sb = stack_triplets(batch);
  Model& model = state.model;
  ModelGradients<float> grads;
  const double loss =
      batch_loss(model.params, model.bank, model.backbone, model.residual_encoder,
                 sb.patches, sb.layout, cfg.temperature, cfg.negatives_per_anchor, &grads);
  if (!std::isfinite(loss))
    throw NumericalError("non-finite training loss at iteration " +
                         std::to_string(state.iteration));
  std::vector<Tensor*> params;
  std::vector<Tensor> flat;
  for (auto& [name, t] : model.trainable()) params.push_back(t);
  for (auto& [name, t] : grads.backbone.named()) {
    require_finite(*t, name.c_str());
    flat.push_back(std::move(*t));
  }
  if (model.residual_encoder)
    for (auto& [name, t] : grads.bank.named()) {
      require_finite(*t, name.c_str());
      flat.push_back(std::move(*t));
    }
  if (cfg.grad_clip > 0) {
    double ss = 0;
    for (const Tensor& g : flat)
      for (float v : g.values()) ss += static_cast<double>(v) * v;
    const double norm = std::sqrt(ss);
    if (norm > cfg.grad_clip) {
      const float scale = static_cast<float>(cfg.grad_clip / norm);
      for (Tensor& g : flat)
        for (float& v : g.values()) v *= scale;
    }
  }
  state.sgd.learning_rate = cfg.learning_rate;
  state.sgd.momentum = cfg.momentum;
  state.sgd.weight_decay = cfg.weight_decay;
  sgd_step(params, flat, state.sgd);
  state.loss_history.push_back(static_cast<float>(loss));
  ++state.iteration;
  return loss;
}

std::vector<Triplet> sample_batch(const Corpus& corpus, const TrainConfig& cfg,
                                  int iteration) {
  const std::uint64_t base = derive_seed(cfg.rng_seed, "sampling");
  std::vector<Triplet> batch;
  batch.reserve(static_cast<std::size_t>(cfg.batch_size));
  for (int b = 0; b < cfg.batch_size; ++b) {
    const std::uint64_t index =
        static_cast<std::uint64_t>(iteration) * cfg.batch_size + b;
    batch.push_back(sample_triplet(corpus, derive_seed(base, index), cfg.patch,
                                   cfg.patches_per_triplet));
  }
  return batch;
}

void pretrain(const Corpus& corpus, const TrainConfig& cfg, TrainState& state,
              const PretrainHooks& hooks) {
  retain_heap_memory();
  cfg.validate();
  bool saved_last = false;
  while (state.iteration < cfg.iterations) {
    const std::vector<Triplet> batch = sample_batch(corpus, cfg, state.iteration);
    const double loss = train_step(state, batch, cfg);
    if (hooks.on_step) hooks.on_step(state.iteration, loss);
    saved_last = false;
    if (cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0 &&
        hooks.on_checkpoint) {
      hooks.on_checkpoint(state);
      saved_last = true;
    }
  }
  if (!saved_last && hooks.on_checkpoint) hooks.on_checkpoint(state);
}

void write_loss_curve(const std::filesystem::path& path,
                      std::span<const float> losses) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write loss curve " + path.string());
  out.precision(9);
  for (std::size_t i = 0; i < losses.size(); ++i)
    out << (i + 1) << '\t' << losses[i] << '\n';
}

template double batch_loss(const BasicBackboneParams<float>&,
                           const BasicClusterBank<float>&, const BackboneConfig&,
                           bool, const BasicTensor<float>&, const BatchLayout&,
                           double, int, ModelGradients<float>*);
template double batch_loss(const BasicBackboneParams<double>&,
                           const BasicClusterBank<double>&, const BackboneConfig&,
                           bool, const BasicTensor<double>&, const BatchLayout&,
                           double, int, ModelGradients<double>*);

}  // namespace matter
