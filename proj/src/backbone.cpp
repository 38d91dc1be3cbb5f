#include "matter/backbone.hpp"

#include <cmath>
#include <random>

#include "matter/random.hpp"

namespace matter {

void BackboneConfig::validate() const {
  if (in_bands < 1) throw ConfigError("backbone.in_bands must be positive");
  if (stem_channels < 1)
    throw ConfigError("backbone.stem_channels must be positive");
  for (int c : block_channels)
    if (c < 1) throw ConfigError("backbone.block_channels must be positive");
  if (descriptor_dim < 1)
    throw ConfigError("backbone.descriptor_dim must be positive");
  tern.validate();
}

template <typename T>
std::vector<std::pair<std::string, BasicTensor<T>*>>
BasicBackboneParams<T>::named() {
  std::vector<std::pair<std::string, BasicTensor<T>*>> out;
  out.emplace_back("backbone.stem", &stem);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string prefix = "backbone.block" + std::to_string(i) + ".";
    out.emplace_back(prefix + "conv1", &blocks[i].conv1);
    out.emplace_back(prefix + "conv2", &blocks[i].conv2);
    if (!blocks[i].skip.empty()) out.emplace_back(prefix + "skip", &blocks[i].skip);
  }
  out.emplace_back("backbone.projection", &projection);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const BasicTensor<T>*>>
BasicBackboneParams<T>::named() const {
  std::vector<std::pair<std::string, const BasicTensor<T>*>> out;
  for (auto& [name, t] : const_cast<BasicBackboneParams*>(this)->named())
    out.emplace_back(name, t);
  return out;
}

template <typename T>
BasicBackboneParams<T> BasicBackboneParams<T>::zeros_like() const {
  BasicBackboneParams z = *this;
  for (auto& [name, t] : z.named()) t->fill(T(0));
  return z;
}

template <typename T>
template <typename U>
BasicBackboneParams<U> BasicBackboneParams<T>::cast() const {
  BasicBackboneParams<U> out;
  out.stem = stem.template cast<U>();
  for (const Block& b : blocks)
    out.blocks.push_back({b.conv1.template cast<U>(), b.conv2.template cast<U>(),
                          b.skip.template cast<U>()});
  out.projection = projection.template cast<U>();
  return out;
}

BackboneParams init_backbone(const BackboneConfig& cfg) {
  cfg.validate();
  BackboneParams p;
  p.stem = Tensor({cfg.stem_channels, cfg.in_bands, 3, 3});
  int prev = cfg.stem_channels;
  for (int c : cfg.block_channels) {
    BackboneParams::Block b;
    b.conv1 = Tensor({c, prev, 3, 3});
    b.conv2 = Tensor({c, c, 3, 3});
    if (c != prev) b.skip = Tensor({c, prev, 1, 1});
    p.blocks.push_back(std::move(b));
    prev = c;
  }
  p.projection = Tensor({cfg.descriptor_dim, prev});

  Rng rng(cfg.rng_seed);
  for (auto& [name, t] : p.named()) {
    int fan_in = 1;
    for (int axis = 1; axis < t->rank(); ++axis) fan_in *= t->dim(axis);
    const float bound = static_cast<float>(std::sqrt(6.0 / fan_in));
    std::uniform_real_distribution<float> dist(-bound, bound);
    for (float& v : t->values()) v = dist(rng);
  }
  return p;
}

namespace {

template <typename T>
BasicTensor<T> to_cnhw(const BasicTensor<T>& nchw) {
  const int n = nchw.dim(0), c = nchw.dim(1), h = nchw.dim(2), w = nchw.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  BasicTensor<T> out({c, n, h, w});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      std::copy_n(nchw.data() + (static_cast<std::size_t>(i) * c + ch) * plane,
                  plane, out.data() + (static_cast<std::size_t>(ch) * n + i) * plane);
  return out;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> y = x;
  for (T& v : y.values()) v = v > T(0) ? v : T(0);
  return y;
}

template <typename T>
void relu_mask(BasicTensor<T>& grad, const BasicTensor<T>& pre) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(pre[i] > T(0))) grad[i] = T(0);
}

template <typename T>
void add_inplace(BasicTensor<T>& a, const BasicTensor<T>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace

template <typename T>
BasicTensor<T> encode_batch(const BasicBackboneParams<T>& params,
                            const BackboneConfig& cfg,
                            const BasicTensor<T>& patches,
                            BackboneTape<T>* tape) {
  if (patches.rank() != 4 || patches.dim(1) != cfg.in_bands)
    throw ShapeError("encode_batch expects [N," + std::to_string(cfg.in_bands) +
                     ",h,w] patches, got " + patches.shape_string());
  const int n = patches.dim(0);
  const int h = patches.dim(2);
  const int w = patches.dim(3);
  const int dim = cfg.descriptor_dim;

  BackboneTape<T> local;
  BackboneTape<T>& tp = tape ? *tape : local;
  tp.blocks.clear();
  tp.input = to_cnhw(patches);
  // Column matrices are only worth keeping when a backward pass follows.
  const auto keep = [&](ConvColumns<T>& cols) { return tape ? &cols : nullptr; };
  tp.stem_pre = conv2d_cnhw(tp.input, params.stem, 1, PadMode::reflect, keep(tp.stem_cols));
  BasicTensor<T> cur = relu(tp.stem_pre);
  if (cfg.tern.layer_count() > 0) {
    tp.tern.emplace(cfg.tern, patches);
    cur = tp.tern->forward(cur);
  } else {
    tp.tern.reset();
  }
  for (const auto& block : params.blocks) {
    typename BackboneTape<T>::BlockTape bt;
    bt.input = std::move(cur);
    bt.mid_pre = conv2d_cnhw(bt.input, block.conv1, 1, PadMode::reflect, keep(bt.conv1_cols));
    bt.mid = relu(bt.mid_pre);
    bt.out_pre = conv2d_cnhw(bt.mid, block.conv2, 1, PadMode::reflect, keep(bt.conv2_cols));
    if (block.skip.empty()) {
      add_inplace(bt.out_pre, bt.input);
    } else {
      add_inplace(bt.out_pre,
                  conv2d_cnhw(bt.input, block.skip, 1, PadMode::none, keep(bt.skip_cols)));
    }
    cur = relu(bt.out_pre);
    tp.blocks.push_back(std::move(bt));
  }
  tp.last = std::move(cur);

  const int channels = tp.last.dim(0);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  tp.pooled = BasicTensor<T>({n, channels});
  for (int c = 0; c < channels; ++c)
    for (int i = 0; i < n; ++i) {
      const T* src = tp.last.data() + (static_cast<std::size_t>(c) * n + i) * plane;
      T s = 0;
      for (std::size_t p = 0; p < plane; ++p) s += src[p];
      tp.pooled.at(i, c) = s / static_cast<T>(plane);
    }
  tp.projected = BasicTensor<T>({n, dim});
  gemm<T>(false, true, n, dim, channels, tp.pooled.data(),
          params.projection.data(), tp.projected.data(), false);

  tp.z = BasicTensor<T>({n, dim});
  tp.norms.assign(static_cast<std::size_t>(n), T(0));
  for (int i = 0; i < n; ++i) {
    const T* y = tp.projected.data() + static_cast<std::size_t>(i) * dim;
    T ss = 0;
    for (int d = 0; d < dim; ++d) ss += y[d] * y[d];
    const T norm = std::sqrt(ss);
    tp.norms[i] = norm;
    T* z = tp.z.data() + static_cast<std::size_t>(i) * dim;
    if (norm > T(1e-12)) {
      for (int d = 0; d < dim; ++d) z[d] = y[d] / norm;
    } else {
      z[0] = T(1);
    }
  }
  return tp.z;
}

namespace {

template <typename T>
const ConvColumns<T>* saved(const ConvColumns<T>& cols) {
  return cols.empty() ? nullptr : &cols;
}

}  // namespace

template <typename T>
void backbone_backward(const BasicBackboneParams<T>& params,
                       const BackboneConfig& cfg, const BackboneTape<T>& tape,
                       const BasicTensor<T>& grad_z,
                       BasicBackboneParams<T>& grads) {
  const int n = tape.z.dim(0);
  const int dim = tape.z.dim(1);
  if (grad_z.shape() != tape.z.shape())
    throw ShapeError("backbone_backward: gradient shape mismatch");
  const int channels = tape.last.dim(0);
  const int h = tape.last.dim(2), w = tape.last.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  BasicTensor<T> grad_y({n, dim});
  for (int i = 0; i < n; ++i) {
    const T norm = tape.norms[i];
    if (!(norm > T(1e-12))) continue;
    const T* z = tape.z.data() + static_cast<std::size_t>(i) * dim;
    const T* gz = grad_z.data() + static_cast<std::size_t>(i) * dim;
    T dot = 0;
    for (int d = 0; d < dim; ++d) dot += z[d] * gz[d];
    T* gy = grad_y.data() + static_cast<std::size_t>(i) * dim;
    for (int d = 0; d < dim; ++d) gy[d] = (gz[d] - z[d] * dot) / norm;
  }
  gemm<T>(true, false, dim, channels, n, grad_y.data(), tape.pooled.data(),
          grads.projection.data(), true);
  BasicTensor<T> grad_pooled({n, channels});
  gemm<T>(false, false, n, channels, dim, grad_y.data(),
          params.projection.data(), grad_pooled.data(), false);

  BasicTensor<T> g(tape.last.shape());
  for (int c = 0; c < channels; ++c)
    for (int i = 0; i < n; ++i) {
      const T v = grad_pooled.at(i, c) / static_cast<T>(plane);
      std::fill_n(g.data() + (static_cast<std::size_t>(c) * n + i) * plane, plane, v);
    }

  for (std::size_t b = params.blocks.size(); b-- > 0;) {
    const auto& block = params.blocks[b];
    auto& gblock = grads.blocks[b];
    const auto& bt = tape.blocks[b];
    relu_mask(g, bt.out_pre);
    BasicTensor<T> g_mid(bt.mid.shape());
    conv2d_cnhw_backward(bt.mid, block.conv2, g, 1, PadMode::reflect, &g_mid,
                         gblock.conv2, saved(bt.conv2_cols));
    relu_mask(g_mid, bt.mid_pre);
    BasicTensor<T> g_in(bt.input.shape());
    conv2d_cnhw_backward(bt.input, block.conv1, g_mid, 1, PadMode::reflect,
                         &g_in, gblock.conv1, saved(bt.conv1_cols));
    if (block.skip.empty()) {
      add_inplace(g_in, g);
    } else {
      BasicTensor<T> g_skip(bt.input.shape());
      conv2d_cnhw_backward(bt.input, block.skip, g, 1, PadMode::none, &g_skip,
                           gblock.skip, saved(bt.skip_cols));
      add_inplace(g_in, g_skip);
    }
    g = std::move(g_in);
  }
  if (tape.tern) g = tape.tern->backward(g);
  relu_mask(g, tape.stem_pre);
  conv2d_cnhw_backward<T>(tape.input, params.stem, g, 1, PadMode::reflect,
                          nullptr, grads.stem, saved(tape.stem_cols));
  (void)cfg;
}

Tensor encode_patch(const BackboneParams& params, const BackboneConfig& cfg,
                    const Tensor& patch) {
  if (patch.rank() != 3) throw ShapeError("encode_patch expects [B,h,w]");
  const Tensor z = encode_batch(
      params, cfg, patch.reshaped({1, patch.dim(0), patch.dim(1), patch.dim(2)}));
  return z.reshaped({cfg.descriptor_dim});
}

StemMaps stem_maps(const BackboneParams& params, const BackboneConfig& cfg,
                   const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != cfg.in_bands)
    throw ShapeError("stem_maps expects a [" + std::to_string(cfg.in_bands) +
                     ",H,W] image");
  const Tensor batch = image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
  const Tensor stem = relu(conv2d_cnhw(to_cnhw(batch), params.stem, 1, PadMode::reflect));
  Tensor refined = stem;
  if (cfg.tern.layer_count() > 0) refined = TernStack<float>(cfg.tern, batch).forward(stem);
  const std::vector<int> shape{stem.dim(0), image.dim(1), image.dim(2)};
  return {stem.reshaped(shape), refined.reshaped(shape)};
}

template struct BasicBackboneParams<float>;
template struct BasicBackboneParams<double>;
template BasicBackboneParams<double> BasicBackboneParams<float>::cast<double>() const;
template BasicBackboneParams<float> BasicBackboneParams<double>::cast<float>() const;
template Tensor encode_batch(const BackboneParams&, const BackboneConfig&,
                             const Tensor&, BackboneTape<float>*);
template TensorD encode_batch(const BasicBackboneParams<double>&,
                              const BackboneConfig&, const TensorD&,
                              BackboneTape<double>*);
template void backbone_backward(const BackboneParams&, const BackboneConfig&,
                                const BackboneTape<float>&, const Tensor&,
                                BackboneParams&);
template void backbone_backward(const BasicBackboneParams<double>&,
                                const BackboneConfig&, const BackboneTape<double>&,
                                const TensorD&, BasicBackboneParams<double>&);

}  // namespace matter
