#include "matter/tern.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "matter/numcore.hpp"

namespace matter {

void TernConfig::validate() const {
  if (blocks < 0) throw ConfigError("tern.blocks must be non-negative");
  if (layers_per_block < 1)
    throw ConfigError("tern.layers_per_block must be positive");
  if (kernel_size < 1 || kernel_size % 2 == 0)
    throw ConfigError("tern.kernel_size must be odd");
  if (static_cast<int>(dilations.size()) != layers_per_block)
    throw ConfigError("tern.dilations must list one entry per layer in a block");
  for (int d : dilations)
    if (d < 1) throw ConfigError("tern.dilations must be positive");
  if (!(epsilon > 0)) throw ConfigError("tern.epsilon must be positive");
}

TernKernel compute_kernel(std::span<const double> window, int bands, int k,
                          double epsilon, bool normalize) {
  const int taps = k * k;
  if (bands < 1 || k < 1 || k % 2 == 0 ||
      window.size() != static_cast<std::size_t>(bands * taps))
    throw ShapeError("compute_kernel: window must be B×k×k with odd k");
  const int centre = taps / 2;

  double mean = 0.0;
  for (double v : window) mean += v;
  mean /= static_cast<double>(window.size());
  double var = 0.0;
  for (double v : window) var += (v - mean) * (v - mean);
  var /= static_cast<double>(window.size());

  std::vector<double> norms(static_cast<std::size_t>(taps), 0.0);
  for (int b = 0; b < bands; ++b)
    for (int t = 0; t < taps; ++t) {
      const double v = window[static_cast<std::size_t>(b * taps + t)];
      norms[t] += v * v;
    }
  for (double& n : norms) n = std::sqrt(n);

  TernKernel kernel;
  kernel.size = k;
  kernel.weights.assign(static_cast<std::size_t>(taps), 0.0);
  double abs_sum = 0.0;
  for (int t = 0; t < taps; ++t) {
    double dot = 0.0;
    for (int b = 0; b < bands; ++b)
      dot += window[static_cast<std::size_t>(b * taps + centre)] *
             window[static_cast<std::size_t>(b * taps + t)];
    const double cosine = dot / (norms[centre] * norms[t] + epsilon);
    const double w = -cosine / (var + epsilon);
    kernel.weights[t] = w;
    abs_sum += std::abs(w);
  }
  if (normalize && abs_sum >= epsilon)
    for (double& w : kernel.weights) w /= abs_sum;
  return kernel;
}

template <typename T>
KernelField<T> build_kernel_field(const BasicTensor<T>& guidance, int k,
                                  int dilation, double epsilon,
                                  bool normalize) {
  if (guidance.rank() != 4) throw ShapeError("guidance must be [N,B,H,W]");
  KernelField<T> field;
  field.n = guidance.dim(0);
  const int bands = guidance.dim(1);
  field.h = guidance.dim(2);
  field.w = guidance.dim(3);
  field.k = k;
  field.dilation = dilation;
  const int taps = k * k;
  const int r = (k - 1) / 2;
  const std::size_t pixels = static_cast<std::size_t>(field.h) * field.w;

  field.neighbours.resize(pixels * taps);
  for (int i = 0; i < field.h; ++i)
    for (int j = 0; j < field.w; ++j)
      for (int a = 0; a < k; ++a)
        for (int b = 0; b < k; ++b) {
          const int p = reflect_index(i + dilation * (a - r), field.h);
          const int q = reflect_index(j + dilation * (b - r), field.w);
          field.neighbours[(static_cast<std::size_t>(i) * field.w + j) * taps +
                           a * k + b] = p * field.w + q;
        }

  field.readers_begin.assign(pixels + 1, 0);
  for (int q : field.neighbours) ++field.readers_begin[static_cast<std::size_t>(q) + 1];
  for (std::size_t q = 0; q < pixels; ++q) field.readers_begin[q + 1] += field.readers_begin[q];
  field.reader_slot.resize(field.neighbours.size());
  field.reader_pixel.resize(field.neighbours.size());
  {
    std::vector<int> fill(field.readers_begin.begin(), field.readers_begin.end() - 1);
    for (std::size_t slot = 0; slot < field.neighbours.size(); ++slot) {
      const int e = fill[field.neighbours[slot]]++;
      field.reader_slot[e] = static_cast<int>(slot);
      field.reader_pixel[e] = static_cast<int>(slot / taps);
    }
  }

  field.weights.resize(static_cast<std::size_t>(field.n) * pixels * taps);
  std::vector<double> window(static_cast<std::size_t>(bands * taps));
  for (int n = 0; n < field.n; ++n) {
    const T* img = guidance.data() + static_cast<std::size_t>(n) * bands * pixels;
    for (std::size_t pix = 0; pix < pixels; ++pix) {
      const int* nb = field.neighbours.data() + pix * taps;
      for (int b = 0; b < bands; ++b)
        for (int t = 0; t < taps; ++t)
          window[static_cast<std::size_t>(b * taps + t)] =
              static_cast<double>(img[b * pixels + nb[t]]);
      const TernKernel kernel =
          compute_kernel(window, bands, k, epsilon, normalize);
      T* dst = field.weights.data() + (n * pixels + pix) * taps;
      for (int t = 0; t < taps; ++t) dst[t] = static_cast<T>(kernel.weights[t]);
    }
  }
  return field;
}

namespace {

// Features are refined in a pixel-major [N][H·W][C] layout so the channel loop
// is contiguous.
template <typename T>
std::vector<T> to_pixel_major(const BasicTensor<T>& cnhw) {
  const int c_count = cnhw.dim(0);
  const std::size_t np = cnhw.size() / static_cast<std::size_t>(c_count);
  std::vector<T> out(cnhw.size());
  for (int c = 0; c < c_count; ++c) {
    const T* src = cnhw.data() + c * np;
    for (std::size_t i = 0; i < np; ++i) out[i * c_count + c] = src[i];
  }
  return out;
}

template <typename T>
void from_pixel_major(const std::vector<T>& pm, BasicTensor<T>& cnhw) {
  const int c_count = cnhw.dim(0);
  const std::size_t np = cnhw.size() / static_cast<std::size_t>(c_count);
  for (int c = 0; c < c_count; ++c) {
    T* dst = cnhw.data() + c * np;
    for (std::size_t i = 0; i < np; ++i) dst[i] = pm[i * c_count + c];
  }
}

// Kernels of the two passes, with the channel count fixed at compile time when
// Fixed > 0. Sums build up in a local buffer so the compiler can keep them in
// registers.
template <int Fixed, typename T>
void apply_pm_impl(const KernelField<T>& field, const T* src, T* dst, int runtime_channels) {
  const int channels = Fixed > 0 ? Fixed : runtime_channels;
  const int taps = field.k * field.k;
  const std::size_t pixels = static_cast<std::size_t>(field.h) * field.w;
  std::vector<T> scratch(Fixed > 0 ? 0 : static_cast<std::size_t>(channels));
  T fixed_acc[Fixed > 0 ? Fixed : 1];
  T* acc = Fixed > 0 ? fixed_acc : scratch.data();
  for (int n = 0; n < field.n; ++n) {
    const T* in = src + n * pixels * channels;
    T* out = dst + n * pixels * channels;
    for (std::size_t pix = 0; pix < pixels; ++pix) {
      const T* kw = field.weights.data() + (n * pixels + pix) * taps;
      const int* nb = field.neighbours.data() + pix * taps;
      const T* s0 = in + static_cast<std::size_t>(nb[0]) * channels;
      for (int c = 0; c < channels; ++c) acc[c] = kw[0] * s0[c];
      for (int t = 1; t < taps; ++t) {
        const T wt = kw[t];
        const T* s = in + static_cast<std::size_t>(nb[t]) * channels;
        for (int c = 0; c < channels; ++c) acc[c] += wt * s[c];
      }
      std::copy_n(acc, channels, out + pix * channels);
    }
  }
}

// The adjoint gathers, for every pixel, the gradients of all outputs whose
// window reads it.
template <int Fixed, typename T>
void apply_pm_transposed_impl(const KernelField<T>& field, const T* src, T* dst,
                              int runtime_channels) {
  const int channels = Fixed > 0 ? Fixed : runtime_channels;
  const int taps = field.k * field.k;
  const std::size_t pixels = static_cast<std::size_t>(field.h) * field.w;
  std::vector<T> scratch(Fixed > 0 ? 0 : static_cast<std::size_t>(channels));
  T fixed_acc[Fixed > 0 ? Fixed : 1];
  T* acc = Fixed > 0 ? fixed_acc : scratch.data();
  for (int n = 0; n < field.n; ++n) {
    const T* in = src + n * pixels * channels;
    T* out = dst + n * pixels * channels;
    const T* kw = field.weights.data() + n * pixels * taps;
    for (std::size_t q = 0; q < pixels; ++q) {
      std::fill_n(acc, channels, T(0));
      for (int e = field.readers_begin[q]; e < field.readers_begin[q + 1]; ++e) {
        const T wt = kw[field.reader_slot[e]];
        const T* g = in + static_cast<std::size_t>(field.reader_pixel[e]) * channels;
        for (int c = 0; c < channels; ++c) acc[c] += wt * g[c];
      }
      std::copy_n(acc, channels, out + q * channels);
    }
  }
}

template <typename T>
void apply_pm(const KernelField<T>& field, const T* src, T* dst, int channels) {
  switch (channels) {
    case 4: return apply_pm_impl<4>(field, src, dst, channels);
    case 8: return apply_pm_impl<8>(field, src, dst, channels);
    case 16: return apply_pm_impl<16>(field, src, dst, channels);
    case 32: return apply_pm_impl<32>(field, src, dst, channels);
    default: return apply_pm_impl<0>(field, src, dst, channels);
  }
}

template <typename T>
void apply_pm_transposed(const KernelField<T>& field, const T* src, T* dst,
                         int channels) {
  switch (channels) {
    case 4: return apply_pm_transposed_impl<4>(field, src, dst, channels);
    case 8: return apply_pm_transposed_impl<8>(field, src, dst, channels);
    case 16: return apply_pm_transposed_impl<16>(field, src, dst, channels);
    case 32: return apply_pm_transposed_impl<32>(field, src, dst, channels);
    default: return apply_pm_transposed_impl<0>(field, src, dst, channels);
  }
}

template <typename T>
void check_field_extents(const KernelField<T>& field, const BasicTensor<T>& t,
                         const char* what) {
  if (t.rank() != 4 || t.dim(1) != field.n || t.dim(2) != field.h ||
      t.dim(3) != field.w)
    throw ShapeError(std::string(what) + " " + t.shape_string() +
                     " do not match guidance extents");
}

}  // namespace

template <typename T>
BasicTensor<T> apply_kernel_field(const KernelField<T>& field,
                                  const BasicTensor<T>& features) {
  check_field_extents(field, features, "refinement: features");
  const std::vector<T> src = to_pixel_major(features);
  std::vector<T> dst(src.size());
  apply_pm(field, src.data(), dst.data(), features.dim(0));
  BasicTensor<T> out(features.shape());
  from_pixel_major(dst, out);
  return out;
}

template <typename T>
BasicTensor<T> apply_kernel_field_transposed(const KernelField<T>& field,
                                             const BasicTensor<T>& grad_output) {
  check_field_extents(field, grad_output, "refinement backward: gradients");
  const std::vector<T> src = to_pixel_major(grad_output);
  std::vector<T> dst(src.size());
  apply_pm_transposed(field, src.data(), dst.data(), grad_output.dim(0));
  BasicTensor<T> out(grad_output.shape());
  from_pixel_major(dst, out);
  return out;
}

template <typename T>
TernStack<T>::TernStack(const TernConfig& cfg, const BasicTensor<T>& guidance) {
  cfg.validate();
  std::vector<int> field_dilation;
  for (int layer = 0; layer < cfg.layer_count(); ++layer) {
    const int d = cfg.dilation_of(layer);
    std::size_t idx = 0;
    while (idx < field_dilation.size() && field_dilation[idx] != d) ++idx;
    if (idx == field_dilation.size()) {
      field_dilation.push_back(d);
      fields_.push_back(build_kernel_field(guidance, cfg.kernel_size, d,
                                           cfg.epsilon, cfg.normalize));
    }
    layer_field_.push_back(idx);
  }
}

template <typename T>
BasicTensor<T> TernStack<T>::forward(const BasicTensor<T>& features) const {
  if (layer_field_.empty()) return features;
  check_field_extents(fields_.front(), features, "refinement: features");
  std::vector<T> a = to_pixel_major(features);
  std::vector<T> b(a.size());
  for (std::size_t idx : layer_field_) {
    apply_pm(fields_[idx], a.data(), b.data(), features.dim(0));
    a.swap(b);
  }
  BasicTensor<T> out(features.shape());
  from_pixel_major(a, out);
  return out;
}

template <typename T>
BasicTensor<T> TernStack<T>::backward(const BasicTensor<T>& grad_output) const {
  if (layer_field_.empty()) return grad_output;
  check_field_extents(fields_.front(), grad_output, "refinement backward: gradients");
  std::vector<T> a = to_pixel_major(grad_output);
  std::vector<T> b(a.size());
  for (auto it = layer_field_.rbegin(); it != layer_field_.rend(); ++it) {
    apply_pm_transposed(fields_[*it], a.data(), b.data(), grad_output.dim(0));
    a.swap(b);
  }
  BasicTensor<T> out(grad_output.shape());
  from_pixel_major(a, out);
  return out;
}

namespace {

void check_single(const Tensor& features, const Tensor& guidance) {
  if (features.rank() != 3) throw ShapeError("features must be [C,H,W]");
  if (guidance.rank() != 3) throw ShapeError("guidance must be [B,H,W]");
  if (features.dim(1) != guidance.dim(1) || features.dim(2) != guidance.dim(2))
    throw ShapeError("guidance " + guidance.shape_string() +
                     " and features " + features.shape_string() +
                     " differ spatially");
}

Tensor as_cnhw(const Tensor& t) {
  return t.reshaped({t.dim(0), 1, t.dim(1), t.dim(2)});
}

Tensor as_nchw(const Tensor& t) {
  return t.reshaped({1, t.dim(0), t.dim(1), t.dim(2)});
}

}  // namespace

Tensor refine_layer(const Tensor& features, const Tensor& guidance,
                    int kernel_size, int dilation, double epsilon,
                    bool normalize) {
  check_single(features, guidance);
  if (kernel_size < 1 || kernel_size % 2 == 0)
    throw ShapeError("refine_layer: kernel size must be odd");
  const KernelField<float> field = build_kernel_field(
      as_nchw(guidance), kernel_size, dilation, epsilon, normalize);
  return apply_kernel_field(field, as_cnhw(features)).reshaped(features.shape());
}

Tensor tern_forward(const Tensor& features, const Tensor& guidance,
                    const TernConfig& cfg) {
  check_single(features, guidance);
  const TernStack<float> stack(cfg, as_nchw(guidance));
  return stack.forward(as_cnhw(features)).reshaped(features.shape());
}

template struct KernelField<float>;
template struct KernelField<double>;
template class TernStack<float>;
template class TernStack<double>;
template KernelField<float> build_kernel_field(const Tensor&, int, int, double, bool);
template KernelField<double> build_kernel_field(const TensorD&, int, int, double, bool);
template Tensor apply_kernel_field(const KernelField<float>&, const Tensor&);
template TensorD apply_kernel_field(const KernelField<double>&, const TensorD&);
template Tensor apply_kernel_field_transposed(const KernelField<float>&, const Tensor&);
template TensorD apply_kernel_field_transposed(const KernelField<double>&, const TensorD&);

}  // namespace matter
