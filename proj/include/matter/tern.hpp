#pragma once

#include <span>
#include <vector>

#include "matter/tensor.hpp"

namespace matter {

// Texture refinement stack: parameter-free pixel-adaptive convolutions whose
// per-location kernels come from the guidance image.
struct TernConfig {
  int blocks = 10;
  int layers_per_block = 3;
  int kernel_size = 3;
  std::vector<int> dilations{1, 1, 2};
  double epsilon = 1e-6;
  bool normalize = true;

  void validate() const;
  int layer_count() const { return blocks * layers_per_block; }
  int dilation_of(int layer) const {
    return dilations[static_cast<std::size_t>(layer % layers_per_block)];
  }
  friend bool operator==(const TernConfig&, const TernConfig&) = default;
};

// Weights of one location, row-major k×k.
struct TernKernel {
  int size = 0;
  std::vector<double> weights;
  double at(int a, int b) const {
    return weights[static_cast<std::size_t>(a * size + b)];
  }
};

// Kernel for the window centred at its middle sample. `window` is a
// band-sequential B×k×k block:
//   cos(p,q)  = <x_c, x_pq> / (|x_c||x_pq| + eps)
//   sigma^2   = variance over all B·k·k scalars
//   w(p,q)    = -cos(p,q) / (sigma^2 + eps), optionally divided by sum|w|
TernKernel compute_kernel(std::span<const double> window, int bands, int k,
                          double epsilon, bool normalize);

// Per-location kernels of one layer geometry for a batch of guidance images,
// stored as [N][H·W][k·k] together with the reflected neighbour offsets.
template <typename T>
struct KernelField {
  int n = 0, h = 0, w = 0, k = 0, dilation = 1;
  std::vector<T> weights;
  std::vector<int> neighbours;  // [H·W][k·k] flat pixel index
  // Inverse of `neighbours` in CSR form: for each pixel, the weight slots
  // (pixel·k·k + tap) that read it and the pixels owning those slots.
  std::vector<int> readers_begin;  // [H·W + 1]
  std::vector<int> reader_slot;
  std::vector<int> reader_pixel;
};

// guidance is [N,B,H,W].
template <typename T>
KernelField<T> build_kernel_field(const BasicTensor<T>& guidance, int k,
                                  int dilation, double epsilon, bool normalize);

// Applies a kernel field to channel-major features [C,N,H,W].
template <typename T>
BasicTensor<T> apply_kernel_field(const KernelField<T>& field,
                                  const BasicTensor<T>& features);

// Adjoint of apply_kernel_field with respect to the features.
template <typename T>
BasicTensor<T> apply_kernel_field_transposed(const KernelField<T>& field,
                                             const BasicTensor<T>& grad_output);

// A full stack prepared for one batch of guidance images. Layers sharing a
// dilation share their kernel field since the guidance never changes.
template <typename T>
class TernStack {
 public:
  TernStack(const TernConfig& cfg, const BasicTensor<T>& guidance);
  BasicTensor<T> forward(const BasicTensor<T>& features) const;
  BasicTensor<T> backward(const BasicTensor<T>& grad_output) const;
  int layer_count() const { return static_cast<int>(layer_field_.size()); }

 private:
  std::vector<KernelField<T>> fields_;
  std::vector<std::size_t> layer_field_;
};

// Single-image refinement: features [C,H,W], guidance [B,H,W].
Tensor refine_layer(const Tensor& features, const Tensor& guidance,
                    int kernel_size, int dilation, double epsilon,
                    bool normalize);

Tensor tern_forward(const Tensor& features, const Tensor& guidance,
                    const TernConfig& cfg);

}  // namespace matter
