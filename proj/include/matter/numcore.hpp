#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "matter/tensor.hpp"

namespace matter {

enum class PadMode { none, reflect };

// Mirror index into [0, n) without repeating the edge sample
// (-1 -> 1, n -> n-2). Indices further out fold repeatedly.
int reflect_index(int i, int n);

// Row-major C = A·B (+ beta·C) with optional transposes; backed by Eigen.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a,
          const T* b, T* c, bool accumulate);

// Cross-correlation of input[C_in,H,W] with weights[C_out,C_in,k,k].
// Reflect padding uses p = (k-1)/2; none uses no padding.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input,
                      const BasicTensor<T>& weights, int stride, PadMode pad);

// Allocator that leaves trivially constructible elements uninitialised, for
// scratch buffers that are fully overwritten.
template <typename T>
struct UninitAllocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = UninitAllocator<U>;
  };
  UninitAllocator() = default;
  template <typename U>
  UninitAllocator(const UninitAllocator<U>&) noexcept {}
  template <typename U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

// im2col matrix [C_in·k·k, N·H_out·W_out] of a convolution input.
template <typename T>
using ConvColumns = std::vector<T, UninitAllocator<T>>;

// Batched convolution on channel-major activations [C,N,H,W]. All layers of
// the encoder keep this layout so each convolution is a single GEMM.
// With `columns` set, the im2col matrix is kept there for the backward pass.
template <typename T>
BasicTensor<T> conv2d_cnhw(const BasicTensor<T>& input,
                           const BasicTensor<T>& weights, int stride,
                           PadMode pad, ConvColumns<T>* columns = nullptr);

// Backward of conv2d_cnhw. grad_weights is accumulated into; grad_input is
// overwritten when non-null. `columns` may carry the matrix saved by the
// forward call on the same input; otherwise it is rebuilt.
template <typename T>
void conv2d_cnhw_backward(const BasicTensor<T>& input,
                          const BasicTensor<T>& weights,
                          const BasicTensor<T>& grad_output, int stride,
                          PadMode pad, BasicTensor<T>* grad_input,
                          BasicTensor<T>& grad_weights,
                          const ConvColumns<T>* columns = nullptr);

int conv_output_extent(int extent, int k, int stride, PadMode pad);

struct SgdState {
  double learning_rate = 0.01;
  double momentum = 0.6;
  double weight_decay = 0.001;
  std::vector<Tensor> velocity;
};

// Classic momentum with weight decay folded into the gradient:
//   g' = g + wd·p;  v <- m·v + g';  p <- p - lr·v
// Velocities are zero-initialised on first use.
void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
              SgdState& state);

// Central-difference check of an analytic gradient. Returns the maximum over
// coordinates of |a - n| / max(|a|, |n|, 1e-8). The difference quotient uses
// the perturbation as stored in T, so float inputs are not biased by rounding
// of x ± eps.
template <typename T>
double finite_diff_check(const std::function<double(const BasicTensor<T>&)>& f,
                         const BasicTensor<T>& x,
                         const BasicTensor<T>& analytic_grad,
                         double eps = 1e-3);

template <typename T>
void require_finite(const BasicTensor<T>& t, const char* what);

}  // namespace matter
