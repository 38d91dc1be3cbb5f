#include "matter/numcore.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>

namespace matter {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a,
          const T* b, T* c, bool accumulate) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<Mat> cm(c, m, n);
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) cm.setZero();
    return;
  }
  Eigen::Map<const Mat> am(a, trans_a ? k : m, trans_a ? m : k);
  Eigen::Map<const Mat> bm(b, trans_b ? n : k, trans_b ? k : n);
  auto apply = [&](const auto& lhs, const auto& rhs) {
    if (accumulate) {
      cm.noalias() += lhs * rhs;
    } else {
      cm.noalias() = lhs * rhs;
    }
  };
  if (trans_a && trans_b) {
    apply(am.transpose(), bm.transpose());
  } else if (trans_a) {
    apply(am.transpose(), bm);
  } else if (trans_b) {
    apply(am, bm.transpose());
  } else {
    apply(am, bm);
  }
}

int conv_output_extent(int extent, int k, int stride, PadMode pad) {
  const int p = pad == PadMode::reflect ? (k - 1) / 2 : 0;
  const int span = extent + 2 * p - k;
  if (span < 0) return 0;
  return span / stride + 1;
}

namespace {

struct ConvGeometry {
  int cin, n, h, w, cout, k, stride, pad, ho, wo;
  bool reflect;
};

template <typename T>
ConvGeometry check_conv(const BasicTensor<T>& input,
                        const BasicTensor<T>& weights, int stride,
                        PadMode pad) {
  if (input.rank() != 4) throw ShapeError("conv input must be [C,N,H,W]");
  if (weights.rank() != 4)
    throw ShapeError("conv weights must be [C_out,C_in,k,k]");
  const int k = weights.dim(2);
  if (weights.dim(3) != k) throw ShapeError("conv kernel must be square");
  if (k % 2 == 0) throw ShapeError("conv kernel size must be odd");
  if (weights.dim(1) != input.dim(0)) {
    throw ShapeError("conv channel mismatch: weights expect " +
                     std::to_string(weights.dim(1)) + " input channels, got " +
                     std::to_string(input.dim(0)));
  }
  if (stride < 1) throw ShapeError("conv stride must be positive");
  ConvGeometry g{};
  g.cin = input.dim(0);
  g.n = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = weights.dim(0);
  g.k = k;
  g.stride = stride;
  g.reflect = pad == PadMode::reflect;
  g.pad = g.reflect ? (k - 1) / 2 : 0;
  g.ho = conv_output_extent(g.h, k, stride, pad);
  g.wo = conv_output_extent(g.w, k, stride, pad);
  if (g.ho <= 0 || g.wo <= 0) throw ShapeError("conv input smaller than kernel");
  return g;
}

template <typename T>
std::size_t column_count(const ConvGeometry& g) {
  return static_cast<std::size_t>(g.cin) * g.k * g.k * g.n * g.ho * g.wo;
}

// Source index along one axis for every padded position, or -1 for zero
// padding outside the image.
std::vector<int> padded_axis(int extent, int pad, bool reflect) {
  std::vector<int> map(static_cast<std::size_t>(extent + 2 * pad));
  for (int i = 0; i < extent + 2 * pad; ++i)
    map[i] = reflect ? reflect_index(i - pad, extent) : i - pad;
  return map;
}

template <typename T>
ConvColumns<T> im2col(const BasicTensor<T>& input, const ConvGeometry& g) {
  const std::size_t plane = static_cast<std::size_t>(g.ho) * g.wo;
  const std::size_t cols_n = plane * g.n;
  ConvColumns<T> cols(column_count<T>(g));
  const int hp = g.h + 2 * g.pad, wp = g.w + 2 * g.pad;
  const std::vector<int> ymap = padded_axis(g.h, g.pad, g.reflect);
  const std::vector<int> xmap = padded_axis(g.w, g.pad, g.reflect);
  std::vector<T> padded(static_cast<std::size_t>(hp) * wp);
  for (int ci = 0; ci < g.cin; ++ci) {
    for (int n = 0; n < g.n; ++n) {
      const T* img = input.data() + (static_cast<std::size_t>(ci) * g.n + n) * g.h * g.w;
      for (int y = 0; y < hp; ++y) {
        const T* line = img + static_cast<std::size_t>(ymap[y]) * g.w;
        T* dst = padded.data() + static_cast<std::size_t>(y) * wp;
        for (int x = 0; x < wp; ++x) dst[x] = line[xmap[x]];
      }
      for (int ky = 0; ky < g.k; ++ky) {
        for (int kx = 0; kx < g.k; ++kx) {
          T* out = cols.data() +
                   (static_cast<std::size_t>(ci * g.k + ky) * g.k + kx) * cols_n +
                   n * plane;
          for (int oy = 0; oy < g.ho; ++oy) {
            const T* row = padded.data() +
                           static_cast<std::size_t>(oy * g.stride + ky) * wp + kx;
            T* o = out + static_cast<std::size_t>(oy) * g.wo;
            if (g.stride == 1) {
              std::copy_n(row, g.wo, o);
            } else {
              for (int ox = 0; ox < g.wo; ++ox) o[ox] = row[ox * g.stride];
            }
          }
        }
      }
    }
  }
  return cols;
}

// Adjoint of im2col: rows are summed into a padded plane, whose border is
// then folded back onto the pixels it mirrors.
template <typename T>
void col2im(const ConvColumns<T>& cols, const ConvGeometry& g,
            BasicTensor<T>& grad_input) {
  const std::size_t plane = static_cast<std::size_t>(g.ho) * g.wo;
  const std::size_t cols_n = plane * g.n;
  grad_input.fill(T(0));
  const int hp = g.h + 2 * g.pad, wp = g.w + 2 * g.pad;
  const std::vector<int> ymap = padded_axis(g.h, g.pad, g.reflect);
  const std::vector<int> xmap = padded_axis(g.w, g.pad, g.reflect);
  std::vector<T> padded(static_cast<std::size_t>(hp) * wp);
  for (int ci = 0; ci < g.cin; ++ci) {
    for (int n = 0; n < g.n; ++n) {
      std::fill(padded.begin(), padded.end(), T(0));
      for (int ky = 0; ky < g.k; ++ky) {
        for (int kx = 0; kx < g.k; ++kx) {
          const T* src = cols.data() +
                         (static_cast<std::size_t>(ci * g.k + ky) * g.k + kx) * cols_n +
                         n * plane;
          for (int oy = 0; oy < g.ho; ++oy) {
            T* row = padded.data() + static_cast<std::size_t>(oy * g.stride + ky) * wp + kx;
            const T* in = src + static_cast<std::size_t>(oy) * g.wo;
            for (int ox = 0; ox < g.wo; ++ox) row[ox * g.stride] += in[ox];
          }
        }
      }
      T* img = grad_input.data() + (static_cast<std::size_t>(ci) * g.n + n) * g.h * g.w;
      for (int y = 0; y < hp; ++y) {
        if (ymap[y] < 0) continue;
        T* line = img + static_cast<std::size_t>(ymap[y]) * g.w;
        const T* prow = padded.data() + static_cast<std::size_t>(y) * wp;
        for (int x = 0; x < wp; ++x)
          if (xmap[x] >= 0) line[xmap[x]] += prow[x];
      }
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d_cnhw(const BasicTensor<T>& input,
                           const BasicTensor<T>& weights, int stride,
                           PadMode pad, ConvColumns<T>* columns) {
  const ConvGeometry g = check_conv(input, weights, stride, pad);
  ConvColumns<T> local;
  ConvColumns<T>& cols = columns ? *columns : local;
  cols = im2col(input, g);
  BasicTensor<T> out({g.cout, g.n, g.ho, g.wo});
  const int kk = g.cin * g.k * g.k;
  const int cols_n = g.n * g.ho * g.wo;
  gemm<T>(false, false, g.cout, cols_n, kk, weights.data(), cols.data(),
          out.data(), false);
  return out;
}

template <typename T>
void conv2d_cnhw_backward(const BasicTensor<T>& input,
                          const BasicTensor<T>& weights,
                          const BasicTensor<T>& grad_output, int stride,
                          PadMode pad, BasicTensor<T>* grad_input,
                          BasicTensor<T>& grad_weights,
                          const ConvColumns<T>* columns) {
  const ConvGeometry g = check_conv(input, weights, stride, pad);
  if (grad_output.shape() != std::vector<int>{g.cout, g.n, g.ho, g.wo})
    throw ShapeError("conv grad_output shape mismatch");
  if (grad_weights.shape() != weights.shape())
    throw ShapeError("conv grad_weights shape mismatch");
  const int kk = g.cin * g.k * g.k;
  const int cols_n = g.n * g.ho * g.wo;
  ConvColumns<T> rebuilt;
  if (!columns) rebuilt = im2col(input, g);
  else if (columns->size() != column_count<T>(g))
    throw ShapeError("conv saved columns do not match the input");
  const ConvColumns<T>& cols = columns ? *columns : rebuilt;
  gemm<T>(false, true, g.cout, kk, cols_n, grad_output.data(), cols.data(),
          grad_weights.data(), true);
  if (grad_input) {
    ConvColumns<T> gcols(cols.size());
    gemm<T>(true, false, kk, cols_n, g.cout, weights.data(),
            grad_output.data(), gcols.data(), false);
    if (grad_input->shape() != input.shape()) *grad_input = BasicTensor<T>(input.shape());
    col2im(gcols, g, *grad_input);
  }
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input,
                      const BasicTensor<T>& weights, int stride, PadMode pad) {
  if (input.rank() != 3) throw ShapeError("conv2d input must be [C,H,W]");
  BasicTensor<T> batched =
      input.reshaped({input.dim(0), 1, input.dim(1), input.dim(2)});
  BasicTensor<T> out = conv2d_cnhw(batched, weights, stride, pad);
  return out.reshaped({out.dim(0), out.dim(2), out.dim(3)});
}

void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
              SgdState& state) {
  if (params.size() != grads.size())
    throw ShapeError("sgd_step: parameter/gradient count mismatch");
  if (state.velocity.empty()) {
    for (const Tensor* p : params) state.velocity.emplace_back(p->shape());
  }
  if (state.velocity.size() != params.size())
    throw ShapeError("sgd_step: velocity count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    Tensor& v = state.velocity[i];
    if (p.shape() != g.shape() || p.shape() != v.shape())
      throw ShapeError("sgd_step: shape mismatch for parameter " +
                       std::to_string(i));
  }
  const double lr = state.learning_rate;
  const double m = state.momentum;
  const double wd = state.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    Tensor& v = state.velocity[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]) + wd * p[j];
      v[j] = static_cast<float>(m * v[j] + gj);
      p[j] = static_cast<float>(p[j] - lr * v[j]);
    }
  }
}

template <typename T>
double finite_diff_check(const std::function<double(const BasicTensor<T>&)>& f,
                         const BasicTensor<T>& x,
                         const BasicTensor<T>& analytic_grad, double eps) {
  if (!(eps > 0)) throw Error("finite_diff_check: eps must be positive");
  if (x.shape() != analytic_grad.shape())
    throw ShapeError("finite_diff_check: gradient shape mismatch");
  BasicTensor<T> probe = x;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = probe[i];
    // Divide by the step actually taken after rounding to T.
    const T hi = static_cast<T>(orig + eps);
    const T lo = static_cast<T>(orig - eps);
    if (!(hi > lo)) throw NumericalError("finite_diff_check: eps below the precision of x");
    probe[i] = hi;
    const double up = f(probe);
    probe[i] = lo;
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericalError("finite_diff_check: non-finite function value");
    const double numeric = (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
    const double analytic = analytic_grad[i];
    const double denom =
        std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

template <typename T>
void require_finite(const BasicTensor<T>& t, const char* what) {
  if (!t.all_finite())
    throw NumericalError(std::string("non-finite values in ") + what);
}

#define MATTER_INSTANTIATE(T)                                                  \
  template void gemm<T>(bool, bool, int, int, int, const T*, const T*, T*,     \
                        bool);                                                 \
  template BasicTensor<T> conv2d<T>(const BasicTensor<T>&,                     \
                                    const BasicTensor<T>&, int, PadMode);      \
  template BasicTensor<T> conv2d_cnhw<T>(const BasicTensor<T>&,                \
                                         const BasicTensor<T>&, int, PadMode,  \
                                         ConvColumns<T>*);                     \
  template void conv2d_cnhw_backward<T>(                                       \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,     \
      int, PadMode, BasicTensor<T>*, BasicTensor<T>&, const ConvColumns<T>*);  \
  template double finite_diff_check<T>(                                        \
      const std::function<double(const BasicTensor<T>&)>&,                     \
      const BasicTensor<T>&, const BasicTensor<T>&, double);                   \
  template void require_finite<T>(const BasicTensor<T>&, const char*);

MATTER_INSTANTIATE(float)
MATTER_INSTANTIATE(double)

#undef MATTER_INSTANTIATE

}  // namespace matter
