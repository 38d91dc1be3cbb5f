#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "matter/tensor.hpp"

namespace matter {

// Learned cluster centres with per-cluster smoothing s = exp(log_smoothing).
template <typename T>
struct BasicClusterBank {
  BasicTensor<T> centers;        // [U,D]
  BasicTensor<T> log_smoothing;  // [U]

  int clusters() const { return centers.dim(0); }
  int dim() const { return centers.dim(1); }

  std::vector<std::pair<std::string, BasicTensor<T>*>> named() {
    return {{"bank.centers", &centers}, {"bank.log_smoothing", &log_smoothing}};
  }
  BasicClusterBank zeros_like() const {
    return {BasicTensor<T>(centers.shape()), BasicTensor<T>(log_smoothing.shape())};
  }
  template <typename U>
  BasicClusterBank<U> cast() const {
    return {centers.template cast<U>(), log_smoothing.template cast<U>()};
  }
};

using ClusterBank = BasicClusterBank<float>;

// Centres uniform in [-1/sqrt(D), 1/sqrt(D)], smoothing 1.
ClusterBank init_bank(int clusters, int dim, std::uint64_t seed);

struct ResidualDescriptor {
  Tensor per_cluster;  // [U,D], row u = z - q_u
  Tensor weights;      // [U], soft assignment theta
  Tensor cumulative;   // [D], (1/U) sum_u theta_u (z - q_u)
  Tensor normalized;   // [D], cumulative / |cumulative| or zero
  bool degenerate = false;
};

Tensor residuals(std::span<const float> z, const ClusterBank& bank);

// theta_u = softmax_u(-s_u |z - q_u|^2)
Tensor affinity_weights(std::span<const float> z, const ClusterBank& bank);

ResidualDescriptor cumulative_residual(std::span<const float> z,
                                       const ClusterBank& bank);

// argmax_u theta_u, lowest index on ties.
int word_assign(std::span<const float> z, const ClusterBank& bank);

// Batched forward for training: z [N,D] -> normalised cumulative residuals.
template <typename T>
struct ResidualTape {
  BasicTensor<T> z;        // [N,D]
  BasicTensor<T> theta;    // [N,U]
  BasicTensor<T> sqdist;   // [N,U]
  BasicTensor<T> r;        // [N,D]
  BasicTensor<T> f;        // [N,D]
  std::vector<T> norms;
};

template <typename T>
BasicTensor<T> encode_residuals(const BasicClusterBank<T>& bank,
                                const BasicTensor<T>& z,
                                ResidualTape<T>* tape = nullptr);

// Accumulates bank gradients and writes d(loss)/dz.
template <typename T>
void residual_backward(const BasicClusterBank<T>& bank,
                       const ResidualTape<T>& tape, const BasicTensor<T>& grad_f,
                       BasicTensor<T>& grad_z, BasicClusterBank<T>& grads);

// Visual words for a batch of descriptors z [N,D].
std::vector<int> word_assign_batch(const Tensor& z, const ClusterBank& bank);

}  // namespace matter
