#include "matter/resenc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "matter/random.hpp"

namespace matter {

ClusterBank init_bank(int clusters, int dim, std::uint64_t seed) {
  if (clusters < 1 || dim < 1)
    throw ConfigError("cluster bank needs at least one cluster and dimension");
  ClusterBank bank{Tensor({clusters, dim}), Tensor({clusters}, 0.0f)};
  Rng rng(seed);
  const float bound = 1.0f / std::sqrt(static_cast<float>(dim));
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (float& v : bank.centers.values()) v = dist(rng);
  return bank;
}

namespace {

void check_dims(std::size_t zdim, int bank_dim) {
  if (static_cast<int>(zdim) != bank_dim)
    throw ShapeError("descriptor dimension " + std::to_string(zdim) +
                     " does not match cluster bank dimension " +
                     std::to_string(bank_dim));
}

// Per-row core shared by the single and batched paths.
template <typename T>
void row_forward(const T* z, const BasicClusterBank<T>& bank, T* theta,
                 T* sqdist, T* r) {
  const int u_count = bank.clusters();
  const int dim = bank.dim();
  T max_logit = -std::numeric_limits<T>::infinity();
  for (int u = 0; u < u_count; ++u) {
    const T* q = bank.centers.data() + static_cast<std::size_t>(u) * dim;
    T d2 = 0;
    for (int d = 0; d < dim; ++d) d2 += (z[d] - q[d]) * (z[d] - q[d]);
    sqdist[u] = d2;
    theta[u] = -std::exp(bank.log_smoothing[u]) * d2;
    max_logit = std::max(max_logit, theta[u]);
  }
  T total = 0;
  for (int u = 0; u < u_count; ++u) {
    theta[u] = std::exp(theta[u] - max_logit);
    total += theta[u];
  }
  for (int u = 0; u < u_count; ++u) theta[u] /= total;
  std::fill_n(r, dim, T(0));
  for (int u = 0; u < u_count; ++u) {
    const T* q = bank.centers.data() + static_cast<std::size_t>(u) * dim;
    for (int d = 0; d < dim; ++d) r[d] += theta[u] * (z[d] - q[d]);
  }
  const T inv = T(1) / static_cast<T>(u_count);
  for (int d = 0; d < dim; ++d) r[d] *= inv;
}

}  // namespace

Tensor residuals(std::span<const float> z, const ClusterBank& bank) {
  check_dims(z.size(), bank.dim());
  Tensor out(bank.centers.shape());
  for (int u = 0; u < bank.clusters(); ++u)
    for (int d = 0; d < bank.dim(); ++d)
      out.at(u, d) = z[static_cast<std::size_t>(d)] - bank.centers.at(u, d);
  return out;
}

Tensor affinity_weights(std::span<const float> z, const ClusterBank& bank) {
  return cumulative_residual(z, bank).weights;
}

ResidualDescriptor cumulative_residual(std::span<const float> z,
                                       const ClusterBank& bank) {
  check_dims(z.size(), bank.dim());
  const int u_count = bank.clusters();
  const int dim = bank.dim();
  ResidualDescriptor out;
  out.per_cluster = residuals(z, bank);
  out.weights = Tensor({u_count});
  out.cumulative = Tensor({dim});
  out.normalized = Tensor({dim});
  std::vector<float> sqdist(static_cast<std::size_t>(u_count));
  row_forward(z.data(), bank, out.weights.data(), sqdist.data(),
              out.cumulative.data());
  float ss = 0;
  for (float v : out.cumulative.values()) ss += v * v;
  const float norm = std::sqrt(ss);
  out.degenerate = !(norm >= 1e-8f);
  if (!out.degenerate)
    for (int d = 0; d < dim; ++d) out.normalized[d] = out.cumulative[d] / norm;
  return out;
}

int word_assign(std::span<const float> z, const ClusterBank& bank) {
  check_dims(z.size(), bank.dim());
  const Tensor theta = affinity_weights(z, bank);
  int best = 0;
  for (int u = 1; u < bank.clusters(); ++u)
    if (theta[u] > theta[best]) best = u;
  return best;
}

std::vector<int> word_assign_batch(const Tensor& z, const ClusterBank& bank) {
  if (z.rank() != 2) throw ShapeError("word_assign_batch expects [N,D]");
  check_dims(static_cast<std::size_t>(z.dim(1)), bank.dim());
  std::vector<int> words(static_cast<std::size_t>(z.dim(0)));
  for (int i = 0; i < z.dim(0); ++i)
    words[i] = word_assign(
        std::span<const float>(z.data() + static_cast<std::size_t>(i) * z.dim(1),
                               static_cast<std::size_t>(z.dim(1))),
        bank);
  return words;
}

template <typename T>
BasicTensor<T> encode_residuals(const BasicClusterBank<T>& bank,
                                const BasicTensor<T>& z, ResidualTape<T>* tape) {
  if (z.rank() != 2) throw ShapeError("encode_residuals expects [N,D]");
  check_dims(static_cast<std::size_t>(z.dim(1)), bank.dim());
  const int n = z.dim(0);
  const int dim = bank.dim();
  const int u_count = bank.clusters();
  ResidualTape<T> local;
  ResidualTape<T>& tp = tape ? *tape : local;
  tp.z = z;
  tp.theta = BasicTensor<T>({n, u_count});
  tp.sqdist = BasicTensor<T>({n, u_count});
  tp.r = BasicTensor<T>({n, dim});
  tp.f = BasicTensor<T>({n, dim});
  tp.norms.assign(static_cast<std::size_t>(n), T(0));
  for (int i = 0; i < n; ++i) {
    const std::size_t zo = static_cast<std::size_t>(i) * dim;
    const std::size_t uo = static_cast<std::size_t>(i) * u_count;
    row_forward(z.data() + zo, bank, tp.theta.data() + uo,
                tp.sqdist.data() + uo, tp.r.data() + zo);
    T ss = 0;
    for (int d = 0; d < dim; ++d) ss += tp.r[zo + d] * tp.r[zo + d];
    const T norm = std::sqrt(ss);
    tp.norms[i] = norm;
    if (norm >= T(1e-8))
      for (int d = 0; d < dim; ++d) tp.f[zo + d] = tp.r[zo + d] / norm;
  }
  return tp.f;
}

template <typename T>
void residual_backward(const BasicClusterBank<T>& bank,
                       const ResidualTape<T>& tape, const BasicTensor<T>& grad_f,
                       BasicTensor<T>& grad_z, BasicClusterBank<T>& grads) {
  const int n = tape.z.dim(0);
  const int dim = bank.dim();
  const int u_count = bank.clusters();
  if (grad_f.shape() != tape.f.shape())
    throw ShapeError("residual_backward: gradient shape mismatch");
  grad_z = BasicTensor<T>(tape.z.shape());
  const T inv_u = T(1) / static_cast<T>(u_count);
  std::vector<T> gr(static_cast<std::size_t>(dim));
  std::vector<T> g_logit(static_cast<std::size_t>(u_count));
  for (int i = 0; i < n; ++i) {
    const T norm = tape.norms[i];
    if (!(norm >= T(1e-8))) continue;
    const std::size_t zo = static_cast<std::size_t>(i) * dim;
    const std::size_t uo = static_cast<std::size_t>(i) * u_count;
    const T* f = tape.f.data() + zo;
    const T* gf = grad_f.data() + zo;
    const T* z = tape.z.data() + zo;
    const T* theta = tape.theta.data() + uo;
    T* gz = grad_z.data() + zo;

    T dot = 0;
    for (int d = 0; d < dim; ++d) dot += f[d] * gf[d];
    for (int d = 0; d < dim; ++d) gr[d] = (gf[d] - f[d] * dot) / norm;

    // r = (1/U) sum_u theta_u (z - q_u)
    T weighted = 0;
    for (int u = 0; u < u_count; ++u) {
      const T* q = bank.centers.data() + static_cast<std::size_t>(u) * dim;
      T g_theta = 0;
      for (int d = 0; d < dim; ++d) g_theta += gr[d] * (z[d] - q[d]);
      g_logit[u] = g_theta * inv_u;
      weighted += theta[u] * g_logit[u];
    }
    for (int d = 0; d < dim; ++d) gz[d] += gr[d] * inv_u;  // sum theta = 1
    for (int u = 0; u < u_count; ++u) {
      const T* q = bank.centers.data() + static_cast<std::size_t>(u) * dim;
      T* gq = grads.centers.data() + static_cast<std::size_t>(u) * dim;
      const T gl = theta[u] * (g_logit[u] - weighted);  // softmax backward
      const T s = std::exp(bank.log_smoothing[u]);
      const T d2 = tape.sqdist[uo + u];
      grads.log_smoothing[u] += gl * (-s * d2);
      const T g_d2 = -s * gl;
      for (int d = 0; d < dim; ++d) {
        const T diff = z[d] - q[d];
        gz[d] += T(2) * g_d2 * diff;
        gq[d] += -T(2) * g_d2 * diff - inv_u * theta[u] * gr[d];
      }
    }
  }
}

template BasicTensor<float> encode_residuals(const BasicClusterBank<float>&,
                                             const BasicTensor<float>&,
                                             ResidualTape<float>*);
template BasicTensor<double> encode_residuals(const BasicClusterBank<double>&,
                                              const BasicTensor<double>&,
                                              ResidualTape<double>*);
template void residual_backward(const BasicClusterBank<float>&,
                                const ResidualTape<float>&,
                                const BasicTensor<float>&, BasicTensor<float>&,
                                BasicClusterBank<float>&);
template void residual_backward(const BasicClusterBank<double>&,
                                const ResidualTape<double>&,
                                const BasicTensor<double>&,
                                BasicTensor<double>&,
                                BasicClusterBank<double>&);

}  // namespace matter
