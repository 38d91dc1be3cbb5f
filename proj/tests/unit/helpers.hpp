#pragma once

#include <random>
#include <vector>

#include "matter/random.hpp"
#include "matter/tensor.hpp"

namespace testutil {

template <typename T = float>
matter::BasicTensor<T> uniform(std::vector<int> shape, matter::Rng& rng, double lo = -1.0,
                               double hi = 1.0) {
  matter::BasicTensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.values()) v = static_cast<T>(d(rng));
  return t;
}

template <typename T>
double max_abs_diff(const matter::BasicTensor<T>& a, const matter::BasicTensor<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

inline int mirror(int i, int n) {
  // Independent reflect-101 by explicit walking.
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

}  // namespace testutil
