#pragma once

#include <cstdint>
#include <random>

#include "ssvaer/tensor.hpp"

namespace testutil {

inline ssvaer::Tensor uniform(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  ssvaer::Tensor t(r, c);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

inline ssvaer::Tensor normal(std::mt19937_64& rng, std::size_t r, std::size_t c, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  ssvaer::Tensor t(r, c);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

// Entries pushed at least `gap` away from every point in `kinks`.
template <class... D>
void keep_away(ssvaer::Tensor& t, double gap, D... kinks) {
  for (auto& v : t.values())
    for (double k : {static_cast<double>(kinks)...})
      if (std::abs(v - k) < gap) v = k + (v < k ? -gap : gap);
}

}  // namespace testutil
