#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ssvaer/tensor.hpp"

namespace ssvaer {

/// Consecutive standardized records (x_t, x_{t+1}) with the label of x_t.
///
/// `y` has one entry per row; entries of unlabelled rows are 0 and must not
/// be read. `mask[i] != 0` marks row i as labelled.
struct SampleBatch {
  Tensor x_t;
  Tensor x_next;
  Tensor y;
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> rows;

  std::size_t size() const noexcept { return x_t.rows(); }

  std::vector<std::size_t> labelled() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> unlabelled() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (!mask[i]) out.push_back(i);
    return out;
  }
};

}  // namespace ssvaer
