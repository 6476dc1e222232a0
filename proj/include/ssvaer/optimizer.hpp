#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssvaer/tensor.hpp"

namespace ssvaer {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// Bias-corrected Adam update on every tensor in `params`, using the
/// gradients stored on the tensors. `names` is used only for error messages.
inline void adam_step(std::span<Tensor* const> params, AdamState& state, double lr,
                      std::span<const std::string> names = {}) {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("adam_step: lr must be positive");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->size(), 0.0);
      state.v.emplace_back(p->size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw ShapeError("adam_step: state tracks " + std::to_string(state.m.size()) +
                     " tensors, got " + std::to_string(params.size()));
  }
  auto label = [&](std::size_t i) {
    return i < names.size() ? names[i] : "#" + std::to_string(i);
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = *params[i];
    if (state.m[i].size() != p.size()) throw ShapeError("adam_step: shape changed for parameter " + label(i));
    if (p.has_grad() && p.grad().size() != p.size()) throw ShapeError("adam_step: gradient size mismatch for " + label(i));
    for (double g : p.grad()) {
      if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in parameter " + label(i));
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    const bool has = p.has_grad();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double g = has ? p.grad()[k] : 0.0;
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

/// Linear warmup from lr_min, then cosine annealing down to lr_min at the
/// last epoch. Stepped once per epoch.
struct LrSchedule {
  double lr_max = 0.01;
  double lr_min = 0.0001;
  int warmup_epochs = 60;
  int total_epochs = 300;

  void validate() const {
    if (!(lr_min > 0.0 && lr_min <= lr_max)) throw std::invalid_argument("lr schedule: need 0 < lr_min <= lr_max");
    if (warmup_epochs < 0 || warmup_epochs >= total_epochs) {
      throw std::invalid_argument("lr schedule: need 0 <= warmup < total epochs");
    }
  }
};

inline double lr_at(const LrSchedule& s, int epoch) {
  s.validate();
  if (epoch < 0 || epoch >= s.total_epochs) {
    throw std::out_of_range("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(s.total_epochs) + ")");
  }
  const double span = s.lr_max - s.lr_min;
  if (epoch < s.warmup_epochs) {
    return s.lr_min + span * static_cast<double>(epoch + 1) / static_cast<double>(s.warmup_epochs);
  }
  const int cosine_len = s.total_epochs - 1 - s.warmup_epochs;
  if (cosine_len == 0) return s.lr_max;
  const double phase = static_cast<double>(epoch - s.warmup_epochs) / static_cast<double>(cosine_len);
  return s.lr_min + 0.5 * span * (1.0 + std::cos(std::numbers::pi * phase));
}

}  // namespace ssvaer
