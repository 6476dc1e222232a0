#pragma once

#include <numbers>
#include <string>

#include "ssvaer/autodiff.hpp"

namespace ssvaer {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Diagonal Gaussian over the columns of `mean`; one distribution per row.
struct DiagGaussian {
  Var mean;
  Var logvar;
};

namespace detail {

inline void require_same_shape(const Graph& g, Var a, Var b, const char* what) {
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  if (A.shape() != B.shape()) {
    throw ShapeError(std::string(what) + ": width mismatch (" + A.shape_string() + " vs " +
                     B.shape_string() + ")");
  }
}

inline Graph& checked(const DiagGaussian& q, const char* what) {
  Graph& g = graph_of(q.mean, q.logvar);
  require_same_shape(g, q.mean, q.logvar, what);
  return g;
}

}  // namespace detail

/// Per-row KL(q || p), rows x 1.
inline Var kl_diag_rows(const DiagGaussian& q, const DiagGaussian& p) {
  Graph& g = detail::checked(q, "kl_diag");
  detail::checked(p, "kl_diag");
  detail::require_same_shape(g, q.mean, p.mean, "kl_diag");
  Var log_ratio = 0.5 * (p.logvar - q.logvar);
  Var spread = exp(q.logvar) + square(q.mean - p.mean);
  Var quad = spread / (2.0 * exp(p.logvar));
  return sum_rows(log_ratio + quad + (-0.5));
}

/// KL(q || p) summed over every entry.
inline Var kl_diag(const DiagGaussian& q, const DiagGaussian& p) { return sum(kl_diag_rows(q, p)); }

/// Per-row differential entropy, rows x 1.
inline Var gauss_entropy_rows(const DiagGaussian& q) {
  detail::checked(q, "gauss_entropy");
  return sum_rows(0.5 * q.logvar + 0.5 * (kLog2Pi + 1.0));
}

inline Var gauss_entropy(const DiagGaussian& q) { return sum(gauss_entropy_rows(q)); }

/// Per-row negative log density of `target` under q, rows x 1.
inline Var gauss_nll_rows(const DiagGaussian& q, Var target) {
  Graph& g = detail::checked(q, "gauss_nll");
  detail::require_same_shape(g, q.mean, target, "gauss_nll");
  Var mahal = square(target - q.mean) / exp(q.logvar);
  return sum_rows(0.5 * (q.logvar + mahal) + 0.5 * kLog2Pi);
}

inline Var gauss_nll(const DiagGaussian& q, Var target) { return sum(gauss_nll_rows(q, target)); }

/// mean + exp(logvar / 2) * noise; `noise` enters as a constant.
inline Var reparameterize(const DiagGaussian& q, const Tensor& noise) {
  Graph& g = detail::checked(q, "reparameterize");
  if (g.value(q.mean).shape() != noise.shape()) {
    throw ShapeError("reparameterize: width mismatch (" + g.value(q.mean).shape_string() +
                     " vs noise " + noise.shape_string() + ")");
  }
  return q.mean + exp(0.5 * q.logvar) * g.constant(noise);
}

}  // namespace ssvaer
