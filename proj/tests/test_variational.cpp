#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "ssvaer/variational.hpp"
#include "test_util.hpp"

using namespace ssvaer;

namespace {

DiagGaussian gauss(Graph& g, Tensor mean, Tensor logvar) { return {g.constant(std::move(mean)), g.constant(std::move(logvar))}; }
DiagGaussian gauss1(Graph& g, double mean, double logvar) { return gauss(g, Tensor::scalar(mean), Tensor::scalar(logvar)); }

// Scalar density evaluated directly, independent of the graph code.
double normal_pdf(double x, double mu, double var) {
  return std::exp(-(x - mu) * (x - mu) / (2.0 * var)) / std::sqrt(2.0 * std::numbers::pi * var);
}

}  // namespace

TEST_CASE("kl_diag closed forms") {
  Graph g;
  CHECK(g.scalar(kl_diag(gauss1(g, 0.3, -0.2), gauss1(g, 0.3, -0.2))) == 0.0);
  CHECK(std::abs(g.scalar(kl_diag(gauss1(g, 1.0, 0.0), gauss1(g, 0.0, 0.0))) - 0.5) < 1e-10);
  // q = N(0, 2), p = N(0, 1): 0.5 (-ln 2) + 1 - 0.5
  const double expected = 0.5 * (-std::log(2.0)) + 1.0 - 0.5;
  CHECK(std::abs(expected - 0.153426) < 1e-6);
  CHECK(std::abs(g.scalar(kl_diag(gauss1(g, 0.0, std::log(2.0)), gauss1(g, 0.0, 0.0))) - expected) < 1e-10);
}

TEST_CASE("gauss_entropy closed forms") {
  Graph g;
  const double h1 = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
  CHECK(std::abs(h1 - 1.418939) < 1e-6);
  CHECK(std::abs(g.scalar(gauss_entropy(gauss1(g, 5.0, 0.0))) - h1) < 1e-10);
  CHECK(std::abs(g.scalar(gauss_entropy(gauss(g, Tensor::row({0, 0}), Tensor::row({0, 0})))) - 2.0 * h1) < 1e-10);
  CHECK(std::abs(2.0 * h1 - 2.837877) < 1e-6);
  const double h4 = h1 + 0.5 * std::log(4.0);
  CHECK(std::abs(h4 - 2.112086) < 1e-6);
  CHECK(std::abs(g.scalar(gauss_entropy(gauss1(g, 0.0, std::log(4.0)))) - h4) < 1e-10);
}

TEST_CASE("gauss_nll closed forms") {
  Graph g;
  const double at_mode = 0.5 * std::log(2.0 * std::numbers::pi);
  CHECK(std::abs(at_mode - 0.918939) < 1e-6);
  CHECK(std::abs(g.scalar(gauss_nll(gauss1(g, 0.7, 0.0), g.constant(Tensor::scalar(0.7)))) - at_mode) < 1e-10);
  CHECK(std::abs(g.scalar(gauss_nll(gauss1(g, 0.7, 0.0), g.constant(Tensor::scalar(1.7)))) - (at_mode + 0.5)) < 1e-10);
}

TEST_CASE("gauss_nll on a random 3-wide case matches the density") {
  std::mt19937_64 rng(31);
  const Tensor mu = testutil::uniform(rng, 1, 3);
  const Tensor lv = testutil::uniform(rng, 1, 3, -1.0, 1.0);
  const Tensor x = testutil::uniform(rng, 1, 3);
  double density = 1.0;
  for (std::size_t i = 0; i < 3; ++i) density *= normal_pdf(x[i], mu[i], std::exp(lv[i]));
  Graph g;
  CHECK(std::abs(g.scalar(gauss_nll(gauss(g, mu, lv), g.constant(x))) + std::log(density)) < 1e-10);
}

TEST_CASE("kl_diag is non-negative and zero on identical pairs") {
  std::mt19937_64 rng(77);
  for (int i = 0; i < 1000; ++i) {
    Graph g;
    const Tensor m = testutil::uniform(rng, 1, 4, -3, 3);
    const Tensor l = testutil::uniform(rng, 1, 4, -3, 3);
    const double kl = g.scalar(kl_diag(gauss(g, m, l), gauss(g, testutil::uniform(rng, 1, 4, -3, 3),
                                                             testutil::uniform(rng, 1, 4, -3, 3))));
    CHECK(kl >= 0.0);
    CHECK(std::abs(g.scalar(kl_diag(gauss(g, m, l), gauss(g, m, l)))) < 1e-12);
  }
}

TEST_CASE("width mismatches") {
  Graph g;
  auto q = gauss(g, Tensor(1, 2), Tensor(1, 2));
  auto p = gauss(g, Tensor(1, 3), Tensor(1, 3));
  CHECK_THROWS_AS(kl_diag(q, p), ShapeError);
  CHECK_THROWS_AS(gauss_nll(q, g.constant(Tensor(1, 3))), ShapeError);
  CHECK_THROWS_AS(reparameterize(q, Tensor(1, 3)), ShapeError);
  CHECK_THROWS_AS(gauss_entropy(DiagGaussian{g.constant(Tensor(1, 2)), g.constant(Tensor(1, 3))}), ShapeError);
}

TEST_CASE("reparameterize") {
  Graph g;
  auto q = gauss(g, Tensor::row({0.4, -1.2}), Tensor::row({0.3, 2.0}));
  CHECK(g.value(reparameterize(q, Tensor(1, 2))) == Tensor::row({0.4, -1.2}));
  CHECK(g.scalar(reparameterize(gauss1(g, 0.4, 0.0), Tensor::scalar(1.0))) == doctest::Approx(1.4).epsilon(1e-15));
}

TEST_CASE("Monte-Carlo: sample mean and expected NLL") {
  constexpr std::size_t n = 100000;
  const double mu = 0.8, lv = std::log(2.25);  // sd 1.5
  std::mt19937_64 rng(123);
  const Tensor noise = testutil::normal(rng, n, 1);
  Graph g;
  auto q = gauss(g, Tensor(n, 1, mu), Tensor(n, 1, lv));
  Var z = reparameterize(q, noise);
  const double sample_mean = g.scalar(mean(z));
  CHECK(std::abs(sample_mean - mu) < 3.0 * 1.5 / std::sqrt(static_cast<double>(n)));

  // E_q[-log q(z)] equals the entropy; the NLL of unit-scale residuals has
  // variance 1/2, so three standard errors is 3 sqrt(0.5 / n).
  const double avg_nll = g.scalar(mean(gauss_nll_rows(q, z)));
  const double entropy = g.scalar(gauss_entropy_rows(gauss1(g, mu, lv)));
  CHECK(std::abs(avg_nll - entropy) < 3.0 * std::sqrt(0.5 / static_cast<double>(n)));
}

TEST_CASE("all four ops pass check_gradients") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 25; ++trial) {
    Tensor qm = testutil::uniform(rng, 3, 2), ql = testutil::uniform(rng, 3, 2, -1, 1);
    Tensor pm = testutil::uniform(rng, 3, 2), pl = testutil::uniform(rng, 3, 2, -1, 1);
    Tensor x = testutil::uniform(rng, 3, 2);
    const Tensor eps = testutil::normal(rng, 3, 2);
    std::vector<Tensor*> ps{&qm, &ql, &pm, &pl, &x};
    auto q = [&](Graph& g) { return DiagGaussian{g.parameter(qm), g.parameter(ql)}; };
    auto p = [&](Graph& g) { return DiagGaussian{g.parameter(pm), g.parameter(pl)}; };
    CHECK(check_gradients([&](Graph& g) { return kl_diag(q(g), p(g)); }, ps) < 1e-6);
    CHECK(check_gradients([&](Graph& g) { return gauss_entropy(q(g)); }, ps) < 1e-6);
    CHECK(check_gradients([&](Graph& g) { return gauss_nll(q(g), g.parameter(x)); }, ps) < 1e-6);
    CHECK(check_gradients([&](Graph& g) { return sum(square(reparameterize(q(g), eps))); }, ps) < 1e-6);
  }
}
