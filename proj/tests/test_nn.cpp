#include <doctest.h>

#include <random>

#include "ssvaer/nn.hpp"
#include "test_util.hpp"

using namespace ssvaer;

TEST_CASE("init_mlp shapes, bounds and seeding") {
  const MlpSpec spec{{2, 3}, Activation::relu, 1};
  const auto a = init_mlp(spec, 3);
  REQUIRE(a.size() == 1);
  CHECK(a[0].weight.rows() == 2);
  CHECK(a[0].weight.cols() == 3);
  CHECK(a[0].bias.size() == 3);
  for (double w : a[0].weight.values()) CHECK(std::abs(w) <= std::sqrt(6.0 / 5.0));
  for (double b : a[0].bias.values()) CHECK(b == 0.0);

  const MlpSpec big{{20, 16, 12}, Activation::relu, 2};
  const auto s1 = init_mlp(big, 42);
  const auto s2 = init_mlp(big, 42);
  const auto s3 = init_mlp(big, 43);
  REQUIRE(s1.size() == big.layer_count());
  bool differs = false;
  for (std::size_t i = 0; i < s1.size(); ++i) {
    CHECK(s1[i].weight == s2[i].weight);
    differs = differs || !(s1[i].weight == s3[i].weight);
  }
  CHECK(differs);
}

TEST_CASE("invalid specs") {
  CHECK_THROWS_AS(init_mlp(MlpSpec{{4}, Activation::relu, 1}, 0), std::invalid_argument);
  CHECK_THROWS_AS(init_mlp(MlpSpec{{4, 0}, Activation::relu, 1}, 0), std::invalid_argument);
  CHECK_THROWS_AS(init_mlp(MlpSpec{{4, 2}, Activation::relu, 3}, 0), std::invalid_argument);
  CHECK_THROWS_AS(parse_activation("sigmoid"), std::invalid_argument);
}

TEST_CASE("zero parameters give mean 0 and logvar 0") {
  MlpSpec spec{{3, 4, 2}, Activation::tanh, 2};
  auto layers = init_mlp(spec, 1);
  for (auto& l : layers) {
    for (auto& v : l.weight.values()) v = 0.0;
  }
  Mlp net(spec, layers);
  std::mt19937_64 rng(1);
  Graph g;
  auto out = net.forward(g, g.constant(testutil::uniform(rng, 5, 3)));
  for (double v : g.value(out.mean).values()) CHECK(v == 0.0);
  for (double v : g.value(*out.logvar).values()) CHECK(v == 0.0);
}

TEST_CASE("single linear layer with identity weight copies its input") {
  MlpSpec spec{{2, 2}, Activation::relu, 1};
  std::vector<LayerParams> layers{{Tensor(2, 2, std::vector<double>{1, 0, 0, 1}), Tensor(1, 2)}};
  Mlp net(spec, layers);
  Graph g;
  CHECK(g.value(net.forward(g, g.constant(Tensor::row({1.0, 2.0}))).mean) == Tensor::row({1.0, 2.0}));
}

TEST_CASE("two-layer net against hand arithmetic") {
  // h = relu([1 2] W1 + b1) = relu([1.1, -0.2]) = [1.1, 0]; y = h W2 + b2 = 2.25
  MlpSpec spec{{2, 2, 1}, Activation::relu, 1};
  std::vector<LayerParams> layers{
      {Tensor(2, 2, std::vector<double>{0.5, -1.0, 0.25, 0.5}), Tensor::row({0.1, -0.2})},
      {Tensor(2, 1, std::vector<double>{2.0, 3.0}), Tensor::row({0.05})}};
  Mlp net(spec, layers);
  Graph g;
  CHECK(std::abs(g.scalar(net.forward(g, g.constant(Tensor::row({1.0, 2.0}))).mean) - 2.25) < 1e-12);
}

TEST_CASE("width mismatch names expected and actual") {
  Mlp net(MlpSpec{{3, 2}, Activation::relu, 1}, 0);
  Graph g;
  CHECK_THROWS_WITH_AS(net.forward(g, g.constant(Tensor(1, 4))), "mlp: expected input width 3, got 4", ShapeError);
}

TEST_CASE("logvar head is clamped to [-7, 7]") {
  MlpSpec spec{{1, 1}, Activation::relu, 2};
  std::vector<LayerParams> layers{{Tensor::scalar(0.0), Tensor::scalar(0.0)},
                                  {Tensor::scalar(100.0), Tensor::scalar(0.0)}};
  Mlp net(spec, layers);
  Graph g;
  auto out = net.forward(g, g.constant(Tensor::column({1.0, -1.0})));
  CHECK(g.value(*out.logvar)[0] == kLogVarMax);
  CHECK(g.value(*out.logvar)[1] == kLogVarMin);
}

TEST_CASE("batch forward equals row-wise forward") {
  std::mt19937_64 rng(4);
  for (auto act : {Activation::relu, Activation::tanh, Activation::identity}) {
    const Mlp net(MlpSpec{{5, 7, 3}, act, 2}, 9);
    const Tensor X = testutil::uniform(rng, 6, 5);
    Graph g;
    auto all = net.forward_frozen(g, g.constant(X));
    for (std::size_t r = 0; r < X.rows(); ++r) {
      const std::size_t idx[] = {r};
      auto one = net.forward_frozen(g, g.constant(X.select_rows(idx)));
      for (std::size_t c = 0; c < 3; ++c) {
        CHECK(std::abs(g.value(one.mean)[c] - g.value(all.mean)(r, c)) <= 1e-12);
        CHECK(std::abs(g.value(*one.logvar)[c] - g.value(*all.logvar)(r, c)) <= 1e-12);
      }
    }
  }
}

TEST_CASE("mlp gradients pass check_gradients") {
  std::mt19937_64 rng(8);
  for (auto act : {Activation::tanh, Activation::relu}) {
    Mlp net(MlpSpec{{4, 6, 3}, act, 2}, 17);
    const Tensor X = testutil::uniform(rng, 5, 4);
    std::vector<Tensor*> ps;
    net.visit_parameters("net", [&](const std::string&, Tensor& t) { ps.push_back(&t); });
    auto build = [&](Graph& g) {
      auto out = net.forward(g, g.constant(X));
      return sum(square(out.mean)) + sum(exp(*out.logvar));
    };
    CHECK(check_gradients(build, ps) < 1e-4);
  }
}

TEST_CASE("frozen forward leaves parameters without gradients") {
  Mlp net(MlpSpec{{2, 3, 1}, Activation::tanh, 1}, 5);
  Tensor x = Tensor::row({0.3, -0.4});
  Graph g;
  Var xv = g.parameter(x);
  g.backward(sum(net.forward_frozen(g, xv).mean));
  CHECK(x.has_grad());
  for (auto& l : net.layers()) CHECK_FALSE(l.weight.has_grad());
}

TEST_CASE("parameter names") {
  Mlp net(MlpSpec{{4, 3, 2}, Activation::relu, 2}, 0);
  std::vector<std::string> names;
  net.visit_parameters("enc", [&](const std::string& n, Tensor&) { names.push_back(n); });
  CHECK(names == std::vector<std::string>{"enc.0.weight", "enc.0.bias", "enc.1.weight", "enc.1.bias",
                                          "enc.2.weight", "enc.2.bias"});
}
