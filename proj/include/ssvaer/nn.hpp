#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssvaer/autodiff.hpp"

namespace ssvaer {

enum class Activation { relu, tanh, identity };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "identity" || s == "linear") return Activation::identity;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

inline Var activate(Var x, Activation a) {
  switch (a) {
    case Activation::relu: return relu(x);
    case Activation::tanh: return tanh(x);
    case Activation::identity: return x;
  }
  return x;
}

/// Log-variance heads are clamped to this range before use.
inline constexpr double kLogVarMin = -7.0;
inline constexpr double kLogVarMax = 7.0;

/// Layer widths of a fully connected stack, input first.
///
/// {20,16,12} is a 20->16 hidden layer followed by a 16->12 linear output.
/// With two heads the last transition is duplicated: one head for the mean,
/// one for the log-variance.
struct MlpSpec {
  std::vector<std::size_t> sizes;
  Activation hidden = Activation::relu;
  int heads = 1;

  void validate() const {
    if (sizes.size() < 2) throw std::invalid_argument("mlp: need at least two layer sizes");
    for (auto s : sizes)
      if (s == 0) throw std::invalid_argument("mlp: layer sizes must be positive");
    if (heads != 1 && heads != 2) throw std::invalid_argument("mlp: heads must be 1 or 2");
  }

  std::size_t input_width() const { return sizes.front(); }
  std::size_t output_width() const { return sizes.back(); }
  /// Number of LayerParams: hidden transitions plus one per head.
  std::size_t layer_count() const { return sizes.size() - 2 + static_cast<std::size_t>(heads); }

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

struct LayerParams {
  Tensor weight;  // in x out
  Tensor bias;    // 1 x out
};

/// Glorot-uniform weights, zero biases. Same seed gives bit-identical output.
inline std::vector<LayerParams> init_mlp(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::vector<LayerParams> layers;
  layers.reserve(spec.layer_count());
  auto make = [&](std::size_t in, std::size_t out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    LayerParams p{Tensor(in, out), Tensor(1, out)};
    for (auto& w : p.weight.values()) w = dist(rng);
    layers.push_back(std::move(p));
  };
  const auto n = spec.sizes.size();
  for (std::size_t i = 0; i + 2 < n; ++i) make(spec.sizes[i], spec.sizes[i + 1]);
  for (int h = 0; h < spec.heads; ++h) make(spec.sizes[n - 2], spec.sizes[n - 1]);
  return layers;
}

struct MlpOutput {
  Var mean;
  std::optional<Var> logvar;
};

/// A fully connected network: spec plus owned parameters.
class Mlp {
 public:
  Mlp() = default;
  Mlp(MlpSpec spec, std::uint64_t seed) : spec_(std::move(spec)), layers_(init_mlp(spec_, seed)) {}
  Mlp(MlpSpec spec, std::vector<LayerParams> layers) : spec_(std::move(spec)), layers_(std::move(layers)) {
    spec_.validate();
    if (layers_.size() != spec_.layer_count()) throw std::invalid_argument("mlp: wrong layer count");
  }

  const MlpSpec& spec() const noexcept { return spec_; }
  std::vector<LayerParams>& layers() noexcept { return layers_; }
  const std::vector<LayerParams>& layers() const noexcept { return layers_; }

  /// Trainable pass: parameters are bound to the graph and receive gradients.
  MlpOutput forward(Graph& g, Var x) {
    return run_impl(*this, g, x, [&](Tensor& t) { return g.parameter(t); });
  }

  /// Parameters enter as constants; gradients still flow to `x`.
  MlpOutput forward_frozen(Graph& g, Var x) const {
    return run_impl(*this, g, x, [&](const Tensor& t) { return g.constant(t); });
  }

  /// Appends (name, tensor) pairs with names "<prefix>.<layer>.weight|bias".
  template <class Sink>
  void visit_parameters(const std::string& prefix, Sink&& sink) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      sink(prefix + "." + std::to_string(i) + ".weight", layers_[i].weight);
      sink(prefix + "." + std::to_string(i) + ".bias", layers_[i].bias);
    }
  }

 private:
  template <class Self, class Bind>
  static MlpOutput run_impl(Self& self, Graph& g, Var x, Bind&& bind) {
    const auto& spec = self.spec_;
    const auto& X = g.value(x);
    if (X.cols() != spec.input_width()) {
      throw ShapeError("mlp: expected input width " + std::to_string(spec.input_width()) +
                       ", got " + std::to_string(X.cols()));
    }
    auto linear = [&](Var in, auto& p) { return g.add(g.matmul(in, bind(p.weight)), bind(p.bias)); };
    const auto hidden = spec.sizes.size() - 2;
    Var h = x;
    for (std::size_t i = 0; i < hidden; ++i) h = activate(linear(h, self.layers_[i]), spec.hidden);
    MlpOutput out{linear(h, self.layers_[hidden]), std::nullopt};
    if (spec.heads == 2) {
      out.logvar = g.clamp(linear(h, self.layers_[hidden + 1]), kLogVarMin, kLogVarMax);
    }
    return out;
  }

  MlpSpec spec_;
  std::vector<LayerParams> layers_;
};

inline MlpOutput mlp_forward(Mlp& net, Graph& g, Var x) { return net.forward(g, x); }

}  // namespace ssvaer
