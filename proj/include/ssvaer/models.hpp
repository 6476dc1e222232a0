#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "ssvaer/autodiff.hpp"
#include "ssvaer/batch.hpp"
#include "ssvaer/nn.hpp"
#include "ssvaer/variational.hpp"

namespace ssvaer {

enum class ModelKind { ssvaer, svaer, fcnn };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::ssvaer: return "ssvaer";
    case ModelKind::svaer: return "svaer";
    case ModelKind::fcnn: return "fcnn";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "ssvaer") return ModelKind::ssvaer;
  if (s == "svaer") return ModelKind::svaer;
  if (s == "fcnn") return ModelKind::fcnn;
  throw std::invalid_argument("unknown model kind '" + s + "' (expected ssvaer, svaer or fcnn)");
}

/// Layer widths per subnetwork.
///
/// `shared` and `decoder` omit the data width: the input width is prepended
/// to the shared encoder and appended to the decoder when a model is built.
struct NetworkSizes {
  std::vector<std::size_t> shared{20, 16, 12};
  std::vector<std::size_t> latent{12, 6, 6};
  std::vector<std::size_t> regressor{12, 6, 1};
  std::vector<std::size_t> generator{2, 2, 6};
  std::vector<std::size_t> decoder{6, 12, 16, 20};
  Activation activation = Activation::relu;

  std::size_t latent_width() const { return latent.back(); }

  void validate(ModelKind kind) const {
    auto need = [](bool ok, const std::string& what) {
      if (!ok) throw std::invalid_argument("network sizes: " + what);
    };
    need(!shared.empty(), "shared encoder needs at least one layer");
    need(regressor.size() >= 2, "regressor needs at least two sizes");
    need(regressor.front() == shared.back(), "regressor input must equal shared encoder output");
    need(regressor.back() == 1, "regressor output width must be 1");
    if (kind == ModelKind::fcnn) return;
    need(latent.size() >= 2, "latent encoder needs at least two sizes");
    need(latent.front() == shared.back(), "latent encoder input must equal shared encoder output");
    need(!decoder.empty() && decoder.front() == latent.back(),
         "decoder input must equal latent width");
    if (kind == ModelKind::ssvaer) {
      need(generator.size() >= 2, "latent generator needs at least two sizes");
      need(generator.front() == 2, "latent generator input width must be 2 (y, dy)");
      need(generator.back() == latent.back(), "latent generator output must equal latent width");
    }
  }
};

/// Multipliers on each loss term. Entropy is subtracted unless
/// `entropy_minimizing` is set.
struct LossWeights {
  double rec = 1.0;
  double kl = 1.0;
  double label = 1.0;
  double entropy = 1.0;
  double pv = 1.0;
  double recon_reg = 1.0;
  bool entropy_minimizing = false;

  double entropy_sign() const { return entropy_minimizing ? 1.0 : -1.0; }
};

/// Standard-normal draws for one batch.
struct BatchNoise {
  Tensor latent;     // n x Nz, sample of q(z|x_t)
  Tensor label;      // n x 1, sample of q(y|x_t)
  Tensor generated;  // n x Nz, sample of p(z_y|y, dy)

  static BatchNoise zeros(std::size_t n, std::size_t nz) {
    return {Tensor(n, nz), Tensor(n, 1), Tensor(n, nz)};
  }

  static BatchNoise draw(std::mt19937_64& rng, std::size_t n, std::size_t nz) {
    std::normal_distribution<double> normal(0.0, 1.0);
    BatchNoise out = zeros(n, nz);
    for (auto* t : {&out.latent, &out.label, &out.generated})
      for (auto& v : t->values()) v = normal(rng);
    return out;
  }
};

struct LossTerms {
  double rec = 0.0;
  double kl = 0.0;
  double label = 0.0;
  double entropy = 0.0;
  double pv = 0.0;
  double recon_reg = 0.0;
  double total = 0.0;
};

/// Graph handles of every loss term, plus a few intermediates tests inspect.
struct LossGraph {
  Var rec, kl, label, entropy, pv, recon_reg, total;
  Var x_next;         // constant input node of x_{t+1}
  Var next_features;  // shared-encoder output for x_{t+1}

  LossTerms values(const Graph& g) const {
    auto get = [&](Var v) { return v.valid() ? g.scalar(v) : 0.0; };
    return {get(rec), get(kl), get(label), get(entropy), get(pv), get(recon_reg), get(total)};
  }
};

/// Label de-standardization: y = mean + scale * y_std.
struct LabelScale {
  double mean = 0.0;
  double scale = 1.0;
};

struct Prediction {
  std::vector<double> mean;
  std::vector<double> variance;
};

namespace detail {

inline std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t k) {
  // splitmix64 step
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (k + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline MlpSpec spec_of(std::vector<std::size_t> sizes, Activation act, int heads) {
  MlpSpec s{std::move(sizes), act, heads};
  s.validate();
  return s;
}

inline std::vector<std::size_t> prepend(std::size_t first, const std::vector<std::size_t>& rest) {
  std::vector<std::size_t> out{first};
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

inline std::vector<std::size_t> append(const std::vector<std::size_t>& head, std::size_t last) {
  auto out = head;
  out.push_back(last);
  return out;
}

inline void check_batch(const SampleBatch& b, std::size_t width) {
  if (b.size() == 0) throw std::invalid_argument("loss: empty batch");
  if (b.x_t.cols() != width) {
    throw ShapeError("loss: expected input width " + std::to_string(width) + ", got " +
                     std::to_string(b.x_t.cols()));
  }
  if (b.mask.size() != b.size() || b.y.rows() != b.size()) {
    throw ShapeError("loss: mask/label length does not match batch size");
  }
}

inline DiagGaussian gather(Graph& g, const DiagGaussian& q, const std::vector<std::size_t>& rows) {
  return {g.gather_rows(q.mean, rows), g.gather_rows(q.logvar, rows)};
}

/// Mean label NLL over labelled rows and mean entropy over unlabelled rows.
inline void label_terms(Graph& g, const SampleBatch& b, const DiagGaussian& q_y, Var& label,
                        Var& entropy) {
  const auto lab = b.labelled();
  const auto unl = b.unlabelled();
  if (lab.empty()) {
    label = g.constant(Tensor::scalar(0.0));
  } else {
    Var target = g.constant(b.y.select_rows(lab));
    label = mean(gauss_nll_rows(gather(g, q_y, lab), target));
  }
  if (unl.empty()) {
    entropy = g.constant(Tensor::scalar(0.0));
  } else {
    entropy = mean(gauss_entropy_rows(gather(g, q_y, unl)));
  }
}

inline DiagGaussian as_gaussian(const MlpOutput& o) { return {o.mean, *o.logvar}; }

}  // namespace detail

// ---------------------------------------------------------------------------

/// Shared encoder, latent encoder, quality and pseudo-variation regressors,
/// latent generator and decoder.
struct SsvaerModel {
  Mlp shared;
  Mlp latent;
  Mlp quality;
  Mlp pv;
  Mlp generator;
  Mlp decoder;

  static SsvaerModel create(const NetworkSizes& s, std::size_t input_width, std::uint64_t seed) {
    s.validate(ModelKind::ssvaer);
    using detail::spec_of;
    const auto a = s.activation;
    return {Mlp(spec_of(detail::prepend(input_width, s.shared), a, 1), detail::sub_seed(seed, 0)),
            Mlp(spec_of(s.latent, a, 2), detail::sub_seed(seed, 1)),
            Mlp(spec_of(s.regressor, a, 2), detail::sub_seed(seed, 2)),
            Mlp(spec_of(s.regressor, a, 1), detail::sub_seed(seed, 3)),
            Mlp(spec_of(s.generator, a, 2), detail::sub_seed(seed, 4)),
            Mlp(spec_of(detail::append(s.decoder, input_width), a, 2), detail::sub_seed(seed, 5))};
  }

  std::size_t input_width() const { return shared.spec().input_width(); }
  std::size_t latent_width() const { return latent.spec().output_width(); }
  Activation activation() const { return shared.spec().hidden; }

  template <class Sink>
  void visit_parameters(Sink&& sink) {
    shared.visit_parameters("shared", sink);
    latent.visit_parameters("latent", sink);
    quality.visit_parameters("quality", sink);
    pv.visit_parameters("pv", sink);
    generator.visit_parameters("generator", sink);
    decoder.visit_parameters("decoder", sink);
  }
};

/// Shared encoder, latent encoder, quality regressor, decoder and the unit
/// direction `w` (1 x Nz) of the linear latent prior.
struct SvaerModel {
  Mlp shared;
  Mlp latent;
  Mlp quality;
  Mlp decoder;
  Tensor w;

  static SvaerModel create(const NetworkSizes& s, std::size_t input_width, std::uint64_t seed) {
    s.validate(ModelKind::svaer);
    using detail::spec_of;
    const auto a = s.activation;
    SvaerModel m{Mlp(spec_of(detail::prepend(input_width, s.shared), a, 1), detail::sub_seed(seed, 0)),
                 Mlp(spec_of(s.latent, a, 2), detail::sub_seed(seed, 1)),
                 Mlp(spec_of(s.regressor, a, 2), detail::sub_seed(seed, 2)),
                 Mlp(spec_of(detail::append(s.decoder, input_width), a, 2), detail::sub_seed(seed, 5)),
                 Tensor(1, s.latent_width())};
    std::mt19937_64 rng(detail::sub_seed(seed, 6));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : m.w.values()) v = normal(rng);
    m.normalize_direction();
    return m;
  }

  /// Projects `w` back onto the unit sphere.
  void normalize_direction() {
    double n2 = 0.0;
    for (double v : w.values()) n2 += v * v;
    const double n = std::sqrt(n2);
    if (!(n > 0.0)) throw NumericError("svaer: latent direction collapsed to zero");
    for (auto& v : w.values()) v /= n;
  }

  std::size_t input_width() const { return shared.spec().input_width(); }
  std::size_t latent_width() const { return latent.spec().output_width(); }
  Activation activation() const { return shared.spec().hidden; }

  template <class Sink>
  void visit_parameters(Sink&& sink) {
    shared.visit_parameters("shared", sink);
    latent.visit_parameters("latent", sink);
    quality.visit_parameters("quality", sink);
    decoder.visit_parameters("decoder", sink);
    sink("direction", w);
  }
};

/// Plain regressor: shared encoder followed by a single-head quality network.
struct FcnnModel {
  Mlp shared;
  Mlp quality;

  static FcnnModel create(const NetworkSizes& s, std::size_t input_width, std::uint64_t seed) {
    s.validate(ModelKind::fcnn);
    using detail::spec_of;
    const auto a = s.activation;
    return {Mlp(spec_of(detail::prepend(input_width, s.shared), a, 1), detail::sub_seed(seed, 0)),
            Mlp(spec_of(s.regressor, a, 1), detail::sub_seed(seed, 2))};
  }

  std::size_t input_width() const { return shared.spec().input_width(); }
  Activation activation() const { return shared.spec().hidden; }

  template <class Sink>
  void visit_parameters(Sink&& sink) {
    shared.visit_parameters("shared", sink);
    quality.visit_parameters("quality", sink);
  }
};

using Model = std::variant<SsvaerModel, SvaerModel, FcnnModel>;

inline ModelKind kind_of(const Model& m) { return static_cast<ModelKind>(m.index()); }

inline Model create_model(ModelKind kind, const NetworkSizes& sizes, std::size_t input_width,
                          std::uint64_t seed) {
  switch (kind) {
    case ModelKind::ssvaer: return SsvaerModel::create(sizes, input_width, seed);
    case ModelKind::svaer: return SvaerModel::create(sizes, input_width, seed);
    case ModelKind::fcnn: return FcnnModel::create(sizes, input_width, seed);
  }
  throw std::invalid_argument("create_model: bad kind");
}

/// (name, tensor) for every trainable tensor, in a fixed order.
inline std::vector<std::pair<std::string, Tensor*>> named_parameters(Model& m) {
  std::vector<std::pair<std::string, Tensor*>> out;
  std::visit([&](auto& model) { model.visit_parameters([&](std::string n, Tensor& t) {
                 out.emplace_back(std::move(n), &t);
               }); },
             m);
  return out;
}

template <class M>
std::vector<Tensor*> parameter_list(M& m) {
  std::vector<Tensor*> out;
  m.visit_parameters([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

// ---------------------------------------------------------------------------

/// Shared-encoder features: the encoder output passed through the hidden
/// activation.
inline Var shared_features(Mlp& shared, Graph& g, Var x) {
  return activate(shared.forward(g, x).mean, shared.spec().hidden);
}

inline Var shared_features_frozen(const Mlp& shared, Graph& g, Var x) {
  return activate(shared.forward_frozen(g, x).mean, shared.spec().hidden);
}

/// Builds every SSVAER loss term for one batch.
///
/// Stop-gradient points: the x_{t+1} branch (shared encoder, latent encoder
/// and pseudo-variation regressor on x_{t+1}), the latent generator's own
/// weights on its t+1 call, and the decoder weights in the reconstruction
/// regularizer. Those passes read parameters from `frozen` when given, else
/// from `model`; a gradient check passes a snapshot so that perturbations of
/// `model` leave the stopped quantities fixed.
inline LossGraph ssvaer_loss_terms(Graph& g, SsvaerModel& model, const SampleBatch& batch,
                                   const BatchNoise& noise, const LossWeights& w = {},
                                   const SsvaerModel* frozen = nullptr) {
  detail::check_batch(batch, model.input_width());
  const SsvaerModel& fz = frozen ? *frozen : model;

  LossGraph out;
  Var xt = g.constant(batch.x_t);
  out.x_next = g.constant(batch.x_next);

  Var h = shared_features(model.shared, g, xt);
  DiagGaussian q_z = detail::as_gaussian(model.latent.forward(g, h));
  DiagGaussian q_y = detail::as_gaussian(model.quality.forward(g, h));
  Var dy = model.pv.forward(g, h).mean;

  out.next_features = shared_features_frozen(fz.shared, g, out.x_next);
  DiagGaussian q_z_next = detail::as_gaussian(fz.latent.forward_frozen(g, out.next_features));
  q_z_next = {stop_gradient(q_z_next.mean), stop_gradient(q_z_next.logvar)};
  Var dy_next = stop_gradient(fz.pv.forward_frozen(g, out.next_features).mean);

  Var y_hat = reparameterize(q_y, noise.label);
  DiagGaussian prior_t = detail::as_gaussian(model.generator.forward(g, concat_cols(y_hat, dy)));
  DiagGaussian prior_next =
      detail::as_gaussian(fz.generator.forward_frozen(g, concat_cols(y_hat + dy, dy_next)));

  Var z = reparameterize(q_z, noise.latent);
  out.rec = mean(gauss_nll_rows(detail::as_gaussian(model.decoder.forward(g, z)), xt));
  out.kl = mean(kl_diag_rows(q_z, prior_t));
  out.pv = mean(kl_diag_rows(q_z_next, prior_next));

  Var z_y = reparameterize(prior_t, noise.generated);
  out.recon_reg = mean(gauss_nll_rows(detail::as_gaussian(fz.decoder.forward_frozen(g, z_y)), xt));

  detail::label_terms(g, batch, q_y, out.label, out.entropy);

  out.total = w.rec * out.rec + w.kl * out.kl;
  out.total = out.total + w.pv * out.pv;
  out.total = out.total + w.label * out.label;
  out.total = out.total + (w.entropy_sign() * w.entropy) * out.entropy;
  out.total = out.total + w.recon_reg * out.recon_reg;
  return out;
}

/// SVAER terms: reconstruction, KL to N(w * y_hat, sigma_y^2 I), label NLL on
/// labelled rows and entropy on unlabelled rows. pv and recon_reg are absent.
inline LossGraph svaer_loss_terms(Graph& g, SvaerModel& model, const SampleBatch& batch,
                                  const BatchNoise& noise, const LossWeights& w = {}) {
  detail::check_batch(batch, model.input_width());
  const auto n = batch.size();
  const auto nz = model.latent_width();

  LossGraph out;
  Var xt = g.constant(batch.x_t);
  Var h = shared_features(model.shared, g, xt);
  DiagGaussian q_z = detail::as_gaussian(model.latent.forward(g, h));
  DiagGaussian q_y = detail::as_gaussian(model.quality.forward(g, h));

  Var y_hat = reparameterize(q_y, noise.label);
  DiagGaussian prior{matmul(y_hat, g.parameter(model.w)), g.broadcast(q_y.logvar, n, nz)};

  Var z = reparameterize(q_z, noise.latent);
  out.rec = mean(gauss_nll_rows(detail::as_gaussian(model.decoder.forward(g, z)), xt));
  out.kl = mean(kl_diag_rows(q_z, prior));
  detail::label_terms(g, batch, q_y, out.label, out.entropy);

  out.total = w.rec * out.rec + w.kl * out.kl;
  out.total = out.total + w.label * out.label;
  out.total = out.total + (w.entropy_sign() * w.entropy) * out.entropy;
  return out;
}

/// Mean squared error over labelled rows.
inline Var fcnn_loss(Graph& g, FcnnModel& model, const SampleBatch& batch) {
  detail::check_batch(batch, model.input_width());
  const auto lab = batch.labelled();
  if (lab.empty()) throw std::invalid_argument("fcnn_loss: batch has no labelled rows");
  Var x = g.constant(batch.x_t.select_rows(lab));
  Var pred = model.quality.forward(g, shared_features(model.shared, g, x)).mean;
  return mean(square(pred - g.constant(batch.y.select_rows(lab))));
}

// ---------------------------------------------------------------------------

namespace detail {

template <class M>
Prediction predict_gaussian(const M& m, const Tensor& x, const LabelScale& s) {
  Graph g;
  Var h = shared_features_frozen(m.shared, g, g.constant(x));
  auto q = m.quality.forward_frozen(g, h);
  const auto& mu = g.value(q.mean);
  const auto& lv = g.value(*q.logvar);
  Prediction p;
  p.mean.resize(mu.rows());
  p.variance.resize(mu.rows());
  for (std::size_t i = 0; i < mu.rows(); ++i) {
    p.mean[i] = s.mean + s.scale * mu[i];
    p.variance[i] = s.scale * s.scale * std::exp(lv[i]);
  }
  return p;
}

}  // namespace detail

/// Inference path only: shared encoder then quality regressor. Mean and
/// variance are returned in label units.
inline Prediction predict_y(const Model& model, const Tensor& x, const LabelScale& scale) {
  return std::visit(
      [&](const auto& m) -> Prediction {
        using M = std::decay_t<decltype(m)>;
        if (x.cols() != m.input_width()) {
          throw ShapeError("predict_y: expected input width " + std::to_string(m.input_width()) +
                           ", got " + std::to_string(x.cols()));
        }
        if constexpr (std::is_same_v<M, FcnnModel>) {
          Graph g;
          Var h = shared_features_frozen(m.shared, g, g.constant(x));
          const auto& mu = g.value(m.quality.forward_frozen(g, h).mean);
          Prediction p;
          for (std::size_t i = 0; i < mu.rows(); ++i) p.mean.push_back(scale.mean + scale.scale * mu[i]);
          p.variance.assign(mu.rows(), 0.0);
          return p;
        } else {
          return detail::predict_gaussian(m, x, scale);
        }
      },
      model);
}

/// Latent-encoder means for each row (rows x Nz). FCNN has no latent space.
inline Tensor latent_means(const Model& model, const Tensor& x) {
  return std::visit(
      [&](const auto& m) -> Tensor {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, FcnnModel>) {
          throw std::invalid_argument("latent_means: fcnn has no latent space");
        } else {
          Graph g;
          Var h = shared_features_frozen(m.shared, g, g.constant(x));
          return g.value(m.latent.forward_frozen(g, h).mean);
        }
      },
      model);
}

}  // namespace ssvaer
