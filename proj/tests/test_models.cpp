#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "ssvaer/models.hpp"
#include "test_util.hpp"

using namespace ssvaer;

namespace {

constexpr std::size_t kWidth = 8;
const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

NetworkSizes small_sizes(Activation act = Activation::tanh) {
  NetworkSizes s;
  s.shared = {10, 6};
  s.latent = {6, 5, 3};
  s.regressor = {6, 4, 1};
  s.generator = {2, 2, 3};
  s.decoder = {3, 6, 10};
  s.activation = act;
  return s;
}

SampleBatch random_batch(std::mt19937_64& rng, std::size_t n, std::vector<std::uint8_t> mask, std::size_t width = kWidth) {
  SampleBatch b;
  b.x_t = testutil::normal(rng, n, width);
  b.x_next = testutil::normal(rng, n, width);
  b.y = testutil::normal(rng, n, 1);
  b.mask = std::move(mask);
  for (std::size_t i = 0; i < n; ++i) {
    if (!b.mask[i]) b.y[i] = 0.0;
    b.rows.push_back(i);
  }
  return b;
}

template <class M>
void zero_all(M& m) {
  for (Tensor* t : parameter_list(m)) for (auto& v : t->values()) v = 0.0;
}

void randomize(Mlp& net, std::mt19937_64& rng) {
  for (auto& l : net.layers()) {
    l.weight = testutil::normal(rng, l.weight.rows(), l.weight.cols());
    l.bias = testutil::normal(rng, 1, l.bias.cols());
  }
}

// Rows of the batch repeated twice, noise likewise.
SampleBatch doubled(const SampleBatch& b) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < b.size(); ++i) idx.push_back(i);
  for (std::size_t i = 0; i < b.size(); ++i) idx.push_back(i);
  SampleBatch d;
  d.x_t = b.x_t.select_rows(idx);
  d.x_next = b.x_next.select_rows(idx);
  d.y = b.y.select_rows(idx);
  for (auto i : idx) d.mask.push_back(b.mask[i]);
  d.rows = idx;
  return d;
}

BatchNoise doubled(const BatchNoise& n) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < n.label.rows(); ++i) idx.push_back(i);
  for (std::size_t i = 0; i < n.label.rows(); ++i) idx.push_back(i);
  return {n.latent.select_rows(idx), n.label.select_rows(idx), n.generated.select_rows(idx)};
}

bool all_zero(std::span<const double> v) {
  for (double x : v) if (x != 0.0) return false;
  return true;
}

}  // namespace

TEST_CASE("default sizes chain and reject inconsistent ones") {
  NetworkSizes s;
  CHECK_NOTHROW(s.validate(ModelKind::ssvaer));
  s.generator = {2, 2, 5};
  CHECK_THROWS_WITH_AS(s.validate(ModelKind::ssvaer), doctest::Contains("latent generator output"), std::invalid_argument);
  CHECK_NOTHROW(s.validate(ModelKind::svaer));
  s.regressor = {10, 6, 1};
  CHECK_THROWS_AS(s.validate(ModelKind::fcnn), std::invalid_argument);
}

TEST_CASE("SSVAER with zero parameters and zero data") {
  auto m = SsvaerModel::create(small_sizes(), kWidth, 1);
  zero_all(m);
  SampleBatch b;
  b.x_t = Tensor(3, kWidth);
  b.x_next = Tensor(3, kWidth);
  b.y = Tensor(3, 1);
  b.mask = {1, 1, 1};
  Graph g;
  const auto t = ssvaer_loss_terms(g, m, b, BatchNoise::zeros(3, 3)).values(g);
  CHECK(t.kl == 0.0);
  CHECK(t.pv == 0.0);
  CHECK(t.entropy == 0.0);
  CHECK(std::abs(t.label - kHalfLog2Pi) < 1e-12);
  CHECK(std::abs(t.rec - kHalfLog2Pi * kWidth) < 1e-12);
  CHECK(std::abs(t.recon_reg - kHalfLog2Pi * kWidth) < 1e-12);
  CHECK(std::abs(t.total - (t.rec + t.label + t.recon_reg)) < 1e-12);
}

TEST_CASE("SSVAER full loss passes the gradient check") {
  for (auto act : {Activation::tanh, Activation::relu}) {
    std::mt19937_64 rng(act == Activation::tanh ? 101 : 202);
    auto m = SsvaerModel::create(small_sizes(act), kWidth, 7);
    const SsvaerModel frozen = m;
    const auto b = random_batch(rng, 4, {1, 0, 1, 0});
    const auto noise = BatchNoise::draw(rng, 4, 3);
    {
      Graph g;
      const auto t = ssvaer_loss_terms(g, m, b, noise, {}, &frozen).values(g);
      for (double v : {t.rec, t.kl, t.label, t.entropy, t.pv, t.recon_reg}) CHECK(v != 0.0);
    }
    const auto ps = parameter_list(m);
    const double err = check_gradients(
        [&](Graph& g) { return ssvaer_loss_terms(g, m, b, noise, {}, &frozen).total; }, ps);
    INFO(to_string(act));
    CHECK(err < 1e-4);
  }
}

TEST_CASE("pv backward stops at the x_{t+1} branch") {
  std::mt19937_64 rng(5);
  auto m = SsvaerModel::create(small_sizes(), kWidth, 3);
  const auto b = random_batch(rng, 6, {1, 0, 0, 1, 0, 0});
  const auto noise = BatchNoise::draw(rng, 6, 3);
  LossWeights only_pv;
  only_pv.rec = only_pv.kl = only_pv.label = only_pv.entropy = only_pv.recon_reg = 0.0;
  only_pv.pv = 1.0;

  for (Tensor* t : parameter_list(m)) t->zero_grad();
  Graph g;
  const auto lg = ssvaer_loss_terms(g, m, b, noise, only_pv);
  REQUIRE(g.scalar(lg.pv) > 0.0);
  g.backward(lg.pv);
  CHECK(all_zero(g.grad(lg.next_features)));
  CHECK(all_zero(g.grad(lg.x_next)));

  // Shared encoder gradients come only from the x_t path: replacing x_{t+1}
  // by a pre-computed constant distribution gives the same gradient bitwise.
  std::vector<std::vector<double>> via_loss;
  for (auto& l : m.shared.layers()) via_loss.emplace_back(l.weight.grad().begin(), l.weight.grad().end());
  CHECK_FALSE(all_zero(via_loss.front()));

  Tensor qm, ql, dyn;
  {
    Graph h;
    Var f = shared_features_frozen(m.shared, h, h.constant(b.x_next));
    auto q = m.latent.forward_frozen(h, f);
    qm = h.value(q.mean);
    ql = h.value(*q.logvar);
    dyn = h.value(m.pv.forward_frozen(h, f).mean);
  }
  for (Tensor* t : parameter_list(m)) t->zero_grad();
  Graph o;
  Var hx = shared_features(m.shared, o, o.constant(b.x_t));
  auto qy = m.quality.forward(o, hx);
  Var dy = m.pv.forward(o, hx).mean;
  Var y_hat = reparameterize({qy.mean, *qy.logvar}, noise.label);
  auto prior = m.generator.forward_frozen(o, concat_cols(y_hat + dy, o.constant(dyn)));
  Var pv = mean(kl_diag_rows({o.constant(qm), o.constant(ql)}, {prior.mean, *prior.logvar}));
  CHECK(o.scalar(pv) == g.scalar(lg.pv));
  o.backward(pv);
  for (std::size_t i = 0; i < via_loss.size(); ++i) {
    const auto& gw = m.shared.layers()[i].weight.grad();
    CHECK(std::vector<double>(gw.begin(), gw.end()) == via_loss[i]);
  }
}

TEST_CASE("recon-reg backward leaves the decoder untouched") {
  std::mt19937_64 rng(6);
  auto m = SsvaerModel::create(small_sizes(), kWidth, 4);
  const auto b = random_batch(rng, 5, {1, 1, 0, 0, 1});
  const auto noise = BatchNoise::draw(rng, 5, 3);
  for (Tensor* t : parameter_list(m)) t->zero_grad();
  Graph g;
  const auto lg = ssvaer_loss_terms(g, m, b, noise);
  g.backward(lg.recon_reg);
  for (auto& l : m.decoder.layers()) {
    CHECK(all_zero(l.weight.grad()));
    CHECK(all_zero(l.bias.grad()));
  }
  CHECK_FALSE(all_zero(m.generator.layers().front().weight.grad()));
}

TEST_CASE("mean-reduced terms are invariant to duplicating the batch") {
  std::mt19937_64 rng(21);
  auto m = SsvaerModel::create(small_sizes(), kWidth, 9);
  const auto b = random_batch(rng, 5, {1, 0, 0, 1, 0});
  const auto noise = BatchNoise::draw(rng, 5, 3);
  Graph g1, g2;
  const auto a = ssvaer_loss_terms(g1, m, b, noise).values(g1);
  const auto d = ssvaer_loss_terms(g2, m, doubled(b), doubled(noise)).values(g2);
  CHECK(std::abs(a.rec - d.rec) <= 1e-12);
  CHECK(std::abs(a.kl - d.kl) <= 1e-12);
  CHECK(std::abs(a.pv - d.pv) <= 1e-12);
  CHECK(std::abs(a.label - d.label) <= 1e-12);
  CHECK(std::abs(a.entropy - d.entropy) <= 1e-12);
  CHECK(std::abs(a.recon_reg - d.recon_reg) <= 1e-12);
  CHECK(std::abs(a.total - d.total) <= 1e-12);
}

TEST_CASE("label and entropy terms follow the mask") {
  std::mt19937_64 rng(12);
  auto m = SsvaerModel::create(small_sizes(), kWidth, 2);
  const auto noise = BatchNoise::draw(rng, 4, 3);
  {
    Graph g;
    const auto t = ssvaer_loss_terms(g, m, random_batch(rng, 4, {0, 0, 0, 0}), noise).values(g);
    CHECK(t.label == 0.0);
    CHECK(t.entropy != 0.0);
  }
  {
    Graph g;
    const auto t = ssvaer_loss_terms(g, m, random_batch(rng, 4, {1, 1, 1, 1}), noise).values(g);
    CHECK(t.entropy == 0.0);
    CHECK(t.label != 0.0);
  }
  SampleBatch empty;
  empty.x_t = Tensor(0, kWidth);
  empty.x_next = Tensor(0, kWidth);
  empty.y = Tensor(0, 1);
  Graph g;
  CHECK_THROWS_AS(ssvaer_loss_terms(g, m, empty, BatchNoise::zeros(0, 3)), std::invalid_argument);
}

TEST_CASE("total is the signed combination of weighted terms") {
  std::mt19937_64 rng(13);
  auto m = SsvaerModel::create(small_sizes(), kWidth, 2);
  const auto b = random_batch(rng, 4, {1, 0, 1, 0});
  const auto noise = BatchNoise::draw(rng, 4, 3);
  LossWeights w;
  w.rec = 0.5;
  w.kl = 2.0;
  w.label = 3.0;
  w.entropy = 0.25;
  w.pv = 1.5;
  w.recon_reg = 0.75;
  for (bool minimizing : {false, true}) {
    w.entropy_minimizing = minimizing;
    Graph g;
    const auto t = ssvaer_loss_terms(g, m, b, noise, w).values(g);
    const double sign = minimizing ? 1.0 : -1.0;
    const double expect = 0.5 * t.rec + 2.0 * t.kl + 1.5 * t.pv + 3.0 * t.label + sign * 0.25 * t.entropy + 0.75 * t.recon_reg;
    CHECK(std::abs(t.total - expect) < 1e-12);
  }
}

TEST_CASE("loss terms stay finite on random parameters and batches") {
  std::mt19937_64 rng(99);
  std::bernoulli_distribution coin(0.4);
  for (int trial = 0; trial < 100; ++trial) {
    auto m = SsvaerModel::create(small_sizes(trial % 2 ? Activation::relu : Activation::tanh), kWidth, trial);
    std::vector<std::uint8_t> mask(6);
    for (auto& v : mask) v = coin(rng);
    const auto b = random_batch(rng, 6, mask);
    Graph g;
    const auto t = ssvaer_loss_terms(g, m, b, BatchNoise::draw(rng, 6, 3)).values(g);
    for (double v : {t.rec, t.kl, t.label, t.entropy, t.pv, t.recon_reg, t.total}) CHECK(std::isfinite(v));
  }
}

TEST_CASE("SVAER") {
  SUBCASE("zero parameters and inputs give zero kl for any unit direction") {
    auto m = SvaerModel::create(small_sizes(), kWidth, 1);
    zero_all(m);
    m.w = Tensor::row({0.6, 0.0, 0.8});
    SampleBatch b;
    b.x_t = Tensor(2, kWidth);
    b.x_next = Tensor(2, kWidth);
    b.y = Tensor(2, 1);
    b.mask = {1, 0};
    Graph g;
    CHECK(svaer_loss_terms(g, m, b, BatchNoise::zeros(2, 3)).values(g).kl == 0.0);
  }
  SUBCASE("gradient check") {
    std::mt19937_64 rng(41);
    auto m = SvaerModel::create(small_sizes(), kWidth, 8);
    const auto b = random_batch(rng, 4, {1, 0, 0, 1});
    const auto noise = BatchNoise::draw(rng, 4, 3);
    const auto ps = parameter_list(m);
    CHECK(check_gradients([&](Graph& g) { return svaer_loss_terms(g, m, b, noise).total; }, ps) < 1e-4);
  }
  SUBCASE("supervised reduction: no unlabelled rows, no entropy weight") {
    std::mt19937_64 rng(42);
    auto m = SvaerModel::create(small_sizes(), kWidth, 8);
    const auto b = random_batch(rng, 4, {1, 1, 1, 1});
    LossWeights w;
    w.entropy = 0.0;
    Graph g;
    const auto t = svaer_loss_terms(g, m, b, BatchNoise::draw(rng, 4, 3), w).values(g);
    CHECK(t.pv == 0.0);
    CHECK(t.recon_reg == 0.0);
    CHECK(std::abs(t.total - (t.rec + t.kl + t.label)) < 1e-12);
  }
  SUBCASE("direction is a unit vector after normalization") {
    auto m = SvaerModel::create(small_sizes(), kWidth, 8);
    m.w = Tensor::row({3.0, -4.0, 12.0});
    m.normalize_direction();
    double n2 = 0.0;
    for (double v : m.w.values()) n2 += v * v;
    CHECK(std::abs(std::sqrt(n2) - 1.0) <= 1e-9);
    m.w = Tensor(1, 3);
    CHECK_THROWS_AS(m.normalize_direction(), NumericError);
  }
}

TEST_CASE("FCNN loss") {
  auto m = FcnnModel::create(small_sizes(), kWidth, 1);
  zero_all(m);
  auto& last = m.quality.layers().back();
  SampleBatch b;
  b.x_t = Tensor(3, kWidth);
  b.x_next = Tensor(3, kWidth);
  b.y = Tensor::column({0.2, 0.0, 0.2});
  b.mask = {1, 0, 1};
  last.bias[0] = 0.2;
  {
    Graph g;
    CHECK(g.scalar(fcnn_loss(g, m, b)) == 0.0);
  }
  last.bias[0] = 0.3;
  {
    Graph g;
    CHECK(std::abs(g.scalar(fcnn_loss(g, m, b)) - 0.01) < 1e-15);
  }
  b.mask = {0, 0, 0};
  Graph g;
  CHECK_THROWS_AS(fcnn_loss(g, m, b), std::invalid_argument);

  std::mt19937_64 rng(3);
  auto r = FcnnModel::create(small_sizes(), kWidth, 2);
  const auto rb = random_batch(rng, 5, {1, 1, 0, 1, 0});
  const auto ps = parameter_list(r);
  CHECK(check_gradients([&](Graph& h) { return fcnn_loss(h, r, rb); }, ps) < 1e-6);
}

TEST_CASE("predict_y") {
  std::mt19937_64 rng(17);
  const Tensor x = testutil::normal(rng, 4, kWidth);
  const LabelScale scale{2.0, 0.5};

  SUBCASE("zero parameters") {
    Model m = SsvaerModel::create(small_sizes(), kWidth, 1);
    for (auto& [n, t] : named_parameters(m)) for (auto& v : t->values()) v = 0.0;
    const auto p = predict_y(m, x, scale);
    for (double v : p.mean) CHECK(v == 2.0);
    for (double v : p.variance) CHECK(v == 0.25);
  }
  SUBCASE("inference path independence") {
    auto s = SsvaerModel::create(small_sizes(), kWidth, 1);
    const auto before = predict_y(Model{s}, x, scale);
    randomize(s.decoder, rng);
    randomize(s.pv, rng);
    randomize(s.generator, rng);
    randomize(s.latent, rng);
    const auto after = predict_y(Model{s}, x, scale);
    CHECK(before.mean == after.mean);
    CHECK(before.variance == after.variance);
    CHECK(predict_y(Model{s}, x, scale).mean == after.mean);
  }
  SUBCASE("width mismatch") {
    Model m = FcnnModel::create(small_sizes(), kWidth, 1);
    CHECK_THROWS_AS(predict_y(m, Tensor(2, kWidth + 1), scale), ShapeError);
  }
  SUBCASE("fcnn has zero variance and no latent space") {
    Model m = FcnnModel::create(small_sizes(), kWidth, 1);
    for (double v : predict_y(m, x, scale).variance) CHECK(v == 0.0);
    CHECK_THROWS_AS(latent_means(m, x), std::invalid_argument);
  }
}

TEST_CASE("parameter names are stable") {
  Model m = SsvaerModel::create(small_sizes(), kWidth, 1);
  const auto ps = named_parameters(m);
  CHECK(ps.front().first == "shared.0.weight");
  CHECK(ps.back().first == "decoder.3.bias");  // 3 -> 6 -> 10, then two heads to 8
  Model s = SvaerModel::create(small_sizes(), kWidth, 1);
  CHECK(named_parameters(s).back().first == "direction");
}
