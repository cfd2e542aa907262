#include <gtest/gtest.h>

#include <numeric>

#include "bssard/backbone.hpp"
#include "bssard/losses.hpp"
#include "oracles.hpp"

using namespace bssard;

namespace {

BackboneConfig toy_config() {
  BackboneConfig c;
  c.n = 6;
  c.m = 4;
  c.d_v = 5;
  c.vocab = 10;
  c.d = 4;
  c.layers = 2;
  c.ffn = 6;
  c.conv_kernel = 3;
  return c;
}

struct Sample {
  FeatureMatrix video;
  std::vector<std::int32_t> query;
  int n_true;
  GroundingInput input() const { return GroundingInput{&video, query, n_true}; }
};

Sample random_sample(const BackboneConfig& c, int n_true, Rng& rng) {
  Sample s;
  s.video = FeatureMatrix::Zero(c.n, c.d_v);
  for (int t = 0; t < n_true; ++t) {
    for (int j = 0; j < c.d_v; ++j) s.video(t, j) = static_cast<float>(rng.normal());
  }
  for (int i = 0; i < c.m; ++i) s.query.push_back(static_cast<std::int32_t>(rng.uniform_int(0, c.vocab - 1)));
  s.n_true = n_true;
  return s;
}

void expect_simplex(const std::vector<double>& p) {
  double total = 0;
  for (double v : p) {
    EXPECT_GE(v, 0.0);
    total += v;
  }
  EXPECT_NEAR(total, 1.0, 1e-6);
}

// Zero-initialized biases put ReLUs exactly on their kink, where central
// differences and the analytic subgradient disagree by construction.
void jitter(ag::ParamStore<double>& store, Rng& rng) {
  for (std::size_t k = 0; k < store.size(); ++k) {
    auto& v = store[k].value;
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] += 0.1 * rng.normal();
  }
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::kIo;
}

}  // namespace

TEST(Backbone, OutputsAreSimplicesAndPaddingGetsNoMass) {
  BackboneConfig c;
  Rng rng(1);
  Backbone<float> model(c, rng);
  for (int trial = 0; trial < 5; ++trial) {
    const Sample s = random_sample(c, static_cast<int>(rng.uniform_int(20, c.n)), rng);
    const SpanPrediction p = model.predict(s.input());
    ASSERT_EQ(static_cast<int>(p.p_s.size()), c.n);
    ASSERT_EQ(p.p_d.size(), 2u);
    expect_simplex(p.p_s);
    expect_simplex(p.p_e);
    expect_simplex(p.p_d);
    for (int t = s.n_true; t < c.n; ++t) {
      EXPECT_EQ(p.p_s[static_cast<std::size_t>(t)], 0.0);
      EXPECT_EQ(p.p_e[static_cast<std::size_t>(t)], 0.0);
    }
  }
}

TEST(Backbone, ZeroBiasAtEitherSeamIsExactlyTheUnbiasedForward) {
  BackboneConfig c;
  Rng rng(2);
  Backbone<float> model(c, rng);
  const Sample s = random_sample(c, 28, rng);
  const SpanPrediction base = model.predict(s.input());
  for (InjectionPoint at : {InjectionPoint::kBefore, InjectionPoint::kAfter}) {
    InjectionConfig inj{at, at};
    const SpanPrediction pv = model.predict(s.input(), ag::Mat<float>::Zero(c.n, c.d), std::nullopt, inj);
    const SpanPrediction pq = model.predict(s.input(), std::nullopt, ag::Mat<float>::Zero(c.m, c.d), inj);
    EXPECT_EQ(pv.p_s, base.p_s);
    EXPECT_EQ(pv.p_e, base.p_e);
    EXPECT_EQ(pv.p_d, base.p_d);
    EXPECT_EQ(pq.p_s, base.p_s);
    EXPECT_EQ(pq.p_d, base.p_d);
  }
}

TEST(Backbone, DifferentBiasesGiveDifferentOutputs) {
  BackboneConfig c;
  Rng rng(3);
  Backbone<float> model(c, rng);
  const Sample s = random_sample(c, 30, rng);
  auto noise = [&](int r) {
    ag::Mat<float> b(r, c.d);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = static_cast<float>(rng.normal());
    return b;
  };
  for (InjectionPoint at : {InjectionPoint::kBefore, InjectionPoint::kAfter}) {
    InjectionConfig inj{at, at};
    const auto a = model.predict(s.input(), noise(c.n), std::nullopt, inj);
    const auto b = model.predict(s.input(), noise(c.n), std::nullopt, inj);
    EXPECT_NE(a.p_s, b.p_s);
    const auto qa = model.predict(s.input(), std::nullopt, noise(c.m), inj);
    const auto qb = model.predict(s.input(), std::nullopt, noise(c.m), inj);
    EXPECT_NE(qa.p_e, qb.p_e);
  }
}

TEST(Backbone, ProvenanceFollowsTheBias) {
  BackboneConfig c = toy_config();
  Rng rng(4);
  Backbone<double> model(c, rng);
  const Sample s = random_sample(c, 5, rng);
  ag::Graph<double> g;
  EXPECT_EQ(model.forward(g, s.input(), std::nullopt, std::nullopt, {}).provenance, Provenance::kReal);
  auto vb = g.constant(ag::Mat<double>::Zero(c.n, c.d));
  EXPECT_EQ(model.forward(g, s.input(), vb, std::nullopt, {}).provenance, Provenance::kVisualBias);
  auto qb = g.constant(ag::Mat<double>::Zero(c.m, c.d));
  EXPECT_EQ(model.forward(g, s.input(), std::nullopt, qb, {}).provenance, Provenance::kQueryBias);
  EXPECT_EQ(model.forward(g, s.input(), std::nullopt, std::nullopt, {}).x.rows(), c.n);
}

TEST(Backbone, RejectsBadShapesAndTwoBiases) {
  BackboneConfig c = toy_config();
  Rng rng(5);
  Backbone<double> model(c, rng);
  Sample s = random_sample(c, 5, rng);
  ag::Graph<double> g;
  auto vb = g.constant(ag::Mat<double>::Zero(c.n, c.d));
  auto qb = g.constant(ag::Mat<double>::Zero(c.m, c.d));
  EXPECT_EQ(code_of([&] { model.forward(g, s.input(), vb, qb, {}); }), ErrorCode::kInvalidArgument);
  auto bad = g.constant(ag::Mat<double>::Zero(c.n + 1, c.d));
  EXPECT_EQ(code_of([&] { model.forward(g, s.input(), bad, std::nullopt, {}); }), ErrorCode::kShapeMismatch);
  EXPECT_EQ(code_of([&] { model.forward(g, s.input(), std::nullopt, vb, {}); }), ErrorCode::kShapeMismatch);
  Sample short_query = s;
  short_query.query.pop_back();
  EXPECT_EQ(code_of([&] { model.forward(g, short_query.input(), std::nullopt, std::nullopt, {}); }),
            ErrorCode::kShapeMismatch);
  Sample wide = s;
  wide.video = FeatureMatrix::Zero(c.n, c.d_v + 1);
  EXPECT_EQ(code_of([&] { model.forward(g, wide.input(), std::nullopt, std::nullopt, {}); }),
            ErrorCode::kShapeMismatch);
  Sample oov = s;
  oov.query[0] = c.vocab;
  EXPECT_EQ(code_of([&] { model.forward(g, oov.input(), std::nullopt, std::nullopt, {}); }),
            ErrorCode::kShapeMismatch);
}

TEST(Backbone, SameSeedSameParameters) {
  BackboneConfig c;
  Rng a(9), b(9);
  Backbone<float> ma(c, a), mb(c, b);
  EXPECT_EQ(ma.params().hash(), mb.params().hash());
}

TEST(Backbone, ConfigJsonRoundTrip) {
  BackboneConfig c = toy_config();
  const nlohmann::json j = c;
  EXPECT_EQ(nlohmann::json(j.get<BackboneConfig>()), j);
  InjectionConfig inj{InjectionPoint::kAfter, InjectionPoint::kBefore};
  const nlohmann::json ji = inj;
  EXPECT_EQ(ji.at("visual"), "after");
  const InjectionConfig back = ji.get<InjectionConfig>();
  EXPECT_EQ(back.visual, InjectionPoint::kAfter);
  EXPECT_EQ(back.query, InjectionPoint::kBefore);
  nlohmann::json badi = {{"visual", "middle"}};
  EXPECT_EQ(code_of([&] { badi.get<InjectionConfig>(); }), ErrorCode::kConfig);
}

TEST(Backbone, DefaultInjectionPoints) {
  const InjectionConfig inj;
  EXPECT_EQ(inj.visual, InjectionPoint::kBefore);
  EXPECT_EQ(inj.query, InjectionPoint::kAfter);
}

// float64 finite differences through every backbone parameter of a 2-layer toy
// model. The KL reference is held at the unperturbed real-branch prediction, which
// is exactly what the stop-gradient in the analytic pass differentiates.
class BackboneGradients : public ::testing::TestWithParam<InjectionPoint> {};

TEST_P(BackboneGradients, DiscriminatorLossMatchesFiniteDifferences) {
  const BackboneConfig c = toy_config();
  Rng rng(6);
  Backbone<double> model(c, rng);
  jitter(model.params(), rng);
  const Sample s = random_sample(c, 5, rng);
  const Moment real{1, 3};
  ag::Mat<double> vbias(c.n, c.d);
  for (Eigen::Index i = 0; i < vbias.size(); ++i) vbias.data()[i] = rng.normal();
  const InjectionConfig inj{GetParam(), GetParam()};

  ag::Mat<double> ref_s, ref_e;
  {
    ag::Graph<double> g;
    auto r = model.forward(g, s.input(), std::nullopt, std::nullopt, inj);
    ref_s = r.p_s.value();
    ref_e = r.p_e.value();
  }
  auto loss_fn = [&](bool do_backward) {
    ag::Graph<double> g;
    auto r = model.forward(g, s.input(), std::nullopt, std::nullopt, inj);
    auto f = model.forward(g, s.input(), g.constant(vbias), std::nullopt, inj);
    auto loc = losses::disc_loc_loss(r.p_s, r.p_e, f.p_s, f.p_e, real);
    auto cls = losses::disc_cls_loss(r.p_d, f.p_d);
    auto kl = ag::add(ag::kl_from_constant(ref_s, f.p_s, 1e-12), ag::kl_from_constant(ref_e, f.p_e, 1e-12));
    auto total = losses::disc_total(loc, cls, kl, 1.0, 1.0);
    if (do_backward) g.backward(total, &model.params());
    return total.scalar();
  };
  std::string worst;
  const double err = oracle::gradient_check(model.params(), loss_fn, 1e-5, 1e-8, &worst);
  EXPECT_LT(err, 1e-4) << worst;
}

TEST_P(BackboneGradients, QueryBiasedSpanLossMatchesFiniteDifferences) {
  const BackboneConfig c = toy_config();
  Rng rng(7);
  Backbone<double> model(c, rng);
  jitter(model.params(), rng);
  const Sample s = random_sample(c, 6, rng);
  ag::Mat<double> qbias(c.m, c.d);
  for (Eigen::Index i = 0; i < qbias.size(); ++i) qbias.data()[i] = rng.normal();
  const InjectionConfig inj{GetParam(), GetParam()};
  auto loss_fn = [&](bool do_backward) {
    ag::Graph<double> g;
    auto f = model.forward(g, s.input(), std::nullopt, g.constant(qbias), inj);
    auto loss = ag::add(losses::span_loss(f.p_s, f.p_e, Moment{0, 4}), losses::gen_cls_loss(f.p_d));
    if (do_backward) g.backward(loss, &model.params());
    return loss.scalar();
  };
  std::string worst;
  EXPECT_LT(oracle::gradient_check(model.params(), loss_fn, 1e-5, 1e-8, &worst), 1e-4) << worst;
}

INSTANTIATE_TEST_SUITE_P(Seams, BackboneGradients,
                         ::testing::Values(InjectionPoint::kBefore, InjectionPoint::kAfter),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Autograd, ConvolutionOpsMatchFiniteDifferences) {
  ag::ParamStore<double> store;
  Rng rng(8);
  auto& x = store.add("x", 5, 3, 1.0, rng);
  auto& w = store.add("w", 9, 2, 1.0, rng);
  auto& b = store.add("b", 1, 2, 1.0, rng);
  auto& wt = store.add("wt", 2, 3 * 4, 1.0, rng);
  auto& bt = store.add("bt", 1, 3, 1.0, rng);
  auto loss_fn = [&](bool do_backward) {
    ag::Graph<double> g;
    auto y = ag::tanh(ag::conv1d(g.param(x), g.param(w), g.param(b), 3, 1));
    auto z = ag::conv_transpose1d(y, g.param(wt), g.param(bt), 4, 2, 1);
    auto loss = ag::sum(ag::hadamard(z, z));
    if (do_backward) g.backward(loss, &store);
    return loss.scalar();
  };
  EXPECT_LT(oracle::gradient_check(store, loss_fn), 1e-6);
}

TEST(Autograd, ParameterUsedTwiceAccumulatesBothPaths) {
  ag::ParamStore<double> store;
  Rng rng(10);
  auto& a = store.add("a", 2, 2, 1.0, rng);
  auto loss_fn = [&](bool do_backward) {
    ag::Graph<double> g;
    auto loss = ag::sum(ag::matmul(g.param(a), ag::transpose(g.param(a))));
    if (do_backward) g.backward(loss, &store);
    return loss.scalar();
  };
  EXPECT_LT(oracle::gradient_check(store, loss_fn), 1e-8);
}

TEST(Autograd, BackwardOnlyFillsTheTargetStore) {
  ag::ParamStore<double> mine("mine"), other("other");
  Rng rng(11);
  auto& a = mine.add("a", 1, 3, 1.0, rng);
  auto& b = other.add("b", 1, 3, 1.0, rng);
  ag::Graph<double> g;
  auto loss = ag::sum(ag::hadamard(g.param(a), g.param(b)));
  g.backward(loss, &mine);
  EXPECT_EQ(a.grad, b.value);
  EXPECT_TRUE((b.grad.array() == 0.0).all());
}

TEST(DecodeSpan, Examples) {
  std::vector<double> ps(8, 0.0), pe(8, 0.0);
  ps[2] = 1.0;
  pe[5] = 1.0;
  EXPECT_EQ(decode_span(ps, pe), (Moment{2, 5}));
  std::vector<double> qs(8, 0.0), qe(8, 0.0);
  qs[5] = 1.0;
  qe[2] = 1.0;
  EXPECT_EQ(decode_span(qs, qe), oracle::decode(qs, qe));
  const std::vector<double> u(8, 1.0 / 8);
  EXPECT_EQ(decode_span(u, u), (Moment{0, 0}));
}

TEST(DecodeSpan, MatchesExhaustiveSearch) {
  Rng rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(1, 40));
    std::vector<double> ps(static_cast<std::size_t>(n)), pe(static_cast<std::size_t>(n));
    // Every third case draws from a handful of levels so that ties and zeros occur.
    const bool coarse = trial % 3 == 0;
    for (int i = 0; i < n; ++i) {
      ps[static_cast<std::size_t>(i)] = coarse ? static_cast<double>(rng.uniform_int(0, 3)) : rng.uniform();
      pe[static_cast<std::size_t>(i)] = coarse ? static_cast<double>(rng.uniform_int(0, 3)) : rng.uniform();
    }
    const double zs = std::accumulate(ps.begin(), ps.end(), 0.0) + 1e-300;
    const double ze = std::accumulate(pe.begin(), pe.end(), 0.0) + 1e-300;
    if (!coarse) {
      for (auto& v : ps) v /= zs;
      for (auto& v : pe) v /= ze;
    }
    ASSERT_EQ(decode_span(ps, pe), oracle::decode(ps, pe)) << "trial " << trial;
  }
}

TEST(DecodeSpan, RejectsMismatchedLengths) {
  const std::vector<double> a(3, 1.0 / 3), b(4, 0.25);
  EXPECT_EQ(code_of([&] { decode_span(a, b); }), ErrorCode::kShapeMismatch);
}

TEST(SinusoidalPositions, FirstRowAlternatesZeroAndOne) {
  const auto pe = sinusoidal_positions<double>(4, 6);
  for (int i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(pe(0, i), i % 2 == 0 ? 0.0 : 1.0);
  EXPECT_DOUBLE_EQ(pe(1, 0), std::sin(1.0));
}
