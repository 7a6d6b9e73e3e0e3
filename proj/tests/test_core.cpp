#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "pvrnn/core/encoding.hpp"
#include "pvrnn/core/forward.hpp"

using namespace pvrnn;

namespace {

NetworkConfig scalar_config() {
  NetworkConfig c;
  c.layers = {{1, 1, 2.0}};
  c.dof = 1;
  c.softmax_bins = 2;
  c.w = {1.0};
  return c;
}

Vec v1(double x) { return Vec::Constant(1, x); }

}  // namespace

TEST(Heads, PriorMeanIsTanhOfAffineMap) {
  auto p = zero_params(scalar_config()).layers[0];
  p.w_mu_p(0, 0) = 1.0;
  const auto g = prior_stats(v1(0.5), p);
  EXPECT_NEAR(g.mu[0], 0.4621, 1e-4);
  EXPECT_DOUBLE_EQ(g.mu[0], std::tanh(0.5));
  EXPECT_DOUBLE_EQ(g.sigma[0], 1.0);
}

TEST(Heads, PosteriorAddsAdaptationVectors) {
  const auto p = zero_params(scalar_config()).layers[0];
  const auto g = posterior_stats(v1(0.0), v1(0.3), v1(0.0), p);
  EXPECT_NEAR(g.mu[0], 0.2913, 1e-4);
  const auto s = posterior_stats(v1(0.0), v1(0.0), v1(0.7), p);
  EXPECT_NEAR(s.sigma[0], 2.0138, 1e-4);
}

TEST(Heads, LogSigmaIsClamped) {
  auto p = zero_params(scalar_config()).layers[0];
  p.b_sigma_p[0] = 50.0;
  EXPECT_DOUBLE_EQ(prior_stats(v1(0.0), p).rho[0], kRhoLimit);
  p.b_sigma_p[0] = -50.0;
  EXPECT_DOUBLE_EQ(prior_stats(v1(0.0), p).rho[0], -kRhoLimit);
}

TEST(Heads, PosteriorRejectsWrongAdaptationSize) {
  const auto p = zero_params(scalar_config()).layers[0];
  EXPECT_THROW(posterior_stats(v1(0.0), Vec::Zero(2), v1(0.0), p), WindowError);
}

TEST(Reparameterization, ScalarOracle) {
  GaussianStats g;
  g.mu = v1(0.2);
  g.sigma = v1(std::exp(std::log(2.0)));
  EXPECT_NEAR(sample_z(g, v1(-1.0))[0], -1.8, 1e-12);
}

TEST(ContextStep, LeakyIntegratorOracle) {
  const auto cfg = scalar_config();
  auto params = zero_params(cfg);
  params.layers[0].b_h[0] = 0.6;
  LatentState prev = initial_state(cfg);
  prev.layers[0].h[0] = 1.0;
  prev.layers[0].d[0] = std::tanh(1.0);
  const std::vector<Vec> z = {v1(0.0)};
  const auto next = context_step(prev, z, params, cfg);
  EXPECT_NEAR(next.layers[0].h[0], 0.8, 1e-12);
  EXPECT_NEAR(next.layers[0].d[0], 0.6640, 1e-4);
}

TEST(ContextStep, UnitTimescaleIsMemoryless) {
  auto cfg = scalar_config();
  cfg.layers[0].timescale = 1.0;
  auto params = zero_params(cfg);
  params.layers[0].b_h[0] = 0.3;
  LatentState prev = initial_state(cfg);
  prev.layers[0].h[0] = 5.0;
  const std::vector<Vec> z = {v1(0.0)};
  EXPECT_DOUBLE_EQ(context_step(prev, z, params, cfg).layers[0].h[0], 0.3);
}

TEST(ContextStep, ZeroDriveContracts) {
  NetworkConfig cfg = demo_network_config();
  const auto params = zero_params(cfg);
  LatentState s = initial_state(cfg);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& l : s.layers)
    for (Eigen::Index i = 0; i < l.h.size(); ++i) l.h[i] = n(rng);
  std::vector<Vec> z;
  for (const auto& l : cfg.layers) z.push_back(Vec::Zero(l.z_units));
  for (int t = 0; t < 20; ++t) {
    const auto next = context_step(s, z, params, cfg);
    for (std::size_t k = 0; k < s.layers.size(); ++k) EXPECT_LE(next.layers[k].h.norm(), s.layers[k].h.norm());
    s = next;
  }
}

TEST(Softmax, TwoBinOracle) {
  Vec o(2);
  o << 1.0, 0.0;
  const Vec p = softmax(o);
  EXPECT_NEAR(p[0], 0.7311, 1e-4);
  EXPECT_NEAR(p[1], 0.2689, 1e-4);
}

TEST(Softmax, LargeLogitsStayFinite) {
  Vec o(3);
  o << 1000.0, 999.0, -1000.0;
  const Vec p = softmax(o);
  EXPECT_TRUE(p.allFinite());
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
}

TEST(Kl, ClosedFormOracles) {
  EXPECT_NEAR(kl_gaussian(v1(1.0), v1(1.0), v1(0.0), v1(1.0))[0], 0.5, 1e-12);
  EXPECT_NEAR(kl_gaussian(v1(0.0), v1(2.0), v1(0.0), v1(1.0))[0], std::log(0.5) + 2.0 - 0.5, 1e-12);
  EXPECT_NEAR(kl_gaussian(v1(0.0), v1(2.0), v1(0.0), v1(1.0))[0], 0.8069, 1e-4);
}

TEST(Kl, RejectsNonPositiveSigma) {
  EXPECT_THROW(kl_gaussian(v1(0.0), v1(0.0), v1(0.0), v1(1.0)), DomainError);
}

TEST(Kl, NonNegativeAndZeroOnlyWhenEqual) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> mu(-1.0, 1.0), ls(-3.0, 3.0);
  for (int i = 0; i < 2000; ++i) {
    const double m1 = mu(rng), m2 = mu(rng), s1 = std::exp(ls(rng)), s2 = std::exp(ls(rng));
    const double kl = kl_gaussian(v1(m1), v1(s1), v1(m2), v1(s2))[0];
    EXPECT_GE(kl, 0.0);
    EXPECT_NEAR(kl_gaussian(v1(m1), v1(s1), v1(m1), v1(s1))[0], 0.0, 1e-12);
  }
}

TEST(Elbo, SingleStepOracle) {
  const auto cfg = scalar_config();
  Rollout r;
  r.initial = initial_state(cfg);
  LatentState s = initial_state(cfg);
  GaussianStats g{v1(0.0), v1(0.0), v1(0.0), v1(1.0)};
  s.layers[0].prior = g;
  s.layers[0].posterior = g;
  r.steps.push_back(s);
  Vec o(2);
  o << 1.0, 0.0;
  r.outputs.emplace_back(1, 2, softmax(o));
  Vec t(2);
  t << 1.0, 0.0;
  const std::vector<SoftmaxFrame> targets = {SoftmaxFrame(1, 2, t)};
  const auto e = elbo(targets, r, cfg);
  EXPECT_NEAR(e.elbo, -0.3133, 1e-4);
  EXPECT_NEAR(e.regulation, 0.0, 1e-15);
  EXPECT_NEAR(e.nelbo(), 0.3133, 1e-4);
}

namespace {

NetworkConfig small_config() {
  NetworkConfig c;
  c.layers = {{6, 2, 2.0}, {4, 1, 5.0}};
  c.dof = 2;
  c.softmax_bins = 5;
  c.encoding_sigma = 0.3;
  c.w = {0.5, 0.5};
  c.seed = 5;
  return c;
}

std::vector<SoftmaxFrame> random_targets(const NetworkConfig& cfg, int steps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 2.0);
  std::vector<SoftmaxFrame> out;
  for (int t = 0; t < steps; ++t) {
    SoftmaxFrame f(cfg.dof, cfg.softmax_bins);
    for (int i = 0; i < cfg.dof; ++i) {
      Vec l(cfg.softmax_bins);
      for (auto& v : l) v = n(rng);
      f.channel(i) = softmax(l);
    }
    out.push_back(f);
  }
  return out;
}

}  // namespace

TEST(Elbo, AccuracyBoundedByNegativeEntropy) {
  const auto cfg = small_config();
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto params = init_params(cfg, seed);
    auto window = AdaptiveWindow::zeros(cfg, 6);
    auto eps = EpsilonSource::sampled(seed);
    const auto r = posterior_rollout(initial_state(cfg), window, params, cfg, eps);
    const auto targets = random_targets(cfg, 6, seed + 100);
    double neg_entropy = 0.0;
    for (const auto& f : targets)
      for (double p : f.values()) neg_entropy += p * std::log(p) / cfg.dof;
    const auto e = elbo(targets, r, cfg);
    EXPECT_LE(e.accuracy, neg_entropy + 1e-12);
    EXPECT_GE(e.regulation, 0.0);
  }
}

TEST(Elbo, LengthMismatchRejected) {
  const auto cfg = small_config();
  auto eps = EpsilonSource::zeros();
  const auto r = posterior_rollout(initial_state(cfg), AdaptiveWindow::zeros(cfg, 3), init_params(cfg, 1), cfg, eps);
  EXPECT_THROW(elbo(random_targets(cfg, 2, 1), r, cfg), ConfigError);
}

TEST(Rollout, OutputsAreNormalizedAndStatesBounded) {
  const auto cfg = small_config();
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto params = init_params(cfg, seed);
    visit_tensors(params, [&](const std::string&, auto& t) { t *= 3.0; });
    const auto r = generate_prior(initial_state(cfg), 40, params, cfg, EpsMode::sampled);
    for (const auto& f : r.outputs) EXPECT_TRUE(f.is_valid(1e-9));
    for (const auto& s : r.steps)
      for (const auto& l : s.layers) {
        EXPECT_TRUE(l.d.allFinite() && (l.d.array().abs() <= 1.0).all());
        EXPECT_TRUE((l.prior.sigma.array() > 0.0).all());
      }
  }
}

TEST(Rollout, ZeroEpsIsDeterministic) {
  const auto cfg = small_config();
  const auto params = init_params(cfg, 2);
  const auto a = generate_prior(initial_state(cfg), 30, params, cfg, EpsMode::zeros);
  const auto b = generate_prior(initial_state(cfg), 30, params, cfg, EpsMode::zeros);
  for (int t = 0; t < 30; ++t) EXPECT_EQ(a.outputs[t].values(), b.outputs[t].values());
}

TEST(Rollout, ZeroStepsRejected) {
  const auto cfg = small_config();
  EXPECT_THROW(generate_prior(initial_state(cfg), 0, init_params(cfg, 1), cfg, EpsMode::zeros), ConfigError);
}

TEST(Rollout, PosteriorWithSharedHeadsMatchesPrior) {
  const auto cfg = small_config();
  auto params = init_params(cfg, 9);
  for (auto& l : params.layers) {
    l.w_mu_q = l.w_mu_p;
    l.b_mu_q = l.b_mu_p;
    l.w_sigma_q = l.w_sigma_p;
    l.b_sigma_q = l.b_sigma_p;
  }
  auto e1 = EpsilonSource::sampled(77);
  auto e2 = EpsilonSource::sampled(77);
  const auto prior = generate_prior(initial_state(cfg), 25, params, cfg, e1);
  const auto post = posterior_rollout(initial_state(cfg), AdaptiveWindow::zeros(cfg, 25), params, cfg, e2);
  for (int t = 0; t < 25; ++t) {
    for (std::size_t k = 0; k < cfg.layers.size(); ++k)
      EXPECT_EQ(prior.steps[t].layers[k].d, post.steps[t].layers[k].d);
    EXPECT_EQ(prior.outputs[t].values(), post.outputs[t].values());
  }
}

TEST(Rollout, ReplayReproducesRecordedEpsilon) {
  const auto cfg = small_config();
  const auto params = init_params(cfg, 4);
  const auto window = AdaptiveWindow::zeros(cfg, 8);
  auto eps = EpsilonSource::sampled(1);
  const auto rec = posterior_rollout(initial_state(cfg), window, params, cfg, eps);
  const auto again = replay_posterior(rec, window, params, cfg);
  for (int t = 0; t < 8; ++t) EXPECT_EQ(rec.outputs[t].values(), again.outputs[t].values());
}

TEST(Codec, PeaksAtReferencePoint) {
  const SoftmaxCodec codec(10, 0.1);
  for (int j = 0; j < 10; ++j) {
    Eigen::Index arg = 0;
    codec.encode(codec.references()[j]).maxCoeff(&arg);
    EXPECT_EQ(arg, j);
  }
}

TEST(Codec, ZeroEncodesSymmetrically) {
  const SoftmaxCodec codec(10, 0.1);
  const Vec p = codec.encode(0.0);
  for (int j = 0; j < 5; ++j) EXPECT_NEAR(p[j], p[9 - j], 1e-15);
}

TEST(Codec, RoundtripOnGrid) {
  const SoftmaxCodec codec(10, 0.1);
  for (int i = 0; i < 100; ++i) {
    const double v = -1.0 + 2.0 * i / 99.0;
    const Vec p = codec.encode(v);
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    EXPECT_LT(std::abs(codec.decode(p) - v), 0.01) << "v = " << v;
  }
}

TEST(Codec, PointRoundtrip) {
  const SoftmaxCodec codec(demo_network_config());
  const Point2 p{0.37, -0.81};
  const auto f = codec.encode_point(p);
  EXPECT_TRUE(f.is_valid());
  const auto q = codec.decode_point(f);
  EXPECT_NEAR(q.x, p.x, 0.01);
  EXPECT_NEAR(q.y, p.y, 0.01);
}

TEST(Codec, RejectsBadSettings) {
  EXPECT_THROW(SoftmaxCodec(1, 0.1), ConfigError);
  EXPECT_THROW(SoftmaxCodec(10, 0.0), ConfigError);
}

TEST(Config, DemoArchitecture) {
  const auto c = demo_network_config();
  ASSERT_EQ(c.num_layers(), 2);
  EXPECT_EQ(c.layers[0].d_units, 40);
  EXPECT_EQ(c.layers[0].z_units, 4);
  EXPECT_EQ(c.layers[0].timescale, 2.0);
  EXPECT_EQ(c.layers[1].d_units, 10);
  EXPECT_EQ(c.layers[1].z_units, 1);
  EXPECT_EQ(c.layers[1].timescale, 10.0);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, ValidationCatchesBadShapes) {
  auto c = demo_network_config();
  c.w = {0.1};
  EXPECT_THROW(c.validate(), ConfigError);
  c = demo_network_config();
  c.layers[1].timescale = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = demo_network_config();
  c.layers[0].z_units = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}
