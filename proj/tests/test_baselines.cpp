#include "edpm/baselines.hpp"
#include "edpm/simulation.hpp"
#include "support/ks.hpp"

#include <gtest/gtest.h>

#include <boost/math/distributions/beta.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace {

using namespace edpm;
using edpm::testing::ks_statistic;

double mean_of(const std::vector<double>& xs) { return std::accumulate(xs.begin(), xs.end(), 0.0) / double(xs.size()); }

double sd_of(const std::vector<double>& xs) {
  const double m = mean_of(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / double(xs.size() - 1));
}

// Raw-scale truth of the global linear model below.
struct LinearTruth {
  double v0 = 0.4, vz = 0.8, vc = 0.5, sv = 0.7;
  double m0 = -0.2, mv = 0.9, mz = 0.6, mc = -0.3, sm = 0.5;
  double y0 = 0.1, ym = 1.2, yv = -0.5, yz = 0.7, yc = 0.4, sy = 0.8;
  double vzero = 1.0;  // multiplies every V coefficient in the m and y equations
};

std::vector<ObservedRecord> linear_records(const LinearTruth& t, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ObservedRecord> recs(n);
  for (auto& r : recs) {
    const double c = std_normal_draw(rng);
    r.z = uniform_draw(rng) < 0.5;
    const double v = t.v0 + t.vz * r.z + t.vc * c + t.sv * std_normal_draw(rng);
    const double m = t.m0 + t.vzero * t.mv * v + t.mz * r.z + t.mc * c + t.sm * std_normal_draw(rng);
    r.v = v;
    r.m = m;
    r.y = t.y0 + t.ym * m + t.vzero * t.yv * v + t.yz * r.z + t.yc * c + t.sy * std_normal_draw(rng);
    r.c = {c};
  }
  return recs;
}

// ---------------------------------------------------------------------------

TEST(Parametric, PosteriorConcentratesOnTruth) {
  const LinearTruth t;
  const Dataset d = Dataset::from_records(linear_records(t, 4000, 1), {false});
  const ParametricFit fit = fit_parametric(d, PriorConfig{}, 400, 2);
  ASSERT_EQ(fit.draws.size(), 400u);
  // Coefficients on the standardized scale: beta_j * sd_j / sd_response.
  const double sy = d.y_scale.sd, sm = d.m_scale.sd, sv = d.v_scale.sd, sc = d.c_scale[0].sd;
  const std::vector<double> y_truth{t.ym * sm / sy, t.yv * sv / sy, t.yz / sy, t.yc * sc / sy};
  const std::vector<double> m_truth{t.mv * sv / sm, t.mz / sm, t.mc * sc / sm};
  const std::vector<double> v_truth{t.vz / sv, t.vc * sc / sv};
  const auto check = [&](auto member, const std::vector<double>& truth, std::size_t offset) {
    for (std::size_t j = 0; j < truth.size(); ++j) {
      std::vector<double> b;
      for (const auto& dr : fit.draws) b.push_back((dr.*member).beta[static_cast<Eigen::Index>(j + offset)]);
      EXPECT_NEAR(mean_of(b), truth[j], 3.0 * sd_of(b)) << j;
    }
  };
  check(&ParametricDraw::y, y_truth, 1);
  check(&ParametricDraw::m, m_truth, 1);
  check(&ParametricDraw::v, v_truth, 1);
  std::vector<double> s2;
  for (const auto& dr : fit.draws) s2.push_back(dr.y.sigma_sq);
  EXPECT_NEAR(mean_of(s2), t.sy * t.sy / (sy * sy), 3.0 * sd_of(s2));
}

TEST(Parametric, LinearModelEffectsMatchTruth) {
  const LinearTruth t;
  const Dataset d = Dataset::from_records(linear_records(t, 4000, 3), {false});
  GCompConfig g;
  g.mc_draws = 300;
  g.sensitivity = SensitivitySpec::uniform(-1.0, 1.0);
  const auto post = parametric_causal_effects(fit_parametric(d, PriorConfig{}, 300, 4), g, 5);
  // Linear model: NIE = ym * (mv * vz + mz), NDE = ym * 0 + yv * vz + yz.
  const double nie = t.ym * (t.mv * t.vz + t.mz), nde = t.yv * t.vz + t.yz;
  EXPECT_NEAR(post.nie_summary().mean, nie, 3.0 * sd_of(post.nie));
  EXPECT_NEAR(post.nde_summary().mean, nde, 3.0 * sd_of(post.nde));
  for (std::size_t k = 0; k < post.ate.size(); ++k) EXPECT_NEAR(post.ate[k], post.nie[k] + post.nde[k], 1e-12);
}

TEST(Parametric, BootstrapWeightsAreFlatDirichlet) {
  const Dataset d = Dataset::from_records(linear_records(LinearTruth{}, 50, 6), {false});
  const ParametricFit fit = fit_parametric(d, PriorConfig{}, 5000, 7);
  std::vector<double> first;
  for (const auto& dr : fit.draws) {
    ASSERT_EQ(dr.cum_weights.size(), 50u);
    ASSERT_TRUE(std::is_sorted(dr.cum_weights.begin(), dr.cum_weights.end()));
    ASSERT_NEAR(dr.cum_weights.back(), 1.0, 1e-12);
    first.push_back(dr.cum_weights.front());
  }
  // A single Dirichlet(1, ..., 1) coordinate is Beta(1, n - 1).
  const boost::math::beta_distribution<double> beta(1.0, 49.0);
  EXPECT_LT(ks_statistic(first, [&](double x) { return boost::math::cdf(beta, x); }), 0.025);
}

TEST(Parametric, RowOrderOnlyChangesMonteCarloNoise) {
  auto recs = linear_records(LinearTruth{}, 300, 8);
  GCompConfig g;
  g.mc_draws = 200;
  const auto a = parametric_causal_effects(
      fit_parametric(Dataset::from_records(recs, {false}), PriorConfig{}, 200, 9), g, 10);
  std::reverse(recs.begin(), recs.end());
  const auto b = parametric_causal_effects(
      fit_parametric(Dataset::from_records(recs, {false}), PriorConfig{}, 200, 9), g, 10);
  // Regression draws are shared up to summation order; only the bootstrap rows move.
  const double se = std::hypot(sd_of(a.nie), sd_of(b.nie)) / std::sqrt(200.0);
  EXPECT_LT(std::fabs(mean_of(a.nie) - mean_of(b.nie)), 3.0 * se);
}

TEST(Parametric, AnalyticCopulaMatchesMixtureInversion) {
  MixtureCdf same, counter;
  same.add_normal(1.0, 0.7, 2.0);
  counter.add_normal(1.0, -0.4, 0.5);
  for (double v : {-2.0, 0.0, 0.7, 2.5}) {
    for (double rho : {-0.9, 0.0, 0.6}) {
      Rng a(3), b(3);
      for (int i = 0; i < 50; ++i) {
        const double x = normal_copula_draw(v, 0.7, std::sqrt(2.0), -0.4, std::sqrt(0.5), rho, a);
        const double y = conditional_copula_draw(v, same, counter, rho, 1e-14, b);
        EXPECT_NEAR(x, y, 1e-8) << v << " " << rho;
      }
    }
  }
}

TEST(Parametric, RequiresCompleteDataAndValidConditioning) {
  auto recs = linear_records(LinearTruth{}, 40, 11);
  recs[3].y.reset();
  EXPECT_THROW(fit_parametric(Dataset::from_records(recs, {false}), PriorConfig{}, 10, 1), DataError);
  recs = linear_records(LinearTruth{}, 40, 11);
  EXPECT_THROW(fit_parametric(Dataset::from_records(recs, {false}), PriorConfig{}, 0, 1), std::invalid_argument);
  const ParametricFit fit = fit_parametric(Dataset::from_records(recs, {false}), PriorConfig{}, 10, 1);
  GCompConfig g;
  g.mc_draws = 5;
  g.conditioning = Conditioning{0, 0.3};
  EXPECT_THROW(parametric_causal_effects(fit, g, 1), std::invalid_argument);
  // A binary covariate that never takes the value 1.
  for (auto& r : recs) r.c.push_back(0.0);
  const ParametricFit fit2 = fit_parametric(Dataset::from_records(recs, {false, true}), PriorConfig{}, 10, 1);
  g.conditioning = Conditioning{1, 1.0};
  EXPECT_THROW(parametric_causal_effects(fit2, g, 1), std::invalid_argument);
  g.conditioning = Conditioning{1, 0.0};
  EXPECT_NO_THROW(parametric_causal_effects(fit2, g, 1));
}

TEST(Parametric, WorksWithoutConfounder) {
  const Dataset d = Dataset::from_records(linear_records(LinearTruth{}, 200, 12), {false}).without_v();
  GCompConfig g;
  g.mc_draws = 50;
  const auto post = parametric_causal_effects(fit_parametric(d, PriorConfig{}, 50, 1), g, 2);
  EXPECT_EQ(post.nie.size(), 50u);
  for (double x : post.ate) EXPECT_TRUE(std::isfinite(x));
}

TEST(EdpmNoV, DropsConfounderFromEveryDesign) {
  const Dataset d = Dataset::from_records(linear_records(LinearTruth{}, 80, 13), {false});
  EdpmConfig cfg;
  cfg.burn_in = 10;
  cfg.keep = 5;
  cfg.thin = 1;
  const FittedModel fit = fit_edpm_no_v(d, cfg, 1);
  EXPECT_FALSE(fit.model.layout.has_v);
  ASSERT_EQ(fit.draws.size(), 5u);
  for (const auto& dr : fit.draws) {
    for (const auto& cl : dr.state.clusters) {
      EXPECT_EQ(std::size_t(cl.theta.y.beta.size()), fit.model.layout.y_dim());
      EXPECT_EQ(std::size_t(cl.theta.m.beta.size()), fit.model.layout.m_dim());
    }
  }
  GCompConfig g;
  g.mc_draws = 10;
  const auto post = causal_effects(fit, g, 2);
  for (std::size_t k = 0; k < post.ate.size(); ++k) EXPECT_NEAR(post.ate[k], post.nie[k] + post.nde[k], 1e-12);
}

TEST(EdpmNoV, AgreesWithFullModelWhenConfounderIsInert) {
  LinearTruth t;
  t.vzero = 0.0;
  const Dataset d = Dataset::from_records(linear_records(t, 300, 14), {false});
  EdpmConfig cfg;
  cfg.burn_in = 500;
  cfg.keep = 200;
  cfg.thin = 5;
  GCompConfig g;
  g.mc_draws = 200;
  const auto full = causal_effects(fit_edpm(d, cfg, 15), g, 16);
  const auto nov = causal_effects(fit_edpm_no_v(d, cfg, 15), g, 16);
  for (auto member : {&EffectPosterior::nie, &EffectPosterior::nde}) {
    const auto& a = full.*member;
    const auto& b = nov.*member;
    const double se = std::hypot(sd_of(a), sd_of(b)) / std::sqrt(200.0);
    EXPECT_LT(std::fabs(mean_of(a) - mean_of(b)), 3.0 * se);
  }
}

}  // namespace
