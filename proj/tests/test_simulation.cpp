#include "edpm/simulation.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

namespace {

using namespace edpm;

bool same_predictor(const LinearPredictor& a, const LinearPredictor& b) {
  return a.intercept == b.intercept && a.z == b.z && a.m == b.m && a.v == b.v && a.zm == b.zm && a.c == b.c;
}

bool same_outcome(const std::vector<OutcomeComponent>& a, const std::vector<OutcomeComponent>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k)
    if (a[k].weight != b[k].weight || !same_predictor(a[k].linear, b[k].linear) || a[k].hinge != b[k].hinge ||
        a[k].knot != b[k].knot || a[k].m_sq != b[k].m_sq || a[k].var != b[k].var)
      return false;
  return true;
}

EdpmConfig tiny_chain() {
  EdpmConfig cfg;
  cfg.burn_in = 20;
  cfg.keep = 10;
  cfg.thin = 1;
  return cfg;
}

GCompConfig tiny_gcomp() {
  GCompConfig g;
  g.mc_draws = 20;
  return g;
}

// ---------------------------------------------------------------------------

TEST(Scenario, StructureMatchesFamily) {
  for (int id = 1; id <= 12; ++id) {
    const ScenarioSpec s = scenario(id);
    EXPECT_EQ(s.id, id);
    EXPECT_EQ(s.p_c(), id <= 6 ? 2u : 15u);
    const auto b = s.c_binary();
    ASSERT_EQ(b.size(), s.p_c());
    for (std::size_t j = 0; j < b.size(); ++j) EXPECT_EQ(b[j], id > 6 && j < 9) << id << " " << j;
    EXPECT_EQ(s.confounder_kind, (id - 1) % 6 >= 3 ? ConfounderKind::gamma : ConfounderKind::normal);
    if ((id - 1) % 3 == 2) {
      ASSERT_EQ(s.outcome.size(), 1u);
      EXPECT_EQ(s.outcome[0].hinge, 0.2);
      EXPECT_EQ(s.outcome[0].knot, 0.4);
      EXPECT_EQ(s.outcome[0].m_sq, 0.6);
    } else {
      ASSERT_EQ(s.outcome.size(), 2u);
      EXPECT_EQ(s.outcome[0].weight, 0.6);
      EXPECT_EQ(s.outcome[1].weight, 0.4);
    }
  }
  EXPECT_THROW(scenario(0), std::invalid_argument);
  EXPECT_THROW(scenario(13), std::invalid_argument);
}

TEST(Scenario, GammaTwinsDifferOnlyInConfounderBlock) {
  for (int id : {1, 2, 3, 7, 8, 9}) {
    const ScenarioSpec a = scenario(id), b = scenario(id + 3);
    EXPECT_NE(a.confounder_kind, b.confounder_kind);
    EXPECT_EQ(a.covariates, b.covariates);
    EXPECT_TRUE(same_predictor(a.m_location, b.m_location)) << id;
    EXPECT_EQ(a.m_scale, b.m_scale);
    EXPECT_EQ(a.m_slant, b.m_slant);
    EXPECT_TRUE(same_outcome(a.outcome, b.outcome)) << id;
  }
}

TEST(GenerateDataset, DeterministicGivenSeed) {
  const auto a = generate_dataset(scenario(7), 100, 11);
  const auto b = generate_dataset(scenario(7), 100, 11);
  const auto c = generate_dataset(scenario(7), 100, 12);
  for (std::size_t i = 0; i < 100; ++i) {
    EXPECT_EQ(a.records[i].y, b.records[i].y);
    EXPECT_EQ(a.records[i].c, b.records[i].c);
    EXPECT_EQ(a.latents[i].y10, b.latents[i].y10);
  }
  EXPECT_NE(a.records[0].y, c.records[0].y);
}

TEST(GenerateDataset, ObservedValuesArePotentialValuesAtRealizedTreatment) {
  for (int id = 1; id <= 12; ++id) {
    const auto sim = generate_dataset(scenario(id), 300, 100 + id);
    int treated = 0;
    for (std::size_t i = 0; i < 300; ++i) {
      const auto& r = sim.records[i];
      const auto& lt = sim.latents[i];
      treated += r.z;
      EXPECT_EQ(*r.v, r.z ? lt.v1 : lt.v0);
      EXPECT_EQ(*r.m, r.z ? lt.m1 : lt.m0);
      EXPECT_EQ(*r.y, r.z ? lt.y11 : lt.y00);
      ASSERT_EQ(r.c.size(), scenario(id).p_c());
    }
    EXPECT_GT(treated, 100);
    EXPECT_LT(treated, 200);
  }
}

TEST(GenerateDataset, ContinuousCovariateScale) {
  const auto sim = generate_dataset(scenario(1), 100000, 3);
  double s1 = 0.0, s2 = 0.0;
  for (const auto& r : sim.records) {
    s1 += *r.c[0];
    s2 += *r.c[0] * *r.c[0];
  }
  const double n = 100000.0, mean = s1 / n;
  EXPECT_NEAR(std::sqrt(s2 / n - mean * mean), 3.0, 3.0 * 3.0 / std::sqrt(2.0 * n));
}

TEST(GenerateDataset, MixedCovariateBlockMoments) {
  const auto sim = generate_dataset(scenario(8), 100000, 4);
  const double n = 100000.0;
  std::vector<double> mean(15, 0.0);
  double cross = 0.0, sq = 0.0;
  for (const auto& r : sim.records) {
    for (std::size_t j = 0; j < 15; ++j) {
      if (j < 9) {
        ASSERT_TRUE(*r.c[j] == 0.0 || *r.c[j] == 1.0);
      }
      mean[j] += *r.c[j] / n;
    }
    cross += *r.c[9] * *r.c[10] / n;
    sq += *r.c[12] * *r.c[12] / n;
  }
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(mean[j], 0.05, 4.0 * std::sqrt(0.05 * 0.95 / n));
  for (std::size_t j = 3; j < 6; ++j) EXPECT_NEAR(mean[j], 0.5, 4.0 * std::sqrt(0.25 / n));
  for (std::size_t j = 9; j < 15; ++j) EXPECT_NEAR(mean[j], 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(cross, 0.3, 0.02);
  EXPECT_NEAR(sq, 1.0, 0.02);
}

TEST(TrueEffects, FirstMixtureScenario) {
  const TrueEffects t = true_effects(scenario(1), 10000000, 2024);
  EXPECT_NEAR(t.nie, 1.19, 0.02);
  EXPECT_NEAR(t.nde, 0.95, 0.02);
  EXPECT_NEAR(t.ate, 2.14, 0.02);
}

TEST(TrueEffects, FirstHingeScenario) {
  const TrueEffects t = true_effects(scenario(3), 10000000, 2025);
  EXPECT_NEAR(t.nie, 0.30, 0.01);
  EXPECT_NEAR(t.nde, 2.53, 0.01);
  EXPECT_NEAR(t.ate, 2.83, 0.01);
}

TEST(TrueEffects, VanishWithoutTreatmentPaths) {
  for (int id : {1, 3, 9, 12}) {
    const TrueEffects t = true_effects(scenario(id).without_treatment_effect(), 1000000, 6);
    EXPECT_NEAR(t.nie, 0.0, 0.01) << id;
    EXPECT_NEAR(t.nde, 0.0, 0.01) << id;
    EXPECT_NEAR(t.ate, 0.0, 0.01) << id;
  }
}

TEST(TrueEffects, IndependentOfThreadsAndIdentity) {
  const TrueEffects a = true_effects(scenario(2), 300000, 9, 1);
  const TrueEffects b = true_effects(scenario(2), 300000, 9, 3);
  EXPECT_EQ(a.nie, b.nie);
  EXPECT_EQ(a.nde, b.nde);
  EXPECT_NEAR(a.ate, a.nie + a.nde, 1e-12);
  EXPECT_THROW(true_effects(scenario(2), 0, 9), std::invalid_argument);
}

TEST(Score, HandComputedMetrics) {
  const std::vector<Summary> est{{1.0, 0.5, 1.5}, {2.0, 1.8, 2.4}, {0.4, 0.0, 0.6}};
  const MetricsRow r = score(3, "NIE", 1.2, est, 250);
  EXPECT_EQ(r.scenario, 3);
  EXPECT_EQ(r.estimand, "NIE");
  EXPECT_EQ(r.n, 250u);
  EXPECT_EQ(r.replications, 3u);
  EXPECT_NEAR(r.bias, (-0.2 + 0.8 - 0.8) / 3.0, 1e-12);
  EXPECT_NEAR(r.mse, (0.04 + 0.64 + 0.64) / 3.0, 1e-12);
  EXPECT_NEAR(r.ci_length, (1.0 + 0.6 + 0.6) / 3.0, 1e-12);
  EXPECT_NEAR(r.coverage, 1.0 / 3.0, 1e-12);
}

TEST(Score, ExactEstimatorHasUndefinedCoverage) {
  const std::vector<Summary> est(5, Summary{0.7, 0.7, 0.7});
  const MetricsRow r = score(1, "ATE", 0.7, est, 10);
  EXPECT_EQ(r.bias, 0.0);
  EXPECT_EQ(r.mse, 0.0);
  EXPECT_EQ(r.ci_length, 0.0);
  EXPECT_TRUE(std::isnan(r.coverage));
  EXPECT_TRUE(std::isnan(score(1, "ATE", 0.7, {}, 10).bias));
}

TEST(Score, MseDominatesSquaredBias) {
  Rng rng(5);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<Summary> est(1 + rep % 9);
    for (auto& e : est) {
      e.mean = 4.0 * std_normal_draw(rng);
      e.lo95 = e.mean - uniform_draw(rng);
      e.hi95 = e.mean + uniform_draw(rng);
    }
    const MetricsRow r = score(1, "NDE", std_normal_draw(rng), est, 1);
    EXPECT_GE(r.mse, r.bias * r.bias - 1e-12);
    EXPECT_GE(r.coverage, 0.0);
    EXPECT_LE(r.coverage, 1.0);
  }
}

TEST(ModelKind, ParsesNames) {
  for (ModelKind k : {ModelKind::edpm, ModelKind::edpm_no_v, ModelKind::parametric})
    EXPECT_EQ(parse_model_kind(to_string(k)), k);
  EXPECT_THROW(parse_model_kind("bart"), std::invalid_argument);
}

TEST(Replications, SingleReplicationMseIsSquaredBias) {
  const TrueEffects truth{1.19, 0.95, 2.14};
  const auto res = run_replications(scenario(1), 60, 1, ModelKind::edpm, tiny_chain(), tiny_gcomp(), truth, 8);
  ASSERT_EQ(res.failures, 0u);
  ASSERT_EQ(res.rows.size(), 3u);
  for (const auto& row : res.rows) {
    EXPECT_EQ(row.replications, 1u);
    EXPECT_NEAR(row.mse, row.bias * row.bias, 1e-12);
  }
  EXPECT_EQ(res.rows[0].estimand, "NIE");
  EXPECT_EQ(res.rows[1].estimand, "NDE");
  EXPECT_EQ(res.rows[2].estimand, "ATE");
}

TEST(Replications, IndependentOfThreadCount) {
  const TrueEffects truth{0.3, 2.53, 2.83};
  for (ModelKind k : {ModelKind::parametric, ModelKind::edpm_no_v}) {
    const auto a = run_replications(scenario(3), 80, 3, k, tiny_chain(), tiny_gcomp(), truth, 21, 1);
    const auto b = run_replications(scenario(3), 80, 3, k, tiny_chain(), tiny_gcomp(), truth, 21, 3);
    ASSERT_EQ(a.estimates.size(), 3u);
    for (std::size_t r = 0; r < 3; ++r) {
      EXPECT_EQ(a.estimates[r].nie.mean, b.estimates[r].nie.mean);
      EXPECT_EQ(a.estimates[r].ate.hi95, b.estimates[r].ate.hi95);
    }
  }
}

TEST(Replications, FailuresAreCountedAndExcluded) {
  EdpmConfig bad = tiny_chain();
  bad.keep = 0;
  std::size_t calls = 0;
  const auto res = run_replications(scenario(1), 40, 2, ModelKind::parametric, bad, tiny_gcomp(), TrueEffects{}, 1, 1,
                                    [&](std::size_t, bool ok) {
                                      ++calls;
                                      EXPECT_FALSE(ok);
                                    });
  EXPECT_EQ(calls, 2u);
  EXPECT_EQ(res.failures, 2u);
  EXPECT_EQ(res.failure_messages.size(), 2u);
  EXPECT_TRUE(res.estimates.empty());
  EXPECT_TRUE(std::isnan(res.rows[0].bias));
}

}  // namespace
