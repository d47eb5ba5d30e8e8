#pragma once

// Model fitting entry points: the full EDPM, the EDPM without the
// post-treatment confounder, and a fully parametric conjugate comparator whose
// confounder distribution is a Bayesian bootstrap.

#include "edpm/copula.hpp"
#include "edpm/data.hpp"
#include "edpm/gcomp.hpp"
#include "edpm/gibbs.hpp"
#include "edpm/model.hpp"
#include "edpm/prob_core.hpp"

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace edpm {

inline FittedModel fit_edpm(const Dataset& d, const EdpmConfig& cfg, std::uint64_t seed,
                            SamplerDiagnostics* diag = nullptr) {
  FittedModel f;
  f.model = EdpmModel(d.layout, cfg);
  f.draws = run_chain(cfg, d, seed, nullptr, diag);
  f.y_scale = d.y_scale;
  f.c_scale = d.c_scale;
  return f;
}

/// EDPM with V removed from every design; the G-computation then has no copula step.
inline FittedModel fit_edpm_no_v(const Dataset& d, const EdpmConfig& cfg, std::uint64_t seed,
                                 SamplerDiagnostics* diag = nullptr) {
  return fit_edpm(d.without_v(), cfg, seed, diag);
}

// ---------------------------------------------------------------------------
// Parametric comparator

struct ParametricDraw {
  RegressionParams y, m, v;
  std::vector<double> cum_weights;  // Bayesian-bootstrap CDF over data rows
};

struct ParametricFit {
  Layout layout;
  std::size_t n = 0;
  std::vector<double> c_rows;  // row-major n x p_c, standardized
  std::vector<ParametricDraw> draws;
  Standardizer y_scale;
  std::vector<Standardizer> c_scale;

  std::span<const double> c_row(std::size_t i) const { return {c_rows.data() + i * layout.p_c, layout.p_c}; }
};

/// Independent draws from the exact conjugate posteriors of three global
/// linear regressions (Y | M, V, Z, C; M | V, Z, C; V | Z, C) and Dirichlet(1, ..., 1)
/// weights over the observed covariate rows. Requires complete data.
inline ParametricFit fit_parametric(const Dataset& d, const PriorConfig& priors, std::size_t keep,
                                    std::uint64_t seed) {
  if (d.any_missing()) throw DataError("fit_parametric: requires complete data");
  if (keep < 1) throw std::invalid_argument("fit_parametric: keep must be >= 1");
  const Layout& L = d.layout;
  const auto prior = [&](std::size_t dim) {
    return NigPrior::isotropic(static_cast<Eigen::Index>(dim), priors.coef_var, priors.reg_shape, priors.reg_rate);
  };
  RegressionStats ys(static_cast<Eigen::Index>(L.y_dim())), ms(static_cast<Eigen::Index>(L.m_dim())),
      vs(static_cast<Eigen::Index>(L.v_dim()));
  DesignBuffer buf;
  for (std::size_t i = 0; i < d.n; ++i) {
    const auto c = d.c_row(i);
    L.fill_y_design(d.m[i], d.v[i], d.z[i], c, buf);
    ys.add(std::span<const double>(buf.data(), L.y_dim()), d.y[i]);
    L.fill_m_design(d.v[i], d.z[i], c, buf);
    ms.add(std::span<const double>(buf.data(), L.m_dim()), d.m[i]);
    L.fill_v_design(d.z[i], c, buf);
    vs.add(std::span<const double>(buf.data(), L.v_dim()), d.v[i]);
  }
  const NigDistribution py(nig_posterior(prior(L.y_dim()), ys));
  const NigDistribution pm(nig_posterior(prior(L.m_dim()), ms));
  const NigDistribution pv(nig_posterior(prior(L.v_dim()), vs));

  ParametricFit fit;
  fit.layout = L;
  fit.n = d.n;
  fit.c_rows = d.c;
  fit.y_scale = d.y_scale;
  fit.c_scale = d.c_scale;
  Rng rng(seed);
  fit.draws.resize(keep);
  for (auto& dr : fit.draws) {
    dr.y = py.sample(rng);
    dr.m = pm.sample(rng);
    if (L.has_v) {
      dr.v = pv.sample(rng);
    } else {
      dr.v.beta = Vec::Zero(static_cast<Eigen::Index>(L.v_dim()));
      dr.v.sigma_sq = 1.0;
    }
    dr.cum_weights.resize(d.n);
    double total = 0.0;
    for (std::size_t i = 0; i < d.n; ++i) {
      total += gamma_draw(1.0, 1.0, rng);
      dr.cum_weights[i] = total;
    }
    for (double& w : dr.cum_weights) w /= total;
  }
  return fit;
}

/// v' = mu' + sd' * u with u ~ N(rho * (v - mu) / sd, 1 - rho^2): the Gaussian
/// copula between two normal marginals in closed form. Consumes one normal
/// variate, in the same order as conditional_copula_draw.
inline double normal_copula_draw(double v, double mu_same, double sd_same, double mu_counter, double sd_counter,
                                 double rho, Rng& rng) {
  if (!(std::fabs(rho) < 1.0)) throw std::invalid_argument("normal_copula_draw: |rho| must be < 1");
  const double u = rho * (v - mu_same) / sd_same + std::sqrt(1.0 - rho * rho) * std_normal_draw(rng);
  return mu_counter + sd_counter * u;
}

inline PotentialOutcomeMeans parametric_potential_outcomes(const ParametricFit& fit, const ParametricDraw& dr,
                                                           const GCompConfig& cfg, Rng& rng,
                                                           std::optional<Conditioning> cond_std = std::nullopt) {
  const Layout& L = fit.layout;
  std::vector<double> cum = dr.cum_weights;
  if (cond_std) {
    // Bootstrap restricted to rows carrying the conditioning value.
    double prev = 0.0, kept = 0.0;
    for (std::size_t i = 0; i < fit.n; ++i) {
      const double w = dr.cum_weights[i] - prev;
      prev = dr.cum_weights[i];
      if (fit.c_row(i)[cond_std->index] == cond_std->value) kept += w;
      cum[i] = kept;
    }
    if (!(kept > 0.0)) throw std::invalid_argument("parametric conditioning: no rows with that covariate value");
    for (double& x : cum) x /= kept;
  }
  const double sv = std::sqrt(dr.v.sigma_sq), sm = std::sqrt(dr.m.sigma_sq);
  PotentialOutcomeMeans out;
  for (std::size_t d = 0; d < cfg.mc_draws; ++d) {
    const double u = uniform_draw(rng);
    const auto row = static_cast<std::size_t>(std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
    const auto c = fit.c_row(std::min(row, fit.n - 1));
    double v1 = 0.0, v0 = 0.0;
    if (L.has_v) {
      const double mu1 = v_mean(dr.v, 1, c), mu0 = v_mean(dr.v, 0, c);
      v1 = mu1 + sv * std_normal_draw(rng);
      const double rho = draw_rho(cfg.sensitivity, rng);
      v0 = normal_copula_draw(v1, mu1, sv, mu0, sv, rho, rng);
    }
    const double m1 = m_mean(L, dr.m, v1, 1, c) + sm * std_normal_draw(rng);
    const double m0 = m_mean(L, dr.m, v0, 0, c) + sm * std_normal_draw(rng);
    out.e11 += y_mean(L, dr.y, m1, v1, 1, c);
    out.e10 += y_mean(L, dr.y, m0, v1, 1, c);
    out.e00 += y_mean(L, dr.y, m0, v0, 0, c);
  }
  const double D = static_cast<double>(cfg.mc_draws);
  out.e11 /= D;
  out.e10 /= D;
  out.e00 /= D;
  return out;
}

inline EffectPosterior parametric_causal_effects(const ParametricFit& fit, const GCompConfig& cfg,
                                                 std::uint64_t seed) {
  cfg.validate();
  if (fit.draws.empty()) throw std::invalid_argument("parametric_causal_effects: no posterior draws");
  std::optional<Conditioning> cond;
  if (cfg.conditioning) {
    cond = standardize_conditioning(*cfg.conditioning, fit.layout, fit.c_scale);
    if (!fit.layout.c_binary[cond->index])
      throw std::invalid_argument("parametric conditioning requires a binary covariate");
  }
  std::vector<PotentialOutcomeMeans> per(fit.draws.size());
  parallel_for(fit.draws.size(), cfg.threads, [&](std::size_t k) {
    Rng rng(derive_seed(seed, k));
    per[k] = parametric_potential_outcomes(fit, fit.draws[k], cfg, rng, cond);
  });
  EffectPosterior post;
  const double sd = fit.y_scale.sd;
  for (const auto& e : per) post.push((e.e11 - e.e10) * sd, (e.e10 - e.e00) * sd);
  return post;
}

}  // namespace edpm
