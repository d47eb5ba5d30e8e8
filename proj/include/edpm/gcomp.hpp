#pragma once

// Monte-Carlo G-computation of natural direct and indirect effects from EDPM
// posterior draws.

#include "edpm/copula.hpp"
#include "edpm/data.hpp"
#include "edpm/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <thread>
#include <vector>

namespace edpm {

/// Fix baseline covariate `index` (0-based into c) to `value` (raw scale).
struct Conditioning {
  std::size_t index = 0;
  double value = 0.0;
};

struct GCompConfig {
  std::size_t mc_draws = 500;
  SensitivitySpec sensitivity = SensitivitySpec::fixed(0.0);
  double eps_tol = 1e-8;
  std::optional<Conditioning> conditioning;
  std::size_t threads = 1;

  void validate() const {
    if (mc_draws < 1) throw std::invalid_argument("GCompConfig: mc_draws must be >= 1");
    if (!(eps_tol > 0.0)) throw std::invalid_argument("GCompConfig: eps_tol must be positive");
    sensitivity.validate();
  }
};

/// Posterior draws plus what is needed to interpret them on the raw scale.
struct FittedModel {
  EdpmModel model;
  std::vector<PosteriorDraw> draws;
  Standardizer y_scale;
  std::vector<Standardizer> c_scale;
};

struct Summary {
  double mean = 0.0;
  double lo95 = 0.0;
  double hi95 = 0.0;
};

/// Type-7 (linear interpolation) empirical quantile.
inline double quantile_type7(std::vector<double> xs, double prob) {
  if (xs.empty()) throw std::invalid_argument("quantile_type7: empty sample");
  std::sort(xs.begin(), xs.end());
  const double h = (static_cast<double>(xs.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline Summary summarize(const std::vector<double>& xs) {
  Summary s;
  double total = 0.0;
  for (double x : xs) total += x;
  s.mean = total / static_cast<double>(xs.size());
  s.lo95 = quantile_type7(xs, 0.025);
  s.hi95 = quantile_type7(xs, 0.975);
  return s;
}

/// Per-draw effect values on the raw outcome scale; ate = nie + nde per draw.
struct EffectPosterior {
  std::vector<double> nie, nde, ate;

  void push(double nie_d, double nde_d) {
    nie.push_back(nie_d);
    nde.push_back(nde_d);
    ate.push_back(nie_d + nde_d);
  }
  Summary nie_summary() const { return summarize(nie); }
  Summary nde_summary() const { return summarize(nde); }
  Summary ate_summary() const { return summarize(ate); }
};

/// E[y | m, v, z, c] under one posterior state (standardized scale): the
/// lambda_y-weighted average of the cluster regression means and the prior mean.
inline double expected_y(double m, double v, int z, std::span<const double> c, const EdpmState& s,
                         const EdpmModel& M) {
  const LogWeights lw = lambda_y_weights(m, v, z, c, s, M);
  double e = 0.0;
  for (std::size_t l = 0; l < s.K(); ++l)
    e += std::exp(lw.log_w[l] - lw.log_norm) * y_mean(M.layout, s.clusters[l].theta.y, m, v, z, c);
  e += std::exp(lw.log_w[s.K()] - lw.log_norm) * M.base.e0_y(m, v, z, c);
  return e;
}

/// Mixture law of the confounder V given (z, c) under one posterior state.
inline MixtureCdf confounder_mixture(int z, std::span<const double> c, const EdpmState& s, const EdpmModel& M) {
  const SubclusterWeights sw = lambda_v_weights(z, c, s, M);
  MixtureCdf f;
  const std::size_t k_n = sw.index.size();
  f.weight.reserve(k_n);
  f.mean.reserve(k_n);
  f.sd.reserve(k_n);
  for (std::size_t k = 0; k < k_n; ++k) {
    const auto [l, r] = sw.index[k];
    const RegressionParams& vp = s.clusters[l].subs[r].omega.v;
    f.add_normal(std::exp(sw.weights.log_w[k] - sw.weights.log_norm), v_mean(vp, z, c), vp.sigma_sq);
  }
  f.t_weight = std::exp(sw.weights.log_w[k_n] - sw.weights.log_norm);
  f.t = M.base.f0_v(z, c);
  return f;
}

/// Draws m from the mediator mixture P(m | v, z, c).
inline double sample_mediator(double v, int z, std::span<const double> c, const EdpmState& s, const EdpmModel& M,
                              Rng& rng) {
  const LogWeights lw = mediator_mixture_weights(v, z, c, s, M);
  const std::size_t k = sample_log_weights(lw.log_w, rng);
  if (k < s.K()) {
    const RegressionParams& mp = s.clusters[k].theta.m;
    return m_mean(M.layout, mp, v, z, c) + std::sqrt(mp.sigma_sq) * std_normal_draw(rng);
  }
  const StudentT t = M.base.f0_m(v, z, c);
  return t.location + t.scale * std::student_t_distribution<double>(t.dof)(rng);
}

/// Monte-Carlo engine bound to one posterior state. Covariate draws use the
/// urn predictive over (cluster, subcluster) pairs, optionally tilted toward a
/// fixed covariate value.
class DrawSimulator {
 public:
  DrawSimulator(const EdpmState& s, const EdpmModel& M, std::optional<Conditioning> cond_std = std::nullopt)
      : s_(&s), M_(&M), cond_(cond_std) {
    const Layout& L = M.layout;
    const double n = static_cast<double>(s.n());
    const double log_denom = std::log(M.alpha_theta + n);
    const double log_f0_cond = cond_ ? M.base.log_f0_x_single(cond_->index + 1, cond_->value) : 0.0;
    for (std::size_t l = 0; l < s.K(); ++l) {
      const YCluster& cl = s.clusters[l];
      const double nl = static_cast<double>(cl.count);
      const double base = std::log(nl) - log_denom - std::log(M.alpha_omega + nl);
      for (std::size_t r = 0; r < cl.subs.size(); ++r) {
        double w = base + std::log(static_cast<double>(cl.subs[r].count));
        if (cond_) w += log_marginal_at(L, cl.subs[r].omega, cond_->index, cond_->value);
        log_w_.push_back(w);
        pick_.emplace_back(l, r);
      }
      log_w_.push_back(base + std::log(M.alpha_omega) + log_f0_cond);
      pick_.emplace_back(l, kFresh);
    }
    log_w_.push_back(std::log(M.alpha_theta) - log_denom + log_f0_cond);
    pick_.emplace_back(kFresh, kFresh);
  }

  std::size_t p_c() const { return M_->layout.p_c; }

  /// Steps: select a component from the urn, then draw c from its marginals.
  void sample_covariates(std::span<double> c, Rng& rng) {
    const auto [l, r] = pick_[sample_log_weights(log_w_, rng)];
    const XClusterParams* om;
    if (r == kFresh) {
      M_->base.draw_omega_into(fresh_, rng);
      om = &fresh_;
    } else {
      om = &s_->clusters[l].subs[r].omega;
    }
    const Layout& L = M_->layout;
    for (std::size_t j = 0; j < L.p_c; ++j) {
      const std::size_t q = j + 1;
      if (L.c_binary[j])
        c[j] = uniform_draw(rng) < om->prob[q] ? 1.0 : 0.0;
      else
        c[j] = om->mu[q] + std::sqrt(om->tau_sq[q]) * std_normal_draw(rng);
    }
    if (cond_) c[cond_->index] = cond_->value;
  }

  const EdpmState& state() const { return *s_; }
  const EdpmModel& model() const { return *M_; }

 private:
  static constexpr std::size_t kFresh = static_cast<std::size_t>(-1);

  static double log_marginal_at(const Layout& L, const XClusterParams& om, std::size_t j, double value) {
    const std::size_t q = j + 1;
    if (L.c_binary[j]) return value == 1.0 ? std::log(om.prob[q]) : std::log1p(-om.prob[q]);
    return normal_log_pdf(value, om.mu[q], om.tau_sq[q]);
  }

  const EdpmState* s_;
  const EdpmModel* M_;
  std::optional<Conditioning> cond_;
  std::vector<double> log_w_;
  std::vector<std::pair<std::size_t, std::size_t>> pick_;
  XClusterParams fresh_;
};

/// Maps a raw-scale conditioning value onto the standardized working scale and
/// checks that it lies in the covariate's support.
inline Conditioning standardize_conditioning(const Conditioning& raw, const Layout& L,
                                             const std::vector<Standardizer>& c_scale) {
  if (raw.index >= L.p_c) throw std::invalid_argument("conditioning: covariate index out of range");
  if (L.c_binary[raw.index]) {
    if (raw.value != 0.0 && raw.value != 1.0)
      throw std::invalid_argument("conditioning: binary covariate value must be 0 or 1");
    return raw;
  }
  if (!std::isfinite(raw.value)) throw std::invalid_argument("conditioning: value must be finite");
  return {raw.index, c_scale.empty() ? raw.value : c_scale[raw.index].forward(raw.value)};
}

/// E[Y_{z, M_{z'}}] on the standardized scale for one posterior state.
inline double potential_outcome_mean(int z, int z_prime, const EdpmState& s, const EdpmModel& M,
                                     const GCompConfig& cfg, Rng& rng,
                                     std::optional<Conditioning> cond_std = std::nullopt) {
  cfg.validate();
  DrawSimulator sim(s, M, cond_std);
  std::vector<double> c(M.layout.p_c);
  double total = 0.0;
  for (std::size_t d = 0; d < cfg.mc_draws; ++d) {
    sim.sample_covariates(c, rng);
    double v = 0.0, v_prime = 0.0;
    if (M.layout.has_v) {
      const MixtureCdf f_z = confounder_mixture(z, c, s, M);
      v = f_z.sample(rng);
      const double rho = draw_rho(cfg.sensitivity, rng);
      v_prime = v;
      if (z != z_prime)
        v_prime = conditional_copula_draw(v, f_z, confounder_mixture(z_prime, c, s, M), rho, cfg.eps_tol, rng);
    }
    const double m = sample_mediator(v_prime, z_prime, c, s, M, rng);
    total += expected_y(m, v, z, c, s, M);
  }
  return total / static_cast<double>(cfg.mc_draws);
}

/// The three potential-outcome means E[Y_{1,M1}], E[Y_{1,M0}], E[Y_{0,M0}] for
/// one posterior state, sharing (c, v, rho) draws across them.
struct PotentialOutcomeMeans {
  double e11 = 0.0, e10 = 0.0, e00 = 0.0;
};

inline PotentialOutcomeMeans draw_potential_outcomes(const EdpmState& s, const EdpmModel& M, const GCompConfig& cfg,
                                                     Rng& rng, std::optional<Conditioning> cond_std = std::nullopt) {
  DrawSimulator sim(s, M, cond_std);
  std::vector<double> c(M.layout.p_c);
  PotentialOutcomeMeans out;
  for (std::size_t d = 0; d < cfg.mc_draws; ++d) {
    sim.sample_covariates(c, rng);
    double v1 = 0.0, v0 = 0.0;
    if (M.layout.has_v) {
      const MixtureCdf f1 = confounder_mixture(1, c, s, M);
      v1 = f1.sample(rng);
      const double rho = draw_rho(cfg.sensitivity, rng);
      v0 = conditional_copula_draw(v1, f1, confounder_mixture(0, c, s, M), rho, cfg.eps_tol, rng);
    }
    const double m1 = sample_mediator(v1, 1, c, s, M, rng);
    const double m0 = sample_mediator(v0, 0, c, s, M, rng);
    out.e11 += expected_y(m1, v1, 1, c, s, M);
    out.e10 += expected_y(m0, v1, 1, c, s, M);
    out.e00 += expected_y(m0, v0, 0, c, s, M);
  }
  const double D = static_cast<double>(cfg.mc_draws);
  out.e11 /= D;
  out.e10 /= D;
  out.e00 /= D;
  return out;
}

/// Runs `body(k)` for k in [0, count) over up to `threads` workers.
template <class Body>
void parallel_for(std::size_t count, std::size_t threads, Body&& body) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t k = 0; k < count; ++k) body(k);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t k = t; k < count; k += threads) body(k);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Effect posterior across draws. Each draw gets its own RNG stream derived
/// from `seed`, so results do not depend on the thread count.
inline EffectPosterior causal_effects(const FittedModel& fit, const GCompConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (fit.draws.empty()) throw std::invalid_argument("causal_effects: no posterior draws");
  std::optional<Conditioning> cond;
  if (cfg.conditioning) cond = standardize_conditioning(*cfg.conditioning, fit.model.layout, fit.c_scale);
  std::vector<PotentialOutcomeMeans> per(fit.draws.size());
  parallel_for(fit.draws.size(), cfg.threads, [&](std::size_t k) {
    Rng rng(derive_seed(seed, k));
    per[k] = draw_potential_outcomes(fit.draws[k].state, fit.model, cfg, rng, cond);
  });
  EffectPosterior post;
  const double sd = fit.y_scale.sd;
  for (const auto& e : per) post.push((e.e11 - e.e10) * sd, (e.e10 - e.e00) * sd);
  return post;
}

inline EffectPosterior conditional_causal_effects(const FittedModel& fit, const GCompConfig& cfg, std::uint64_t seed) {
  if (!cfg.conditioning) throw std::invalid_argument("conditional_causal_effects: conditioning not set");
  return causal_effects(fit, cfg, seed);
}

}  // namespace edpm
