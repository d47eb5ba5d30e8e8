#pragma once

// Posterior simulation for the EDPM. Allocation follows the auxiliary-parameter
// scheme for non-conjugate DP mixtures, run on both levels at once: each
// subject picks an (outcome cluster, confounder subcluster) pair from existing
// pairs, fresh subclusters inside existing clusters, or fresh clusters.

#include "edpm/data.hpp"
#include "edpm/model.hpp"
#include "edpm/prob_core.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <utility>
#include <vector>

namespace edpm {

struct SamplerDiagnostics {
  /// Parameter refreshes that fell back to a prior draw after a singular update.
  std::size_t prior_fallbacks = 0;
};

/// Gaussian full conditional of a scalar x whose prior is N(prior_mean, prior_var)
/// and that enters further Gaussian factors as obs_k ~ N(offset_k + slope_k x, var_k).
class GaussianConditional {
 public:
  GaussianConditional(double prior_mean, double prior_var)
      : precision_(1.0 / prior_var), shift_(prior_mean / prior_var) {}
  void add_factor(double observed, double offset, double slope, double var) {
    precision_ += slope * slope / var;
    shift_ += slope * (observed - offset) / var;
  }
  double mean() const { return shift_ / precision_; }
  double variance() const { return 1.0 / precision_; }
  double draw(Rng& rng) const { return mean() + std::sqrt(variance()) * std_normal_draw(rng); }

 private:
  double precision_;
  double shift_;
};

/// Per-chain sampler with reusable scratch space for the auxiliary components.
class GibbsKernel {
 public:
  GibbsKernel(const EdpmModel& model, std::size_t m_aux) : model_(&model), m_aux_(m_aux) {
    if (m_aux_ < 1) throw std::invalid_argument("GibbsKernel: need at least one auxiliary component");
    aux_theta_.resize(m_aux_);
    aux_omega_new_.resize(m_aux_);
  }

  const SamplerDiagnostics& diagnostics() const { return diag_; }

  /// Subjects dealt at random into `k0` outcome clusters of one subcluster
  /// each, parameters drawn from their full conditionals.
  EdpmState initial_state(const Dataset& d, Rng& rng, std::size_t k0 = 1) {
    k0 = std::clamp<std::size_t>(k0, 1, d.n);
    std::vector<std::size_t> order(d.n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    EdpmState s;
    s.y_label.assign(d.n, 0);
    s.x_label.assign(d.n, 0);
    s.clusters.resize(k0);
    for (auto& cl : s.clusters) cl.subs.resize(1);
    for (std::size_t k = 0; k < d.n; ++k) {
      const std::size_t l = k % k0;
      s.y_label[order[k]] = l;
      ++s.clusters[l].count;
      ++s.clusters[l].subs[0].count;
    }
    update_parameters(s, d, rng);
    return s;
  }

  void impute_missing(const EdpmState& s, Dataset& d, Rng& rng) const {
    const Layout& L = model_->layout;
    const std::size_t p = L.p_c;
    for (std::size_t i = 0; i < d.n; ++i) {
      bool any = d.y_miss[i] || d.m_miss[i] || d.v_miss[i];
      for (std::size_t j = 0; j < p && !any; ++j) any = d.c_miss[i * p + j];
      if (!any) continue;
      const YClusterParams& th = s.clusters[s.y_label[i]].theta;
      const XClusterParams& om = s.clusters[s.y_label[i]].subs[s.x_label[i]].omega;
      std::span<double> c = d.c_row(i);
      const int z = d.z[i];

      for (std::size_t j = 0; j < p; ++j) {
        if (!d.c_miss[i * p + j]) continue;
        const std::size_t q = j + 1;
        if (L.c_binary[j]) {
          double lp[2];
          for (int k = 0; k < 2; ++k) {
            c[j] = static_cast<double>(k);
            const Point pt{d.y[i], d.m[i], d.v[i], z, c};
            lp[k] = (k == 1 ? std::log(om.prob[q]) : std::log1p(-om.prob[q])) + loglik_v(L, om, pt) +
                    loglik_m(L, th, pt) + loglik_y(L, th, pt);
          }
          c[j] = sample_log_weights(lp, rng) == 1 ? 1.0 : 0.0;
        } else {
          c[j] = 0.0;
          GaussianConditional g(om.mu[q], om.tau_sq[q]);
          if (L.has_v) g.add_factor(d.v[i], v_mean(om.v, z, c), om.v.beta[static_cast<Eigen::Index>(L.v_col_c(j))],
                                    om.v.sigma_sq);
          g.add_factor(d.m[i], m_mean(L, th.m, d.v[i], z, c), th.m.beta[static_cast<Eigen::Index>(L.m_col_c(j))],
                       th.m.sigma_sq);
          g.add_factor(d.y[i], y_mean(L, th.y, d.m[i], d.v[i], z, c),
                       th.y.beta[static_cast<Eigen::Index>(L.y_col_c(j))], th.y.sigma_sq);
          c[j] = g.draw(rng);
        }
      }

      if (L.has_v && d.v_miss[i]) {
        GaussianConditional g(v_mean(om.v, z, c), om.v.sigma_sq);
        g.add_factor(d.m[i], m_mean(L, th.m, 0.0, z, c), th.m.beta[static_cast<Eigen::Index>(L.m_col_v())],
                     th.m.sigma_sq);
        g.add_factor(d.y[i], y_mean(L, th.y, d.m[i], 0.0, z, c), th.y.beta[static_cast<Eigen::Index>(L.y_col_v())],
                     th.y.sigma_sq);
        d.v[i] = g.draw(rng);
      }
      if (d.m_miss[i]) {
        GaussianConditional g(m_mean(L, th.m, d.v[i], z, c), th.m.sigma_sq);
        g.add_factor(d.y[i], y_mean(L, th.y, 0.0, d.v[i], z, c), th.y.beta[static_cast<Eigen::Index>(L.y_col_m())],
                     th.y.sigma_sq);
        d.m[i] = g.draw(rng);
      }
      if (d.y_miss[i])
        d.y[i] = y_mean(L, th.y, d.m[i], d.v[i], z, c) + std::sqrt(th.y.sigma_sq) * std_normal_draw(rng);
    }
  }

  void update_allocations(EdpmState& s, const Dataset& d, Rng& rng) {
    const EdpmModel& M = *model_;
    const Layout& L = M.layout;
    const double log_aw_m = std::log(M.alpha_omega / static_cast<double>(m_aux_));
    const double log_at_m = std::log(M.alpha_theta / static_cast<double>(m_aux_));

    for (std::size_t i = 0; i < d.n; ++i) {
      const Point p = point_of(d, i);
      if (aux_omega_.size() < s.K() * m_aux_) aux_omega_.resize(s.K() * m_aux_);

      // Remove subject i; a vacated component keeps its parameters as the first auxiliary.
      bool reuse_cluster = false;
      std::size_t reuse_sub_in = static_cast<std::size_t>(-1);
      {
        const std::size_t l = s.y_label[i];
        const std::size_t r = s.x_label[i];
        YCluster& cl = s.clusters[l];
        --cl.count;
        --cl.subs[r].count;
        if (cl.subs[r].count == 0) {
          if (cl.count == 0) {
            std::swap(aux_theta_[0], cl.theta);
            std::swap(aux_omega_new_[0], cl.subs[r].omega);
            reuse_cluster = true;
            s.clusters.erase(s.clusters.begin() + static_cast<std::ptrdiff_t>(l));
            for (auto& lab : s.y_label)
              if (lab > l) --lab;
          } else {
            std::swap(aux_omega_[l * m_aux_], cl.subs[r].omega);
            reuse_sub_in = l;
            cl.subs.erase(cl.subs.begin() + static_cast<std::ptrdiff_t>(r));
            for (std::size_t j = 0; j < d.n; ++j)
              if (s.y_label[j] == l && s.x_label[j] > r) --s.x_label[j];
          }
        }
      }

      const std::size_t K = s.K();
      for (std::size_t l = 0; l < K; ++l)
        for (std::size_t j = 0; j < m_aux_; ++j)
          if (!(j == 0 && l == reuse_sub_in)) M.base.draw_omega_into(aux_omega_[l * m_aux_ + j], rng);
      for (std::size_t h = 0; h < m_aux_; ++h) {
        if (h == 0 && reuse_cluster) continue;
        M.base.draw_theta_into(aux_theta_[h], rng);
        M.base.draw_omega_into(aux_omega_new_[h], rng);
      }

      log_w_.clear();
      cand_.clear();
      for (std::size_t l = 0; l < K; ++l) {
        const YCluster& cl = s.clusters[l];
        const double nl = static_cast<double>(cl.count);
        const double base = std::log(nl) + loglik_y(L, cl.theta, p) + loglik_m(L, cl.theta, p) -
                            std::log(M.alpha_omega + nl);
        for (std::size_t r = 0; r < cl.subs.size(); ++r) {
          const XClusterParams& om = cl.subs[r].omega;
          log_w_.push_back(base + std::log(static_cast<double>(cl.subs[r].count)) + loglik_v(L, om, p) +
                           loglik_x(L, om, p));
          cand_.push_back({Move::existing, l, r});
        }
        for (std::size_t j = 0; j < m_aux_; ++j) {
          const XClusterParams& om = aux_omega_[l * m_aux_ + j];
          log_w_.push_back(base + log_aw_m + loglik_v(L, om, p) + loglik_x(L, om, p));
          cand_.push_back({Move::new_sub, l, j});
        }
      }
      for (std::size_t h = 0; h < m_aux_; ++h) {
        const YClusterParams& th = aux_theta_[h];
        const XClusterParams& om = aux_omega_new_[h];
        log_w_.push_back(log_at_m + loglik_y(L, th, p) + loglik_m(L, th, p) + loglik_v(L, om, p) +
                         loglik_x(L, om, p));
        cand_.push_back({Move::new_cluster, h, 0});
      }

      const Candidate pick = cand_[sample_log_weights(log_w_, rng)];
      switch (pick.kind) {
        case Move::existing: {
          YCluster& cl = s.clusters[pick.a];
          ++cl.count;
          ++cl.subs[pick.b].count;
          s.y_label[i] = pick.a;
          s.x_label[i] = pick.b;
          break;
        }
        case Move::new_sub: {
          YCluster& cl = s.clusters[pick.a];
          ++cl.count;
          cl.subs.emplace_back();
          cl.subs.back().count = 1;
          std::swap(cl.subs.back().omega, aux_omega_[pick.a * m_aux_ + pick.b]);
          s.y_label[i] = pick.a;
          s.x_label[i] = cl.subs.size() - 1;
          break;
        }
        case Move::new_cluster: {
          s.clusters.emplace_back();
          YCluster& cl = s.clusters.back();
          cl.count = 1;
          std::swap(cl.theta, aux_theta_[pick.a]);
          cl.subs.emplace_back();
          cl.subs.back().count = 1;
          std::swap(cl.subs.back().omega, aux_omega_new_[pick.a]);
          s.y_label[i] = s.K() - 1;
          s.x_label[i] = 0;
          break;
        }
      }
    }
  }

  void update_parameters(EdpmState& s, const Dataset& d, Rng& rng) {
    const EdpmModel& M = *model_;
    const Layout& L = M.layout;
    const auto yd = static_cast<Eigen::Index>(L.y_dim());
    const auto md = static_cast<Eigen::Index>(L.m_dim());
    const auto vd = static_cast<Eigen::Index>(L.v_dim());
    const std::size_t q_n = L.x_dim();

    struct SubStats {
      RegressionStats v;
      std::vector<double> sum, sumsq;
      std::size_t n = 0;
    };
    std::vector<RegressionStats> ys, ms;
    std::vector<std::vector<SubStats>> subs(s.K());
    ys.reserve(s.K());
    ms.reserve(s.K());
    for (std::size_t l = 0; l < s.K(); ++l) {
      ys.emplace_back(yd);
      ms.emplace_back(md);
      for (std::size_t r = 0; r < s.clusters[l].subs.size(); ++r)
        subs[l].push_back(SubStats{RegressionStats(vd), std::vector<double>(q_n, 0.0), std::vector<double>(q_n, 0.0), 0});
    }

    DesignBuffer buf;
    for (std::size_t i = 0; i < d.n; ++i) {
      const Point p = point_of(d, i);
      const std::size_t l = s.y_label[i];
      L.fill_y_design(p.m, p.v, p.z, p.c, buf);
      ys[l].add(std::span<const double>(buf.data(), L.y_dim()), p.y);
      L.fill_m_design(p.v, p.z, p.c, buf);
      ms[l].add(std::span<const double>(buf.data(), L.m_dim()), p.m);
      SubStats& ss = subs[l][s.x_label[i]];
      if (L.has_v) {
        L.fill_v_design(p.z, p.c, buf);
        ss.v.add(std::span<const double>(buf.data(), L.v_dim()), p.v);
      }
      ++ss.n;
      for (std::size_t q = 0; q < q_n; ++q) {
        const double x = q == 0 ? static_cast<double>(p.z) : p.c[q - 1];
        ss.sum[q] += x;
        ss.sumsq[q] += x * x;
      }
    }

    const auto refresh = [&](const NigDistribution& prior, RegressionStats& st, RegressionParams& out) {
      try {
        out = sample_nig(nig_posterior(prior.prior(), std::move(st)), rng);
      } catch (const IllConditionedDesign&) {
        ++diag_.prior_fallbacks;
        prior.sample_into(out, rng);
      }
    };

    const NigPrior& cp = M.base.cont_marginal().prior();
    const double m0 = cp.mean[0], k0 = cp.precision(0, 0);
    const BetaPrior& bp = M.base.binary_prior();
    for (std::size_t l = 0; l < s.K(); ++l) {
      YCluster& cl = s.clusters[l];
      refresh(M.base.y_reg(), ys[l], cl.theta.y);
      refresh(M.base.m_reg(), ms[l], cl.theta.m);
      for (std::size_t r = 0; r < cl.subs.size(); ++r) {
        SubStats& ss = subs[l][r];
        XClusterParams& om = cl.subs[r].omega;
        if (L.has_v) {
          refresh(M.base.v_reg(), ss.v, om.v);
        } else {
          om.v.beta = Vec::Zero(vd);
          om.v.sigma_sq = 1.0;
        }
        om.prob.assign(q_n, 0.5);
        om.mu.assign(q_n, 0.0);
        om.tau_sq.assign(q_n, 1.0);
        const double n = static_cast<double>(ss.n);
        for (std::size_t q = 0; q < q_n; ++q) {
          if (L.x_binary(q)) {
            om.prob[q] = beta_draw(bp.a + ss.sum[q], bp.b + n - ss.sum[q], rng);
          } else {
            const double kn = k0 + n;
            const double mn = (k0 * m0 + ss.sum[q]) / kn;
            const double an = cp.shape + 0.5 * n;
            const double bn = cp.rate + 0.5 * std::max(0.0, ss.sumsq[q] + k0 * m0 * m0 - kn * mn * mn);
            om.tau_sq[q] = 1.0 / gamma_draw(an, bn, rng);
            om.mu[q] = mn + std::sqrt(om.tau_sq[q] / kn) * std_normal_draw(rng);
          }
        }
      }
    }
  }

  void sweep(EdpmState& s, Dataset& d, Rng& rng) {
    impute_missing(s, d, rng);
    update_allocations(s, d, rng);
    update_parameters(s, d, rng);
  }

 private:
  enum class Move : std::uint8_t { existing, new_sub, new_cluster };
  struct Candidate {
    Move kind;
    std::size_t a;
    std::size_t b;
  };

  const EdpmModel* model_;
  std::size_t m_aux_;
  SamplerDiagnostics diag_;
  std::vector<XClusterParams> aux_omega_;  // m_aux per existing cluster, cluster-major
  std::vector<YClusterParams> aux_theta_;
  std::vector<XClusterParams> aux_omega_new_;
  std::vector<double> log_w_;
  std::vector<Candidate> cand_;
};

inline void update_allocations(EdpmState& s, const Dataset& d, const EdpmModel& M, std::size_t m_aux, Rng& rng) {
  GibbsKernel(M, m_aux).update_allocations(s, d, rng);
}
inline void update_parameters(EdpmState& s, const Dataset& d, const EdpmModel& M, Rng& rng) {
  GibbsKernel(M, 1).update_parameters(s, d, rng);
}
inline void impute_missing(const EdpmState& s, Dataset& d, const EdpmModel& M, Rng& rng) {
  GibbsKernel(M, 1).impute_missing(s, d, rng);
}

inline PosteriorDraw snapshot(const EdpmState& s, const Dataset& d) { return PosteriorDraw{s, d.y, d.m, d.v, d.c}; }

/// Runs burn_in + keep * thin sweeps and keeps every thin-th post-burn-in state.
/// With `trace` set, writes one CSV line (sweep, K, joint_loglik) per sweep.
inline std::vector<PosteriorDraw> run_chain(const EdpmConfig& cfg, Dataset data, std::uint64_t seed,
                                            std::ostream* trace = nullptr, SamplerDiagnostics* diag = nullptr) {
  cfg.validate();
  if (data.n == 0) throw DataError("run_chain: empty dataset");
  const EdpmModel model(data.layout, cfg);
  GibbsKernel kernel(model, cfg.neal_m_aux);
  Rng rng(seed);
  EdpmState state = kernel.initial_state(data, rng, cfg.init_clusters);
  std::vector<PosteriorDraw> draws;
  draws.reserve(cfg.keep);
  const std::size_t total = cfg.burn_in + cfg.keep * cfg.thin;
  if (trace) *trace << "sweep,K,joint_loglik\n";
  for (std::size_t t = 0; t < total; ++t) {
    kernel.sweep(state, data, rng);
    if (trace) *trace << t << ',' << state.K() << ',' << joint_loglik(state, data, model) << '\n';
    if (t >= cfg.burn_in && (t - cfg.burn_in + 1) % cfg.thin == 0) draws.push_back(snapshot(state, data));
  }
  if (diag) *diag = kernel.diagnostics();
  return draws;
}

}  // namespace edpm
