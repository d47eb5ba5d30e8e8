#pragma once

// Enriched Dirichlet process mixture state: a nested partition (outcome
// clusters, each holding confounder subclusters), the local GLM parameters of
// every cluster, and the marginal (Polya-urn) mixture weights that the sampler
// and the G-computation share.

#include "edpm/data.hpp"
#include "edpm/prob_core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace edpm {

inline constexpr std::size_t kMaxDesign = 64;
using DesignBuffer = std::array<double, kMaxDesign>;

/// Outcome-cluster parameters: outcome and mediator regressions.
struct YClusterParams {
  RegressionParams y;
  RegressionParams m;
};

/// Confounder-subcluster parameters: V regression plus independent marginals
/// for X = (Z, C'). `prob` is used for binary entries, (mu, tau_sq) for
/// continuous ones.
struct XClusterParams {
  RegressionParams v;
  std::vector<double> prob;
  std::vector<double> mu;
  std::vector<double> tau_sq;
};

struct PriorConfig {
  double coef_var = 10.0;
  double reg_shape = 2.0;
  double reg_rate = 1.0;
  BetaPrior binary{1.0, 1.0};
  double cont_mean = 0.0;
  double cont_precision = 1.0;
  double cont_shape = 2.0;
  double cont_rate = 1.0;
};

struct EdpmConfig {
  double alpha_theta = 1.0;
  double alpha_omega = 1.0;
  PriorConfig priors;
  std::size_t neal_m_aux = 3;
  std::size_t burn_in = 1000;
  std::size_t keep = 100;
  std::size_t thin = 10;
  /// Outcome clusters in the starting state (subjects dealt at random).
  std::size_t init_clusters = 10;

  void validate() const {
    if (!(alpha_theta > 0.0) || !(alpha_omega > 0.0))
      throw std::invalid_argument("EdpmConfig: concentration parameters must be positive");
    if (neal_m_aux < 1) throw std::invalid_argument("EdpmConfig: neal_m_aux must be >= 1");
    if (keep * thin == 0) throw std::invalid_argument("EdpmConfig: keep and thin must be >= 1");
    if (init_clusters < 1) throw std::invalid_argument("EdpmConfig: init_clusters must be >= 1");
  }
};

/// A fully observed point (after imputation), on the standardized scale.
struct Point {
  double y = 0.0;
  double m = 0.0;
  double v = 0.0;
  int z = 0;
  std::span<const double> c;
};

inline Point point_of(const Dataset& d, std::size_t i) { return Point{d.y[i], d.m[i], d.v[i], d.z[i], d.c_row(i)}; }

/// G0: product of the conjugate priors for every local parameter.
class BaseMeasure {
 public:
  BaseMeasure() = default;
  BaseMeasure(Layout layout, const PriorConfig& cfg)
      : layout_(std::move(layout)),
        y_reg_(NigPrior::isotropic(static_cast<Eigen::Index>(layout_.y_dim()), cfg.coef_var, cfg.reg_shape, cfg.reg_rate)),
        m_reg_(NigPrior::isotropic(static_cast<Eigen::Index>(layout_.m_dim()), cfg.coef_var, cfg.reg_shape, cfg.reg_rate)),
        v_reg_(NigPrior::isotropic(static_cast<Eigen::Index>(layout_.v_dim()), cfg.coef_var, cfg.reg_shape, cfg.reg_rate)),
        cont_(NigPrior{Vec::Constant(1, cfg.cont_mean), Mat::Constant(1, 1, cfg.cont_precision), cfg.cont_shape,
                       cfg.cont_rate}),
        binary_(cfg.binary) {
    if (layout_.y_dim() > kMaxDesign) throw std::invalid_argument("BaseMeasure: too many covariates");
    if (layout_.c_binary.size() != layout_.p_c) throw std::invalid_argument("BaseMeasure: layout inconsistent");
    if (!(binary_.a > 0.0 && binary_.b > 0.0)) throw std::invalid_argument("BaseMeasure: beta prior must be positive");
    const StudentT t = cont_.predictive(std::array<double, 1>{1.0});
    cont_pred_ = t;
    log_bin_pred1_ = std::log(binary_.a / (binary_.a + binary_.b));
    log_bin_pred0_ = std::log(binary_.b / (binary_.a + binary_.b));
  }

  const Layout& layout() const { return layout_; }
  const NigDistribution& y_reg() const { return y_reg_; }
  const NigDistribution& m_reg() const { return m_reg_; }
  const NigDistribution& v_reg() const { return v_reg_; }
  const NigDistribution& cont_marginal() const { return cont_; }
  const BetaPrior& binary_prior() const { return binary_; }

  YClusterParams draw_theta(Rng& rng) const {
    YClusterParams t;
    draw_theta_into(t, rng);
    return t;
  }

  XClusterParams draw_omega(Rng& rng) const {
    XClusterParams w;
    draw_omega_into(w, rng);
    return w;
  }

  void draw_theta_into(YClusterParams& t, Rng& rng) const {
    y_reg_.sample_into(t.y, rng);
    m_reg_.sample_into(t.m, rng);
  }

  void draw_omega_into(XClusterParams& w, Rng& rng) const {
    if (layout_.has_v) {
      v_reg_.sample_into(w.v, rng);
    } else {
      w.v.beta = Vec::Zero(static_cast<Eigen::Index>(layout_.v_dim()));
      w.v.sigma_sq = 1.0;
    }
    const std::size_t q_n = layout_.x_dim();
    w.prob.assign(q_n, 0.5);
    w.mu.assign(q_n, 0.0);
    w.tau_sq.assign(q_n, 1.0);
    const double m0 = cont_.prior().mean[0];
    const double k0 = cont_.prior().precision(0, 0);
    for (std::size_t q = 0; q < q_n; ++q) {
      if (layout_.x_binary(q)) {
        w.prob[q] = beta_draw(binary_.a, binary_.b, rng);
      } else {
        const double tau_sq = 1.0 / gamma_draw(cont_.prior().shape, cont_.prior().rate, rng);
        w.tau_sq[q] = tau_sq;
        w.mu[q] = m0 + std::sqrt(tau_sq / k0) * std_normal_draw(rng);
      }
    }
  }

  /// log f0(z, c): product of the prior-predictive marginals.
  double log_f0_x(int z, std::span<const double> c) const {
    double s = z == 1 ? log_bin_pred1_ : log_bin_pred0_;
    for (std::size_t j = 0; j < layout_.p_c; ++j) {
      if (layout_.c_binary[j])
        s += c[j] == 1.0 ? log_bin_pred1_ : log_bin_pred0_;
      else
        s += cont_pred_.log_pdf(c[j]);
    }
    return s;
  }
  /// log f0(x_q) of a single baseline marginal.
  double log_f0_x_single(std::size_t q, double value) const {
    if (layout_.x_binary(q)) return value == 1.0 ? log_bin_pred1_ : log_bin_pred0_;
    return cont_pred_.log_pdf(value);
  }

  StudentT f0_v(int z, std::span<const double> c) const {
    DesignBuffer buf;
    layout_.fill_v_design(z, c, buf);
    return v_reg_.predictive(std::span<const double>(buf.data(), layout_.v_dim()));
  }
  StudentT f0_m(double v, int z, std::span<const double> c) const {
    DesignBuffer buf;
    layout_.fill_m_design(v, z, c, buf);
    return m_reg_.predictive(std::span<const double>(buf.data(), layout_.m_dim()));
  }
  /// E0[y | m, v, z, c]: the regression surface at the prior mean coefficients.
  double e0_y(double m, double v, int z, std::span<const double> c) const {
    DesignBuffer buf;
    layout_.fill_y_design(m, v, z, c, buf);
    double s = 0.0;
    for (std::size_t j = 0; j < layout_.y_dim(); ++j) s += y_reg_.prior().mean[static_cast<Eigen::Index>(j)] * buf[j];
    return s;
  }
  StudentT f0_x_continuous() const { return cont_pred_; }

 private:
  Layout layout_;
  NigDistribution y_reg_, m_reg_, v_reg_, cont_;
  BetaPrior binary_;
  StudentT cont_pred_;
  double log_bin_pred1_ = 0.0;
  double log_bin_pred0_ = 0.0;
};

/// Immutable model description shared by all chains.
struct EdpmModel {
  Layout layout;
  double alpha_theta = 1.0;
  double alpha_omega = 1.0;
  BaseMeasure base;

  EdpmModel() = default;
  EdpmModel(const Layout& l, const EdpmConfig& cfg)
      : layout(l), alpha_theta(cfg.alpha_theta), alpha_omega(cfg.alpha_omega), base(l, cfg.priors) {
    cfg.validate();
  }
};

// ---------------------------------------------------------------------------
// Local kernels

inline double y_mean(const Layout& L, const RegressionParams& p, double m, double v, int z, std::span<const double> c) {
  const double* b = p.beta.data();
  double s = b[0] + b[1] * m;
  std::size_t k = 2;
  if (L.has_v) s += b[k++] * v;
  s += b[k++] * static_cast<double>(z);
  for (double cj : c) s += b[k++] * cj;
  return s;
}
inline double m_mean(const Layout& L, const RegressionParams& p, double v, int z, std::span<const double> c) {
  const double* b = p.beta.data();
  double s = b[0];
  std::size_t k = 1;
  if (L.has_v) s += b[k++] * v;
  s += b[k++] * static_cast<double>(z);
  for (double cj : c) s += b[k++] * cj;
  return s;
}
inline double v_mean(const RegressionParams& p, int z, std::span<const double> c) {
  const double* b = p.beta.data();
  double s = b[0] + b[1] * static_cast<double>(z);
  std::size_t k = 2;
  for (double cj : c) s += b[k++] * cj;
  return s;
}

inline double loglik_y(const Layout& L, const YClusterParams& t, const Point& p) {
  return normal_log_pdf(p.y, y_mean(L, t.y, p.m, p.v, p.z, p.c), t.y.sigma_sq);
}
inline double loglik_m(const Layout& L, const YClusterParams& t, const Point& p) {
  return normal_log_pdf(p.m, m_mean(L, t.m, p.v, p.z, p.c), t.m.sigma_sq);
}
inline double loglik_v(const Layout& L, const XClusterParams& w, const Point& p) {
  if (!L.has_v) return 0.0;
  return normal_log_pdf(p.v, v_mean(w.v, p.z, p.c), w.v.sigma_sq);
}
inline double loglik_x(const Layout& L, const XClusterParams& w, int z, std::span<const double> c) {
  double s = z == 1 ? std::log(w.prob[0]) : std::log1p(-w.prob[0]);
  for (std::size_t j = 0; j < L.p_c; ++j) {
    const std::size_t q = j + 1;
    if (L.c_binary[j])
      s += c[j] == 1.0 ? std::log(w.prob[q]) : std::log1p(-w.prob[q]);
    else
      s += normal_log_pdf(c[j], w.mu[q], w.tau_sq[q]);
  }
  return s;
}
inline double loglik_x(const Layout& L, const XClusterParams& w, const Point& p) { return loglik_x(L, w, p.z, p.c); }

namespace detail {
inline Point require_complete(const ObservedRecord& r, bool need_y, bool need_m, bool need_v,
                              std::vector<double>& c_store) {
  if ((need_y && !r.y) || (need_m && !r.m) || (need_v && !r.v))
    throw std::invalid_argument("loglik: required field is missing; impute before evaluating");
  c_store.resize(r.c.size());
  for (std::size_t j = 0; j < r.c.size(); ++j) {
    if (!r.c[j]) throw std::invalid_argument("loglik: covariate is missing; impute before evaluating");
    c_store[j] = *r.c[j];
  }
  return Point{r.y.value_or(0.0), r.m.value_or(0.0), r.v.value_or(0.0), r.z, c_store};
}
}  // namespace detail

inline double loglik_y(const Layout& L, const YClusterParams& t, const ObservedRecord& r) {
  std::vector<double> c;
  return loglik_y(L, t, detail::require_complete(r, true, true, L.has_v, c));
}
inline double loglik_m(const Layout& L, const YClusterParams& t, const ObservedRecord& r) {
  std::vector<double> c;
  return loglik_m(L, t, detail::require_complete(r, false, true, L.has_v, c));
}
inline double loglik_v(const Layout& L, const XClusterParams& w, const ObservedRecord& r) {
  std::vector<double> c;
  return loglik_v(L, w, detail::require_complete(r, false, false, L.has_v, c));
}
inline double loglik_x(const Layout& L, const XClusterParams& w, const ObservedRecord& r) {
  std::vector<double> c;
  return loglik_x(L, w, detail::require_complete(r, false, false, false, c));
}

// ---------------------------------------------------------------------------
// Nested partition

struct SubCluster {
  std::size_t count = 0;
  XClusterParams omega;
};

struct YCluster {
  std::size_t count = 0;
  YClusterParams theta;
  std::vector<SubCluster> subs;
};

struct EdpmState {
  std::vector<YCluster> clusters;
  std::vector<std::size_t> y_label;
  std::vector<std::size_t> x_label;

  std::size_t n() const { return y_label.size(); }
  std::size_t K() const { return clusters.size(); }
  std::size_t total_subclusters() const {
    std::size_t s = 0;
    for (const auto& c : clusters) s += c.subs.size();
    return s;
  }

  /// Recomputes every count from the raw labels and checks it against the
  /// cached counts, label ranges, non-emptiness and positive variances.
  void validate() const {
    if (x_label.size() != y_label.size()) throw std::logic_error("EdpmState: label arrays differ in length");
    std::vector<std::vector<std::size_t>> counts(clusters.size());
    for (std::size_t l = 0; l < clusters.size(); ++l) counts[l].assign(clusters[l].subs.size(), 0);
    for (std::size_t i = 0; i < n(); ++i) {
      if (y_label[i] >= clusters.size() || x_label[i] >= clusters[y_label[i]].subs.size())
        throw std::logic_error("EdpmState: label out of range");
      ++counts[y_label[i]][x_label[i]];
    }
    std::size_t total = 0;
    for (std::size_t l = 0; l < clusters.size(); ++l) {
      const auto& cl = clusters[l];
      std::size_t nl = 0;
      if (cl.subs.empty()) throw std::logic_error("EdpmState: cluster without subclusters");
      for (std::size_t r = 0; r < cl.subs.size(); ++r) {
        if (counts[l][r] != cl.subs[r].count) throw std::logic_error("EdpmState: subcluster count mismatch");
        if (counts[l][r] == 0) throw std::logic_error("EdpmState: empty subcluster");
        if (!(cl.subs[r].omega.v.sigma_sq > 0.0)) throw std::logic_error("EdpmState: non-positive variance");
        nl += counts[l][r];
      }
      if (nl != cl.count) throw std::logic_error("EdpmState: cluster count mismatch");
      if (!(cl.theta.y.sigma_sq > 0.0) || !(cl.theta.m.sigma_sq > 0.0))
        throw std::logic_error("EdpmState: non-positive variance");
      total += nl;
    }
    if (total != n()) throw std::logic_error("EdpmState: counts do not sum to n");
  }
};

/// One retained Gibbs state: partition, parameters and the imputed cells.
struct PosteriorDraw {
  EdpmState state;
  std::vector<double> y, m, v, c;
};

// ---------------------------------------------------------------------------
// Mixture weights (log scale, unnormalized; last entry is the new component)

struct LogWeights {
  std::vector<double> log_w;
  double log_norm = 0.0;

  std::vector<double> normalized() const {
    std::vector<double> p(log_w.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(log_w[i] - log_norm);
    return p;
  }
};

inline LogWeights finish_weights(std::vector<double> log_w) {
  LogWeights w{std::move(log_w), 0.0};
  w.log_norm = log_sum_exp(w.log_w);
  if (!std::isfinite(w.log_norm)) throw std::runtime_error("mixture weights: every component vanished");
  return w;
}

/// log of the subcluster bracket of an outcome cluster:
///   alpha_w/(alpha_w+n_l) f0(v,z,c) + sum_r n_{r|l}/(alpha_w+n_l) f(v,z,c; omega_{r|l})
inline double log_cluster_bracket(const EdpmModel& M, const YCluster& cl, const Point& p, double log_f0_vx) {
  const double denom = std::log(M.alpha_omega + static_cast<double>(cl.count));
  double mx = std::log(M.alpha_omega) - denom + log_f0_vx;
  thread_local std::vector<double> terms;
  terms.clear();
  terms.push_back(mx);
  for (const auto& s : cl.subs) {
    const double t = std::log(static_cast<double>(s.count)) - denom + loglik_v(M.layout, s.omega, p) +
                     loglik_x(M.layout, s.omega, p);
    terms.push_back(t);
  }
  return log_sum_exp(terms);
}

inline double log_f0_vx(const EdpmModel& M, const Point& p) {
  double s = M.base.log_f0_x(p.z, p.c);
  if (M.layout.has_v) s += M.base.f0_v(p.z, p.c).log_pdf(p.v);
  return s;
}

/// Weights of the outcome regression mixture E[y | m, v, z, c] (length K+1).
inline LogWeights lambda_y_weights(double m, double v, int z, std::span<const double> c, const EdpmState& s,
                                   const EdpmModel& M) {
  const Point p{0.0, m, v, z, c};
  const double n = static_cast<double>(s.n());
  const double log_denom = std::log(M.alpha_theta + n);
  const double f0vx = log_f0_vx(M, p);
  std::vector<double> lw;
  lw.reserve(s.K() + 1);
  for (const auto& cl : s.clusters) {
    lw.push_back(std::log(static_cast<double>(cl.count)) - log_denom + loglik_m(M.layout, cl.theta, p) +
                 log_cluster_bracket(M, cl, p, f0vx));
  }
  lw.push_back(std::log(M.alpha_theta) - log_denom + M.base.f0_m(v, z, c).log_pdf(m) + f0vx);
  return finish_weights(std::move(lw));
}

/// Mediator mixture P(m | v, z, c): the outcome weights with the mediator
/// factor moved into the sampling kernel (length K+1).
inline LogWeights mediator_mixture_weights(double v, int z, std::span<const double> c, const EdpmState& s,
                                           const EdpmModel& M) {
  const Point p{0.0, 0.0, v, z, c};
  const double n = static_cast<double>(s.n());
  const double log_denom = std::log(M.alpha_theta + n);
  const double f0vx = log_f0_vx(M, p);
  std::vector<double> lw;
  lw.reserve(s.K() + 1);
  for (const auto& cl : s.clusters)
    lw.push_back(std::log(static_cast<double>(cl.count)) - log_denom + log_cluster_bracket(M, cl, p, f0vx));
  lw.push_back(std::log(M.alpha_theta) - log_denom + f0vx);
  return finish_weights(std::move(lw));
}

struct SubclusterWeights {
  LogWeights weights;                                   // flattened (l, r) entries, then the new component
  std::vector<std::pair<std::size_t, std::size_t>> index;  // (l, r) for each non-new entry
};

/// Weights of the confounder mixture P(v | z, c) over all subclusters plus the
/// prior-predictive component.
inline SubclusterWeights lambda_v_weights(int z, std::span<const double> c, const EdpmState& s, const EdpmModel& M) {
  const double n = static_cast<double>(s.n());
  const double log_denom = std::log(M.alpha_theta + n);
  SubclusterWeights out;
  std::vector<double> lw;
  double new_mass = M.alpha_theta / (M.alpha_theta + n);
  for (std::size_t l = 0; l < s.K(); ++l) {
    const auto& cl = s.clusters[l];
    const double nl = static_cast<double>(cl.count);
    new_mass += nl / (M.alpha_theta + n) * M.alpha_omega / (M.alpha_omega + nl);
    for (std::size_t r = 0; r < cl.subs.size(); ++r) {
      lw.push_back(std::log(nl) - log_denom + std::log(static_cast<double>(cl.subs[r].count)) -
                   std::log(M.alpha_omega + nl) + loglik_x(M.layout, cl.subs[r].omega, z, c));
      out.index.emplace_back(l, r);
    }
  }
  lw.push_back(std::log(new_mass) + M.base.log_f0_x(z, c));
  out.weights = finish_weights(std::move(lw));
  return out;
}

/// Sum of all local log-likelihoods plus the log prior mass of the nested
/// partition under the enriched Polya urn. Used for trace monitoring.
inline double joint_loglik(const EdpmState& s, const Dataset& d, const EdpmModel& M) {
  double ll = 0.0;
  for (std::size_t i = 0; i < s.n(); ++i) {
    const Point p = point_of(d, i);
    const auto& cl = s.clusters[s.y_label[i]];
    const auto& sub = cl.subs[s.x_label[i]];
    ll += loglik_y(M.layout, cl.theta, p) + loglik_m(M.layout, cl.theta, p) + loglik_v(M.layout, sub.omega, p) +
          loglik_x(M.layout, sub.omega, p);
  }
  const double n = static_cast<double>(s.n());
  double prior = static_cast<double>(s.K()) * std::log(M.alpha_theta) + std::lgamma(M.alpha_theta) -
                 std::lgamma(M.alpha_theta + n);
  for (const auto& cl : s.clusters) {
    const double nl = static_cast<double>(cl.count);
    prior += std::lgamma(nl);
    prior += static_cast<double>(cl.subs.size()) * std::log(M.alpha_omega) + std::lgamma(M.alpha_omega) -
             std::lgamma(M.alpha_omega + nl);
    for (const auto& sub : cl.subs) prior += std::lgamma(static_cast<double>(sub.count));
  }
  return ll + prior;
}

}  // namespace edpm
