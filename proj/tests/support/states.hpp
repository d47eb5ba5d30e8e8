#pragma once

// Hand-built posterior states on a two-covariate layout and a linear-space
// transcription of the mixture weights under the default priors.

#include "edpm/model.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <initializer_list>
#include <numbers>
#include <utility>
#include <vector>

namespace edpm::testing {

// Covariates: c1 binary, c2 continuous. Baseline block X = (z, c1, c2).
inline Layout test_layout() {
  Layout L;
  L.p_c = 2;
  L.c_binary = {true, false};
  return L;
}

inline Vec vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index k = 0;
  for (double x : xs) v[k++] = x;
  return v;
}

inline YClusterParams theta(Vec by, double sy, Vec bm, double sm) {
  YClusterParams t;
  t.y.beta = std::move(by);
  t.y.sigma_sq = sy;
  t.m.beta = std::move(bm);
  t.m.sigma_sq = sm;
  return t;
}

inline XClusterParams omega(Vec bv, double sv, double pz, double pc1, double mu2, double tau2) {
  XClusterParams w;
  w.v.beta = std::move(bv);
  w.v.sigma_sq = sv;
  w.prob = {pz, pc1, 0.5};
  w.mu = {0.0, 0.0, mu2};
  w.tau_sq = {1.0, 1.0, tau2};
  return w;
}

inline void add_cluster(EdpmState& s, YClusterParams th, std::vector<std::pair<std::size_t, XClusterParams>> subs) {
  YCluster cl;
  cl.theta = std::move(th);
  const std::size_t l = s.clusters.size();
  for (std::size_t r = 0; r < subs.size(); ++r) {
    SubCluster sc;
    sc.count = subs[r].first;
    sc.omega = std::move(subs[r].second);
    cl.count += sc.count;
    for (std::size_t k = 0; k < sc.count; ++k) {
      s.y_label.push_back(l);
      s.x_label.push_back(r);
    }
    cl.subs.push_back(std::move(sc));
  }
  s.clusters.push_back(std::move(cl));
}

inline EdpmState two_cluster_state() {
  EdpmState s;
  add_cluster(s, theta(vec({0.3, 0.8, -0.4, 1.1, 0.2, -0.6}), 0.7, vec({-0.2, 0.5, 0.9, -0.3, 0.4}), 1.3),
              {{3, omega(vec({0.1, 0.7, -0.2, 0.3}), 0.9, 0.4, 0.7, -0.5, 1.4)},
               {2, omega(vec({-0.6, 1.2, 0.5, -0.1}), 0.5, 0.8, 0.2, 0.9, 0.6)}});
  add_cluster(s, theta(vec({-1.0, 0.1, 0.6, 0.4, -0.9, 0.3}), 1.8, vec({0.7, -0.4, 0.2, 0.6, -0.5}), 0.6),
              {{4, omega(vec({0.9, -0.3, 0.1, 0.8}), 1.6, 0.3, 0.5, 0.2, 2.1)}});
  return s;
}

inline EdpmState three_cluster_state() {
  EdpmState s = two_cluster_state();
  add_cluster(s, theta(vec({0.5, -0.7, 0.2, -1.2, 0.1, 0.8}), 0.4, vec({0.1, 0.3, -0.8, 0.2, 0.9}), 0.9),
              {{1, omega(vec({0.2, 0.4, -0.7, -0.5}), 0.7, 0.6, 0.1, -1.1, 0.8)},
               {5, omega(vec({-0.4, 0.1, 0.3, 0.6}), 1.1, 0.5, 0.9, 0.4, 1.2)},
               {2, omega(vec({1.1, -0.8, 0.6, 0.2}), 0.3, 0.2, 0.4, -0.3, 0.5)}});
  return s;
}

inline EdpmModel test_model(double alpha_theta = 1.3, double alpha_omega = 0.7) {
  EdpmConfig cfg;
  cfg.alpha_theta = alpha_theta;
  cfg.alpha_omega = alpha_omega;
  return EdpmModel(test_layout(), cfg);
}

// Linear-space oracle with the default priors: regressions NIG(0, I/10, 2, 1),
// binary marginals Beta(1, 1), continuous marginals NIG(0, 1, 2, 1).

inline double npdf(double x, double mu, double var) {
  return std::exp(-0.5 * (x - mu) * (x - mu) / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

inline double tpdf(double x, double dof, double scale) {
  return boost::math::pdf(boost::math::students_t_distribution<double>(dof), x / scale) / scale;
}

inline double dot(const Vec& b, std::initializer_list<double> xs) {
  double s = 0.0;
  Eigen::Index k = 0;
  for (double x : xs) s += b[k++] * x;
  return s;
}

struct Oracle {
  double at, aw;
  double fm(const YClusterParams& t, double m, double v, int z, double c1, double c2) const {
    return npdf(m, dot(t.m.beta, {1.0, v, double(z), c1, c2}), t.m.sigma_sq);
  }
  double fv(const XClusterParams& w, double v, int z, double c1, double c2) const {
    return npdf(v, dot(w.v.beta, {1.0, double(z), c1, c2}), w.v.sigma_sq);
  }
  double fx(const XClusterParams& w, int z, double c1, double c2) const {
    return (z ? w.prob[0] : 1 - w.prob[0]) * (c1 == 1.0 ? w.prob[1] : 1 - w.prob[1]) * npdf(c2, w.mu[2], w.tau_sq[2]);
  }
  // Regression predictive: t with 4 dof, scale sqrt(rate/shape * (1 + 10 |x|^2)).
  double f0_reg(double resp, std::initializer_list<double> x) const {
    double q = 0.0;
    for (double e : x) q += e * e;
    return tpdf(resp, 4.0, std::sqrt(0.5 * (1.0 + 10.0 * q)));
  }
  double f0m(double m, double v, int z, double c1, double c2) const { return f0_reg(m, {1.0, v, double(z), c1, c2}); }
  double f0v(double v, int z, double c1, double c2) const { return f0_reg(v, {1.0, double(z), c1, c2}); }
  double f0x(double c2) const { return 0.25 * tpdf(c2, 4.0, 1.0); }

  std::vector<double> lambda_y(const EdpmState& s, double m, double v, int z, double c1, double c2) const {
    const double n = double(s.n());
    std::vector<double> out;
    for (const auto& cl : s.clusters) {
      const double nl = double(cl.count);
      double bracket = aw / (aw + nl) * f0v(v, z, c1, c2) * f0x(c2);
      for (const auto& sub : cl.subs)
        bracket += double(sub.count) / (aw + nl) * fv(sub.omega, v, z, c1, c2) * fx(sub.omega, z, c1, c2);
      out.push_back(nl / (at + n) * fm(cl.theta, m, v, z, c1, c2) * bracket);
    }
    out.push_back(at / (at + n) * f0m(m, v, z, c1, c2) * f0v(v, z, c1, c2) * f0x(c2));
    return out;
  }
  std::vector<double> mediator(const EdpmState& s, double v, int z, double c1, double c2) const {
    const double n = double(s.n());
    std::vector<double> out;
    for (const auto& cl : s.clusters) {
      const double nl = double(cl.count);
      double bracket = aw / (aw + nl) * f0v(v, z, c1, c2) * f0x(c2);
      for (const auto& sub : cl.subs)
        bracket += double(sub.count) / (aw + nl) * fv(sub.omega, v, z, c1, c2) * fx(sub.omega, z, c1, c2);
      out.push_back(nl / (at + n) * bracket);
    }
    out.push_back(at / (at + n) * f0v(v, z, c1, c2) * f0x(c2));
    return out;
  }
  std::vector<double> lambda_v(const EdpmState& s, int z, double c1, double c2) const {
    const double n = double(s.n());
    std::vector<double> out;
    double new_mass = at / (at + n);
    for (const auto& cl : s.clusters) {
      const double nl = double(cl.count);
      new_mass += nl / (at + n) * aw / (aw + nl);
      for (const auto& sub : cl.subs) out.push_back(nl / (at + n) * double(sub.count) / (aw + nl) * fx(sub.omega, z, c1, c2));
    }
    out.push_back(new_mass * f0x(c2));
    return out;
  }
};

}  // namespace edpm::testing
