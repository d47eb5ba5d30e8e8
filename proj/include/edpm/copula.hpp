#pragma once

// Gaussian-copula link between the factual and the counterfactual
// post-treatment confounder, and the mixture CDF machinery it needs.

#include "edpm/prob_core.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace edpm {

/// Prior (or fixed value) for the cross-world correlation rho.
struct SensitivitySpec {
  enum class Kind { fixed, uniform, triangular };
  Kind kind = Kind::fixed;
  double value = 0.0;        // fixed
  double lo = 0.0, hi = 1.0;  // uniform
  double a = 0.0, c = 1.0, b = 1.0;  // triangular(a, mode c, b)

  static SensitivitySpec fixed(double v) { return {Kind::fixed, v}; }
  static SensitivitySpec uniform(double lo, double hi) {
    SensitivitySpec s;
    s.kind = Kind::uniform;
    s.lo = lo;
    s.hi = hi;
    return s;
  }
  static SensitivitySpec triangular(double a, double c, double b) {
    SensitivitySpec s;
    s.kind = Kind::triangular;
    s.a = a;
    s.c = c;
    s.b = b;
    return s;
  }

  void validate() const {
    switch (kind) {
      case Kind::fixed:
        if (!(std::fabs(value) < 1.0)) throw std::invalid_argument("rho: fixed value must lie in (-1,1)");
        break;
      case Kind::uniform:
        if (!(lo >= -1.0 && hi <= 1.0 && lo < hi)) throw std::invalid_argument("rho: need -1 <= lo < hi <= 1");
        break;
      case Kind::triangular:
        if (!(a >= -1.0 && b <= 1.0 && a <= c && c <= b && a < b))
          throw std::invalid_argument("rho: need -1 <= a <= c <= b <= 1 with a < b");
        break;
    }
  }

  /// Text form used by the CLI: "fixed:0.5", "uniform:-1:0", "triangular:0:1:1".
  static SensitivitySpec parse(const std::string& text) {
    std::vector<double> nums;
    std::string head;
    std::size_t pos = text.find(':');
    head = text.substr(0, pos);
    while (pos != std::string::npos) {
      const std::size_t next = text.find(':', pos + 1);
      const std::string tok = text.substr(pos + 1, next == std::string::npos ? std::string::npos : next - pos - 1);
      try {
        std::size_t used = 0;
        nums.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw std::invalid_argument("rho spec '" + text + "': bad number '" + tok + "'");
      }
      pos = next;
    }
    SensitivitySpec s;
    if (head == "fixed" && nums.size() == 1) {
      s = fixed(nums[0]);
    } else if (head == "uniform" && nums.size() == 2) {
      s = uniform(nums[0], nums[1]);
    } else if (head == "triangular" && nums.size() == 3) {
      s = triangular(nums[0], nums[1], nums[2]);
    } else {
      throw std::invalid_argument("rho spec '" + text + "': expected fixed:v, uniform:lo:hi or triangular:a:c:b");
    }
    s.validate();
    return s;
  }

  std::string to_string() const {
    const auto f = [](double x) {
      std::string s = std::to_string(x);
      s.erase(s.find_last_not_of('0') + 1);
      if (!s.empty() && s.back() == '.') s.pop_back();
      return s;
    };
    switch (kind) {
      case Kind::fixed: return "fixed:" + f(value);
      case Kind::uniform: return "uniform:" + f(lo) + ":" + f(hi);
      case Kind::triangular: return "triangular:" + f(a) + ":" + f(c) + ":" + f(b);
    }
    return {};
  }
};

/// Draws rho from its prior. Draws landing on +-1 (possible at closed
/// support ends) are redrawn so the copula stays non-degenerate.
inline double draw_rho(const SensitivitySpec& s, Rng& rng) {
  for (;;) {
    double r = 0.0;
    switch (s.kind) {
      case SensitivitySpec::Kind::fixed:
        return s.value;
      case SensitivitySpec::Kind::uniform:
        r = s.lo + (s.hi - s.lo) * uniform_draw(rng);
        break;
      case SensitivitySpec::Kind::triangular: {
        const double u = uniform_draw(rng);
        const double width = s.b - s.a;
        const double split = (s.c - s.a) / width;
        r = u < split ? s.a + std::sqrt(u * width * (s.c - s.a)) : s.b - std::sqrt((1.0 - u) * width * (s.b - s.c));
        break;
      }
    }
    if (std::fabs(r) < 1.0) return r;
  }
}

/// Finite mixture of normals plus an optional Student-t component (the
/// prior-predictive part of the confounder mixture).
struct MixtureCdf {
  std::vector<double> weight;
  std::vector<double> mean;
  std::vector<double> sd;
  double t_weight = 0.0;
  StudentT t;

  void add_normal(double w, double mu, double var) {
    weight.push_back(w);
    mean.push_back(mu);
    sd.push_back(std::sqrt(var));
  }

  void validate() const {
    double total = t_weight;
    for (std::size_t k = 0; k < weight.size(); ++k) {
      if (!(weight[k] >= 0.0) || !(sd[k] > 0.0)) throw std::invalid_argument("MixtureCdf: bad component");
      total += weight[k];
    }
    if (t_weight > 0.0 && !(t.scale > 0.0 && t.dof > 0.0)) throw std::invalid_argument("MixtureCdf: bad t component");
    if (std::fabs(total - 1.0) > 1e-9) throw std::invalid_argument("MixtureCdf: weights must sum to 1");
  }

  double eval(double v) const {
    double f = 0.0;
    for (std::size_t k = 0; k < weight.size(); ++k) f += weight[k] * std_normal_cdf((v - mean[k]) / sd[k]);
    if (t_weight > 0.0) f += t_weight * t.cdf(v);
    return std::clamp(f, 0.0, 1.0);
  }

  /// Weighted centre used to start bracketing (the t component contributes its location).
  double centre() const {
    double s = t_weight * t.location;
    for (std::size_t k = 0; k < weight.size(); ++k) s += weight[k] * mean[k];
    return s;
  }
  double typical_scale() const {
    double s = t_weight > 0.0 ? t.scale : 0.0;
    for (double x : sd) s = std::max(s, x);
    return s > 0.0 ? s : 1.0;
  }

  double sample(Rng& rng) const {
    double u = uniform_draw(rng);
    for (std::size_t k = 0; k < weight.size(); ++k) {
      u -= weight[k];
      if (u <= 0.0) return mean[k] + sd[k] * std_normal_draw(rng);
    }
    if (t_weight > 0.0) return t.location + t.scale * std::student_t_distribution<double>(t.dof)(rng);
    return mean.back() + sd.back() * std_normal_draw(rng);
  }
};

inline double mixture_cdf_eval(const MixtureCdf& cdf, double v) { return cdf.eval(v); }

class InversionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Solves F(v) = u by doubling a bracket outward from the mixture centre and
/// bisecting until |F(v) - u| < eps_tol.
inline double invert_mixture_cdf(const MixtureCdf& cdf, double u, double eps_tol = 1e-8) {
  if (!(u > 0.0 && u < 1.0)) throw std::domain_error("invert_mixture_cdf: u must lie in (0,1)");
  constexpr int max_doublings = 60;
  constexpr int max_evals = 200;
  const double c0 = cdf.centre();
  double step = cdf.typical_scale();
  double lo = c0, hi = c0;
  double f_lo = cdf.eval(lo);
  double f_hi = f_lo;
  int evals = 1;
  if (std::fabs(f_lo - u) < eps_tol) return c0;
  int doublings = 0;
  while (f_lo > u) {
    if (++doublings > max_doublings) throw InversionError("invert_mixture_cdf: lower bracket did not converge");
    hi = lo;
    f_hi = f_lo;
    lo = c0 - step;
    step *= 2.0;
    f_lo = cdf.eval(lo);
    ++evals;
  }
  while (f_hi < u) {
    if (++doublings > max_doublings) throw InversionError("invert_mixture_cdf: upper bracket did not converge");
    lo = hi;
    f_lo = f_hi;
    hi = c0 + step;
    step *= 2.0;
    f_hi = cdf.eval(hi);
    ++evals;
  }
  double mid = 0.5 * (lo + hi);
  while (evals < max_evals) {
    mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) return mid;  // bracket exhausted at double precision
    const double fm = cdf.eval(mid);
    ++evals;
    if (std::fabs(fm - u) < eps_tol) return mid;
    if (fm < u)
      lo = mid;
    else
      hi = mid;
  }
  return mid;
}

inline constexpr double kCopulaClamp = 1e-12;

/// Draws the counterfactual v' given the factual v: u ~ N(rho * Phi^{-1}(F(v)), 1 - rho^2),
/// then v' = F'^{-1}(Phi(u)). Probabilities are clamped to [1e-12, 1 - 1e-12];
/// `clamp_count` (optional) is incremented whenever a clamp binds.
inline double conditional_copula_draw(double v_observed, const MixtureCdf& cdf_same, const MixtureCdf& cdf_counter,
                                      double rho, double eps_tol, Rng& rng, std::size_t* clamp_count = nullptr) {
  if (!(std::fabs(rho) < 1.0)) throw std::invalid_argument("conditional_copula_draw: |rho| must be < 1");
  const auto clamp = [&](double p) {
    const double q = std::clamp(p, kCopulaClamp, 1.0 - kCopulaClamp);
    if (q != p && clamp_count) ++*clamp_count;
    return q;
  };
  const double score = std_normal_quantile(clamp(cdf_same.eval(v_observed)));
  const double u = rho * score + std::sqrt(1.0 - rho * rho) * std_normal_draw(rng);
  return invert_mixture_cdf(cdf_counter, clamp(std_normal_cdf(u)), eps_tol);
}

}  // namespace edpm
