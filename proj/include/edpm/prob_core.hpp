#pragma once

// Probability kernels shared by the sampler, the G-computation and the
// simulation harness: conjugate normal/inverse-gamma regression machinery,
// prior-predictive densities, the standard normal CDF/quantile and the
// non-standard variate generators used by the scenario generators.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <utility>

namespace edpm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

namespace detail {
using boost_policy = boost::math::policies::policy<boost::math::policies::promote_double<false>>;

inline constexpr double log_two_pi = 1.8378770664093454835606594728112;
}  // namespace detail

/// splitmix64 finalizer; used to derive independent per-task RNG streams from one seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline double std_normal_draw(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }
inline double uniform_draw(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }
inline double gamma_draw(double shape, double rate, Rng& rng) {
  return std::gamma_distribution<double>(shape, 1.0 / rate)(rng);
}
inline double beta_draw(double a, double b, Rng& rng) {
  const double x = gamma_draw(a, 1.0, rng);
  const double y = gamma_draw(b, 1.0, rng);
  return x / (x + y);
}

// ---------------------------------------------------------------------------
// Standard normal

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0); }

inline double std_normal_log_pdf(double x) { return -0.5 * (detail::log_two_pi + x * x); }

/// Inverse of the standard normal CDF. Wichura's AS241 rational approximation
/// followed by one Newton step against std_normal_cdf.
inline double std_normal_quantile(double u) {
  if (!(u > 0.0 && u < 1.0)) throw std::domain_error("std_normal_quantile: u must lie in (0,1)");
  const double q = u - 0.5;
  double x;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    x = q *
        (((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r +
             45921.953931549871457) * r + 13731.693765509461125) * r + 1971.5909503065514427) * r +
          133.14166789178437745) * r + 3.387132872796366608) /
        (((((((5226.495278852545925 * r + 28729.085735721942674) * r + 39307.89580009271061) * r +
             21213.794301586595867) * r + 5394.1960214247511077) * r + 687.1870074920579083) * r +
          42.313330701600911252) * r + 1.0);
  } else {
    double r = q < 0.0 ? u : 1.0 - u;
    r = std::sqrt(-std::log(r));
    if (r <= 5.0) {
      r -= 1.6;
      x = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r +
               1.27045825245236838258) * r + 3.64784832476320460504) * r + 5.7694972214606914055) * r +
            4.6303378461565452959) * r + 1.42343711074968357734) /
          (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r +
               0.14810397642748007459) * r + 0.68976733498510000455) * r + 1.6763848301838038494) * r +
            2.05319162663775882187) * r + 1.0);
    } else {
      r -= 5.0;
      x = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r +
               0.026532189526576123093) * r + 0.29656057182850489123) * r + 1.7848265399172913358) * r +
            5.4637849111641143699) * r + 6.6579046435011037772) /
          (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r +
               7.868691311456132591e-4) * r + 0.0148753612908506148525) * r + 0.13692988092273580531) * r +
            0.59983220655588793769) * r + 1.0);
    }
    if (q < 0.0) x = -x;
  }
  // Newton refinement; skipped deep in the tails where the density underflows.
  const double dens = std::exp(std_normal_log_pdf(x));
  if (dens > 1e-300) x -= (std_normal_cdf(x) - u) / dens;
  return x;
}

inline double normal_log_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (detail::log_two_pi + std::log(var) + d * d / var);
}

// ---------------------------------------------------------------------------
// Student-t (location/scale)

struct StudentT {
  double location = 0.0;
  double scale = 1.0;
  double dof = 1.0;

  double log_pdf(double x) const {
    const double t = (x - location) / scale;
    return std::lgamma(0.5 * (dof + 1.0)) - std::lgamma(0.5 * dof) - 0.5 * std::log(dof * std::numbers::pi) -
           std::log(scale) - 0.5 * (dof + 1.0) * std::log1p(t * t / dof);
  }
  double pdf(double x) const { return std::exp(log_pdf(x)); }
  double cdf(double x) const {
    boost::math::students_t_distribution<double, detail::boost_policy> dist(dof);
    return boost::math::cdf(dist, (x - location) / scale);
  }
  double mean() const { return location; }
  double variance() const {
    return dof > 2.0 ? scale * scale * dof / (dof - 2.0) : std::numeric_limits<double>::infinity();
  }
};

// ---------------------------------------------------------------------------
// Conjugate normal / inverse-gamma regression
//
//   beta | sigma^2 ~ N(mean, sigma^2 * precision^{-1}),  sigma^2 ~ IG(shape, rate)

struct NigPrior {
  Vec mean;
  Mat precision;
  double shape = 1.0;
  double rate = 1.0;

  Eigen::Index dim() const { return mean.size(); }

  void validate() const {
    if (precision.rows() != mean.size() || precision.cols() != mean.size())
      throw std::invalid_argument("NigPrior: precision dimension mismatch");
    if (!(shape > 0.0) || !(rate > 0.0)) throw std::invalid_argument("NigPrior: shape and rate must be positive");
    if (!precision.isApprox(precision.transpose(), 1e-12))
      throw std::invalid_argument("NigPrior: precision must be symmetric");
    Eigen::LLT<Mat> llt(precision);
    if (llt.info() != Eigen::Success) throw std::invalid_argument("NigPrior: precision must be positive definite");
  }

  /// Isotropic prior N(0, coef_var * sigma^2 * I) x IG(shape, rate).
  static NigPrior isotropic(Eigen::Index dim, double coef_var, double shape, double rate) {
    return NigPrior{Vec::Zero(dim), Mat::Identity(dim, dim) / coef_var, shape, rate};
  }
};

struct BetaPrior {
  double a = 1.0;
  double b = 1.0;
};

struct RegressionParams {
  Vec beta;
  double sigma_sq = 1.0;

  double mean(std::span<const double> design) const {
    double s = 0.0;
    for (std::size_t j = 0; j < design.size(); ++j) s += beta[static_cast<Eigen::Index>(j)] * design[j];
    return s;
  }
};

/// Sufficient statistics (X'X, X'y, y'y, n) of a Gaussian linear model.
struct RegressionStats {
  Mat xtx;
  Vec xty;
  double yty = 0.0;
  std::size_t n = 0;

  explicit RegressionStats(Eigen::Index dim) : xtx(Mat::Zero(dim, dim)), xty(Vec::Zero(dim)) {}

  void add(std::span<const double> x, double y) {
    const auto p = static_cast<Eigen::Index>(x.size());
    for (Eigen::Index a = 0; a < p; ++a) {
      const double xa = x[static_cast<std::size_t>(a)];
      xty[a] += xa * y;
      for (Eigen::Index b = 0; b <= a; ++b) xtx(a, b) += xa * x[static_cast<std::size_t>(b)];
    }
    yty += y * y;
    ++n;
  }

  /// Completes the symmetric X'X (add() only fills the lower triangle).
  void finalize() { xtx.template triangularView<Eigen::StrictlyUpper>() = xtx.transpose(); }
};

class IllConditionedDesign : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline NigPrior nig_posterior(const NigPrior& prior, RegressionStats stats) {
  if (stats.n == 0) return prior;
  stats.finalize();
  NigPrior post;
  post.precision = prior.precision + stats.xtx;
  Eigen::LLT<Mat> llt(post.precision);
  if (llt.info() != Eigen::Success) throw IllConditionedDesign("nig_posterior: posterior precision not positive definite");
  const Vec rhs = prior.precision * prior.mean + stats.xty;
  post.mean = llt.solve(rhs);
  post.shape = prior.shape + 0.5 * static_cast<double>(stats.n);
  const double quad = stats.yty + prior.mean.dot(prior.precision * prior.mean) - post.mean.dot(rhs);
  post.rate = prior.rate + 0.5 * quad;
  if (!(post.rate > 0.0)) throw IllConditionedDesign("nig_posterior: non-positive posterior rate");
  return post;
}

/// Batch form: design_rows is n x p, responses has length n.
inline NigPrior nig_posterior(const NigPrior& prior, const Mat& design_rows, const Vec& responses) {
  if (design_rows.rows() != responses.size()) throw std::invalid_argument("nig_posterior: row/response mismatch");
  if (design_rows.rows() > 0 && design_rows.cols() != prior.dim())
    throw std::invalid_argument("nig_posterior: design width mismatch");
  RegressionStats stats(prior.dim());
  Vec row(prior.dim());
  for (Eigen::Index i = 0; i < design_rows.rows(); ++i) {
    row = design_rows.row(i).transpose();
    stats.add(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())), responses[i]);
  }
  return nig_posterior(prior, std::move(stats));
}

/// One draw of (beta, sigma^2) from a NIG law without caching factorizations.
inline RegressionParams sample_nig(const NigPrior& p, Rng& rng) {
  Eigen::LLT<Mat> llt(p.precision);
  if (llt.info() != Eigen::Success) throw IllConditionedDesign("sample_nig: precision not positive definite");
  RegressionParams out;
  out.sigma_sq = 1.0 / gamma_draw(p.shape, p.rate, rng);
  out.beta.resize(p.dim());
  for (Eigen::Index j = 0; j < p.dim(); ++j) out.beta[j] = std_normal_draw(rng);
  llt.matrixU().solveInPlace(out.beta);
  out.beta = p.mean + std::sqrt(out.sigma_sq) * out.beta;
  return out;
}

/// Log marginal likelihood of the responses under the prior (beta, sigma^2 integrated out).
inline double nig_log_marginal(const NigPrior& prior, const Mat& design_rows, const Vec& responses) {
  const NigPrior post = nig_posterior(prior, design_rows, responses);
  const double n = static_cast<double>(responses.size());
  const double logdet0 = 2.0 * Eigen::LLT<Mat>(prior.precision).matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double logdetn = 2.0 * Eigen::LLT<Mat>(post.precision).matrixL().toDenseMatrix().diagonal().array().log().sum();
  return std::lgamma(post.shape) - std::lgamma(prior.shape) + prior.shape * std::log(prior.rate) -
         post.shape * std::log(post.rate) + 0.5 * (logdet0 - logdetn) - 0.5 * n * detail::log_two_pi;
}

/// A NIG distribution with cached factorizations for repeated sampling and
/// predictive evaluation.
class NigDistribution {
 public:
  NigDistribution() = default;
  explicit NigDistribution(NigPrior p) : prior_(std::move(p)), llt_(prior_.precision) {
    if (llt_.info() != Eigen::Success) throw IllConditionedDesign("NigDistribution: precision not positive definite");
    covariance_ = llt_.solve(Mat::Identity(prior_.dim(), prior_.dim()));
    upper_ = llt_.matrixU();
  }

  const NigPrior& prior() const { return prior_; }
  Eigen::Index dim() const { return prior_.dim(); }

  RegressionParams sample(Rng& rng) const {
    RegressionParams out;
    sample_into(out, rng);
    return out;
  }

  /// Draws into `out`, reusing its storage.
  void sample_into(RegressionParams& out, Rng& rng) const {
    out.sigma_sq = 1.0 / gamma_draw(prior_.shape, prior_.rate, rng);
    out.beta.resize(dim());
    for (Eigen::Index j = 0; j < dim(); ++j) out.beta[j] = std_normal_draw(rng);
    // precision = U'U, so U^{-1} eps has covariance precision^{-1}.
    upper_.triangularView<Eigen::Upper>().solveInPlace(out.beta);
    out.beta = prior_.mean + std::sqrt(out.sigma_sq) * out.beta;
  }

  /// Predictive law of a response at design row x: Student-t with 2*shape dof.
  StudentT predictive(std::span<const double> x) const {
    double loc = 0.0;
    double quad = 0.0;
    const auto p = dim();
    for (Eigen::Index a = 0; a < p; ++a) {
      const double xa = x[static_cast<std::size_t>(a)];
      loc += prior_.mean[a] * xa;
      double row = 0.0;
      for (Eigen::Index b = 0; b < p; ++b) row += covariance_(a, b) * x[static_cast<std::size_t>(b)];
      quad += xa * row;
    }
    return StudentT{loc, std::sqrt(prior_.rate / prior_.shape * (1.0 + quad)), 2.0 * prior_.shape};
  }

 private:
  NigPrior prior_;
  Eigen::LLT<Mat> llt_;
  Mat covariance_;
  Mat upper_;
};

inline double nig_predictive_density(const NigPrior& prior, std::span<const double> design_row, double response) {
  if (static_cast<Eigen::Index>(design_row.size()) != prior.dim())
    throw std::invalid_argument("nig_predictive_density: design width mismatch");
  const double d = NigDistribution(prior).predictive(design_row).pdf(response);
  if (!std::isfinite(d)) throw std::overflow_error("nig_predictive_density: non-finite density");
  return d;
}

inline double beta_bernoulli_predictive(const BetaPrior& prior, std::size_t successes, std::size_t failures, int next) {
  const double p1 = (prior.a + static_cast<double>(successes)) /
                    (prior.a + prior.b + static_cast<double>(successes) + static_cast<double>(failures));
  return next == 1 ? p1 : 1.0 - p1;
}

// ---------------------------------------------------------------------------
// Non-standard variates

struct SkewNormalSpec {
  double location = 0.0;  // xi
  double scale = 1.0;     // omega
  double slant = 0.0;     // alpha

  double delta() const { return slant / std::sqrt(1.0 + slant * slant); }
  double mean() const { return location + scale * delta() * std::sqrt(2.0 / std::numbers::pi); }
  double log_pdf(double x) const {
    const double t = (x - location) / scale;
    return std::log(2.0 / scale) + std_normal_log_pdf(t) + std::log(std_normal_cdf(slant * t));
  }
};

/// Additive representation xi + omega * (delta |U0| + sqrt(1 - delta^2) U1).
inline double sample_skew_normal(const SkewNormalSpec& spec, Rng& rng) {
  const double d = spec.delta();
  const double u0 = std::fabs(std_normal_draw(rng));
  const double u1 = std_normal_draw(rng);
  return spec.location + spec.scale * (d * u0 + std::sqrt(1.0 - d * d) * u1);
}

enum class ConfounderKind { normal, gamma };

struct BivariateConfounderSpec {
  ConfounderKind kind = ConfounderKind::normal;
  double mu0 = 0.0;
  double mu1 = 0.0;
  double sigma0_sq = 1.0;
  double sigma1_sq = 1.0;
  double rate = 1.0;
  double rho01 = 0.0;

  void validate() const {
    if (!(std::fabs(rho01) < 1.0)) throw std::invalid_argument("BivariateConfounderSpec: |rho01| must be < 1");
    if (kind == ConfounderKind::normal && !(sigma0_sq > 0.0 && sigma1_sq > 0.0))
      throw std::invalid_argument("BivariateConfounderSpec: variances must be positive");
    if (kind == ConfounderKind::gamma && !(rate > 0.0))
      throw std::invalid_argument("BivariateConfounderSpec: rate must be positive");
  }
  /// Gamma shape used by the gamma kind: softplus of the linear predictor.
  static double gamma_shape(double mu) { return mu > 30.0 ? mu : std::log1p(std::exp(mu)); }
};

inline double gamma_quantile(double shape, double rate, double u) {
  return boost::math::gamma_p_inv(shape, u, detail::boost_policy()) / rate;
}

/// Draws (V_0, V_1). The gamma kind couples Gamma(softplus(mu_z), rate)
/// marginals through a Gaussian copula with normal-score correlation rho01.
inline std::pair<double, double> sample_bivariate_confounder(const BivariateConfounderSpec& spec, Rng& rng) {
  const double e0 = std_normal_draw(rng);
  const double e1 = spec.rho01 * e0 + std::sqrt(1.0 - spec.rho01 * spec.rho01) * std_normal_draw(rng);
  if (spec.kind == ConfounderKind::normal)
    return {spec.mu0 + std::sqrt(spec.sigma0_sq) * e0, spec.mu1 + std::sqrt(spec.sigma1_sq) * e1};
  const auto to_gamma = [&](double mu, double e) {
    const double u = std::clamp(std_normal_cdf(e), 1e-300, 1.0 - 1e-16);
    return gamma_quantile(BivariateConfounderSpec::gamma_shape(mu), spec.rate, u);
  };
  return {to_gamma(spec.mu0, e0), to_gamma(spec.mu1, e1)};
}

// ---------------------------------------------------------------------------
// log-sum-exp helpers

inline double log_sum_exp(std::span<const double> xs) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : xs) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

/// Samples an index with probability proportional to exp(log_w[i]).
inline std::size_t sample_log_weights(std::span<const double> log_w, Rng& rng) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : log_w) mx = std::max(mx, x);
  if (!std::isfinite(mx)) throw std::runtime_error("sample_log_weights: all weights vanish");
  double total = 0.0;
  for (double x : log_w) total += std::exp(x - mx);
  double u = uniform_draw(rng) * total;
  for (std::size_t i = 0; i < log_w.size(); ++i) {
    u -= std::exp(log_w[i] - mx);
    if (u <= 0.0) return i;
  }
  for (std::size_t i = log_w.size(); i-- > 0;)
    if (std::isfinite(log_w[i])) return i;
  return log_w.size() - 1;
}

}  // namespace edpm
