#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace edpm {

/// One subject as read from disk: (y, m, v, z, c) with per-field missingness.
struct ObservedRecord {
  std::optional<double> y;
  std::optional<double> m;
  std::optional<double> v;
  int z = 0;
  std::vector<std::optional<double>> c;
};

/// Shape of the covariate block and whether the post-treatment confounder
/// participates in the model. Designs are
///   outcome   (1, M, [V], Z, C')
///   mediator  (1, [V], Z, C')
///   confounder(1, Z, C')
/// and the locally independent baseline block is X = (Z, C').
struct Layout {
  std::size_t p_c = 0;
  std::vector<bool> c_binary;
  bool has_v = true;

  std::size_t y_dim() const { return (has_v ? 4 : 3) + p_c; }
  std::size_t m_dim() const { return (has_v ? 3 : 2) + p_c; }
  std::size_t v_dim() const { return 2 + p_c; }
  /// Number of baseline marginals (treatment first, then covariates).
  std::size_t x_dim() const { return 1 + p_c; }
  bool x_binary(std::size_t q) const { return q == 0 || c_binary[q - 1]; }

  void fill_y_design(double m, double v, int z, std::span<const double> c, std::span<double> out) const {
    std::size_t k = 0;
    out[k++] = 1.0;
    out[k++] = m;
    if (has_v) out[k++] = v;
    out[k++] = static_cast<double>(z);
    for (double cj : c) out[k++] = cj;
  }
  void fill_m_design(double v, int z, std::span<const double> c, std::span<double> out) const {
    std::size_t k = 0;
    out[k++] = 1.0;
    if (has_v) out[k++] = v;
    out[k++] = static_cast<double>(z);
    for (double cj : c) out[k++] = cj;
  }
  void fill_v_design(int z, std::span<const double> c, std::span<double> out) const {
    std::size_t k = 0;
    out[k++] = 1.0;
    out[k++] = static_cast<double>(z);
    for (double cj : c) out[k++] = cj;
  }

  // Column positions inside the designs, used by the missing-data full conditionals.
  std::size_t y_col_m() const { return 1; }
  std::size_t y_col_v() const { return 2; }
  std::size_t y_col_c(std::size_t j) const { return (has_v ? 4 : 3) + j; }
  std::size_t m_col_v() const { return 1; }
  std::size_t m_col_c(std::size_t j) const { return (has_v ? 3 : 2) + j; }
  std::size_t v_col_c(std::size_t j) const { return 2 + j; }
};

/// Affine map between the raw and the standardized (mean 0, sd 1) scale.
struct Standardizer {
  double mean = 0.0;
  double sd = 1.0;
  double forward(double x) const { return (x - mean) / sd; }
  double inverse(double x) const { return x * sd + mean; }
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Column-oriented working data on the standardized scale. Missing cells hold
/// their current imputation; the masks record which cells were missing.
struct Dataset {
  Layout layout;
  std::size_t n = 0;
  std::vector<double> y, m, v;
  std::vector<int> z;
  std::vector<double> c;  // row-major n x p_c
  std::vector<bool> y_miss, m_miss, v_miss, c_miss;

  Standardizer y_scale, m_scale, v_scale;
  std::vector<Standardizer> c_scale;

  std::span<const double> c_row(std::size_t i) const { return {c.data() + i * layout.p_c, layout.p_c}; }
  std::span<double> c_row(std::size_t i) { return {c.data() + i * layout.p_c, layout.p_c}; }
  bool any_missing() const {
    for (bool b : y_miss) if (b) return true;
    for (bool b : m_miss) if (b) return true;
    for (bool b : v_miss) if (b) return true;
    for (bool b : c_miss) if (b) return true;
    return false;
  }

  /// Builds the working dataset: validates records, standardizes y, m, v and
  /// continuous covariates over observed cells, and seeds missing cells with
  /// the observed column mean (binary: the majority level).
  static Dataset from_records(const std::vector<ObservedRecord>& records, std::vector<bool> c_binary,
                              bool has_v = true) {
    Dataset d;
    d.n = records.size();
    if (d.n == 0) throw DataError("dataset is empty");
    d.layout.p_c = c_binary.size();
    d.layout.c_binary = std::move(c_binary);
    d.layout.has_v = has_v;
    const std::size_t p = d.layout.p_c;
    d.y.assign(d.n, 0.0);
    d.m.assign(d.n, 0.0);
    d.v.assign(d.n, 0.0);
    d.z.assign(d.n, 0);
    d.c.assign(d.n * p, 0.0);
    d.y_miss.assign(d.n, false);
    d.m_miss.assign(d.n, false);
    d.v_miss.assign(d.n, false);
    d.c_miss.assign(d.n * p, false);

    for (std::size_t i = 0; i < d.n; ++i) {
      const auto& r = records[i];
      if (r.z != 0 && r.z != 1) throw DataError("record " + std::to_string(i) + ": z must be 0 or 1");
      if (r.c.size() != p) throw DataError("record " + std::to_string(i) + ": covariate count mismatch");
      d.z[i] = r.z;
      d.y_miss[i] = !r.y.has_value();
      d.m_miss[i] = !r.m.has_value();
      d.v_miss[i] = has_v && !r.v.has_value();
      if (r.y) d.y[i] = *r.y;
      if (r.m) d.m[i] = *r.m;
      if (has_v && r.v) d.v[i] = *r.v;
      for (std::size_t j = 0; j < p; ++j) {
        d.c_miss[i * p + j] = !r.c[j].has_value();
        if (r.c[j]) {
          const double val = *r.c[j];
          if (d.layout.c_binary[j] && val != 0.0 && val != 1.0)
            throw DataError("record " + std::to_string(i) + ": binary covariate c" + std::to_string(j + 1) +
                            " must be 0 or 1");
          d.c[i * p + j] = val;
        }
      }
    }

    const auto fit_column = [&](std::vector<double>& col, const std::vector<bool>& miss, const char* name) {
      double s = 0.0, ss = 0.0;
      std::size_t k = 0;
      for (std::size_t i = 0; i < d.n; ++i)
        if (!miss[i]) { s += col[i]; ss += col[i] * col[i]; ++k; }
      if (k < 2) throw DataError(std::string("column ") + name + " needs at least two observed values");
      Standardizer st;
      st.mean = s / static_cast<double>(k);
      const double var = (ss - static_cast<double>(k) * st.mean * st.mean) / static_cast<double>(k - 1);
      st.sd = var > 0.0 ? std::sqrt(var) : 1.0;
      for (std::size_t i = 0; i < d.n; ++i) col[i] = miss[i] ? 0.0 : st.forward(col[i]);
      return st;
    };
    d.y_scale = fit_column(d.y, d.y_miss, "y");
    d.m_scale = fit_column(d.m, d.m_miss, "m");
    if (has_v) d.v_scale = fit_column(d.v, d.v_miss, "v");

    d.c_scale.assign(p, Standardizer{});
    for (std::size_t j = 0; j < p; ++j) {
      std::vector<double> col(d.n);
      std::vector<bool> miss(d.n);
      for (std::size_t i = 0; i < d.n; ++i) {
        col[i] = d.c[i * p + j];
        miss[i] = d.c_miss[i * p + j];
      }
      if (d.layout.c_binary[j]) {
        std::size_t ones = 0, seen = 0;
        for (std::size_t i = 0; i < d.n; ++i)
          if (!miss[i]) { ones += col[i] == 1.0; ++seen; }
        const double fill = (2 * ones >= seen) ? 1.0 : 0.0;
        for (std::size_t i = 0; i < d.n; ++i)
          if (miss[i]) d.c[i * p + j] = fill;
      } else {
        d.c_scale[j] = fit_column(col, miss, ("c" + std::to_string(j + 1)).c_str());
        for (std::size_t i = 0; i < d.n; ++i) d.c[i * p + j] = col[i];
      }
    }
    return d;
  }

  /// Same data with the post-treatment confounder dropped from every design.
  Dataset without_v() const {
    Dataset d = *this;
    d.layout.has_v = false;
    std::fill(d.v.begin(), d.v.end(), 0.0);
    std::fill(d.v_miss.begin(), d.v_miss.end(), false);
    return d;
  }
};

}  // namespace edpm
