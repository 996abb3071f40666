#pragma once

// Naive-loop reference implementations used as test oracles.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

/// rowsoftmax(relu(E·Eᵀ)) for E n×d.
inline std::vector<double> adaptive_support(const std::vector<double>& e, std::size_t n, std::size_t d) {
  std::vector<double> s(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -1e300;
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0;
      for (std::size_t k = 0; k < d; ++k) dot += e[i * d + k] * e[j * d + k];
      s[i * n + j] = std::max(0.0, dot);
      mx = std::max(mx, s[i * n + j]);
    }
    double z = 0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(s[i * n + j] - mx);
    for (std::size_t j = 0; j < n; ++j) s[i * n + j] = std::exp(s[i * n + j] - mx) / z;
  }
  return s;
}

/// Z[i,f] = Σ_c ((I+L)X)[i,c] · Σ_k E[i,k]W[k,c,f] + Σ_k E[i,k]B[k,f].
inline std::vector<double> napl_conv(const std::vector<double>& x, const std::vector<double>& support,
                                     const std::vector<double>& e, const std::vector<double>& w,
                                     const std::vector<double>& b, std::size_t n, std::size_t c, std::size_t d,
                                     std::size_t f) {
  std::vector<double> z(n * f, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < f; ++o) {
      double acc = 0;
      for (std::size_t k = 0; k < d; ++k) acc += e[i * d + k] * b[k * f + o];
      for (std::size_t ch = 0; ch < c; ++ch) {
        double h = 0;
        for (std::size_t j = 0; j < n; ++j) h += ((i == j ? 1.0 : 0.0) + support[i * n + j]) * x[j * c + ch];
        double theta = 0;
        for (std::size_t k = 0; k < d; ++k) theta += e[i * d + k] * w[(k * c + ch) * f + o];
        acc += h * theta;
      }
      z[i * f + o] = acc;
    }
  }
  return z;
}

/// score_i = mean over j != i of |pearson(x_i, x_j)| (signed when `absolute` is false);
/// series laid out steps × n.
inline std::vector<double> correlation_scores(const std::vector<double>& v, std::size_t steps, std::size_t n,
                                              bool absolute = true) {
  std::vector<double> mean(n, 0.0), sd(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < steps; ++t) mean[i] += v[t * n + i];
    mean[i] /= static_cast<double>(steps);
    for (std::size_t t = 0; t < steps; ++t) sd[i] += (v[t * n + i] - mean[i]) * (v[t * n + i] - mean[i]);
    sd[i] = std::sqrt(sd[i]);
  }
  std::vector<double> score(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      double cov = 0;
      for (std::size_t t = 0; t < steps; ++t) cov += (v[t * n + i] - mean[i]) * (v[t * n + j] - mean[j]);
      const double rho = cov / (sd[i] * sd[j]);
      score[i] += absolute ? std::fabs(rho) : rho;
    }
    score[i] /= static_cast<double>(n - 1);
  }
  return score;
}

/// I = (n / S0) · Σ_ij w_ij z_i z_j / Σ_i z_i².
inline double morans_i(const std::vector<double>& x, const std::vector<double>& w) {
  const std::size_t n = x.size();
  double mean = 0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double num = 0, den = 0, s0 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    den += (x[i] - mean) * (x[i] - mean);
    for (std::size_t j = 0; j < n; ++j) {
      num += w[i * n + j] * (x[i] - mean) * (x[j] - mean);
      s0 += w[i * n + j];
    }
  }
  return static_cast<double>(n) / s0 * num / den;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = a.size() == b.size() ? 0.0 : 1e300;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
