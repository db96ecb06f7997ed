#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "patrac/errors.hpp"

namespace patrac {

// Function evaluations of N posterior draws on g grid points, stored one
// column per grid point so autocovariance scans run over contiguous memory.
// Entry (n, m) = value of draw n at point m.
struct GridEval {
  std::vector<std::vector<double>> cols;

  std::size_t draws() const { return cols.empty() ? 0 : cols.front().size(); }
  std::size_t points() const { return cols.size(); }
  double value(std::size_t n, std::size_t m) const { return cols[m][n]; }

  static GridEval from_rows(const std::vector<double>& row_major, std::size_t n, std::size_t g) {
    GridEval e;
    e.cols.assign(g, std::vector<double>(n));
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < g; ++c) e.cols[c][r] = row_major[r * g + c];
    return e;
  }
  static GridEval from_columns(std::vector<std::vector<double>> columns) {
    GridEval e;
    e.cols = std::move(columns);
    return e;
  }
};

struct EvalConfig {
  std::vector<double> taus{0.01, 0.05, 0.35};
  int max_lag = 1000;
  double degenerate_floor = 1e-12;

  void validate() const {
    if (max_lag < 1) throw ConfigError("EvalConfig: max_lag must be >= 1");
    for (double t : taus)
      if (!(t > 0.0 && t < 1.0)) throw ConfigError("EvalConfig: tau must lie in (0,1)");
  }
};

// Grid-based effective sample size: autocorrelations of the evaluated
// function averaged over grid points,
//   ESS = N / (-1 + 2 * sum_{k=0}^{max_lag} rho_k),  rho_0 = 1.
// Grid points whose empirical variance falls below `floor` are excluded
// from the average; if every point is degenerate the chain carries no
// signal and an error is raised.
inline double ess(const GridEval& eval, int max_lag, double floor = 1e-12) {
  const std::size_t n = eval.draws();
  const std::size_t g = eval.points();
  if (g == 0) throw ConfigError("ess: empty grid");
  if (n <= std::size_t(max_lag) + 1)
    throw ConfigError("ess: need more draws than max_lag + 1");

  std::vector<std::vector<double>> centered;
  std::vector<double> var;
  centered.reserve(g);
  for (std::size_t c = 0; c < g; ++c) {
    const auto& col = eval.cols[c];
    double mu = 0.0;
    for (double x : col) mu += x;
    mu /= double(n);
    double s2 = 0.0;
    std::vector<double> cc(n);
    for (std::size_t t = 0; t < n; ++t) {
      cc[t] = col[t] - mu;
      s2 += cc[t] * cc[t];
    }
    s2 /= double(n - 1);
    if (s2 < floor) continue;
    centered.push_back(std::move(cc));
    var.push_back(s2);
  }
  if (centered.empty())
    throw DegenerateChainError("ess: every grid point is degenerate (no variance)");

  double rho_sum = 1.0;  // k = 0
  for (int k = 1; k <= max_lag; ++k) {
    double rho_k = 0.0;
    for (std::size_t c = 0; c < centered.size(); ++c) {
      const double* x = centered[c].data();
      double acc = 0.0;
      const std::size_t top = n - std::size_t(k);
      for (std::size_t t = 0; t < top; ++t) acc += x[t] * x[t + std::size_t(k)];
      rho_k += acc / (double(n - std::size_t(k)) - 1.0) / var[c];
    }
    rho_sum += rho_k / double(centered.size());
  }
  const double denom = -1.0 + 2.0 * rho_sum;
  if (!(denom > 0.0))
    throw NumericError("ess: non-positive autocorrelation sum; estimator undefined");
  return double(n) / denom;
}

// The ceil(beta * M)-th order statistic.  A small slack guards against
// beta * M landing epsilon above an integer in floating point.
inline double quantile(std::vector<double> samples, double beta) {
  if (samples.empty()) throw ConfigError("quantile: empty sample set");
  if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("quantile: beta must lie in (0,1)");
  const double m = double(samples.size());
  long idx = long(std::ceil(beta * m - 1e-9));
  idx = std::clamp(idx, 1L, long(samples.size()));
  std::nth_element(samples.begin(), samples.begin() + (idx - 1), samples.end());
  return samples[std::size_t(idx - 1)];
}

// Fraction of points whose reference value lies inside the central
// 1 - tau interval of the posterior samples at that point.
inline double coverage(const GridEval& eval, const std::vector<double>& truth, double tau) {
  if (truth.size() != eval.points())
    throw ShapeError("coverage: truth length must equal the number of grid points");
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("coverage: tau must lie in (0,1)");
  std::size_t inside = 0;
  for (std::size_t c = 0; c < eval.points(); ++c) {
    const double lo = quantile(eval.cols[c], tau / 2.0);
    const double hi = quantile(eval.cols[c], 1.0 - tau / 2.0);
    if (truth[c] >= lo && truth[c] <= hi) ++inside;
  }
  return double(inside) / double(eval.points());
}

// Negative log-likelihood of the posterior predictive mixture
//   -sum_i log( (1/M) sum_n N(y_i; f_n(x_i), s2) ),
// evaluated with log-sum-exp stabilisation.
inline double predictive_nll(const GridEval& eval, const std::vector<double>& targets,
                             double noise_variance) {
  if (targets.size() != eval.points())
    throw ShapeError("predictive_nll: targets length must equal the number of grid points");
  if (!(noise_variance > 0.0)) throw ConfigError("predictive_nll: noise variance must be > 0");
  const double inv2s2 = 0.5 / noise_variance;
  const double log_norm = -0.5 * std::log(2.0 * std::numbers::pi * noise_variance);
  const std::size_t m = eval.draws();
  double total = 0.0;
  for (std::size_t c = 0; c < eval.points(); ++c) {
    const auto& col = eval.cols[c];
    double best = -std::numeric_limits<double>::infinity();
    for (double f : col) {
      const double r = targets[c] - f;
      best = std::max(best, -r * r * inv2s2);
    }
    double acc = 0.0;
    for (double f : col) {
      const double r = targets[c] - f;
      acc += std::exp(-r * r * inv2s2 - best);
    }
    total -= best + std::log(acc / double(m)) + log_norm;
  }
  return total;
}

// Probability integral transform value per point: the fraction of draws
// strictly below the observed target.
inline std::vector<double> pit_values(const GridEval& eval, const std::vector<double>& targets) {
  if (targets.size() != eval.points())
    throw ShapeError("pit_values: targets length must equal the number of grid points");
  std::vector<double> out(eval.points());
  for (std::size_t c = 0; c < eval.points(); ++c) {
    std::size_t below = 0;
    for (double f : eval.cols[c]) below += f < targets[c];
    out[c] = double(below) / double(eval.draws());
  }
  return out;
}

// Kolmogorov-Smirnov statistic of a sample against the uniform law on [0,1].
inline double ks_uniform(std::vector<double> values) {
  if (values.empty()) throw ConfigError("ks_uniform: empty sample");
  std::sort(values.begin(), values.end());
  const double n = double(values.size());
  double ks = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double lo = double(i) / n, hi = double(i + 1) / n;
    ks = std::max(ks, std::max(values[i] - lo, hi - values[i]));
  }
  return ks;
}

// Small sample-statistics helpers used by reports and tests.
inline double mean(const std::vector<double>& xs) {
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc / double(xs.size());
}

inline double sample_sd(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double mu = mean(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - mu) * (x - mu);
  return std::sqrt(acc / double(xs.size() - 1));
}

inline double median(std::vector<double> xs) {
  if (xs.empty()) throw ConfigError("median: empty sample");
  const std::size_t mid = xs.size() / 2;
  std::nth_element(xs.begin(), xs.begin() + long(mid), xs.end());
  double hi = xs[mid];
  if (xs.size() % 2 == 1) return hi;
  std::nth_element(xs.begin(), xs.begin() + long(mid) - 1, xs.end());
  return 0.5 * (xs[mid - 1] + hi);
}

}  // namespace patrac
