#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "patrac/mask.hpp"
#include "patrac/network.hpp"
#include "patrac/rng.hpp"

namespace patrac {

// Trace-class Gaussian prior.  Per-coordinate variances decay polynomially
// in the (1-based) node indices:
//   Var(w^(1)_{i,j}) = s2_w[1] / i^a          (first layer: no j decay)
//   Var(w^(l)_{i,j}) = s2_w[l] / (i j)^a      (l >= 2)
//   Var(b^(l)_i)     = s2_b[l] / i^a
// all multiplied by `scale` (the total-variance matching factor for
// partial architectures; 1 for the full network).
struct PriorSpec {
  double alpha = 2.0;
  std::vector<double> sigma2_w;  // sigma2_w[l-1] for layer l
  std::vector<double> sigma2_b;
  double scale = 1.0;

  static PriorSpec uniform(int layers, double alpha, double s2w, double s2b) {
    PriorSpec p;
    p.alpha = alpha;
    p.sigma2_w.assign(std::size_t(layers), s2w);
    p.sigma2_b.assign(std::size_t(layers), s2b);
    return p;
  }

  void validate(const NetworkShape& shape) const {
    if (!(alpha > 1.0)) throw ConfigError("PriorSpec: alpha must exceed 1");
    if (int(sigma2_w.size()) != shape.depth() || int(sigma2_b.size()) != shape.depth())
      throw ShapeError("PriorSpec: need one sigma^2 pair per layer");
    for (double v : sigma2_w)
      if (!(v > 0.0)) throw ConfigError("PriorSpec: sigma2_w must be > 0");
    for (double v : sigma2_b)
      if (!(v > 0.0)) throw ConfigError("PriorSpec: sigma2_b must be > 0");
    if (!(scale > 0.0)) throw ConfigError("PriorSpec: scale must be > 0");
  }
};

// Diagonal of the covariance operator C at one coordinate.
inline double variance_of(const PriorSpec& spec, const NetworkShape& shape,
                          const ParamCoord& c) {
  if (c.layer < 1 || c.layer > shape.depth() || c.i < 1 || c.i > shape.nodes(c.layer))
    throw ShapeError("variance_of: coordinate out of range");
  double v;
  if (c.kind == ParamCoord::bias) {
    v = spec.sigma2_b[std::size_t(c.layer - 1)] / std::pow(double(c.i), spec.alpha);
  } else {
    if (c.j < 1 || c.j > shape.nodes(c.layer - 1))
      throw ShapeError("variance_of: coordinate out of range");
    const double s2 = spec.sigma2_w[std::size_t(c.layer - 1)];
    v = c.layer == 1 ? s2 / std::pow(double(c.i), spec.alpha)
                     : s2 / std::pow(double(c.i) * double(c.j), spec.alpha);
  }
  return v * spec.scale;
}

// Precomputed diagonal prior over the Bayesian coordinates of a mask.
// Built once per chain; every sampler operation reads from here so the
// variance law has a single source of truth (variance_of).
class PriorDiagonal {
 public:
  PriorDiagonal() = default;

  PriorDiagonal(const PriorSpec& spec, const NetworkShape& shape, const BayesMask& mask) {
    spec.validate(shape);
    mask.require_matches(shape, "PriorDiagonal");
    idx_.reserve(std::size_t(mask.bayes_count));
    var_.reserve(std::size_t(mask.bayes_count));
    for_each_coord(shape, [&](const ParamCoord& c, std::size_t flat) {
      if (!mask.is_bayes(flat)) return;
      idx_.push_back(flat);
      var_.push_back(variance_of(spec, shape, c));
    });
    sdev_.resize(var_.size());
    log_norm_.resize(var_.size());
    for (std::size_t k = 0; k < var_.size(); ++k) {
      sdev_[k] = std::sqrt(var_[k]);
      log_norm_[k] = -0.5 * std::log(2.0 * std::numbers::pi * var_[k]);
    }
  }

  std::size_t count() const { return idx_.size(); }
  const std::vector<std::size_t>& indices() const { return idx_; }
  const std::vector<double>& variances() const { return var_; }
  const std::vector<double>& sdevs() const { return sdev_; }

  double log_density(const ParamSet& p) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < idx_.size(); ++k) {
      const double x = p[idx_[k]];
      acc += log_norm_[k] - 0.5 * x * x / var_[k];
    }
    return acc;
  }

 private:
  std::vector<std::size_t> idx_;
  std::vector<double> var_, sdev_, log_norm_;
};

// Draw a prior sample: Bayesian coordinates ~ N(0, variance_of), all other
// coordinates copied from `base`.
inline ParamSet sample_prior(const PriorSpec& spec, const NetworkShape& shape,
                             const BayesMask& mask, const ParamSet& base, Rng& rng) {
  base.require_conforms(shape, "sample_prior");
  PriorDiagonal diag(spec, shape, mask);
  ParamSet out = base;
  const auto& idx = diag.indices();
  const auto& sd = diag.sdevs();
  for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = sd[k] * rng.normal();
  return out;
}

// Log prior density over the Bayesian coordinates; non-Bayesian
// coordinates are a point mass and contribute zero.
inline double log_prior(const PriorSpec& spec, const NetworkShape& shape, const BayesMask& mask,
                        const ParamSet& params) {
  params.require_conforms(shape, "log_prior");
  return PriorDiagonal(spec, shape, mask).log_density(params);
}

// v -> C v on Bayesian coordinates, zero elsewhere.
inline ParamSet apply_C(const PriorSpec& spec, const NetworkShape& shape, const BayesMask& mask,
                        const ParamSet& v) {
  v.require_conforms(shape, "apply_C");
  PriorDiagonal diag(spec, shape, mask);
  ParamSet out(shape);
  const auto& idx = diag.indices();
  const auto& var = diag.variances();
  for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = var[k] * v[idx[k]];
  return out;
}

// v -> sqrt(C) v on Bayesian coordinates, zero elsewhere.
inline ParamSet apply_sqrtC(const PriorSpec& spec, const NetworkShape& shape,
                            const BayesMask& mask, const ParamSet& v) {
  v.require_conforms(shape, "apply_sqrtC");
  PriorDiagonal diag(spec, shape, mask);
  ParamSet out(shape);
  const auto& idx = diag.indices();
  const auto& sd = diag.sdevs();
  for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = sd[k] * v[idx[k]];
  return out;
}

// Total prior variance over the masked coordinates (the phi sums used for
// partial-prior rescaling).
inline double total_prior_variance(const PriorSpec& spec, const NetworkShape& shape,
                                   const BayesMask& mask) {
  PriorDiagonal diag(spec, shape, mask);
  double acc = 0.0;
  for (double v : diag.variances()) acc += v;
  return acc;
}

}  // namespace patrac
