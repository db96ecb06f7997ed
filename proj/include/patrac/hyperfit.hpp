#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "patrac/prior.hpp"

namespace patrac {

namespace detail {

// Decay coefficient of the fit objective at one coordinate: the squared
// magnitude of a trained parameter is matched against sigma^2 times this.
// Layer 1 weights decay in i only, the output layer weights in j only,
// interior layers in the product i*j; biases decay in i on every layer.
struct FitTerms {
  // sum of a^2, sum of a*c, sum of c^2, separately for weights and biases,
  // where a = squared trained value and c = decay coefficient at alpha.
  double aw2 = 0, awc = 0, wc2 = 0;
  double ab2 = 0, abc = 0, bc2 = 0;
};

inline FitTerms fit_terms(const ParamSet& trained, const NetworkShape& shape, double alpha) {
  const int L = shape.depth();
  int max_n = 0;
  for (int n : shape.layer_sizes) max_n = std::max(max_n, n);
  std::vector<double> ppow(std::size_t(max_n) + 1, 0.0);
  for (int x = 1; x <= max_n; ++x) ppow[std::size_t(x)] = std::pow(double(x), -alpha);

  FitTerms t;
  for (int l = 1; l <= L; ++l) {
    for (int i = 1; i <= shape.nodes(l); ++i) {
      const double bi = trained.b(l, i);
      const double ab = bi * bi;
      const double cb = ppow[std::size_t(i)];
      t.ab2 += ab * ab;
      t.abc += ab * cb;
      t.bc2 += cb * cb;
      const double* wr = trained.w_row(l, i);
      for (int j = 1; j <= shape.nodes(l - 1); ++j) {
        const double wv = wr[j - 1];
        const double aw = wv * wv;
        double cw;
        if (l == 1)
          cw = ppow[std::size_t(i)];
        else if (l == L)
          cw = ppow[std::size_t(j)];
        else
          cw = ppow[std::size_t(i)] * ppow[std::size_t(j)];
        t.aw2 += aw * aw;
        t.awc += aw * cw;
        t.wc2 += cw * cw;
      }
    }
  }
  return t;
}

}  // namespace detail

// Value of the hyperparameter fit objective
//   sum over coordinates of (theta^2 - sigma^2 * decay(alpha))^2 .
inline double hyperfit_objective(const ParamSet& trained, const NetworkShape& shape,
                                 double alpha, double s2w, double s2b) {
  const auto t = detail::fit_terms(trained, shape, alpha);
  return (t.aw2 - 2.0 * s2w * t.awc + s2w * s2w * t.wc2) +
         (t.ab2 - 2.0 * s2b * t.abc + s2b * s2b * t.bc2);
}

// Fit (alpha, sigma2_w, sigma2_b) to a trained parameter set by grid search
// over alpha in [1.01, 5] (400 points) and log grids [1e-8, 1e4] for the
// sigma^2 (600 points each), followed by two local refinement passes.
// Given alpha the objective is quadratic in each sigma^2, so each grid scan
// costs O(params) per alpha.  The prior's sigma^2 values are 4x the argmin
// components; all layers share them.  Ties resolve to the lowest grid index.
inline PriorSpec fit_hyperparams(const ParamSet& trained, const NetworkShape& shape) {
  trained.require_conforms(shape, "fit_hyperparams");

  constexpr int kAlphaPoints = 400;
  constexpr int kSigmaPoints = 600;
  constexpr double kAlphaLo = 1.01, kAlphaHi = 5.0;
  constexpr double kLogSigmaLo = -8.0, kLogSigmaHi = 4.0;  // sigma^2 search floor 1e-8

  auto lin_grid = [](double lo, double hi, int n) {
    std::vector<double> g(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) g[std::size_t(k)] = lo + (hi - lo) * double(k) / double(n - 1);
    return g;
  };
  auto log_grid = [&](double llo, double lhi, int n) {
    std::vector<double> g(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k)
      g[std::size_t(k)] = std::pow(10.0, llo + (lhi - llo) * double(k) / double(n - 1));
    return g;
  };

  std::vector<double> alphas = lin_grid(kAlphaLo, kAlphaHi, kAlphaPoints);
  std::vector<double> s2ws = log_grid(kLogSigmaLo, kLogSigmaHi, kSigmaPoints);
  std::vector<double> s2bs = s2ws;

  double best_obj = std::numeric_limits<double>::infinity();
  int best_a = 0, best_w = 0, best_b = 0;
  std::vector<double> pass_trace;

  for (int pass = 0; pass < 3; ++pass) {
    best_obj = std::numeric_limits<double>::infinity();
    for (int ka = 0; ka < int(alphas.size()); ++ka) {
      const auto t = detail::fit_terms(trained, shape, alphas[std::size_t(ka)]);
      // scan the two sigma grids independently; the objective separates
      int bw = 0, bb = 0;
      double ow = std::numeric_limits<double>::infinity();
      double ob = std::numeric_limits<double>::infinity();
      for (int k = 0; k < int(s2ws.size()); ++k) {
        const double s = s2ws[std::size_t(k)];
        const double o = t.aw2 - 2.0 * s * t.awc + s * s * t.wc2;
        if (o < ow) {
          ow = o;
          bw = k;
        }
      }
      for (int k = 0; k < int(s2bs.size()); ++k) {
        const double s = s2bs[std::size_t(k)];
        const double o = t.ab2 - 2.0 * s * t.abc + s * s * t.bc2;
        if (o < ob) {
          ob = o;
          bb = k;
        }
      }
      if (ow + ob < best_obj) {
        best_obj = ow + ob;
        best_a = ka;
        best_w = bw;
        best_b = bb;
      }
    }
    pass_trace.push_back(best_obj);
    if (pass == 2) break;
    // refine around the argmin: one old cell to each side
    auto neighbor = [](const std::vector<double>& g, int k, int d) {
      return g[std::size_t(std::clamp(k + d, 0, int(g.size()) - 1))];
    };
    const double alo = neighbor(alphas, best_a, -1), ahi = neighbor(alphas, best_a, +1);
    const double wlo = std::log10(neighbor(s2ws, best_w, -1));
    const double whi = std::log10(neighbor(s2ws, best_w, +1));
    const double blo = std::log10(neighbor(s2bs, best_b, -1));
    const double bhi = std::log10(neighbor(s2bs, best_b, +1));
    alphas = lin_grid(alo, ahi, kAlphaPoints);
    s2ws = log_grid(wlo, whi, kSigmaPoints);
    s2bs = log_grid(blo, bhi, kSigmaPoints);
  }

  const double ref = hyperfit_objective(trained, shape, 2.0, 1.0, 1.0);
  if (best_obj > ref) {
    std::ostringstream msg;
    msg << "fit_hyperparams: search ended above the reference point; objective trace:";
    for (double o : pass_trace) msg << ' ' << o;
    msg << " reference: " << ref;
    throw FitError(msg.str());
  }

  // the argmin components estimate (sigma^2 / 4); inflate by 4
  PriorSpec spec = PriorSpec::uniform(shape.depth(), alphas[std::size_t(best_a)],
                                      4.0 * s2ws[std::size_t(best_w)],
                                      4.0 * s2bs[std::size_t(best_b)]);
  spec.scale = 1.0;
  return spec;
}

// Variance-matching factor phi / phi_partial: the ratio of the total prior
// variance over all coordinates of the full mask to the total over the
// partial mask.  Stored as PriorSpec::scale for partial architectures.
inline double patrac_scale(const PriorSpec& spec, const NetworkShape& shape,
                           const BayesMask& full_mask, const BayesMask& patrac_mask) {
  if (patrac_mask.bayes_count == 0)
    throw ConfigError("patrac_scale: empty Bayesian mask (division by zero)");
  const double phi = total_prior_variance(spec, shape, full_mask);
  const double phi_p = total_prior_variance(spec, shape, patrac_mask);
  return phi / phi_p;
}

}  // namespace patrac
