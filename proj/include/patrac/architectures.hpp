#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "patrac/mask.hpp"
#include "patrac/network.hpp"

namespace patrac {

// Node importance for hidden layer l: squared bias plus the sum of squared
// incoming weights of each node.
inline std::vector<double> node_importance(const ParamSet& params, const NetworkShape& shape,
                                           int l) {
  params.require_conforms(shape, "node_importance");
  if (l < 1 || l > shape.depth() - 1)
    throw ShapeError("node_importance: layer must be a hidden layer");
  std::vector<double> eta(std::size_t(shape.nodes(l)));
  for (int i = 1; i <= shape.nodes(l); ++i) {
    double acc = params.b(l, i) * params.b(l, i);
    const double* wr = params.w_row(l, i);
    for (int j = 0; j < shape.nodes(l - 1); ++j) acc += wr[j] * wr[j];
    eta[std::size_t(i - 1)] = acc;
  }
  return eta;
}

// Rank the nodes by importance: rank 1 is the largest eta.  Ties break
// lexicographically, so among equal values the smaller original index
// receives the smaller rank.  Returns 1-based ranks indexed by the
// original (0-based) position.
inline std::vector<int> order_nodes(const std::vector<double>& eta) {
  std::vector<int> order(eta.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return eta[std::size_t(a)] > eta[std::size_t(b)]; });
  std::vector<int> rank(eta.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos)
    rank[std::size_t(order[pos])] = int(pos) + 1;
  return rank;
}

// A relabelled parameter set plus the mask marking its Bayesian
// coordinates.  The relabelled set holds the trained values, so it
// evaluates identically to the trained network.
struct MaskedNetwork {
  ParamSet params;
  BayesMask mask;
};

namespace detail {

// Apply per-layer node relabellings consistently: the value at (l, i, j)
// moves to (l, rank_l(i), rank_{l-1}(j)), with identity on the input and
// output layers, so the network function is unchanged.
inline ParamSet relabel(const ParamSet& trained, const NetworkShape& shape,
                        const std::vector<std::vector<int>>& rank) {
  const int L = shape.depth();
  ParamSet out(shape);
  auto rank_of = [&](int l, int i) {
    if (l <= 0 || l >= L || rank[std::size_t(l)].empty()) return i;
    return rank[std::size_t(l)][std::size_t(i - 1)];
  };
  for (int l = 1; l <= L; ++l) {
    for (int i = 1; i <= shape.nodes(l); ++i) {
      const int ri = rank_of(l, i);
      out.b(l, ri) = trained.b(l, i);
      for (int j = 1; j <= shape.nodes(l - 1); ++j)
        out.w(l, ri, rank_of(l - 1, j)) = trained.w(l, i, j);
    }
  }
  return out;
}

}  // namespace detail

// mix architecture: order the nodes of every hidden layer by importance,
// relabel so the top-k sit first, and mark as Bayesian
//   - first hidden layer: bias and all input weights of the top-k nodes,
//   - hidden layers l >= 2: bias of the top-k nodes plus the weights
//     connecting them to the previous layer's top-k nodes,
//   - output layer: every bias plus the weights from the top-k nodes of
//     the last hidden layer.
inline MaskedNetwork build_mix(const ParamSet& trained, const NetworkShape& shape, int k) {
  trained.require_conforms(shape, "build_mix");
  const int L = shape.depth();
  if (k < 0) throw ConfigError("build_mix: k must be >= 0");
  for (int l = 1; l <= L - 1; ++l)
    if (k > shape.nodes(l))
      throw ConfigError("build_mix: k exceeds width of hidden layer " + std::to_string(l));

  std::vector<std::vector<int>> rank(static_cast<std::size_t>(L));
  for (int l = 1; l <= L - 1; ++l)
    rank[std::size_t(l)] = order_nodes(node_importance(trained, shape, l));

  MaskedNetwork net;
  net.params = detail::relabel(trained, shape, rank);
  net.mask = BayesMask::none(shape);
  net.mask.perms = rank;
  net.mask.perms.resize(std::size_t(L));

  auto& flags = net.mask.flags;
  for (int l = 1; l <= L - 1; ++l) {
    const int nj = l == 1 ? shape.nodes(0) : std::min(k, shape.nodes(l - 1));
    for (int i = 1; i <= std::min(k, shape.nodes(l)); ++i) {
      flags[net.params.b_index(l, i)] = 1;
      for (int j = 1; j <= nj; ++j) flags[net.params.w_index(l, i, j)] = 1;
    }
  }
  for (int i = 1; i <= shape.nodes(L); ++i) {
    flags[net.params.b_index(L, i)] = 1;
    for (int j = 1; j <= std::min(k, shape.nodes(L - 1)); ++j)
      flags[net.params.w_index(L, i, j)] = 1;
  }
  net.mask.recount();
  return net;
}

// out architecture: only the output layer carries Bayesian parameters.
// The last hidden layer is relabelled by importance; every output bias and
// the weights to the top `weights_per_output` hidden nodes become
// Bayesian.  K = N^(L) * (weights_per_output + 1).
inline MaskedNetwork build_out(const ParamSet& trained, const NetworkShape& shape,
                               int weights_per_output) {
  trained.require_conforms(shape, "build_out");
  const int L = shape.depth();
  if (weights_per_output < 0 || weights_per_output > shape.nodes(L - 1))
    throw ConfigError("build_out: weights_per_output exceeds last hidden layer width");

  std::vector<std::vector<int>> rank(static_cast<std::size_t>(L));
  if (L >= 2) rank[std::size_t(L - 1)] = order_nodes(node_importance(trained, shape, L - 1));

  MaskedNetwork net;
  net.params = detail::relabel(trained, shape, rank);
  net.mask = BayesMask::none(shape);
  if (L >= 2) net.mask.perms[std::size_t(L - 1)] = rank[std::size_t(L - 1)];

  for (int i = 1; i <= shape.nodes(L); ++i) {
    net.mask.flags[net.params.b_index(L, i)] = 1;
    for (int j = 1; j <= weights_per_output; ++j)
      net.mask.flags[net.params.w_index(L, i, j)] = 1;
  }
  net.mask.recount();
  return net;
}

// sep architecture: the trained network runs unchanged next to a small
// fully Bayesian network with k nodes per hidden layer and the same depth
// and endpoints; the composite output is the sum of the two outputs with
// fixed unit combination weights and no combination bias.
struct SepComposite {
  NetworkShape opt_shape, bayes_shape;
  ParamSet opt_params;
  BayesMask bayes_mask;  // full mask over the Bayesian side
};

inline NetworkShape sep_side_shape(const NetworkShape& opt_shape, int k) {
  if (k < 1) throw ConfigError("build_sep: k must be >= 1");
  std::vector<int> sizes = opt_shape.layer_sizes;
  for (std::size_t l = 1; l + 1 < sizes.size(); ++l) sizes[l] = k;
  NetworkShape s;
  s.layer_sizes = std::move(sizes);
  s.activations = opt_shape.activations;
  s.validate();
  return s;
}

inline SepComposite build_sep(const NetworkShape& opt_shape, const ParamSet& opt_params, int k) {
  opt_params.require_conforms(opt_shape, "build_sep");
  SepComposite comp;
  comp.opt_shape = opt_shape;
  comp.opt_params = opt_params;
  comp.bayes_shape = sep_side_shape(opt_shape, k);
  comp.bayes_mask = BayesMask::full(comp.bayes_shape);
  return comp;
}

inline std::vector<double> composite_forward(const SepComposite& comp,
                                             const ParamSet& side_params,
                                             std::span<const double> x) {
  auto out = forward(comp.opt_params, comp.opt_shape, x);
  auto side = forward(side_params, comp.bayes_shape, x);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += side[k];
  return out;
}

}  // namespace patrac
