#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "patrac/errors.hpp"

namespace patrac {

enum class Activation { identity, tanh };

inline const char* to_string(Activation a) {
  return a == Activation::tanh ? "tanh" : "identity";
}

// Layer widths N^(0)..N^(L) plus the activation applied at each layer
// boundary: activations[l] maps the pre-activations f^(l) to the inputs of
// layer l+1.  Boundary 0 (raw inputs) and boundary L (returned output) are
// identity.
struct NetworkShape {
  std::vector<int> layer_sizes;
  std::vector<Activation> activations;

  int depth() const { return int(layer_sizes.size()) - 1; }  // L
  int nodes(int l) const { return layer_sizes[std::size_t(l)]; }
  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }

  // Fully connected network with `hidden` on every hidden boundary.
  static NetworkShape mlp(std::vector<int> sizes, Activation hidden = Activation::tanh) {
    NetworkShape s;
    s.layer_sizes = std::move(sizes);
    s.activations.assign(s.layer_sizes.size(), hidden);
    if (!s.activations.empty()) {
      s.activations.front() = Activation::identity;
      s.activations.back() = Activation::identity;
    }
    s.validate();
    return s;
  }

  void validate() const {
    if (layer_sizes.size() < 2)
      throw ShapeError("NetworkShape: need at least input and output layers");
    for (int n : layer_sizes)
      if (n < 1) throw ShapeError("NetworkShape: every layer needs >= 1 node");
    if (activations.size() != layer_sizes.size())
      throw ShapeError("NetworkShape: one activation per layer boundary required");
    if (activations.front() != Activation::identity)
      throw ShapeError("NetworkShape: raw inputs must pass through identity");
    if (activations.back() != Activation::identity)
      throw ShapeError("NetworkShape: output boundary must be identity");
  }

  bool operator==(const NetworkShape&) const = default;
};

// Which kind of parameter a flat coordinate refers to.
struct ParamCoord {
  enum Kind { weight, bias };
  Kind kind;
  int layer;  // 1..L
  int i;      // 1..N^(l)
  int j;      // weights only, 1..N^(l-1)
};

// All weights and biases of one network as a flat vector of doubles.
//
// Enumeration order is fixed and defines the coordinate indexing used by
// masks, the prior covariance diagonal, and the sampler's inner products:
// layers l = 1..L in order; within a layer first the weights w^(l)_{i,j}
// row-major (i outer, j inner), then the biases b^(l)_i.  l, i, j are
// 1-based to match the usual layer/node numbering.
class ParamSet {
 public:
  ParamSet() = default;

  explicit ParamSet(const NetworkShape& shape) : sizes_(shape.layer_sizes) {
    const int L = shape.depth();
    w_off_.resize(std::size_t(L));
    b_off_.resize(std::size_t(L));
    std::size_t off = 0;
    for (int l = 1; l <= L; ++l) {
      w_off_[std::size_t(l - 1)] = off;
      off += std::size_t(sizes_[std::size_t(l)]) * std::size_t(sizes_[std::size_t(l - 1)]);
      b_off_[std::size_t(l - 1)] = off;
      off += std::size_t(sizes_[std::size_t(l)]);
    }
    v_.assign(off, 0.0);
  }

  int layers() const { return int(b_off_.size()); }
  int rows(int l) const { return sizes_[std::size_t(l)]; }      // N^(l)
  int cols(int l) const { return sizes_[std::size_t(l - 1)]; }  // N^(l-1)

  std::size_t w_index(int l, int i, int j) const {
    return w_off_[std::size_t(l - 1)] + std::size_t(i - 1) * std::size_t(cols(l)) +
           std::size_t(j - 1);
  }
  std::size_t b_index(int l, int i) const {
    return b_off_[std::size_t(l - 1)] + std::size_t(i - 1);
  }

  double& w(int l, int i, int j) { return v_[w_index(l, i, j)]; }
  double w(int l, int i, int j) const { return v_[w_index(l, i, j)]; }
  double& b(int l, int i) { return v_[b_index(l, i)]; }
  double b(int l, int i) const { return v_[b_index(l, i)]; }

  double* w_row(int l, int i) { return v_.data() + w_index(l, i, 1); }
  const double* w_row(int l, int i) const { return v_.data() + w_index(l, i, 1); }

  std::vector<double>& values() { return v_; }
  const std::vector<double>& values() const { return v_; }
  std::size_t size() const { return v_.size(); }
  double operator[](std::size_t k) const { return v_[k]; }
  double& operator[](std::size_t k) { return v_[k]; }

  ParamCoord coord_at(std::size_t flat) const {
    for (int l = 1; l <= layers(); ++l) {
      if (flat < b_off_[std::size_t(l - 1)]) {
        const std::size_t rel = flat - w_off_[std::size_t(l - 1)];
        const int nc = cols(l);
        return {ParamCoord::weight, l, int(rel / std::size_t(nc)) + 1,
                int(rel % std::size_t(nc)) + 1};
      }
      const std::size_t bend = b_off_[std::size_t(l - 1)] + std::size_t(rows(l));
      if (flat < bend)
        return {ParamCoord::bias, l, int(flat - b_off_[std::size_t(l - 1)]) + 1, 0};
    }
    throw ShapeError("ParamSet::coord_at: flat index out of range");
  }

  bool conforms(const NetworkShape& shape) const { return sizes_ == shape.layer_sizes; }

  void require_conforms(const NetworkShape& shape, const char* who) const {
    if (!conforms(shape)) throw ShapeError(std::string(who) + ": parameter set does not match shape");
  }

  bool all_finite() const {
    for (double x : v_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  bool operator==(const ParamSet&) const = default;

 private:
  std::vector<int> sizes_;
  std::vector<std::size_t> w_off_, b_off_;
  std::vector<double> v_;
};

// Visit every coordinate in the fixed enumeration order.
// F is called as f(ParamCoord, flat_index).
template <class F>
void for_each_coord(const NetworkShape& shape, F&& f) {
  std::size_t flat = 0;
  const int L = shape.depth();
  for (int l = 1; l <= L; ++l) {
    for (int i = 1; i <= shape.nodes(l); ++i)
      for (int j = 1; j <= shape.nodes(l - 1); ++j)
        f(ParamCoord{ParamCoord::weight, l, i, j}, flat++);
    for (int i = 1; i <= shape.nodes(l); ++i)
      f(ParamCoord{ParamCoord::bias, l, i, 0}, flat++);
  }
}

inline std::size_t param_count(const NetworkShape& shape) {
  std::size_t n = 0;
  for (int l = 1; l <= shape.depth(); ++l)
    n += std::size_t(shape.nodes(l)) * std::size_t(shape.nodes(l - 1) + 1);
  return n;
}

// Regression data; inputs and targets stored row-major.
struct Dataset {
  int input_dim = 0;
  int output_dim = 0;
  std::vector<double> inputs;
  std::vector<double> targets;

  std::size_t size() const {
    return input_dim > 0 ? inputs.size() / std::size_t(input_dim) : 0;
  }
  std::span<const double> input(std::size_t n) const {
    return {inputs.data() + n * std::size_t(input_dim), std::size_t(input_dim)};
  }
  std::span<const double> target(std::size_t n) const {
    return {targets.data() + n * std::size_t(output_dim), std::size_t(output_dim)};
  }
  void add(std::span<const double> x, std::span<const double> y) {
    inputs.insert(inputs.end(), x.begin(), x.end());
    targets.insert(targets.end(), y.begin(), y.end());
  }

  void require_matches(const NetworkShape& shape, const char* who) const {
    if (input_dim != shape.input_dim() || output_dim != shape.output_dim())
      throw ShapeError(std::string(who) + ": dataset dimensions do not match shape");
    if (input_dim > 0 && inputs.size() % std::size_t(input_dim) != 0)
      throw ShapeError(std::string(who) + ": ragged input rows");
    if (output_dim > 0 && targets.size() / std::size_t(output_dim) != size())
      throw ShapeError(std::string(who) + ": inputs and targets differ in length");
  }
};

enum class LikelihoodKind { gaussian };

// Observation model y ~ N(f(x), noise_variance * I).
struct Likelihood {
  LikelihoodKind kind = LikelihoodKind::gaussian;
  double noise_variance = 1.0;

  void validate() const {
    if (!(noise_variance > 0.0)) throw ConfigError("Likelihood: noise_variance must be > 0");
  }
};

namespace detail {
inline double apply_act(Activation a, double x) {
  return a == Activation::tanh ? std::tanh(x) : x;
}
}  // namespace detail

// Reusable buffers for forward and backward passes over one input.
// pre[l] holds f^(l), post[l] holds the boundary activation of f^(l)
// (l = 0..L, with pre[0] = post[0] = x).
struct NetWorkspace {
  std::vector<std::vector<double>> pre, post;
  std::vector<std::vector<double>> delta;  // backward: dl/d pre[l]

  void resize(const NetworkShape& shape) {
    const std::size_t n = shape.layer_sizes.size();
    pre.resize(n);
    post.resize(n);
    delta.resize(n);
    for (std::size_t l = 0; l < n; ++l) {
      pre[l].resize(std::size_t(shape.layer_sizes[l]));
      post[l].resize(std::size_t(shape.layer_sizes[l]));
      delta[l].resize(std::size_t(shape.layer_sizes[l]));
    }
  }
};

// Evaluate f^(L)(x).  The output pre-activation is returned directly; the
// result lands in ws.pre[L] and is also aliased by the returned span.
inline std::span<const double> forward(const ParamSet& params, const NetworkShape& shape,
                                       std::span<const double> x, NetWorkspace& ws) {
  if (int(x.size()) != shape.input_dim()) throw ShapeError("forward: input dimension mismatch");
  params.require_conforms(shape, "forward");
  if (ws.pre.size() != shape.layer_sizes.size()) ws.resize(shape);

  const int L = shape.depth();
  for (int j = 0; j < shape.input_dim(); ++j) {
    ws.pre[0][std::size_t(j)] = x[std::size_t(j)];
    ws.post[0][std::size_t(j)] = x[std::size_t(j)];  // boundary 0 is identity
  }
  for (int l = 1; l <= L; ++l) {
    const int ni = shape.nodes(l), nj = shape.nodes(l - 1);
    const double* in = ws.post[std::size_t(l - 1)].data();
    double* out = ws.pre[std::size_t(l)].data();
    for (int i = 1; i <= ni; ++i) {
      const double* wr = params.w_row(l, i);
      double acc = params.b(l, i);
      for (int j = 0; j < nj; ++j) acc += wr[j] * in[j];
      out[i - 1] = acc;
    }
    const Activation a = shape.activations[std::size_t(l)];
    double* po = ws.post[std::size_t(l)].data();
    if (a == Activation::tanh)
      for (int i = 0; i < ni; ++i) po[i] = std::tanh(out[i]);
    else
      for (int i = 0; i < ni; ++i) po[i] = out[i];
  }
  return {ws.pre[std::size_t(L)].data(), std::size_t(shape.output_dim())};
}

inline std::vector<double> forward(const ParamSet& params, const NetworkShape& shape,
                                   std::span<const double> x) {
  NetWorkspace ws;
  auto out = forward(params, shape, x, ws);
  return {out.begin(), out.end()};
}

// Gaussian log-likelihood of the data set, normalisation constant included:
//   l(theta) = -sum_n |y_n - f(x_n)|^2 / (2 s2) - (N m / 2) log(2 pi s2).
inline double log_likelihood(const ParamSet& params, const NetworkShape& shape,
                             const Dataset& data, const Likelihood& lik) {
  data.require_matches(shape, "log_likelihood");
  lik.validate();
  NetWorkspace ws;
  double sse = 0.0;
  for (std::size_t n = 0; n < data.size(); ++n) {
    auto f = forward(params, shape, data.input(n), ws);
    auto y = data.target(n);
    for (std::size_t k = 0; k < f.size(); ++k) {
      const double r = y[k] - f[k];
      sse += r * r;
    }
  }
  const double s2 = lik.noise_variance;
  const double nm = double(data.size()) * double(shape.output_dim());
  return -0.5 * sse / s2 - 0.5 * nm * std::log(2.0 * std::numbers::pi * s2);
}

// Log-likelihood and its exact gradient in one pass.  `grad` is resized to
// match `params`; accumulation runs over data points in ascending index
// order so repeated evaluations are bit-identical.
inline double loglik_and_gradient(const ParamSet& params, const NetworkShape& shape,
                                  const Dataset& data, const Likelihood& lik, ParamSet& grad,
                                  NetWorkspace& ws) {
  data.require_matches(shape, "loglik_gradient");
  lik.validate();
  if (!grad.conforms(shape)) grad = ParamSet(shape);
  std::fill(grad.values().begin(), grad.values().end(), 0.0);
  if (ws.pre.size() != shape.layer_sizes.size()) ws.resize(shape);

  const int L = shape.depth();
  const double inv_s2 = 1.0 / lik.noise_variance;
  double sse = 0.0;

  for (std::size_t n = 0; n < data.size(); ++n) {
    auto f = forward(params, shape, data.input(n), ws);
    auto y = data.target(n);

    // dl/d f^(L) = (y - f)/s2
    for (std::size_t k = 0; k < f.size(); ++k) {
      const double r = y[k] - f[k];
      sse += r * r;
      ws.delta[std::size_t(L)][k] = r * inv_s2;
    }

    for (int l = L; l >= 1; --l) {
      const int ni = shape.nodes(l), nj = shape.nodes(l - 1);
      const double* dl = ws.delta[std::size_t(l)].data();
      const double* in = ws.post[std::size_t(l - 1)].data();
      for (int i = 1; i <= ni; ++i) {
        const double d = dl[i - 1];
        grad.b(l, i) += d;
        double* gw = grad.w_row(l, i);
        for (int j = 0; j < nj; ++j) gw[j] += d * in[j];
      }
      if (l == 1) continue;
      // delta[l-1]_j = (sum_i w_{i,j} delta[l]_i) * d post/d pre at l-1
      double* dprev = ws.delta[std::size_t(l - 1)].data();
      for (int j = 0; j < nj; ++j) dprev[j] = 0.0;
      for (int i = 1; i <= ni; ++i) {
        const double d = dl[i - 1];
        const double* wr = params.w_row(l, i);
        for (int j = 0; j < nj; ++j) dprev[j] += wr[j] * d;
      }
      const Activation a = shape.activations[std::size_t(l - 1)];
      if (a == Activation::tanh) {
        const double* po = ws.post[std::size_t(l - 1)].data();
        for (int j = 0; j < nj; ++j) dprev[j] *= 1.0 - po[j] * po[j];
      }
    }
  }

  const double s2 = lik.noise_variance;
  const double nm = double(data.size()) * double(shape.output_dim());
  return -0.5 * sse * inv_s2 - 0.5 * nm * std::log(2.0 * std::numbers::pi * s2);
}

// Gradient of the log-likelihood with respect to every parameter.
inline ParamSet loglik_gradient(const ParamSet& params, const NetworkShape& shape,
                                const Dataset& data, const Likelihood& lik) {
  ParamSet grad(shape);
  NetWorkspace ws;
  loglik_and_gradient(params, shape, data, lik, grad, ws);
  return grad;
}

}  // namespace patrac
