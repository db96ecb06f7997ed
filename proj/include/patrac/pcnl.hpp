#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "patrac/architectures.hpp"
#include "patrac/network.hpp"
#include "patrac/prior.hpp"
#include "patrac/rng.hpp"

namespace patrac {

struct SamplerConfig {
  double delta_init = 1e-4;  // in (0,2)
  int accept_window = 200;
  double p_lower = 0.4;
  double p_upper = 0.9;
  long n_samples = 500'000;
  int thin = 1000;
  std::uint64_t seed = 0;
  double burn_in_scale = 1.0;  // scales every burn-in phase length
  double probe_x = -2.0;       // traced probe input, broadcast over input dim

  void validate() const {
    if (!(delta_init > 0.0 && delta_init < 2.0))
      throw ConfigError("SamplerConfig: delta_init must lie in (0,2)");
    if (accept_window < 1) throw ConfigError("SamplerConfig: accept_window must be >= 1");
    if (!(p_lower > 0.0 && p_lower < p_upper && p_upper < 1.0))
      throw ConfigError("SamplerConfig: need 0 < p_lower < p_upper < 1");
    if (n_samples < 1) throw ConfigError("SamplerConfig: n_samples must be >= 1");
    if (thin < 1) throw ConfigError("SamplerConfig: thin must be >= 1");
    if (!(burn_in_scale >= 0.0 && burn_in_scale <= 1.0))
      throw ConfigError("SamplerConfig: burn_in_scale must lie in [0,1]");
  }
};

// Rolling window of the most recent accept/reject outcomes.
class AcceptWindow {
 public:
  explicit AcceptWindow(int capacity = 200) : buf_(std::size_t(capacity), 0) {}
  void push(bool accepted) {
    buf_[pos_] = accepted ? 1 : 0;
    pos_ = (pos_ + 1) % buf_.size();
    if (count_ < buf_.size()) ++count_;
  }
  bool full() const { return count_ == buf_.size(); }
  std::size_t capacity() const { return buf_.size(); }
  double rate() const {
    if (count_ == 0) return 0.0;
    std::size_t acc = 0;
    for (std::size_t k = 0; k < count_; ++k) acc += buf_[k];
    return double(acc) / double(count_);
  }

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
  std::size_t count_ = 0;
};

// Likelihood backend for one sampling target.  loglik_and_grad must fill
// the gradient at every Bayesian coordinate of the chain's mask; entries at
// coordinates the sampler never reads may be left untouched.
class PosteriorModel {
 public:
  virtual ~PosteriorModel() = default;
  virtual double loglik_and_grad(const ParamSet& params, ParamSet& grad) = 0;
  virtual const NetworkShape& sample_shape() const = 0;

  // Function evaluations of the sampled regression function on a fixed set
  // of points (row-major npoints x input_dim), prepared once so repeated
  // per-step evaluation stays cheap.  eval writes npoints * output_dim
  // values.
  class PointEvaluator {
   public:
    virtual ~PointEvaluator() = default;
    virtual void eval(const ParamSet& params, double* out) = 0;
  };
  virtual std::unique_ptr<PointEvaluator> make_evaluator(std::vector<double> points) const = 0;
};

// Plain network posterior: full forward/backward over the data set.
class NetworkModel final : public PosteriorModel {
 public:
  NetworkModel(NetworkShape shape, Dataset data, Likelihood lik)
      : shape_(std::move(shape)), data_(std::move(data)), lik_(lik) {
    data_.require_matches(shape_, "NetworkModel");
    lik_.validate();
  }

  double loglik_and_grad(const ParamSet& params, ParamSet& grad) override {
    return loglik_and_gradient(params, shape_, data_, lik_, grad, ws_);
  }

  const NetworkShape& sample_shape() const override { return shape_; }

  class Evaluator final : public PointEvaluator {
   public:
    Evaluator(const NetworkModel& m, std::vector<double> pts) : m_(m), pts_(std::move(pts)) {}
    void eval(const ParamSet& params, double* out) override {
      const int d = m_.shape_.input_dim(), m = m_.shape_.output_dim();
      const std::size_t np = pts_.size() / std::size_t(d);
      for (std::size_t p = 0; p < np; ++p) {
        auto f = forward(params, m_.shape_, {pts_.data() + p * std::size_t(d), std::size_t(d)},
                         ws_);
        for (int k = 0; k < m; ++k) out[p * std::size_t(m) + std::size_t(k)] = f[std::size_t(k)];
      }
    }

   private:
    const NetworkModel& m_;
    std::vector<double> pts_;
    NetWorkspace ws_;
  };

  std::unique_ptr<PointEvaluator> make_evaluator(std::vector<double> points) const override {
    return std::make_unique<Evaluator>(*this, std::move(points));
  }

 private:
  NetworkShape shape_;
  Dataset data_;
  Likelihood lik_;
  NetWorkspace ws_;
};

// Output-layer-only posterior: when every Bayesian coordinate sits on the
// output layer the hidden stack is frozen, so its activations at the data
// points are precomputed once and each evaluation reduces to the linear
// model f = b + W h.  Produces bit-identical values and output-layer
// gradients to NetworkModel.
class OutputLayerModel final : public PosteriorModel {
 public:
  OutputLayerModel(NetworkShape shape, Dataset data, Likelihood lik, const ParamSet& frozen)
      : shape_(std::move(shape)), lik_(lik), targets_(std::move(data.targets)), frozen_(frozen) {
    lik_.validate();
    frozen_.require_conforms(shape_, "OutputLayerModel");
    Dataset probe;  // only used for the dim check
    probe.input_dim = data.input_dim;
    probe.output_dim = data.output_dim;
    probe.inputs = std::move(data.inputs);
    probe.targets = targets_;
    probe.require_matches(shape_, "OutputLayerModel");
    n_ = probe.size();
    h_ = hidden_features(probe.inputs, n_);
  }

  double loglik_and_grad(const ParamSet& params, ParamSet& grad) override {
    if (!grad.conforms(shape_)) grad = ParamSet(shape_);
    const int L = shape_.depth();
    const int m = shape_.output_dim(), nh = shape_.nodes(L - 1);
    // only the output-layer block of the gradient is produced
    for (int i = 1; i <= m; ++i) {
      grad.b(L, i) = 0.0;
      double* gw = grad.w_row(L, i);
      for (int j = 0; j < nh; ++j) gw[j] = 0.0;
    }
    const double inv_s2 = 1.0 / lik_.noise_variance;
    double sse = 0.0;
    for (std::size_t p = 0; p < n_; ++p) {
      const double* h = h_.data() + p * std::size_t(nh);
      for (int i = 1; i <= m; ++i) {
        const double* wr = params.w_row(L, i);
        double acc = params.b(L, i);
        for (int j = 0; j < nh; ++j) acc += wr[j] * h[j];
        const double r = targets_[p * std::size_t(m) + std::size_t(i - 1)] - acc;
        sse += r * r;
        const double d = r * inv_s2;
        grad.b(L, i) += d;
        double* gw = grad.w_row(L, i);
        for (int j = 0; j < nh; ++j) gw[j] += d * h[j];
      }
    }
    const double s2 = lik_.noise_variance;
    return -0.5 * sse * inv_s2 -
           0.5 * double(n_) * double(m) * std::log(2.0 * std::numbers::pi * s2);
  }

  const NetworkShape& sample_shape() const override { return shape_; }

  class Evaluator final : public PointEvaluator {
   public:
    Evaluator(const OutputLayerModel& m, std::vector<double> pts)
        : m_(m), np_(pts.size() / std::size_t(m.shape_.input_dim())) {
      h_ = m_.hidden_features(pts, np_);
    }
    void eval(const ParamSet& params, double* out) override {
      const int L = m_.shape_.depth();
      const int m = m_.shape_.output_dim(), nh = m_.shape_.nodes(L - 1);
      for (std::size_t p = 0; p < np_; ++p) {
        const double* h = h_.data() + p * std::size_t(nh);
        for (int i = 1; i <= m; ++i) {
          const double* wr = params.w_row(L, i);
          double acc = params.b(L, i);
          for (int j = 0; j < nh; ++j) acc += wr[j] * h[j];
          out[p * std::size_t(m) + std::size_t(i - 1)] = acc;
        }
      }
    }

   private:
    const OutputLayerModel& m_;
    std::size_t np_;
    std::vector<double> h_;
  };

  std::unique_ptr<PointEvaluator> make_evaluator(std::vector<double> points) const override {
    return std::make_unique<Evaluator>(*this, std::move(points));
  }

 private:
  // last-hidden activations for each point, row-major npoints x N^(L-1)
  std::vector<double> hidden_features(const std::vector<double>& pts, std::size_t np) const {
    const int d = shape_.input_dim(), nh = shape_.nodes(shape_.depth() - 1);
    std::vector<double> h(np * std::size_t(nh));
    NetWorkspace ws;
    for (std::size_t p = 0; p < np; ++p) {
      forward(frozen_, shape_, {pts.data() + p * std::size_t(d), std::size_t(d)}, ws);
      const auto& post = ws.post[std::size_t(shape_.depth() - 1)];
      std::copy(post.begin(), post.end(), h.begin() + long(p * std::size_t(nh)));
    }
    return h;
  }

  NetworkShape shape_;
  Likelihood lik_;
  std::vector<double> targets_;
  ParamSet frozen_;
  std::size_t n_ = 0;
  std::vector<double> h_;
};

// Separate-network posterior: the chain samples the small fully Bayesian
// side network against residual targets y - f_opt(x); evaluations add the
// frozen optimised network back on top.
class SepModel final : public PosteriorModel {
 public:
  SepModel(SepComposite comp, const Dataset& data, Likelihood lik) : comp_(std::move(comp)) {
    data.require_matches(comp_.opt_shape, "SepModel");
    Dataset resid = data;
    NetWorkspace ws;
    const int m = comp_.opt_shape.output_dim();
    for (std::size_t n = 0; n < data.size(); ++n) {
      auto f = forward(comp_.opt_params, comp_.opt_shape, data.input(n), ws);
      for (int k = 0; k < m; ++k)
        resid.targets[n * std::size_t(m) + std::size_t(k)] -= f[std::size_t(k)];
    }
    inner_ = std::make_unique<NetworkModel>(comp_.bayes_shape, std::move(resid), lik);
  }

  double loglik_and_grad(const ParamSet& params, ParamSet& grad) override {
    return inner_->loglik_and_grad(params, grad);
  }

  const NetworkShape& sample_shape() const override { return comp_.bayes_shape; }

  class Evaluator final : public PointEvaluator {
   public:
    Evaluator(const SepModel& m, std::vector<double> pts) {
      inner_ = m.inner_->make_evaluator(pts);
      // frozen offsets f_opt(point), computed once
      const int d = m.comp_.opt_shape.input_dim();
      const int mo = m.comp_.opt_shape.output_dim();
      const std::size_t np = pts.size() / std::size_t(d);
      offset_.resize(np * std::size_t(mo));
      NetWorkspace ws;
      for (std::size_t p = 0; p < np; ++p) {
        auto f = forward(m.comp_.opt_params, m.comp_.opt_shape,
                         {pts.data() + p * std::size_t(d), std::size_t(d)}, ws);
        for (int k = 0; k < mo; ++k) offset_[p * std::size_t(mo) + std::size_t(k)] = f[std::size_t(k)];
      }
    }
    void eval(const ParamSet& params, double* out) override {
      inner_->eval(params, out);
      for (std::size_t k = 0; k < offset_.size(); ++k) out[k] += offset_[k];
    }

   private:
    std::unique_ptr<PointEvaluator> inner_;
    std::vector<double> offset_;
  };

  std::unique_ptr<PointEvaluator> make_evaluator(std::vector<double> points) const override {
    return std::make_unique<Evaluator>(*this, std::move(points));
  }

 private:
  SepComposite comp_;
  std::unique_ptr<NetworkModel> inner_;
};

// Current chain position with cached log-likelihood and gradient.
struct ChainState {
  ParamSet params;
  double loglik = 0.0;
  ParamSet grad;
  double delta = 1e-4;
  AcceptWindow accept_history;
  long step_count = 0;
};

inline ChainState init_chain_state(const ParamSet& init, PosteriorModel& model, double delta,
                                   int accept_window = 200) {
  ChainState s{.params = init,
               .loglik = 0.0,
               .grad = ParamSet(model.sample_shape()),
               .delta = delta,
               .accept_history = AcceptWindow(accept_window),
               .step_count = 0};
  s.loglik = model.loglik_and_grad(s.params, s.grad);
  return s;
}

// Crank-Nicolson Langevin proposal
//   v = ((2-d) u + 2 d C grad + sqrt(8 d) w) / (2+d),  w ~ N(0, C),
// applied on the Bayesian coordinates; everything else is copied from u.
// `noise` holds the K values of w at the Bayesian coordinates.
inline void pcnl_propose(const ParamSet& u, const ParamSet& grad, const PriorDiagonal& prior,
                         double delta, std::span<const double> noise, ParamSet& v) {
  if (noise.size() != prior.count()) throw ShapeError("pcnl_propose: noise length mismatch");
  v = u;
  const auto& idx = prior.indices();
  const auto& var = prior.variances();
  const double a = (2.0 - delta) / (2.0 + delta);
  const double b = 2.0 * delta / (2.0 + delta);
  const double c = std::sqrt(8.0 * delta) / (2.0 + delta);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const std::size_t t = idx[k];
    const double x = a * u[t] + b * var[k] * grad[t] + c * noise[k];
    if (!std::isfinite(x))
      throw NumericError("pcnl_propose: non-finite proposal at coordinate " + std::to_string(t));
    v[t] = x;
  }
}

// Spec surface: draw the noise internally (ascending coordinate order).
inline ParamSet propose(const ChainState& state, const PriorSpec& spec, const NetworkShape& shape,
                        const BayesMask& mask, Rng& rng) {
  PriorDiagonal prior(spec, shape, mask);
  std::vector<double> noise(prior.count());
  for (std::size_t k = 0; k < noise.size(); ++k) noise[k] = prior.sdevs()[k] * rng.normal();
  ParamSet v;
  pcnl_propose(state.params, state.grad, prior, state.delta, noise, v);
  return v;
}

// rho(u,v) of the acceptance probability min{1, exp(rho(u,v) - rho(v,u))}:
//   -l(u) + 1/2 <u-v, Dl(u)> - d/4 <v+u, Dl(u)> + d/4 |sqrt(C) Dl(u)|^2 ,
// inner products over the Bayesian coordinates in enumeration order.
//
// This is the Metropolis-Hastings ratio of the proposal above against the
// target exp(l(u)) N(0,C)(du); expanding the Gaussian proposal densities,
// the prior terms cancel and the remainder regroups into exactly these
// four terms.  Note the + on the 1/2 term: flipping it breaks detailed
// balance and visibly under-disperses the chain (see the linear-Gaussian
// exact-posterior test).
inline double pcnl_rho(const ParamSet& u, double u_loglik, const ParamSet& u_grad,
                       const ParamSet& v, double delta, const PriorDiagonal& prior) {
  const auto& idx = prior.indices();
  const auto& var = prior.variances();
  double ip_diff = 0.0, ip_sum = 0.0, cnorm = 0.0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const std::size_t t = idx[k];
    const double g = u_grad[t];
    ip_diff += (u[t] - v[t]) * g;
    ip_sum += (v[t] + u[t]) * g;
    cnorm += var[k] * g * g;
  }
  const double r = -u_loglik + 0.5 * ip_diff - 0.25 * delta * ip_sum + 0.25 * delta * cnorm;
  if (!std::isfinite(r)) throw NumericError("pcnl_rho: non-finite acceptance ratio term");
  return r;
}

inline double rho(const ParamSet& u_params, double u_loglik, const ParamSet& u_grad,
                  const ParamSet& v_params, double delta, const PriorSpec& spec,
                  const NetworkShape& shape, const BayesMask& mask) {
  return pcnl_rho(u_params, u_loglik, u_grad, v_params, delta, PriorDiagonal(spec, shape, mask));
}

namespace detail {

struct StepScratch {
  ParamSet v, vgrad;
  std::vector<double> noise;
};

// One Metropolis-Hastings step.  Draws K normals (coordinate order) then
// one uniform; on acceptance the proposal and its caches are swapped into
// the state.  force_accept skips the MH test but keeps the same draws.
inline bool step_impl(ChainState& s, PosteriorModel& model, const PriorDiagonal& prior, Rng& rng,
                      bool force_accept, StepScratch& scratch) {
  scratch.noise.resize(prior.count());
  for (std::size_t k = 0; k < prior.count(); ++k)
    scratch.noise[k] = prior.sdevs()[k] * rng.normal();
  pcnl_propose(s.params, s.grad, prior, s.delta, scratch.noise, scratch.v);
  const double v_loglik = model.loglik_and_grad(scratch.v, scratch.vgrad);

  bool accepted;
  if (force_accept) {
    accepted = true;
  } else {
    const double r_uv = pcnl_rho(s.params, s.loglik, s.grad, scratch.v, s.delta, prior);
    const double r_vu = pcnl_rho(scratch.v, v_loglik, scratch.vgrad, s.params, s.delta, prior);
    const double u = rng.uniform();
    accepted = u <= 0.0 || std::log(u) < r_uv - r_vu;
  }
  if (accepted) {
    std::swap(s.params, scratch.v);
    std::swap(s.grad, scratch.vgrad);
    s.loglik = v_loglik;
  }
  s.accept_history.push(accepted);
  ++s.step_count;
  return accepted;
}

}  // namespace detail

// One step against a prepared model and prior diagonal.
inline bool step(ChainState& state, PosteriorModel& model, const PriorDiagonal& prior, Rng& rng,
                 bool force_accept = false) {
  detail::StepScratch scratch;
  return detail::step_impl(state, model, prior, rng, force_accept, scratch);
}

// Spec surface for a single step against a network likelihood.
inline bool step(ChainState& state, const PriorSpec& spec, const NetworkShape& shape,
                 const BayesMask& mask, const Dataset& data, const Likelihood& lik, Rng& rng,
                 bool force_accept = false) {
  NetworkModel model(shape, data, lik);
  PriorDiagonal prior(spec, shape, mask);
  return step(state, model, prior, rng, force_accept);
}

// Acceptance-rate-driven step size update, evaluated on a full window:
// halve below p_lower, grow by 4/3 (capped at 2) above p_upper.
inline double adapt_delta(const AcceptWindow& history, double delta, double p_lower,
                          double p_upper) {
  if (!history.full()) return delta;
  const double p = history.rate();
  if (p <= p_lower) return std::max(delta * 0.5, 1e-12);
  if (p >= p_upper) return std::min(delta * 4.0 / 3.0, 2.0);
  return delta;
}

struct PhaseLogEntry {
  std::string phase;
  long step_begin = 0;  // first step of the phase (1-based, global)
  long step_end = 0;    // last step of the phase
  double delta_begin = 0.0;
  double delta_end = 0.0;
};

struct DeltaEvent {
  long step = 0;
  double delta = 0.0;
};

struct ChainTrace {
  std::vector<PhaseLogEntry> phases;
  std::vector<DeltaEvent> delta_events;
};

namespace detail {

struct PhaseSpec {
  const char* name;
  long steps;
  bool adaptive;
  bool force_accept;
  double p_lower, p_upper;
};

inline void run_phase(ChainState& s, PosteriorModel& model, const PriorDiagonal& prior, Rng& rng,
                      const PhaseSpec& ph, int window, ChainTrace& trace, StepScratch& scratch) {
  PhaseLogEntry log{ph.name, s.step_count + 1, s.step_count + ph.steps, s.delta, s.delta};
  for (long t = 1; t <= ph.steps; ++t) {
    step_impl(s, model, prior, rng, ph.force_accept, scratch);
    if (ph.adaptive && t % window == 0 && s.accept_history.full()) {
      const double nd = adapt_delta(s.accept_history, s.delta, ph.p_lower, ph.p_upper);
      if (nd != s.delta) {
        s.delta = nd;
        trace.delta_events.push_back({s.step_count, nd});
      }
    }
  }
  log.delta_end = s.delta;
  trace.phases.push_back(log);
}

}  // namespace detail

// Four-phase warm-up: pin delta to 1e-4, adapt towards a high acceptance
// band, transport with every proposal accepted and delta frozen, then adapt
// in the standard band.  Full-scale phase lengths are 50k / 100k / 500k
// steps; burn_in_scale multiplies all three.
inline ChainTrace burn_in(ChainState& state, PosteriorModel& model, const PriorDiagonal& prior,
                          const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  ChainTrace trace;
  detail::StepScratch scratch;
  state.delta = 1e-4;
  trace.phases.push_back({"init", state.step_count, state.step_count, state.delta, state.delta});
  auto scaled = [&](long n) { return std::lround(double(n) * cfg.burn_in_scale); };
  const detail::PhaseSpec phases[] = {
      {"warm_adapt", scaled(50'000), true, false, 0.85, 0.95},
      {"transport", scaled(100'000), false, true, 0.0, 0.0},
      {"main_adapt", scaled(500'000), true, false, 0.4, 0.9},
  };
  for (const auto& ph : phases)
    detail::run_phase(state, model, prior, rng, ph, cfg.accept_window, trace, scratch);
  return trace;
}

// Thinned draws plus everything recorded along the way.
struct SampleArchive {
  std::size_t n_coords = 0;        // K, Bayesian coordinates per draw
  std::vector<long> draw_steps;    // sampling step of each retained draw
  std::vector<double> draws;       // M x K row-major

  int point_dim = 0;               // input dim of the grid points
  int value_dim = 1;               // outputs per point
  std::vector<double> grid_points; // g x point_dim row-major
  std::vector<double> grid_values; // M x (g*value_dim) row-major, thinned

  std::vector<double> trace_loglik, trace_logprior, trace_first_out_weight, trace_probe;

  // per-step grid evaluations, one column per grid value; used for the
  // grid-based effective sample size and not persisted by default
  std::vector<std::vector<double>> stepwise_grid;

  ChainTrace trace;
  long n_steps = 0;
  long accepted_steps = 0;  // accepted moves during the sampling phase
  int thin = 1;
  double sampling_seconds = 0.0;

  std::size_t draw_count() const { return draw_steps.size(); }
};

// Burn in, then run n_samples adaptive steps; records per-step trace
// scalars and grid evaluations, and archives every thin-th draw.
inline SampleArchive run_chain(const ParamSet& init, PosteriorModel& model,
                               const PriorDiagonal& prior, const SamplerConfig& cfg,
                               std::vector<double> grid_points, bool keep_stepwise_grid = true) {
  cfg.validate();
  const NetworkShape& shape = model.sample_shape();
  init.require_conforms(shape, "run_chain");

  Rng rng = Rng::stream(cfg.seed, 0xC4A1);
  ChainState state = init_chain_state(init, model, cfg.delta_init, cfg.accept_window);

  SampleArchive ar;
  ar.trace = burn_in(state, model, prior, cfg, rng);
  ar.n_coords = prior.count();
  ar.thin = cfg.thin;
  ar.n_steps = cfg.n_samples;
  ar.point_dim = shape.input_dim();
  ar.value_dim = shape.output_dim();
  ar.grid_points = std::move(grid_points);

  const std::size_t g =
      ar.grid_points.empty() ? 0 : ar.grid_points.size() / std::size_t(ar.point_dim);
  const std::size_t gv = g * std::size_t(ar.value_dim);
  auto grid_eval = gv > 0 ? model.make_evaluator(ar.grid_points) : nullptr;
  std::vector<double> grid_row(gv);
  if (keep_stepwise_grid)
    ar.stepwise_grid.assign(gv, std::vector<double>(std::size_t(cfg.n_samples)));

  std::vector<double> probe_point(std::size_t(shape.input_dim()), cfg.probe_x);
  auto probe_eval = model.make_evaluator(probe_point);
  std::vector<double> probe_out(std::size_t(shape.output_dim()));

  const std::size_t n_draws = std::size_t(cfg.n_samples / cfg.thin);
  ar.draws.reserve(n_draws * ar.n_coords);
  ar.grid_values.reserve(n_draws * gv);
  ar.trace_loglik.reserve(std::size_t(cfg.n_samples));
  ar.trace_logprior.reserve(std::size_t(cfg.n_samples));
  ar.trace_first_out_weight.reserve(std::size_t(cfg.n_samples));
  ar.trace_probe.reserve(std::size_t(cfg.n_samples));

  detail::StepScratch scratch;
  PhaseLogEntry log{"sampling", state.step_count + 1, state.step_count + cfg.n_samples,
                    state.delta, state.delta};
  const auto t0 = std::chrono::steady_clock::now();
  for (long t = 1; t <= cfg.n_samples; ++t) {
    ar.accepted_steps += detail::step_impl(state, model, prior, rng, false, scratch);
    if (t % cfg.accept_window == 0 && state.accept_history.full()) {
      const double nd = adapt_delta(state.accept_history, state.delta, cfg.p_lower, cfg.p_upper);
      if (nd != state.delta) {
        state.delta = nd;
        ar.trace.delta_events.push_back({state.step_count, nd});
      }
    }

    ar.trace_loglik.push_back(state.loglik);
    ar.trace_logprior.push_back(prior.log_density(state.params));
    ar.trace_first_out_weight.push_back(state.params.w(shape.depth(), 1, 1));
    // grid evaluation runs per step when the stepwise matrix is wanted (the
    // grid-based ESS needs every step), otherwise only at archived draws
    const bool archive_now = t % cfg.thin == 0;
    if (gv > 0 && (keep_stepwise_grid || archive_now)) {
      grid_eval->eval(state.params, grid_row.data());
      if (keep_stepwise_grid)
        for (std::size_t c = 0; c < gv; ++c) ar.stepwise_grid[c][std::size_t(t - 1)] = grid_row[c];
    }
    probe_eval->eval(state.params, probe_out.data());
    ar.trace_probe.push_back(probe_out[0]);

    if (archive_now) {
      ar.draw_steps.push_back(t);
      for (std::size_t k : prior.indices()) ar.draws.push_back(state.params[k]);
      ar.grid_values.insert(ar.grid_values.end(), grid_row.begin(), grid_row.end());
    }
  }
  const auto t1 = std::chrono::steady_clock::now();
  ar.sampling_seconds = std::chrono::duration<double>(t1 - t0).count();
  log.delta_end = state.delta;
  ar.trace.phases.push_back(log);
  return ar;
}

// Spec surface: chain over a plain network likelihood.
inline SampleArchive run_chain(const ParamSet& init, const PriorSpec& spec,
                               const NetworkShape& shape, const BayesMask& mask,
                               const Dataset& data, const Likelihood& lik,
                               const SamplerConfig& cfg, std::vector<double> grid_points = {},
                               bool keep_stepwise_grid = true) {
  NetworkModel model(shape, data, lik);
  PriorDiagonal prior(spec, shape, mask);
  return run_chain(init, model, prior, cfg, std::move(grid_points), keep_stepwise_grid);
}

}  // namespace patrac
