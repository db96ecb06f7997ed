#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "patrac/network.hpp"
#include "patrac/rng.hpp"

namespace patrac {

struct TrainConfig {
  double learning_rate = 1e-6;
  double l2_penalty = 1.0;  // lambda
  int patience = 20;
  long max_steps = 2'000'000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  double init_scale = 1.0;  // multiplies the fan-in initialisation spread

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("TrainConfig: learning_rate must be > 0");
    if (l2_penalty < 0.0) throw ConfigError("TrainConfig: l2_penalty must be >= 0");
    if (patience < 1) throw ConfigError("TrainConfig: patience must be >= 1");
    if (max_steps < 1) throw ConfigError("TrainConfig: max_steps must be >= 1");
    if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0))
      throw ConfigError("TrainConfig: betas must lie in (0,1)");
    if (!(adam_epsilon > 0.0)) throw ConfigError("TrainConfig: adam_epsilon must be > 0");
  }
};

struct TrainResult {
  ParamSet params;                // best parameters seen
  std::vector<double> loss_trace; // loss per step, entry 0 = initial loss
  long steps = 0;
  double best_loss = 0.0;
};

// Fan-in-scaled Gaussian initialisation: every weight and bias of layer l
// is N(0, (scale / sqrt(N^(l-1)))^2).  A smaller, index-independent spread
// leaves tanh units in their linear regime and strands training on the
// zero-function plateau under a strong L2 penalty.
inline ParamSet random_init(const NetworkShape& shape, std::uint64_t seed, double scale = 1.0) {
  ParamSet p(shape);
  Rng rng = Rng::stream(seed, 0xA11CE);
  for (int l = 1; l <= shape.depth(); ++l) {
    const double sd = scale / std::sqrt(double(shape.nodes(l - 1)));
    for (int i = 1; i <= shape.nodes(l); ++i) {
      for (int j = 1; j <= shape.nodes(l - 1); ++j) p.w(l, i, j) = sd * rng.normal();
      p.b(l, i) = sd * rng.normal();
    }
  }
  return p;
}

// Minimise  loss(theta) = -loglik(theta) + lambda |theta|^2  with Adam.
// The penalty enters through the gradient (coupled weight decay).  Stops
// once `patience` consecutive steps fail to improve the best loss seen so
// far, or at max_steps; returns the parameters with the best loss.
inline TrainResult train(const ParamSet& init, const NetworkShape& shape, const Dataset& data,
                         const Likelihood& lik, const TrainConfig& cfg) {
  cfg.validate();
  init.require_conforms(shape, "train");
  data.require_matches(shape, "train");

  const std::size_t n = init.size();
  ParamSet params = init;
  ParamSet grad(shape);
  NetWorkspace ws;
  std::vector<double> m(n, 0.0), v(n, 0.0);

  auto loss_of = [&](const ParamSet& p, ParamSet& g) {
    const double ll = loglik_and_gradient(p, shape, data, lik, g, ws);
    double sq = 0.0;
    for (double x : p.values()) sq += x * x;
    return -ll + cfg.l2_penalty * sq;
  };

  TrainResult res;
  double loss = loss_of(params, grad);
  if (!std::isfinite(loss)) throw NumericError("train: non-finite loss at step 0");
  res.loss_trace.push_back(loss);
  res.params = params;
  res.best_loss = loss;

  double b1t = 1.0, b2t = 1.0;
  int stall = 0;
  long step = 0;
  while (step < cfg.max_steps && stall < cfg.patience) {
    ++step;
    b1t *= cfg.adam_beta1;
    b2t *= cfg.adam_beta2;
    // loss gradient: -dl/dtheta + 2 lambda theta
    for (std::size_t k = 0; k < n; ++k) {
      const double g = -grad[k] + 2.0 * cfg.l2_penalty * params[k];
      m[k] = cfg.adam_beta1 * m[k] + (1.0 - cfg.adam_beta1) * g;
      v[k] = cfg.adam_beta2 * v[k] + (1.0 - cfg.adam_beta2) * g * g;
      const double mhat = m[k] / (1.0 - b1t);
      const double vhat = v[k] / (1.0 - b2t);
      params[k] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_epsilon);
    }
    loss = loss_of(params, grad);
    if (!std::isfinite(loss))
      throw NumericError("train: non-finite loss at step " + std::to_string(step));
    res.loss_trace.push_back(loss);
    if (loss < res.best_loss) {
      res.best_loss = loss;
      res.params = params;
      stall = 0;
    } else {
      ++stall;
    }
  }
  res.steps = step;
  return res;
}

}  // namespace patrac
