#pragma once

#include <array>
#include <atomic>
#include <filesystem>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

#include "patrac/architectures.hpp"
#include "patrac/diagnostics.hpp"
#include "patrac/hyperfit.hpp"
#include "patrac/io.hpp"
#include "patrac/pcnl.hpp"
#include "patrac/trainer.hpp"

namespace patrac {

enum class ExperimentKind { toy, abalone, custom };

inline const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::toy: return "toy";
    case ExperimentKind::abalone: return "abalone";
    default: return "custom";
  }
}

inline ExperimentKind parse_experiment_kind(const std::string& s) {
  if (s == "toy") return ExperimentKind::toy;
  if (s == "abalone") return ExperimentKind::abalone;
  if (s == "custom") return ExperimentKind::custom;
  throw ConfigError("unknown experiment: '" + s + "'");
}

// One sampling target: the architecture family plus its size parameter
// (Bayesian nodes per layer for sep/mix, Bayesian weights per output node
// for out; unused for full).
struct ArchSpec {
  enum Kind { full, sep, out, mix };
  Kind kind = full;
  int param = 0;

  std::string name() const {
    switch (kind) {
      case full: return "full";
      case sep: return "sep_" + std::to_string(param);
      case out: return "out_" + std::to_string(param);
      case mix: return "mix_" + std::to_string(param);
    }
    return "?";
  }

  static ArchSpec parse(const std::string& s) {
    const auto colon = s.find(':');
    const std::string head = trim(colon == std::string::npos ? s : s.substr(0, colon));
    ArchSpec a;
    if (head == "full") a.kind = full;
    else if (head == "sep") a.kind = sep;
    else if (head == "out") a.kind = out;
    else if (head == "mix") a.kind = mix;
    else throw ConfigError("unknown architecture: '" + head + "'");
    if (colon != std::string::npos)
      a.param = int(parse_long(trim(s.substr(colon + 1)), "architecture parameter"));
    else if (a.kind != full)
      throw ConfigError("architecture '" + head + "' needs a parameter, e.g. " + head + ":2");
    return a;
  }
};

inline std::vector<ArchSpec> parse_architectures(const std::string& s) {
  std::vector<ArchSpec> out;
  for (const auto& tok : split(s, ','))
    if (!trim(tok).empty()) out.push_back(ArchSpec::parse(trim(tok)));
  if (out.empty()) throw ConfigError("no architectures given");
  return out;
}

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::toy;
  std::vector<ArchSpec> architectures{ArchSpec{ArchSpec::full, 0}};
  NetworkShape shape = NetworkShape::mlp({1, 50, 50, 1});
  TrainConfig train;
  SamplerConfig sampler;
  EvalConfig eval;
  Likelihood likelihood;
  int repetitions = 1;
  std::uint64_t base_seed = 1;
  double burn_in_scale = 1.0;
  std::string output_dir = "patrac_out";
  int workers = 0;  // 0 = hardware concurrency

  int n_train = 100, n_test = 1000;
  std::string abalone_path;
  std::string train_data, test_data;  // custom experiment inputs

  int ess_grid_size = 100;
  double ess_grid_lo = -5.0, ess_grid_hi = 5.0;
  bool full_trace = false;

  static ExperimentConfig defaults_for(ExperimentKind kind) {
    ExperimentConfig c;
    c.experiment = kind;
    if (kind == ExperimentKind::abalone) {
      c.shape = NetworkShape::mlp({8, 50, 50, 1});
      c.likelihood.noise_variance = 36.0;
      c.train.l2_penalty = 0.01;
    }
    return c;
  }

  void validate() const {
    shape.validate();
    train.validate();
    sampler.validate();
    eval.validate();
    likelihood.validate();
    if (repetitions < 1) throw ConfigError("repetitions must be >= 1");
    if (!(burn_in_scale >= 0.0 && burn_in_scale <= 1.0))
      throw ConfigError("burn_in_scale must lie in [0,1]");
    if (architectures.empty()) throw ConfigError("need at least one architecture");
    if (sampler.n_samples <= long(eval.max_lag) + 1)
      throw ConfigError("n_samples must exceed eval.max_lag + 1 for the ESS estimator");
    if (ess_grid_size < 1) throw ConfigError("ess_grid_size must be >= 1");
    const int min_hidden = [&] {
      int m = shape.layer_sizes[1];
      for (int l = 1; l <= shape.depth() - 1; ++l) m = std::min(m, shape.nodes(l));
      return m;
    }();
    for (const auto& a : architectures) {
      if ((a.kind == ArchSpec::mix || a.kind == ArchSpec::sep) && a.param > min_hidden)
        throw ConfigError(a.name() + ": parameter exceeds hidden layer width");
      if (a.kind == ArchSpec::out && a.param > shape.nodes(shape.depth() - 1))
        throw ConfigError(a.name() + ": parameter exceeds last hidden layer width");
      if (a.kind != ArchSpec::full && a.param < (a.kind == ArchSpec::out ? 0 : 1))
        throw ConfigError(a.name() + ": parameter out of range");
    }
    if (experiment == ExperimentKind::custom && (train_data.empty() || test_data.empty()))
      throw ConfigError("custom experiment needs train_data and test_data paths");
    if (experiment == ExperimentKind::abalone && abalone_path.empty())
      throw ConfigError("abalone experiment needs abalone_path");
  }

  KeyValues to_kv() const {
    KeyValues kv;
    kv.set("experiment", std::string(to_string(experiment)));
    std::string archs;
    for (const auto& a : architectures) {
      if (!archs.empty()) archs += ',';
      archs += a.kind == ArchSpec::full ? "full"
               : (a.kind == ArchSpec::sep   ? "sep:"
                  : a.kind == ArchSpec::out ? "out:"
                                            : "mix:") +
                     std::to_string(a.param);
    }
    kv.set("architectures", archs);
    kv.set("shape", shape_to_string(shape));
    kv.set("repetitions", repetitions);
    kv.set("base_seed", (unsigned long long)base_seed);
    kv.set("burn_in_scale", burn_in_scale);
    kv.set("output_dir", output_dir);
    kv.set("workers", workers);
    kv.set("n_train", n_train);
    kv.set("n_test", n_test);
    if (!abalone_path.empty()) kv.set("abalone_path", abalone_path);
    if (!train_data.empty()) kv.set("train_data", train_data);
    if (!test_data.empty()) kv.set("test_data", test_data);
    kv.set("noise_variance", likelihood.noise_variance);
    kv.set("train.learning_rate", train.learning_rate);
    kv.set("train.l2_penalty", train.l2_penalty);
    kv.set("train.patience", train.patience);
    kv.set("train.max_steps", train.max_steps);
    kv.set("train.adam_beta1", train.adam_beta1);
    kv.set("train.adam_beta2", train.adam_beta2);
    kv.set("train.adam_epsilon", train.adam_epsilon);
    kv.set("train.init_scale", train.init_scale);
    kv.set("sampler.delta_init", sampler.delta_init);
    kv.set("sampler.accept_window", sampler.accept_window);
    kv.set("sampler.p_lower", sampler.p_lower);
    kv.set("sampler.p_upper", sampler.p_upper);
    kv.set("sampler.n_samples", sampler.n_samples);
    kv.set("sampler.thin", sampler.thin);
    kv.set("sampler.probe_x", sampler.probe_x);
    kv.set("eval.max_lag", eval.max_lag);
    kv.set("eval.degenerate_floor", eval.degenerate_floor);
    std::string taus;
    for (double t : eval.taus) {
      if (!taus.empty()) taus += ',';
      taus += format_double(t);
    }
    kv.set("eval.taus", taus);
    kv.set("ess_grid.size", ess_grid_size);
    kv.set("ess_grid.lo", ess_grid_lo);
    kv.set("ess_grid.hi", ess_grid_hi);
    kv.set("full_trace", full_trace);
    return kv;
  }

  static ExperimentConfig from_kv(const KeyValues& kv) {
    ExperimentConfig c =
        defaults_for(parse_experiment_kind(kv.get_or<std::string>("experiment", "toy")));
    if (kv.has("architectures")) c.architectures = parse_architectures(kv.raw("architectures"));
    if (kv.has("shape")) {
      c.shape = NetworkShape::mlp(parse_int_list(kv.raw("shape"), "shape"));
    }
    c.repetitions = kv.get_or<int>("repetitions", c.repetitions);
    if (kv.has("base_seed")) c.base_seed = kv.get_u64("base_seed");
    c.burn_in_scale = kv.get_or<double>("burn_in_scale", c.burn_in_scale);
    c.output_dir = kv.get_or<std::string>("output_dir", c.output_dir);
    c.workers = kv.get_or<int>("workers", c.workers);
    c.n_train = kv.get_or<int>("n_train", c.n_train);
    c.n_test = kv.get_or<int>("n_test", c.n_test);
    c.abalone_path = kv.get_or<std::string>("abalone_path", c.abalone_path);
    c.train_data = kv.get_or<std::string>("train_data", c.train_data);
    c.test_data = kv.get_or<std::string>("test_data", c.test_data);
    c.likelihood.noise_variance = kv.get_or<double>("noise_variance", c.likelihood.noise_variance);
    c.train.learning_rate = kv.get_or<double>("train.learning_rate", c.train.learning_rate);
    c.train.l2_penalty = kv.get_or<double>("train.l2_penalty", c.train.l2_penalty);
    c.train.patience = kv.get_or<int>("train.patience", c.train.patience);
    c.train.max_steps = kv.get_or<long>("train.max_steps", c.train.max_steps);
    c.train.adam_beta1 = kv.get_or<double>("train.adam_beta1", c.train.adam_beta1);
    c.train.adam_beta2 = kv.get_or<double>("train.adam_beta2", c.train.adam_beta2);
    c.train.adam_epsilon = kv.get_or<double>("train.adam_epsilon", c.train.adam_epsilon);
    c.train.init_scale = kv.get_or<double>("train.init_scale", c.train.init_scale);
    c.sampler.delta_init = kv.get_or<double>("sampler.delta_init", c.sampler.delta_init);
    c.sampler.accept_window = kv.get_or<int>("sampler.accept_window", c.sampler.accept_window);
    c.sampler.p_lower = kv.get_or<double>("sampler.p_lower", c.sampler.p_lower);
    c.sampler.p_upper = kv.get_or<double>("sampler.p_upper", c.sampler.p_upper);
    c.sampler.n_samples = kv.get_or<long>("sampler.n_samples", c.sampler.n_samples);
    c.sampler.thin = kv.get_or<int>("sampler.thin", c.sampler.thin);
    c.sampler.probe_x = kv.get_or<double>("sampler.probe_x", c.sampler.probe_x);
    c.eval.max_lag = kv.get_or<int>("eval.max_lag", c.eval.max_lag);
    c.eval.degenerate_floor = kv.get_or<double>("eval.degenerate_floor", c.eval.degenerate_floor);
    if (kv.has("eval.taus")) {
      c.eval.taus.clear();
      for (const auto& tok : split(kv.raw("eval.taus"), ','))
        c.eval.taus.push_back(parse_double(trim(tok), "eval.taus"));
    }
    c.ess_grid_size = kv.get_or<int>("ess_grid.size", c.ess_grid_size);
    c.ess_grid_lo = kv.get_or<double>("ess_grid.lo", c.ess_grid_lo);
    c.ess_grid_hi = kv.get_or<double>("ess_grid.hi", c.ess_grid_hi);
    c.full_trace = kv.get_or<bool>("full_trace", c.full_trace);
    return c;
  }
};

// ---------------------------------------------------------------------------
// data sources

struct ToyData {
  Dataset train, test;
  // noise-free regression function used as the coverage reference
  static double truth(std::span<const double> x) { return std::sin(x[0]); }
};

// x ~ U[-5,5], y ~ N(sin(x), 1); train points drawn before test points.
inline ToyData gen_toy(std::uint64_t seed, int n_train, int n_test) {
  if (n_train < 1 || n_test < 1) throw ConfigError("gen_toy: counts must be >= 1");
  Rng rng = Rng::stream(seed, 0xD474);
  ToyData d;
  d.train.input_dim = d.test.input_dim = 1;
  d.train.output_dim = d.test.output_dim = 1;
  auto draw_into = [&](Dataset& ds, int n) {
    for (int k = 0; k < n; ++k) {
      const double x = -5.0 + 10.0 * rng.uniform();
      const double y = std::sin(x) + rng.normal();
      ds.inputs.push_back(x);
      ds.targets.push_back(y);
    }
  };
  draw_into(d.train, n_train);
  draw_into(d.test, n_test);
  return d;
}

struct AbaloneData {
  Dataset train, test;
  std::vector<double> feature_mean, feature_sdev;  // training-split statistics
};

// UCI abalone rows: sex (M/F/I), 7 measurements, rings.  Sex is encoded
// M -> 1, F -> -1, I -> 0, giving 8 features; features are standardised
// with training-split statistics, targets stay raw.
inline AbaloneData load_abalone(const std::filesystem::path& path, std::uint64_t seed) {
  constexpr std::size_t kTrain = 2923, kTest = 1254;
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open: " + path.string());
  std::vector<std::array<double, 9>> rows;
  std::string line;
  long lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto fields = split(line, ',');
    const std::string where = path.string() + " line " + std::to_string(lineno);
    if (fields.size() != 9)
      throw ParseError(where + ": expected 9 comma-separated fields, got " +
                       std::to_string(fields.size()));
    std::array<double, 9> row{};
    const std::string sex = trim(fields[0]);
    if (sex == "M") row[0] = 1.0;
    else if (sex == "F") row[0] = -1.0;
    else if (sex == "I") row[0] = 0.0;
    else throw ParseError(where + ": unknown sex code '" + sex + "'");
    for (int k = 1; k < 9; ++k) row[std::size_t(k)] = parse_double(trim(fields[std::size_t(k)]), where);
    rows.push_back(row);
  }
  if (rows.size() != kTrain + kTest)
    throw ConfigError("load_abalone: expected " + std::to_string(kTrain + kTest) +
                      " data rows, found " + std::to_string(rows.size()));

  // seeded Fisher-Yates shuffle, then a fixed-size split
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::stream(seed, 0xABA1);
  for (std::size_t k = rows.size() - 1; k > 0; --k) {
    const std::size_t j = std::size_t(rng.next_u64() % (k + 1));
    std::swap(order[k], order[j]);
  }

  AbaloneData d;
  d.train.input_dim = d.test.input_dim = 8;
  d.train.output_dim = d.test.output_dim = 1;
  auto push = [](Dataset& ds, const std::array<double, 9>& row) {
    for (int k = 0; k < 8; ++k) ds.inputs.push_back(row[std::size_t(k)]);
    ds.targets.push_back(row[8]);
  };
  for (std::size_t k = 0; k < kTrain; ++k) push(d.train, rows[order[k]]);
  for (std::size_t k = kTrain; k < kTrain + kTest; ++k) push(d.test, rows[order[k]]);

  d.feature_mean.assign(8, 0.0);
  d.feature_sdev.assign(8, 0.0);
  const double n = double(kTrain);
  for (std::size_t r = 0; r < kTrain; ++r)
    for (int k = 0; k < 8; ++k) d.feature_mean[std::size_t(k)] += d.train.inputs[r * 8 + std::size_t(k)];
  for (auto& m : d.feature_mean) m /= n;
  for (std::size_t r = 0; r < kTrain; ++r)
    for (int k = 0; k < 8; ++k) {
      const double c = d.train.inputs[r * 8 + std::size_t(k)] - d.feature_mean[std::size_t(k)];
      d.feature_sdev[std::size_t(k)] += c * c;
    }
  for (auto& s : d.feature_sdev) s = s > 0.0 ? std::sqrt(s / (n - 1.0)) : 1.0;

  auto standardise = [&](Dataset& ds) {
    for (std::size_t r = 0; r < ds.size(); ++r)
      for (int k = 0; k < 8; ++k) {
        double& x = ds.inputs[r * 8 + std::size_t(k)];
        x = (x - d.feature_mean[std::size_t(k)]) / d.feature_sdev[std::size_t(k)];
      }
  };
  standardise(d.train);
  standardise(d.test);
  return d;
}

// ---------------------------------------------------------------------------
// single-repetition pipeline

namespace detail {

inline std::vector<double> ess_grid_points(const ExperimentConfig& cfg, const Dataset& test) {
  if (cfg.experiment == ExperimentKind::toy && cfg.shape.input_dim() == 1) {
    std::vector<double> pts(std::size_t(cfg.ess_grid_size));
    const int n = cfg.ess_grid_size;
    for (int k = 0; k < n; ++k)
      pts[std::size_t(k)] =
          n == 1 ? cfg.ess_grid_lo
                 : cfg.ess_grid_lo + (cfg.ess_grid_hi - cfg.ess_grid_lo) * double(k) / double(n - 1);
    return pts;
  }
  // real-data experiments: the first ess_grid_size test inputs
  const std::size_t take = std::min<std::size_t>(std::size_t(cfg.ess_grid_size), test.size());
  std::vector<double> pts;
  pts.reserve(take * std::size_t(test.input_dim));
  for (std::size_t r = 0; r < take; ++r) {
    auto x = test.input(r);
    pts.insert(pts.end(), x.begin(), x.end());
  }
  return pts;
}

inline std::vector<std::string> coord_labels(const NetworkShape& shape, const BayesMask& mask) {
  std::vector<std::string> labels;
  labels.reserve(std::size_t(mask.bayes_count));
  for_each_coord(shape, [&](const ParamCoord& c, std::size_t flat) {
    if (!mask.is_bayes(flat)) return;
    if (c.kind == ParamCoord::weight)
      labels.push_back("w_" + std::to_string(c.layer) + "_" + std::to_string(c.i) + "_" +
                       std::to_string(c.j));
    else
      labels.push_back("b_" + std::to_string(c.layer) + "_" + std::to_string(c.i));
  });
  return labels;
}

inline void write_archive(const std::filesystem::path& dir, const NetworkShape& shape,
                          const BayesMask& mask, const SampleArchive& ar, bool full_trace) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  {
    auto labels = coord_labels(shape, mask);
    std::vector<std::string> header{"draw", "step"};
    header.insert(header.end(), labels.begin(), labels.end());
    CsvWriter w(dir / "draws.csv", header, shape_comments(shape));
    for (std::size_t d = 0; d < ar.draw_count(); ++d) {
      w.field(long(d));
      w.field(ar.draw_steps[d]);
      for (std::size_t k = 0; k < ar.n_coords; ++k) w.field(ar.draws[d * ar.n_coords + k]);
      w.end_row();
    }
  }
  {
    std::vector<std::string> header{"point"};
    for (int k = 1; k <= ar.point_dim; ++k) header.push_back("x" + std::to_string(k));
    CsvWriter w(dir / "grid.csv", header);
    const std::size_t g = ar.point_dim > 0 ? ar.grid_points.size() / std::size_t(ar.point_dim) : 0;
    for (std::size_t p = 0; p < g; ++p) {
      w.field(long(p));
      for (int k = 0; k < ar.point_dim; ++k)
        w.field(ar.grid_points[p * std::size_t(ar.point_dim) + std::size_t(k)]);
      w.end_row();
    }
  }
  {
    const std::size_t g = ar.point_dim > 0 ? ar.grid_points.size() / std::size_t(ar.point_dim) : 0;
    const std::size_t gv = g * std::size_t(ar.value_dim);
    std::vector<std::string> header{"draw", "step"};
    for (std::size_t k = 0; k < gv; ++k) header.push_back("g" + std::to_string(k));
    CsvWriter w(dir / "grid_eval.csv", header);
    for (std::size_t d = 0; d < ar.draw_count(); ++d) {
      w.field(long(d));
      w.field(ar.draw_steps[d]);
      for (std::size_t k = 0; k < gv; ++k) w.field(ar.grid_values[d * gv + k]);
      w.end_row();
    }
  }
  {
    // trace scalars: one row per retained draw by default, per step with
    // full_trace; probe output is emitted raw and centred over the rows
    const std::vector<long>* steps = nullptr;
    std::vector<long> all_steps;
    if (full_trace) {
      all_steps.resize(std::size_t(ar.n_steps));
      for (long t = 0; t < ar.n_steps; ++t) all_steps[std::size_t(t)] = t + 1;
      steps = &all_steps;
    } else {
      steps = &ar.draw_steps;
    }
    double probe_mean = 0.0;
    for (long s : *steps) probe_mean += ar.trace_probe[std::size_t(s - 1)];
    if (!steps->empty()) probe_mean /= double(steps->size());
    CsvWriter w(dir / "trace.csv",
                {"step", "loglik", "logprior", "first_out_weight", "output_probe",
                 "output_probe_centered"});
    for (long s : *steps) {
      const std::size_t t = std::size_t(s - 1);
      w.field(s);
      w.field(ar.trace_loglik[t]);
      w.field(ar.trace_logprior[t]);
      w.field(ar.trace_first_out_weight[t]);
      w.field(ar.trace_probe[t]);
      w.field(ar.trace_probe[t] - probe_mean);
      w.end_row();
    }
  }
  {
    CsvWriter w(dir / "phases.csv",
                {"phase", "step_begin", "step_end", "delta_begin", "delta_end"});
    for (const auto& ph : ar.trace.phases) {
      w.field(ph.phase);
      w.field(ph.step_begin);
      w.field(ph.step_end);
      w.field(ph.delta_begin);
      w.field(ph.delta_end);
      w.end_row();
    }
  }
  {
    CsvWriter w(dir / "delta_events.csv", {"step", "delta"});
    for (const auto& ev : ar.trace.delta_events) {
      w.field(ev.step);
      w.field(ev.delta);
      w.end_row();
    }
  }
}

// Rebuild the sampled function's evaluations at arbitrary points from the
// archived draws: base parameters with each draw's Bayesian coordinates
// substituted, pushed through the model's evaluator.  Returns one column
// per (point, output) pair.
inline GridEval eval_draws(const SampleArchive& ar, const PriorDiagonal& prior,
                           const ParamSet& base, PosteriorModel& model,
                           std::vector<double> points, std::size_t npoints) {
  const std::size_t nv = npoints * std::size_t(model.sample_shape().output_dim());
  auto evaluator = model.make_evaluator(std::move(points));
  ParamSet p = base;
  const auto& idx = prior.indices();
  const std::size_t n_draws = ar.draw_count();
  std::vector<std::vector<double>> cols(nv, std::vector<double>(n_draws));
  std::vector<double> row(nv);
  for (std::size_t d = 0; d < n_draws; ++d) {
    for (std::size_t k = 0; k < idx.size(); ++k) p[idx[k]] = ar.draws[d * ar.n_coords + k];
    evaluator->eval(p, row.data());
    for (std::size_t c = 0; c < nv; ++c) cols[c][d] = row[c];
  }
  return GridEval::from_columns(std::move(cols));
}

}  // namespace detail

// Everything needed to run one chain: the sampled shape, the chain's
// starting point (also the reconstruction base for archived draws), the
// mask, the rescaled prior, and the likelihood backend.
struct BuiltArch {
  ArchSpec arch;
  NetworkShape sample_shape;
  ParamSet init;
  BayesMask mask;
  PriorSpec prior;
  std::unique_ptr<PosteriorModel> model;
};

// Assemble a sampling target from the trained network.  full samples every
// coordinate at scale 1; mix/out relabel and rescale, starting from the
// trained values; sep rescales a small side network and starts it from a
// prior draw.
inline BuiltArch build_architecture(const ArchSpec& arch, const NetworkShape& shape,
                                    const ParamSet& trained, const Dataset& train_data,
                                    const Likelihood& lik, const PriorSpec& fitted,
                                    std::uint64_t chain_seed) {
  BuiltArch b;
  b.arch = arch;
  const BayesMask everything = BayesMask::full(shape);
  switch (arch.kind) {
    case ArchSpec::full: {
      b.sample_shape = shape;
      b.init = trained;
      b.mask = everything;
      b.prior = fitted;
      b.prior.scale = 1.0;
      b.model = std::make_unique<NetworkModel>(shape, train_data, lik);
      break;
    }
    case ArchSpec::mix: {
      MaskedNetwork net = build_mix(trained, shape, arch.param);
      b.sample_shape = shape;
      b.init = std::move(net.params);
      b.mask = std::move(net.mask);
      b.prior = fitted;
      b.prior.scale = patrac_scale(fitted, shape, everything, b.mask);
      b.model = std::make_unique<NetworkModel>(shape, train_data, lik);
      break;
    }
    case ArchSpec::out: {
      MaskedNetwork net = build_out(trained, shape, arch.param);
      b.sample_shape = shape;
      b.init = std::move(net.params);
      b.mask = std::move(net.mask);
      b.prior = fitted;
      b.prior.scale = patrac_scale(fitted, shape, everything, b.mask);
      b.model = std::make_unique<OutputLayerModel>(shape, train_data, lik, b.init);
      break;
    }
    case ArchSpec::sep: {
      SepComposite comp = build_sep(shape, trained, arch.param);
      b.sample_shape = comp.bayes_shape;
      b.mask = comp.bayes_mask;
      b.prior = fitted;
      const double phi = total_prior_variance(fitted, shape, everything);
      const double phi_side = total_prior_variance(fitted, comp.bayes_shape, b.mask);
      b.prior.scale = phi / phi_side;
      Rng init_rng = Rng::stream(chain_seed, 0x5EB1);
      b.init = sample_prior(b.prior, b.sample_shape, b.mask, ParamSet(b.sample_shape), init_rng);
      b.model = std::make_unique<SepModel>(std::move(comp), train_data, lik);
      break;
    }
  }
  return b;
}

struct ArchResultRow {
  ArchSpec arch;
  int bayes_count = 0;
  double prior_scale = 1.0;
  double ess_value = 0.0;
  double sampling_seconds = 0.0;
  double accept_rate = 0.0;
  double predictive_nll = 0.0;
  double pit_ks = 0.0;
  std::vector<std::pair<double, double>> coverage_by_tau;  // (tau, coverage)
};

struct RepetitionOutcome {
  int repetition = 0;
  bool ok = false;
  std::string error;
  long train_steps = 0;
  double train_best_loss = 0.0;
  double train_seconds = 0.0;
  std::vector<ArchResultRow> arch_rows;
};

namespace detail {

inline void write_loss_trace(const std::filesystem::path& path,
                             const std::vector<double>& trace) {
  // stride the persisted trace so huge runs stay reviewable
  const std::size_t stride = std::max<std::size_t>(1, trace.size() / 10000);
  CsvWriter w(path, {"step", "loss"});
  for (std::size_t k = 0; k < trace.size(); k += stride) {
    w.field(long(k));
    w.field(trace[k]);
    w.end_row();
  }
  if ((trace.size() - 1) % stride != 0) {
    w.field(long(trace.size() - 1));
    w.field(trace.back());
    w.end_row();
  }
}

inline std::string join_doubles(const std::vector<double>& xs) {
  std::string s;
  for (double x : xs) {
    if (!s.empty()) s += ',';
    s += format_double(x);
  }
  return s;
}

}  // namespace detail

// Run one repetition end to end and write its artifacts under rep_dir.
// Timing values land in timings.csv; every other emitted number is a pure
// function of the manifest.
inline RepetitionOutcome run_repetition(const ExperimentConfig& cfg, int rep_index,
                                        const std::filesystem::path& rep_dir) {
  namespace fs = std::filesystem;
  RepetitionOutcome out;
  out.repetition = rep_index;
  const std::uint64_t rep_seed = cfg.base_seed + std::uint64_t(rep_index);
  fs::create_directories(rep_dir);

  // --- data ---------------------------------------------------------------
  Dataset train_data, test_data;
  std::vector<double> coverage_truth;  // reference values at the test inputs
  std::vector<std::string> derived;
  derived.push_back("repetition_seed: " + std::to_string(rep_seed));
  switch (cfg.experiment) {
    case ExperimentKind::toy: {
      ToyData td = gen_toy(rep_seed, cfg.n_train, cfg.n_test);
      train_data = std::move(td.train);
      test_data = std::move(td.test);
      coverage_truth.resize(test_data.size());
      for (std::size_t k = 0; k < test_data.size(); ++k)
        coverage_truth[k] = ToyData::truth(test_data.input(k));
      derived.push_back("coverage_reference: sin(x)");
      break;
    }
    case ExperimentKind::abalone: {
      AbaloneData ad = load_abalone(cfg.abalone_path, rep_seed);
      train_data = std::move(ad.train);
      test_data = std::move(ad.test);
      coverage_truth.assign(test_data.targets.begin(), test_data.targets.end());
      derived.push_back("coverage_reference: observed targets");
      derived.push_back("feature_mean: " + detail::join_doubles(ad.feature_mean));
      derived.push_back("feature_sdev: " + detail::join_doubles(ad.feature_sdev));
      break;
    }
    case ExperimentKind::custom: {
      train_data = read_dataset(cfg.train_data);
      test_data = read_dataset(cfg.test_data);
      coverage_truth.assign(test_data.targets.begin(), test_data.targets.end());
      derived.push_back("coverage_reference: observed targets");
      break;
    }
  }
  train_data.require_matches(cfg.shape, "run_repetition(train data)");
  test_data.require_matches(cfg.shape, "run_repetition(test data)");
  write_dataset(rep_dir / "train.csv", train_data);
  write_dataset(rep_dir / "test.csv", test_data);

  // --- training -----------------------------------------------------------
  TrainConfig tc = cfg.train;
  tc.seed = rep_seed;
  const ParamSet init = random_init(cfg.shape, tc.seed, tc.init_scale);
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult tr = train(init, cfg.shape, train_data, cfg.likelihood, tc);
  out.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.train_steps = tr.steps;
  out.train_best_loss = tr.best_loss;
  write_params(rep_dir / "trained_params.csv", cfg.shape, tr.params);
  detail::write_loss_trace(rep_dir / "loss_trace.csv", tr.loss_trace);
  derived.push_back("train_steps: " + std::to_string(tr.steps));

  // --- prior calibration ----------------------------------------------------
  const PriorSpec fitted = fit_hyperparams(tr.params, cfg.shape);
  {
    KeyValues kv;
    kv.set("alpha", fitted.alpha);
    kv.set("sigma2_w", fitted.sigma2_w.front());
    kv.set("sigma2_b", fitted.sigma2_b.front());
    kv.set("scale", fitted.scale);
    kv.save(rep_dir / "prior.cfg", {"hyperparameters fitted to the trained network"});
  }
  derived.push_back("fitted_alpha: " + format_double(fitted.alpha));
  derived.push_back("fitted_sigma2_w: " + format_double(fitted.sigma2_w.front()));
  derived.push_back("fitted_sigma2_b: " + format_double(fitted.sigma2_b.front()));

  // --- per-architecture sampling and evaluation ----------------------------
  const std::vector<double> ess_grid = detail::ess_grid_points(cfg, test_data);
  for (std::size_t ordinal = 0; ordinal < cfg.architectures.size(); ++ordinal) {
    const ArchSpec arch = cfg.architectures[ordinal];
    const std::uint64_t chain_seed = splitmix64(rep_seed) + ordinal;
    BuiltArch built = build_architecture(arch, cfg.shape, tr.params, train_data, cfg.likelihood,
                                         fitted, chain_seed);

    SamplerConfig sc = cfg.sampler;
    sc.seed = chain_seed;
    sc.burn_in_scale = cfg.burn_in_scale;
    PriorDiagonal prior(built.prior, built.sample_shape, built.mask);
    SampleArchive ar = run_chain(built.init, *built.model, prior, sc, ess_grid, true);

    ArchResultRow row;
    row.arch = arch;
    row.bayes_count = built.mask.bayes_count;
    row.prior_scale = built.prior.scale;
    row.sampling_seconds = ar.sampling_seconds;
    row.accept_rate = double(ar.accepted_steps) / double(ar.n_steps);
    {
      GridEval ess_eval = GridEval::from_columns(std::move(ar.stepwise_grid));
      ar.stepwise_grid.clear();
      row.ess_value = ess(ess_eval, cfg.eval.max_lag, cfg.eval.degenerate_floor);
    }

    GridEval test_eval = detail::eval_draws(
        ar, prior, built.init, *built.model,
        std::vector<double>(test_data.inputs.begin(), test_data.inputs.end()), test_data.size());
    for (double tau : cfg.eval.taus)
      row.coverage_by_tau.emplace_back(tau, coverage(test_eval, coverage_truth, tau));
    std::vector<double> targets(test_data.targets.begin(), test_data.targets.end());
    row.predictive_nll = predictive_nll(test_eval, targets, cfg.likelihood.noise_variance);
    const std::vector<double> pit = pit_values(test_eval, targets);
    row.pit_ks = ks_uniform(pit);

    const fs::path arch_dir = rep_dir / arch.name();
    detail::write_archive(arch_dir, built.sample_shape, built.mask, ar, cfg.full_trace);
    write_params(arch_dir / "base_params.csv", built.sample_shape, built.init);
    write_mask(arch_dir / "mask.csv", built.sample_shape, built.mask);
    write_permutations(arch_dir / "perms.csv", built.sample_shape, built.mask);
    {
      CsvWriter w(arch_dir / "pit.csv", {"point", "pit"});
      for (std::size_t k = 0; k < pit.size(); ++k) {
        w.field(long(k));
        w.field(pit[k]);
        w.end_row();
      }
    }
    {
      KeyValues kv;
      kv.set("architecture", arch.name());
      kv.set("arch_kind", std::string(arch.kind == ArchSpec::full  ? "full"
                                      : arch.kind == ArchSpec::sep ? "sep"
                                      : arch.kind == ArchSpec::out ? "out"
                                                                   : "mix"));
      kv.set("arch_param", arch.param);
      kv.set("experiment", std::string(to_string(cfg.experiment)));
      kv.set("repetition", rep_index);
      kv.set("chain_seed", (unsigned long long)chain_seed);
      kv.set("shape", shape_to_string(built.sample_shape));
      kv.set("bayes_count", built.mask.bayes_count);
      kv.set("prior.alpha", built.prior.alpha);
      kv.set("prior.sigma2_w", built.prior.sigma2_w.front());
      kv.set("prior.sigma2_b", built.prior.sigma2_b.front());
      kv.set("prior.scale", built.prior.scale);
      kv.set("n_samples", sc.n_samples);
      kv.set("thin", sc.thin);
      kv.set("burn_in_scale", sc.burn_in_scale);
      kv.set("noise_variance", cfg.likelihood.noise_variance);
      kv.set("base_params", std::string("base_params.csv"));
      kv.set("mask", std::string("mask.csv"));
      kv.set("draws", std::string("draws.csv"));
      if (arch.kind == ArchSpec::sep) {
        kv.set("opt_params", std::string("../trained_params.csv"));
        kv.set("opt_shape", shape_to_string(cfg.shape));
      }
      kv.save(arch_dir / "archive.cfg", {"sample archive manifest"});
    }
    out.arch_rows.push_back(std::move(row));
  }

  // --- per-repetition metric and timing tables ------------------------------
  {
    CsvWriter w(rep_dir / "metrics.csv",
                {"experiment", "architecture", "repetition", "metric", "value"});
    auto emit = [&](const std::string& arch, const std::string& metric, double value) {
      w.field(std::string(to_string(cfg.experiment)));
      w.field(arch);
      w.field(rep_index);
      w.field(metric);
      w.field(value);
      w.end_row();
    };
    emit("train", "train_steps", double(out.train_steps));
    emit("train", "train_best_loss", out.train_best_loss);
    for (const auto& row : out.arch_rows) {
      emit(row.arch.name(), "bayes_count", double(row.bayes_count));
      emit(row.arch.name(), "prior_scale", row.prior_scale);
      emit(row.arch.name(), "accept_rate", row.accept_rate);
      emit(row.arch.name(), "ess", row.ess_value);
      emit(row.arch.name(), "predictive_nll", row.predictive_nll);
      emit(row.arch.name(), "pit_ks", row.pit_ks);
      for (const auto& [tau, cov] : row.coverage_by_tau)
        emit(row.arch.name(), "coverage_" + format_short(tau), cov);
    }
  }
  {
    CsvWriter w(rep_dir / "timings.csv",
                {"experiment", "architecture", "repetition", "metric", "value"});
    auto emit = [&](const std::string& arch, const std::string& metric, double value) {
      w.field(std::string(to_string(cfg.experiment)));
      w.field(arch);
      w.field(rep_index);
      w.field(metric);
      w.field(value);
      w.end_row();
    };
    emit("train", "train_seconds", out.train_seconds);
    for (const auto& row : out.arch_rows) {
      emit(row.arch.name(), "sampling_seconds", row.sampling_seconds);
      emit(row.arch.name(), "ess_per_s", row.ess_value / row.sampling_seconds);
    }
  }

  // --- replayable manifest ---------------------------------------------------
  {
    ExperimentConfig replay = cfg;
    replay.base_seed = rep_seed;
    replay.repetitions = 1;
    KeyValues kv = replay.to_kv();
    std::vector<std::string> comments{"repetition manifest; replay with: patrac experiment "
                                      "--config manifest.cfg --output-dir <fresh dir>"};
    for (const auto& d : derived) comments.push_back("derived: " + d);
    kv.save(rep_dir / "manifest.cfg", comments);
  }

  out.ok = true;
  return out;
}

// A persisted sample archive pulled back into memory; enough to re-evaluate
// the sampled function at new points.
struct LoadedArchive {
  KeyValues meta;
  NetworkShape shape;  // sampled shape
  ParamSet base;
  BayesMask mask;
  PriorSpec prior;
  std::size_t n_coords = 0;
  std::vector<long> draw_steps;
  std::vector<double> draws;  // M x K row-major
  double noise_variance = 1.0;

  std::size_t draw_count() const { return draw_steps.size(); }
};

inline LoadedArchive load_archive(const std::filesystem::path& dir) {
  LoadedArchive la;
  la.meta = KeyValues::load(dir / "archive.cfg");
  auto [shape, base] = read_params(dir / la.meta.get_string("base_params"));
  la.shape = std::move(shape);
  la.base = std::move(base);
  la.mask = read_mask(dir / la.meta.get_string("mask"), dir / "perms.csv");
  la.prior = PriorSpec::uniform(la.shape.depth(), la.meta.get_double("prior.alpha"),
                                la.meta.get_double("prior.sigma2_w"),
                                la.meta.get_double("prior.sigma2_b"));
  la.prior.scale = la.meta.get_double("prior.scale");
  la.noise_variance = la.meta.get_double("noise_variance");
  const CsvTable t = CsvTable::load(dir / la.meta.get_string("draws"));
  if (t.header.size() < 2) throw ParseError("draws.csv: missing coordinate columns");
  la.n_coords = t.header.size() - 2;
  if (int(la.n_coords) != la.mask.bayes_count)
    throw ParseError("draws.csv column count does not match the mask");
  for (const auto& row : t.rows) {
    la.draw_steps.push_back(parse_long(row[1], "draws.csv"));
    for (std::size_t k = 2; k < row.size(); ++k)
      la.draws.push_back(parse_double(row[k], "draws.csv"));
  }
  return la;
}

// Evaluation-only model over a loaded archive; data-independent.
inline std::unique_ptr<PosteriorModel> make_eval_model(const LoadedArchive& la,
                                                       const std::filesystem::path& dir) {
  Likelihood lik{LikelihoodKind::gaussian, la.noise_variance};
  const std::string kind = la.meta.get_or<std::string>("arch_kind", "full");
  Dataset empty;
  if (kind == "sep") {
    auto [opt_shape, opt_params] = read_params(dir / la.meta.get_string("opt_params"));
    SepComposite comp;
    comp.opt_shape = std::move(opt_shape);
    comp.opt_params = std::move(opt_params);
    comp.bayes_shape = la.shape;
    comp.bayes_mask = la.mask;
    empty.input_dim = comp.opt_shape.input_dim();
    empty.output_dim = comp.opt_shape.output_dim();
    return std::make_unique<SepModel>(std::move(comp), empty, lik);
  }
  empty.input_dim = la.shape.input_dim();
  empty.output_dim = la.shape.output_dim();
  return std::make_unique<NetworkModel>(la.shape, std::move(empty), lik);
}

// Re-evaluate archived draws at arbitrary points.
inline GridEval eval_archive(const LoadedArchive& la, PosteriorModel& model,
                             std::vector<double> points, std::size_t npoints) {
  SampleArchive ar;
  ar.n_coords = la.n_coords;
  ar.draw_steps = la.draw_steps;
  ar.draws = la.draws;
  PriorDiagonal prior(la.prior, la.shape, la.mask);
  return detail::eval_draws(ar, prior, la.base, model, std::move(points), npoints);
}

struct ExperimentSummary {
  std::vector<RepetitionOutcome> repetitions;
  int failures = 0;
  std::filesystem::path output_dir;
};

// Run every repetition (worker pool sized by cfg.workers), then write the
// merged metric tables and the per-architecture aggregate.
inline ExperimentSummary run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  cfg.validate();
  ExperimentSummary summary;
  summary.output_dir = cfg.output_dir;
  fs::create_directories(summary.output_dir);
  cfg.to_kv().save(summary.output_dir / "config.cfg", {"experiment configuration echo"});

  summary.repetitions.assign(std::size_t(cfg.repetitions), {});
  const int n_workers = std::max(
      1, cfg.workers > 0 ? cfg.workers
                         : std::min<int>(cfg.repetitions, int(std::thread::hardware_concurrency())));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= cfg.repetitions) return;
      char name[16];
      std::snprintf(name, sizeof(name), "rep_%03d", r);
      const fs::path rep_dir = summary.output_dir / name;
      auto& slot = summary.repetitions[std::size_t(r)];
      try {
        slot = run_repetition(cfg, r, rep_dir);
      } catch (const std::exception& e) {
        slot.repetition = r;
        slot.ok = false;
        slot.error = e.what();
        std::ofstream err(rep_dir / "error.txt");
        err << e.what() << '\n';
      }
    }
  };
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < n_workers; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (const auto& rep : summary.repetitions)
    if (!rep.ok) {
      ++summary.failures;
      std::cerr << "repetition " << rep.repetition << " failed: " << rep.error << '\n';
    }

  // merged tables, ordered by (repetition, architecture ordinal)
  auto merge = [&](const char* file) {
    CsvWriter w(summary.output_dir / file,
                {"experiment", "architecture", "repetition", "metric", "value"});
    for (const auto& rep : summary.repetitions) {
      if (!rep.ok) continue;
      char name[16];
      std::snprintf(name, sizeof(name), "rep_%03d", rep.repetition);
      const CsvTable t = CsvTable::load(summary.output_dir / name / file);
      for (const auto& row : t.rows) w.write_row(row);
    }
  };
  merge("metrics.csv");
  merge("timings.csv");

  // Table-style aggregate: mean and standard deviation of ESS/s, ESS, and
  // sampling time per architecture across repetitions
  {
    CsvWriter w(summary.output_dir / "aggregate.csv",
                {"architecture", "repetitions", "mean_ess_per_s", "sd_ess_per_s", "mean_ess",
                 "sd_ess", "mean_time_s", "sd_time_s"});
    for (const auto& arch : cfg.architectures) {
      std::vector<double> ess_s, ess_v, time_s;
      for (const auto& rep : summary.repetitions) {
        if (!rep.ok) continue;
        for (const auto& row : rep.arch_rows) {
          if (row.arch.name() != arch.name()) continue;
          ess_v.push_back(row.ess_value);
          time_s.push_back(row.sampling_seconds);
          ess_s.push_back(row.ess_value / row.sampling_seconds);
        }
      }
      if (ess_v.empty()) continue;
      w.field(arch.name());
      w.field(long(ess_v.size()));
      w.field(mean(ess_s));
      w.field(sample_sd(ess_s));
      w.field(mean(ess_v));
      w.field(sample_sd(ess_v));
      w.field(mean(time_s));
      w.field(sample_sd(time_s));
      w.end_row();
    }
  }
  return summary;
}

}  // namespace patrac
