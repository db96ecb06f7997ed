// Command-line front end: data generation, training, posterior sampling,
// diagnostics, and the full repetition pipeline.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "patrac/experiment.hpp"

namespace fs = std::filesystem;
using namespace patrac;

namespace {

// Options shared by several subcommands, bound onto an ExperimentConfig.
struct ConfigBinding {
  std::string config_path;
  std::string experiment = "toy";
  std::string architectures;
  std::string shape;
  std::string taus;
};

void add_experiment_options(CLI::App* cmd, ExperimentConfig& cfg, ConfigBinding& bind) {
  cmd->add_option("--config", bind.config_path, "flat key = value configuration file");
  cmd->add_option("--experiment", bind.experiment, "experiment: toy, abalone, custom")
      ->capture_default_str();
  cmd->add_option("--arch", bind.architectures,
                  "architectures, e.g. full,mix:5,sep:2,out:12");
  cmd->add_option("--shape", bind.shape, "layer sizes, e.g. 1,50,50,1");
  cmd->add_option("--repetitions", cfg.repetitions, "independent repetitions")
      ->capture_default_str();
  cmd->add_option("--base-seed", cfg.base_seed, "repetition r uses seed base_seed + r")
      ->capture_default_str();
  cmd->add_option("--burn-in-scale", cfg.burn_in_scale,
                  "scales the three burn-in phase lengths (1 = full schedule)")
      ->capture_default_str();
  cmd->add_option("--output-dir", cfg.output_dir, "artifact directory")->capture_default_str();
  cmd->add_option("--workers", cfg.workers, "repetition worker threads (0 = cores)")
      ->capture_default_str();
  cmd->add_option("--n-train", cfg.n_train, "toy training points")->capture_default_str();
  cmd->add_option("--n-test", cfg.n_test, "toy test points")->capture_default_str();
  cmd->add_option("--abalone-path", cfg.abalone_path, "abalone CSV (UCI layout)");
  cmd->add_option("--train-data", cfg.train_data, "custom training data CSV");
  cmd->add_option("--test-data", cfg.test_data, "custom test data CSV");
  cmd->add_option("--noise-variance", cfg.likelihood.noise_variance,
                  "observation noise variance")
      ->capture_default_str();
  cmd->add_option("--lr", cfg.train.learning_rate, "Adam learning rate")->capture_default_str();
  cmd->add_option("--l2", cfg.train.l2_penalty, "L2 penalty weight")->capture_default_str();
  cmd->add_option("--patience", cfg.train.patience,
                  "consecutive non-improving steps before stopping")
      ->capture_default_str();
  cmd->add_option("--max-steps", cfg.train.max_steps, "training step cap")
      ->capture_default_str();
  cmd->add_option("--n-samples", cfg.sampler.n_samples, "post-burn-in sampling steps")
      ->capture_default_str();
  cmd->add_option("--thin", cfg.sampler.thin, "archive every thin-th draw")
      ->capture_default_str();
  cmd->add_option("--probe-x", cfg.sampler.probe_x, "traced probe input value")
      ->capture_default_str();
  cmd->add_option("--taus", bind.taus, "coverage levels, e.g. 0.01,0.05,0.35");
  cmd->add_option("--max-lag", cfg.eval.max_lag, "autocorrelation lag cap for the ESS")
      ->capture_default_str();
  cmd->add_option("--ess-grid-size", cfg.ess_grid_size, "ESS evaluation grid size")
      ->capture_default_str();
  cmd->add_flag("--full-trace", cfg.full_trace, "persist per-step trace scalars");
}

// Merge precedence: built-in defaults < config file < command-line flags.
ExperimentConfig resolve_config(const CLI::App* cmd, ExperimentConfig& flags,
                                const ConfigBinding& bind) {
  ExperimentKind kind = parse_experiment_kind(bind.experiment);
  ExperimentConfig cfg = ExperimentConfig::defaults_for(kind);
  if (!bind.config_path.empty()) {
    KeyValues kv = KeyValues::load(bind.config_path);
    cfg = ExperimentConfig::from_kv(kv);
    if (cmd->count("--experiment") && cfg.experiment != kind)
      throw ConfigError("--experiment conflicts with the config file");
  }
  auto flag = [&](const char* name) { return cmd->count(name) > 0; };
  if (flag("--arch")) cfg.architectures = parse_architectures(bind.architectures);
  if (flag("--shape")) cfg.shape = NetworkShape::mlp(parse_int_list(bind.shape, "--shape"));
  if (flag("--repetitions")) cfg.repetitions = flags.repetitions;
  if (flag("--base-seed")) cfg.base_seed = flags.base_seed;
  if (flag("--burn-in-scale")) cfg.burn_in_scale = flags.burn_in_scale;
  if (flag("--output-dir")) cfg.output_dir = flags.output_dir;
  if (flag("--workers")) cfg.workers = flags.workers;
  if (flag("--n-train")) cfg.n_train = flags.n_train;
  if (flag("--n-test")) cfg.n_test = flags.n_test;
  if (flag("--abalone-path")) cfg.abalone_path = flags.abalone_path;
  if (flag("--train-data")) cfg.train_data = flags.train_data;
  if (flag("--test-data")) cfg.test_data = flags.test_data;
  if (flag("--noise-variance")) cfg.likelihood.noise_variance = flags.likelihood.noise_variance;
  if (flag("--lr")) cfg.train.learning_rate = flags.train.learning_rate;
  if (flag("--l2")) cfg.train.l2_penalty = flags.train.l2_penalty;
  if (flag("--patience")) cfg.train.patience = flags.train.patience;
  if (flag("--max-steps")) cfg.train.max_steps = flags.train.max_steps;
  if (flag("--n-samples")) cfg.sampler.n_samples = flags.sampler.n_samples;
  if (flag("--thin")) cfg.sampler.thin = flags.sampler.thin;
  if (flag("--probe-x")) cfg.sampler.probe_x = flags.sampler.probe_x;
  if (flag("--max-lag")) cfg.eval.max_lag = flags.eval.max_lag;
  if (flag("--ess-grid-size")) cfg.ess_grid_size = flags.ess_grid_size;
  if (flag("--full-trace")) cfg.full_trace = flags.full_trace;
  if (cmd->count("--taus")) {
    cfg.eval.taus.clear();
    for (const auto& tok : split(bind.taus, ','))
      cfg.eval.taus.push_back(parse_double(trim(tok), "--taus"));
  }
  return cfg;
}

int cmd_gen_data(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  Dataset train, test;
  if (cfg.experiment == ExperimentKind::toy) {
    ToyData td = gen_toy(cfg.base_seed, cfg.n_train, cfg.n_test);
    train = std::move(td.train);
    test = std::move(td.test);
  } else if (cfg.experiment == ExperimentKind::abalone) {
    AbaloneData ad = load_abalone(cfg.abalone_path, cfg.base_seed);
    train = std::move(ad.train);
    test = std::move(ad.test);
  } else {
    throw ConfigError("gen-data supports the toy and abalone experiments");
  }
  write_dataset(fs::path(cfg.output_dir) / "train.csv", train);
  write_dataset(fs::path(cfg.output_dir) / "test.csv", test);
  std::cout << "wrote " << train.size() << " training and " << test.size()
            << " test points under " << cfg.output_dir << '\n';
  return 0;
}

int cmd_train(const ExperimentConfig& cfg) {
  Dataset data = read_dataset(cfg.train_data);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.base_seed;
  ParamSet init = random_init(cfg.shape, tc.seed, tc.init_scale);
  TrainResult res = train(init, cfg.shape, data, cfg.likelihood, tc);
  fs::create_directories(cfg.output_dir);
  write_params(fs::path(cfg.output_dir) / "trained_params.csv", cfg.shape, res.params);
  detail::write_loss_trace(fs::path(cfg.output_dir) / "loss_trace.csv", res.loss_trace);
  std::cout << "trained for " << res.steps << " steps, best loss " << res.best_loss << '\n';
  return 0;
}

int cmd_sample(const ExperimentConfig& cfg, const std::string& params_path) {
  if (cfg.architectures.size() != 1)
    throw ConfigError("sample runs one architecture at a time");
  auto [shape, trained] = read_params(params_path);
  Dataset data = read_dataset(cfg.train_data);
  data.require_matches(shape, "sample");

  const PriorSpec fitted = fit_hyperparams(trained, shape);
  const ArchSpec arch = cfg.architectures.front();
  BuiltArch built = build_architecture(arch, shape, trained, data, cfg.likelihood, fitted,
                                       cfg.base_seed);
  SamplerConfig sc = cfg.sampler;
  sc.seed = cfg.base_seed;
  sc.burn_in_scale = cfg.burn_in_scale;
  PriorDiagonal prior(built.prior, built.sample_shape, built.mask);

  Dataset test;
  if (!cfg.test_data.empty()) test = read_dataset(cfg.test_data);
  ExperimentConfig grid_cfg = cfg;
  grid_cfg.shape = shape;
  const std::vector<double> grid =
      detail::ess_grid_points(grid_cfg, cfg.test_data.empty() ? data : test);

  SampleArchive ar = run_chain(built.init, *built.model, prior, sc, grid, true);
  const double ess_value = [&] {
    GridEval ev = GridEval::from_columns(std::move(ar.stepwise_grid));
    return ess(ev, cfg.eval.max_lag, cfg.eval.degenerate_floor);
  }();

  const fs::path dir = fs::path(cfg.output_dir) / arch.name();
  detail::write_archive(dir, built.sample_shape, built.mask, ar, cfg.full_trace);
  write_params(dir / "base_params.csv", built.sample_shape, built.init);
  write_mask(dir / "mask.csv", built.sample_shape, built.mask);
  write_permutations(dir / "perms.csv", built.sample_shape, built.mask);
  {
    KeyValues kv;
    kv.set("architecture", arch.name());
    kv.set("arch_kind", std::string(arch.kind == ArchSpec::full  ? "full"
                                    : arch.kind == ArchSpec::sep ? "sep"
                                    : arch.kind == ArchSpec::out ? "out"
                                                                 : "mix"));
    kv.set("arch_param", arch.param);
    kv.set("experiment", std::string(to_string(cfg.experiment)));
    kv.set("repetition", 0);
    kv.set("chain_seed", (unsigned long long)sc.seed);
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
      kv.set("opt_params", fs::absolute(params_path).string());
      kv.set("opt_shape", shape_to_string(shape));
    }
    kv.save(dir / "archive.cfg", {"sample archive manifest"});
  }
  {
    CsvWriter w(dir / "metrics.csv", {"architecture", "metric", "value"});
    auto emit = [&](const std::string& metric, double v) {
      w.field(arch.name());
      w.field(metric);
      w.field(v);
      w.end_row();
    };
    emit("bayes_count", built.mask.bayes_count);
    emit("prior_scale", built.prior.scale);
    emit("ess", ess_value);
    emit("accept_rate", double(ar.accepted_steps) / double(ar.n_steps));
  }
  {
    CsvWriter w(dir / "timings.csv", {"architecture", "metric", "value"});
    w.field(arch.name());
    w.field(std::string("sampling_seconds"));
    w.field(ar.sampling_seconds);
    w.end_row();
    w.field(arch.name());
    w.field(std::string("ess_per_s"));
    w.field(ess_value / ar.sampling_seconds);
    w.end_row();
  }
  std::cout << arch.name() << ": " << ar.draw_count() << " draws, K=" << built.mask.bayes_count
            << ", ESS=" << ess_value << " in " << ar.sampling_seconds << " s\n";
  return 0;
}

int cmd_diagnose(const ExperimentConfig& cfg, const std::string& archive_dir,
                 const std::string& truth_kind) {
  LoadedArchive la = load_archive(archive_dir);
  auto model = make_eval_model(la, archive_dir);
  Dataset test = read_dataset(cfg.test_data);

  std::vector<double> points(test.inputs.begin(), test.inputs.end());
  GridEval eval = eval_archive(la, *model, std::move(points), test.size());

  std::vector<double> truth;
  if (truth_kind == "sin") {
    truth.resize(test.size());
    for (std::size_t k = 0; k < test.size(); ++k) truth[k] = std::sin(test.input(k)[0]);
  } else if (truth_kind == "targets") {
    truth.assign(test.targets.begin(), test.targets.end());
  } else {
    throw ConfigError("--truth must be 'sin' or 'targets'");
  }

  std::vector<double> targets(test.targets.begin(), test.targets.end());
  const double nll = predictive_nll(eval, targets, la.noise_variance);
  const std::vector<double> pit = pit_values(eval, targets);
  const double ks = ks_uniform(pit);

  const fs::path dir(archive_dir);
  CsvWriter w(dir / "eval_metrics.csv", {"architecture", "metric", "value"});
  const std::string arch = la.meta.get_string("architecture");
  auto emit = [&](const std::string& metric, double v) {
    w.field(arch);
    w.field(metric);
    w.field(v);
    w.end_row();
    std::cout << metric << " = " << format_double(v) << '\n';
  };
  for (double tau : cfg.eval.taus) emit("coverage_" + format_short(tau), coverage(eval, truth, tau));
  emit("predictive_nll", nll);
  emit("pit_ks", ks);
  {
    CsvWriter pw(dir / "pit.csv", {"point", "pit"});
    for (std::size_t k = 0; k < pit.size(); ++k) {
      pw.field(long(k));
      pw.field(pit[k]);
      pw.end_row();
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"partial trace-class Bayesian neural networks"};
  app.require_subcommand(1);

  ExperimentConfig flags;
  ConfigBinding bind;

  auto* gen = app.add_subcommand("gen-data", "generate or ingest a data set");
  auto* tr = app.add_subcommand("train", "train the network on a data CSV");
  auto* sa = app.add_subcommand("sample", "sample one architecture's posterior");
  auto* di = app.add_subcommand("diagnose", "evaluate a sample archive on test data");
  auto* ex = app.add_subcommand("experiment", "full pipeline with repetitions");
  std::string params_path, archive_dir, truth_kind = "targets";
  sa->add_option("--params", params_path, "trained parameter CSV")->required();
  di->add_option("--archive", archive_dir, "archive directory from sample/experiment")
      ->required();
  di->add_option("--truth", truth_kind, "coverage reference: sin or targets")
      ->capture_default_str();
  for (CLI::App* cmd : {gen, tr, sa, di, ex}) add_experiment_options(cmd, flags, bind);

  CLI11_PARSE(app, argc, argv);

  try {
    CLI::App* cmd = app.get_subcommands().front();
    ExperimentConfig cfg = resolve_config(cmd, flags, bind);
    if (cmd == gen) return cmd_gen_data(cfg);
    if (cmd == tr) {
      if (cfg.train_data.empty()) throw ConfigError("train needs --train-data");
      return cmd_train(cfg);
    }
    if (cmd == sa) {
      if (cfg.train_data.empty()) throw ConfigError("sample needs --train-data");
      return cmd_sample(cfg, params_path);
    }
    if (cmd == di) {
      if (cfg.test_data.empty()) throw ConfigError("diagnose needs --test-data");
      return cmd_diagnose(cfg, archive_dir, truth_kind);
    }
    cfg.validate();
    const ExperimentSummary summary = run_experiment(cfg);
    std::cout << "completed " << (summary.repetitions.size() - std::size_t(summary.failures))
              << "/" << summary.repetitions.size() << " repetitions under "
              << summary.output_dir.string() << '\n';
    return summary.failures > 0 ? 1 : 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
