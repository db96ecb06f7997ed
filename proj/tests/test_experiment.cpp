#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "patrac/experiment.hpp"

using namespace patrac;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "patrac_exp_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

// UCI-layout abalone file with the expected 4177 rows
fs::path synth_abalone() {
  const fs::path path = fs::temp_directory_path() / "patrac_exp_test" / "abalone.csv";
  fs::create_directories(path.parent_path());
  std::ofstream f(path);
  Rng rng(555);
  const char* sexes[3] = {"M", "F", "I"};
  for (int k = 0; k < 4177; ++k) {
    f << sexes[k % 3];
    for (int c = 0; c < 7; ++c) f << ',' << format_double(0.5 + 0.1 * rng.normal());
    f << ',' << (5 + int(rng.next_u64() % 20)) << '\n';
  }
  return path;
}

double metric_value(const CsvTable& t, const std::string& arch, const std::string& metric) {
  const int ca = t.column("architecture"), cm = t.column("metric"), cv = t.column("value");
  for (const auto& row : t.rows)
    if (row[std::size_t(ca)] == arch && row[std::size_t(cm)] == metric)
      return parse_double(row[std::size_t(cv)], "metrics");
  FAIL("metric not found: " + arch + "/" + metric);
  return 0.0;
}

}  // namespace

TEST_CASE("gen_toy: ranges, determinism, and the noise law") {
  const ToyData d = gen_toy(7, 100, 1000);
  CHECK(d.train.size() == 100);
  CHECK(d.test.size() == 1000);
  for (double x : d.train.inputs) {
    CHECK(x >= -5.0);
    CHECK(x <= 5.0);
  }
  const ToyData again = gen_toy(7, 100, 1000);
  CHECK(again.train.inputs == d.train.inputs);
  CHECK(again.test.targets == d.test.targets);

  // noise has mean zero: law of large numbers over 10^6 draws
  const ToyData big = gen_toy(8, 1'000'000, 1);
  double acc = 0.0;
  for (std::size_t k = 0; k < big.train.size(); ++k)
    acc += big.train.targets[k] - std::sin(big.train.inputs[k]);
  CHECK(std::abs(acc / double(big.train.size())) < 0.005);
}

TEST_CASE("load_abalone: split sizes, encoding, determinism") {
  const fs::path path = synth_abalone();
  const AbaloneData d = load_abalone(path, 3);
  CHECK(d.train.size() == 2923);
  CHECK(d.test.size() == 1254);
  CHECK(d.train.input_dim == 8);
  CHECK(d.test.input_dim == 8);

  // training-split standardisation: mean 0, sdev 1
  for (int c = 0; c < 8; ++c) {
    double m = 0.0, s = 0.0;
    for (std::size_t r = 0; r < d.train.size(); ++r) m += d.train.inputs[r * 8 + std::size_t(c)];
    m /= double(d.train.size());
    for (std::size_t r = 0; r < d.train.size(); ++r) {
      const double x = d.train.inputs[r * 8 + std::size_t(c)] - m;
      s += x * x;
    }
    s = std::sqrt(s / double(d.train.size() - 1));
    CHECK(std::abs(m) < 1e-10);
    CHECK(std::abs(s - 1.0) < 1e-10);
  }

  const AbaloneData again = load_abalone(path, 3);
  CHECK(again.train.inputs == d.train.inputs);
  const AbaloneData other = load_abalone(path, 4);
  CHECK(other.train.targets != d.train.targets);
}

TEST_CASE("load_abalone: malformed input is reported with its line") {
  const fs::path dir = fresh_dir("abalone_bad");
  const fs::path path = dir / "bad.csv";
  {
    std::ofstream f(path);
    f << "M,0.1,0.2,0.3,0.4,0.5,0.6,0.7,9\n";
    f << "X,0.1,0.2,0.3,0.4,0.5,0.6,0.7,9\n";
  }
  try {
    load_abalone(path, 1);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  {
    std::ofstream f(path);
    f << "M,0.1,0.2,0.3\n";
  }
  try {
    load_abalone(path, 1);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 1") != std::string::npos);
    CHECK(msg.find("9") != std::string::npos);
  }
}

TEST_CASE("architecture specs parse and validate") {
  CHECK(ArchSpec::parse("full").kind == ArchSpec::full);
  CHECK(ArchSpec::parse("mix:5").param == 5);
  CHECK(ArchSpec::parse("sep:2").name() == "sep_2");
  CHECK(ArchSpec::parse("out:12").name() == "out_12");
  CHECK_THROWS_AS(ArchSpec::parse("mix"), ConfigError);
  CHECK_THROWS_AS(ArchSpec::parse("banana:2"), ConfigError);
  const auto list = parse_architectures("full, mix:2 ,sep:5");
  CHECK(list.size() == 3);
}

TEST_CASE("experiment config round-trips through the key-value format") {
  ExperimentConfig cfg = ExperimentConfig::defaults_for(ExperimentKind::toy);
  cfg.architectures = parse_architectures("full,mix:5,out:12");
  cfg.repetitions = 3;
  cfg.base_seed = 99;
  cfg.burn_in_scale = 0.25;
  cfg.sampler.n_samples = 4000;
  cfg.sampler.thin = 8;
  cfg.train.learning_rate = 3e-4;
  cfg.eval.taus = {0.1, 0.5};
  const ExperimentConfig back = ExperimentConfig::from_kv(cfg.to_kv());
  CHECK(back.architectures.size() == 3);
  CHECK(back.architectures[1].name() == "mix_5");
  CHECK(back.repetitions == 3);
  CHECK(back.base_seed == 99);
  CHECK(back.burn_in_scale == 0.25);
  CHECK(back.sampler.n_samples == 4000);
  CHECK(back.sampler.thin == 8);
  CHECK(back.train.learning_rate == 3e-4);
  CHECK(back.eval.taus == std::vector<double>{0.1, 0.5});
  CHECK(back.shape.layer_sizes == cfg.shape.layer_sizes);
}

TEST_CASE("experiment config validation rejects bad setups") {
  ExperimentConfig cfg = ExperimentConfig::defaults_for(ExperimentKind::toy);
  cfg.architectures = parse_architectures("mix:60");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = ExperimentConfig::defaults_for(ExperimentKind::toy);
  cfg.sampler.n_samples = 500;  // below max_lag + 1
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = ExperimentConfig::defaults_for(ExperimentKind::custom);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);  // missing data paths
}

TEST_CASE("pipeline smoke: toy full BNN produces the archive and diagnostics") {
  ExperimentConfig cfg = ExperimentConfig::defaults_for(ExperimentKind::toy);
  cfg.output_dir = fresh_dir("smoke").string();
  cfg.architectures = parse_architectures("full");
  cfg.repetitions = 1;
  cfg.base_seed = 17;
  cfg.burn_in_scale = 0.01;
  cfg.sampler.n_samples = 5000;
  cfg.sampler.thin = 10;
  cfg.train.learning_rate = 1e-3;  // unit-test scale training
  cfg.train.max_steps = 300;
  cfg.workers = 1;

  const ExperimentSummary summary = run_experiment(cfg);
  REQUIRE(summary.failures == 0);

  const fs::path rep = fs::path(cfg.output_dir) / "rep_000";
  for (const char* f : {"train.csv", "test.csv", "trained_params.csv", "loss_trace.csv",
                        "prior.cfg", "metrics.csv", "timings.csv", "manifest.cfg"})
    CHECK(fs::exists(rep / f));
  for (const char* f : {"draws.csv", "grid.csv", "grid_eval.csv", "trace.csv", "phases.csv",
                        "delta_events.csv", "mask.csv", "perms.csv", "base_params.csv",
                        "pit.csv", "archive.cfg"})
    CHECK(fs::exists(rep / "full" / f));
  CHECK(fs::exists(fs::path(cfg.output_dir) / "aggregate.csv"));

  const CsvTable draws = CsvTable::load(rep / "full" / "draws.csv");
  CHECK(draws.rows.size() == 500);

  const CsvTable metrics = CsvTable::load(rep / "metrics.csv");
  CHECK(metric_value(metrics, "full", "bayes_count") == double(param_count(cfg.shape)));
  CHECK(metric_value(metrics, "full", "ess") > 0.0);
  CHECK(std::isfinite(metric_value(metrics, "full", "predictive_nll")));
  CHECK(metric_value(metrics, "full", "coverage_0.05") >= 0.0);

  // the sample archive reloads and re-evaluates
  const LoadedArchive la = load_archive(rep / "full");
  CHECK(la.draw_count() == 500);
  auto model = make_eval_model(la, rep / "full");
  const GridEval eval = eval_archive(la, *model, {0.0, 1.0}, 2);
  CHECK(eval.points() == 2);
  CHECK(eval.draws() == 500);
}

TEST_CASE("mask summaries report the paper's Bayesian parameter counts") {
  ExperimentConfig cfg = ExperimentConfig::defaults_for(ExperimentKind::toy);
  cfg.output_dir = fresh_dir("masks").string();
  cfg.architectures = parse_architectures("mix:2,mix:5,sep:2,out:12");
  cfg.repetitions = 1;
  cfg.base_seed = 23;
  cfg.burn_in_scale = 0.0;
  cfg.sampler.n_samples = 300;
  cfg.sampler.thin = 10;
  cfg.eval.max_lag = 50;
  cfg.n_test = 100;
  cfg.train.learning_rate = 1e-3;
  cfg.train.max_steps = 100;
  cfg.workers = 1;

  const ExperimentSummary summary = run_experiment(cfg);
  REQUIRE(summary.failures == 0);
  const CsvTable metrics = CsvTable::load(fs::path(cfg.output_dir) / "metrics.csv");
  CHECK(metric_value(metrics, "mix_2", "bayes_count") == 13.0);
  CHECK(metric_value(metrics, "mix_5", "bayes_count") == 46.0);
  CHECK(metric_value(metrics, "sep_2", "bayes_count") == 13.0);
  CHECK(metric_value(metrics, "out_12", "bayes_count") == 13.0);

  const CsvTable agg = CsvTable::load(fs::path(cfg.output_dir) / "aggregate.csv");
  CHECK(agg.rows.size() == 4);
  CHECK(agg.header == std::vector<std::string>{"architecture", "repetitions", "mean_ess_per_s",
                                               "sd_ess_per_s", "mean_ess", "sd_ess",
                                               "mean_time_s", "sd_time_s"});
}

TEST_CASE("a repetition replayed from its manifest reproduces every numeric artifact") {
  ExperimentConfig cfg = ExperimentConfig::defaults_for(ExperimentKind::toy);
  cfg.shape = NetworkShape::mlp({1, 8, 8, 1});
  cfg.output_dir = fresh_dir("replay_a").string();
  cfg.architectures = parse_architectures("full,sep:2,out:3,mix:2");
  cfg.repetitions = 1;
  cfg.base_seed = 31;
  cfg.burn_in_scale = 0.002;
  cfg.sampler.n_samples = 1200;
  cfg.sampler.thin = 12;
  cfg.eval.max_lag = 100;
  cfg.ess_grid_size = 20;
  cfg.n_test = 150;
  cfg.train.learning_rate = 1e-3;
  cfg.train.max_steps = 200;
  cfg.workers = 1;

  REQUIRE(run_experiment(cfg).failures == 0);
  const fs::path rep_a = fs::path(cfg.output_dir) / "rep_000";

  ExperimentConfig replay = ExperimentConfig::from_kv(KeyValues::load(rep_a / "manifest.cfg"));
  replay.output_dir = fresh_dir("replay_b").string();
  REQUIRE(run_experiment(replay).failures == 0);
  const fs::path rep_b = fs::path(replay.output_dir) / "rep_000";

  std::vector<std::string> files{"train.csv",   "test.csv",   "trained_params.csv",
                                 "loss_trace.csv", "prior.cfg", "metrics.csv"};
  for (const char* arch : {"full", "sep_2", "out_3", "mix_2"})
    for (const char* f : {"draws.csv", "grid.csv", "grid_eval.csv", "trace.csv", "phases.csv",
                          "delta_events.csv", "mask.csv", "perms.csv", "base_params.csv",
                          "pit.csv"})
      files.push_back(std::string(arch) + "/" + f);
  for (const auto& f : files) {
    INFO("file: " << f);
    CHECK(slurp(rep_a / f) == slurp(rep_b / f));
  }
}

TEST_CASE("a failing repetition is reported and leaves an error file") {
  ExperimentConfig cfg = ExperimentConfig::defaults_for(ExperimentKind::toy);
  cfg.shape = NetworkShape::mlp({2, 8, 8, 1});  // toy data is 1-d: must fail
  cfg.output_dir = fresh_dir("failing").string();
  cfg.repetitions = 1;
  cfg.sampler.n_samples = 2000;
  cfg.workers = 1;

  const ExperimentSummary summary = run_experiment(cfg);
  CHECK(summary.failures == 1);
  CHECK(!summary.repetitions.front().ok);
  CHECK(fs::exists(fs::path(cfg.output_dir) / "rep_000" / "error.txt"));
}
