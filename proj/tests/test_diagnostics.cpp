#include <catch2/catch_amalgamated.hpp>

#include <numeric>

#include "patrac/diagnostics.hpp"
#include "patrac/rng.hpp"

using namespace patrac;

namespace {

GridEval iid_normal(std::size_t n, std::size_t g, Rng& rng) {
  std::vector<std::vector<double>> cols(g, std::vector<double>(n));
  for (auto& col : cols)
    for (double& x : col) x = rng.normal();
  return GridEval::from_columns(std::move(cols));
}

GridEval ar1(std::size_t n, std::size_t g, double coef, Rng& rng) {
  std::vector<std::vector<double>> cols(g, std::vector<double>(n));
  const double noise = std::sqrt(1.0 - coef * coef);  // unit stationary variance
  for (auto& col : cols) {
    col[0] = rng.normal();
    for (std::size_t t = 1; t < n; ++t) col[t] = coef * col[t - 1] + noise * rng.normal();
  }
  return GridEval::from_columns(std::move(cols));
}

}  // namespace

TEST_CASE("ess: independent draws give back the sample size") {
  Rng rng(101);
  const std::size_t n = 100'000;
  const GridEval eval = iid_normal(n, 10, rng);
  const double e = ess(eval, 1000);
  CHECK(std::abs(e - double(n)) < 0.10 * double(n));
}

TEST_CASE("ess: AR(1) chains match the analytic autocorrelation sum") {
  Rng rng(102);
  const std::size_t n = 100'000;
  const GridEval eval = ar1(n, 10, 0.5, rng);
  // sum of 0.5^k over k >= 1 is 1, so ESS/N = (1-c)/(1+c) = 1/3
  const double ratio = ess(eval, 1000) / double(n);
  CHECK(std::abs(ratio - 1.0 / 3.0) < 0.15 / 3.0);
}

TEST_CASE("ess: degenerate grid points") {
  Rng rng(103);
  SECTION("all constant columns fail") {
    GridEval eval = GridEval::from_columns(
        {std::vector<double>(5000, 1.5), std::vector<double>(5000, -0.2)});
    CHECK_THROWS_AS(ess(eval, 100), DegenerateChainError);
  }
  SECTION("constant columns are excluded, not fatal") {
    GridEval live = iid_normal(5000, 2, rng);
    GridEval mixed = live;
    mixed.cols.push_back(std::vector<double>(5000, 3.0));
    CHECK(ess(mixed, 100) == Catch::Approx(ess(live, 100)));
  }
}

TEST_CASE("ess: affine transforms leave the estimate unchanged") {
  Rng rng(104);
  GridEval eval = iid_normal(20'000, 4, rng);
  const double base = ess(eval, 200);
  for (auto& col : eval.cols)
    for (double& x : col) x = -3.7 * x + 11.0;
  CHECK(ess(eval, 200) == Catch::Approx(base).epsilon(1e-9));
}

TEST_CASE("ess: preconditions") {
  Rng rng(105);
  GridEval eval = iid_normal(500, 2, rng);
  CHECK_THROWS_AS(ess(eval, 1000), ConfigError);  // need n > max_lag + 1
  CHECK_THROWS_AS(ess(GridEval{}, 10), ConfigError);
}

TEST_CASE("quantile: order statistics") {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 1.0);
  CHECK(quantile(v, 0.5) == 50.0);
  CHECK(quantile(v, 0.025) == 3.0);
  CHECK(quantile(v, 0.05) == 5.0);   // beta*M lands exactly on an integer
  CHECK(quantile(v, 0.975) == 98.0);
  CHECK(quantile(v, 0.999) == 100.0);
  CHECK_THROWS_AS(quantile({}, 0.5), ConfigError);
  CHECK_THROWS_AS(quantile(v, 0.0), ConfigError);
}

TEST_CASE("quantile: large-sample normal quantile") {
  Rng rng(106);
  std::vector<double> v(100'000);
  for (double& x : v) x = rng.normal();
  CHECK(std::abs(quantile(v, 0.975) - 1.959963984540054) < 0.05);
}

TEST_CASE("quantile is monotone in beta") {
  Rng rng(107);
  std::vector<double> v(777);
  for (double& x : v) x = rng.normal();
  double prev = -1e300;
  for (double beta : {0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99}) {
    const double q = quantile(v, beta);
    CHECK(q >= prev);
    prev = q;
  }
}

TEST_CASE("coverage: medians, misses, and a calibrated oracle") {
  SECTION("truth at the pointwise median is always covered") {
    std::vector<double> col(101);
    std::iota(col.begin(), col.end(), 0.0);
    GridEval eval = GridEval::from_columns({col, col});
    const std::vector<double> truth{50.0, 50.0};
    for (double tau : {0.01, 0.05, 0.35, 0.9}) CHECK(coverage(eval, truth, tau) == 1.0);
  }
  SECTION("truth above every draw is never covered") {
    std::vector<double> col(100);
    std::iota(col.begin(), col.end(), 0.0);
    GridEval eval = GridEval::from_columns({col});
    CHECK(coverage(eval, {1000.0}, 0.05) == 0.0);
  }
  SECTION("Monte Carlo calibration at tau = 0.05") {
    // calibrated-posterior oracle: at each point the truth is exchangeable
    // with the samples, so the central 95% interval covers it 95% of the time
    Rng rng(108);
    const std::size_t m = 500, g = 1000;
    std::vector<std::vector<double>> cols(g, std::vector<double>(m));
    std::vector<double> truth(g);
    for (std::size_t c = 0; c < g; ++c) {
      const double center = 2.0 * rng.normal();
      truth[c] = center + rng.normal();
      for (double& x : cols[c]) x = center + rng.normal();
    }
    const double cov = coverage(GridEval::from_columns(std::move(cols)), truth, 0.05);
    CHECK(std::abs(cov - 0.95) < 0.03);
  }
}

TEST_CASE("coverage narrows monotonically in tau") {
  Rng rng(109);
  const std::size_t m = 400, g = 300;
  std::vector<std::vector<double>> cols(g, std::vector<double>(m));
  std::vector<double> truth(g);
  for (std::size_t c = 0; c < g; ++c) {
    truth[c] = rng.normal();
    for (double& x : cols[c]) x = rng.normal();
  }
  const GridEval eval = GridEval::from_columns(std::move(cols));
  const double c35 = coverage(eval, truth, 0.35);
  const double c05 = coverage(eval, truth, 0.05);
  const double c01 = coverage(eval, truth, 0.01);
  CHECK(c35 <= c05);
  CHECK(c05 <= c01);
}

TEST_CASE("predictive_nll: exact mixtures") {
  SECTION("all draws exact, one point, unit variance") {
    GridEval eval = GridEval::from_columns({std::vector<double>(50, 2.0)});
    CHECK(predictive_nll(eval, {2.0}, 1.0) ==
          Catch::Approx(0.91893853320467274).epsilon(1e-14));
  }
  SECTION("a single draw reduces to the plain Gaussian NLL") {
    GridEval eval = GridEval::from_columns({{1.4}});
    const double r = 0.9 - 1.4;
    const double expected = 0.5 * r * r / 2.0 + 0.5 * std::log(2.0 * std::numbers::pi * 2.0);
    CHECK(predictive_nll(eval, {0.9}, 2.0) == Catch::Approx(expected).epsilon(1e-13));
  }
  SECTION("two draws with residuals 0 and 2") {
    GridEval eval = GridEval::from_columns({{0.0, 2.0}});
    CHECK(predictive_nll(eval, {0.0}, 1.0) ==
          Catch::Approx(1.4851577027216456).epsilon(1e-13));
  }
}

TEST_CASE("predictive_nll is permutation invariant in the draws") {
  Rng rng(110);
  std::vector<double> col(200);
  for (double& x : col) x = rng.normal();
  std::vector<double> shuffled = col;
  for (std::size_t k = shuffled.size() - 1; k > 0; --k)
    std::swap(shuffled[k], shuffled[rng.next_u64() % (k + 1)]);
  const double a = predictive_nll(GridEval::from_columns({col}), {0.3}, 1.0);
  const double b = predictive_nll(GridEval::from_columns({shuffled}), {0.3}, 1.0);
  CHECK(a == Catch::Approx(b).epsilon(1e-12));
}

TEST_CASE("pit_values: extremes and calibration") {
  SECTION("targets outside the draw range") {
    GridEval eval = GridEval::from_columns({{1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}});
    const auto pit = pit_values(eval, {0.0, 10.0});
    CHECK(pit[0] == 0.0);
    CHECK(pit[1] == 1.0);
  }
  SECTION("matched draw and target distributions give uniform PIT") {
    Rng rng(111);
    const std::size_t m = 500, g = 1000;
    std::vector<std::vector<double>> cols(g, std::vector<double>(m));
    std::vector<double> targets(g);
    for (std::size_t c = 0; c < g; ++c) {
      for (double& x : cols[c]) x = rng.normal();
      targets[c] = rng.normal();
    }
    const auto pit = pit_values(GridEval::from_columns(std::move(cols)), targets);
    CHECK(ks_uniform(pit) < 0.05);
  }
}

TEST_CASE("ks_uniform basics") {
  std::vector<double> grid(1000);
  for (std::size_t k = 0; k < grid.size(); ++k) grid[k] = (double(k) + 0.5) / 1000.0;
  CHECK(ks_uniform(grid) < 0.002);
  CHECK(ks_uniform(std::vector<double>(100, 0.5)) == Catch::Approx(0.5));
}

TEST_CASE("summary statistics helpers") {
  CHECK(mean({1.0, 2.0, 3.0}) == 2.0);
  CHECK(sample_sd({1.0, 2.0, 3.0}) == Catch::Approx(1.0));
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == Catch::Approx(2.5));
}
