#include <catch2/catch_amalgamated.hpp>

#include "patrac/architectures.hpp"
#include "patrac/prior.hpp"

using namespace patrac;

namespace {

ParamSet random_params(const NetworkShape& shape, Rng& rng, double sdev = 0.5) {
  ParamSet p(shape);
  for (double& x : p.values()) x = sdev * rng.normal();
  return p;
}

}  // namespace

TEST_CASE("variance_of implements the decay law") {
  NetworkShape s = NetworkShape::mlp({1, 3, 3, 1});
  PriorSpec spec = PriorSpec::uniform(3, 2.0, 1.0, 1.0);

  CHECK(variance_of(spec, s, {ParamCoord::weight, 2, 1, 1}) == 1.0);
  CHECK(variance_of(spec, s, {ParamCoord::weight, 2, 2, 3}) == Catch::Approx(1.0 / 36.0));
  // first layer: no dependence on the source index
  CHECK(variance_of(spec, s, {ParamCoord::weight, 1, 2, 1}) == Catch::Approx(0.25));
  CHECK(variance_of(spec, s, {ParamCoord::bias, 3, 1, 0}) == 1.0);

  spec.scale = 8.0;
  CHECK(variance_of(spec, s, {ParamCoord::weight, 2, 2, 3}) == Catch::Approx(8.0 / 36.0));

  CHECK_THROWS_AS(variance_of(spec, s, {ParamCoord::weight, 2, 4, 1}), ShapeError);
  CHECK_THROWS_AS(variance_of(spec, s, {ParamCoord::weight, 4, 1, 1}), ShapeError);
  CHECK_THROWS_AS(variance_of(spec, s, {ParamCoord::bias, 1, 9, 0}), ShapeError);
}

TEST_CASE("variance_of is non-increasing in the node indices") {
  NetworkShape s = NetworkShape::mlp({2, 6, 6, 2});
  PriorSpec spec = PriorSpec::uniform(3, 1.7, 0.9, 1.3);
  for (int l = 1; l <= 3; ++l) {
    for (int i = 1; i < s.nodes(l); ++i)
      for (int j = 1; j <= s.nodes(l - 1); ++j)
        CHECK(variance_of(spec, s, {ParamCoord::weight, l, i + 1, j}) <=
              variance_of(spec, s, {ParamCoord::weight, l, i, j}));
    if (l >= 2)
      for (int i = 1; i <= s.nodes(l); ++i)
        for (int j = 1; j < s.nodes(l - 1); ++j)
          CHECK(variance_of(spec, s, {ParamCoord::weight, l, i, j + 1}) <=
                variance_of(spec, s, {ParamCoord::weight, l, i, j}));
    for (int i = 1; i < s.nodes(l); ++i)
      CHECK(variance_of(spec, s, {ParamCoord::bias, l, i + 1, 0}) <=
            variance_of(spec, s, {ParamCoord::bias, l, i, 0}));
  }
}

TEST_CASE("total prior variance equals the analytic double sum") {
  NetworkShape s = NetworkShape::mlp({3, 7, 5, 2});
  const double alpha = 1.8, s2w = 0.7, s2b = 2.2;
  PriorSpec spec = PriorSpec::uniform(3, alpha, s2w, s2b);

  auto zeta = [&](int n) {
    double acc = 0.0;
    for (int k = 1; k <= n; ++k) acc += std::pow(double(k), -alpha);
    return acc;
  };
  // layer 1 weights: s2w * d * sum_i i^-a; deeper layers factorise
  double expected = s2w * double(s.nodes(0)) * zeta(s.nodes(1));
  expected += s2w * zeta(s.nodes(2)) * zeta(s.nodes(1));
  expected += s2w * zeta(s.nodes(3)) * zeta(s.nodes(2));
  for (int l = 1; l <= 3; ++l) expected += s2b * zeta(s.nodes(l));

  const double total = total_prior_variance(spec, s, BayesMask::full(s));
  CHECK(std::abs(total - expected) < 1e-9);
}

TEST_CASE("sample_prior: empty mask returns the base untouched") {
  Rng rng(1);
  NetworkShape s = NetworkShape::mlp({1, 3, 1});
  ParamSet base = random_params(s, rng);
  PriorSpec spec = PriorSpec::uniform(2, 2.0, 1.0, 1.0);
  Rng draw(7);
  const ParamSet out = sample_prior(spec, s, BayesMask::none(s), base, draw);
  CHECK(out.values() == base.values());
}

TEST_CASE("sample_prior reproduces the coordinate variance law") {
  NetworkShape s = NetworkShape::mlp({1, 3, 3, 1});
  PriorSpec spec = PriorSpec::uniform(3, 2.0, 1.0, 1.0);
  BayesMask mask = BayesMask::full(s);
  ParamSet base(s);
  Rng rng(42);

  const int n = 100'000;
  double sum = 0.0, sq = 0.0;
  for (int k = 0; k < n; ++k) {
    const ParamSet draw = sample_prior(spec, s, mask, base, rng);
    const double v = draw.w(2, 2, 3);
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(var - 1.0 / 36.0) < 0.05 / 36.0);
}

TEST_CASE("sample_prior touches exactly the Bayesian coordinates of a mix mask") {
  Rng rng(4);
  NetworkShape s = NetworkShape::mlp({1, 50, 50, 1});
  ParamSet trained = random_params(s, rng);
  MaskedNetwork net = build_mix(trained, s, 2);
  PriorSpec spec = PriorSpec::uniform(3, 2.0, 1.0, 1.0);

  Rng draw_rng(11);
  for (int rep = 0; rep < 5; ++rep) {
    const ParamSet draw = sample_prior(spec, s, net.mask, net.params, draw_rng);
    std::size_t diff = 0;
    for (std::size_t k = 0; k < draw.size(); ++k) diff += draw[k] != net.params[k];
    CHECK(diff == 13);
  }
}

TEST_CASE("log_prior sums Gaussian log densities over the mask") {
  // single coordinate, value 0, variance 1
  NetworkShape s1 = NetworkShape::mlp({1, 1});
  PriorSpec unit = PriorSpec::uniform(1, 2.0, 1.0, 1.0);
  BayesMask m1 = BayesMask::none(s1);
  ParamSet p1(s1);
  m1.flags[p1.w_index(1, 1, 1)] = 1;
  m1.recount();
  CHECK(log_prior(unit, s1, m1, p1) == Catch::Approx(-0.91893853320467274).epsilon(1e-14));

  // empty mask contributes nothing
  CHECK(log_prior(unit, s1, BayesMask::none(s1), p1) == 0.0);

  // two coordinates with values (1,2) and variances (1,4)
  PriorSpec spec = PriorSpec::uniform(1, 2.0, 1.0, 4.0);
  BayesMask m2 = BayesMask::none(s1);
  ParamSet p2(s1);
  m2.flags[p2.w_index(1, 1, 1)] = 1;  // variance 1
  m2.flags[p2.b_index(1, 1)] = 1;     // variance 4
  m2.recount();
  p2.w(1, 1, 1) = 1.0;
  p2.b(1, 1) = 2.0;
  CHECK(log_prior(spec, s1, m2, p2) == Catch::Approx(-3.5310242469692908).epsilon(1e-14));
}

TEST_CASE("covariance operator: diagonal multiply and its square root") {
  NetworkShape s = NetworkShape::mlp({1, 4, 4, 1});
  PriorSpec spec = PriorSpec::uniform(3, 2.0, 1.0, 1.0);

  SECTION("single flagged coordinate") {
    BayesMask m = BayesMask::none(s);
    ParamSet ones(s);
    for (double& x : ones.values()) x = 1.0;
    m.flags[ones.w_index(1, 2, 1)] = 1;  // variance 1/4
    m.recount();
    const ParamSet cv = apply_C(spec, s, m, ones);
    for (std::size_t k = 0; k < cv.size(); ++k) {
      if (k == ones.w_index(1, 2, 1))
        CHECK(cv[k] == Catch::Approx(0.25));
      else
        CHECK(cv[k] == 0.0);
    }
  }

  SECTION("sqrtC twice equals C and the quadratic forms agree") {
    Rng rng(17);
    BayesMask m = BayesMask::full(s);
    for (int rep = 0; rep < 10; ++rep) {
      ParamSet v = random_params(s, rng, 1.0);
      const ParamSet via_sqrt = apply_sqrtC(spec, s, m, apply_sqrtC(spec, s, m, v));
      const ParamSet direct = apply_C(spec, s, m, v);
      for (std::size_t k = 0; k < v.size(); ++k)
        CHECK(std::abs(via_sqrt[k] - direct[k]) <= 1e-12 * std::max(1.0, std::abs(direct[k])));

      // |sqrtC v|^2 == <v, C v> through two independent evaluation routes
      const ParamSet sv = apply_sqrtC(spec, s, m, v);
      double lhs = 0.0, rhs = 0.0;
      for (std::size_t k = 0; k < v.size(); ++k) {
        lhs += sv[k] * sv[k];
        rhs += v[k] * direct[k];
      }
      CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(rhs)));
    }
  }
}

TEST_CASE("prior draws always have finite log density") {
  NetworkShape s = NetworkShape::mlp({1, 3, 3, 1});
  PriorSpec spec = PriorSpec::uniform(3, 2.0, 1.0, 1.0);
  BayesMask mask = BayesMask::full(s);
  ParamSet base(s);
  Rng rng(123);
  for (int k = 0; k < 10'000; ++k) {
    const ParamSet draw = sample_prior(spec, s, mask, base, rng);
    CHECK(std::isfinite(log_prior(spec, s, mask, draw)));
  }
}

TEST_CASE("prior spec validation") {
  NetworkShape s = NetworkShape::mlp({1, 2, 1});
  CHECK_THROWS_AS(PriorSpec::uniform(2, 1.0, 1.0, 1.0).validate(s), ConfigError);
  CHECK_THROWS_AS(PriorSpec::uniform(2, 2.0, 0.0, 1.0).validate(s), ConfigError);
  CHECK_THROWS_AS(PriorSpec::uniform(3, 2.0, 1.0, 1.0).validate(s), ShapeError);
  PriorSpec ok = PriorSpec::uniform(2, 2.0, 1.0, 1.0);
  ok.scale = -1.0;
  CHECK_THROWS_AS(ok.validate(s), ConfigError);
}
