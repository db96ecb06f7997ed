#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "patrac/architectures.hpp"
#include "patrac/io.hpp"
#include "patrac/rng.hpp"

using namespace patrac;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
  const fs::path dir = fs::temp_directory_path() / "patrac_io_test";
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("doubles round-trip through the decimal serialisation") {
  Rng rng(1);
  std::vector<double> values{0.0, -0.0, 1.0, 1e-300, -1e300, 0.1, 1.0 / 3.0,
                             std::numbers::pi};
  for (int k = 0; k < 200; ++k) values.push_back(std::exp(40.0 * (rng.uniform() - 0.5)) *
                                                 (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform());
  for (double v : values) {
    const double back = parse_double(format_double(v), "test");
    CHECK(std::bit_cast<std::uint64_t>(back) == std::bit_cast<std::uint64_t>(v));
  }
}

TEST_CASE("key-value files: round trip, types, and errors") {
  const fs::path path = tmp_dir() / "config.cfg";
  KeyValues kv;
  kv.set("name", std::string("toy"));
  kv.set("count", 42);
  kv.set("rate", 1.0 / 7.0);
  kv.set("flag", true);
  kv.save(path, {"header comment"});

  const KeyValues back = KeyValues::load(path);
  CHECK(back.get_string("name") == "toy");
  CHECK(back.get_long("count") == 42);
  CHECK(back.get_double("rate") == 1.0 / 7.0);
  CHECK(back.get_bool("flag"));
  CHECK(back.get_or<long>("missing", 7) == 7);
  CHECK_THROWS_AS(back.raw("missing"), ConfigError);
  CHECK_THROWS_AS(back.get_long("name"), ParseError);

  {
    std::ofstream f(path);
    f << "# fine\nkey = 1\nbroken line\n";
  }
  try {
    KeyValues::load(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("csv tables: header check and malformed rows") {
  const fs::path path = tmp_dir() / "table.csv";
  {
    std::ofstream f(path);
    f << "# meta: 1\na,b\n1,2\n3\n";
  }
  try {
    CsvTable::load(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 4") != std::string::npos);
    CHECK(msg.find("expected 2 fields") != std::string::npos);
  }
}

TEST_CASE("parameter files round-trip bit-exactly") {
  Rng rng(2);
  NetworkShape s = NetworkShape::mlp({2, 5, 4, 1});
  ParamSet p(s);
  for (double& x : p.values()) x = std::exp(30.0 * (rng.uniform() - 0.5)) * rng.normal();
  const fs::path path = tmp_dir() / "params.csv";
  write_params(path, s, p);
  const auto [shape_back, p_back] = read_params(path);
  CHECK(shape_back.layer_sizes == s.layer_sizes);
  CHECK(shape_back.activations == s.activations);
  CHECK(p_back.values() == p.values());
}

TEST_CASE("mask and permutation files round-trip") {
  Rng rng(3);
  NetworkShape s = NetworkShape::mlp({1, 7, 7, 1});
  ParamSet trained(s);
  for (double& x : trained.values()) x = rng.normal();
  const MaskedNetwork net = build_mix(trained, s, 3);

  const fs::path mask_path = tmp_dir() / "mask.csv";
  const fs::path perm_path = tmp_dir() / "perms.csv";
  write_mask(mask_path, s, net.mask);
  write_permutations(perm_path, s, net.mask);
  const BayesMask back = read_mask(mask_path, perm_path);
  CHECK(back.flags == net.mask.flags);
  CHECK(back.bayes_count == net.mask.bayes_count);
  CHECK(back.perms == net.mask.perms);
}

TEST_CASE("dataset files round-trip bit-exactly") {
  Rng rng(4);
  Dataset d;
  d.input_dim = 3;
  d.output_dim = 2;
  for (int k = 0; k < 60; ++k) d.inputs.push_back(rng.normal());
  for (int k = 0; k < 40; ++k) d.targets.push_back(rng.normal());
  const fs::path path = tmp_dir() / "data.csv";
  write_dataset(path, d);
  const Dataset back = read_dataset(path);
  CHECK(back.input_dim == 3);
  CHECK(back.output_dim == 2);
  CHECK(back.inputs == d.inputs);
  CHECK(back.targets == d.targets);
}

TEST_CASE("shape metadata survives the comment channel") {
  NetworkShape s = NetworkShape::mlp({4, 9, 2});
  const auto comments = shape_comments(s);
  const NetworkShape back = shape_from_comments(comments, "test");
  CHECK(back.layer_sizes == s.layer_sizes);
  CHECK(back.activations == s.activations);
  CHECK_THROWS_AS(shape_from_comments({"nothing useful"}, "test"), ParseError);
}
