#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "downscale/container.hpp"
#include "downscale/runconfig.hpp"

using namespace dsc;

namespace {

std::string tmp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("container round trip is bit exact") {
  Container c;
  c.set_meta("title", "round trip with spaces in value");
  c.add_f32("a", {2, 3}, {1.5f, -2.25f, 0.0f, 1e-7f, 3e8f, -0.125f});
  c.add_f64("b", {4}, {1.0 / 3.0, -7.125, 2e-300, 5e200});

  const std::string path = tmp_path("ct_roundtrip.dsc");
  write_container(path, c);
  Container r = read_container(path);

  REQUIRE(r.arrays.size() == 2);
  CHECK(*r.find_meta("title") == "round trip with spaces in value");
  CHECK(r.require_array("a").shape == Shape{2, 3});
  CHECK(r.require_array("a").f == c.require_array("a").f);
  CHECK(r.require_array("b").d == c.require_array("b").d);

  // Rewriting what was read reproduces the file byte for byte.
  const std::string path2 = tmp_path("ct_roundtrip2.dsc");
  write_container(path2, r);
  CHECK(slurp(path) == slurp(path2));
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("container random round trip property") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> fd(-100, 100);
  std::uniform_real_distribution<double> dd(-1e6, 1e6);
  for (int trial = 0; trial < 20; ++trial) {
    Container c;
    const std::size_t narr = 1 + rng() % 4;
    for (std::size_t a = 0; a < narr; ++a) {
      Shape shape{1 + rng() % 5, 1 + rng() % 5};
      if (rng() % 2) {
        std::vector<float> v(shape_numel(shape));
        for (float& x : v) x = fd(rng);
        c.add_f32("arr" + std::to_string(a), shape, std::move(v));
      } else {
        std::vector<double> v(shape_numel(shape));
        for (double& x : v) x = dd(rng);
        c.add_f64("arr" + std::to_string(a), shape, std::move(v));
      }
    }
    const std::string path = tmp_path("ct_prop.dsc");
    write_container(path, c);
    Container r = read_container(path);
    REQUIRE(r.arrays.size() == narr);
    for (std::size_t a = 0; a < narr; ++a) {
      CHECK(r.arrays[a].shape == c.arrays[a].shape);
      CHECK(r.arrays[a].f == c.arrays[a].f);
      CHECK(r.arrays[a].d == c.arrays[a].d);
    }
    std::remove(path.c_str());
  }
}

TEST_CASE("container format errors") {
  const std::string path = tmp_path("ct_bad.dsc");
  auto write_raw = [&](const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
  };

  write_raw("NOTACONTAINER\n");
  CHECK_THROWS_AS(read_container(path), format_error);

  write_raw("DSCONTAINER 1\narray a f32 1 2 0\npayload 4\n\0\0\0");
  CHECK_THROWS_AS(read_container(path), format_error);  // truncated payload

  write_raw("DSCONTAINER 1\narray a f32 1 1 4\npayload 4\nxxxx");
  CHECK_THROWS_AS(read_container(path), format_error);  // non-packed offset

  write_raw("DSCONTAINER 1\narray a f16 1 1 0\npayload 2\nxx");
  CHECK_THROWS_AS(read_container(path), format_error);  // unknown dtype

  write_raw("DSCONTAINER 1\narray a f32 1 2 0\npayload 4\nxxxx");
  CHECK_THROWS_AS(read_container(path), format_error);  // payload disagrees

  write_raw("DSCONTAINER 1\nmeta k v\n");
  CHECK_THROWS_AS(read_container(path), format_error);  // no payload line

  std::remove(path.c_str());
  CHECK_THROWS_AS(read_container(tmp_path("ct_missing_file.dsc")), input_error);
}

TEST_CASE("typed helpers round trip") {
  Container c;
  GridGeometry g = GridGeometry::regular(-3.5, 0.25, 6, 10, 0.5, 4);
  containerio::put_geometry(c, "g", g);
  CHECK(containerio::get_geometry(c, "g") == g);

  std::vector<ChannelSpec> chans{{"ta", 1000}, {"z", 500}};
  containerio::put_channels(c, "ch", chans);
  CHECK(containerio::get_channels(c, "ch") == chans);

  std::vector<Date> times{{2000, 1, 1}, {2000, 1, 2}, {2004, 2, 29}};
  containerio::put_times(c, "t", times);
  CHECK(containerio::get_times(c, "t") == times);

  LandMask m(2, 2, {1, 0, 0, 1});
  containerio::put_mask(c, "m", m);
  CHECK(containerio::get_mask(c, "m") == m);

  GriddedField f;
  f.geometry = GridGeometry::regular(0, 1, 2, 0, 1, 3);
  f.channels = {{"ta", 1000}};
  f.times = times;
  f.data = Tensor<double>({3, 1, 2, 3});
  // f32-representable values survive the f32 payload exactly.
  for (std::size_t i = 0; i < f.data.numel(); ++i) f.data[i] = double(i) * 0.5;
  containerio::put_gridded_field(c, "field", f);
  GriddedField fr = containerio::get_gridded_field(c, "field");
  CHECK(fr.data.v == f.data.v);
  CHECK(fr.geometry == f.geometry);
  CHECK(fr.times == f.times);

  TargetField tf;
  tf.times = times;
  tf.data = Tensor<double>({3, 2}, {0, 1, 2, 3, 4, 5});
  containerio::put_target_field(c, "series", tf);
  TargetField tr = containerio::get_target_field(c, "series");
  CHECK(tr.data.v == tf.data.v);
  CHECK(tr.times == tf.times);
}

TEST_CASE("run config parsing") {
  RunConfig cfg = RunConfig::parse(
      "# comment\n"
      "seed = 42\n"
      "  lr=0.5  \n"
      "name = hello world\n"
      "\n");
  CHECK(cfg.get_seed() == 42);
  CHECK(cfg.get_double("lr", 0) == 0.5);
  CHECK(cfg.get("name", "") == "hello world");
  CHECK(cfg.get_int("missing", 7) == 7);
  CHECK_THROWS_AS(cfg.require("missing"), input_error);
  CHECK_THROWS_AS(RunConfig::parse("justtext\n"), input_error);
  CHECK_THROWS_AS(RunConfig::parse("=value\n"), input_error);
}

TEST_CASE("fnv1a64 known vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
}
