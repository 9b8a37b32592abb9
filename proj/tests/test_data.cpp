#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "amdc/data_io.hpp"
#include "amdc/error.hpp"
#include "test_util.hpp"

using namespace amdc;
using namespace amdc::data;

namespace {

double correlation(const double* a, const double* b, std::size_t n) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i] / static_cast<double>(n);
    mb += b[i] / static_cast<double>(n);
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

DatasetManifest numbered(std::size_t n) {
  DatasetManifest m;
  for (std::size_t i = 0; i < n; ++i) m.scenes.push_back({"s" + std::to_string(i), "", ""});
  return m;
}

}  // namespace

TEST_CASE("wavelengths and default response") {
  const auto wl = default_wavelengths(8);
  CHECK(wl.front() == 450.0);
  CHECK(wl.back() == 650.0);
  CHECK_THROWS_AS(default_wavelengths(1), ConfigError);

  const auto r = default_response(wl);
  REQUIRE(r.omega.shape() == Shape{8, 3});
  for (std::size_t k = 0; k < 3; ++k) {
    double s = 0.0;
    std::size_t peak = 0;
    for (std::size_t c = 0; c < 8; ++c) {
      CHECK(r.omega.at({c, k}) >= 0.0);
      s += r.omega.at({c, k});
      if (r.omega.at({c, k}) > r.omega.at({peak, k})) peak = c;
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
    const double centre = std::array<double, 3>{610.0, 540.0, 470.0}[k];
    std::size_t nearest = 0;
    for (std::size_t c = 0; c < 8; ++c)
      if (std::abs(wl[c] - centre) < std::abs(wl[nearest] - centre)) nearest = c;
    CHECK(peak == nearest);
  }
  const std::vector<double> one{500.0};
  CHECK_THROWS_AS(default_response(one), ConfigError);
}

TEST_CASE("cube files") {
  const auto dir = test::temp_dir("cube");
  const optics::HsiCube cube(Tensor::uniform(Shape{4, 5, 6}, 1), default_wavelengths(4));
  const std::string path = (dir / "c.tnsr").string();
  save_cube(path, cube, {2, 0.01});
  CubeMeta meta;
  const auto back = load_cube(path, &meta);
  CHECK(bit_equal(back.data(), cube.data()));
  CHECK(back.wavelengths_nm() == cube.wavelengths_nm());
  CHECK(meta.dispersion_step_px == 2);
  CHECK(meta.noise_sigma == 0.01);

  {
    std::ofstream side(path + ".json");
    side << nlohmann::json{{"wavelengths_nm", {450.0, 500.0, 550.0}}, {"layout", "CHW"}}.dump();
  }
  CHECK_THROWS_AS(load_cube(path), ValidationError);

  const std::string hot = (dir / "hot.tnsr").string();
  save_tensor(hot, Tensor::full(Shape{2, 2, 2}, 1.5));
  {
    std::ofstream side(hot + ".json");
    side << nlohmann::json{{"wavelengths_nm", {450.0, 650.0}}}.dump();
  }
  CHECK_THROWS_AS(load_cube(hot), ValidationError);

  const std::string flat = (dir / "flat.tnsr").string();
  save_tensor(flat, Tensor::full(Shape{2, 2}, 0.5));
  {
    std::ofstream side(flat + ".json");
    side << nlohmann::json{{"wavelengths_nm", {450.0, 650.0}}}.dump();
  }
  CHECK_THROWS_AS(load_cube(flat), ShapeError);
  CHECK_THROWS_AS(load_cube((dir / "none.tnsr").string()), IoError);
}

TEST_CASE("synthetic scenes") {
  SynthSpec spec;
  spec.seed = 4;
  const auto a = synth_scene(spec, 0);
  CHECK(bit_equal(a.data(), synth_scene(spec, 0).data()));
  CHECK_FALSE(bit_equal(a.data(), synth_scene(spec, 1).data()));
  spec.seed = 5;
  CHECK_FALSE(bit_equal(a.data(), synth_scene(spec, 0).data()));
  CHECK(a.data().shape() == Shape{8, 32, 32});

  double corr = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    const auto s = synth_scene(spec, i);
    for (double v : s.data().data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(s.data().max_abs() == 1.0);
    for (std::size_t c = 0; c + 1 < 8; ++c, ++pairs)
      corr += correlation(s.data().raw() + c * 1024, s.data().raw() + (c + 1) * 1024, 1024);
  }
  CHECK(corr / static_cast<double>(pairs) > 0.9);

  SynthSpec bad;
  bad.height = 30;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = SynthSpec{};
  bad.channels = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  const nlohmann::json j = spec;
  CHECK(nlohmann::json(j.get<SynthSpec>()) == j);
}

TEST_CASE("split") {
  const auto m = split(numbered(10), {0.8, 0.1, 0.1}, 7);
  std::map<std::string, int> counts;
  for (const auto& e : m.scenes) ++counts[e.split];
  CHECK(counts["train"] == 8);
  CHECK(counts["val"] == 1);
  CHECK(counts["test"] == 1);
  CHECK(counts.size() == 3);

  const auto again = split(numbered(10), {0.8, 0.1, 0.1}, 7);
  for (std::size_t i = 0; i < 10; ++i) CHECK(again.scenes[i].split == m.scenes[i].split);
  const auto other = split(numbered(10), {0.8, 0.1, 0.1}, 8);
  bool differs = false;
  for (std::size_t i = 0; i < 10; ++i) differs = differs || other.scenes[i].split != m.scenes[i].split;
  CHECK(differs);

  const auto d = split(numbered(20), {0.8, 0.2, 0.0}, 1);
  std::size_t tr = 0;
  for (const auto& e : d.scenes) tr += e.split == "train";
  CHECK(tr == 16);

  const auto odd = split(numbered(7), {0.5, 0.25, 0.25}, 1);
  std::size_t total = 0;
  for (const auto& e : odd.scenes) total += !e.split.empty();
  CHECK(total == 7);

  CHECK_THROWS_AS(split(numbered(4), {0.5, 0.2, 0.2}, 1), ConfigError);
  CHECK_THROWS_AS(split(numbered(4), {1.2, -0.2, 0.0}, 1), ConfigError);
}

TEST_CASE("manifest round trip") {
  const auto dir = test::temp_dir("manifest");
  SynthSpec spec;
  spec.n_scenes = 5;
  spec.height = 16;
  spec.width = 16;
  spec.channels = 4;
  spec.seed = 2;
  const auto m = split(synth_scenes(spec, dir.string()), {0.6, 0.2, 0.2}, 3);
  save_manifest((dir / "manifest.json").string(), m);
  const auto back = load_manifest((dir / "manifest.json").string());
  CHECK(nlohmann::json(back) == nlohmann::json(m));
  CHECK_NOTHROW(validate_manifest(back, dir.string()));
  const auto train = load_split(back, dir.string(), "train");
  REQUIRE(train.size() == 3);
  std::size_t first_train = 0;
  while (back.scenes[first_train].split != "train") ++first_train;
  CHECK(bit_equal(train[0], synth_scene(spec, first_train).data()));

  auto dup = back;
  dup.scenes[1].id = dup.scenes[0].id;
  CHECK_THROWS_AS(validate_manifest(dup, dir.string()), ValidationError);
  auto missing = back;
  missing.scenes[0].path = "cubes/nope.tnsr";
  CHECK_THROWS_AS(validate_manifest(missing, dir.string()), ValidationError);
  auto tag = back;
  tag.scenes[0].split = "holdout";
  CHECK_THROWS_AS(validate_manifest(tag, dir.string()), ValidationError);
}
