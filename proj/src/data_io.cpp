#include "amdc/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

#include "amdc/error.hpp"
#include "amdc/params.hpp"

namespace amdc::data {

namespace fs = std::filesystem;

namespace {

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + path);
}

// Positive spectrum 1 + sum_k a_k cos(pi k t + phi_k), floored at 0.05.
std::vector<double> smooth_spectrum(std::mt19937_64& rng, std::size_t channels, std::size_t order) {
  std::uniform_real_distribution<double> amp(-0.8, 0.8), phase(0.0, 2.0 * std::numbers::pi);
  std::vector<double> a(order), phi(order);
  for (std::size_t k = 0; k < order; ++k) {
    a[k] = amp(rng) / static_cast<double>(k + 1);
    phi[k] = phase(rng);
  }
  std::vector<double> s(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    const double t = channels > 1 ? static_cast<double>(c) / static_cast<double>(channels - 1) : 0.0;
    double v = 1.0;
    for (std::size_t k = 0; k < order; ++k)
      v += a[k] * std::cos(std::numbers::pi * static_cast<double>(k + 1) * t + phi[k]);
    s[c] = v;
  }
  const double lo = *std::min_element(s.begin(), s.end());
  if (lo < 0.05)
    for (double& v : s) v += 0.05 - lo;
  return s;
}

}  // namespace

std::vector<double> default_wavelengths(std::size_t channels) {
  if (channels < 2) throw ConfigError("need at least 2 channels");
  std::vector<double> w(channels);
  for (std::size_t c = 0; c < channels; ++c)
    w[c] = 450.0 + 200.0 * static_cast<double>(c) / static_cast<double>(channels - 1);
  return w;
}

optics::SpectralResponse default_response(std::span<const double> wavelengths_nm) {
  if (wavelengths_nm.size() < 2) throw ConfigError("default_response needs >= 2 wavelengths");
  const std::array<double, 3> centres{610.0, 540.0, 470.0};
  const double sigma = 40.0;
  const std::size_t n = wavelengths_nm.size();
  Tensor om(Shape{n, 3});
  for (std::size_t k = 0; k < 3; ++k) {
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double d = (wavelengths_nm[c] - centres[k]) / sigma;
      om.at({c, k}) = std::exp(-0.5 * d * d);
      total += om.at({c, k});
    }
    for (std::size_t c = 0; c < n; ++c) om.at({c, k}) /= total;
  }
  return {std::move(om)};
}

void save_cube(const std::string& path, const optics::HsiCube& cube, const CubeMeta& meta) {
  save_tensor(path, cube.data());
  write_json(path + ".json", {{"wavelengths_nm", cube.wavelengths_nm()},
                              {"layout", "CHW"},
                              {"shape", cube.data().shape().dims()},
                              {"dispersion_step_px", meta.dispersion_step_px},
                              {"noise_sigma", meta.noise_sigma}});
}

optics::HsiCube load_cube(const std::string& path, CubeMeta* meta) {
  Tensor t = load_tensor(path);
  const auto side = read_json(path + ".json");
  std::vector<double> wl;
  try {
    if (side.value("layout", std::string("CHW")) != "CHW")
      throw FormatError(path + ": unsupported layout " + side.at("layout").get<std::string>());
    wl = side.at("wavelengths_nm").get<std::vector<double>>();
    if (meta) {
      meta->dispersion_step_px = side.value("dispersion_step_px", std::size_t{1});
      meta->noise_sigma = side.value("noise_sigma", 0.0);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ".json: " + e.what());
  }
  if (t.rank() != 3) throw ShapeError(path + ": expected a [C,H,W] cube, got " + t.shape().str());
  if (wl.size() != t.dim(0)) {
    throw ValidationError(path + ": " + std::to_string(wl.size()) + " wavelengths for " +
                          std::to_string(t.dim(0)) + " channels");
  }
  return optics::HsiCube(std::move(t), std::move(wl));
}

void SynthSpec::validate() const {
  if (n_scenes < 1) throw ConfigError("n_scenes must be >= 1");
  if (channels < 2) throw ConfigError("channels must be >= 2");
  if (window < 1 || height == 0 || width == 0 || height % window != 0 || width % window != 0)
    throw ConfigError("scene size must be a positive multiple of the window");
  if (min_blobs < 1 || max_blobs < min_blobs) throw ConfigError("bad blob count range");
}

void to_json(nlohmann::json& j, const SynthSpec& s) {
  j = {{"n_scenes", s.n_scenes},   {"height", s.height},       {"width", s.width},
       {"channels", s.channels},   {"seed", s.seed},           {"min_blobs", s.min_blobs},
       {"max_blobs", s.max_blobs}, {"spectral_order", s.spectral_order}, {"window", s.window}};
}

void from_json(const nlohmann::json& j, SynthSpec& s) {
  s = SynthSpec{};
  s.n_scenes = j.value("n_scenes", s.n_scenes);
  s.height = j.value("height", s.height);
  s.width = j.value("width", s.width);
  s.channels = j.value("channels", s.channels);
  s.seed = j.value("seed", s.seed);
  s.min_blobs = j.value("min_blobs", s.min_blobs);
  s.max_blobs = j.value("max_blobs", s.max_blobs);
  s.spectral_order = j.value("spectral_order", s.spectral_order);
  s.window = j.value("window", s.window);
}

optics::HsiCube synth_scene(const SynthSpec& spec, std::size_t index) {
  spec.validate();
  const std::size_t h = spec.height, w = spec.width, c_n = spec.channels;
  std::mt19937_64 rng(derive_seed(spec.seed, index, 0x5ce7e));
  std::uniform_int_distribution<std::size_t> count(spec.min_blobs, spec.max_blobs);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double extent = static_cast<double>(std::min(h, w));

  Tensor cube = Tensor::zeros(Shape{c_n, h, w});
  const double bg_level = 0.1 * unit(rng);
  const auto bg = smooth_spectrum(rng, c_n, spec.spectral_order);
  for (std::size_t c = 0; c < c_n; ++c)
    for (std::size_t p = 0; p < h * w; ++p) cube[c * h * w + p] = bg_level * bg[c];

  const std::size_t blobs = count(rng);
  for (std::size_t b = 0; b < blobs; ++b) {
    const double cy = unit(rng) * static_cast<double>(h), cx = unit(rng) * static_cast<double>(w);
    const double sy = extent * (0.06 + 0.19 * unit(rng)), sx = extent * (0.06 + 0.19 * unit(rng));
    const double amp = 0.3 + 0.7 * unit(rng);
    const auto spectrum = smooth_spectrum(rng, c_n, spec.spectral_order);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t col = 0; col < w; ++col) {
        const double dy = (static_cast<double>(r) - cy) / sy, dx = (static_cast<double>(col) - cx) / sx;
        const double g = amp * std::exp(-0.5 * (dy * dy + dx * dx));
        for (std::size_t c = 0; c < c_n; ++c) cube[(c * h + r) * w + col] += g * spectrum[c];
      }
  }
  const double peak = cube.max_abs();
  if (peak > 0.0) cube *= 1.0 / peak;
  for (double& v : cube.data()) v = std::clamp(v, 0.0, 1.0);
  return optics::HsiCube(std::move(cube), default_wavelengths(c_n));
}

void to_json(nlohmann::json& j, const DatasetManifest& m) {
  nlohmann::json scenes = nlohmann::json::array();
  for (const auto& e : m.scenes) scenes.push_back({{"id", e.id}, {"path", e.path}, {"split", e.split}});
  j = {{"scenes", scenes}, {"wavelengths_nm", m.wavelengths_nm}, {"seed", m.seed}};
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
  m = DatasetManifest{};
  for (const auto& e : j.at("scenes"))
    m.scenes.push_back({e.at("id").get<std::string>(), e.at("path").get<std::string>(),
                        e.value("split", std::string())});
  m.wavelengths_nm = j.at("wavelengths_nm").get<std::vector<double>>();
  m.seed = j.value("seed", std::uint64_t{0});
}

DatasetManifest synth_scenes(const SynthSpec& spec, const std::string& dir) {
  spec.validate();
  fs::create_directories(fs::path(dir) / "cubes");
  DatasetManifest m;
  m.seed = spec.seed;
  m.wavelengths_nm = default_wavelengths(spec.channels);
  for (std::size_t i = 0; i < spec.n_scenes; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "scene_%04zu", i);
    const std::string rel = std::string("cubes/") + id + ".tnsr";
    save_cube((fs::path(dir) / rel).string(), synth_scene(spec, i));
    m.scenes.push_back({id, rel, ""});
  }
  save_manifest((fs::path(dir) / "manifest.json").string(), m);
  return m;
}

DatasetManifest split(DatasetManifest m, std::array<double, 3> fractions, std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ConfigError("split fractions must be nonnegative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  const std::size_t n = m.scenes.size();
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double exact = fractions[k] * static_cast<double>(n);
    counts[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[k] = exact - static_cast<double>(counts[k]);
    assigned += counts[k];
  }
  while (assigned < n) {
    const auto k = static_cast<std::size_t>(std::max_element(rem.begin(), rem.end()) - rem.begin());
    ++counts[k];
    rem[k] = -1.0;
    ++assigned;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::array<const char*, 3> tags{"train", "val", "test"};
  std::size_t pos = 0;
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < counts[k]; ++i) m.scenes[order[pos++]].split = tags[k];
  return m;
}

void validate_manifest(const DatasetManifest& m, const std::string& dir) {
  std::set<std::string> ids;
  for (const auto& e : m.scenes) {
    if (!ids.insert(e.id).second) throw ValidationError("duplicate scene id " + e.id);
    if (!e.split.empty() && e.split != "train" && e.split != "val" && e.split != "test")
      throw ValidationError("scene " + e.id + " has unknown split '" + e.split + "'");
    if (!fs::exists(fs::path(dir) / e.path))
      throw ValidationError("scene " + e.id + ": missing file " + e.path);
  }
}

void save_manifest(const std::string& path, const DatasetManifest& m) { write_json(path, m); }

DatasetManifest load_manifest(const std::string& path) {
  try {
    return read_json(path).get<DatasetManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

std::vector<Tensor> load_split(const DatasetManifest& m, const std::string& dir,
                               const std::string& tag) {
  std::vector<Tensor> out;
  for (const auto& e : m.scenes) {
    if (e.split != tag) continue;
    const auto cube = load_cube((fs::path(dir) / e.path).string());
    if (cube.wavelengths_nm().size() != m.wavelengths_nm.size())
      throw ValidationError("scene " + e.id + " does not match the manifest wavelengths");
    out.push_back(cube.data());
  }
  return out;
}

}  // namespace amdc::data
