#pragma once

// Cube files, synthetic scenes, the default RGB response and dataset
// manifests.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "amdc/optics.hpp"

namespace amdc::data {

/// Evenly spaced from 450 to 650 nm.
std::vector<double> default_wavelengths(std::size_t channels);

/// Gaussian R/G/B curves centred at 610/540/470 nm (sigma 40 nm), each
/// column normalised to sum to one.
optics::SpectralResponse default_response(std::span<const double> wavelengths_nm);

struct CubeMeta {
  std::size_t dispersion_step_px = 1;
  double noise_sigma = 0.0;
};

/// Writes the tensor to `path` and a JSON sidecar to `path + ".json"`.
void save_cube(const std::string& path, const optics::HsiCube& cube, const CubeMeta& meta = {});
/// Reads a cube and its sidecar; mismatched wavelength counts and values
/// outside [0,1] are errors.
optics::HsiCube load_cube(const std::string& path, CubeMeta* meta = nullptr);

struct SynthSpec {
  std::size_t n_scenes = 20;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 8;
  std::uint64_t seed = 0;
  std::size_t min_blobs = 3;
  std::size_t max_blobs = 8;
  /// Highest cosine order in each blob spectrum.
  std::size_t spectral_order = 2;
  /// H and W must be multiples of this.
  std::size_t window = 8;

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);

/// One scene; deterministic in (spec.seed, index).
optics::HsiCube synth_scene(const SynthSpec& spec, std::size_t index);

struct ManifestEntry {
  std::string id;
  /// Relative to the manifest's directory.
  std::string path;
  /// "train", "val", "test" or empty.
  std::string split;
};

struct DatasetManifest {
  std::vector<ManifestEntry> scenes;
  std::vector<double> wavelengths_nm;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

/// Generates every scene into `dir` and writes dir/manifest.json.
DatasetManifest synth_scenes(const SynthSpec& spec, const std::string& dir);

/// Deterministic shuffled split by largest remainder; fractions are
/// (train, val, test) and must sum to 1.
DatasetManifest split(DatasetManifest manifest, std::array<double, 3> fractions, std::uint64_t seed);

/// Unique ids, known split tags and resolvable paths.
void validate_manifest(const DatasetManifest& m, const std::string& dir);

void save_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& path);

/// Cube tensors of one split, in manifest order.
std::vector<Tensor> load_split(const DatasetManifest& m, const std::string& dir,
                               const std::string& tag);

}  // namespace amdc::data
