#pragma once

// Reconstruction quality metrics, FPS benchmarking and report emission.
// Cubes are [C,H,W] with values nominally in [0,1].

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "amdc/optics.hpp"
#include "amdc/params.hpp"
#include "amdc/recon.hpp"
#include "amdc/tensor.hpp"

namespace amdc::metrics {

/// 10 log10(1 / MSE); +infinity when the inputs are identical.
double psnr(const Tensor& a, const Tensor& b);

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

/// Per-channel SSIM (Gaussian 11x11, sigma 1.5, K1 0.01, K2 0.03, L 1) over
/// valid window positions, averaged over channels.
double ssim(const Tensor& a, const Tensor& b);

inline constexpr double kMraeFloor = 1e-3;

/// mean(|a - b| / max(b, 1e-3)); b is the reference.
double mrae(const Tensor& estimate, const Tensor& truth);
double rmse(const Tensor& a, const Tensor& b);

struct SceneMetrics {
  double psnr = 0.0;
  double ssim = 0.0;
  double mrae = 0.0;
  double rmse = 0.0;
};

SceneMetrics evaluate(const Tensor& estimate, const Tensor& truth);
/// Elementwise mean; throws ContractError on an empty list.
SceneMetrics average(const std::vector<SceneMetrics>& rows);

/// JSON encoding; an infinite PSNR is written as the string "inf".
nlohmann::json metric_json(double v);
void to_json(nlohmann::json& j, const SceneMetrics& m);
void from_json(const nlohmann::json& j, SceneMetrics& m);

struct FpsResult {
  double fps = 0.0;
  double median_seconds = 0.0;
  std::size_t warmup = 0;
  std::size_t iters = 0;
  std::size_t threads = 1;
  std::size_t height = 0, width = 0, channels = 0;
  std::size_t n_stages = 0;
  std::uint64_t flops = 0;
};

void to_json(nlohmann::json& j, const FpsResult& r);

/// Median wall-clock seconds of fn over iters runs after warmup runs.
/// ConfigError unless iters >= 10 and warmup >= 2.
double median_seconds(const std::function<void()>& fn, std::size_t warmup, std::size_t iters);

/// Median wall-clock time of model_forward (no tape gradients, fixed
/// input, no I/O) inverted to frames per second.
FpsResult fps_bench(const ParamSet& weights, const recon::ModelConfig& cfg, const optics::Mask& mask,
                    std::size_t warmup, std::size_t iters, std::uint64_t seed = 0);

struct ReportRow {
  std::string method;
  /// May be empty for cost-only rows; the average is then null.
  std::vector<SceneMetrics> scenes;
  /// Average supplied by the caller; compared against the recomputed one.
  std::optional<SceneMetrics> claimed_average;
  std::size_t params = 0;
  std::uint64_t flops = 0;
  std::optional<double> fps;
  nlohmann::json extra = nlohmann::json::object();
};

struct Report {
  nlohmann::json json;
  std::string table;
};

/// Hex FNV-1a digest of a JSON value's compact dump.
std::string config_digest(const nlohmann::json& config);

/// Builds the JSON report and aligned text table. Rows keep their order;
/// averages are recomputed from the per-scene values, and a row whose
/// claimed average disagrees beyond 1e-9 is marked inconsistent.
Report emit_report(const std::string& title, const std::vector<ReportRow>& rows,
                   const nlohmann::json& config);

/// Writes <prefix>.json and <prefix>.txt.
void write_report(const std::string& prefix, const Report& report);

}  // namespace amdc::metrics
