#pragma once

// Composite operations shared by the CLI and the acceptance suite: dataset
// loading, a naive convolutional baseline for cost comparison, and the mask
// ablation sweep.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "amdc/autodiff.hpp"
#include "amdc/data_io.hpp"
#include "amdc/mask.hpp"
#include "amdc/metrics.hpp"
#include "amdc/recon.hpp"
#include "amdc/train.hpp"

namespace amdc::workflows {

/// Train and val splits of a manifest directory, with the default response
/// for its wavelength grid. ConfigError if either split is empty.
train::Dataset load_dataset(const std::string& dir);

/// shift_back followed by three 3x3 convolutions C -> hidden -> hidden -> C
/// with a residual connection.
struct ConvBaselineConfig {
  std::size_t channels = 8;
  std::size_t dispersion = 1;
  std::size_t hidden = 32;
};

ParamSet init_conv_baseline(const ConvBaselineConfig& cfg, std::uint64_t seed);
ad::Var conv_baseline_forward(const ad::Var& y_c, const BoundParams& w, const ConvBaselineConfig& cfg);
std::uint64_t conv_baseline_flops(const ConvBaselineConfig& cfg, std::size_t height, std::size_t width);
metrics::FpsResult conv_baseline_fps(const ConvBaselineConfig& cfg, std::size_t height, std::size_t width,
                                     std::size_t warmup, std::size_t iters, std::uint64_t seed = 0);

/// The state with its best-validation weights swapped in, if recorded.
train::Checkpoint best_state(const train::Checkpoint& state);

struct SweepResult {
  std::vector<metrics::ReportRow> rows;
  metrics::Report report;
  /// Final training state per kind, in sweep order.
  std::vector<train::Checkpoint> states;
};

/// Trains one model per mask kind from identical seeds and evaluates the
/// best-validation weights on the val split. With a non-empty out_dir each
/// run writes to out_dir/<kind>.
SweepResult mask_sweep(const train::Dataset& data, const recon::ModelConfig& model,
                       const train::TrainConfig& train_cfg, std::span<const mask::MaskKind> kinds,
                       const std::string& out_dir = {},
                       const std::function<void(mask::MaskKind, const train::EpochLog&)>& on_epoch = {});

}  // namespace amdc::workflows
