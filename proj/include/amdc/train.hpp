#pragma once

// Training: reconstruction + reversible loss, Adam with a step-halving
// schedule, the two-phase co-train/freeze protocol for the adaptive mask,
// and checkpoints.

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "amdc/autodiff.hpp"
#include "amdc/mask.hpp"
#include "amdc/metrics.hpp"
#include "amdc/optics.hpp"
#include "amdc/params.hpp"
#include "amdc/recon.hpp"

namespace amdc::train {

struct TrainConfig {
  std::size_t epochs = 60;
  double lr0 = 4e-4;
  std::size_t lr_halving_epochs = 50;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Weight of the reprojection term.
  double xi = 0.2;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  /// Epochs of mask co-training before the freeze (adaptive masks only).
  std::size_t phase1_epochs = 30;
  /// Global-norm gradient clip; 0 disables.
  double grad_clip = 1.0;
  /// Detector noise sigma used when simulating training measurements.
  double noise_sigma = 0.005;

  void validate() const;
  /// The full-scale 300-epoch schedule.
  static TrainConfig paper_preset();
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing fields take defaults; phase1_epochs defaults to epochs / 2.
void from_json(const nlohmann::json& j, TrainConfig& c);

/// mse(x_out, x_truth) + xi * mse(reproj(x_out), y_c).
ad::Var loss(const ad::Var& x_out, const ad::Var& x_truth,
             const std::function<ad::Var(const ad::Var&)>& reproj, const ad::Var& y_c, double xi);

/// lr0 * 0.5^floor(epoch / lr_halving_epochs).
double lr_at(std::size_t epoch, const TrainConfig& cfg);

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::uint64_t step = 0;

  void erase_prefix(std::string_view prefix);
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update of every parameter in `params`.
/// A parameter without a gradient is a ContractError.
void adam_step(ParamSet& params, const NamedGrads& grads, AdamState& state, double lr,
               const TrainConfig& cfg);

/// Scales gradients so their global L2 norm is at most max_norm; returns
/// the norm before clipping.
double clip_grad_norm(NamedGrads& grads, double max_norm);

struct Dataset {
  std::vector<Tensor> train;  // [C,H,W] cubes
  std::vector<Tensor> val;
  optics::SpectralResponse response;
};

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  int phase = 2;
  double train_loss = 0.0;
  metrics::SceneMetrics val;
};

void to_json(nlohmann::json& j, const EpochLog& e);

struct Checkpoint {
  recon::ModelConfig model;
  TrainConfig train;
  mask::MaskKind mask_kind = mask::MaskKind::random;
  /// Reconstruction weights, plus "mask_net." entries until the freeze.
  ParamSet weights;
  mask::MaskTemplate mask_template;
  std::optional<optics::Mask> frozen_mask;
  AdamState adam;
  /// Number of completed epochs.
  std::size_t epoch = 0;
  std::string rng_state;
  double best_val_psnr = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::optional<ParamSet> best_weights;

  /// Mask used for reconstruction once training is past the co-training
  /// phase: the frozen mask, or the template for fixed kinds.
  optics::Mask inference_mask() const;
};

/// Fresh state: initialised weights, template and rng.
Checkpoint init_checkpoint(const recon::ModelConfig& model, const TrainConfig& train,
                           mask::MaskKind kind, std::size_t height, std::size_t width);

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
/// FormatError on bad magic or corrupt data; FormatError naming the
/// version for any other format version.
Checkpoint load_checkpoint(const std::string& path);

struct TrainOptions {
  /// When set: last.ckpt, best.ckpt and metrics.jsonl are written here.
  std::string out_dir;
  /// Stop after this many epochs of the current call.
  std::optional<std::size_t> max_epochs;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  Checkpoint last;
  std::vector<EpochLog> log;
};

/// Runs the remaining epochs of `state`. Throws NumericError on a
/// non-finite loss and ContractError on an empty split.
TrainResult train(const Dataset& data, Checkpoint state, const TrainOptions& opts = {});

/// Validation metrics of the current state: fixed noise seeds, clamped
/// reconstructions, averaged over the split.
metrics::SceneMetrics validate(const Dataset& data, const Checkpoint& state);
/// Per-scene metrics behind validate(), in split order.
std::vector<metrics::SceneMetrics> validate_scenes(const Dataset& data, const Checkpoint& state);

struct SampleResult {
  double loss = 0.0;
  NamedGrads grads;
};

/// Loss and gradients for one scene. A null mask means the mask network
/// output on the scene's RGB measurement.
SampleResult sample_gradients(const Tensor& cube, const Checkpoint& state,
                              const optics::SpectralResponse& response, const optics::Mask* mask,
                              std::uint64_t noise_seed);

struct OverfitResult {
  Checkpoint state;
  /// (step, reconstruction PSNR) every eval_every steps and at the end.
  std::vector<std::pair<std::size_t, double>> trace;
  double final_psnr = 0.0;
};

/// Fits one scene from a single fixed noisy measurement pair with one Adam
/// step per iteration. The epoch schedule is compressed onto the step
/// budget: step i uses lr_at(i * epochs / steps). Fixed mask kinds only.
OverfitResult overfit(const Tensor& cube, const optics::SpectralResponse& response, Checkpoint state,
                      std::size_t steps, std::size_t eval_every = 100);

/// Worker count from AMDC_THREADS, else the hardware concurrency.
std::size_t worker_threads();

}  // namespace amdc::train
