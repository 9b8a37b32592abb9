#pragma once

// Multi-stage MLP reconstruction network.
//
//   x_0     = shift_back(y_c)
//   x_{n+1} = x_n + f_n(y_c - N - Phi x_n, y_r)
//
// Stage 1 has its own weights, stages 2..n share one set. N is the noise
// field from the noise estimator, computed once per forward pass.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "amdc/autodiff.hpp"
#include "amdc/optics.hpp"
#include "amdc/params.hpp"

namespace amdc::recon {

enum class BlockKind { spectral, spatial, spatial_shifted };

/// How the measurement-space residual is carried back to the cube:
/// per-channel crop, or the mask-weighted adjoint of the CASSI operator.
enum class ResidualMap { shift_back, adjoint };

struct ModelConfig {
  std::size_t n_stages = 1;
  std::size_t channels = 8;
  std::size_t window = 8;
  double mlp_ratio = 2.0;
  double epsilon = 1e-3;
  bool learn_epsilon = false;
  std::size_t dispersion = 1;
  std::size_t rgb_lift_dim = 64;
  /// Feature width carried through the blocks of a stage.
  std::size_t embed_dim = 32;
  /// Noise-estimator conv kernel and up/down factor.
  std::size_t ne_kernel = 3;
  std::size_t ne_factor = 2;
  std::vector<BlockKind> layout{BlockKind::spectral, BlockKind::spatial, BlockKind::spectral,
                                BlockKind::spatial_shifted};
  ResidualMap residual_map = ResidualMap::shift_back;

  /// Throws ConfigError on an inconsistent config.
  void validate() const;
  /// Additionally checks a scene size against the window.
  void validate_for(std::size_t height, std::size_t width) const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

inline constexpr std::string_view kInitStage = "init_stage.";
inline constexpr std::string_view kSharedStage = "shared_stage.";

/// All reconstruction weights; names are prefixed "ne.", "rgb_init.",
/// "init_stage." and (for n_stages >= 2) "shared_stage.".
ParamSet init_model_weights(const ModelConfig& cfg, std::uint64_t seed);

/// Parameters of one stage under `prefix`.
void add_stage_weights(ParamSet& p, const ModelConfig& cfg, std::string_view prefix,
                       std::uint64_t seed);

/// Cube-space noise estimate from equally shaped [C,H,W] branch features,
/// with one set of conv weights shared by both branches:
///   softmax_c(down(conv(up(xc)))) - softmax_c(down(conv(up(xr)))) + eps
ad::Var noise_estimate(const ad::Var& xc_feat, const ad::Var& xr_feat, const BoundParams& w,
                       const ModelConfig& cfg);

/// [3,H,W] -> [C,H,W] via 1x1 lift to rgb_lift_dim, gelu, 1x1 projection.
ad::Var rgb_init(const ad::Var& y_r, const BoundParams& w, const ModelConfig& cfg);

/// Per-pixel channel MLP with pre-norm and residual, on [E,H,W].
ad::Var spectral_mlp(const ad::Var& x, const BoundParams& w, const std::string& prefix);

/// Windowed spatial MLP over the window^2 positions of each tile, shared
/// across channels and tiles; cyclically rolled by window/2 when shifted.
ad::Var swin_spatial_mlp(const ad::Var& x, const BoundParams& w, const std::string& prefix,
                         std::size_t window, bool shifted);

/// Noise field carried into measurement space: (1/C) * disperse_sum(N).
ad::Var noise_to_measurement(const ad::Var& noise_cube, const ModelConfig& cfg);

/// One iteration x_{n+1} = x_n + f(y_c - N - Phi x_n, y_r).
ad::Var stage_forward(const ad::Var& x_n, const ad::Var& y_c, const ad::Var& noise_meas,
                      const ad::Var& rgb_feat, const ad::Var& mask, const BoundParams& w,
                      std::string_view stage_prefix, const ModelConfig& cfg);

struct ForwardResult {
  ad::Var x_hat;
  ad::Var x0;
  ad::Var noise_cube;
  ad::Var noise_meas;
  std::vector<ad::Var> stages;
};

ForwardResult model_forward(const ad::Var& y_c, const ad::Var& y_r, const ad::Var& mask,
                            const BoundParams& w, const ModelConfig& cfg);

/// Inference without a gradient tape; output clamped to [0,1].
Tensor reconstruct(const Tensor& y_c, const Tensor& y_r, const optics::Mask& mask,
                   const ParamSet& w, const ModelConfig& cfg);

std::size_t param_count(const ParamSet& w);
/// Parameter count implied by a config alone.
std::size_t param_count(const ModelConfig& cfg);
/// Analytic multiply-add flops (2 per pair) of model_forward on an HxW scene.
std::uint64_t flop_count(const ModelConfig& cfg, std::size_t height, std::size_t width);

}  // namespace amdc::recon
