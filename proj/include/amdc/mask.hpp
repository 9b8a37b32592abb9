#pragma once

// Coded-aperture masks: fixed templates and the adaptive mask network
//   M = sigmoid(conv(unet(y_rgb + template)))
// which is co-trained with the reconstructor and then frozen.

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "amdc/autodiff.hpp"
#include "amdc/optics.hpp"
#include "amdc/params.hpp"

namespace amdc::mask {

using optics::Mask;

enum class MaskKind { manual, random, normal, adaptive };

std::string to_string(MaskKind kind);
MaskKind parse_mask_kind(const std::string& text);

struct MaskTemplate {
  Tensor data;  // [H, W], values in [0,1]
  MaskKind kind = MaskKind::manual;
};

/// manual: checkerboard, open where (row + col) is even.
/// random: Bernoulli(0.5) per pixel.
/// normal: N(0.5, 0.2) clipped to [0,1].
/// adaptive: the manual template, which seeds the mask network input.
MaskTemplate template_init(MaskKind kind, std::size_t height, std::size_t width,
                           std::uint64_t seed);

struct MaskNetConfig {
  std::size_t base_width = 16;
};

/// Two-level U-net (two 2x poolings, skip concatenation) plus a 3x3 head.
/// Spatial extents must be divisible by 4.
ParamSet init_mask_net(const MaskNetConfig& cfg, std::uint64_t seed);

inline constexpr std::string_view kMaskNetPrefix = "mask_net.";

/// y_rgb is [3,H,W]; the template is replicated onto each RGB channel.
ad::Var mask_net_forward(const ad::Var& y_rgb, const MaskTemplate& mt, const BoundParams& w);
Mask mask_net_forward(const Tensor& y_rgb, const MaskTemplate& mt, const ParamSet& w);

/// Elementwise mean of the network output over a calibration set.
Mask freeze_mask(const ParamSet& w, std::span<const Tensor> calibration, const MaskTemplate& mt);

/// Hard 0/1 export for binary-mask hardware.
Mask binarize(const Mask& m, double threshold = 0.5);

void save_mask(const std::string& path, const Mask& m);
Mask load_mask(const std::string& path);

}  // namespace amdc::mask
