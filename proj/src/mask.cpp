#include "amdc/mask.hpp"

#include <algorithm>
#include <random>

#include "amdc/error.hpp"

namespace amdc::mask {

std::string to_string(MaskKind kind) {
  switch (kind) {
    case MaskKind::manual: return "manual";
    case MaskKind::random: return "random";
    case MaskKind::normal: return "normal";
    case MaskKind::adaptive: return "adaptive";
  }
  return "unknown";
}

MaskKind parse_mask_kind(const std::string& text) {
  if (text == "manual") return MaskKind::manual;
  if (text == "random") return MaskKind::random;
  if (text == "normal") return MaskKind::normal;
  if (text == "adaptive") return MaskKind::adaptive;
  throw ConfigError("unknown mask kind '" + text + "'");
}

MaskTemplate template_init(MaskKind kind, std::size_t height, std::size_t width,
                           std::uint64_t seed) {
  Tensor t(Shape{height, width});
  std::mt19937_64 rng(seed);
  switch (kind) {
    case MaskKind::manual:
    case MaskKind::adaptive:
      for (std::size_t r = 0; r < height; ++r)
        for (std::size_t c = 0; c < width; ++c) t[r * width + c] = (r + c) % 2 == 0 ? 1.0 : 0.0;
      break;
    case MaskKind::random: {
      std::bernoulli_distribution coin(0.5);
      for (double& v : t.data()) v = coin(rng) ? 1.0 : 0.0;
      break;
    }
    case MaskKind::normal: {
      std::normal_distribution<double> dist(0.5, 0.2);
      for (double& v : t.data()) v = std::clamp(dist(rng), 0.0, 1.0);
      break;
    }
  }
  return {std::move(t), kind};
}

namespace {

struct ConvSpec {
  const char* name;
  std::size_t in, out;
};

// in/out channel counts are multiples of the base width b.
std::vector<ConvSpec> layer_specs(std::size_t b) {
  return {
      {"enc1", 3, b},
      {"enc2", b, 2 * b},
      {"bottleneck", 2 * b, 4 * b},
      {"dec2", 4 * b + 2 * b, 2 * b},
      {"dec1", 2 * b + b, b},
      {"head", b, 1},
  };
}

std::string pname(const char* layer, const char* what) {
  return std::string(kMaskNetPrefix) + layer + "." + what;
}

ad::Var conv_bias(const ad::Var& x, const BoundParams& w, const char* layer) {
  return ad::bias_add(ad::conv2d(x, w(pname(layer, "w")), 1, 1), w(pname(layer, "b")), 0);
}

}  // namespace

ParamSet init_mask_net(const MaskNetConfig& cfg, std::uint64_t seed) {
  ParamSet p;
  for (const auto& s : layer_specs(cfg.base_width)) {
    const std::string wname = pname(s.name, "w");
    p.add(wname, fan_in_uniform(Shape{s.out, s.in, 3, 3}, s.in * 9, derive_seed(seed, wname)));
    p.add(pname(s.name, "b"), Tensor::zeros(Shape{s.out}));
  }
  return p;
}

ad::Var mask_net_forward(const ad::Var& y_rgb, const MaskTemplate& mt, const BoundParams& w) {
  const Shape& s = y_rgb.shape();
  if (s.rank() != 3 || s[0] != 3) throw ShapeError("mask net: expected [3,H,W], got " + s.str());
  const std::size_t h = s[1], wd = s[2];
  if (mt.data.shape() != Shape{h, wd}) {
    throw ShapeError("mask net: template " + mt.data.shape().str() + " does not match " + s.str());
  }
  if (h % 4 != 0 || wd % 4 != 0) {
    throw ShapeError("mask net: spatial extents must be divisible by 4, got " + s.str());
  }
  Tensor replicated(s);
  for (std::size_t ch = 0; ch < 3; ++ch)
    std::copy_n(mt.data.raw(), h * wd, replicated.raw() + ch * h * wd);
  ad::Tape& tape = y_rgb.tape();
  const ad::Var x = ad::add(y_rgb, tape.constant(std::move(replicated)));

  using ad::ResampleDir;
  const ad::Var e1 = ad::gelu(conv_bias(x, w, "enc1"));
  const ad::Var e2 = ad::gelu(conv_bias(ad::resample(e1, ResampleDir::down, 2), w, "enc2"));
  const ad::Var bott =
      ad::gelu(conv_bias(ad::resample(e2, ResampleDir::down, 2), w, "bottleneck"));
  const ad::Var d2 = ad::gelu(
      conv_bias(ad::concat({ad::resample(bott, ResampleDir::up, 2), e2}, 0), w, "dec2"));
  const ad::Var d1 = ad::gelu(
      conv_bias(ad::concat({ad::resample(d2, ResampleDir::up, 2), e1}, 0), w, "dec1"));
  const ad::Var logits = conv_bias(d1, w, "head");
  return ad::reshape(ad::sigmoid(logits), Shape{h, wd});
}

Mask mask_net_forward(const Tensor& y_rgb, const MaskTemplate& mt, const ParamSet& w) {
  ad::Tape tape;
  ad::NoGradGuard guard(tape);
  const BoundParams bound(tape, w, false);
  return Mask(mask_net_forward(tape.constant(y_rgb), mt, bound).value());
}

Mask freeze_mask(const ParamSet& w, std::span<const Tensor> calibration, const MaskTemplate& mt) {
  if (calibration.empty()) throw ContractError("freeze_mask: empty calibration set");
  Tensor acc = Tensor::zeros(mt.data.shape());
  for (const Tensor& rgb : calibration) acc += mask_net_forward(rgb, mt, w).data();
  acc *= 1.0 / static_cast<double>(calibration.size());
  for (double& v : acc.data()) v = std::clamp(v, 0.0, 1.0);
  return Mask(std::move(acc));
}

Mask binarize(const Mask& m, double threshold) {
  Tensor t = m.data();
  for (double& v : t.data()) v = v >= threshold ? 1.0 : 0.0;
  return Mask(std::move(t));
}

void save_mask(const std::string& path, const Mask& m) { save_tensor(path, m.data()); }

Mask load_mask(const std::string& path) {
  Tensor t = load_tensor(path);
  if (t.rank() != 2) throw ShapeError("mask file " + path + " has rank " + std::to_string(t.rank()));
  return Mask(std::move(t));
}

}  // namespace amdc::mask
