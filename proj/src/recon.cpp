#include "amdc/recon.hpp"

#include <algorithm>
#include <cmath>

#include "amdc/error.hpp"

namespace amdc::recon {

namespace {

std::size_t ceil_mul(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
}

std::size_t spectral_hidden(const ModelConfig& c) { return ceil_mul(c.mlp_ratio, c.embed_dim); }
std::size_t spatial_hidden(const ModelConfig& c) {
  return ceil_mul(c.mlp_ratio, c.window * c.window);
}
std::size_t stage_input_channels(const ModelConfig& c) { return 2 * c.channels; }

std::string block_prefix(std::string_view stage, std::size_t i) {
  return std::string(stage) + "block" + std::to_string(i) + ".";
}

const char* block_name(BlockKind k) {
  switch (k) {
    case BlockKind::spectral: return "spectral";
    case BlockKind::spatial: return "spatial";
    case BlockKind::spatial_shifted: return "spatial_shifted";
  }
  return "?";
}

BlockKind parse_block(const std::string& s) {
  if (s == "spectral") return BlockKind::spectral;
  if (s == "spatial") return BlockKind::spatial;
  if (s == "spatial_shifted") return BlockKind::spatial_shifted;
  throw ConfigError("unknown block kind '" + s + "'");
}

ad::Var pointwise_conv(const ad::Var& x, const BoundParams& w, const std::string& prefix) {
  return ad::bias_add(ad::conv2d(x, w(prefix + "w")), w(prefix + "b"), 0);
}

void add_linear(ParamSet& p, const std::string& prefix, Shape wshape, std::size_t fan_in,
                std::size_t bias_len, std::uint64_t seed) {
  p.add(prefix + "w", fan_in_uniform(wshape, fan_in, derive_seed(seed, prefix + "w")));
  p.add(prefix + "b", Tensor::zeros(Shape{bias_len}));
}

}  // namespace

void ModelConfig::validate() const {
  if (n_stages < 1) throw ConfigError("n_stages must be >= 1");
  if (channels < 1) throw ConfigError("channels must be >= 1");
  if (window < 1) throw ConfigError("window must be >= 1");
  if (!(mlp_ratio > 0.0) || !std::isfinite(mlp_ratio)) throw ConfigError("mlp_ratio must be > 0");
  if (!std::isfinite(epsilon)) throw ConfigError("epsilon must be finite");
  if (rgb_lift_dim < 1 || embed_dim < 1) throw ConfigError("feature widths must be >= 1");
  if (ne_kernel % 2 == 0) throw ConfigError("ne_kernel must be odd");
  if (ne_factor < 1) throw ConfigError("ne_factor must be >= 1");
  if (layout.empty()) throw ConfigError("stage layout must not be empty");
}

void ModelConfig::validate_for(std::size_t height, std::size_t width) const {
  validate();
  if (height % window != 0 || width % window != 0) {
    throw ConfigError("scene " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by window " + std::to_string(window));
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  std::vector<std::string> layout;
  for (BlockKind k : c.layout) layout.emplace_back(block_name(k));
  j = nlohmann::json{{"n_stages", c.n_stages},       {"channels", c.channels},
                     {"window", c.window},           {"mlp_ratio", c.mlp_ratio},
                     {"epsilon", c.epsilon},         {"learn_epsilon", c.learn_epsilon},
                     {"dispersion", c.dispersion},   {"rgb_lift_dim", c.rgb_lift_dim},
                     {"embed_dim", c.embed_dim},     {"ne_kernel", c.ne_kernel},
                     {"ne_factor", c.ne_factor},     {"layout", layout},
                     {"residual_map", c.residual_map == ResidualMap::adjoint ? "adjoint" : "shift_back"}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  static const std::vector<std::string> known{
      "n_stages", "channels",     "window",    "mlp_ratio", "epsilon",   "learn_epsilon",
      "dispersion", "rgb_lift_dim", "embed_dim", "ne_kernel", "ne_factor", "layout", "residual_map"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown model config field '" + key + "'");
    }
  }
  try {
    c = ModelConfig{};
    c.n_stages = j.value("n_stages", c.n_stages);
    c.channels = j.value("channels", c.channels);
    c.window = j.value("window", c.window);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.learn_epsilon = j.value("learn_epsilon", c.learn_epsilon);
    c.dispersion = j.value("dispersion", c.dispersion);
    c.rgb_lift_dim = j.value("rgb_lift_dim", c.rgb_lift_dim);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.ne_kernel = j.value("ne_kernel", c.ne_kernel);
    c.ne_factor = j.value("ne_factor", c.ne_factor);
    if (j.contains("residual_map")) {
      const auto m = j.at("residual_map").get<std::string>();
      if (m == "shift_back") c.residual_map = ResidualMap::shift_back;
      else if (m == "adjoint") c.residual_map = ResidualMap::adjoint;
      else throw ConfigError("unknown residual_map '" + m + "'");
    }
    if (j.contains("layout")) {
      c.layout.clear();
      for (const auto& s : j.at("layout")) c.layout.push_back(parse_block(s.get<std::string>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

void add_stage_weights(ParamSet& p, const ModelConfig& cfg, std::string_view prefix,
                       std::uint64_t seed) {
  const std::string pre(prefix);
  const std::size_t e = cfg.embed_dim, in = stage_input_channels(cfg);
  add_linear(p, pre + "embed.", Shape{e, in, 1, 1}, in, e, seed);
  for (std::size_t i = 0; i < cfg.layout.size(); ++i) {
    const std::string bp = block_prefix(prefix, i);
    p.add(bp + "ln.g", Tensor::full(Shape{e}, 1.0));
    p.add(bp + "ln.b", Tensor::zeros(Shape{e}));
    if (cfg.layout[i] == BlockKind::spectral) {
      const std::size_t hid = spectral_hidden(cfg);
      add_linear(p, bp + "fc1.", Shape{hid, e}, e, hid, seed);
      add_linear(p, bp + "fc2.", Shape{e, hid}, hid, e, seed);
    } else {
      const std::size_t pos = cfg.window * cfg.window, hid = spatial_hidden(cfg);
      add_linear(p, bp + "fc1.", Shape{pos, hid}, pos, hid, seed);
      add_linear(p, bp + "fc2.", Shape{hid, pos}, hid, pos, seed);
    }
  }
  add_linear(p, pre + "fuse.", Shape{cfg.channels, e, 1, 1}, e, cfg.channels, seed);
}

ParamSet init_model_weights(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamSet p;
  const std::size_t c = cfg.channels, k = cfg.ne_kernel, lift = cfg.rgb_lift_dim;
  add_linear(p, "ne.conv.", Shape{c, c, k, k}, c * k * k, c, seed);
  if (cfg.learn_epsilon) p.add("ne.eps", Tensor::full(Shape{1}, cfg.epsilon));
  add_linear(p, "rgb_init.lift.", Shape{lift, 3, 1, 1}, 3, lift, seed);
  add_linear(p, "rgb_init.proj.", Shape{c, lift, 1, 1}, lift, c, seed);
  add_stage_weights(p, cfg, kInitStage, seed);
  if (cfg.n_stages >= 2) add_stage_weights(p, cfg, kSharedStage, seed);
  return p;
}

ad::Var noise_estimate(const ad::Var& xc_feat, const ad::Var& xr_feat, const BoundParams& w,
                       const ModelConfig& cfg) {
  if (xc_feat.shape() != xr_feat.shape()) {
    throw ShapeError("noise_estimate: branch shapes differ " + xc_feat.shape().str() + " vs " +
                     xr_feat.shape().str());
  }
  const ad::Var kernel = w("ne.conv.w");
  const ad::Var bias = w("ne.conv.b");
  auto branch = [&](const ad::Var& x) {
    const ad::Var up = ad::resample(x, ad::ResampleDir::up, cfg.ne_factor);
    const ad::Var conv = ad::bias_add(ad::conv2d(up, kernel, 1, cfg.ne_kernel / 2), bias, 0);
    return ad::softmax(ad::resample(conv, ad::ResampleDir::down, cfg.ne_factor), 0);
  };
  const ad::Var diff = ad::sub(branch(xc_feat), branch(xr_feat));
  if (cfg.learn_epsilon) return ad::add_scalar_var(diff, w("ne.eps"));
  return ad::add_scalar(diff, cfg.epsilon);
}

ad::Var rgb_init(const ad::Var& y_r, const BoundParams& w, const ModelConfig&) {
  const Shape& s = y_r.shape();
  if (s.rank() != 3 || s[0] != 3) throw ShapeError("rgb_init: expected [3,H,W], got " + s.str());
  return pointwise_conv(ad::gelu(pointwise_conv(y_r, w, "rgb_init.lift.")), w, "rgb_init.proj.");
}

ad::Var spectral_mlp(const ad::Var& x, const BoundParams& w, const std::string& prefix) {
  const Shape s = x.shape();
  const std::size_t e = s[0], pixels = s.numel() / e;
  const ad::Var flat = ad::reshape(x, Shape{e, pixels});
  const ad::Var norm = ad::layer_norm(flat, 0, w(prefix + "ln.g"), w(prefix + "ln.b"));
  const ad::Var hidden =
      ad::gelu(ad::bias_add(ad::matmul(w(prefix + "fc1.w"), norm), w(prefix + "fc1.b"), 0));
  const ad::Var out = ad::bias_add(ad::matmul(w(prefix + "fc2.w"), hidden), w(prefix + "fc2.b"), 0);
  return ad::reshape(ad::add(flat, out), s);
}

ad::Var swin_spatial_mlp(const ad::Var& x, const BoundParams& w, const std::string& prefix,
                         std::size_t window, bool shifted) {
  const Shape s = x.shape();
  if (s.rank() != 3 || s[1] % window != 0 || s[2] % window != 0) {
    throw ShapeError("swin_spatial_mlp: " + s.str() + " not divisible by window " +
                     std::to_string(window));
  }
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  ad::Var v = ad::layer_norm(x, 0, w(prefix + "ln.g"), w(prefix + "ln.b"));
  if (shifted) v = ad::roll(ad::roll(v, 1, -half), 2, -half);
  const ad::Var tiles = ad::window_partition(v, window);
  const Shape tshape = tiles.shape();
  const std::size_t pos = window * window;
  const ad::Var rows = ad::reshape(tiles, Shape{tshape.numel() / pos, pos});
  const ad::Var hidden =
      ad::gelu(ad::bias_add(ad::matmul(rows, w(prefix + "fc1.w")), w(prefix + "fc1.b"), 1));
  const ad::Var mixed = ad::bias_add(ad::matmul(hidden, w(prefix + "fc2.w")), w(prefix + "fc2.b"), 1);
  ad::Var out = ad::window_merge(ad::reshape(mixed, tshape), window);
  if (shifted) out = ad::roll(ad::roll(out, 1, half), 2, half);
  return ad::add(x, out);
}

ad::Var noise_to_measurement(const ad::Var& noise_cube, const ModelConfig& cfg) {
  const ad::Var spread = optics::disperse_sum(noise_cube, optics::DispersionSpec{cfg.dispersion});
  return ad::scale(spread, 1.0 / static_cast<double>(noise_cube.shape()[0]));
}

ad::Var stage_forward(const ad::Var& x_n, const ad::Var& y_c, const ad::Var& noise_meas,
                      const ad::Var& rgb_feat, const ad::Var& mask, const BoundParams& w,
                      std::string_view stage_prefix, const ModelConfig& cfg) {
  const optics::DispersionSpec disp{cfg.dispersion};
  const ad::Var residual =
      ad::sub(ad::sub(y_c, noise_meas), optics::reproject(x_n, mask, disp));
  ad::Var residual_cube = optics::shift_back(residual, disp, cfg.channels);
  if (cfg.residual_map == ResidualMap::adjoint) residual_cube = optics::mask_modulate(residual_cube, mask);
  const std::string pre(stage_prefix);
  ad::Var z = pointwise_conv(ad::concat({residual_cube, rgb_feat}, 0), w, pre + "embed.");
  for (std::size_t i = 0; i < cfg.layout.size(); ++i) {
    const std::string bp = block_prefix(stage_prefix, i);
    switch (cfg.layout[i]) {
      case BlockKind::spectral: z = spectral_mlp(z, w, bp); break;
      case BlockKind::spatial: z = swin_spatial_mlp(z, w, bp, cfg.window, false); break;
      case BlockKind::spatial_shifted: z = swin_spatial_mlp(z, w, bp, cfg.window, true); break;
    }
  }
  return ad::add(x_n, pointwise_conv(z, w, pre + "fuse."));
}

ForwardResult model_forward(const ad::Var& y_c, const ad::Var& y_r, const ad::Var& mask,
                            const BoundParams& w, const ModelConfig& cfg) {
  cfg.validate();
  ForwardResult r;
  r.x0 = optics::shift_back(y_c, optics::DispersionSpec{cfg.dispersion}, cfg.channels);
  cfg.validate_for(r.x0.shape()[1], r.x0.shape()[2]);
  const ad::Var rgb_feat = rgb_init(y_r, w, cfg);
  if (rgb_feat.shape() != r.x0.shape()) {
    throw ShapeError("model_forward: RGB measurement " + y_r.shape().str() +
                     " does not match CASSI measurement " + y_c.shape().str());
  }
  r.noise_cube = noise_estimate(r.x0, rgb_feat, w, cfg);
  r.noise_meas = noise_to_measurement(r.noise_cube, cfg);
  ad::Var x = r.x0;
  for (std::size_t s = 0; s < cfg.n_stages; ++s) {
    x = stage_forward(x, y_c, r.noise_meas, rgb_feat, mask, w, s == 0 ? kInitStage : kSharedStage,
                      cfg);
    r.stages.push_back(x);
  }
  r.x_hat = x;
  return r;
}

Tensor reconstruct(const Tensor& y_c, const Tensor& y_r, const optics::Mask& mask,
                   const ParamSet& w, const ModelConfig& cfg) {
  ad::Tape tape;
  ad::NoGradGuard guard(tape);
  const BoundParams bound(tape, w, false);
  const auto r = model_forward(tape.constant(y_c), tape.constant(y_r), tape.constant(mask.data()),
                               bound, cfg);
  Tensor out = r.x_hat.value();
  for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

std::size_t param_count(const ParamSet& w) { return w.count(); }

std::size_t param_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t c = cfg.channels, e = cfg.embed_dim, k = cfg.ne_kernel, l = cfg.rgb_lift_dim;
  const std::size_t ne = c * c * k * k + c + (cfg.learn_epsilon ? 1 : 0);
  const std::size_t rgb = (3 * l + l) + (l * c + c);
  std::size_t stage = stage_input_channels(cfg) * e + e + e * c + c;
  for (BlockKind b : cfg.layout) {
    stage += 2 * e;
    if (b == BlockKind::spectral) {
      const std::size_t hid = spectral_hidden(cfg);
      stage += 2 * hid * e + hid + e;
    } else {
      const std::size_t pos = cfg.window * cfg.window, hid = spatial_hidden(cfg);
      stage += 2 * hid * pos + hid + pos;
    }
  }
  return ne + rgb + stage * (cfg.n_stages >= 2 ? 2 : 1);
}

std::uint64_t flop_count(const ModelConfig& cfg, std::size_t height, std::size_t width) {
  cfg.validate_for(height, width);
  const std::uint64_t p = height * width;
  const std::uint64_t c = cfg.channels, e = cfg.embed_dim, k = cfg.ne_kernel, l = cfg.rgb_lift_dim;
  const std::uint64_t f = cfg.ne_factor;
  const std::uint64_t rgb = 2 * l * 3 * p + 2 * c * l * p;
  const std::uint64_t ne = 2 * (2 * c * c * k * k * f * f * p);
  const std::uint64_t modulations = cfg.residual_map == ResidualMap::adjoint ? 2 : 1;
  std::uint64_t stage = modulations * 2 * c * p                    // mask modulation
                        + 2 * e * stage_input_channels(cfg) * p    // embed
                        + 2 * c * e * p;                           // fuse
  for (BlockKind b : cfg.layout) {
    if (b == BlockKind::spectral) {
      stage += 2 * (2 * spectral_hidden(cfg) * e * p);
    } else {
      stage += 2 * (2 * e * p * spatial_hidden(cfg));
    }
  }
  return rgb + ne + stage * cfg.n_stages;
}

}  // namespace amdc::recon
