#include <doctest.h>

#include <cmath>

#include "amdc/error.hpp"
#include "amdc/recon.hpp"
#include "test_util.hpp"

using namespace amdc;
using namespace amdc::recon;

namespace {

ModelConfig small_config(std::size_t stages = 1) {
  ModelConfig c;
  c.n_stages = stages;
  c.channels = 4;
  c.window = 4;
  c.embed_dim = 8;
  c.rgb_lift_dim = 8;
  return c;
}

struct Scene {
  Tensor cube, mask, y_c, y_r;
};

Scene make_scene(const ModelConfig& cfg, std::size_t h, std::size_t w, std::uint64_t seed) {
  Scene s;
  s.cube = Tensor::uniform(Shape{cfg.channels, h, w}, seed);
  s.mask = Tensor::uniform(Shape{h, w}, seed + 1);
  Tensor om(Shape{cfg.channels, 3});
  for (double& v : om.data()) v = 1.0 / static_cast<double>(cfg.channels);
  const optics::SensingOperator op{optics::Mask(s.mask), optics::DispersionSpec{cfg.dispersion},
                                   optics::SpectralResponse{om}};
  const auto m = optics::simulate(s.cube, op, {0.01, seed + 2}, {0.01, seed + 3});
  s.y_c = m.y_c;
  s.y_r = m.y_r;
  return s;
}

void zero_prefix(ParamSet& p, std::string_view prefix) {
  for (auto& [name, t] : p.entries())
    if (name.starts_with(prefix)) t = Tensor::zeros(t.shape());
}

bool constant_per_tile(const Tensor& t, std::size_t window) {
  const std::size_t c_n = t.dim(0), h = t.dim(1), w = t.dim(2);
  for (std::size_t c = 0; c < c_n; ++c)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t col = 0; col < w; ++col) {
        const double anchor = t.at({c, r - r % window, col - col % window});
        if (std::abs(t.at({c, r, col}) - anchor) > 1e-12) return false;
      }
  return true;
}

}  // namespace

TEST_CASE("model config") {
  const ModelConfig c = small_config(3);
  CHECK_NOTHROW(c.validate_for(8, 12));
  CHECK_THROWS_AS(c.validate_for(8, 10), ConfigError);
  nlohmann::json j = c;
  const ModelConfig back = j.get<ModelConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK(back.layout == c.layout);

  j["n_stage"] = 2;
  CHECK_THROWS_AS(j.get<ModelConfig>(), ConfigError);
  CHECK_THROWS_AS(nlohmann::json({{"layout", {"attention"}}}).get<ModelConfig>(), ConfigError);
  ModelConfig bad = c;
  bad.n_stages = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.ne_kernel = 2;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("noise estimator") {
  ModelConfig cfg = small_config();
  const ParamSet w = init_model_weights(cfg, 1);
  ad::Tape t;
  const BoundParams bound(t, w, false);
  const Tensor x = Tensor::uniform(Shape{4, 8, 8}, 2);

  const ad::Var same = noise_estimate(t.constant(x), t.constant(x), bound, cfg);
  CHECK(same.shape() == Shape{4, 8, 8});
  for (double v : same.value().data()) CHECK(v == cfg.epsilon);

  cfg.epsilon = 0.0;
  const ad::Var zero = noise_estimate(t.constant(x), t.constant(x), bound, cfg);
  CHECK(zero.value().max_abs() == 0.0);

  // Softmax branches each sum to one over channels.
  cfg.epsilon = 0.25;
  const Tensor other = Tensor::uniform(Shape{4, 8, 8}, 3);
  const Tensor n = noise_estimate(t.constant(x), t.constant(other), bound, cfg).value();
  CHECK(n.max_abs() > 0.25 + 1e-6);
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 8; ++c) {
      double s = 0.0;
      for (std::size_t ch = 0; ch < 4; ++ch) s += n.at({ch, r, c});
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }

  CHECK_THROWS_AS(noise_estimate(t.constant(x), t.constant(Tensor::zeros(Shape{4, 8, 4})), bound, cfg),
                  ShapeError);

  cfg.learn_epsilon = true;
  ParamSet wl = init_model_weights(cfg, 1);
  CHECK(wl.contains("ne.eps"));
  wl.at("ne.eps") = Tensor::full(Shape{1}, 0.125);
  const BoundParams bl(t, wl, false);
  for (double v : noise_estimate(t.constant(x), t.constant(x), bl, cfg).value().data())
    CHECK(v == 0.125);
}

TEST_CASE("noise into measurement space") {
  const ModelConfig cfg = small_config();
  ad::Tape t;
  const Tensor n = Tensor::full(Shape{4, 2, 5}, 0.2);
  const Tensor m = noise_to_measurement(t.constant(n), cfg).value();
  CHECK(m.shape() == Shape{2, 8});
  // Columns with all four channels overlapping carry the per-voxel value.
  for (std::size_t r = 0; r < 2; ++r) {
    CHECK(m.at({r, 3}) == doctest::Approx(0.2).epsilon(1e-14));
    CHECK(m.at({r, 4}) == doctest::Approx(0.2).epsilon(1e-14));
    CHECK(m.at({r, 0}) == doctest::Approx(0.05).epsilon(1e-14));
    CHECK(m.at({r, 7}) == doctest::Approx(0.05).epsilon(1e-14));
  }
}

TEST_CASE("rgb initialiser") {
  const ModelConfig cfg = small_config();
  ParamSet w = init_model_weights(cfg, 4);
  ad::Tape t;
  const Tensor y = Tensor::uniform(Shape{3, 8, 8}, 5);
  CHECK(rgb_init(t.constant(y), BoundParams(t, w, false), cfg).shape() == Shape{4, 8, 8});
  CHECK_THROWS_AS(rgb_init(t.constant(Tensor::zeros(Shape{2, 8, 8})), BoundParams(t, w, false), cfg),
                  ShapeError);
  zero_prefix(w, "rgb_init.proj.");
  CHECK(rgb_init(t.constant(y), BoundParams(t, w, false), cfg).value().max_abs() == 0.0);
}

TEST_CASE("spectral mlp") {
  const ModelConfig cfg = small_config();
  ParamSet w = init_model_weights(cfg, 6);
  const std::string pre = "init_stage.block0.";
  ad::Tape t;
  const Tensor x = Tensor::gaussian(Shape{8, 4, 4}, 7);
  const Tensor out = spectral_mlp(t.constant(x), BoundParams(t, w, false), pre).value();
  CHECK(out.shape() == x.shape());
  CHECK_FALSE(bit_equal(out, x));

  // Pixels are processed independently: a spatial roll commutes with the op.
  ad::Tape t2;
  const BoundParams b2(t2, w, false);
  const ad::Var rolled = ad::roll(ad::roll(t2.constant(x), 1, 1), 2, 3);
  const Tensor a = spectral_mlp(rolled, b2, pre).value();
  const Tensor b = ad::roll(ad::roll(t2.constant(out), 1, 1), 2, 3).value();
  CHECK((a - b).max_abs() < 1e-14);

  zero_prefix(w, pre + "fc");
  CHECK(bit_equal(spectral_mlp(t.constant(x), BoundParams(t, w, false), pre).value(), x));
}

TEST_CASE("windowed spatial mlp") {
  const ModelConfig cfg = small_config();
  ParamSet w = init_model_weights(cfg, 8);
  const std::string pre = "init_stage.block1.";
  const Tensor x = Tensor::gaussian(Shape{8, 8, 12}, 9);

  SUBCASE("zero weights give the identity") {
    zero_prefix(w, pre + "fc");
    ad::Tape t;
    const BoundParams b(t, w, false);
    CHECK(bit_equal(swin_spatial_mlp(t.constant(x), b, pre, 4, false).value(), x));
    CHECK(bit_equal(swin_spatial_mlp(t.constant(x), b, pre, 4, true).value(), x));
  }

  SUBCASE("constant tiles stay constant under uniform weights") {
    Tensor tiles(Shape{8, 8, 12});
    const Tensor levels = Tensor::gaussian(Shape{8, 2, 3}, 10);
    for (std::size_t c = 0; c < 8; ++c)
      for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t col = 0; col < 12; ++col)
          tiles.at({c, r, col}) = levels.at({c, r / 4, col / 4});
    zero_prefix(w, pre + "fc1.b");
    zero_prefix(w, pre + "fc2.b");
    w.at(pre + "fc1.w") = Tensor::full(w.at(pre + "fc1.w").shape(), 0.3);
    w.at(pre + "fc2.w") = Tensor::full(w.at(pre + "fc2.w").shape(), -0.2);
    ad::Tape t;
    const Tensor out = swin_spatial_mlp(t.constant(tiles), BoundParams(t, w, false), pre, 4, false).value();
    CHECK(constant_per_tile(out, 4));
    CHECK_FALSE(bit_equal(out, tiles));
  }

  SUBCASE("unshifted mixing stays inside a tile") {
    ad::Tape t;
    const BoundParams b(t, w, false);
    const Tensor base = swin_spatial_mlp(t.constant(x), b, pre, 4, false).value();
    Tensor bumped = x;
    bumped.at({2, 5, 6}) += 1.0;
    const Tensor out = swin_spatial_mlp(t.constant(bumped), b, pre, 4, false).value();
    bool inside_changed = false, outside_same = true;
    for (std::size_t c = 0; c < 8; ++c)
      for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t col = 0; col < 12; ++col) {
          const bool inside = r / 4 == 1 && col / 4 == 1;
          const bool same = out.at({c, r, col}) == base.at({c, r, col});
          if (inside && !same && !(r == 5 && col == 6)) inside_changed = true;
          if (!inside && !same) outside_same = false;
        }
    CHECK(inside_changed);
    CHECK(outside_same);
  }

  SUBCASE("shifted variant is the unshifted op conjugated by a half-window roll") {
    ad::Tape t;
    const BoundParams b(t, w, false);
    const ad::Var xv = t.constant(x);
    const Tensor shifted = swin_spatial_mlp(xv, b, pre, 4, true).value();
    // Residual and layer norm commute with the roll, so roll the whole op.
    const ad::Var in = ad::roll(ad::roll(xv, 1, -2), 2, -2);
    const ad::Var op = swin_spatial_mlp(in, b, pre, 4, false);
    const Tensor expect = ad::roll(ad::roll(op, 1, 2), 2, 2).value();
    CHECK((shifted - expect).max_abs() < 1e-14);
    CHECK((shifted - swin_spatial_mlp(xv, b, pre, 4, false).value()).max_abs() > 1e-6);
  }

  ad::Tape t;
  CHECK_THROWS_AS(swin_spatial_mlp(t.constant(Tensor::zeros(Shape{8, 6, 8})), BoundParams(t, w, false),
                                   pre, 4, false),
                  ShapeError);
}

TEST_CASE("stage fixed point") {
  const ModelConfig cfg = small_config();
  ParamSet w = init_model_weights(cfg, 12);
  const Scene s = make_scene(cfg, 8, 8, 13);
  const optics::SensingOperator op{optics::Mask(s.mask), optics::DispersionSpec{1},
                                   optics::SpectralResponse{Tensor::full(Shape{4, 3}, 0.25)}};
  const Tensor clean = optics::cassi_forward(s.cube, op, {});

  ad::Tape t;
  const ad::Var xv = t.constant(s.cube);
  const ad::Var residual =
      ad::sub(t.constant(clean), optics::reproject(xv, t.constant(s.mask), optics::DispersionSpec{1}));
  CHECK(residual.value().max_abs() == 0.0);

  zero_prefix(w, "init_stage.fuse.");
  const BoundParams b(t, w, false);
  const ad::Var rgb = rgb_init(t.constant(s.y_r), b, cfg);
  const ad::Var next = stage_forward(xv, t.constant(clean), t.constant(Tensor::zeros(clean.shape())),
                                     rgb, t.constant(s.mask), b, kInitStage, cfg);
  CHECK(bit_equal(next.value(), s.cube));
}

TEST_CASE("stage and model gradients") {
  for (std::size_t stages : {1u, 2u}) {
    ModelConfig cfg = small_config(stages);
    cfg.learn_epsilon = true;
    const ParamSet w = init_model_weights(cfg, 20 + stages);
    const std::string shared = stages >= 2 ? "shared_stage." : "init_stage.";
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const Scene s = make_scene(cfg, 8, 8, 30 + seed);
      const auto r = ad::grad_check(
          [&](ad::Tape& tape, const std::vector<ad::Var>& v) {
            BoundParams b(tape, w, false);
            b.rebind("ne.conv.w", v[2]);
            b.rebind("ne.eps", v[3]);
            b.rebind(shared + "embed.w", v[4]);
            b.rebind(shared + "block1.fc1.w", v[5]);
            b.rebind("init_stage.block0.ln.g", v[6]);
            const auto out = model_forward(v[0], v[1], v[7], b, cfg);
            return test::probe_sum(out.x_hat, seed);
          },
          {s.y_c, s.y_r, w.at("ne.conv.w"), w.at("ne.eps"), w.at(shared + "embed.w"),
           w.at(shared + "block1.fc1.w"), w.at("init_stage.block0.ln.g"), s.mask});
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("model forward across stage counts") {
  std::size_t count3 = 0;
  std::uint64_t flops[6] = {};
  for (std::size_t n : {1u, 2u, 3u, 5u}) {
    const ModelConfig cfg = small_config(n);
    const ParamSet w = init_model_weights(cfg, 40);
    CHECK(param_count(w) == param_count(cfg));
    CHECK(w.contains("shared_stage.embed.w") == (n >= 2));
    if (n == 3) count3 = param_count(w);
    if (n == 5) CHECK(param_count(w) == count3);

    const Scene s = make_scene(cfg, 8, 12, 41);
    ad::Tape t;
    const BoundParams b(t, w, true);
    const auto out = model_forward(t.constant(s.y_c), t.constant(s.y_r), t.constant(s.mask), b, cfg);
    CHECK(out.stages.size() == n);
    CHECK(out.x_hat.shape() == Shape{4, 8, 12});
    CHECK(out.noise_meas.shape() == s.y_c.shape());
    CHECK(out.x_hat.value().all_finite());
    CHECK(t.flops() == flop_count(cfg, 8, 12));
    flops[n] = flop_count(cfg, 8, 12);

    const Tensor rec = reconstruct(s.y_c, s.y_r, optics::Mask(s.mask), w, cfg);
    CHECK(rec.shape() == Shape{4, 8, 12});
    Tensor clamped = out.x_hat.value();
    for (double& v : clamped.data()) v = std::min(1.0, std::max(0.0, v));
    CHECK(bit_equal(rec, clamped));
  }
  const std::uint64_t per_stage = flops[2] - flops[1];
  CHECK(flops[3] - flops[2] == per_stage);
  CHECK(flops[5] - flops[3] == 2 * per_stage);
  CHECK(param_count(small_config(1)) < param_count(small_config(2)));

  ModelConfig cfg = small_config();
  const ParamSet w = init_model_weights(cfg, 40);
  const Scene s = make_scene(cfg, 8, 8, 1);
  CHECK_THROWS_AS(reconstruct(s.y_c, Tensor::zeros(Shape{3, 8, 4}), optics::Mask(s.mask), w, cfg),
                  ShapeError);
}

TEST_CASE("adjoint residual map") {
  ModelConfig cfg = small_config(2);
  cfg.residual_map = ResidualMap::adjoint;
  const nlohmann::json j = cfg;
  CHECK(j["residual_map"] == "adjoint");
  CHECK(j.get<ModelConfig>().residual_map == ResidualMap::adjoint);
  CHECK_THROWS_AS(nlohmann::json({{"residual_map", "pinv"}}).get<ModelConfig>(), ConfigError);

  const ParamSet w = init_model_weights(cfg, 50);
  const Scene s = make_scene(cfg, 8, 8, 51);
  ad::Tape t;
  const auto out = model_forward(t.constant(s.y_c), t.constant(s.y_r), t.constant(s.mask),
                                 BoundParams(t, w, false), cfg);
  CHECK(t.flops() == flop_count(cfg, 8, 8));
  ModelConfig crop = cfg;
  crop.residual_map = ResidualMap::shift_back;
  CHECK(flop_count(cfg, 8, 8) == flop_count(crop, 8, 8) + 2 * 2 * 4 * 64);
  const Tensor other = reconstruct(s.y_c, s.y_r, optics::Mask(s.mask), w, crop);
  CHECK((out.x_hat.value() - other).max_abs() > 1e-9);

  const auto r = ad::grad_check(
      [&](ad::Tape& tape, const std::vector<ad::Var>& v) {
        BoundParams b(tape, w, false);
        return test::probe_sum(model_forward(v[0], tape.constant(s.y_r), v[1], b, cfg).x_hat, 5);
      },
      {s.y_c, s.mask});
  CHECK(r.max_rel_error < 1e-4);
}
