#include "amdc/workflows.hpp"

#include <chrono>
#include <filesystem>

#include "amdc/error.hpp"

namespace amdc::workflows {

train::Dataset load_dataset(const std::string& dir) {
  const auto manifest = data::load_manifest((std::filesystem::path(dir) / "manifest.json").string());
  data::validate_manifest(manifest, dir);
  train::Dataset ds;
  ds.train = data::load_split(manifest, dir, "train");
  ds.val = data::load_split(manifest, dir, "val");
  if (ds.train.empty()) throw ConfigError("dataset " + dir + " has no train scenes");
  if (ds.val.empty()) throw ConfigError("dataset " + dir + " has no val scenes");
  ds.response = data::default_response(manifest.wavelengths_nm);
  return ds;
}

namespace {

ad::Var conv3(const ad::Var& x, const BoundParams& w, const std::string& name) {
  return ad::bias_add(ad::conv2d(x, w(name + ".w"), 1, 1), w(name + ".b"), 0);
}

}  // namespace

ParamSet init_conv_baseline(const ConvBaselineConfig& cfg, std::uint64_t seed) {
  if (cfg.channels < 2 || cfg.hidden < 1 || cfg.dispersion < 1)
    throw ConfigError("conv baseline: bad config");
  ParamSet p;
  const auto layer = [&](const std::string& name, std::size_t out, std::size_t in) {
    p.add(name + ".w", fan_in_uniform(Shape{out, in, 3, 3}, in * 9, derive_seed(seed, name + ".w")));
    p.add(name + ".b", fan_in_uniform(Shape{out}, in * 9, derive_seed(seed, name + ".b")));
  };
  layer("conv1", cfg.hidden, cfg.channels);
  layer("conv2", cfg.hidden, cfg.hidden);
  layer("conv3", cfg.channels, cfg.hidden);
  return p;
}

ad::Var conv_baseline_forward(const ad::Var& y_c, const BoundParams& w, const ConvBaselineConfig& cfg) {
  const ad::Var x0 = optics::shift_back(y_c, optics::DispersionSpec{cfg.dispersion}, cfg.channels);
  const ad::Var h1 = ad::gelu(conv3(x0, w, "conv1"));
  const ad::Var h2 = ad::gelu(conv3(h1, w, "conv2"));
  return ad::add(x0, conv3(h2, w, "conv3"));
}

std::uint64_t conv_baseline_flops(const ConvBaselineConfig& cfg, std::size_t height, std::size_t width) {
  const std::uint64_t plane = static_cast<std::uint64_t>(height) * width;
  const std::uint64_t pairs = cfg.channels * cfg.hidden + cfg.hidden * cfg.hidden + cfg.hidden * cfg.channels;
  return 2ull * 9ull * pairs * plane;
}

metrics::FpsResult conv_baseline_fps(const ConvBaselineConfig& cfg, std::size_t height, std::size_t width,
                                     std::size_t warmup, std::size_t iters, std::uint64_t seed) {
  const ParamSet weights = init_conv_baseline(cfg, seed);
  const optics::DispersionSpec disp{cfg.dispersion};
  const Tensor y_c = Tensor::uniform(Shape{height, disp.widened(width, cfg.channels)}, seed);
  const double median = metrics::median_seconds(
      [&] {
        ad::Tape tape;
        ad::NoGradGuard guard(tape);
        const BoundParams bound(tape, weights, false);
        const ad::Var out = conv_baseline_forward(tape.constant(y_c), bound, cfg);
        if (!out.value().all_finite()) throw NumericError("conv baseline: non-finite output");
      },
      warmup, iters);
  metrics::FpsResult r;
  r.median_seconds = median;
  r.fps = 1.0 / median;
  r.warmup = warmup;
  r.iters = iters;
  r.height = height;
  r.width = width;
  r.channels = cfg.channels;
  r.flops = conv_baseline_flops(cfg, height, width);
  return r;
}

train::Checkpoint best_state(const train::Checkpoint& state) {
  train::Checkpoint out = state;
  if (state.best_weights) out.weights = *state.best_weights;
  return out;
}

SweepResult mask_sweep(const train::Dataset& data, const recon::ModelConfig& model,
                       const train::TrainConfig& train_cfg, std::span<const mask::MaskKind> kinds,
                       const std::string& out_dir,
                       const std::function<void(mask::MaskKind, const train::EpochLog&)>& on_epoch) {
  if (kinds.empty()) throw ConfigError("mask sweep: no mask kinds");
  if (data.train.empty() || data.val.empty()) throw ConfigError("mask sweep: empty split");
  const std::size_t h = data.train.front().dim(1), w = data.train.front().dim(2);

  SweepResult result;
  nlohmann::json jkinds = nlohmann::json::array();
  for (const mask::MaskKind kind : kinds) {
    const std::string name = mask::to_string(kind);
    jkinds.push_back(name);
    train::TrainOptions opts;
    if (!out_dir.empty()) opts.out_dir = (std::filesystem::path(out_dir) / name).string();
    if (on_epoch) opts.on_epoch = [&](const train::EpochLog& e) { on_epoch(kind, e); };

    const auto start = std::chrono::steady_clock::now();
    auto run = train::train(data, train::init_checkpoint(model, train_cfg, kind, h, w), opts);
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;

    metrics::ReportRow row;
    row.method = "AMDC-" + std::to_string(model.n_stages) + "stg " + name;
    row.scenes = train::validate_scenes(data, best_state(run.last));
    row.params = recon::param_count(model);
    row.flops = recon::flop_count(model, h, w);
    row.extra = {{"mask_kind", name},
                 {"best_epoch", run.last.best_epoch},
                 {"best_val_psnr", metrics::metric_json(run.last.best_val_psnr)},
                 {"epochs", run.last.epoch},
                 {"train_seconds", elapsed.count()}};
    result.rows.push_back(std::move(row));
    result.states.push_back(std::move(run.last));
  }
  const nlohmann::json config{{"model", model},
                              {"train", train_cfg},
                              {"mask_kinds", jkinds},
                              {"train_scenes", data.train.size()},
                              {"val_scenes", data.val.size()},
                              {"scene_shape", {data.train.front().dim(0), h, w}}};
  result.report = metrics::emit_report("Mask ablation", result.rows, config);
  return result;
}

}  // namespace amdc::workflows
