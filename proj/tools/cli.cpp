#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "amdc/data_io.hpp"
#include "amdc/error.hpp"
#include "amdc/mask.hpp"
#include "amdc/metrics.hpp"
#include "amdc/optics.hpp"
#include "amdc/recon.hpp"
#include "amdc/train.hpp"
#include "amdc/workflows.hpp"

namespace amdc::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string> kKindNames{"manual", "random", "normal", "adaptive"};

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + path);
}

std::string quote(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out;
}

Tensor clamp01(Tensor t) {
  for (double& v : t.data()) v = std::clamp(v, 0.0, 1.0);
  return t;
}

// Measurement sets written by `simulate`.
struct SceneRecord {
  std::string id;
  std::string y_c;
  std::string y_r;
  std::string truth;
};

struct MeasurementSet {
  std::string dir;
  std::size_t channels = 0, height = 0, width = 0;
  std::size_t dispersion = 1;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  std::string mask_source;
  std::vector<double> wavelengths_nm;
  std::vector<SceneRecord> scenes;

  std::string path(const std::string& rel) const { return (fs::path(dir) / rel).string(); }
  optics::Mask mask() const { return mask::load_mask(path("mask.tnsr")); }
  optics::SpectralResponse response() const { return data::default_response(wavelengths_nm); }
};

json to_json(const MeasurementSet& m) {
  json scenes = json::array();
  for (const auto& s : m.scenes)
    scenes.push_back({{"id", s.id}, {"y_c", s.y_c}, {"y_r", s.y_r}, {"truth", s.truth}});
  return {{"version", 1},
          {"channels", m.channels},
          {"height", m.height},
          {"width", m.width},
          {"dispersion_step_px", m.dispersion},
          {"noise_sigma", m.noise_sigma},
          {"seed", m.seed},
          {"mask", "mask.tnsr"},
          {"mask_source", m.mask_source},
          {"wavelengths_nm", m.wavelengths_nm},
          {"scenes", scenes}};
}

MeasurementSet load_measurements(const std::string& dir) {
  const json j = read_json((fs::path(dir) / "measurements.json").string());
  MeasurementSet m;
  m.dir = dir;
  try {
    if (j.at("version").get<int>() != 1) throw FormatError("unsupported measurements version");
    m.channels = j.at("channels").get<std::size_t>();
    m.height = j.at("height").get<std::size_t>();
    m.width = j.at("width").get<std::size_t>();
    m.dispersion = j.at("dispersion_step_px").get<std::size_t>();
    m.noise_sigma = j.at("noise_sigma").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.mask_source = j.value("mask_source", "");
    m.wavelengths_nm = j.at("wavelengths_nm").get<std::vector<double>>();
    for (const auto& s : j.at("scenes"))
      m.scenes.push_back({s.at("id").get<std::string>(), s.at("y_c").get<std::string>(),
                          s.at("y_r").get<std::string>(), s.value("truth", "")});
  } catch (const json::exception& e) {
    throw FormatError("measurements.json: " + std::string(e.what()));
  }
  if (m.scenes.empty()) throw ValidationError("measurement set " + dir + " has no scenes");
  return m;
}

// Resolved configuration shared by `train` and `bench --mask-sweep`.
struct RunConfig {
  std::string data;
  mask::MaskKind kind = mask::MaskKind::adaptive;
  recon::ModelConfig model;
  train::TrainConfig train;
  bool channels_given = false;
};

struct Overrides {
  std::string config;
  std::string data;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> stages;
  std::optional<std::string> mask_kind;
  std::optional<double> xi;
  std::optional<std::size_t> d;
  std::optional<std::size_t> epochs;

  void add_to(CLI::App* app, bool sweep) {
    app->add_option("--config", config, "JSON config with data, mask_kind, model, train")->check(CLI::ExistingFile);
    app->add_option("--data", data, "Dataset directory containing manifest.json");
    app->add_option("--seed", seed, "Seed for all randomness");
    if (!sweep) app->add_option("--stages", stages, "Number of reconstruction stages");
    if (!sweep) app->add_option("--mask-kind", mask_kind, "Mask kind")->check(CLI::IsMember(kKindNames));
    app->add_option("--xi", xi, "Weight of the reprojection loss term");
    app->add_option("--d", d, "Dispersion step in pixels");
    app->add_option("--epochs", epochs, "Training epochs");
  }
};

RunConfig resolve(const Overrides& o) {
  json j = o.config.empty() ? json::object() : read_json(o.config);
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (key != "data" && key != "mask_kind" && key != "model" && key != "train")
      throw ConfigError("unknown config field '" + key + "'");
  json model = j.value("model", json::object());
  json tr = j.value("train", json::object());
  if (o.seed) tr["seed"] = *o.seed;
  if (o.xi) tr["xi"] = *o.xi;
  if (o.epochs) tr["epochs"] = *o.epochs;
  if (o.stages) model["n_stages"] = *o.stages;
  if (o.d) model["dispersion"] = *o.d;

  RunConfig rc;
  rc.channels_given = model.contains("channels");
  try {
    rc.data = o.data.empty() ? j.value("data", std::string()) : o.data;
    const std::string kind = o.mask_kind ? *o.mask_kind : j.value("mask_kind", std::string("adaptive"));
    rc.kind = mask::parse_mask_kind(kind);
    rc.model = model.get<recon::ModelConfig>();
    rc.train = tr.get<train::TrainConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(e.what());
  }
  rc.model.validate();
  rc.train.validate();
  return rc;
}

json resolved_json(const RunConfig& rc) {
  return {{"data", rc.data}, {"mask_kind", mask::to_string(rc.kind)}, {"model", rc.model}, {"train", rc.train}};
}

void match_dataset(RunConfig& rc, const train::Dataset& ds) {
  const std::size_t c = ds.train.front().dim(0);
  if (rc.model.channels != c) {
    if (rc.channels_given)
      throw ValidationError("model has " + std::to_string(rc.model.channels) + " channels, data has " +
                            std::to_string(c));
    rc.model.channels = c;
  }
  rc.model.validate_for(ds.train.front().dim(1), ds.train.front().dim(2));
}

train::Dataset default_sweep_dataset(std::uint64_t seed) {
  data::SynthSpec spec;
  spec.seed = seed;
  data::DatasetManifest m;
  for (std::size_t i = 0; i < spec.n_scenes; ++i) m.scenes.push_back({std::to_string(i), "", ""});
  m = data::split(m, {0.8, 0.2, 0.0}, seed);
  train::Dataset ds;
  for (std::size_t i = 0; i < spec.n_scenes; ++i)
    (m.scenes[i].split == "train" ? ds.train : ds.val).push_back(data::synth_scene(spec, i).data());
  ds.response = data::default_response(data::default_wavelengths(spec.channels));
  return ds;
}

// synth

struct SynthArgs {
  std::string out;
  data::SynthSpec spec;
  double train = 0.8, val = 0.2, test = 0.0;
};

int do_synth(const SynthArgs& a, std::ostream& out) {
  a.spec.validate();
  fs::create_directories(a.out);
  auto m = data::split(data::synth_scenes(a.spec, a.out), {a.train, a.val, a.test}, a.spec.seed);
  data::save_manifest((fs::path(a.out) / "manifest.json").string(), m);
  std::map<std::string, std::size_t> counts;
  for (const auto& e : m.scenes) ++counts[e.split];
  out << json{{"manifest", (fs::path(a.out) / "manifest.json").string()},
              {"scenes", m.scenes.size()},
              {"splits", counts}}
             .dump()
      << "\n";
  return kExitOk;
}

// simulate

struct SimulateArgs {
  std::string data, cube, split, out, mask_kind = "random", mask, checkpoint;
  std::size_t d = 1;
  bool d_given = false;
  std::uint64_t seed = 0;
  double sigma = 0.005;
};

int do_simulate(const SimulateArgs& a, std::ostream& out) {
  if (a.data.empty() == a.cube.empty()) throw ConfigError("give exactly one of --data or --cube");
  struct Source {
    std::string id;
    std::string truth;
  };
  std::vector<Source> sources;
  std::vector<double> wavelengths;
  if (!a.data.empty()) {
    const auto m = data::load_manifest((fs::path(a.data) / "manifest.json").string());
    data::validate_manifest(m, a.data);
    for (const auto& e : m.scenes)
      if (a.split.empty() || e.split == a.split)
        sources.push_back({e.id, fs::absolute(fs::path(a.data) / e.path).string()});
    if (sources.empty()) throw ValidationError("no scenes in split '" + a.split + "'");
  } else {
    sources.push_back({fs::path(a.cube).stem().string(), fs::absolute(a.cube).string()});
  }

  std::vector<optics::HsiCube> cubes;
  for (const auto& s : sources) cubes.push_back(data::load_cube(s.truth));
  const std::size_t c = cubes.front().channels(), h = cubes.front().height(), w = cubes.front().width();
  for (const auto& cube : cubes)
    if (cube.data().shape() != cubes.front().data().shape())
      throw ShapeError("scenes differ in shape");
  wavelengths = cubes.front().wavelengths_nm();

  std::size_t d = a.d;
  std::optional<optics::Mask> mask;
  std::string mask_source;
  if (!a.checkpoint.empty()) {
    if (!a.mask.empty()) throw ConfigError("--mask and --checkpoint are exclusive");
    const auto ckpt = train::load_checkpoint(a.checkpoint);
    if (a.d_given && a.d != ckpt.model.dispersion)
      throw ConfigError("--d disagrees with the checkpoint dispersion");
    d = ckpt.model.dispersion;
    mask = ckpt.inference_mask();
    mask_source = "checkpoint";
  } else if (!a.mask.empty()) {
    mask = mask::load_mask(a.mask);
    mask_source = "file";
  } else {
    const auto kind = mask::parse_mask_kind(a.mask_kind);
    if (kind == mask::MaskKind::adaptive)
      throw ConfigError("an adaptive mask comes from a trained --checkpoint");
    mask = optics::Mask(mask::template_init(kind, h, w, derive_seed(a.seed, "template")).data);
    mask_source = a.mask_kind;
  }
  if (mask->height() != h || mask->width() != w)
    throw ShapeError("mask " + mask->data().shape().str() + " does not fit scenes " +
                     cubes.front().data().shape().str());

  fs::create_directories(a.out);
  MeasurementSet set;
  set.dir = a.out;
  set.channels = c;
  set.height = h;
  set.width = w;
  set.dispersion = d;
  set.noise_sigma = a.sigma;
  set.seed = a.seed;
  set.mask_source = mask_source;
  set.wavelengths_nm = wavelengths;
  const optics::SensingOperator op{*mask, optics::DispersionSpec{d}, data::default_response(wavelengths)};
  for (std::size_t i = 0; i < cubes.size(); ++i) {
    const std::uint64_t base = derive_seed(a.seed, i);
    const auto pair = optics::simulate(cubes[i].data(), op, {a.sigma, derive_seed(base, 2)},
                                       {a.sigma, derive_seed(base, 1)});
    SceneRecord r{sources[i].id, sources[i].id + "_yc.tnsr", sources[i].id + "_yr.tnsr", sources[i].truth};
    save_tensor(set.path(r.y_c), pair.y_c);
    save_tensor(set.path(r.y_r), pair.y_r);
    set.scenes.push_back(std::move(r));
  }
  mask::save_mask(set.path("mask.tnsr"), *mask);
  write_json(set.path("measurements.json"), to_json(set));
  out << json{{"measurements", set.path("measurements.json")}, {"scenes", set.scenes.size()}}.dump() << "\n";
  return kExitOk;
}

// train

struct TrainArgs {
  Overrides o;
  std::string out;
  bool resume = false;
  bool dry_run = false;
};

int run_training(const train::Dataset& ds, train::Checkpoint state, const std::string& dir,
                 std::ostream& out) {
  train::TrainOptions opts;
  opts.out_dir = dir;
  opts.on_epoch = [&](const train::EpochLog& e) { out << json(e).dump() << "\n" << std::flush; };
  const auto result = train::train(ds, std::move(state), opts);
  out << json{{"epochs", result.last.epoch},
              {"best_epoch", result.last.best_epoch},
              {"best_val_psnr", metrics::metric_json(result.last.best_val_psnr)},
              {"checkpoint", (fs::path(dir) / "last.ckpt").string()}}
             .dump()
      << "\n";
  return kExitOk;
}

// The run directory is authoritative on resume; only the epoch budget may grow.
int resume_training(const TrainArgs& a, std::ostream& out) {
  if (a.out.empty()) throw ConfigError("--resume needs --out");
  if (!a.o.config.empty() || a.o.seed || a.o.stages || a.o.mask_kind || a.o.xi || a.o.d)
    throw ConfigError("--resume accepts only --out, --data and --epochs");
  const json saved = read_json((fs::path(a.out) / "run_config.json").string());
  const std::string data = a.o.data.empty() ? saved.value("data", std::string()) : a.o.data;
  train::Checkpoint state = train::load_checkpoint((fs::path(a.out) / "last.ckpt").string());
  if (a.o.epochs) {
    if (*a.o.epochs < state.epoch)
      throw ConfigError("--epochs is below the " + std::to_string(state.epoch) + " completed epochs");
    state.train.epochs = *a.o.epochs;
  }
  if (a.dry_run) {
    out << json{{"data", data}, {"mask_kind", mask::to_string(state.mask_kind)}, {"model", state.model},
                {"train", state.train}}
               .dump(2)
        << "\n";
    return kExitOk;
  }
  return run_training(workflows::load_dataset(data), std::move(state), a.out, out);
}

int do_train(const TrainArgs& a, std::ostream& out) {
  if (a.resume) return resume_training(a, out);
  RunConfig rc = resolve(a.o);
  if (rc.data.empty()) throw ConfigError("no dataset: give --data or a config 'data' field");
  const train::Dataset ds = workflows::load_dataset(rc.data);
  match_dataset(rc, ds);
  if (a.dry_run) {
    out << resolved_json(rc).dump(2) << "\n";
    return kExitOk;
  }
  if (a.out.empty()) throw ConfigError("--out is required");
  fs::create_directories(a.out);
  write_json((fs::path(a.out) / "run_config.json").string(), resolved_json(rc));
  return run_training(ds, train::init_checkpoint(rc.model, rc.train, rc.kind, ds.train.front().dim(1),
                                                 ds.train.front().dim(2)),
                      a.out, out);
}

// reconstruct / evaluate

struct Reconstructor {
  std::string method;
  std::optional<train::Checkpoint> ckpt;
};

Reconstructor make_reconstructor(const std::string& checkpoint, const std::string& method,
                                 const MeasurementSet& m) {
  Reconstructor r;
  if (!checkpoint.empty()) {
    r.ckpt = train::load_checkpoint(checkpoint);
    if (r.ckpt->model.channels != m.channels)
      throw ValidationError("checkpoint has " + std::to_string(r.ckpt->model.channels) +
                            " channels, measurements have " + std::to_string(m.channels));
    if (r.ckpt->model.dispersion != m.dispersion)
      throw ValidationError("checkpoint dispersion differs from the measurements");
    r.ckpt->model.validate_for(m.height, m.width);
    r.method = "AMDC-" + std::to_string(r.ckpt->model.n_stages) + "stg";
  } else if (method == "shift-back") {
    r.method = "shift-back";
  } else {
    throw ConfigError("method '" + method + "' needs --checkpoint");
  }
  return r;
}

Tensor reconstruct_scene(const Reconstructor& r, const MeasurementSet& m, const SceneRecord& s,
                         const optics::Mask& mask) {
  const Tensor y_c = load_tensor(m.path(s.y_c));
  const optics::DispersionSpec disp{m.dispersion};
  if (y_c.shape() != Shape{m.height, disp.widened(m.width, m.channels)})
    throw ShapeError("measurement " + s.y_c + " has shape " + y_c.shape().str());
  if (!r.ckpt) return clamp01(optics::shift_back_init(y_c, disp, m.channels));
  const Tensor y_r = load_tensor(m.path(s.y_r));
  return recon::reconstruct(y_c, y_r, mask, r.ckpt->weights, r.ckpt->model);
}

struct ReconArgs {
  std::string measurements, checkpoint, method = "amdc", out;
};

int do_reconstruct(const ReconArgs& a, std::ostream& out) {
  const auto m = load_measurements(a.measurements);
  const auto r = make_reconstructor(a.checkpoint, a.method, m);
  const optics::Mask mask = m.mask();
  fs::create_directories(a.out);
  for (const auto& s : m.scenes)
    data::save_cube((fs::path(a.out) / (s.id + "_recon.tnsr")).string(),
                    optics::HsiCube(reconstruct_scene(r, m, s, mask), m.wavelengths_nm),
                    {m.dispersion, m.noise_sigma});
  out << json{{"method", r.method}, {"scenes", m.scenes.size()}, {"out", a.out}}.dump() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string measurements, checkpoint, method = "shift-back", recon, out;
};

int do_evaluate(const EvalArgs& a, std::ostream& out) {
  const auto m = load_measurements(a.measurements);
  metrics::ReportRow row;
  std::optional<Reconstructor> r;
  if (!a.recon.empty()) {
    if (!a.checkpoint.empty()) throw ConfigError("--recon and --checkpoint are exclusive");
    row.method = "recon:" + fs::path(a.recon).filename().string();
  } else {
    r = make_reconstructor(a.checkpoint, a.method, m);
    row.method = r->method;
    if (r->ckpt) {
      row.params = recon::param_count(r->ckpt->model);
      row.flops = recon::flop_count(r->ckpt->model, m.height, m.width);
    }
  }
  const optics::Mask mask = m.mask();
  json ids = json::array();
  for (const auto& s : m.scenes) {
    if (s.truth.empty()) throw ValidationError("scene " + s.id + " has no ground truth");
    const Tensor truth = data::load_cube(s.truth).data();
    const Tensor est = r ? reconstruct_scene(*r, m, s, mask)
                         : data::load_cube((fs::path(a.recon) / (s.id + "_recon.tnsr")).string()).data();
    if (est.shape() != truth.shape()) throw ShapeError("reconstruction of " + s.id + " has the wrong shape");
    row.scenes.push_back(metrics::evaluate(est, truth));
    ids.push_back(s.id);
  }
  row.extra = {{"scene_ids", ids}};
  const json config{{"measurements", to_json(m)}, {"method", row.method}};
  const auto report = metrics::emit_report("Evaluation", {row}, config);
  if (!a.out.empty()) metrics::write_report(a.out, report);
  out << report.table;
  return kExitOk;
}

// bench

struct BenchArgs {
  std::vector<std::size_t> stages{1, 3, 5, 9};
  std::size_t iters = 20, warmup = 3;
  std::size_t height = 32, width = 32, channels = 8, d = 1;
  std::uint64_t seed = 0;
  std::string checkpoint, out;
  bool no_baseline = false;
  bool mask_sweep = false;
  bool stages_given = false;
  std::vector<std::string> kinds = kKindNames;
  Overrides o;
};

int do_mask_sweep(const BenchArgs& a, std::ostream& out) {
  Overrides o = a.o;
  if (a.stages_given) {
    if (a.stages.size() != 1) throw ConfigError("the mask sweep takes a single --stages value");
    o.stages = a.stages.front();
  }
  RunConfig rc = resolve(o);
  const train::Dataset ds = rc.data.empty() ? default_sweep_dataset(rc.train.seed) : workflows::load_dataset(rc.data);
  match_dataset(rc, ds);
  std::vector<mask::MaskKind> kinds;
  for (const auto& k : a.kinds) kinds.push_back(mask::parse_mask_kind(k));
  std::string run_dir;
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    run_dir = (fs::path(a.out) / "runs").string();
  }
  const auto sweep = workflows::mask_sweep(ds, rc.model, rc.train, kinds, run_dir,
                                           [&](mask::MaskKind k, const train::EpochLog& e) {
                                             json j = e;
                                             j["mask_kind"] = mask::to_string(k);
                                             out << j.dump() << "\n" << std::flush;
                                           });
  if (!a.out.empty()) metrics::write_report((fs::path(a.out) / "mask_sweep").string(), sweep.report);
  out << sweep.report.table;
  return kExitOk;
}

int do_bench(const BenchArgs& a, std::ostream& out) {
  if (a.mask_sweep) return do_mask_sweep(a, out);
  std::vector<metrics::ReportRow> rows;
  const auto add_row = [&](const std::string& name, const metrics::FpsResult& f, std::size_t params) {
    metrics::ReportRow row;
    row.method = name;
    row.params = params;
    row.flops = f.flops;
    row.fps = f.fps;
    row.extra = f;
    rows.push_back(std::move(row));
  };
  std::size_t h = a.height, w = a.width, c = a.channels, d = a.d;
  if (!a.checkpoint.empty()) {
    const auto ckpt = train::load_checkpoint(a.checkpoint);
    const optics::Mask mask = ckpt.inference_mask();
    h = mask.height();
    w = mask.width();
    c = ckpt.model.channels;
    d = ckpt.model.dispersion;
    add_row("AMDC-" + std::to_string(ckpt.model.n_stages) + "stg (checkpoint)",
            metrics::fps_bench(ckpt.weights, ckpt.model, mask, a.warmup, a.iters, a.seed),
            recon::param_count(ckpt.model));
  } else {
    const optics::Mask mask(mask::template_init(mask::MaskKind::random, h, w, derive_seed(a.seed, "template")).data);
    for (std::size_t n : a.stages) {
      recon::ModelConfig cfg;
      cfg.n_stages = n;
      cfg.channels = c;
      cfg.dispersion = d;
      cfg.validate_for(h, w);
      const ParamSet weights = recon::init_model_weights(cfg, derive_seed(a.seed, "model"));
      add_row("AMDC-" + std::to_string(n) + "stg", metrics::fps_bench(weights, cfg, mask, a.warmup, a.iters, a.seed),
              recon::param_count(cfg));
    }
  }
  if (!a.no_baseline) {
    const workflows::ConvBaselineConfig base{c, d, 32};
    add_row("conv-baseline", workflows::conv_baseline_fps(base, h, w, a.warmup, a.iters, a.seed),
            init_conv_baseline(base, 0).count());
  }
  const json config{{"height", h},     {"width", w},         {"channels", c},
                    {"dispersion", d}, {"warmup", a.warmup}, {"iters", a.iters},
                    {"threads", 1},    {"seed", a.seed},     {"timed", "model_forward, no gradient tape"}};
  const auto report = metrics::emit_report("Reconstruction cost", rows, config);
  if (!a.out.empty()) metrics::write_report(a.out, report);
  out << report.table;
  return kExitOk;
}

// mask

struct MaskExportArgs {
  std::string kind = "manual", out, checkpoint;
  std::size_t height = 32, width = 32;
  std::uint64_t seed = 0;
  bool binary = false;
  double threshold = 0.5;
};

int do_mask_export(const MaskExportArgs& a, std::ostream& out) {
  const auto kind = mask::parse_mask_kind(a.kind);
  optics::Mask m(Tensor::zeros(Shape{1, 1}));
  if (!a.checkpoint.empty()) {
    m = train::load_checkpoint(a.checkpoint).inference_mask();
  } else {
    if (kind == mask::MaskKind::adaptive)
      throw ConfigError("an adaptive mask comes from a trained --checkpoint");
    m = optics::Mask(mask::template_init(kind, a.height, a.width, derive_seed(a.seed, "template")).data);
  }
  if (a.binary) m = mask::binarize(m, a.threshold);
  mask::save_mask(a.out, m);
  out << json{{"out", a.out}, {"shape", m.data().shape().dims()}, {"binary", a.binary}}.dump() << "\n";
  return kExitOk;
}

int do_mask_inspect(const std::string& path, std::ostream& out) {
  const optics::Mask m = mask::load_mask(path);
  const auto v = m.data().data();
  const double n = static_cast<double>(v.size());
  double lo = 1.0, hi = 0.0, mean = 0.0, open = 0.0;
  bool binary = true;
  for (double x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
    mean += x / n;
    open += x > 0.5 ? 1.0 / n : 0.0;
    binary = binary && (x == 0.0 || x == 1.0);
  }
  out << json{{"path", path},     {"shape", m.data().shape().dims()},
              {"min", lo},        {"max", hi},
              {"mean", mean},     {"open_fraction", open},
              {"binary", binary}}
             .dump()
      << "\n";
  return kExitOk;
}

int fail(std::ostream& err, const std::string& kind, const std::string& message, int code) {
  err << "error kind=" << kind << " message=\"" << quote(message) << "\"\n";
  return code;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adaptive-mask dual-camera CASSI simulation, training and reconstruction", "amdc"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset with a split manifest");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--seed", synth.spec.seed, "Generation and split seed");
  synth_cmd->add_option("--scenes", synth.spec.n_scenes, "Number of scenes");
  synth_cmd->add_option("--height", synth.spec.height, "Scene height");
  synth_cmd->add_option("--width", synth.spec.width, "Scene width");
  synth_cmd->add_option("--channels", synth.spec.channels, "Spectral channels");
  synth_cmd->add_option("--window", synth.spec.window, "Model window the extents must divide");
  synth_cmd->add_option("--train", synth.train, "Train fraction");
  synth_cmd->add_option("--val", synth.val, "Validation fraction");
  synth_cmd->add_option("--test", synth.test, "Test fraction");

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Simulate CASSI and RGB measurements");
  sim_cmd->add_option("--data", sim.data, "Dataset directory");
  sim_cmd->add_option("--cube", sim.cube, "Single cube file");
  sim_cmd->add_option("--split", sim.split, "Only scenes of this split (default: all)");
  sim_cmd->add_option("--out", sim.out, "Output directory")->required();
  sim_cmd->add_option("--mask-kind", sim.mask_kind, "Fixed mask kind")->check(CLI::IsMember(kKindNames));
  sim_cmd->add_option("--mask", sim.mask, "Mask file");
  sim_cmd->add_option("--checkpoint", sim.checkpoint, "Use the checkpoint's inference mask");
  auto* sim_d = sim_cmd->add_option("--d", sim.d, "Dispersion step in pixels")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--seed", sim.seed, "Mask and noise seed");
  sim_cmd->add_option("--sigma", sim.sigma, "Detector noise sigma")->check(CLI::NonNegativeNumber);

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a reconstruction model");
  tr.o.add_to(train_cmd, false);
  train_cmd->add_option("--out", tr.out, "Run directory");
  train_cmd->add_flag("--resume", tr.resume, "Continue from <out>/last.ckpt");
  train_cmd->add_flag("--dry-run", tr.dry_run, "Validate and print the resolved config");

  ReconArgs rec;
  auto* rec_cmd = app.add_subcommand("reconstruct", "Reconstruct cubes from a measurement set");
  rec_cmd->add_option("--measurements", rec.measurements, "Measurement directory")->required();
  rec_cmd->add_option("--checkpoint", rec.checkpoint, "Trained checkpoint");
  rec_cmd->add_option("--method", rec.method, "amdc or shift-back")->check(CLI::IsMember({"amdc", "shift-back"}));
  rec_cmd->add_option("--out", rec.out, "Output directory")->required();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score reconstructions against ground truth");
  eval_cmd->add_option("--measurements", ev.measurements, "Measurement directory")->required();
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Reconstruct with this checkpoint");
  eval_cmd->add_option("--method", ev.method, "amdc or shift-back")->check(CLI::IsMember({"amdc", "shift-back"}));
  eval_cmd->add_option("--recon", ev.recon, "Directory of <id>_recon.tnsr files");
  eval_cmd->add_option("--out", ev.out, "Report path prefix");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Benchmark FPS and cost, or run the mask ablation");
  auto* bench_stages =
      bench_cmd->add_option("--stages", bench.stages, "Stage counts to benchmark; one value for the sweep model")
          ->delimiter(',');
  bench_cmd->add_option("--iters", bench.iters, "Timed iterations");
  bench_cmd->add_option("--warmup", bench.warmup, "Warmup iterations");
  bench_cmd->add_option("--height", bench.height, "Input height");
  bench_cmd->add_option("--width", bench.width, "Input width");
  bench_cmd->add_option("--channels", bench.channels, "Spectral channels");
  bench_cmd->add_option("--bench-seed", bench.seed, "Seed for benchmark weights and input");
  bench_cmd->add_option("--checkpoint", bench.checkpoint, "Benchmark a trained checkpoint");
  bench_cmd->add_option("--out", bench.out, "Report path prefix, or sweep directory");
  bench_cmd->add_flag("--no-baseline", bench.no_baseline, "Skip the convolutional baseline row");
  bench_cmd->add_flag("--mask-sweep", bench.mask_sweep, "Train and compare every mask kind");
  bench_cmd->add_option("--kinds", bench.kinds, "Mask kinds for the sweep")
      ->delimiter(',')
      ->check(CLI::IsMember(kKindNames));
  bench.o.add_to(bench_cmd, true);

  auto* mask_cmd = app.add_subcommand("mask", "Export or inspect coded-aperture masks");
  mask_cmd->require_subcommand(1);
  MaskExportArgs mex;
  auto* export_cmd = mask_cmd->add_subcommand("export", "Write a mask file");
  export_cmd->add_option("--kind", mex.kind, "Mask kind")->check(CLI::IsMember(kKindNames));
  export_cmd->add_option("--out", mex.out, "Output mask file")->required();
  export_cmd->add_option("--checkpoint", mex.checkpoint, "Export the checkpoint's inference mask");
  export_cmd->add_option("--height", mex.height, "Mask height");
  export_cmd->add_option("--width", mex.width, "Mask width");
  export_cmd->add_option("--seed", mex.seed, "Template seed");
  export_cmd->add_flag("--binary", mex.binary, "Threshold to {0,1}");
  export_cmd->add_option("--threshold", mex.threshold, "Binarization threshold");
  std::string inspect_path;
  auto* inspect_cmd = mask_cmd->add_subcommand("inspect", "Print mask statistics");
  inspect_cmd->add_option("--in", inspect_path, "Mask file")->required();

  if (!args.empty() && !args.front().empty() && args.front().front() != '-' &&
      app.get_subcommand_no_throw(args.front()) == nullptr) {
    fail(err, "usage", "unknown subcommand '" + args.front() + "'", kExitUsage);
    err << app.help();
    return kExitUsage;
  }
  std::vector<const char*> argv{"amdc"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    fail(err, "usage", e.what(), kExitUsage);
    err << app.help();
    return kExitUsage;
  }
  sim.d_given = sim_d->count() > 0;
  bench.stages_given = bench_stages->count() > 0;

  try {
    if (*synth_cmd) return do_synth(synth, out);
    if (*sim_cmd) return do_simulate(sim, out);
    if (*train_cmd) return do_train(tr, out);
    if (*rec_cmd) return do_reconstruct(rec, out);
    if (*eval_cmd) return do_evaluate(ev, out);
    if (*bench_cmd) return do_bench(bench, out);
    if (*export_cmd) return do_mask_export(mex, out);
    if (*inspect_cmd) return do_mask_inspect(inspect_path, out);
    return fail(err, "usage", "no subcommand", kExitUsage);
  } catch (const ShapeError& e) {
    return fail(err, e.kind(), e.what(), kExitInput);
  } catch (const FormatError& e) {
    return fail(err, e.kind(), e.what(), kExitInput);
  } catch (const ConfigError& e) {
    return fail(err, e.kind(), e.what(), kExitInput);
  } catch (const ValidationError& e) {
    return fail(err, e.kind(), e.what(), kExitInput);
  } catch (const IoError& e) {
    return fail(err, e.kind(), e.what(), kExitInput);
  } catch (const Error& e) {
    return fail(err, e.kind(), e.what(), kExitRuntime);
  } catch (const fs::filesystem_error& e) {
    return fail(err, "io", e.what(), kExitInput);
  } catch (const std::exception& e) {
    return fail(err, "runtime", e.what(), kExitRuntime);
  }
}

}  // namespace amdc::cli
