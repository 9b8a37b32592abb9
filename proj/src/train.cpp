#include "amdc/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "amdc/error.hpp"
#include "binio.hpp"

namespace amdc::train {

namespace {

constexpr std::array<char, 4> kCheckpointMagic{'A', 'M', 'D', 'C'};

bool is_adaptive(const Checkpoint& s) { return s.mask_kind == mask::MaskKind::adaptive; }

bool in_phase1(const Checkpoint& s, std::size_t epoch) {
  return is_adaptive(s) && !s.frozen_mask && epoch < s.train.phase1_epochs;
}

optics::NoiseSpec noise(const TrainConfig& cfg, std::uint64_t seed, std::uint64_t detector) {
  return {cfg.noise_sigma, derive_seed(seed, detector)};
}

Tensor noise_field(const Shape& shape, const optics::NoiseSpec& spec) {
  Tensor t = Tensor::zeros(shape);
  optics::add_noise(t, spec);
  return t;
}

std::vector<Tensor> calibration_rgb(const Dataset& data) {
  std::vector<Tensor> out;
  for (const Tensor& cube : data.train) out.push_back(optics::rgb_project(cube, data.response, {}));
  return out;
}

void freeze(Checkpoint& s, const Dataset& data) {
  const auto cal = calibration_rgb(data);
  s.frozen_mask = mask::freeze_mask(s.weights, cal, s.mask_template);
  s.weights.erase_prefix(mask::kMaskNetPrefix);
  s.adam.erase_prefix(mask::kMaskNetPrefix);
}

void append_log(const std::string& out_dir, const EpochLog& e, bool truncate) {
  std::ofstream out(std::filesystem::path(out_dir) / "metrics.jsonl",
                    truncate ? std::ios::trunc : std::ios::app);
  if (!out) throw IoError("cannot write metrics log in " + out_dir);
  out << nlohmann::json(e).dump() << "\n";
}

template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min(n, worker_threads());
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += workers) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be > 0");
  if (lr_halving_epochs < 1) throw ConfigError("lr_halving_epochs must be >= 1");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
    throw ConfigError("Adam betas must lie in (0,1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  if (!(xi >= 0.0)) throw ConfigError("xi must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (phase1_epochs > epochs) throw ConfigError("phase1_epochs exceeds epochs");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
}

TrainConfig TrainConfig::paper_preset() {
  TrainConfig c;
  c.epochs = 300;
  c.phase1_epochs = 150;
  return c;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"lr0", c.lr0},
       {"lr_halving_epochs", c.lr_halving_epochs},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},
       {"xi", c.xi},
       {"batch_size", c.batch_size},
       {"seed", c.seed},
       {"phase1_epochs", c.phase1_epochs},
       {"grad_clip", c.grad_clip},
       {"noise_sigma", c.noise_sigma}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::vector<std::string> known{
      "epochs",     "lr0",  "lr_halving_epochs", "beta1",         "beta2",     "adam_eps",
      "xi",         "batch_size", "seed",        "phase1_epochs", "grad_clip", "noise_sigma"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown train config field '" + key + "'");
  }
  try {
    c = TrainConfig{};
    c.epochs = j.value("epochs", c.epochs);
    c.lr0 = j.value("lr0", c.lr0);
    c.lr_halving_epochs = j.value("lr_halving_epochs", c.lr_halving_epochs);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.xi = j.value("xi", c.xi);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.phase1_epochs = j.value("phase1_epochs", c.epochs / 2);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

ad::Var loss(const ad::Var& x_out, const ad::Var& x_truth,
             const std::function<ad::Var(const ad::Var&)>& reproj, const ad::Var& y_c, double xi) {
  const ad::Var fidelity = ad::mse(x_out, x_truth);
  if (xi == 0.0) return fidelity;
  return ad::add(fidelity, ad::scale(ad::mse(reproj(x_out), y_c), xi));
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  return cfg.lr0 * std::ldexp(1.0, -static_cast<int>(epoch / cfg.lr_halving_epochs));
}

void AdamState::erase_prefix(std::string_view prefix) {
  for (auto* table : {&m, &v}) {
    for (auto it = table->begin(); it != table->end();) {
      it = it->first.starts_with(prefix) ? table->erase(it) : std::next(it);
    }
  }
}

void adam_step(ParamSet& params, const NamedGrads& grads, AdamState& state, double lr,
               const TrainConfig& cfg) {
  for (const auto& [name, value] : params.entries()) {
    auto g = grads.find(name);
    if (g == grads.end()) throw ContractError("adam_step: no gradient for " + name);
    if (g->second.shape() != value.shape()) {
      throw ShapeError("adam_step: gradient of " + name + " has shape " + g->second.shape().str());
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t), c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, value] : params.entries()) {
    const Tensor& g = grads.at(name);
    auto [mi, m_new] = state.m.try_emplace(name, Tensor::zeros(value.shape()));
    auto [vi, v_new] = state.v.try_emplace(name, Tensor::zeros(value.shape()));
    Tensor& m = mi->second;
    Tensor& v = vi->second;
    for (std::size_t i = 0; i < value.numel(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      value[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

double clip_grad_norm(NamedGrads& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, g] : grads)
    for (double v : g.data()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [_, g] : grads) g *= s;
  }
  return norm;
}

void to_json(nlohmann::json& j, const EpochLog& e) {
  j = {{"epoch", e.epoch},
       {"lr", e.lr},
       {"phase", e.phase},
       {"train_loss", e.train_loss},
       {"val_psnr", metrics::metric_json(e.val.psnr)},
       {"val_ssim", metrics::metric_json(e.val.ssim)},
       {"val_mrae", metrics::metric_json(e.val.mrae)},
       {"val_rmse", metrics::metric_json(e.val.rmse)}};
}

optics::Mask Checkpoint::inference_mask() const {
  if (frozen_mask) return *frozen_mask;
  if (mask_kind == mask::MaskKind::adaptive)
    throw ContractError("adaptive mask has not been frozen yet");
  return optics::Mask(mask_template.data);
}

Checkpoint init_checkpoint(const recon::ModelConfig& model, const TrainConfig& train,
                           mask::MaskKind kind, std::size_t height, std::size_t width) {
  model.validate_for(height, width);
  train.validate();
  Checkpoint s;
  s.model = model;
  s.train = train;
  s.mask_kind = kind;
  s.weights = recon::init_model_weights(model, derive_seed(train.seed, "model"));
  s.mask_template = mask::template_init(kind, height, width, derive_seed(train.seed, "template"));
  if (kind == mask::MaskKind::adaptive) {
    const ParamSet net = mask::init_mask_net({}, derive_seed(train.seed, "mask_net"));
    for (const auto& [name, t] : net.entries()) s.weights.add(name, t);
  }
  std::ostringstream rng;
  rng << std::mt19937_64(derive_seed(train.seed, "shuffle"));
  s.rng_state = rng.str();
  return s;
}

SampleResult sample_gradients(const Tensor& cube, const Checkpoint& state,
                              const optics::SpectralResponse& response, const optics::Mask* mask,
                              std::uint64_t noise_seed) {
  const optics::DispersionSpec disp{state.model.dispersion};
  ad::Tape tape;
  const BoundParams w(tape, state.weights, true);
  const ad::Var x = tape.constant(cube);
  const Tensor rgb = optics::rgb_project(cube, response, noise(state.train, noise_seed, 1));
  const ad::Var y_r = tape.constant(rgb);
  const ad::Var m = mask ? tape.constant(mask->data())
                         : mask::mask_net_forward(y_r, state.mask_template, w);
  const ad::Var clean = optics::reproject(x, m, disp);
  const ad::Var y_c =
      ad::add(clean, tape.constant(noise_field(clean.shape(), noise(state.train, noise_seed, 2))));
  const auto out = recon::model_forward(y_c, y_r, m, w, state.model);
  const ad::Var l = loss(
      out.x_hat, x, [&](const ad::Var& v) { return optics::reproject(v, m, disp); }, y_c,
      state.train.xi);
  SampleResult r;
  r.loss = l.value()[0];
  if (!std::isfinite(r.loss)) throw NumericError("non-finite training loss");
  w.collect(tape.backward(l), r.grads);
  return r;
}

std::vector<metrics::SceneMetrics> validate_scenes(const Dataset& data, const Checkpoint& state) {
  if (data.val.empty()) throw ContractError("validation split is empty");
  const std::uint64_t base = derive_seed(state.train.seed, "val");
  std::vector<metrics::SceneMetrics> rows(data.val.size());
  parallel_for(data.val.size(), [&](std::size_t i) {
    const Tensor& cube = data.val[i];
    const std::uint64_t seed = derive_seed(base, i);
    const Tensor y_r = optics::rgb_project(cube, data.response, noise(state.train, seed, 1));
    const optics::Mask m = (is_adaptive(state) && !state.frozen_mask)
                               ? mask::mask_net_forward(y_r, state.mask_template, state.weights)
                               : state.inference_mask();
    const optics::SensingOperator op{m, optics::DispersionSpec{state.model.dispersion}, data.response};
    const Tensor y_c = optics::cassi_forward(cube, op, noise(state.train, seed, 2));
    rows[i] = metrics::evaluate(recon::reconstruct(y_c, y_r, m, state.weights, state.model), cube);
  });
  return rows;
}

metrics::SceneMetrics validate(const Dataset& data, const Checkpoint& state) {
  return metrics::average(validate_scenes(data, state));
}

TrainResult train(const Dataset& data, Checkpoint state, const TrainOptions& opts) {
  if (data.train.empty()) throw ContractError("training split is empty");
  if (data.val.empty()) throw ContractError("validation split is empty");
  state.train.validate();
  const TrainConfig& cfg = state.train;
  if (!opts.out_dir.empty()) std::filesystem::create_directories(opts.out_dir);

  std::mt19937_64 rng;
  {
    std::istringstream in(state.rng_state);
    in >> rng;
    if (!in) throw FormatError("bad rng state in checkpoint");
  }

  TrainResult result;
  const bool fresh = state.epoch == 0;
  std::size_t ran = 0;
  while (state.epoch < cfg.epochs && (!opts.max_epochs || ran < *opts.max_epochs)) {
    const std::size_t epoch = state.epoch;
    if (is_adaptive(state) && !state.frozen_mask && epoch >= cfg.phase1_epochs) freeze(state, data);
    const bool phase1 = in_phase1(state, epoch);
    const double lr = lr_at(epoch, cfg);
    std::optional<optics::Mask> fixed_mask;
    if (!phase1) fixed_mask = state.inference_mask();

    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      std::vector<SampleResult> samples(n);
      parallel_for(n, [&](std::size_t k) {
        const std::size_t scene = order[start + k];
        samples[k] = sample_gradients(data.train[scene], state, data.response,
                                      fixed_mask ? &*fixed_mask : nullptr,
                                      derive_seed(cfg.seed, epoch, scene));
      });
      NamedGrads grads = std::move(samples[0].grads);
      loss_sum += samples[0].loss;
      for (std::size_t k = 1; k < n; ++k) {
        loss_sum += samples[k].loss;
        for (auto& [name, g] : grads) g += samples[k].grads.at(name);
      }
      for (auto& [_, g] : grads) g *= 1.0 / static_cast<double>(n);
      clip_grad_norm(grads, cfg.grad_clip);
      adam_step(state.weights, grads, state.adam, lr, cfg);
    }

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    log.phase = phase1 ? 1 : 2;
    log.train_loss = loss_sum / static_cast<double>(data.train.size());
    ++state.epoch;
    if (is_adaptive(state) && !state.frozen_mask && state.epoch >= cfg.phase1_epochs) {
      freeze(state, data);
    }
    log.val = validate(data, state);
    if (!phase1 && log.val.psnr > state.best_val_psnr) {
      state.best_val_psnr = log.val.psnr;
      state.best_epoch = epoch;
      state.best_weights = state.weights;
    }
    {
      std::ostringstream out;
      out << rng;
      state.rng_state = out.str();
    }
    result.log.push_back(log);
    if (opts.on_epoch) opts.on_epoch(log);
    if (!opts.out_dir.empty()) {
      append_log(opts.out_dir, log, fresh && ran == 0);
      const auto dir = std::filesystem::path(opts.out_dir);
      save_checkpoint((dir / "last.ckpt").string(), state);
      if (state.best_weights && state.best_epoch == epoch) {
        Checkpoint best = state;
        best.weights = *state.best_weights;
        save_checkpoint((dir / "best.ckpt").string(), best);
      }
    }
    ++ran;
  }
  result.last = std::move(state);
  return result;
}

OverfitResult overfit(const Tensor& cube, const optics::SpectralResponse& response, Checkpoint state,
                      std::size_t steps, std::size_t eval_every) {
  if (steps < 1 || eval_every < 1) throw ConfigError("overfit: steps and eval_every must be >= 1");
  const optics::Mask m = state.inference_mask();
  const TrainConfig& cfg = state.train;
  const std::uint64_t seed = derive_seed(cfg.seed, "overfit");
  const optics::SensingOperator op{m, optics::DispersionSpec{state.model.dispersion}, response};
  const Tensor y_r = optics::rgb_project(cube, response, noise(cfg, seed, 1));
  const Tensor y_c = optics::cassi_forward(cube, op, noise(cfg, seed, 2));
  auto score = [&] {
    return metrics::psnr(recon::reconstruct(y_c, y_r, m, state.weights, state.model), cube);
  };

  OverfitResult r;
  for (std::size_t i = 0; i < steps; ++i) {
    SampleResult g = sample_gradients(cube, state, response, &m, seed);
    clip_grad_norm(g.grads, cfg.grad_clip);
    adam_step(state.weights, g.grads, state.adam, lr_at(i * cfg.epochs / steps, cfg), cfg);
    if ((i + 1) % eval_every == 0 || i + 1 == steps) r.trace.emplace_back(i + 1, score());
  }
  r.final_psnr = r.trace.back().second;
  r.state = std::move(state);
  return r;
}

void save_checkpoint(const std::string& path, const Checkpoint& s) {
  nlohmann::json meta{{"model", s.model},
                      {"train", s.train},
                      {"mask_kind", mask::to_string(s.mask_kind)},
                      {"epoch", s.epoch},
                      {"adam_step", s.adam.step},
                      {"rng_state", s.rng_state},
                      {"best_val_psnr", metrics::metric_json(s.best_val_psnr)},
                      {"best_epoch", s.best_epoch}};
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (const auto& [name, t] : s.weights.entries()) tensors.emplace_back("weights/" + name, &t);
  for (const auto& [name, t] : s.adam.m) tensors.emplace_back("adam.m/" + name, &t);
  for (const auto& [name, t] : s.adam.v) tensors.emplace_back("adam.v/" + name, &t);
  tensors.emplace_back("mask/template", &s.mask_template.data);
  if (s.frozen_mask) tensors.emplace_back("mask/frozen", &s.frozen_mask->data());
  if (s.best_weights)
    for (const auto& [name, t] : s.best_weights->entries()) tensors.emplace_back("best/" + name, &t);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path);
    out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    binio::put_le<std::uint32_t>(out, kCheckpointVersion);
    const std::string js = meta.dump();
    binio::put_le<std::uint64_t>(out, js.size());
    out.write(js.data(), static_cast<std::streamsize>(js.size()));
    binio::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
      binio::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_tensor(out, *t);
    }
    if (!out) throw IoError("failed writing checkpoint " + path);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kCheckpointMagic) throw FormatError(path + " is not a checkpoint (bad magic)");
  const auto version = binio::get_le<std::uint32_t>(in, "checkpoint");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const auto js_len = binio::get_le<std::uint64_t>(in, "checkpoint");
  if (js_len > (1u << 26)) throw FormatError("checkpoint header too large");
  std::string js(js_len, '\0');
  in.read(js.data(), static_cast<std::streamsize>(js_len));
  if (!in) throw FormatError("checkpoint truncated");

  Checkpoint s;
  try {
    const auto meta = nlohmann::json::parse(js);
    s.model = meta.at("model").get<recon::ModelConfig>();
    s.train = meta.at("train").get<TrainConfig>();
    s.mask_kind = mask::parse_mask_kind(meta.at("mask_kind").get<std::string>());
    s.epoch = meta.at("epoch").get<std::size_t>();
    s.adam.step = meta.at("adam_step").get<std::uint64_t>();
    s.rng_state = meta.at("rng_state").get<std::string>();
    const auto& best = meta.at("best_val_psnr");
    s.best_val_psnr = best.is_string() ? (best == "inf" ? std::numeric_limits<double>::infinity()
                                                        : -std::numeric_limits<double>::infinity())
                                       : best.get<double>();
    s.best_epoch = meta.at("best_epoch").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corrupt checkpoint header: " + std::string(e.what()));
  }
  s.mask_template.kind = s.mask_kind;

  const auto count = binio::get_le<std::uint32_t>(in, "checkpoint");
  bool have_template = false;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = binio::get_le<std::uint32_t>(in, "checkpoint");
    if (len > 4096) throw FormatError("checkpoint tensor name too long");
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw FormatError("checkpoint truncated");
    Tensor t = read_tensor(in);
    auto take = [&](std::string_view prefix) -> std::optional<std::string> {
      if (!name.starts_with(prefix)) return std::nullopt;
      return name.substr(prefix.size());
    };
    if (auto n = take("weights/")) {
      s.weights.add(*n, std::move(t));
    } else if (auto n = take("adam.m/")) {
      s.adam.m.emplace(*n, std::move(t));
    } else if (auto n = take("adam.v/")) {
      s.adam.v.emplace(*n, std::move(t));
    } else if (auto n = take("best/")) {
      if (!s.best_weights) s.best_weights.emplace();
      s.best_weights->add(*n, std::move(t));
    } else if (name == "mask/template") {
      s.mask_template.data = std::move(t);
      have_template = true;
    } else if (name == "mask/frozen") {
      s.frozen_mask = optics::Mask(std::move(t));
    } else {
      throw FormatError("unknown checkpoint entry '" + name + "'");
    }
  }
  if (!have_template) throw FormatError("checkpoint has no mask template");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in checkpoint");
  return s;
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("AMDC_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace amdc::train
