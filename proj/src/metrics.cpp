#include "amdc/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "amdc/error.hpp"

namespace amdc::metrics {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shapes differ " + a.shape().str() + " vs " +
                     b.shape().str());
  }
}

double mse(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

std::vector<double> gaussian_taps() {
  std::vector<double> g(kSsimWindow);
  const double mid = static_cast<double>(kSsimWindow / 2);
  double total = 0.0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double x = static_cast<double>(i) - mid;
    g[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

// Valid-mode separable filtering of an h x w plane.
std::vector<double> filter_valid(const double* img, std::size_t h, std::size_t w,
                                 const std::vector<double>& g) {
  const std::size_t k = g.size(), oh = h - k + 1, ow = w - k + 1;
  std::vector<double> rows(h * ow, 0.0);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += g[t] * img[r * w + c + t];
      rows[r * ow + c] = acc;
    }
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t r = 0; r < oh; ++r)
    for (std::size_t c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += g[t] * rows[(r + t) * ow + c];
      out[r * ow + c] = acc;
    }
  return out;
}

std::string fixed(double v, int precision) {
  if (std::isinf(v)) return "inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

bool close(double a, double b) {
  if (std::isinf(a) || std::isinf(b)) return a == b;
  return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b));
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b) {
  require_same(a, b, "psnr");
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / m);
}

double ssim(const Tensor& a, const Tensor& b) {
  require_same(a, b, "ssim");
  if (a.rank() != 3) throw ShapeError("ssim: expected [C,H,W], got " + a.shape().str());
  const std::size_t c_n = a.dim(0), h = a.dim(1), w = a.dim(2);
  if (h < kSsimWindow || w < kSsimWindow) {
    throw ShapeError("ssim: image " + a.shape().str() + " smaller than the 11x11 window");
  }
  if (a == b) return 1.0;
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const std::vector<double> g = gaussian_taps();
  const std::size_t plane = h * w;
  std::vector<double> aa(plane), bb(plane), ab(plane);
  double total = 0.0;
  for (std::size_t ch = 0; ch < c_n; ++ch) {
    const double* pa = a.raw() + ch * plane;
    const double* pb = b.raw() + ch * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto mu_a = filter_valid(pa, h, w, g), mu_b = filter_valid(pb, h, w, g);
    const auto e_aa = filter_valid(aa.data(), h, w, g), e_bb = filter_valid(bb.data(), h, w, g);
    const auto e_ab = filter_valid(ab.data(), h, w, g);
    double acc = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double va = e_aa[i] - mu_a[i] * mu_a[i];
      const double vb = e_bb[i] - mu_b[i] * mu_b[i];
      const double cov = e_ab[i] - mu_a[i] * mu_b[i];
      acc += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
             ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    total += acc / static_cast<double>(mu_a.size());
  }
  return total / static_cast<double>(c_n);
}

double mrae(const Tensor& estimate, const Tensor& truth) {
  require_same(estimate, truth, "mrae");
  double acc = 0.0;
  for (std::size_t i = 0; i < truth.numel(); ++i)
    acc += std::abs(estimate[i] - truth[i]) / std::max(truth[i], kMraeFloor);
  return acc / static_cast<double>(truth.numel());
}

double rmse(const Tensor& a, const Tensor& b) {
  require_same(a, b, "rmse");
  return std::sqrt(mse(a, b));
}

SceneMetrics evaluate(const Tensor& estimate, const Tensor& truth) {
  return {psnr(estimate, truth), ssim(estimate, truth), mrae(estimate, truth), rmse(estimate, truth)};
}

SceneMetrics average(const std::vector<SceneMetrics>& rows) {
  if (rows.empty()) throw ContractError("average: no rows");
  SceneMetrics m;
  for (const auto& r : rows) {
    m.psnr += r.psnr;
    m.ssim += r.ssim;
    m.mrae += r.mrae;
    m.rmse += r.rmse;
  }
  const double n = static_cast<double>(rows.size());
  return {m.psnr / n, m.ssim / n, m.mrae / n, m.rmse / n};
}

nlohmann::json metric_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

namespace {
double metric_from(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw FormatError("bad metric value '" + s + "'");
  }
  return j.get<double>();
}
}  // namespace

void to_json(nlohmann::json& j, const SceneMetrics& m) {
  j = {{"psnr", metric_json(m.psnr)},
       {"ssim", metric_json(m.ssim)},
       {"mrae", metric_json(m.mrae)},
       {"rmse", metric_json(m.rmse)}};
}

void from_json(const nlohmann::json& j, SceneMetrics& m) {
  m.psnr = metric_from(j.at("psnr"));
  m.ssim = metric_from(j.at("ssim"));
  m.mrae = metric_from(j.at("mrae"));
  m.rmse = metric_from(j.at("rmse"));
}

void to_json(nlohmann::json& j, const FpsResult& r) {
  j = {{"fps", r.fps},
       {"median_seconds", r.median_seconds},
       {"warmup", r.warmup},
       {"iters", r.iters},
       {"threads", r.threads},
       {"input_shape", {r.channels, r.height, r.width}},
       {"n_stages", r.n_stages},
       {"flops", r.flops}};
}

double median_seconds(const std::function<void()>& fn, std::size_t warmup, std::size_t iters) {
  if (iters < 10 || warmup < 2) throw ConfigError("benchmark needs iters >= 10 and warmup >= 2");
  std::vector<double> times;
  for (std::size_t i = 0; i < warmup + iters; ++i) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
    if (i >= warmup) times.push_back(dt.count());
  }
  std::sort(times.begin(), times.end());
  const std::size_t n = times.size();
  return n % 2 == 1 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
}

FpsResult fps_bench(const ParamSet& weights, const recon::ModelConfig& cfg, const optics::Mask& mask,
                    std::size_t warmup, std::size_t iters, std::uint64_t seed) {
  if (iters < 10 || warmup < 2) throw ConfigError("fps_bench: need iters >= 10 and warmup >= 2");
  const std::size_t h = mask.height(), w = mask.width(), c = cfg.channels;
  const optics::DispersionSpec disp{cfg.dispersion};
  const Tensor y_c = Tensor::uniform(Shape{h, disp.widened(w, c)}, seed);
  const Tensor y_r = Tensor::uniform(Shape{3, h, w}, seed + 1);

  const double median = median_seconds(
      [&] {
        ad::Tape tape;
        ad::NoGradGuard guard(tape);
        const BoundParams bound(tape, weights, false);
        const auto out = recon::model_forward(tape.constant(y_c), tape.constant(y_r),
                                              tape.constant(mask.data()), bound, cfg);
        if (!out.x_hat.value().all_finite()) throw NumericError("fps_bench: non-finite output");
      },
      warmup, iters);

  FpsResult r;
  r.median_seconds = median;
  r.fps = 1.0 / median;
  r.warmup = warmup;
  r.iters = iters;
  r.threads = 1;
  r.height = h;
  r.width = w;
  r.channels = c;
  r.n_stages = cfg.n_stages;
  r.flops = recon::flop_count(cfg, h, w);
  return r;
}

std::string config_digest(const nlohmann::json& config) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char ch : config.dump()) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

Report emit_report(const std::string& title, const std::vector<ReportRow>& rows,
                   const nlohmann::json& config) {
  if (rows.empty()) throw ContractError("emit_report: no rows");
  Report out;
  nlohmann::json jrows = nlohmann::json::array();
  bool all_consistent = true;

  const std::vector<std::string> header{"Method",   "Avg MRAE",  "Avg RMSE", "Avg PSNR",
                                        "Avg SSIM", "Params(M)", "GFLOPS(G)", "FPS"};
  std::vector<std::vector<std::string>> cells{header};
  for (const auto& row : rows) {
    const std::optional<SceneMetrics> avg =
        row.scenes.empty() ? std::nullopt : std::optional<SceneMetrics>(average(row.scenes));
    bool consistent = true;
    if (row.claimed_average && !avg) {
      consistent = false;
    } else if (row.claimed_average) {
      const auto& c = *row.claimed_average;
      consistent = close(c.psnr, avg->psnr) && close(c.ssim, avg->ssim) &&
                   close(c.mrae, avg->mrae) && close(c.rmse, avg->rmse);
    }
    all_consistent = all_consistent && consistent;
    const double params_m = static_cast<double>(row.params) / 1e6;
    const double gflops = static_cast<double>(row.flops) / 1e9;
    nlohmann::json jr{{"method", row.method},
                      {"scenes", row.scenes},
                      {"average", avg ? nlohmann::json(*avg) : nlohmann::json(nullptr)},
                      {"params", row.params},
                      {"params_m", params_m},
                      {"flops", row.flops},
                      {"gflops", gflops},
                      {"fps", row.fps ? nlohmann::json(*row.fps) : nlohmann::json(nullptr)},
                      {"consistent", consistent},
                      {"extra", row.extra}};
    if (row.claimed_average) jr["claimed_average"] = *row.claimed_average;
    jrows.push_back(std::move(jr));
    const auto cell = [&](double SceneMetrics::*field, int digits) {
      return avg ? fixed((*avg).*field, digits) : std::string("-");
    };
    cells.push_back({row.method + (consistent ? "" : " [inconsistent]"), cell(&SceneMetrics::mrae, 4),
                     cell(&SceneMetrics::rmse, 4), cell(&SceneMetrics::psnr, 2),
                     cell(&SceneMetrics::ssim, 4), fixed(params_m, 4), fixed(gflops, 4),
                     row.fps ? fixed(*row.fps, 2) : "-"});
  }
  out.json = {{"title", title},
              {"config", config},
              {"config_digest", config_digest(config)},
              {"consistent", all_consistent},
              {"rows", jrows}};

  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells)
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  std::ostringstream os;
  os << title << "\n";
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t i = 0; i < cells[r].size(); ++i) {
      if (i) os << " | ";
      if (i == 0) {
        os << std::left << std::setw(static_cast<int>(width[i])) << cells[r][i];
      } else {
        os << std::right << std::setw(static_cast<int>(width[i])) << cells[r][i];
      }
    }
    os << "\n";
    if (r == 0) {
      for (std::size_t i = 0; i < width.size(); ++i) os << (i ? "-+-" : "") << std::string(width[i], '-');
      os << "\n";
    }
  }
  os << "config " << config_digest(config) << "\n";
  out.table = os.str();
  return out;
}

void write_report(const std::string& prefix, const Report& report) {
  std::ofstream js(prefix + ".json");
  std::ofstream txt(prefix + ".txt");
  if (!js || !txt) throw IoError("cannot write report " + prefix);
  js << report.json.dump(2) << "\n";
  txt << report.table;
  if (!js || !txt) throw IoError("failed writing report " + prefix);
}

}  // namespace amdc::metrics
