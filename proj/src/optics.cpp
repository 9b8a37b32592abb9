#include "amdc/optics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "amdc/error.hpp"

namespace amdc::optics {

namespace {

void require_cube(const Tensor& t, const char* who) {
  if (t.rank() != 3) throw ShapeError(std::string(who) + ": expected [C,H,W], got " + t.shape().str());
}

void require_mask_fits(const Shape& mask, std::size_t h, std::size_t w, const char* who) {
  if (mask.rank() != 2 || mask[0] != h || mask[1] != w) {
    throw ShapeError(std::string(who) + ": mask " + mask.str() + " does not match scene " +
                     std::to_string(h) + "x" + std::to_string(w));
  }
}

// out[h, w + d*c] (+)= cube[c, h, w]
void disperse_sum_into(const double* cube, std::size_t c_n, std::size_t h_n, std::size_t w_n,
                       std::size_t d, double* out) {
  const std::size_t wide = w_n + d * (c_n - 1);
  for (std::size_t c = 0; c < c_n; ++c) {
    for (std::size_t h = 0; h < h_n; ++h) {
      const double* src = cube + (c * h_n + h) * w_n;
      double* dst = out + h * wide + d * c;
      for (std::size_t w = 0; w < w_n; ++w) dst[w] += src[w];
    }
  }
}

// out[c, h, w] (+)= y[h, w + d*c]
void shift_back_into(const double* y, std::size_t c_n, std::size_t h_n, std::size_t w_n,
                     std::size_t d, double* out) {
  const std::size_t wide = w_n + d * (c_n - 1);
  for (std::size_t c = 0; c < c_n; ++c) {
    for (std::size_t h = 0; h < h_n; ++h) {
      const double* src = y + h * wide + d * c;
      double* dst = out + (c * h_n + h) * w_n;
      for (std::size_t w = 0; w < w_n; ++w) dst[w] += src[w];
    }
  }
}

std::size_t width_from_measurement(const Shape& y, const DispersionSpec& d, std::size_t channels,
                                   const char* who) {
  if (y.rank() != 2) throw ShapeError(std::string(who) + ": expected [H,W'], got " + y.str());
  if (channels == 0) throw ShapeError(std::string(who) + ": channel count must be positive");
  const std::size_t extra = d.step_px * (channels - 1);
  if (y[1] <= extra) {
    throw ShapeError(std::string(who) + ": measurement width " + std::to_string(y[1]) +
                     " too small for " + std::to_string(channels) + " channels at d=" +
                     std::to_string(d.step_px));
  }
  return y[1] - extra;
}

}  // namespace

HsiCube::HsiCube(Tensor data, std::vector<double> wavelengths_nm)
    : data_(std::move(data)), wavelengths_(std::move(wavelengths_nm)) {
  require_cube(data_, "HsiCube");
  if (wavelengths_.size() != data_.dim(0)) {
    throw ValidationError("HsiCube: " + std::to_string(wavelengths_.size()) +
                          " wavelengths for " + std::to_string(data_.dim(0)) + " channels");
  }
  for (std::size_t i = 1; i < wavelengths_.size(); ++i) {
    if (!(wavelengths_[i] > wavelengths_[i - 1])) {
      throw ValidationError("HsiCube: wavelengths must be strictly increasing");
    }
  }
  for (double v : data_.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("HsiCube: value outside [0,1]");
  }
}

Mask::Mask(Tensor data) : data_(std::move(data)) {
  if (data_.rank() != 2) throw ShapeError("Mask: expected rank 2, got " + data_.shape().str());
  for (double v : data_.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("Mask: value outside [0,1]");
  }
}

void add_noise(Tensor& t, const NoiseSpec& noise) {
  if (noise.sigma < 0.0) throw ValidationError("noise sigma must be nonnegative");
  if (noise.sigma == 0.0) return;
  std::mt19937_64 rng(noise.seed);
  std::normal_distribution<double> dist(0.0, noise.sigma);
  for (double& v : t.data()) v += dist(rng);
}

Tensor rgb_project(const Tensor& cube, const SpectralResponse& response, const NoiseSpec& noise) {
  require_cube(cube, "rgb_project");
  const std::size_t c_n = cube.dim(0), plane = cube.dim(1) * cube.dim(2);
  const Tensor& om = response.omega;
  if (om.rank() != 2 || om.dim(0) != c_n || om.dim(1) != 3) {
    throw ShapeError("rgb_project: response " + om.shape().str() + " does not match " +
                     std::to_string(c_n) + " channels");
  }
  Tensor out(Shape{3, cube.dim(1), cube.dim(2)});
  for (std::size_t ch = 0; ch < 3; ++ch) {
    double* dst = out.raw() + ch * plane;
    for (std::size_t c = 0; c < c_n; ++c) {
      const double wgt = 0.5 * om[c * 3 + ch];
      const double* src = cube.raw() + c * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] += wgt * src[p];
    }
  }
  add_noise(out, noise);
  return out;
}

Tensor mask_modulate(const Tensor& cube, const Mask& mask) {
  require_cube(cube, "mask_modulate");
  require_mask_fits(mask.data().shape(), cube.dim(1), cube.dim(2), "mask_modulate");
  const std::size_t plane = cube.dim(1) * cube.dim(2);
  Tensor out(cube.shape());
  const double* m = mask.data().raw();
  for (std::size_t c = 0; c < cube.dim(0); ++c) {
    for (std::size_t p = 0; p < plane; ++p) out[c * plane + p] = 0.5 * m[p] * cube[c * plane + p];
  }
  return out;
}

Tensor disperse(const Tensor& cube, const DispersionSpec& d) {
  require_cube(cube, "disperse");
  const std::size_t c_n = cube.dim(0), h_n = cube.dim(1), w_n = cube.dim(2);
  const std::size_t wide = d.widened(w_n, c_n);
  Tensor out(Shape{c_n, h_n, wide});
  for (std::size_t c = 0; c < c_n; ++c) {
    for (std::size_t h = 0; h < h_n; ++h) {
      std::copy_n(cube.raw() + (c * h_n + h) * w_n, w_n,
                  out.raw() + (c * h_n + h) * wide + d.step_px * c);
    }
  }
  return out;
}

Tensor integrate_measure(const Tensor& shifted, const NoiseSpec& noise) {
  require_cube(shifted, "integrate_measure");
  const std::size_t plane = shifted.dim(1) * shifted.dim(2);
  Tensor out(Shape{shifted.dim(1), shifted.dim(2)});
  for (std::size_t c = 0; c < shifted.dim(0); ++c) {
    for (std::size_t p = 0; p < plane; ++p) out[p] += shifted[c * plane + p];
  }
  add_noise(out, noise);
  return out;
}

Tensor cassi_forward(const Tensor& cube, const SensingOperator& op, const NoiseSpec& noise) {
  return integrate_measure(disperse(mask_modulate(cube, op.mask), op.dispersion), noise);
}

Tensor cassi_adjoint(const Tensor& y, const SensingOperator& op, std::size_t channels) {
  const std::size_t w_n = width_from_measurement(y.shape(), op.dispersion, channels, "cassi_adjoint");
  const std::size_t h_n = y.dim(0);
  require_mask_fits(op.mask.data().shape(), h_n, w_n, "cassi_adjoint");
  Tensor out(Shape{channels, h_n, w_n});
  shift_back_into(y.raw(), channels, h_n, w_n, op.dispersion.step_px, out.raw());
  const std::size_t plane = h_n * w_n;
  const double* m = op.mask.data().raw();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t p = 0; p < plane; ++p) out[c * plane + p] *= 0.5 * m[p];
  }
  return out;
}

Tensor shift_back_init(const Tensor& y, const DispersionSpec& d, std::size_t channels) {
  const std::size_t w_n = width_from_measurement(y.shape(), d, channels, "shift_back_init");
  Tensor out(Shape{channels, y.dim(0), w_n});
  shift_back_into(y.raw(), channels, y.dim(0), w_n, d.step_px, out.raw());
  return out;
}

Tensor sensing_matrix_dense(const SensingOperator& op, std::size_t channels) {
  const std::size_t h_n = op.mask.height(), w_n = op.mask.width();
  const std::size_t voxels = h_n * w_n * channels;
  const std::size_t wide = op.dispersion.widened(w_n, channels);
  const std::size_t rows = h_n * wide;
  if (voxels > kDenseOracleMaxVoxels || rows * voxels > (std::size_t{1} << 27)) {
    throw ContractError("sensing_matrix_dense: " + std::to_string(voxels) +
                        " voxels exceeds the oracle size guard");
  }
  Tensor phi(Shape{rows, voxels});
  const double* m = op.mask.data().raw();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t h = 0; h < h_n; ++h) {
      for (std::size_t w = 0; w < w_n; ++w) {
        const std::size_t col = (c * h_n + h) * w_n + w;
        const std::size_t row = h * wide + w + op.dispersion.step_px * c;
        phi[row * voxels + col] = 0.5 * m[h * w_n + w];
      }
    }
  }
  return phi;
}

MeasurementPair simulate(const Tensor& cube, const SensingOperator& op, const NoiseSpec& cassi_noise,
                         const NoiseSpec& rgb_noise) {
  return {cassi_forward(cube, op, cassi_noise), rgb_project(cube, op.response, rgb_noise)};
}

ad::Var mask_modulate(const ad::Var& cube, const ad::Var& mask) {
  const Tensor& x = cube.value();
  require_cube(x, "mask_modulate");
  require_mask_fits(mask.shape(), x.dim(1), x.dim(2), "mask_modulate");
  const std::size_t c_n = x.dim(0), plane = x.dim(1) * x.dim(2);
  const double* m = mask.value().raw();
  Tensor out(x.shape());
  for (std::size_t c = 0; c < c_n; ++c) {
    for (std::size_t p = 0; p < plane; ++p) out[c * plane + p] = 0.5 * m[p] * x[c * plane + p];
  }
  cube.tape().add_flops(2ull * c_n * plane);
  return cube.tape().record(
      "mask_modulate", std::move(out), {cube, mask}, [c_n, plane](const ad::BackwardCtx& ctx) {
        const double* xin = ctx.inputs[0]->raw();
        const double* min = ctx.inputs[1]->raw();
        Tensor* gx = ctx.input_grads[0];
        Tensor* gm = ctx.input_grads[1];
        for (std::size_t c = 0; c < c_n; ++c) {
          for (std::size_t p = 0; p < plane; ++p) {
            const double g = 0.5 * ctx.grad[c * plane + p];
            if (gx) (*gx)[c * plane + p] += g * min[p];
            if (gm) (*gm)[p] += g * xin[c * plane + p];
          }
        }
      });
}

ad::Var disperse_sum(const ad::Var& cube, const DispersionSpec& d) {
  const Tensor& x = cube.value();
  require_cube(x, "disperse_sum");
  const std::size_t c_n = x.dim(0), h_n = x.dim(1), w_n = x.dim(2);
  Tensor out(Shape{h_n, d.widened(w_n, c_n)});
  disperse_sum_into(x.raw(), c_n, h_n, w_n, d.step_px, out.raw());
  const std::size_t step = d.step_px;
  return cube.tape().record("disperse_sum", std::move(out), {cube},
                            [c_n, h_n, w_n, step](const ad::BackwardCtx& ctx) {
                              if (Tensor* gx = ctx.input_grads[0]) {
                                shift_back_into(ctx.grad.raw(), c_n, h_n, w_n, step, gx->raw());
                              }
                            });
}

ad::Var shift_back(const ad::Var& y, const DispersionSpec& d, std::size_t channels) {
  const std::size_t w_n = width_from_measurement(y.shape(), d, channels, "shift_back");
  const std::size_t h_n = y.shape()[0];
  Tensor out(Shape{channels, h_n, w_n});
  shift_back_into(y.value().raw(), channels, h_n, w_n, d.step_px, out.raw());
  const std::size_t step = d.step_px;
  return y.tape().record("shift_back", std::move(out), {y},
                         [channels, h_n, w_n, step](const ad::BackwardCtx& ctx) {
                           if (Tensor* gy = ctx.input_grads[0]) {
                             disperse_sum_into(ctx.grad.raw(), channels, h_n, w_n, step,
                                               gy->raw());
                           }
                         });
}

ad::Var reproject(const ad::Var& cube, const ad::Var& mask, const DispersionSpec& d) {
  return disperse_sum(mask_modulate(cube, mask), d);
}

Tensor reproject(const Tensor& cube, const SensingOperator& op) {
  return cassi_forward(cube, op, NoiseSpec{});
}

}  // namespace amdc::optics
