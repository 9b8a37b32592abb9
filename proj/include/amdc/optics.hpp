#pragma once

// Dual-camera CASSI imaging model.
//
// Cubes are channel-major tensors [C, H, W]: C spectral channels, H rows
// (n_x), W columns (n_y). The CASSI measurement is [H, W + d(C-1)] and the
// RGB measurement is [3, H, W]. Dispersion shifts channel c by d*c columns.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "amdc/autodiff.hpp"
#include "amdc/tensor.hpp"

namespace amdc::optics {

/// Validated ground-truth radiance cube with its wavelength grid.
class HsiCube {
 public:
  HsiCube(Tensor data, std::vector<double> wavelengths_nm);

  const Tensor& data() const noexcept { return data_; }
  const std::vector<double>& wavelengths_nm() const noexcept { return wavelengths_; }
  std::size_t channels() const { return data_.dim(0); }
  std::size_t height() const { return data_.dim(1); }
  std::size_t width() const { return data_.dim(2); }

  /// X(x, y, lambda) with x the row and y the column.
  double at(std::size_t x, std::size_t y, std::size_t lambda) const {
    return data_[(lambda * height() + x) * width() + y];
  }

 private:
  Tensor data_;
  std::vector<double> wavelengths_;
};

/// Coded-aperture transmittance, [H, W] with every value in [0, 1].
class Mask {
 public:
  explicit Mask(Tensor data);
  const Tensor& data() const noexcept { return data_; }
  std::size_t height() const { return data_.dim(0); }
  std::size_t width() const { return data_.dim(1); }

 private:
  Tensor data_;
};

/// omega as a [C, 3] matrix, columns R, G, B, each summing to 1.
struct SpectralResponse {
  Tensor omega;
};

struct DispersionSpec {
  std::size_t step_px = 1;
  std::size_t widened(std::size_t width, std::size_t channels) const {
    return width + step_px * (channels - 1);
  }
};

struct NoiseSpec {
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

struct MeasurementPair {
  Tensor y_c;  // [H, W + d(C-1)]
  Tensor y_r;  // [3, H, W]
};

struct SensingOperator {
  Mask mask;
  DispersionSpec dispersion;
  SpectralResponse response;
};

/// In-place additive i.i.d. Gaussian noise; no-op when sigma == 0.
void add_noise(Tensor& t, const NoiseSpec& noise);

Tensor rgb_project(const Tensor& cube, const SpectralResponse& response, const NoiseSpec& noise);
Tensor mask_modulate(const Tensor& cube, const Mask& mask);
Tensor disperse(const Tensor& cube, const DispersionSpec& d);
Tensor integrate_measure(const Tensor& shifted, const NoiseSpec& noise);
Tensor cassi_forward(const Tensor& cube, const SensingOperator& op, const NoiseSpec& noise);
/// Exact transpose of the noiseless cassi_forward.
Tensor cassi_adjoint(const Tensor& y, const SensingOperator& op, std::size_t channels);
Tensor shift_back_init(const Tensor& y, const DispersionSpec& d, std::size_t channels);

inline constexpr std::size_t kDenseOracleMaxVoxels = 100000;
/// Explicit Phi_c, rows indexed by vec(y_c) and columns by vec(cube), both
/// row-major. Oracle use only.
Tensor sensing_matrix_dense(const SensingOperator& op, std::size_t channels);

MeasurementPair simulate(const Tensor& cube, const SensingOperator& op, const NoiseSpec& cassi_noise,
                         const NoiseSpec& rgb_noise);

// Differentiable counterparts recorded on an autodiff tape.

/// 0.5 * mask[h,w] * cube[c,h,w].
ad::Var mask_modulate(const ad::Var& cube, const ad::Var& mask);
/// Sum over channels of the cube shifted by d*c columns: [C,H,W] -> [H, W+d(C-1)].
ad::Var disperse_sum(const ad::Var& cube, const DispersionSpec& d);
/// Per-channel crop of a measurement: [H, W+d(C-1)] -> [C,H,W].
ad::Var shift_back(const ad::Var& y, const DispersionSpec& d, std::size_t channels);
/// Noiseless Phi_c applied on the tape; gradients flow to cube and mask.
ad::Var reproject(const ad::Var& cube, const ad::Var& mask, const DispersionSpec& d);
Tensor reproject(const Tensor& cube, const SensingOperator& op);

}  // namespace amdc::optics
