#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "amdc/autodiff.hpp"
#include "amdc/error.hpp"
#include "kernels.hpp"

namespace amdc::ad {

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  }
}

// Splits a shape around one axis: outer * len * inner == numel.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.rank()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     s.str());
  }
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.rank(); ++i) r.inner *= s[i];
  return r;
}

template <typename Fwd, typename Deriv>
Var unary(const Var& x, std::string_view name, Fwd fwd, Deriv deriv) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = fwd(xv[i]);
  return x.tape().record(name, std::move(out), {x}, [deriv](const BackwardCtx& c) {
    if (Tensor* gx = c.input_grads[0]) {
      const Tensor& xin = *c.inputs[0];
      for (std::size_t i = 0; i < xin.numel(); ++i) {
        (*gx)[i] += c.grad[i] * deriv(xin[i], c.output[i]);
      }
    }
  });
}

constexpr double kExpClamp = 30.0;

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return a.tape().record("add", a.value() + b.value(), {a, b}, [](const BackwardCtx& c) {
    if (c.input_grads[0]) *c.input_grads[0] += c.grad;
    if (c.input_grads[1]) *c.input_grads[1] += c.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return a.tape().record("sub", a.value() - b.value(), {a, b}, [](const BackwardCtx& c) {
    if (c.input_grads[0]) *c.input_grads[0] += c.grad;
    if (Tensor* gb = c.input_grads[1]) {
      for (std::size_t i = 0; i < gb->numel(); ++i) (*gb)[i] -= c.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = av[i] * bv[i];
  return a.tape().record("mul", std::move(out), {a, b}, [](const BackwardCtx& c) {
    const Tensor& x = *c.inputs[0];
    const Tensor& y = *c.inputs[1];
    if (Tensor* ga = c.input_grads[0]) {
      for (std::size_t i = 0; i < x.numel(); ++i) (*ga)[i] += c.grad[i] * y[i];
    }
    if (Tensor* gb = c.input_grads[1]) {
      for (std::size_t i = 0; i < x.numel(); ++i) (*gb)[i] += c.grad[i] * x[i];
    }
  });
}

Var scale(const Var& a, double k) {
  return a.tape().record("scale", k * a.value(), {a}, [k](const BackwardCtx& c) {
    if (Tensor* ga = c.input_grads[0]) {
      for (std::size_t i = 0; i < ga->numel(); ++i) (*ga)[i] += k * c.grad[i];
    }
  });
}

Var add_scalar(const Var& a, double k) {
  Tensor out = a.value();
  for (double& v : out.data()) v += k;
  return a.tape().record("add_scalar", std::move(out), {a}, [](const BackwardCtx& c) {
    if (c.input_grads[0]) *c.input_grads[0] += c.grad;
  });
}

Var add_scalar_var(const Var& x, const Var& s) {
  if (s.value().numel() != 1) throw ShapeError("add_scalar_var: scalar must have one element");
  Tensor out = x.value();
  const double k = s.value()[0];
  for (double& v : out.data()) v += k;
  return x.tape().record("add_scalar_var", std::move(out), {x, s}, [](const BackwardCtx& c) {
    if (c.input_grads[0]) *c.input_grads[0] += c.grad;
    if (c.input_grads[1]) (*c.input_grads[1])[0] += c.grad.sum();
  });
}

Var matmul(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.rank() != 2 || sb.rank() != 2 || sa[1] != sb[0]) {
    throw ShapeError("matmul: incompatible shapes " + sa.str() + " x " + sb.str());
  }
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  Tensor out(Shape{m, n});
  kernels::gemm(false, false, m, n, k, a.value().raw(), b.value().raw(), out.raw(), false);
  a.tape().add_flops(2ull * m * n * k);
  return a.tape().record("matmul", std::move(out), {a, b}, [m, n, k](const BackwardCtx& c) {
    if (Tensor* ga = c.input_grads[0]) {
      kernels::gemm(false, true, m, k, n, c.grad.raw(), c.inputs[1]->raw(), ga->raw(), true);
    }
    if (Tensor* gb = c.input_grads[1]) {
      kernels::gemm(true, false, k, n, m, c.inputs[0]->raw(), c.grad.raw(), gb->raw(), true);
    }
  });
}

Var bias_add(const Var& x, const Var& b, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "bias_add");
  if (b.shape().rank() != 1 || b.shape()[0] != s.len) {
    throw ShapeError("bias_add: bias shape " + b.shape().str() + " does not match axis extent " +
                     std::to_string(s.len));
  }
  Tensor out = x.value();
  const Tensor& bv = b.value();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t l = 0; l < s.len; ++l) {
      double* p = out.raw() + (o * s.len + l) * s.inner;
      const double bl = bv[l];
      for (std::size_t i = 0; i < s.inner; ++i) p[i] += bl;
    }
  }
  return x.tape().record("bias_add", std::move(out), {x, b}, [s](const BackwardCtx& c) {
    if (c.input_grads[0]) *c.input_grads[0] += c.grad;
    if (Tensor* gb = c.input_grads[1]) {
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t l = 0; l < s.len; ++l) {
          const double* p = c.grad.raw() + (o * s.len + l) * s.inner;
          double acc = 0.0;
          for (std::size_t i = 0; i < s.inner; ++i) acc += p[i];
          (*gb)[l] += acc;
        }
      }
    }
  });
}

Var conv2d(const Var& x, const Var& k, std::size_t stride, std::size_t pad) {
  const Shape& sx = x.shape();
  const Shape& sk = k.shape();
  if (sx.rank() != 3 || sk.rank() != 4 || sk[1] != sx[0]) {
    throw ShapeError("conv2d: incompatible input " + sx.str() + " and kernel " + sk.str());
  }
  if (sk[2] % 2 == 0 || sk[3] % 2 == 0) throw ShapeError("conv2d: kernel extents must be odd");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  kernels::ConvGeom g{sx[0], sx[1], sx[2], sk[2], sk[3], stride, pad, 0, 0};
  const std::size_t span_h = g.h + 2 * pad, span_w = g.w + 2 * pad;
  if (span_h < g.kh || span_w < g.kw || (span_h - g.kh) % stride != 0 ||
      (span_w - g.kw) % stride != 0) {
    throw ShapeError("conv2d: non-integral output extent for input " + sx.str() + ", kernel " +
                     sk.str() + ", stride " + std::to_string(stride) + ", pad " +
                     std::to_string(pad));
  }
  g.h_out = (span_h - g.kh) / stride + 1;
  g.w_out = (span_w - g.kw) / stride + 1;
  const std::size_t c_out = sk[0];
  const std::size_t patch = g.c_in * g.kh * g.kw;
  const std::size_t plane = g.h_out * g.w_out;
  const bool pointwise = g.kh == 1 && g.kw == 1 && stride == 1 && pad == 0;

  Tensor out(Shape{c_out, g.h_out, g.w_out});
  if (pointwise) {
    kernels::gemm(false, false, c_out, plane, patch, k.value().raw(), x.value().raw(), out.raw(),
                  false);
  } else {
    std::vector<double> cols(patch * plane);
    kernels::im2col(g, x.value().raw(), cols.data());
    kernels::gemm(false, false, c_out, plane, patch, k.value().raw(), cols.data(), out.raw(),
                  false);
  }
  x.tape().add_flops(2ull * c_out * patch * plane);
  return x.tape().record(
      "conv2d", std::move(out), {x, k}, [g, c_out, patch, plane, pointwise](const BackwardCtx& c) {
        const double* xin = c.inputs[0]->raw();
        const double* kin = c.inputs[1]->raw();
        std::vector<double> cols;
        const double* colp = xin;
        if (!pointwise && c.input_grads[1]) {
          cols.resize(patch * plane);
          kernels::im2col(g, xin, cols.data());
          colp = cols.data();
        }
        if (Tensor* gk = c.input_grads[1]) {
          kernels::gemm(false, true, c_out, patch, plane, c.grad.raw(), colp, gk->raw(), true);
        }
        if (Tensor* gx = c.input_grads[0]) {
          if (pointwise) {
            kernels::gemm(true, false, patch, plane, c_out, kin, c.grad.raw(), gx->raw(), true);
          } else {
            std::vector<double> dcols(patch * plane);
            kernels::gemm(true, false, patch, plane, c_out, kin, c.grad.raw(), dcols.data(),
                          false);
            kernels::col2im(g, dcols.data(), gx->raw());
          }
        }
      });
}

Var sigmoid(const Var& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        v = std::clamp(v, -kExpClamp, kExpClamp);
        return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      },
      [](double in, double out) {
        return std::abs(in) > kExpClamp ? 0.0 : out * (1.0 - out);
      });
}

Var gelu(const Var& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double in, double) {
        const double cdf = 0.5 * (1.0 + std::erf(in * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * in * in);
        return cdf + in * pdf;
      });
}

Var relu(const Var& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Var softmax(const Var& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      double mx = xv[base];
      for (std::size_t l = 1; l < s.len; ++l) mx = std::max(mx, xv[base + l * s.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) {
        const double e = std::exp(std::max(xv[base + l * s.inner] - mx, -700.0));
        out[base + l * s.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] /= z;
    }
  }
  return x.tape().record("softmax", std::move(out), {x}, [s](const BackwardCtx& c) {
    Tensor* gx = c.input_grads[0];
    if (!gx) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.len * s.inner + i;
        double d = 0.0;
        for (std::size_t l = 0; l < s.len; ++l) {
          d += c.grad[base + l * s.inner] * c.output[base + l * s.inner];
        }
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t at = base + l * s.inner;
          (*gx)[at] += c.output[at] * (c.grad[at] - d);
        }
      }
    }
  });
}

Var layer_norm(const Var& x, std::size_t axis, const Var& gamma, const Var& beta, double eps) {
  const AxisSplit s = split_axis(x.shape(), axis, "layer_norm");
  const Shape affine{s.len};
  if (gamma.shape() != affine || beta.shape() != affine) {
    throw ShapeError("layer_norm: gamma/beta must have shape " + affine.str());
  }
  const Tensor& xv = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor out(xv.shape());
  // Per-slice inverse std is recomputed in backward; cheap at these sizes.
  auto stats = [s, eps](const Tensor& t, std::size_t base) {
    double mu = 0.0;
    for (std::size_t l = 0; l < s.len; ++l) mu += t[base + l * s.inner];
    mu /= static_cast<double>(s.len);
    double var = 0.0;
    for (std::size_t l = 0; l < s.len; ++l) {
      const double dlt = t[base + l * s.inner] - mu;
      var += dlt * dlt;
    }
    var /= static_cast<double>(s.len);
    return std::pair{mu, 1.0 / std::sqrt(var + eps)};
  };
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      const auto [mu, inv] = stats(xv, base);
      for (std::size_t l = 0; l < s.len; ++l) {
        const std::size_t at = base + l * s.inner;
        out[at] = gv[l] * ((xv[at] - mu) * inv) + bv[l];
      }
    }
  }
  return x.tape().record("layer_norm", std::move(out), {x, gamma, beta},
                         [s, stats](const BackwardCtx& c) {
                           const Tensor& xin = *c.inputs[0];
                           const Tensor& gam = *c.inputs[1];
                           Tensor* gx = c.input_grads[0];
                           Tensor* gg = c.input_grads[1];
                           Tensor* gb = c.input_grads[2];
                           const double n = static_cast<double>(s.len);
                           std::vector<double> xhat(s.len), dxhat(s.len);
                           for (std::size_t o = 0; o < s.outer; ++o) {
                             for (std::size_t i = 0; i < s.inner; ++i) {
                               const std::size_t base = o * s.len * s.inner + i;
                               const auto [mu, inv] = stats(xin, base);
                               double m1 = 0.0, m2 = 0.0;
                               for (std::size_t l = 0; l < s.len; ++l) {
                                 const std::size_t at = base + l * s.inner;
                                 xhat[l] = (xin[at] - mu) * inv;
                                 dxhat[l] = c.grad[at] * gam[l];
                                 m1 += dxhat[l];
                                 m2 += dxhat[l] * xhat[l];
                                 if (gg) (*gg)[l] += c.grad[at] * xhat[l];
                                 if (gb) (*gb)[l] += c.grad[at];
                               }
                               if (!gx) continue;
                               m1 /= n;
                               m2 /= n;
                               for (std::size_t l = 0; l < s.len; ++l) {
                                 (*gx)[base + l * s.inner] +=
                                     inv * (dxhat[l] - m1 - xhat[l] * m2);
                               }
                             }
                           }
                         });
}

Var reshape(const Var& x, const Shape& shape) {
  Tensor out = x.value().reshaped(shape);
  return x.tape().record("reshape", std::move(out), {x}, [](const BackwardCtx& c) {
    if (Tensor* gx = c.input_grads[0]) {
      for (std::size_t i = 0; i < gx->numel(); ++i) (*gx)[i] += c.grad[i];
    }
  });
}

namespace {

// out[index permuted] = in[index]; `map[i]` is the output offset of input i.
std::vector<std::size_t> permutation_map(const Shape& in, std::span<const std::size_t> order) {
  const std::size_t r = in.rank();
  std::vector<std::size_t> out_dims(r);
  for (std::size_t i = 0; i < r; ++i) out_dims[i] = in[order[i]];
  const Shape out_shape(out_dims);
  const auto out_strides = out_shape.strides();
  // Stride in the output for a unit step along each input axis.
  std::vector<std::size_t> step(r);
  for (std::size_t i = 0; i < r; ++i) step[order[i]] = out_strides[i];
  std::vector<std::size_t> map(in.numel());
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t n = 0; n < map.size(); ++n) {
    map[n] = off;
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      off += step[ax];
      if (idx[ax] < in[ax]) break;
      off -= step[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return map;
}

Var gather_scatter(const Var& x, const Shape& out_shape, std::vector<std::size_t> map,
                   std::string_view name) {
  const Tensor& xv = x.value();
  Tensor out(out_shape);
  for (std::size_t i = 0; i < map.size(); ++i) out[map[i]] = xv[i];
  return x.tape().record(name, std::move(out), {x},
                         [map = std::move(map)](const BackwardCtx& c) {
                           if (Tensor* gx = c.input_grads[0]) {
                             for (std::size_t i = 0; i < map.size(); ++i) {
                               (*gx)[i] += c.grad[map[i]];
                             }
                           }
                         });
}

}  // namespace

Var permute(const Var& x, std::span<const std::size_t> order) {
  const Shape& s = x.shape();
  if (order.size() != s.rank()) throw ShapeError("permute: order rank mismatch for " + s.str());
  std::vector<bool> seen(order.size(), false);
  for (std::size_t a : order) {
    if (a >= order.size() || seen[a]) throw ShapeError("permute: invalid axis order");
    seen[a] = true;
  }
  std::vector<std::size_t> out_dims(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) out_dims[i] = s[order[i]];
  return gather_scatter(x, Shape(out_dims), permutation_map(s, order), "permute");
}

Var permute(const Var& x, std::initializer_list<std::size_t> order) {
  return permute(x, std::span<const std::size_t>(order.begin(), order.size()));
}

Var window_partition(const Var& x, std::size_t window) {
  const Shape& s = x.shape();
  if (s.rank() != 3) throw ShapeError("window_partition: expected [C,H,W], got " + s.str());
  if (window == 0 || s[1] % window != 0 || s[2] % window != 0) {
    throw ShapeError("window_partition: " + s.str() + " not divisible by window " +
                     std::to_string(window));
  }
  const Var split =
      reshape(x, Shape{s[0], s[1] / window, window, s[2] / window, window});
  return permute(split, {0, 1, 3, 2, 4});
}

Var window_merge(const Var& x, std::size_t window) {
  const Shape& s = x.shape();
  if (s.rank() != 5 || s[3] != window || s[4] != window) {
    throw ShapeError("window_merge: expected [C,nh,nw,w,w] with w=" + std::to_string(window) +
                     ", got " + s.str());
  }
  const Var back = permute(x, {0, 1, 3, 2, 4});
  return reshape(back, Shape{s[0], s[1] * window, s[2] * window});
}

Var roll(const Var& x, std::size_t axis, std::ptrdiff_t offset) {
  const AxisSplit s = split_axis(x.shape(), axis, "roll");
  const auto n = static_cast<std::ptrdiff_t>(s.len);
  const std::size_t shift = static_cast<std::size_t>(((offset % n) + n) % n);
  std::vector<std::size_t> map(x.value().numel());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t l = 0; l < s.len; ++l) {
      const std::size_t dst_l = (l + shift) % s.len;
      for (std::size_t i = 0; i < s.inner; ++i) {
        map[(o * s.len + l) * s.inner + i] = (o * s.len + dst_l) * s.inner + i;
      }
    }
  }
  return gather_scatter(x, x.shape(), std::move(map), "roll");
}

Var resample(const Var& x, ResampleDir dir, std::size_t factor) {
  const Shape& s = x.shape();
  if (s.rank() < 2) throw ShapeError("resample: need at least two axes, got " + s.str());
  if (factor == 0) throw ShapeError("resample: factor must be positive");
  const std::size_t r = s.rank();
  const std::size_t h = s[r - 2], w = s[r - 1];
  const std::size_t planes = s.numel() / (h * w);
  std::vector<std::size_t> dims = s.dims();
  if (dir == ResampleDir::down) {
    if (h % factor != 0 || w % factor != 0) {
      throw ShapeError("resample down: " + s.str() + " not divisible by " +
                       std::to_string(factor));
    }
    dims[r - 2] = h / factor;
    dims[r - 1] = w / factor;
  } else {
    dims[r - 2] = h * factor;
    dims[r - 1] = w * factor;
  }
  const std::size_t big_h = dir == ResampleDir::up ? dims[r - 2] : h;
  const std::size_t big_w = dir == ResampleDir::up ? dims[r - 1] : w;
  const std::size_t small_h = big_h / factor, small_w = big_w / factor;
  const double inv_area = 1.0 / static_cast<double>(factor * factor);

  // Both directions share the big<->small pixel correspondence.
  auto up_into = [=](const double* small, double* big, double mult) {
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t y = 0; y < big_h; ++y) {
        const double* srow = small + (p * small_h + y / factor) * small_w;
        double* brow = big + (p * big_h + y) * big_w;
        for (std::size_t xx = 0; xx < big_w; ++xx) brow[xx] += mult * srow[xx / factor];
      }
    }
  };
  auto down_into = [=](const double* big, double* small, double mult) {
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t y = 0; y < big_h; ++y) {
        const double* brow = big + (p * big_h + y) * big_w;
        double* srow = small + (p * small_h + y / factor) * small_w;
        for (std::size_t xx = 0; xx < big_w; ++xx) srow[xx / factor] += mult * brow[xx];
      }
    }
  };

  Tensor out{Shape(dims)};
  if (dir == ResampleDir::up) {
    up_into(x.value().raw(), out.raw(), 1.0);
  } else {
    // Average: sum the block first, then scale once.
    down_into(x.value().raw(), out.raw(), 1.0);
    out *= inv_area;
  }
  return x.tape().record(dir == ResampleDir::up ? "upsample" : "downsample", std::move(out), {x},
                         [=](const BackwardCtx& c) {
                           Tensor* gx = c.input_grads[0];
                           if (!gx) return;
                           if (dir == ResampleDir::up) {
                             down_into(c.grad.raw(), gx->raw(), 1.0);
                           } else {
                             up_into(c.grad.raw(), gx->raw(), inv_area);
                           }
                         });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  const AxisSplit s = split_axis(s0, axis, "concat");
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Shape& sp = p.shape();
    if (sp.rank() != s0.rank()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < sp.rank(); ++i) {
      if (i != axis && sp[i] != s0[i]) {
        throw ShapeError("concat: shape mismatch " + sp.str() + " vs " + s0.str());
      }
    }
    lens.push_back(sp[axis]);
    total += sp[axis];
  }
  std::vector<std::size_t> dims = s0.dims();
  dims[axis] = total;
  Tensor out{Shape(dims)};
  std::size_t start = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(pv.raw() + o * lens[k] * s.inner, lens[k] * s.inner,
                  out.raw() + (o * total + start) * s.inner);
    }
    start += lens[k];
  }
  return parts[0].tape().record(
      "concat", std::move(out), parts, [s, lens, total](const BackwardCtx& c) {
        std::size_t begin = 0;
        for (std::size_t k = 0; k < lens.size(); ++k) {
          if (Tensor* g = c.input_grads[k]) {
            for (std::size_t o = 0; o < s.outer; ++o) {
              const double* src = c.grad.raw() + (o * total + begin) * s.inner;
              double* dst = g->raw() + o * lens[k] * s.inner;
              for (std::size_t i = 0; i < lens[k] * s.inner; ++i) dst[i] += src[i];
            }
          }
          begin += lens[k];
        }
      });
}

Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var sum(const Var& x) {
  return x.tape().record("sum", Tensor::full(Shape{1}, x.value().sum()), {x},
                         [](const BackwardCtx& c) {
                           if (Tensor* gx = c.input_grads[0]) {
                             const double g = c.grad[0];
                             for (double& v : gx->data()) v += g;
                           }
                         });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().numel());
  return x.tape().record("mean", Tensor::full(Shape{1}, x.value().sum() / n), {x},
                         [n](const BackwardCtx& c) {
                           if (Tensor* gx = c.input_grads[0]) {
                             const double g = c.grad[0] / n;
                             for (double& v : gx->data()) v += g;
                           }
                         });
}

Var mse(const Var& a, const Var& b) {
  require_same_shape(a, b, "mse");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < av.numel(); ++i) {
    const double d = av[i] - bv[i];
    acc += d * d;
  }
  const double n = static_cast<double>(av.numel());
  return a.tape().record("mse", Tensor::full(Shape{1}, acc / n), {a, b},
                         [n](const BackwardCtx& c) {
                           const Tensor& x = *c.inputs[0];
                           const Tensor& y = *c.inputs[1];
                           const double g = 2.0 * c.grad[0] / n;
                           for (std::size_t i = 0; i < x.numel(); ++i) {
                             const double d = g * (x[i] - y[i]);
                             if (c.input_grads[0]) (*c.input_grads[0])[i] += d;
                             if (c.input_grads[1]) (*c.input_grads[1])[i] -= d;
                           }
                         });
}

}  // namespace amdc::ad
