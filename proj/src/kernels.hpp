#pragma once

// Raw dense kernels shared by the autodiff ops. Row-major, no aliasing
// between output and inputs.

#include <cstddef>

namespace amdc::kernels {

// C[m,n] (+)= op(A) * op(B), where op(A) is [m,k] and op(B) is [k,n].
// trans_a reads A stored as [k,m]; trans_b reads B stored as [n,k].
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate);

struct ConvGeom {
  std::size_t c_in, h, w;
  std::size_t kh, kw;
  std::size_t stride, pad;
  std::size_t h_out, w_out;
};

// cols[(ci*kh + i)*kw + j, oy*w_out + ox] = x[ci, oy*s + i - p, ox*s + j - p] (0 outside).
void im2col(const ConvGeom& g, const double* x, double* cols);
// Adjoint of im2col, accumulating into x.
void col2im(const ConvGeom& g, const double* cols, double* x);

}  // namespace amdc::kernels
