#pragma once

// Plane-level image kernels shared by the value-level data API and the
// differentiable graph ops. All planes are row-major.

#include <cstddef>

namespace corefusion::kernels {

/// Align-corners bilinear resampling of one plane.
void bilinear_forward(const double* in, int h, int w, double* out, int out_h, int out_w);
/// Accumulates the adjoint of bilinear_forward into grad_in.
void bilinear_backward(const double* grad_out, int out_h, int out_w, double* grad_in, int h, int w);

/// factor x factor non-overlapping area average.
void area_downsample(const double* in, int h, int w, int factor, double* out);

void nearest_upsample2x_forward(const double* in, int h, int w, double* out);
void nearest_upsample2x_backward(const double* grad_out, int h, int w, double* grad_in);

/// Unfolds a (c, h, w) sample into a (c*k*k) x (out_h*out_w) row-major matrix.
void im2col(const double* x, int c, int h, int w, int k, int stride, int pad, int out_h, int out_w, double* cols);
/// Adjoint of im2col; accumulates into x.
void col2im(const double* cols, int c, int h, int w, int k, int stride, int pad, int out_h, int out_w, double* x);

} // namespace corefusion::kernels
