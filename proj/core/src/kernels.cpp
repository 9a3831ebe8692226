#include "kernels.hpp"

#include <algorithm>
#include <cstddef>
#include <vector>

namespace corefusion::kernels {

namespace {

struct Tap {
    int lo;
    int hi;
    double frac;
};

Tap tap(int i, int out_n, int in_n)
{
    if (out_n == 1 || in_n == 1)
        return {0, 0, 0.0};
    const double pos = double(i) * double(in_n - 1) / double(out_n - 1);
    int lo = int(pos);
    lo = std::min(lo, in_n - 1);
    const int hi = std::min(lo + 1, in_n - 1);
    return {lo, hi, pos - double(lo)};
}

} // namespace

void bilinear_forward(const double* in, int h, int w, double* out, int out_h, int out_w)
{
    for (int oy = 0; oy < out_h; ++oy) {
        const Tap ty = tap(oy, out_h, h);
        const double* r0 = in + std::size_t(ty.lo) * std::size_t(w);
        const double* r1 = in + std::size_t(ty.hi) * std::size_t(w);
        for (int ox = 0; ox < out_w; ++ox) {
            const Tap tx = tap(ox, out_w, w);
            const double top = r0[tx.lo] + (r0[tx.hi] - r0[tx.lo]) * tx.frac;
            const double bottom = r1[tx.lo] + (r1[tx.hi] - r1[tx.lo]) * tx.frac;
            out[std::size_t(oy) * std::size_t(out_w) + std::size_t(ox)] = top + (bottom - top) * ty.frac;
        }
    }
}

void bilinear_backward(const double* grad_out, int out_h, int out_w, double* grad_in, int h, int w)
{
    for (int oy = 0; oy < out_h; ++oy) {
        const Tap ty = tap(oy, out_h, h);
        double* r0 = grad_in + std::size_t(ty.lo) * std::size_t(w);
        double* r1 = grad_in + std::size_t(ty.hi) * std::size_t(w);
        for (int ox = 0; ox < out_w; ++ox) {
            const Tap tx = tap(ox, out_w, w);
            const double g = grad_out[std::size_t(oy) * std::size_t(out_w) + std::size_t(ox)];
            const double gt = g * (1.0 - ty.frac);
            const double gb = g * ty.frac;
            r0[tx.lo] += gt * (1.0 - tx.frac);
            r0[tx.hi] += gt * tx.frac;
            r1[tx.lo] += gb * (1.0 - tx.frac);
            r1[tx.hi] += gb * tx.frac;
        }
    }
}

namespace {

// Adds mirrored pairs first so the result is bit-identical for reversed input.
double mirrored_sum(const double* v, int n, std::ptrdiff_t stride)
{
    double sum = 0.0;
    for (int i = 0; i < n / 2; ++i)
        sum += v[i * stride] + v[(n - 1 - i) * stride];
    if (n % 2)
        sum += v[(n / 2) * stride];
    return sum;
}

} // namespace

void area_downsample(const double* in, int h, int w, int factor, double* out)
{
    const int oh = h / factor;
    const int ow = w / factor;
    const double inv = 1.0 / double(factor * factor);
    std::vector<double> rows(static_cast<std::size_t>(factor));
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            for (int dy = 0; dy < factor; ++dy) {
                const double* row = in + std::size_t(oy * factor + dy) * std::size_t(w) + std::size_t(ox * factor);
                rows[std::size_t(dy)] = mirrored_sum(row, factor, 1);
            }
            out[std::size_t(oy) * std::size_t(ow) + std::size_t(ox)] = mirrored_sum(rows.data(), factor, 1) * inv;
        }
    }
}

void nearest_upsample2x_forward(const double* in, int h, int w, double* out)
{
    const int ow = 2 * w;
    for (int y = 0; y < 2 * h; ++y) {
        const double* src = in + std::size_t(y / 2) * std::size_t(w);
        double* dst = out + std::size_t(y) * std::size_t(ow);
        for (int x = 0; x < ow; ++x)
            dst[x] = src[x / 2];
    }
}

void nearest_upsample2x_backward(const double* grad_out, int h, int w, double* grad_in)
{
    const int ow = 2 * w;
    for (int y = 0; y < 2 * h; ++y) {
        double* dst = grad_in + std::size_t(y / 2) * std::size_t(w);
        const double* src = grad_out + std::size_t(y) * std::size_t(ow);
        for (int x = 0; x < ow; ++x)
            dst[x / 2] += src[x];
    }
}

namespace {

// Row copies; efficient when output rows are wide.
void im2col_rows(const double* x, int c, int h, int w, int k, int stride, int pad, int out_h, int out_w, double* cols)
{
    const std::size_t p = std::size_t(out_h) * std::size_t(out_w);
    for (int ci = 0; ci < c; ++ci) {
        const double* plane = x + std::size_t(ci) * std::size_t(h) * std::size_t(w);
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* row = cols + (std::size_t(ci * k + ky) * std::size_t(k) + std::size_t(kx)) * p;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    double* dst = row + std::size_t(oy) * std::size_t(out_w);
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + out_w, 0.0);
                        continue;
                    }
                    const double* src = plane + std::size_t(iy) * std::size_t(w);
                    // Output columns whose input column lies inside the image.
                    const int lo = std::clamp((pad - kx + stride - 1) / stride, 0, out_w);
                    const int hi = std::clamp((w - 1 + pad - kx) / stride + 1, lo, out_w);
                    std::fill(dst, dst + lo, 0.0);
                    if (stride == 1) {
                        std::copy(src + lo - pad + kx, src + hi - pad + kx, dst + lo);
                    } else {
                        for (int ox = lo; ox < hi; ++ox)
                            dst[ox] = src[ox * stride - pad + kx];
                    }
                    std::fill(dst + hi, dst + out_w, 0.0);
                }
            }
        }
    }
}

// Gather through an offset table shared by all channels; -1 marks padding.
void im2col_gather(const double* x, int c, int h, int w, int k, int stride, int pad, int out_h, int out_w, double* cols)
{
    const std::size_t taps = std::size_t(k) * std::size_t(k) * std::size_t(out_h) * std::size_t(out_w);
    std::vector<int> offset(taps);
    std::size_t j = 0;
    for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx)
            for (int oy = 0; oy < out_h; ++oy)
                for (int ox = 0; ox < out_w; ++ox) {
                    const int iy = oy * stride - pad + ky;
                    const int ix = ox * stride - pad + kx;
                    offset[j++] = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? iy * w + ix : -1;
                }
    const std::size_t plane_size = std::size_t(h) * std::size_t(w);
    for (int ci = 0; ci < c; ++ci) {
        const double* plane = x + std::size_t(ci) * plane_size;
        double* dst = cols + std::size_t(ci) * taps;
        for (std::size_t t = 0; t < taps; ++t)
            dst[t] = offset[t] >= 0 ? plane[offset[t]] : 0.0;
    }
}

} // namespace

void im2col(const double* x, int c, int h, int w, int k, int stride, int pad, int out_h, int out_w, double* cols)
{
    if (out_w >= 12)
        im2col_rows(x, c, h, w, k, stride, pad, out_h, out_w, cols);
    else
        im2col_gather(x, c, h, w, k, stride, pad, out_h, out_w, cols);
}

void col2im(const double* cols, int c, int h, int w, int k, int stride, int pad, int out_h, int out_w, double* x)
{
    const std::size_t p = std::size_t(out_h) * std::size_t(out_w);
    for (int ci = 0; ci < c; ++ci) {
        double* plane = x + std::size_t(ci) * std::size_t(h) * std::size_t(w);
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* row = cols + (std::size_t(ci * k + ky) * std::size_t(k) + std::size_t(kx)) * p;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h)
                        continue;
                    const double* src = row + std::size_t(oy) * std::size_t(out_w);
                    double* dst = plane + std::size_t(iy) * std::size_t(w);
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w)
                            dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

} // namespace corefusion::kernels
