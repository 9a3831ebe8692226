#pragma once

// Straightforward scalar reference implementations used as test oracles.
// Written from the formulas directly, without sharing code with the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

inline double mse(const Vec& a, const Vec& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / double(a.size());
}

inline double psnr(double mse_value, double max_value)
{
    return 10.0 * std::log10(max_value * max_value / mse_value);
}

/// Image-wide SSIM with population statistics.
inline double ssim_global(const Vec& x, const Vec& y, double data_range)
{
    const double c1 = (0.01 * data_range) * (0.01 * data_range);
    const double c2 = (0.03 * data_range) * (0.03 * data_range);
    const double n = double(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double vx = 0.0, vy = 0.0, cxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        vx += (x[i] - mx) * (x[i] - mx);
        vy += (y[i] - my) * (y[i] - my);
        cxy += (x[i] - mx) * (y[i] - my);
    }
    vx /= n;
    vy /= n;
    cxy /= n;
    return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

/// Mean SSIM over every fully contained 11x11 window, weights from a 2-D
/// Gaussian (sigma 1.5) normalized over the window. Channels are averaged.
inline double ssim_windowed(const Vec& x, const Vec& y, int channels, int height, int width, double data_range)
{
    const int win = 11;
    const double sigma = 1.5;
    const double c1 = (0.01 * data_range) * (0.01 * data_range);
    const double c2 = (0.03 * data_range) * (0.03 * data_range);
    std::vector<double> w(win * win);
    double wsum = 0.0;
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
            const double di = i - (win - 1) / 2.0;
            const double dj = j - (win - 1) / 2.0;
            w[i * win + j] = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
            wsum += w[i * win + j];
        }
    for (double& v : w)
        v /= wsum;

    double total = 0.0;
    int count = 0;
    for (int c = 0; c < channels; ++c) {
        const double* px = x.data() + std::size_t(c) * height * width;
        const double* py = y.data() + std::size_t(c) * height * width;
        for (int oy = 0; oy + win <= height; ++oy)
            for (int ox = 0; ox + win <= width; ++ox) {
                double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
                for (int i = 0; i < win; ++i)
                    for (int j = 0; j < win; ++j) {
                        const double a = px[(oy + i) * width + ox + j];
                        const double b = py[(oy + i) * width + ox + j];
                        const double k = w[i * win + j];
                        mx += k * a;
                        my += k * b;
                        xx += k * a * a;
                        yy += k * b * b;
                        xy += k * a * b;
                    }
                const double vx = xx - mx * mx;
                const double vy = yy - my * my;
                const double cxy = xy - mx * my;
                total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
    }
    return total / count;
}

inline double cosine(const Vec& a, const Vec& b)
{
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

/// Pair term with zero-based indices; the denominator runs over every k != i.
inline double pair_term(std::size_t i, std::size_t j, const std::vector<Vec>& views, double tau)
{
    double denom = 0.0;
    for (std::size_t k = 0; k < views.size(); ++k)
        if (k != i)
            denom += std::exp(cosine(views[i], views[k]) / tau);
    return -std::log(std::exp(cosine(views[i], views[j]) / tau) / denom);
}

inline double contrastive(const std::vector<Vec>& z_rgb, const std::vector<Vec>& z_thermal, double tau)
{
    std::vector<Vec> views;
    for (std::size_t k = 0; k < z_rgb.size(); ++k) {
        views.push_back(z_rgb[k]);
        views.push_back(z_thermal[k]);
    }
    double s = 0.0;
    for (std::size_t k = 0; k < z_rgb.size(); ++k)
        s += pair_term(2 * k, 2 * k + 1, views, tau) + pair_term(2 * k + 1, 2 * k, views, tau);
    return s / double(z_rgb.size());
}

/// Align-corners bilinear resampling of one plane.
inline Vec bilinear(const Vec& in, int h, int w, int oh, int ow)
{
    Vec out(std::size_t(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            const double sy = oh > 1 ? double(y) * (h - 1) / (oh - 1) : 0.0;
            const double sx = ow > 1 ? double(x) * (w - 1) / (ow - 1) : 0.0;
            const int y0 = std::min(int(std::floor(sy)), h - 1);
            const int x0 = std::min(int(std::floor(sx)), w - 1);
            const int y1 = std::min(y0 + 1, h - 1);
            const int x1 = std::min(x0 + 1, w - 1);
            const double fy = sy - y0;
            const double fx = sx - x0;
            out[std::size_t(y) * ow + x] = (1 - fy) * ((1 - fx) * in[y0 * w + x0] + fx * in[y0 * w + x1]) +
                                           fy * ((1 - fx) * in[y1 * w + x0] + fx * in[y1 * w + x1]);
        }
    return out;
}

struct AdamScalar {
    double m = 0.0;
    double v = 0.0;
    int t = 0;

    double step(double param, double grad, double lr, double b1, double b2, double eps)
    {
        ++t;
        m = b1 * m + (1 - b1) * grad;
        v = b2 * v + (1 - b2) * grad * grad;
        const double mh = m / (1 - std::pow(b1, t));
        const double vh = v / (1 - std::pow(b2, t));
        return param - lr * mh / (std::sqrt(vh) + eps);
    }
};

} // namespace oracle
