#pragma once

#include "corefusion/data.hpp"
#include "corefusion/model.hpp"
#include "corefusion/tensor.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace testing {

inline corefusion::ImageTensor random_image(std::mt19937_64& rng, int c, int h, int w, double lo = 0.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> d(lo, hi);
    corefusion::ImageTensor img(c, h, w);
    for (double& v : img.values())
        v = d(rng);
    return img;
}

inline std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(n);
    for (double& x : v)
        x = d(rng);
    return v;
}

inline double rel_err(double a, double b)
{
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

/// Relative error with a floor on the denominator, for gradient comparisons
/// where both values may be near zero.
inline double grad_rel_err(double analytic, double numeric, double floor = 1e-7)
{
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline double central_difference(const std::function<double(double)>& f, double x, double h = 1e-5)
{
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name)
{
    const auto dir = std::filesystem::temp_directory_path() / ("corefusion_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Small architecture that keeps end-to-end tests fast.
inline corefusion::ModelConfig small_model(int depth = 2)
{
    corefusion::ModelConfig c;
    c.depth = depth;
    c.widths.clear();
    for (int i = 0; i < depth; ++i)
        c.widths.push_back(4 << i);
    c.blocks_per_level = 1;
    c.projection_dim = 8;
    c.norm_groups = 2;
    return c;
}

} // namespace testing
