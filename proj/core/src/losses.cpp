#include "corefusion/losses.hpp"

#include "corefusion/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>

namespace corefusion {

namespace {

void require_same(const ImageTensor& a, const ImageTensor& b, const char* op)
{
    require(a.same_shape(b), ErrorCode::shape_mismatch,
            std::string(op) + ": shapes " + a.shape_string() + " and " + b.shape_string() + " differ");
}

void require_batch(std::span<const ImageTensor> a, std::span<const ImageTensor> b, const char* op)
{
    require(a.size() == b.size() && !a.empty(), ErrorCode::shape_mismatch,
            std::string(op) + ": prediction and target batches must be non-empty and of equal size");
    for (std::size_t i = 0; i < a.size(); ++i)
        require_same(a[i], b[i], op);
}

const std::array<double, kSsimWindow>& gaussian_window()
{
    static const std::array<double, kSsimWindow> window = [] {
        std::array<double, kSsimWindow> g{};
        double sum = 0.0;
        for (int k = 0; k < kSsimWindow; ++k) {
            const double d = double(k - kSsimWindow / 2);
            g[std::size_t(k)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
            sum += g[std::size_t(k)];
        }
        for (double& v : g)
            v /= sum;
        return g;
    }();
    return window;
}

// Valid separable Gaussian filtering: (h, w) -> (h - 10, w - 10).
std::vector<double> filter_valid(const std::vector<double>& in, int h, int w)
{
    const auto& g = gaussian_window();
    const int oh = h - kSsimWindow + 1;
    const int ow = w - kSsimWindow + 1;
    std::vector<double> tmp(std::size_t(h) * std::size_t(ow));
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < ow; ++c) {
            double acc = 0.0;
            for (int k = 0; k < kSsimWindow; ++k)
                acc += g[std::size_t(k)] * in[std::size_t(r) * std::size_t(w) + std::size_t(c + k)];
            tmp[std::size_t(r) * std::size_t(ow) + std::size_t(c)] = acc;
        }
    std::vector<double> out(std::size_t(oh) * std::size_t(ow));
    for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c) {
            double acc = 0.0;
            for (int k = 0; k < kSsimWindow; ++k)
                acc += g[std::size_t(k)] * tmp[std::size_t(r + k) * std::size_t(ow) + std::size_t(c)];
            out[std::size_t(r) * std::size_t(ow) + std::size_t(c)] = acc;
        }
    return out;
}

// Adjoint of filter_valid.
std::vector<double> filter_valid_adjoint(const std::vector<double>& in, int h, int w)
{
    const auto& g = gaussian_window();
    const int oh = h - kSsimWindow + 1;
    const int ow = w - kSsimWindow + 1;
    std::vector<double> tmp(std::size_t(h) * std::size_t(ow), 0.0);
    for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c) {
            const double v = in[std::size_t(r) * std::size_t(ow) + std::size_t(c)];
            for (int k = 0; k < kSsimWindow; ++k)
                tmp[std::size_t(r + k) * std::size_t(ow) + std::size_t(c)] += g[std::size_t(k)] * v;
        }
    std::vector<double> out(std::size_t(h) * std::size_t(w), 0.0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < ow; ++c) {
            const double v = tmp[std::size_t(r) * std::size_t(ow) + std::size_t(c)];
            for (int k = 0; k < kSsimWindow; ++k)
                out[std::size_t(r) * std::size_t(w) + std::size_t(c + k)] += g[std::size_t(k)] * v;
        }
    return out;
}

struct WindowStats {
    std::vector<double> mx, my, exx, eyy, exy;
};

// SSIM of one plane; when grad is non-null, adds scale * dSSIM/dx into it.
double ssim_plane(std::span<const double> x, std::span<const double> y, int h, int w, const SsimConstants& k,
                  SsimMode mode, double* grad, double scale)
{
    const std::size_t n = x.size();
    std::vector<double> xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }

    WindowStats s;
    if (mode == SsimMode::windowed) {
        require(h >= kSsimWindow && w >= kSsimWindow, ErrorCode::precondition,
                "windowed SSIM needs images of at least 11x11");
        s.mx = filter_valid(std::vector<double>(x.begin(), x.end()), h, w);
        s.my = filter_valid(std::vector<double>(y.begin(), y.end()), h, w);
        s.exx = filter_valid(xx, h, w);
        s.eyy = filter_valid(yy, h, w);
        s.exy = filter_valid(xy, h, w);
    } else {
        auto mean = [n](const auto& v) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                acc += v[i];
            return acc / double(n);
        };
        s.mx = {mean(x)};
        s.my = {mean(y)};
        s.exx = {mean(xx)};
        s.eyy = {mean(yy)};
        s.exy = {mean(xy)};
    }

    const std::size_t windows = s.mx.size();
    std::vector<double> ga, gb, gc;
    if (grad) {
        ga.resize(windows);
        gb.resize(windows);
        gc.resize(windows);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < windows; ++i) {
        const double mx = s.mx[i];
        const double my = s.my[i];
        const double vx = s.exx[i] - mx * mx;
        const double vy = s.eyy[i] - my * my;
        const double cxy = s.exy[i] - mx * my;
        const double a1 = 2.0 * mx * my + k.c1;
        const double a2 = 2.0 * cxy + k.c2;
        const double b1 = mx * mx + my * my + k.c1;
        const double b2 = vx + vy + k.c2;
        const double v = (a1 * a2) / (b1 * b2);
        total += v;
        if (grad) {
            const double d_mx = 2.0 * my * a2 / (b1 * b2) - v * 2.0 * mx / b1;
            const double d_vx = -v / b2;
            const double d_cxy = 2.0 * a1 / (b1 * b2);
            const double m = double(windows);
            ga[i] = (d_mx - 2.0 * mx * d_vx - my * d_cxy) / m;
            gb[i] = 2.0 * d_vx / m;
            gc[i] = d_cxy / m;
        }
    }

    if (grad) {
        if (mode == SsimMode::windowed) {
            const auto ta = filter_valid_adjoint(ga, h, w);
            const auto tb = filter_valid_adjoint(gb, h, w);
            const auto tc = filter_valid_adjoint(gc, h, w);
            for (std::size_t p = 0; p < n; ++p)
                grad[p] += scale * (ta[p] + x[p] * tb[p] + y[p] * tc[p]);
        } else {
            const double wgt = 1.0 / double(n);
            for (std::size_t p = 0; p < n; ++p)
                grad[p] += scale * wgt * (ga[0] + x[p] * gb[0] + y[p] * gc[0]);
        }
    }
    return total / double(windows);
}

double ssim_image(const ImageTensor& x, const ImageTensor& y, const SsimConstants& k, SsimMode mode, double* grad,
                  double scale)
{
    const int c = x.channels();
    double acc = 0.0;
    for (int ch = 0; ch < c; ++ch)
        acc += ssim_plane(x.plane(ch), y.plane(ch), x.height(), x.width(), k, mode,
                          grad ? grad + std::size_t(ch) * x.plane_size() : nullptr, scale / double(c));
    return acc / double(c);
}

ImageTensor to_unit(std::span<const double> v, int c, int h, int w)
{
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        out[i] = (v[i] + 1.0) / 2.0;
    return ImageTensor(c, h, w, std::move(out));
}

double mse_span(std::span<const double> a, std::span<const double> b)
{
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / double(a.size());
}

double norm(std::span<const double> v)
{
    double acc = 0.0;
    for (double x : v)
        acc += x * x;
    return std::sqrt(acc);
}

std::vector<Projection> interleave(std::span<const Projection> z_rgb, std::span<const Projection> z_thermal)
{
    require(z_rgb.size() == z_thermal.size(), ErrorCode::shape_mismatch,
            "contrastive loss: rgb and thermal projection counts differ");
    require(z_rgb.size() >= 2, ErrorCode::insufficient_negatives,
            "contrastive loss needs at least 2 pairs, got " + std::to_string(z_rgb.size()));
    std::vector<Projection> views;
    views.reserve(2 * z_rgb.size());
    for (std::size_t k = 0; k < z_rgb.size(); ++k) {
        views.push_back(z_rgb[k]);
        views.push_back(z_thermal[k]);
    }
    return views;
}

struct ViewGeometry {
    std::vector<double> norms;
    std::vector<std::vector<double>> cos;
};

ViewGeometry view_geometry(std::span<const Projection> views)
{
    const std::size_t m = views.size();
    ViewGeometry geo;
    geo.norms.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        require(views[i].size() == views[0].size(), ErrorCode::shape_mismatch, "projection lengths differ");
        geo.norms[i] = norm(views[i]);
        require(geo.norms[i] > 0.0 && std::isfinite(geo.norms[i]), ErrorCode::degenerate_similarity,
                "projection " + std::to_string(i) + " has zero or non-finite norm");
    }
    geo.cos.assign(m, std::vector<double>(m, 0.0));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < m; ++k) {
            double dot = 0.0;
            for (std::size_t d = 0; d < views[i].size(); ++d)
                dot += views[i][d] * views[k][d];
            geo.cos[i][k] = dot / (geo.norms[i] * geo.norms[k]);
        }
    return geo;
}

// l(i, j) and, optionally, dl/dsim(i, k) for every k (sim = cos / temperature).
double pair_term(const ViewGeometry& geo, std::size_t i, std::size_t j, double temperature, std::vector<double>* dsim)
{
    const std::size_t m = geo.norms.size();
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < m; ++k)
        if (k != i)
            peak = std::max(peak, geo.cos[i][k] / temperature);
    double denom = 0.0;
    for (std::size_t k = 0; k < m; ++k)
        if (k != i)
            denom += std::exp(geo.cos[i][k] / temperature - peak);
    const double value = -(geo.cos[i][j] / temperature) + peak + std::log(denom);
    if (dsim) {
        dsim->assign(m, 0.0);
        for (std::size_t k = 0; k < m; ++k)
            if (k != i)
                (*dsim)[k] = std::exp(geo.cos[i][k] / temperature - peak) / denom;
        (*dsim)[j] -= 1.0;
    }
    return value;
}

struct ContrastiveGradRaw {
    double value = 0.0;
    std::vector<Projection> grad;
};

ContrastiveGradRaw contrastive_raw(std::span<const Projection> views, double temperature, bool want_grad)
{
    require(temperature > 0.0, ErrorCode::precondition, "temperature must be positive");
    const ViewGeometry geo = view_geometry(views);
    const std::size_t m = views.size();
    const std::size_t n = m / 2;
    const std::size_t d = views[0].size();
    ContrastiveGradRaw out;
    if (want_grad)
        out.grad.assign(m, Projection(d, 0.0));
    std::vector<double> dsim;
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        for (auto [i, j] : {std::pair{2 * k, 2 * k + 1}, std::pair{2 * k + 1, 2 * k}}) {
            acc += pair_term(geo, i, j, temperature, want_grad ? &dsim : nullptr);
            if (!want_grad)
                continue;
            for (std::size_t q = 0; q < m; ++q) {
                if (q == i || dsim[q] == 0.0)
                    continue;
                const double coef = dsim[q] / (temperature * double(n));
                const double c = geo.cos[i][q];
                for (std::size_t t = 0; t < d; ++t) {
                    const double ui = views[i][t] / geo.norms[i];
                    const double uq = views[q][t] / geo.norms[q];
                    out.grad[i][t] += coef * (uq - c * ui) / geo.norms[i];
                    out.grad[q][t] += coef * (ui - c * uq) / geo.norms[q];
                }
            }
        }
    }
    out.value = acc / double(n);
    return out;
}

std::vector<Projection> split_rows(const Tensor& t)
{
    std::vector<Projection> out;
    for (int i = 0; i < t.shape().n; ++i) {
        auto s = t.sample(i);
        out.emplace_back(s.begin(), s.end());
    }
    return out;
}

void require_target(const Tensor& pred, const Tensor& target, const char* op)
{
    require(pred.shape() == target.shape(), ErrorCode::shape_mismatch,
            std::string(op) + ": prediction " + pred.shape().to_string() + " vs target " + target.shape().to_string());
}

} // namespace

// ---------------------------------------------------------------------------

void LossWeights::validate() const
{
    for (double v : {w_mse, w_psnr, w_ssim, beta})
        require(std::isfinite(v) && v >= 0.0, ErrorCode::config, "loss weights must be finite and non-negative");
}

SsimConstants SsimConstants::for_range(double data_range)
{
    require(data_range > 0.0, ErrorCode::precondition, "SSIM data range must be positive");
    return {(0.01 * data_range) * (0.01 * data_range), (0.03 * data_range) * (0.03 * data_range), data_range};
}

double mse(const ImageTensor& pred, const ImageTensor& target)
{
    require_same(pred, target, "mse");
    return mse_span(pred.values(), target.values());
}

ImageValueGrad mse_grad(const ImageTensor& pred, const ImageTensor& target)
{
    require_same(pred, target, "mse");
    ImageValueGrad out{mse(pred, target), ImageTensor(pred.channels(), pred.height(), pred.width())};
    const double scale = 2.0 / double(pred.size());
    auto g = out.grad.values();
    for (std::size_t i = 0; i < g.size(); ++i)
        g[i] = scale * (pred.values()[i] - target.values()[i]);
    return out;
}

double psnr_from_mse(double mse_value, double max_value, double cap_db)
{
    require(max_value > 0.0, ErrorCode::precondition, "PSNR max value must be positive");
    const double floor = max_value * max_value * std::pow(10.0, -cap_db / 10.0);
    return 10.0 * std::log10(max_value * max_value / std::max(mse_value, floor));
}

double psnr(const ImageTensor& pred, const ImageTensor& target, double max_value, double cap_db)
{
    return psnr_from_mse(mse(pred, target), max_value, cap_db);
}

double psnr_loss(std::span<const ImageTensor> pred, std::span<const ImageTensor> target, double cap_db)
{
    require_batch(pred, target, "psnr_loss");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        // Mapping both images to [0,1] halves the difference.
        const double m01 = mse_span(pred[i].values(), target[i].values()) / 4.0;
        acc += 1.0 - psnr_from_mse(m01, 1.0, cap_db) / kPsnrScale;
    }
    return acc / double(pred.size());
}

double ssim(const ImageTensor& x, const ImageTensor& y, const SsimConstants& constants, SsimMode mode)
{
    require_same(x, y, "ssim");
    return ssim_image(x, y, constants, mode, nullptr, 0.0);
}

ImageValueGrad ssim_grad(const ImageTensor& x, const ImageTensor& y, const SsimConstants& constants, SsimMode mode)
{
    require_same(x, y, "ssim");
    ImageValueGrad out{0.0, ImageTensor(x.channels(), x.height(), x.width())};
    out.value = ssim_image(x, y, constants, mode, out.grad.values().data(), 1.0);
    return out;
}

double ssim_loss(std::span<const ImageTensor> pred, std::span<const ImageTensor> target, SsimMode mode)
{
    require_batch(pred, target, "ssim_loss");
    const SsimConstants k = SsimConstants::for_range(1.0);
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const ImageTensor& p = pred[i];
        acc += 1.0 - ssim(to_unit(p.values(), p.channels(), p.height(), p.width()),
                          to_unit(target[i].values(), p.channels(), p.height(), p.width()), k, mode);
    }
    return acc / double(pred.size());
}

double cosine_similarity(std::span<const double> a, std::span<const double> b)
{
    require(a.size() == b.size(), ErrorCode::shape_mismatch, "cosine similarity of different lengths");
    const double na = norm(a);
    const double nb = norm(b);
    require(na > 0.0 && nb > 0.0, ErrorCode::degenerate_similarity, "cosine similarity of a zero vector");
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        dot += a[i] * b[i];
    return dot / (na * nb);
}

double contrastive_pair_term(std::size_t i, std::size_t j, std::span<const Projection> views, double temperature)
{
    require(views.size() >= 4 && views.size() % 2 == 0, ErrorCode::insufficient_negatives,
            "contrastive term needs an even number of at least 4 views, got " + std::to_string(views.size()));
    require(i < views.size() && j < views.size() && i != j, ErrorCode::precondition, "invalid view indices");
    require(temperature > 0.0, ErrorCode::precondition, "temperature must be positive");
    return pair_term(view_geometry(views), i, j, temperature, nullptr);
}

double contrastive_loss(std::span<const Projection> z_rgb, std::span<const Projection> z_thermal, double temperature)
{
    const auto views = interleave(z_rgb, z_thermal);
    return contrastive_raw(views, temperature, false).value;
}

ContrastiveValueGrad contrastive_loss_grad(std::span<const Projection> z_rgb, std::span<const Projection> z_thermal,
                                           double temperature)
{
    const auto views = interleave(z_rgb, z_thermal);
    ContrastiveGradRaw raw = contrastive_raw(views, temperature, true);
    ContrastiveValueGrad out;
    out.value = raw.value;
    for (std::size_t k = 0; k < z_rgb.size(); ++k) {
        out.grad_rgb.push_back(std::move(raw.grad[2 * k]));
        out.grad_thermal.push_back(std::move(raw.grad[2 * k + 1]));
    }
    return out;
}

LossBreakdown total_loss(std::span<const ImageTensor> pred, std::span<const ImageTensor> target,
                         const std::optional<ProjectionBatch>& projections, const LossWeights& weights,
                         double temperature, SsimMode mode)
{
    weights.validate();
    require_batch(pred, target, "total_loss");
    LossBreakdown b;
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        for (std::size_t p = 0; p < pred[i].size(); ++p) {
            const double d = pred[i].values()[p] - target[i].values()[p];
            acc += d * d;
        }
        count += pred[i].size();
    }
    b.mse = acc / double(count);
    b.psnr_loss = psnr_loss(pred, target);
    b.ssim_loss = ssim_loss(pred, target, mode);
    if (projections)
        b.contrastive = contrastive_loss(projections->rgb, projections->thermal, temperature);
    b.total = weights.w_mse * b.mse + weights.w_psnr * b.psnr_loss + weights.w_ssim * b.ssim_loss +
              weights.beta * b.contrastive;
    return b;
}

// ---------------------------------------------------------------------------
// Graph nodes

ad::Var mse_node(ad::Graph& g, ad::Var pred, const Tensor& target)
{
    require_target(g.value(pred), target, "mse");
    const double value = mse_span(g.value(pred).span(), target.span());
    return g.record(Tensor(Shape4{}, std::vector<double>{value}), {pred}, [pred, target](ad::Graph& gr, const Tensor& gout) {
        const Tensor& p = gr.value(pred);
        Tensor& d = gr.grad_buffer(pred);
        const double scale = 2.0 * gout[0] / double(p.size());
        for (std::size_t i = 0; i < p.size(); ++i)
            d[i] += scale * (p[i] - target[i]);
    });
}

ad::Var psnr_loss_node(ad::Graph& g, ad::Var pred, const Tensor& target, double cap_db)
{
    const Tensor& p = g.value(pred);
    require_target(p, target, "psnr_loss");
    const int n = p.shape().n;
    const double floor = std::pow(10.0, -cap_db / 10.0);
    std::vector<double> mse01(static_cast<std::size_t>(n));
    double acc = 0.0;
    std::uint64_t floored = 0;
    for (int i = 0; i < n; ++i) {
        mse01[std::size_t(i)] = mse_span(p.sample(i), target.sample(i)) / 4.0;
        acc += 1.0 - psnr_from_mse(mse01[std::size_t(i)], 1.0, cap_db) / kPsnrScale;
        floored = (floored << 1) | (mse01[std::size_t(i)] < floor ? 1u : 0u);
    }
    if (g.tracking_decisions())
        g.note_decision(floored);
    return g.record(Tensor(Shape4{}, std::vector<double>{acc / double(n)}), {pred},
                    [=](ad::Graph& gr, const Tensor& gout) {
        const Tensor& pv = gr.value(pred);
        Tensor& d = gr.grad_buffer(pred);
        const std::size_t per = pv.shape().sample_size();
        for (int i = 0; i < n; ++i) {
            const double m = mse01[std::size_t(i)];
            if (m < floor)
                continue;
            // d(1 - psnr/40)/d mse01, then d mse01 / d pred = (p - t) / (2 * per).
            const double dloss_dm = (10.0 / std::numbers::ln10) / (kPsnrScale * m);
            const double scale = gout[0] / double(n) * dloss_dm / (2.0 * double(per));
            auto ps = pv.sample(i);
            auto ts = target.sample(i);
            auto ds = d.sample(i);
            for (std::size_t q = 0; q < per; ++q)
                ds[q] += scale * (ps[q] - ts[q]);
        }
    });
}

ad::Var ssim_loss_node(ad::Graph& g, ad::Var pred, const Tensor& target, SsimMode mode)
{
    const Tensor& p = g.value(pred);
    require_target(p, target, "ssim_loss");
    const Shape4 s = p.shape();
    const SsimConstants k = SsimConstants::for_range(1.0);
    Tensor grad(s);
    double acc = 0.0;
    for (int i = 0; i < s.n; ++i) {
        const ImageTensor x = to_unit(p.sample(i), s.c, s.h, s.w);
        const ImageTensor y = to_unit(target.sample(i), s.c, s.h, s.w);
        // d(1 - ssim)/d pred = -0.5 * dssim/dx01, averaged over the batch.
        acc += 1.0 - ssim_image(x, y, k, mode, grad.sample(i).data(), -0.5 / double(s.n));
    }
    return g.record(Tensor(Shape4{}, std::vector<double>{acc / double(s.n)}), {pred},
                    [pred, grad = std::move(grad)](ad::Graph& gr, const Tensor& gout) {
        Tensor& d = gr.grad_buffer(pred);
        for (std::size_t i = 0; i < d.size(); ++i)
            d[i] += gout[0] * grad[i];
    });
}

ad::Var contrastive_node(ad::Graph& g, ad::Var z_rgb, ad::Var z_thermal, double temperature)
{
    const auto rgb = split_rows(g.value(z_rgb));
    const auto thermal = split_rows(g.value(z_thermal));
    ContrastiveValueGrad vg = contrastive_loss_grad(rgb, thermal, temperature);
    return g.record(Tensor(Shape4{}, std::vector<double>{vg.value}), {z_rgb, z_thermal},
                    [z_rgb, z_thermal, vg = std::move(vg)](ad::Graph& gr, const Tensor& gout) {
        for (auto [var, rows] : {std::pair{z_rgb, &vg.grad_rgb}, std::pair{z_thermal, &vg.grad_thermal}}) {
            if (!gr.requires_grad(var))
                continue;
            Tensor& d = gr.grad_buffer(var);
            for (std::size_t i = 0; i < rows->size(); ++i) {
                auto ds = d.sample(int(i));
                for (std::size_t q = 0; q < ds.size(); ++q)
                    ds[q] += gout[0] * (*rows)[i][q];
            }
        }
    });
}

GraphLoss total_loss(ad::Graph& g, ad::Var pred, const Tensor& target, std::optional<std::pair<ad::Var, ad::Var>> z,
                     const LossWeights& weights, double temperature, SsimMode mode)
{
    weights.validate();
    GraphLoss out;
    const ad::Var m = mse_node(g, pred, target);
    const ad::Var p = psnr_loss_node(g, pred, target);
    const ad::Var s = ssim_loss_node(g, pred, target, mode);
    std::vector<std::pair<double, ad::Var>> terms{{weights.w_mse, m}, {weights.w_psnr, p}, {weights.w_ssim, s}};
    out.breakdown.mse = g.value(m)[0];
    out.breakdown.psnr_loss = g.value(p)[0];
    out.breakdown.ssim_loss = g.value(s)[0];
    if (z && weights.beta > 0.0) {
        const ad::Var c = contrastive_node(g, z->first, z->second, temperature);
        out.breakdown.contrastive = g.value(c)[0];
        terms.emplace_back(weights.beta, c);
    }
    out.total = ad::weighted_sum(g, terms);
    out.breakdown.total = g.value(out.total)[0];
    return out;
}

} // namespace corefusion
