#include "corefusion/autodiff.hpp"

#include "corefusion/error.hpp"
#include "kernels.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace corefusion::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

void require_shape(const Shape4& a, const Shape4& b, const char* op)
{
    require(a == b, ErrorCode::shape_mismatch,
            std::string(op) + ": shape " + a.to_string() + " vs " + b.to_string());
}

} // namespace

// ---------------------------------------------------------------------------
// Graph

Graph::Node& Graph::node(Var v)
{
    require(v.valid() && std::size_t(v.id) < nodes_.size(), ErrorCode::precondition, "invalid graph variable");
    return nodes_[std::size_t(v.id)];
}

const Graph::Node& Graph::node(Var v) const
{
    require(v.valid() && std::size_t(v.id) < nodes_.size(), ErrorCode::precondition, "invalid graph variable");
    return nodes_[std::size_t(v.id)];
}

Var Graph::constant(Tensor value)
{
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
}

Var Graph::reference(const Tensor& value)
{
    Node n;
    n.external = &value;
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
}

Var Graph::variable(Tensor value)
{
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
}

Var Graph::record(Tensor value, std::initializer_list<Var> inputs, Backward backward)
{
    return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Graph::record(Tensor value, const std::vector<Var>& inputs, Backward backward)
{
    Node n;
    n.value = std::move(value);
    for (Var in : inputs)
        if (in.valid() && node(in).requires_grad)
            n.requires_grad = true;
    if (n.requires_grad)
        n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
}

const Tensor& Graph::value(Var v) const
{
    const Node& n = node(v);
    return n.external ? *n.external : n.value;
}

bool Graph::requires_grad(Var v) const
{
    return v.valid() && node(v).requires_grad;
}

const Tensor* Graph::grad(Var v) const
{
    const Node& n = node(v);
    return n.has_grad ? &n.grad : nullptr;
}

Tensor& Graph::grad_buffer(Var v)
{
    Node& n = node(v);
    if (!n.has_grad) {
        n.grad = Tensor(value(v).shape(), 0.0);
        n.has_grad = true;
    }
    return n.grad;
}

void Graph::backward(Var root)
{
    require(value(root).size() == 1, ErrorCode::precondition, "backward root must be a scalar");
    grad_buffer(root)[0] += 1.0;
    for (int id = root.id; id >= 0; --id) {
        Node& n = nodes_[std::size_t(id)];
        if (!n.requires_grad || !n.has_grad || !n.backward)
            continue;
        // The closure may append gradients to earlier nodes only, so the
        // reference stays valid (nodes_ is not resized during backward).
        n.backward(*this, n.grad);
    }
}

void Graph::note_decision(std::uint64_t bits) noexcept
{
    signature_ = (signature_ ^ bits) * 1099511628211ull;
}

// ---------------------------------------------------------------------------
// Convolution

Var conv2d(Graph& g, Var x, Var weight, Var bias, int stride, int pad)
{
    const Shape4 xs = g.value(x).shape();
    const Shape4 ws = g.value(weight).shape();
    require(ws.h == ws.w, ErrorCode::shape_mismatch, "conv2d: kernel must be square");
    require(xs.c == ws.c, ErrorCode::shape_mismatch,
            "conv2d: input has " + std::to_string(xs.c) + " channels, kernel expects " + std::to_string(ws.c));
    const int k = ws.h;
    const int oh = (xs.h + 2 * pad - k) / stride + 1;
    const int ow = (xs.w + 2 * pad - k) / stride + 1;
    require(oh > 0 && ow > 0, ErrorCode::shape_mismatch, "conv2d: input too small for kernel");
    if (bias.valid())
        require(g.value(bias).size() == std::size_t(ws.n), ErrorCode::shape_mismatch, "conv2d: bias size");

    const Shape4 os{xs.n, ws.n, oh, ow};
    const int kdim = ws.c * k * k;
    const int p = oh * ow;
    const bool direct = (k == 1 && stride == 1 && pad == 0);

    Tensor out = Tensor::uninitialized(os);
    {
        const Tensor& xv = g.value(x);
        const Tensor& wv = g.value(weight);
        ConstMatMap wm(wv.data(), ws.n, kdim);
        AlignedBuffer cols(direct ? 0 : std::size_t(kdim) * std::size_t(p));
        for (int n = 0; n < xs.n; ++n) {
            const double* src = xv.sample(n).data();
            if (!direct) {
                kernels::im2col(src, xs.c, xs.h, xs.w, k, stride, pad, oh, ow, cols.data());
                src = cols.data();
            }
            MatMap om(out.sample(n).data(), ws.n, p);
            om.noalias() = wm * ConstMatMap(src, kdim, p);
            if (bias.valid()) {
                const Tensor& bv = g.value(bias);
                for (int co = 0; co < ws.n; ++co)
                    om.row(co).array() += bv[std::size_t(co)];
            }
        }
    }

    return g.record(std::move(out), {x, weight, bias}, [=](Graph& gr, const Tensor& gout) {
        const Tensor& xv = gr.value(x);
        const Tensor& wv = gr.value(weight);
        ConstMatMap wm(wv.data(), ws.n, kdim);
        const bool need_x = gr.requires_grad(x);
        const bool need_w = gr.requires_grad(weight);
        const bool need_b = bias.valid() && gr.requires_grad(bias);
        AlignedBuffer cols(direct ? 0 : std::size_t(kdim) * std::size_t(p));
        AlignedBuffer dcols(direct || !need_x ? 0 : std::size_t(kdim) * std::size_t(p));
        for (int n = 0; n < xs.n; ++n) {
            ConstMatMap gm(gout.sample(n).data(), ws.n, p);
            if (need_w) {
                const double* src = xv.sample(n).data();
                if (!direct) {
                    kernels::im2col(src, xs.c, xs.h, xs.w, k, stride, pad, oh, ow, cols.data());
                    src = cols.data();
                }
                MatMap dw(gr.grad_buffer(weight).data(), ws.n, kdim);
                dw.noalias() += gm * ConstMatMap(src, kdim, p).transpose();
            }
            if (need_b) {
                Tensor& db = gr.grad_buffer(bias);
                for (int co = 0; co < ws.n; ++co)
                    db[std::size_t(co)] += gm.row(co).sum();
            }
            if (need_x) {
                double* dx = gr.grad_buffer(x).sample(n).data();
                if (direct) {
                    MatMap(dx, kdim, p).noalias() += wm.transpose() * gm;
                } else {
                    MatMap(dcols.data(), kdim, p).noalias() = wm.transpose() * gm;
                    kernels::col2im(dcols.data(), xs.c, xs.h, xs.w, k, stride, pad, oh, ow, dx);
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Normalization

Var group_norm(Graph& g, Var x, int groups, Var gamma, Var beta, double eps)
{
    const Shape4 s = g.value(x).shape();
    require(groups > 0 && s.c % groups == 0, ErrorCode::shape_mismatch,
            "group_norm: " + std::to_string(s.c) + " channels not divisible into " + std::to_string(groups) + " groups");
    if (gamma.valid())
        require(g.value(gamma).size() == std::size_t(s.c), ErrorCode::shape_mismatch, "group_norm: gamma size");
    if (beta.valid())
        require(g.value(beta).size() == std::size_t(s.c), ErrorCode::shape_mismatch, "group_norm: beta size");

    const int cpg = s.c / groups;
    const std::size_t plane = s.plane_size();
    const std::size_t m = std::size_t(cpg) * plane;

    const Tensor& xv = g.value(x);
    Tensor xhat(s);
    std::vector<double> inv_std(std::size_t(s.n) * std::size_t(groups));
    for (int n = 0; n < s.n; ++n) {
        for (int gi = 0; gi < groups; ++gi) {
            const std::size_t off = std::size_t(n) * s.sample_size() + std::size_t(gi) * m;
            const double* src = xv.data() + off;
            double mean = 0.0;
            for (std::size_t i = 0; i < m; ++i)
                mean += src[i];
            mean /= double(m);
            double var = 0.0;
            for (std::size_t i = 0; i < m; ++i)
                var += (src[i] - mean) * (src[i] - mean);
            var /= double(m);
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[std::size_t(n) * std::size_t(groups) + std::size_t(gi)] = is;
            double* dst = xhat.data() + off;
            for (std::size_t i = 0; i < m; ++i)
                dst[i] = (src[i] - mean) * is;
        }
    }

    Tensor out = xhat;
    if (gamma.valid() || beta.valid()) {
        for (int n = 0; n < s.n; ++n) {
            for (int c = 0; c < s.c; ++c) {
                const double ga = gamma.valid() ? g.value(gamma)[std::size_t(c)] : 1.0;
                const double be = beta.valid() ? g.value(beta)[std::size_t(c)] : 0.0;
                double* dst = out.data() + std::size_t(n) * s.sample_size() + std::size_t(c) * plane;
                for (std::size_t i = 0; i < plane; ++i)
                    dst[i] = dst[i] * ga + be;
            }
        }
    }

    return g.record(std::move(out), {x, gamma, beta},
                    [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& gr, const Tensor& gout) {
        const bool need_x = gr.requires_grad(x);
        const bool need_gamma = gamma.valid() && gr.requires_grad(gamma);
        const bool need_beta = beta.valid() && gr.requires_grad(beta);
        for (int n = 0; n < s.n; ++n) {
            for (int c = 0; c < s.c; ++c) {
                const std::size_t off = std::size_t(n) * s.sample_size() + std::size_t(c) * plane;
                if (need_gamma) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < plane; ++i)
                        acc += gout[off + i] * xhat[off + i];
                    gr.grad_buffer(gamma)[std::size_t(c)] += acc;
                }
                if (need_beta) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < plane; ++i)
                        acc += gout[off + i];
                    gr.grad_buffer(beta)[std::size_t(c)] += acc;
                }
            }
        }
        if (!need_x)
            return;
        Tensor& dx = gr.grad_buffer(x);
        std::vector<double> dxhat(m);
        for (int n = 0; n < s.n; ++n) {
            for (int gi = 0; gi < groups; ++gi) {
                const std::size_t off = std::size_t(n) * s.sample_size() + std::size_t(gi) * m;
                double sum = 0.0;
                double dot = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    const int c = gi * cpg + int(i / plane);
                    const double ga = gamma.valid() ? gr.value(gamma)[std::size_t(c)] : 1.0;
                    dxhat[i] = gout[off + i] * ga;
                    sum += dxhat[i];
                    dot += dxhat[i] * xhat[off + i];
                }
                const double is = inv_std[std::size_t(n) * std::size_t(groups) + std::size_t(gi)];
                const double inv_m = 1.0 / double(m);
                for (std::size_t i = 0; i < m; ++i)
                    dx[off + i] += is * (dxhat[i] - inv_m * sum - xhat[off + i] * inv_m * dot);
            }
        }
    });
}

Var batch_norm(Graph& g, Var x, Var gamma, Var beta, BatchNormMode mode,
               const Tensor* running_mean, const Tensor* running_var,
               BatchNormStats* stats, double eps)
{
    const Shape4 s = g.value(x).shape();
    require(s.h == 1 && s.w == 1, ErrorCode::shape_mismatch, "batch_norm expects (n, f, 1, 1) input");
    const int f = s.c;
    const int n = s.n;
    if (gamma.valid())
        require(g.value(gamma).size() == std::size_t(f), ErrorCode::shape_mismatch, "batch_norm: gamma size");
    if (beta.valid())
        require(g.value(beta).size() == std::size_t(f), ErrorCode::shape_mismatch, "batch_norm: beta size");

    const Tensor& xv = g.value(x);
    Tensor xhat(s);
    std::vector<double> inv_std(static_cast<std::size_t>(f));
    if (mode == BatchNormMode::training) {
        if (stats) {
            stats->mean.assign(std::size_t(f), 0.0);
            stats->unbiased_var.assign(std::size_t(f), 0.0);
        }
        for (int j = 0; j < f; ++j) {
            double mean = 0.0;
            for (int i = 0; i < n; ++i)
                mean += xv[std::size_t(i) * std::size_t(f) + std::size_t(j)];
            mean /= double(n);
            double ss = 0.0;
            for (int i = 0; i < n; ++i) {
                const double d = xv[std::size_t(i) * std::size_t(f) + std::size_t(j)] - mean;
                ss += d * d;
            }
            const double var = ss / double(n);
            inv_std[std::size_t(j)] = 1.0 / std::sqrt(var + eps);
            for (int i = 0; i < n; ++i) {
                const std::size_t idx = std::size_t(i) * std::size_t(f) + std::size_t(j);
                xhat[idx] = (xv[idx] - mean) * inv_std[std::size_t(j)];
            }
            if (stats) {
                stats->mean[std::size_t(j)] = mean;
                stats->unbiased_var[std::size_t(j)] = n > 1 ? ss / double(n - 1) : var;
            }
        }
    } else {
        require(running_mean && running_var, ErrorCode::precondition, "batch_norm inference needs running statistics");
        require(running_mean->size() == std::size_t(f) && running_var->size() == std::size_t(f),
                ErrorCode::shape_mismatch, "batch_norm: running statistics size");
        for (int j = 0; j < f; ++j) {
            inv_std[std::size_t(j)] = 1.0 / std::sqrt((*running_var)[std::size_t(j)] + eps);
            for (int i = 0; i < n; ++i) {
                const std::size_t idx = std::size_t(i) * std::size_t(f) + std::size_t(j);
                xhat[idx] = (xv[idx] - (*running_mean)[std::size_t(j)]) * inv_std[std::size_t(j)];
            }
        }
    }

    Tensor out = Tensor::uninitialized(s);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < f; ++j) {
            const std::size_t idx = std::size_t(i) * std::size_t(f) + std::size_t(j);
            const double ga = gamma.valid() ? g.value(gamma)[std::size_t(j)] : 1.0;
            const double be = beta.valid() ? g.value(beta)[std::size_t(j)] : 0.0;
            out[idx] = xhat[idx] * ga + be;
        }
    }

    return g.record(std::move(out), {x, gamma, beta},
                    [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& gr, const Tensor& gout) {
        for (int j = 0; j < f; ++j) {
            const double ga = gamma.valid() ? gr.value(gamma)[std::size_t(j)] : 1.0;
            double sum = 0.0;
            double dot = 0.0;
            for (int i = 0; i < n; ++i) {
                const std::size_t idx = std::size_t(i) * std::size_t(f) + std::size_t(j);
                sum += gout[idx];
                dot += gout[idx] * xhat[idx];
            }
            if (gamma.valid() && gr.requires_grad(gamma))
                gr.grad_buffer(gamma)[std::size_t(j)] += dot;
            if (beta.valid() && gr.requires_grad(beta))
                gr.grad_buffer(beta)[std::size_t(j)] += sum;
            if (!gr.requires_grad(x))
                continue;
            Tensor& dx = gr.grad_buffer(x);
            const double is = inv_std[std::size_t(j)];
            for (int i = 0; i < n; ++i) {
                const std::size_t idx = std::size_t(i) * std::size_t(f) + std::size_t(j);
                if (mode == BatchNormMode::training)
                    dx[idx] += ga * is * (gout[idx] - sum / double(n) - xhat[idx] * dot / double(n));
                else
                    dx[idx] += ga * is * gout[idx];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Point-wise

Var relu(Graph& g, Var x)
{
    const Tensor& xv = g.value(x);
    Tensor out = Tensor::uninitialized(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i)
        out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    if (g.tracking_decisions()) {
        std::uint64_t word = 0;
        for (std::size_t i = 0; i < xv.size(); ++i) {
            word = (word << 1) | (xv[i] > 0.0 ? 1u : 0u);
            if (i % 64 == 63) {
                g.note_decision(word);
                word = 0;
            }
        }
        g.note_decision(word);
    }
    return g.record(std::move(out), {x}, [x](Graph& gr, const Tensor& gout) {
        const Tensor& xv = gr.value(x);
        Tensor& dx = gr.grad_buffer(x);
        for (std::size_t i = 0; i < xv.size(); ++i)
            if (xv[i] > 0.0)
                dx[i] += gout[i];
    });
}

Var tanh(Graph& g, Var x)
{
    const Tensor& xv = g.value(x);
    Tensor out = Tensor::uninitialized(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i)
        out[i] = std::tanh(xv[i]);
    Tensor y = out;
    return g.record(std::move(out), {x}, [x, y = std::move(y)](Graph& gr, const Tensor& gout) {
        Tensor& dx = gr.grad_buffer(x);
        for (std::size_t i = 0; i < y.size(); ++i)
            dx[i] += gout[i] * (1.0 - y[i] * y[i]);
    });
}

Var sigmoid(Graph& g, Var x)
{
    const Tensor& xv = g.value(x);
    Tensor out = Tensor::uninitialized(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i)
        out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
    Tensor y = out;
    return g.record(std::move(out), {x}, [x, y = std::move(y)](Graph& gr, const Tensor& gout) {
        Tensor& dx = gr.grad_buffer(x);
        for (std::size_t i = 0; i < y.size(); ++i)
            dx[i] += gout[i] * y[i] * (1.0 - y[i]);
    });
}

Var add(Graph& g, Var a, Var b)
{
    require_shape(g.value(a).shape(), g.value(b).shape(), "add");
    Tensor out = g.value(a);
    const Tensor& bv = g.value(b);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] += bv[i];
    return g.record(std::move(out), {a, b}, [a, b](Graph& gr, const Tensor& gout) {
        for (Var v : {a, b}) {
            if (!gr.requires_grad(v))
                continue;
            Tensor& d = gr.grad_buffer(v);
            for (std::size_t i = 0; i < d.size(); ++i)
                d[i] += gout[i];
        }
    });
}

Var maximum(Graph& g, Var a, Var b)
{
    require_shape(g.value(a).shape(), g.value(b).shape(), "maximum");
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    Tensor out = Tensor::uninitialized(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = av[i] >= bv[i] ? av[i] : bv[i];
    if (g.tracking_decisions()) {
        std::uint64_t word = 0;
        for (std::size_t i = 0; i < av.size(); ++i) {
            word = (word << 1) | (av[i] >= bv[i] ? 1u : 0u);
            if (i % 64 == 63) {
                g.note_decision(word);
                word = 0;
            }
        }
        g.note_decision(word);
    }
    return g.record(std::move(out), {a, b}, [a, b](Graph& gr, const Tensor& gout) {
        const Tensor& av = gr.value(a);
        const Tensor& bv = gr.value(b);
        const bool need_a = gr.requires_grad(a);
        const bool need_b = gr.requires_grad(b);
        for (std::size_t i = 0; i < av.size(); ++i) {
            if (av[i] >= bv[i]) {
                if (need_a)
                    gr.grad_buffer(a)[i] += gout[i];
            } else if (need_b) {
                gr.grad_buffer(b)[i] += gout[i];
            }
        }
    });
}

Var concat_channels(Graph& g, Var a, Var b)
{
    const Shape4 sa = g.value(a).shape();
    const Shape4 sb = g.value(b).shape();
    require(sa.n == sb.n && sa.h == sb.h && sa.w == sb.w, ErrorCode::shape_mismatch,
            "concat_channels: " + sa.to_string() + " vs " + sb.to_string());
    const Shape4 so{sa.n, sa.c + sb.c, sa.h, sa.w};
    Tensor out = Tensor::uninitialized(so);
    for (int n = 0; n < sa.n; ++n) {
        auto dst = out.sample(n);
        auto pa = g.value(a).sample(n);
        auto pb = g.value(b).sample(n);
        std::copy(pa.begin(), pa.end(), dst.begin());
        std::copy(pb.begin(), pb.end(), dst.begin() + std::ptrdiff_t(pa.size()));
    }
    return g.record(std::move(out), {a, b}, [=](Graph& gr, const Tensor& gout) {
        for (int n = 0; n < sa.n; ++n) {
            auto src = gout.sample(n);
            if (gr.requires_grad(a)) {
                auto da = gr.grad_buffer(a).sample(n);
                for (std::size_t i = 0; i < da.size(); ++i)
                    da[i] += src[i];
            }
            if (gr.requires_grad(b)) {
                auto db = gr.grad_buffer(b).sample(n);
                const std::size_t off = sa.sample_size();
                for (std::size_t i = 0; i < db.size(); ++i)
                    db[i] += src[off + i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Resampling

Var upsample_nearest2x(Graph& g, Var x)
{
    const Shape4 s = g.value(x).shape();
    const Shape4 so{s.n, s.c, 2 * s.h, 2 * s.w};
    Tensor out = Tensor::uninitialized(so);
    const Tensor& xv = g.value(x);
    for (int p = 0; p < s.n * s.c; ++p)
        kernels::nearest_upsample2x_forward(xv.data() + std::size_t(p) * s.plane_size(), s.h, s.w,
                                            out.data() + std::size_t(p) * so.plane_size());
    return g.record(std::move(out), {x}, [=](Graph& gr, const Tensor& gout) {
        Tensor& dx = gr.grad_buffer(x);
        for (int p = 0; p < s.n * s.c; ++p)
            kernels::nearest_upsample2x_backward(gout.data() + std::size_t(p) * so.plane_size(), s.h, s.w,
                                                 dx.data() + std::size_t(p) * s.plane_size());
    });
}

Var upsample_bilinear(Graph& g, Var x, int out_h, int out_w)
{
    const Shape4 s = g.value(x).shape();
    require(out_h > 0 && out_w > 0, ErrorCode::precondition, "upsample_bilinear: zero-sized target");
    const Shape4 so{s.n, s.c, out_h, out_w};
    Tensor out = Tensor::uninitialized(so);
    const Tensor& xv = g.value(x);
    for (int p = 0; p < s.n * s.c; ++p)
        kernels::bilinear_forward(xv.data() + std::size_t(p) * s.plane_size(), s.h, s.w,
                                  out.data() + std::size_t(p) * so.plane_size(), out_h, out_w);
    return g.record(std::move(out), {x}, [=](Graph& gr, const Tensor& gout) {
        Tensor& dx = gr.grad_buffer(x);
        for (int p = 0; p < s.n * s.c; ++p)
            kernels::bilinear_backward(gout.data() + std::size_t(p) * so.plane_size(), out_h, out_w,
                                       dx.data() + std::size_t(p) * s.plane_size(), s.h, s.w);
    });
}

Var global_avg_pool(Graph& g, Var x)
{
    const Shape4 s = g.value(x).shape();
    const Shape4 so{s.n, s.c, 1, 1};
    Tensor out = Tensor::uninitialized(so);
    const Tensor& xv = g.value(x);
    const std::size_t plane = s.plane_size();
    for (int p = 0; p < s.n * s.c; ++p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i)
            acc += xv[std::size_t(p) * plane + i];
        out[std::size_t(p)] = acc / double(plane);
    }
    return g.record(std::move(out), {x}, [=](Graph& gr, const Tensor& gout) {
        Tensor& dx = gr.grad_buffer(x);
        for (int p = 0; p < s.n * s.c; ++p) {
            const double share = gout[std::size_t(p)] / double(plane);
            for (std::size_t i = 0; i < plane; ++i)
                dx[std::size_t(p) * plane + i] += share;
        }
    });
}

// ---------------------------------------------------------------------------
// Dense

Var linear(Graph& g, Var x, Var weight, Var bias)
{
    const Shape4 xs = g.value(x).shape();
    const Shape4 ws = g.value(weight).shape();
    require(xs.h == 1 && xs.w == 1 && ws.h == 1 && ws.w == 1, ErrorCode::shape_mismatch, "linear expects flat tensors");
    require(xs.c == ws.c, ErrorCode::shape_mismatch,
            "linear: input width " + std::to_string(xs.c) + ", weight expects " + std::to_string(ws.c));
    if (bias.valid())
        require(g.value(bias).size() == std::size_t(ws.n), ErrorCode::shape_mismatch, "linear: bias size");
    const Shape4 so{xs.n, ws.n, 1, 1};
    Tensor out = Tensor::uninitialized(so);
    ConstMatMap xm(g.value(x).data(), xs.n, xs.c);
    ConstMatMap wm(g.value(weight).data(), ws.n, ws.c);
    MatMap om(out.data(), xs.n, ws.n);
    om.noalias() = xm * wm.transpose();
    if (bias.valid())
        for (int i = 0; i < xs.n; ++i)
            for (int o = 0; o < ws.n; ++o)
                om(i, o) += g.value(bias)[std::size_t(o)];
    return g.record(std::move(out), {x, weight, bias}, [=](Graph& gr, const Tensor& gout) {
        ConstMatMap gm(gout.data(), xs.n, ws.n);
        if (gr.requires_grad(x)) {
            ConstMatMap wm(gr.value(weight).data(), ws.n, ws.c);
            MatMap(gr.grad_buffer(x).data(), xs.n, xs.c).noalias() += gm * wm;
        }
        if (gr.requires_grad(weight)) {
            ConstMatMap xm(gr.value(x).data(), xs.n, xs.c);
            MatMap(gr.grad_buffer(weight).data(), ws.n, ws.c).noalias() += gm.transpose() * xm;
        }
        if (bias.valid() && gr.requires_grad(bias)) {
            Tensor& db = gr.grad_buffer(bias);
            for (int o = 0; o < ws.n; ++o)
                db[std::size_t(o)] += gm.col(o).sum();
        }
    });
}

Var weighted_sum(Graph& g, const std::vector<std::pair<double, Var>>& terms)
{
    double total = 0.0;
    std::vector<Var> inputs;
    for (const auto& [coef, v] : terms) {
        require(g.value(v).size() == 1, ErrorCode::shape_mismatch, "weighted_sum expects scalar terms");
        total += coef * g.value(v)[0];
        inputs.push_back(v);
    }
    return g.record(Tensor(Shape4{}, std::vector<double>{total}), inputs, [terms](Graph& gr, const Tensor& gout) {
        for (const auto& [coef, v] : terms)
            if (gr.requires_grad(v))
                gr.grad_buffer(v)[0] += coef * gout[0];
    });
}

} // namespace corefusion::ad
