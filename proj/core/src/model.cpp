#include "corefusion/model.hpp"

#include "corefusion/error.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace corefusion {

namespace {

const char* encoder_prefix(Encoder e)
{
    return e == Encoder::rgb ? "rgb_encoder" : "thermal_encoder";
}

const char* head_prefix(Head h)
{
    return h == Head::rgb ? "head_rgb" : "head_thermal";
}

int groups_for(const ModelConfig& cfg, int channels)
{
    int g = std::min(cfg.norm_groups, channels);
    while (channels % g != 0)
        --g;
    return g;
}

std::string level_name(const std::string& enc, int level, int depth)
{
    return level == depth ? enc + ".bottleneck" : enc + ".level" + std::to_string(level);
}

// --- Architecture walk shared by init and forward ---------------------------

struct ArchVisitor {
    virtual ~ArchVisitor() = default;
    virtual void conv_unit(const std::string& name, Submodule owner, int cin, int cout, int k, double init_scale) = 0;
    virtual void linear_bn(const std::string& name, Submodule owner, int in, int out) = 0;
};

void walk_architecture(const ModelConfig& cfg, ArchVisitor& v)
{
    for (Encoder e : {Encoder::rgb, Encoder::thermal}) {
        const std::string enc = encoder_prefix(e);
        const Submodule owner = e == Encoder::rgb ? Submodule::rgb_encoder : Submodule::thermal_encoder;
        const int in_ch = e == Encoder::rgb ? cfg.rgb_in_channels : cfg.thermal_in_channels;
        v.conv_unit(enc + ".stem", owner, in_ch, cfg.widths[0], 3, 1.0);
        for (int level = 0; level <= cfg.depth; ++level) {
            const std::string base = level_name(enc, level, cfg.depth);
            const int width = cfg.widths[std::size_t(std::min(level, cfg.depth - 1))];
            if (level > 0)
                v.conv_unit(base + ".down", owner, cfg.widths[std::size_t(level - 1)], width, 3, 1.0);
            for (int b = 0; b < cfg.blocks_per_level; ++b) {
                const std::string block = base + ".block" + std::to_string(b);
                v.conv_unit(block + ".unit1", owner, width, width, 3, 1.0);
                v.conv_unit(block + ".unit2", owner, width, width, 3, 1.0);
            }
        }
    }
    int running = cfg.widths.back();
    for (int level = cfg.depth - 1; level >= 0; --level) {
        const std::string base = "decoder.level" + std::to_string(level);
        const int width = cfg.widths[std::size_t(level)];
        v.conv_unit(base + ".unit1", Submodule::decoder, running + width, width, 3, 1.0);
        v.conv_unit(base + ".unit2", Submodule::decoder, width, width, 3, 1.0);
        running = width;
    }
    v.conv_unit("decoder.out", Submodule::decoder, running, 1, 1, 0.01);
    for (Head h : {Head::rgb, Head::thermal}) {
        const Submodule owner = h == Head::rgb ? Submodule::head_rgb : Submodule::head_thermal;
        const std::string head = head_prefix(h);
        v.linear_bn(head + ".fc1", owner, cfg.widths.back(), cfg.projection_dim);
        v.linear_bn(head + ".fc2", owner, cfg.projection_dim, cfg.projection_dim);
    }
}

struct Initializer final : ArchVisitor {
    Parameters& p;
    std::mt19937_64 rng;

    Initializer(Parameters& params, std::uint64_t seed) : p(params), rng(seed) {}

    void norm(const std::string& name, Submodule owner, int channels)
    {
        if (!p.config.norm_affine)
            return;
        p.add_param(name + ".gamma", owner, Tensor(Shape4{1, channels, 1, 1}, 1.0));
        p.add_param(name + ".beta", owner, Tensor(Shape4{1, channels, 1, 1}, 0.0));
    }

    Tensor he_normal(Shape4 shape, int fan_in, double scale)
    {
        std::normal_distribution<double> dist(0.0, scale * std::sqrt(2.0 / double(fan_in)));
        Tensor t(shape);
        for (double& v : t.span())
            v = dist(rng);
        return t;
    }

    void conv_unit(const std::string& name, Submodule owner, int cin, int cout, int k, double init_scale) override
    {
        p.add_param(name + ".conv.weight", owner, he_normal(Shape4{cout, cin, k, k}, cin * k * k, init_scale));
        p.add_param(name + ".conv.bias", owner, Tensor(Shape4{1, cout, 1, 1}, 0.0));
        if (name != "decoder.out")
            norm(name + ".norm", owner, cout);
    }

    void linear_bn(const std::string& name, Submodule owner, int in, int out) override
    {
        p.add_param(name + ".weight", owner, he_normal(Shape4{out, in, 1, 1}, in, 1.0));
        p.add_param(name + ".bias", owner, Tensor(Shape4{1, out, 1, 1}, 0.0));
        norm(name + ".bn", owner, out);
        p.add_buffer(name + ".bn.running_mean", owner, Tensor(Shape4{1, out, 1, 1}, 0.0));
        p.add_buffer(name + ".bn.running_var", owner, Tensor(Shape4{1, out, 1, 1}, 1.0));
    }
};

// --- Forward building blocks -------------------------------------------------

ad::Var conv_unit(ForwardContext& ctx, const std::string& name, ad::Var x, int stride, bool with_relu)
{
    ad::Graph& g = ctx.bind.graph();
    const auto& cfg = ctx.bind.params().config;
    ad::Var y = ad::conv2d(g, x, ctx.bind(name + ".conv.weight"), ctx.bind.optional(name + ".conv.bias"), stride, 1);
    y = ad::group_norm(g, y, groups_for(cfg, g.value(y).shape().c), ctx.bind.optional(name + ".norm.gamma"),
                       ctx.bind.optional(name + ".norm.beta"));
    return with_relu ? ad::relu(g, y) : y;
}

ad::Var residual_block(ForwardContext& ctx, const std::string& name, ad::Var x)
{
    ad::Var h = conv_unit(ctx, name + ".unit1", x, 1, true);
    h = conv_unit(ctx, name + ".unit2", h, 1, false);
    return ad::relu(ctx.bind.graph(), ad::add(ctx.bind.graph(), x, h));
}

ad::Var activation(ad::Graph& g, OutputActivation a, ad::Var x)
{
    switch (a) {
    case OutputActivation::tanh: return ad::tanh(g, x);
    case OutputActivation::relu: return ad::relu(g, x);
    case OutputActivation::sigmoid: return ad::sigmoid(g, x);
    case OutputActivation::identity: return x;
    }
    return x;
}

ImageTensor to_image(const Tensor& t)
{
    return unstack(t, 0);
}

Projection to_projection(const Tensor& t)
{
    return Projection(t.span().begin(), t.span().end());
}

} // namespace

// ---------------------------------------------------------------------------

const char* to_string(OutputActivation a) noexcept
{
    switch (a) {
    case OutputActivation::tanh: return "tanh";
    case OutputActivation::relu: return "relu";
    case OutputActivation::sigmoid: return "sigmoid";
    case OutputActivation::identity: return "identity";
    }
    return "unknown";
}

OutputActivation parse_output_activation(const std::string& text)
{
    for (auto a : {OutputActivation::tanh, OutputActivation::relu, OutputActivation::sigmoid, OutputActivation::identity})
        if (text == to_string(a))
            return a;
    fail(ErrorCode::config, "unknown output activation '" + text + "'");
}

const char* to_string(Submodule s) noexcept
{
    switch (s) {
    case Submodule::rgb_encoder: return "rgb_encoder";
    case Submodule::thermal_encoder: return "thermal_encoder";
    case Submodule::decoder: return "decoder";
    case Submodule::head_rgb: return "head_rgb";
    case Submodule::head_thermal: return "head_thermal";
    }
    return "unknown";
}

Submodule parse_submodule(const std::string& text)
{
    for (auto s : {Submodule::rgb_encoder, Submodule::thermal_encoder, Submodule::decoder, Submodule::head_rgb,
                   Submodule::head_thermal})
        if (text == to_string(s))
            return s;
    fail(ErrorCode::malformed_file, "unknown submodule tag '" + text + "'");
}

void ModelConfig::validate() const
{
    require(depth >= 2, ErrorCode::config, "model depth must be at least 2");
    require(depth <= 12, ErrorCode::config, "model depth must be at most 12");
    require(widths.size() == std::size_t(depth), ErrorCode::config,
            "widths must list one channel count per level (" + std::to_string(depth) + ")");
    for (std::size_t i = 0; i < widths.size(); ++i) {
        require(widths[i] > 0, ErrorCode::config, "widths must be positive");
        if (i > 0)
            require(widths[i] >= widths[i - 1], ErrorCode::config, "widths must be non-decreasing");
    }
    require(thermal_in_channels > 0 && rgb_in_channels > 0, ErrorCode::config, "input channel counts must be positive");
    require(blocks_per_level >= 0, ErrorCode::config, "blocks_per_level must be non-negative");
    require(projection_dim > 0, ErrorCode::config, "projection_dim must be positive");
    require(temperature > 0.0 && std::isfinite(temperature), ErrorCode::config, "temperature must be positive");
    require(norm_groups > 0, ErrorCode::config, "norm_groups must be positive");
}

// ---------------------------------------------------------------------------

void Parameters::add_param(std::string name, Submodule owner, Tensor value)
{
    require(!param_index_.count(name), ErrorCode::precondition, "duplicate parameter " + name);
    param_index_.emplace(name, params.size());
    params.push_back({std::move(name), owner, std::move(value)});
}

void Parameters::add_buffer(std::string name, Submodule owner, Tensor value)
{
    require(!buffer_index_.count(name), ErrorCode::precondition, "duplicate buffer " + name);
    buffer_index_.emplace(name, buffers.size());
    buffers.push_back({std::move(name), owner, std::move(value)});
}

std::optional<std::size_t> Parameters::find_param(std::string_view name) const
{
    auto it = param_index_.find(std::string(name));
    if (it == param_index_.end())
        return std::nullopt;
    return it->second;
}

std::optional<std::size_t> Parameters::find_buffer(std::string_view name) const
{
    auto it = buffer_index_.find(std::string(name));
    if (it == buffer_index_.end())
        return std::nullopt;
    return it->second;
}

const Tensor& Parameters::param(std::string_view name) const
{
    auto idx = find_param(name);
    require(idx.has_value(), ErrorCode::precondition, "unknown parameter " + std::string(name));
    return params[*idx].value;
}

Tensor& Parameters::param(std::string_view name)
{
    auto idx = find_param(name);
    require(idx.has_value(), ErrorCode::precondition, "unknown parameter " + std::string(name));
    return params[*idx].value;
}

const Tensor& Parameters::buffer(std::string_view name) const
{
    auto idx = find_buffer(name);
    require(idx.has_value(), ErrorCode::precondition, "unknown buffer " + std::string(name));
    return buffers[*idx].value;
}

Tensor& Parameters::buffer(std::string_view name)
{
    auto idx = find_buffer(name);
    require(idx.has_value(), ErrorCode::precondition, "unknown buffer " + std::string(name));
    return buffers[*idx].value;
}

std::size_t Parameters::scalar_count() const
{
    std::size_t n = 0;
    for (const auto& p : params)
        n += p.value.size();
    return n;
}

bool Parameters::all_finite() const
{
    return std::all_of(params.begin(), params.end(), [](const NamedTensor& p) { return p.value.all_finite(); }) &&
           std::all_of(buffers.begin(), buffers.end(), [](const NamedTensor& p) { return p.value.all_finite(); });
}

Parameters init_parameters(const ModelConfig& config)
{
    config.validate();
    Parameters p;
    p.config = config;
    Initializer init(p, config.seed);
    walk_architecture(config, init);
    return p;
}

// ---------------------------------------------------------------------------

ParameterBinding::ParameterBinding(ad::Graph& graph, const Parameters& params, bool trainable)
    : graph_(graph), params_(params), trainable_(trainable), bound_(params.params.size())
{
}

ad::Var ParameterBinding::operator()(std::string_view name)
{
    ad::Var v = optional(name);
    require(v.valid(), ErrorCode::precondition, "model has no parameter " + std::string(name));
    return v;
}

ad::Var ParameterBinding::optional(std::string_view name)
{
    auto idx = params_.find_param(name);
    if (!idx)
        return {};
    ad::Var& slot = bound_[*idx];
    if (!slot.valid()) {
        const Tensor& value = params_.params[*idx].value;
        slot = trainable_ ? graph_.variable(value) : graph_.reference(value);
    }
    return slot;
}

Gradients ParameterBinding::gradients() const
{
    Gradients grads;
    grads.reserve(bound_.size());
    for (std::size_t i = 0; i < bound_.size(); ++i) {
        const Tensor* gr = bound_[i].valid() ? graph_.grad(bound_[i]) : nullptr;
        grads.push_back(gr ? *gr : Tensor(params_.params[i].value.shape(), 0.0));
    }
    return grads;
}

// ---------------------------------------------------------------------------

std::vector<ad::Var> encode(ForwardContext& ctx, Encoder which, ad::Var img)
{
    ad::Graph& g = ctx.bind.graph();
    const ModelConfig& cfg = ctx.bind.params().config;
    const Shape4 s = g.value(img).shape();
    const int expected = which == Encoder::rgb ? cfg.rgb_in_channels : cfg.thermal_in_channels;
    require(s.c == expected, ErrorCode::shape_mismatch,
            std::string(encoder_prefix(which)) + " expects " + std::to_string(expected) + " channels, got " +
                std::to_string(s.c));
    const int div = cfg.spatial_divisor();
    require(s.h % div == 0 && s.w % div == 0, ErrorCode::shape_mismatch,
            "input " + s.to_string() + " is not divisible by 2^depth = " + std::to_string(div));

    const std::string enc = encoder_prefix(which);
    std::vector<ad::Var> levels;
    ad::Var x = conv_unit(ctx, enc + ".stem", img, 1, true);
    for (int level = 0; level <= cfg.depth; ++level) {
        const std::string base = level_name(enc, level, cfg.depth);
        if (level > 0)
            x = conv_unit(ctx, base + ".down", x, 2, true);
        for (int b = 0; b < cfg.blocks_per_level; ++b)
            x = residual_block(ctx, base + ".block" + std::to_string(b), x);
        levels.push_back(x);
    }
    return levels;
}

std::vector<ad::Var> fuse_max(ad::Graph& g, const std::vector<ad::Var>& a, const std::vector<ad::Var>& b)
{
    require(a.size() == b.size(), ErrorCode::shape_mismatch, "fuse_max: pyramids have different depths");
    std::vector<ad::Var> out;
    out.reserve(a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        out.push_back(ad::maximum(g, a[i], b[i]));
    return out;
}

ad::Var decode(ForwardContext& ctx, const std::vector<ad::Var>& skips)
{
    ad::Graph& g = ctx.bind.graph();
    const ModelConfig& cfg = ctx.bind.params().config;
    require(skips.size() == std::size_t(cfg.depth) + 1, ErrorCode::shape_mismatch,
            "decode expects " + std::to_string(cfg.depth + 1) + " pyramid levels, got " + std::to_string(skips.size()));
    for (int level = 0; level <= cfg.depth; ++level) {
        const Shape4 s = g.value(skips[std::size_t(level)]).shape();
        const int width = cfg.widths[std::size_t(std::min(level, cfg.depth - 1))];
        require(s.c == width, ErrorCode::shape_mismatch,
                "skip level " + std::to_string(level) + " has " + std::to_string(s.c) + " channels, expected " +
                    std::to_string(width));
        if (level > 0) {
            const Shape4 prev = g.value(skips[std::size_t(level - 1)]).shape();
            require(prev.h == 2 * s.h && prev.w == 2 * s.w && prev.n == s.n, ErrorCode::shape_mismatch,
                    "skip level " + std::to_string(level) + " does not halve the previous level");
        }
    }
    ad::Var x = skips.back();
    for (int level = cfg.depth - 1; level >= 0; --level) {
        const std::string base = "decoder.level" + std::to_string(level);
        x = ad::upsample_nearest2x(g, x);
        x = ad::concat_channels(g, x, skips[std::size_t(level)]);
        x = conv_unit(ctx, base + ".unit1", x, 1, true);
        x = conv_unit(ctx, base + ".unit2", x, 1, true);
    }
    x = ad::conv2d(g, x, ctx.bind("decoder.out.conv.weight"), ctx.bind.optional("decoder.out.conv.bias"), 1, 0);
    return activation(g, cfg.output_activation, x);
}

ad::Var project(ForwardContext& ctx, Head which, ad::Var bottleneck)
{
    ad::Graph& g = ctx.bind.graph();
    const Parameters& p = ctx.bind.params();
    const Shape4 s = g.value(bottleneck).shape();
    require(s.c == p.config.widths.back(), ErrorCode::shape_mismatch,
            "projection head expects " + std::to_string(p.config.widths.back()) + " channels, got " +
                std::to_string(s.c));
    const std::string head = head_prefix(which);
    ad::Var x = ad::global_avg_pool(g, bottleneck);
    for (const char* fc : {".fc1", ".fc2"}) {
        const std::string name = head + fc;
        x = ad::linear(g, x, ctx.bind(name + ".weight"), ctx.bind.optional(name + ".bias"));
        ad::BatchNormStats stats;
        const bool collect = ctx.head_mode == ad::BatchNormMode::training && ctx.stats != nullptr;
        x = ad::batch_norm(g, x, ctx.bind.optional(name + ".bn.gamma"), ctx.bind.optional(name + ".bn.beta"),
                           ctx.head_mode, &p.buffer(name + ".bn.running_mean"), &p.buffer(name + ".bn.running_var"),
                           collect ? &stats : nullptr);
        if (collect)
            ctx.stats->push_back({name + ".bn", std::move(stats)});
        if (std::string_view(fc) == ".fc1")
            x = ad::relu(g, x);
    }
    return x;
}

GraphFullOutput forward_full(ForwardContext& ctx, ad::Var hr_rgb, ad::Var lr_thermal)
{
    ad::Graph& g = ctx.bind.graph();
    const Shape4 rs = g.value(hr_rgb).shape();
    const Shape4 ts = g.value(lr_thermal).shape();
    require(rs.n == ts.n && rs.h == ts.h * 8 && rs.w == ts.w * 8, ErrorCode::shape_mismatch,
            "lr_thermal " + ts.to_string() + " must be hr_rgb " + rs.to_string() + " downscaled by 8");
    GraphFullOutput out;
    ad::Var up = ad::upsample_bilinear(g, lr_thermal, rs.h, rs.w);
    out.rgb_pyramid = encode(ctx, Encoder::rgb, hr_rgb);
    out.thermal_pyramid = encode(ctx, Encoder::thermal, up);
    out.pred = decode(ctx, fuse_max(g, out.rgb_pyramid, out.thermal_pyramid));
    out.z_rgb = project(ctx, Head::rgb, out.rgb_pyramid.back());
    out.z_thermal = project(ctx, Head::thermal, out.thermal_pyramid.back());
    return out;
}

ad::Var forward_single(ForwardContext& ctx, Encoder which, ad::Var img)
{
    ad::Graph& g = ctx.bind.graph();
    if (which == Encoder::thermal) {
        const Shape4 s = g.value(img).shape();
        img = ad::upsample_bilinear(g, img, s.h * 8, s.w * 8);
    }
    return decode(ctx, encode(ctx, which, img));
}

void apply_norm_stats(Parameters& params, const std::vector<NormStatsUpdate>& updates, double momentum)
{
    for (const auto& u : updates) {
        Tensor& mean = params.buffer(u.buffer_prefix + ".running_mean");
        Tensor& var = params.buffer(u.buffer_prefix + ".running_var");
        for (std::size_t j = 0; j < mean.size(); ++j) {
            mean[j] = (1.0 - momentum) * mean[j] + momentum * u.stats.mean[j];
            var[j] = (1.0 - momentum) * var[j] + momentum * u.stats.unbiased_var[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Value-level wrappers

FeaturePyramid encode(const Parameters& params, Encoder which, const ImageTensor& img)
{
    ad::Graph g;
    ParameterBinding bind(g, params, false);
    ForwardContext ctx{bind};
    FeaturePyramid out;
    for (ad::Var v : encode(ctx, which, g.constant(stack(img))))
        out.levels.push_back(to_image(g.value(v)));
    return out;
}

FeaturePyramid fuse_max(const FeaturePyramid& a, const FeaturePyramid& b)
{
    require(a.levels.size() == b.levels.size(), ErrorCode::shape_mismatch, "fuse_max: pyramids have different depths");
    FeaturePyramid out;
    out.levels.reserve(a.levels.size());
    for (std::size_t i = 0; i < a.levels.size(); ++i) {
        const ImageTensor& x = a.levels[i];
        const ImageTensor& y = b.levels[i];
        require(x.same_shape(y), ErrorCode::shape_mismatch,
                "fuse_max: level " + std::to_string(i) + " shapes " + x.shape_string() + " vs " + y.shape_string());
        ImageTensor m = x;
        auto mv = m.values();
        auto yv = y.values();
        for (std::size_t k = 0; k < mv.size(); ++k)
            mv[k] = mv[k] >= yv[k] ? mv[k] : yv[k];
        out.levels.push_back(std::move(m));
    }
    return out;
}

ImageTensor decode(const Parameters& params, const FeaturePyramid& skips)
{
    ad::Graph g;
    ParameterBinding bind(g, params, false);
    ForwardContext ctx{bind};
    std::vector<ad::Var> vars;
    for (const auto& level : skips.levels)
        vars.push_back(g.constant(stack(level)));
    return to_image(g.value(decode(ctx, vars)));
}

Projection project(const Parameters& params, Head which, const ImageTensor& bottleneck)
{
    ad::Graph g;
    ParameterBinding bind(g, params, false);
    ForwardContext ctx{bind};
    return to_projection(g.value(project(ctx, which, g.constant(stack(bottleneck)))));
}

FullOutput forward_full(const Parameters& params, const ImageTensor& hr_rgb, const ImageTensor& lr_thermal)
{
    ad::Graph g;
    ParameterBinding bind(g, params, false);
    ForwardContext ctx{bind};
    GraphFullOutput out = forward_full(ctx, g.constant(stack(hr_rgb)), g.constant(stack(lr_thermal)));
    return {to_image(g.value(out.pred)), to_projection(g.value(out.z_rgb)), to_projection(g.value(out.z_thermal))};
}

ImageTensor forward_single(const Parameters& params, Encoder which, const ImageTensor& img)
{
    ad::Graph g;
    ParameterBinding bind(g, params, false);
    ForwardContext ctx{bind};
    return to_image(g.value(forward_single(ctx, which, g.constant(stack(img)))));
}

} // namespace corefusion
