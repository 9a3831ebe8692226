#pragma once

// Dual-encoder U-Net for guided thermal super-resolution.
//
// Two residual encoders (RGB guide, bilinearly pre-upsampled LR thermal) build
// feature pyramids that are merged by element-wise maximum at every level and
// fed through skip connections to a shared decoder. Two projection heads map
// the pre-fusion bottlenecks to embeddings for the contrastive term. With one
// modality missing, that encoder's pyramid goes to the decoder unfused.

#include "corefusion/autodiff.hpp"
#include "corefusion/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace corefusion {

enum class OutputActivation { tanh, relu, sigmoid, identity };

const char* to_string(OutputActivation a) noexcept;
OutputActivation parse_output_activation(const std::string& text);

struct ModelConfig {
    int depth = 4;
    std::vector<int> widths{8, 16, 32, 64};
    int thermal_in_channels = 1;
    int rgb_in_channels = 3;
    int blocks_per_level = 2;
    int projection_dim = 64;
    double temperature = 1.0;
    OutputActivation output_activation = OutputActivation::tanh;
    std::uint64_t seed = 0;
    int norm_groups = 4;
    /// When false, normalization layers carry no scale/offset parameters.
    bool norm_affine = true;

    void validate() const;
    /// Smallest spatial divisor inputs must satisfy (2^depth).
    int spatial_divisor() const { return 1 << depth; }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Submodule { rgb_encoder, thermal_encoder, decoder, head_rgb, head_thermal };

const char* to_string(Submodule s) noexcept;
Submodule parse_submodule(const std::string& text);

enum class Encoder { rgb, thermal };
enum class Head { rgb, thermal };

struct NamedTensor {
    std::string name;
    Submodule owner;
    Tensor value;

    friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// All learnable tensors plus normalization running statistics.
class Parameters {
public:
    ModelConfig config;
    std::vector<NamedTensor> params;
    std::vector<NamedTensor> buffers;

    void add_param(std::string name, Submodule owner, Tensor value);
    void add_buffer(std::string name, Submodule owner, Tensor value);

    std::optional<std::size_t> find_param(std::string_view name) const;
    std::optional<std::size_t> find_buffer(std::string_view name) const;
    const Tensor& param(std::string_view name) const;
    Tensor& param(std::string_view name);
    const Tensor& buffer(std::string_view name) const;
    Tensor& buffer(std::string_view name);
    bool has_param(std::string_view name) const { return find_param(name).has_value(); }

    std::size_t scalar_count() const;
    bool all_finite() const;

    friend bool operator==(const Parameters& a, const Parameters& b)
    {
        return a.config == b.config && a.params == b.params && a.buffers == b.buffers;
    }

private:
    std::unordered_map<std::string, std::size_t> param_index_;
    std::unordered_map<std::string, std::size_t> buffer_index_;
};

/// Per-parameter gradients aligned with Parameters::params.
using Gradients = std::vector<Tensor>;

Parameters init_parameters(const ModelConfig& config);

/// depth skip levels followed by the bottleneck.
struct FeaturePyramid {
    std::vector<ImageTensor> levels;

    const ImageTensor& bottleneck() const { return levels.back(); }
    friend bool operator==(const FeaturePyramid&, const FeaturePyramid&) = default;
};

using Projection = std::vector<double>;

struct FullOutput {
    ImageTensor pred;
    Projection z_rgb;
    Projection z_thermal;
};

// ---------------------------------------------------------------------------
// Value-level API (inference mode, single image)

FeaturePyramid encode(const Parameters& params, Encoder which, const ImageTensor& img);
FeaturePyramid fuse_max(const FeaturePyramid& a, const FeaturePyramid& b);
ImageTensor decode(const Parameters& params, const FeaturePyramid& skips);
Projection project(const Parameters& params, Head which, const ImageTensor& bottleneck);
FullOutput forward_full(const Parameters& params, const ImageTensor& hr_rgb, const ImageTensor& lr_thermal);
/// Thermal input is the LR image (upsampled x8 internally); RGB input is HR.
ImageTensor forward_single(const Parameters& params, Encoder which, const ImageTensor& img);

// ---------------------------------------------------------------------------
// Graph-level API (batched, differentiable)

/// Lazily exposes parameters as graph leaves (variables or constants).
class ParameterBinding {
public:
    ParameterBinding(ad::Graph& graph, const Parameters& params, bool trainable);

    ad::Var operator()(std::string_view name);
    /// Invalid Var when the parameter does not exist (e.g. affine disabled).
    ad::Var optional(std::string_view name);

    /// Gradients for every parameter; zero for parameters the graph never touched.
    Gradients gradients() const;

    ad::Graph& graph() { return graph_; }
    const Parameters& params() const { return params_; }

private:
    ad::Graph& graph_;
    const Parameters& params_;
    bool trainable_;
    std::vector<ad::Var> bound_;
};

struct NormStatsUpdate {
    std::string buffer_prefix;
    ad::BatchNormStats stats;
};

struct ForwardContext {
    ParameterBinding& bind;
    ad::BatchNormMode head_mode = ad::BatchNormMode::inference;
    /// Collects batch statistics of projection-head normalization in training mode.
    std::vector<NormStatsUpdate>* stats = nullptr;
};

struct GraphFullOutput {
    ad::Var pred;
    ad::Var z_rgb;
    ad::Var z_thermal;
    std::vector<ad::Var> rgb_pyramid;
    std::vector<ad::Var> thermal_pyramid;
};

std::vector<ad::Var> encode(ForwardContext& ctx, Encoder which, ad::Var img);
std::vector<ad::Var> fuse_max(ad::Graph& g, const std::vector<ad::Var>& a, const std::vector<ad::Var>& b);
ad::Var decode(ForwardContext& ctx, const std::vector<ad::Var>& skips);
ad::Var project(ForwardContext& ctx, Head which, ad::Var bottleneck);
GraphFullOutput forward_full(ForwardContext& ctx, ad::Var hr_rgb, ad::Var lr_thermal);
ad::Var forward_single(ForwardContext& ctx, Encoder which, ad::Var img);

/// Folds batch statistics into running buffers (momentum-weighted).
void apply_norm_stats(Parameters& params, const std::vector<NormStatsUpdate>& updates, double momentum = 0.1);

} // namespace corefusion
