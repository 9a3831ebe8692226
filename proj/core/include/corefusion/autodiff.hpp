#pragma once

// Tape-based reverse-mode differentiation over batched (n, c, h, w) tensors.
//
// Nodes are appended in evaluation order, so a reverse sweep over the tape is
// a valid topological order for the backward pass. A node requires a gradient
// when it is a variable or any of its inputs requires one; backward closures
// only run for such nodes.

#include "corefusion/tensor.hpp"

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <vector>

namespace corefusion::ad {

struct Var {
    int id = -1;
    bool valid() const noexcept { return id >= 0; }
};

class Graph {
public:
    using Backward = std::function<void(Graph&, const Tensor& grad_out)>;

    Var constant(Tensor value);
    /// Constant that refers to `value` without copying it; `value` must outlive the graph.
    Var reference(const Tensor& value);
    Var variable(Tensor value);
    Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
    Var record(Tensor value, const std::vector<Var>& inputs, Backward backward);

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;
    /// nullptr when no gradient reached the node.
    const Tensor* grad(Var v) const;
    /// Zero-initialised on first access.
    Tensor& grad_buffer(Var v);

    /// Seeds d(root)/d(root) = 1; root must hold a single element.
    void backward(Var root);

    std::size_t size() const noexcept { return nodes_.size(); }

    // Kink bookkeeping for finite-difference checks: piecewise ops fold their
    // branch decisions into a signature so callers can detect when a
    // perturbation crosses a ReLU, max or clamp boundary.
    void track_decisions(bool on) noexcept { track_decisions_ = on; }
    bool tracking_decisions() const noexcept { return track_decisions_; }
    void note_decision(std::uint64_t bits) noexcept;
    std::uint64_t decision_signature() const noexcept { return signature_; }

private:
    struct Node {
        Tensor value;
        const Tensor* external = nullptr;
        Tensor grad;
        bool has_grad = false;
        bool requires_grad = false;
        Backward backward;
    };

    Node& node(Var v);
    const Node& node(Var v) const;

    std::vector<Node> nodes_;
    bool track_decisions_ = false;
    std::uint64_t signature_ = 1469598103934665603ull;
};

// Convolution with square kernel; weight is (c_out, c_in, k, k), bias (1, c_out, 1, 1) or invalid.
Var conv2d(Graph& g, Var x, Var weight, Var bias, int stride, int pad);

/// Group normalization with per-sample statistics; gamma/beta (1, c, 1, 1) or invalid for no affine.
Var group_norm(Graph& g, Var x, int groups, Var gamma, Var beta, double eps = 1e-5);

enum class BatchNormMode { training, inference };

struct BatchNormStats {
    std::vector<double> mean;
    std::vector<double> unbiased_var;
};

/// Batch normalization over the batch axis for (n, f, 1, 1) inputs.
/// Inference mode reads running_mean / running_var; training mode uses batch
/// statistics and, when `stats` is non-null, reports them for running updates.
Var batch_norm(Graph& g, Var x, Var gamma, Var beta, BatchNormMode mode,
               const Tensor* running_mean, const Tensor* running_var,
               BatchNormStats* stats, double eps = 1e-5);

Var relu(Graph& g, Var x);
Var tanh(Graph& g, Var x);
Var sigmoid(Graph& g, Var x);

Var add(Graph& g, Var a, Var b);
/// Element-wise maximum; on exact ties the subgradient goes to `a`.
Var maximum(Graph& g, Var a, Var b);
Var concat_channels(Graph& g, Var a, Var b);

Var upsample_nearest2x(Graph& g, Var x);
Var upsample_bilinear(Graph& g, Var x, int out_h, int out_w);
Var global_avg_pool(Graph& g, Var x);

/// x (n, in, 1, 1), weight (out, in, 1, 1), bias (1, out, 1, 1) or invalid.
Var linear(Graph& g, Var x, Var weight, Var bias);

/// Sum of scalar nodes with fixed coefficients.
Var weighted_sum(Graph& g, const std::vector<std::pair<double, Var>>& terms);

} // namespace corefusion::ad
