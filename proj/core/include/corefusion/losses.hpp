#pragma once

// Training objective: MSE + w_psnr * (1 - PSNR/40) + w_ssim * (1 - SSIM) + beta * contrastive.
//
// Predictions and targets live in the normalized [-1, 1] domain. MSE is taken
// there directly; the PSNR and SSIM terms first map both images to [0, 1]
// (data range 1). Every loss has an analytic gradient, exposed both as
// value/gradient pairs and as differentiable graph nodes.

#include "corefusion/autodiff.hpp"
#include "corefusion/model.hpp"
#include "corefusion/tensor.hpp"

#include <optional>
#include <span>
#include <vector>

namespace corefusion {

struct LossWeights {
    double w_mse = 1.0;
    double w_psnr = 0.1;
    double w_ssim = 0.1;
    double beta = 0.0;

    void validate() const;
};

struct SsimConstants {
    double c1 = 0.0;
    double c2 = 0.0;
    double data_range = 1.0;

    /// C1 = (0.01 L)^2, C2 = (0.03 L)^2.
    static SsimConstants for_range(double data_range);
};

enum class SsimMode { global, windowed };

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kPsnrCapDb = 100.0;
inline constexpr double kPsnrScale = 40.0;

struct LossBreakdown {
    double mse = 0.0;
    double psnr_loss = 0.0;
    double ssim_loss = 0.0;
    double contrastive = 0.0;
    double total = 0.0;
};

/// Value plus gradient with respect to the first argument.
struct ImageValueGrad {
    double value = 0.0;
    ImageTensor grad;
};

// --- Pixel losses -----------------------------------------------------------

double mse(const ImageTensor& pred, const ImageTensor& target);
ImageValueGrad mse_grad(const ImageTensor& pred, const ImageTensor& target);

/// 10 log10(max^2 / mse); mse is floored so that identical images give cap_db.
double psnr(const ImageTensor& pred, const ImageTensor& target, double max_value, double cap_db = kPsnrCapDb);
double psnr_from_mse(double mse, double max_value, double cap_db = kPsnrCapDb);

/// Mean over the batch of (1 - PSNR/40), PSNR on [0,1]-mapped images with MAX = 1.
double psnr_loss(std::span<const ImageTensor> pred, std::span<const ImageTensor> target, double cap_db = kPsnrCapDb);

/// Channel-averaged SSIM. Windowed mode averages over all valid 11x11
/// Gaussian (sigma 1.5) windows; global mode uses image-wide statistics.
double ssim(const ImageTensor& x, const ImageTensor& y, const SsimConstants& constants, SsimMode mode);
ImageValueGrad ssim_grad(const ImageTensor& x, const ImageTensor& y, const SsimConstants& constants, SsimMode mode);

/// Mean over the batch of (1 - SSIM) on [0,1]-mapped images.
double ssim_loss(std::span<const ImageTensor> pred, std::span<const ImageTensor> target,
                 SsimMode mode = SsimMode::windowed);

// --- Contrastive ------------------------------------------------------------

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// -log( exp(sim(v_i, v_j)) / sum_{k != i} exp(sim(v_i, v_k)) ), sim = cosine / temperature.
/// Indices are zero-based; the denominator includes k = j.
double contrastive_pair_term(std::size_t i, std::size_t j, std::span<const Projection> views,
                             double temperature = 1.0);

/// Views are interleaved (rgb_0, thermal_0, rgb_1, thermal_1, ...); returns
/// (1/n) sum_k [ l(2k, 2k+1) + l(2k+1, 2k) ].
double contrastive_loss(std::span<const Projection> z_rgb, std::span<const Projection> z_thermal,
                        double temperature = 1.0);

struct ContrastiveValueGrad {
    double value = 0.0;
    std::vector<Projection> grad_rgb;
    std::vector<Projection> grad_thermal;
};

ContrastiveValueGrad contrastive_loss_grad(std::span<const Projection> z_rgb, std::span<const Projection> z_thermal,
                                           double temperature = 1.0);

// --- Combined objective -----------------------------------------------------

struct ProjectionBatch {
    std::vector<Projection> rgb;
    std::vector<Projection> thermal;
};

/// Eq-weighted sum; when projections are absent the contrastive term is 0.
LossBreakdown total_loss(std::span<const ImageTensor> pred, std::span<const ImageTensor> target,
                         const std::optional<ProjectionBatch>& projections, const LossWeights& weights,
                         double temperature = 1.0, SsimMode mode = SsimMode::windowed);

// --- Graph nodes (batched (n, c, h, w) predictions) --------------------------

ad::Var mse_node(ad::Graph& g, ad::Var pred, const Tensor& target);
ad::Var psnr_loss_node(ad::Graph& g, ad::Var pred, const Tensor& target, double cap_db = kPsnrCapDb);
ad::Var ssim_loss_node(ad::Graph& g, ad::Var pred, const Tensor& target, SsimMode mode = SsimMode::windowed);
/// z_rgb and z_thermal are (n, d, 1, 1).
ad::Var contrastive_node(ad::Graph& g, ad::Var z_rgb, ad::Var z_thermal, double temperature = 1.0);

struct GraphLoss {
    ad::Var total;
    LossBreakdown breakdown;
};

/// Builds the weighted objective. The contrastive branch is only recorded
/// when projections are given and beta > 0; otherwise it is reported as 0.
GraphLoss total_loss(ad::Graph& g, ad::Var pred, const Tensor& target, std::optional<std::pair<ad::Var, ad::Var>> z,
                     const LossWeights& weights, double temperature = 1.0, SsimMode mode = SsimMode::windowed);

} // namespace corefusion
