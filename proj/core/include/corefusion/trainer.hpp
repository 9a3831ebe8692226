#pragma once

#include "corefusion/data.hpp"
#include "corefusion/losses.hpp"
#include "corefusion/metrics.hpp"
#include "corefusion/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace corefusion {

struct TrainConfig {
    double learning_rate = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    int batch_size = 8;
    int max_epochs = 100;
    /// Optional hard cap on optimizer steps across all epochs.
    std::optional<int> max_steps;
    std::uint64_t seed = 0;
    LossWeights loss_weights;
    int eval_every = 1;
    /// Probability that a step trains the thermal-only path.
    double modality_dropout = 0.0;

    void validate() const;
};

struct EpochRecord {
    int epoch = 0;
    double train_ssim = 0.0;
    double train_psnr = 0.0;
    /// NaN on epochs without a validation pass.
    double val_ssim = 0.0;
    double val_psnr = 0.0;
    LossBreakdown loss;
};

/// Append-only, strictly increasing epochs.
class TrainLog {
public:
    void append(const EpochRecord& record);
    const std::vector<EpochRecord>& records() const noexcept { return records_; }
    std::size_t size() const noexcept { return records_.size(); }

private:
    std::vector<EpochRecord> records_;
};

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    long step = 0;
};

/// Bias-corrected Adam update in place. Throws ErrorCode::non_finite naming
/// the first parameter with a non-finite gradient, before touching any state.
void adam_step(Parameters& params, const Gradients& grads, AdamState& state, const TrainConfig& config);

struct TrainResult {
    Parameters final_params;
    Parameters best_params;
    int best_epoch = 0;
    double best_val_ssim = 0.0;
    double best_val_psnr = 0.0;
    TrainLog log;
    /// Full-batch training MSE (normalized domain) before the first and after the last step.
    double initial_train_mse = 0.0;
    double final_train_mse = 0.0;
};

struct TrainOptions {
    /// When set, `last.ckpt` is written at every evaluation and `best.ckpt` on improvement.
    std::filesystem::path checkpoint_dir;
    std::function<void(const EpochRecord&)> on_epoch;
};

TrainResult train(const ModelConfig& model, const TrainConfig& config, const DatasetManifest& manifest,
                  const TrainOptions& options = {});
TrainResult train_pairs(const ModelConfig& model, const TrainConfig& config, std::span<const SamplePair> train_set,
                        std::span<const SamplePair> val_set, const TrainOptions& options = {});

/// Mean squared error of full-path predictions against normalized targets.
double dataset_mse(const Parameters& params, std::span<const SamplePair> pairs);

void write_train_log_csv(const std::filesystem::path& path, const TrainLog& log);

// ---------------------------------------------------------------------------
// Contrastive-weight sweep

struct PathMetrics {
    double train_ssim = 0.0;
    double train_psnr = 0.0;
    double val_ssim = 0.0;
    double val_psnr = 0.0;
};

struct SweepRow {
    double beta = 0.0;
    int best_epoch = 0;
    double best_val_ssim = 0.0;
    double best_val_psnr = 0.0;
    PathMetrics full;
    PathMetrics thermal_only;
    PathMetrics rgb_only;
    TrainLog log;

    const PathMetrics& path(InferencePath p) const;
};

inline const std::vector<double>& default_betas()
{
    static const std::vector<double> betas{0.0, 0.001, 0.01, 0.1, 1.0};
    return betas;
}

struct SweepOptions {
    /// Per-beta checkpoints go to <dir>/beta_<value>/ when set.
    std::filesystem::path checkpoint_dir;
    std::function<void(const SweepRow&)> on_row;
};

/// One independent training per beta from the same seed, each evaluated on
/// all three inference paths with its best checkpoint.
std::vector<SweepRow> sweep_beta(const ModelConfig& model, const TrainConfig& base, std::span<const double> betas,
                                 const DatasetManifest& manifest, const SweepOptions& options = {});

/// Header `row,beta,path,best_epoch,train_ssim,train_psnr,val_ssim,val_psnr`;
/// three `result` rows per beta then one `summary` row for the beta with the
/// best full-path validation SSIM.
void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);
/// Long format `beta,epoch,split,metric,value` for plotting training curves.
void write_curves_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);

std::string format_beta(double beta);

} // namespace corefusion
