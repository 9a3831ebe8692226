#pragma once

// Evaluation metrics computed the way results are reported: predictions and
// ground truth are first converted from the [-1, 1] float domain to 8-bit
// integers, and SSIM / PSNR are measured on those integer images.

#include "corefusion/data.hpp"
#include "corefusion/model.hpp"
#include "corefusion/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace corefusion {

struct QuantizedImage {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> values;

    friend bool operator==(const QuantizedImage&, const QuantizedImage&) = default;
};

/// Denormalize to [0,1], clamp, scale by 255, round half away from zero.
QuantizedImage quantize(const ImageTensor& img);
/// Back to the [-1, 1] domain.
ImageTensor dequantize(const QuantizedImage& img);
/// Integer values lifted to reals in [0, 255].
ImageTensor lift(const QuantizedImage& img);

double eval_ssim(const QuantizedImage& a, const QuantizedImage& b);
double eval_psnr(const QuantizedImage& a, const QuantizedImage& b);

enum class InferencePath { full, thermal_only, rgb_only };

const char* to_string(InferencePath path) noexcept;
/// Accepts both "thermal_only" and the CLI spelling "thermal-only".
InferencePath parse_inference_path(const std::string& text);
/// Images an inference path reads (ground truth included).
ModalityMask inputs_for(InferencePath path);

struct SampleMetrics {
    std::string scene_id;
    double ssim = 0.0;
    double psnr = 0.0;
};

struct MetricsReport {
    InferencePath path = InferencePath::full;
    std::size_t n_samples = 0;
    double mean_ssim = 0.0;
    double mean_psnr_db = 0.0;
    std::vector<SampleMetrics> per_sample;
};

/// Prediction in [-1, 1] for one sample along the chosen path.
ImageTensor predict(const Parameters& params, const SamplePair& pair, InferencePath path);

/// Metrics of one prediction against the [0,1] ground truth, both quantized.
SampleMetrics score(const ImageTensor& pred, const ImageTensor& hr_thermal, const std::string& scene_id);

MetricsReport evaluate_pairs(const Parameters& params, std::span<const SamplePair> pairs, InferencePath path);
/// Loads only the images the path needs, so the other modality is never read.
MetricsReport evaluate(const Parameters& params, const DatasetManifest& manifest, Split split, InferencePath path);

/// CSV: header `scene_id,path,ssim,psnr`, one row per sample per report, then a
/// `summary` row per report carrying the means.
void write_reports_csv(const std::filesystem::path& path, std::span<const MetricsReport> reports);
void write_reports_json(const std::filesystem::path& path, std::span<const MetricsReport> reports);

} // namespace corefusion
