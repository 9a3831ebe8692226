#include "corefusion/metrics.hpp"

#include "corefusion/error.hpp"
#include "corefusion/losses.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace corefusion {

QuantizedImage quantize(const ImageTensor& img)
{
    QuantizedImage q{img.channels(), img.height(), img.width(), {}};
    q.values.reserve(img.size());
    for (double v : img.values()) {
        const double unit = std::clamp((v + 1.0) / 2.0, 0.0, 1.0);
        q.values.push_back(static_cast<std::uint8_t>(std::round(unit * 255.0)));
    }
    return q;
}

ImageTensor dequantize(const QuantizedImage& img)
{
    std::vector<double> v;
    v.reserve(img.values.size());
    for (std::uint8_t x : img.values)
        v.push_back(double(x) / 255.0 * 2.0 - 1.0);
    return ImageTensor(img.channels, img.height, img.width, std::move(v));
}

ImageTensor lift(const QuantizedImage& img)
{
    std::vector<double> v(img.values.begin(), img.values.end());
    return ImageTensor(img.channels, img.height, img.width, std::move(v));
}

double eval_ssim(const QuantizedImage& a, const QuantizedImage& b)
{
    return ssim(lift(a), lift(b), SsimConstants::for_range(255.0), SsimMode::windowed);
}

double eval_psnr(const QuantizedImage& a, const QuantizedImage& b)
{
    return psnr(lift(a), lift(b), 255.0);
}

const char* to_string(InferencePath path) noexcept
{
    switch (path) {
    case InferencePath::full: return "full";
    case InferencePath::thermal_only: return "thermal_only";
    case InferencePath::rgb_only: return "rgb_only";
    }
    return "unknown";
}

InferencePath parse_inference_path(const std::string& text)
{
    if (text == "full")
        return InferencePath::full;
    if (text == "thermal_only" || text == "thermal-only")
        return InferencePath::thermal_only;
    if (text == "rgb_only" || text == "rgb-only")
        return InferencePath::rgb_only;
    fail(ErrorCode::config, "unknown inference path '" + text + "'");
}

ModalityMask inputs_for(InferencePath path)
{
    switch (path) {
    case InferencePath::full: return ModalityMask::all();
    case InferencePath::thermal_only: return only(Modality::lr_thermal).with(Modality::hr_thermal);
    case InferencePath::rgb_only: return only(Modality::rgb).with(Modality::hr_thermal);
    }
    return ModalityMask::all();
}

ImageTensor predict(const Parameters& params, const SamplePair& pair, InferencePath path)
{
    switch (path) {
    case InferencePath::full: return forward_full(params, pair.hr_rgb, pair.lr_thermal).pred;
    case InferencePath::thermal_only: return forward_single(params, Encoder::thermal, pair.lr_thermal);
    case InferencePath::rgb_only: return forward_single(params, Encoder::rgb, pair.hr_rgb);
    }
    fail(ErrorCode::precondition, "unknown inference path");
}

SampleMetrics score(const ImageTensor& pred, const ImageTensor& hr_thermal, const std::string& scene_id)
{
    const QuantizedImage qp = quantize(pred);
    const QuantizedImage qt = quantize(normalize(hr_thermal));
    return {scene_id, eval_ssim(qp, qt), eval_psnr(qp, qt)};
}

MetricsReport evaluate_pairs(const Parameters& params, std::span<const SamplePair> pairs, InferencePath path)
{
    MetricsReport r;
    r.path = path;
    for (const auto& pair : pairs)
        r.per_sample.push_back(score(predict(params, pair, path), pair.hr_thermal, pair.scene_id));
    r.n_samples = r.per_sample.size();
    if (r.n_samples > 0) {
        double s = 0.0;
        double p = 0.0;
        for (const auto& m : r.per_sample) {
            s += m.ssim;
            p += m.psnr;
        }
        r.mean_ssim = s / double(r.n_samples);
        r.mean_psnr_db = p / double(r.n_samples);
    }
    return r;
}

MetricsReport evaluate(const Parameters& params, const DatasetManifest& manifest, Split split, InferencePath path)
{
    require(params.config.spatial_divisor() <= manifest.height && manifest.height % params.config.spatial_divisor() == 0 &&
                manifest.width % params.config.spatial_divisor() == 0,
            ErrorCode::dimension_mismatch, "dataset image size is incompatible with the model depth");
    const auto pairs = load_split(manifest, split, inputs_for(path));
    return evaluate_pairs(params, pairs, path);
}

namespace {

std::string fmt(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

void write_reports_csv(const std::filesystem::path& path, std::span<const MetricsReport> reports)
{
    std::ofstream out(path);
    require(bool(out), ErrorCode::io, "cannot write " + path.string());
    out << "scene_id,path,ssim,psnr\n";
    for (const auto& r : reports) {
        for (const auto& m : r.per_sample)
            out << m.scene_id << ',' << to_string(r.path) << ',' << fmt(m.ssim) << ',' << fmt(m.psnr) << '\n';
        out << "summary," << to_string(r.path) << ',' << fmt(r.mean_ssim) << ',' << fmt(r.mean_psnr_db) << '\n';
    }
}

void write_reports_json(const std::filesystem::path& path, std::span<const MetricsReport> reports)
{
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : reports) {
        nlohmann::json samples = nlohmann::json::array();
        for (const auto& m : r.per_sample)
            samples.push_back({{"scene_id", m.scene_id}, {"ssim", m.ssim}, {"psnr", m.psnr}});
        j.push_back({{"path", to_string(r.path)},
                     {"n_samples", r.n_samples},
                     {"mean_ssim", r.mean_ssim},
                     {"mean_psnr_db", r.mean_psnr_db},
                     {"per_sample", samples}});
    }
    std::ofstream out(path);
    require(bool(out), ErrorCode::io, "cannot write " + path.string());
    out << j.dump(2) << '\n';
}

} // namespace corefusion
