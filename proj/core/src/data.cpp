#include "corefusion/data.hpp"

#include "corefusion/error.hpp"
#include "kernels.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

namespace corefusion {

namespace fs = std::filesystem;

const char* to_string(Split split) noexcept
{
    return split == Split::train ? "train" : "val";
}

Split parse_split(const std::string& text)
{
    if (text == "train")
        return Split::train;
    if (text == "val")
        return Split::val;
    fail(ErrorCode::config, "unknown split '" + text + "' (expected train or val)");
}

void validate_pair(const SamplePair& pair)
{
    const ImageTensor& hr = pair.hr_thermal;
    require(hr.channels() == 1, ErrorCode::shape_mismatch, "hr_thermal must have one channel");
    require(hr.height() % kScaleFactor == 0 && hr.width() % kScaleFactor == 0, ErrorCode::precondition,
            "HR dimensions must be divisible by 8, got " + hr.shape_string());
    require(pair.hr_rgb.channels() == 3 && pair.hr_rgb.height() == hr.height() && pair.hr_rgb.width() == hr.width(),
            ErrorCode::dimension_mismatch, "hr_rgb shape " + pair.hr_rgb.shape_string() + " does not match hr_thermal");
    require(pair.lr_thermal.channels() == 1 && pair.lr_thermal.height() == hr.height() / kScaleFactor &&
                pair.lr_thermal.width() == hr.width() / kScaleFactor,
            ErrorCode::dimension_mismatch, "lr_thermal shape " + pair.lr_thermal.shape_string() + " is not HR/8");
}

void validate_manifest(const DatasetManifest& m)
{
    std::set<std::string> seen;
    for (const auto* split : {&m.train, &m.val})
        for (const auto& id : *split)
            require(seen.insert(id).second, ErrorCode::malformed_file, "scene '" + id + "' appears in more than one split");
    require(seen.size() == m.scenes.size(), ErrorCode::malformed_file, "split assignment does not cover every scene");
    for (const auto& id : m.scenes)
        require(seen.count(id) == 1, ErrorCode::malformed_file, "scene '" + id + "' has no split");
}

// ---------------------------------------------------------------------------

ImageTensor downsample_x8(const ImageTensor& img)
{
    require(img.height() % kScaleFactor == 0 && img.width() % kScaleFactor == 0, ErrorCode::precondition,
            "downsample_x8: dimensions " + img.shape_string() + " not divisible by 8");
    ImageTensor out(img.channels(), img.height() / kScaleFactor, img.width() / kScaleFactor);
    for (int c = 0; c < img.channels(); ++c)
        kernels::area_downsample(img.plane(c).data(), img.height(), img.width(), kScaleFactor, out.plane(c).data());
    return out;
}

ImageTensor upsample_bilinear(const ImageTensor& img, int out_h, int out_w)
{
    require(out_h > 0 && out_w > 0, ErrorCode::precondition, "upsample_bilinear: zero-sized target");
    require(out_h >= img.height() && out_w >= img.width(), ErrorCode::precondition,
            "upsample_bilinear: target smaller than input");
    ImageTensor out(img.channels(), out_h, out_w);
    for (int c = 0; c < img.channels(); ++c)
        kernels::bilinear_forward(img.plane(c).data(), img.height(), img.width(), out.plane(c).data(), out_h, out_w);
    return out;
}

ImageTensor normalize(const ImageTensor& img)
{
    ImageTensor out = img;
    for (double& v : out.values())
        v = 2.0 * v - 1.0;
    return out;
}

ImageTensor denormalize(const ImageTensor& img)
{
    ImageTensor out = img;
    for (double& v : out.values())
        v = (v + 1.0) / 2.0;
    return out;
}

ImageTensor flip(const ImageTensor& img, bool flip_h, bool flip_v)
{
    if (!flip_h && !flip_v)
        return img;
    ImageTensor out(img.channels(), img.height(), img.width());
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x)
                out.at(c, y, x) = img.at(c, flip_v ? img.height() - 1 - y : y, flip_h ? img.width() - 1 - x : x);
    return out;
}

SamplePair augment_flip(const SamplePair& pair, bool flip_h, bool flip_v)
{
    SamplePair out;
    out.scene_id = pair.scene_id;
    if (!pair.hr_rgb.empty())
        out.hr_rgb = flip(pair.hr_rgb, flip_h, flip_v);
    if (!pair.lr_thermal.empty())
        out.lr_thermal = flip(pair.lr_thermal, flip_h, flip_v);
    if (!pair.hr_thermal.empty())
        out.hr_thermal = flip(pair.hr_thermal, flip_h, flip_v);
    return out;
}

// ---------------------------------------------------------------------------

namespace {

double snap(double v, double levels)
{
    return std::round(std::clamp(v, 0.0, 1.0) * levels) / levels;
}

} // namespace

std::string scene_id_for(int index)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%04d", index);
    return buf;
}

SamplePair synthesize_scene(std::uint64_t seed, int index, int height, int width)
{
    require(height > 0 && width > 0 && height % kScaleFactor == 0 && width % kScaleFactor == 0,
            ErrorCode::precondition, "scene dimensions must be positive multiples of 8");
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(index)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double scale = double(std::min(height, width));

    struct Region {
        double cx, cy, weight;
        double temperature;
        double color[3];
    };
    const int n_regions = 3 + int(unit(rng) * 4.0);
    std::vector<Region> regions(static_cast<std::size_t>(n_regions));
    // Temperatures and brightness are spread over evenly spaced levels, in
    // independent orders, so neighbouring regions always differ in both.
    std::vector<int> t_rank(regions.size());
    std::vector<int> l_rank(regions.size());
    std::iota(t_rank.begin(), t_rank.end(), 0);
    std::iota(l_rank.begin(), l_rank.end(), 0);
    std::shuffle(t_rank.begin(), t_rank.end(), rng);
    std::shuffle(l_rank.begin(), l_rank.end(), rng);
    for (std::size_t i = 0; i < regions.size(); ++i) {
        Region& r = regions[i];
        r.cx = unit(rng) * width;
        r.cy = unit(rng) * height;
        r.weight = 0.7 + 0.6 * unit(rng);
        r.temperature = 0.05 + 0.6 * (t_rank[i] + 0.3 * unit(rng)) / double(n_regions);
        const double luma = 0.15 + 0.7 * (l_rank[i] + 0.3 * unit(rng)) / double(n_regions);
        for (double& ch : r.color)
            ch = std::clamp(luma + 0.25 * (unit(rng) - 0.5), 0.0, 1.0);
    }

    struct Blob {
        double cx, cy, sigma, amplitude;
    };
    const int n_blobs = 1 + int(unit(rng) * 2.0);
    std::vector<Blob> blobs(static_cast<std::size_t>(n_blobs));
    for (auto& b : blobs) {
        b.cx = unit(rng) * width;
        b.cy = unit(rng) * height;
        b.sigma = (0.08 + 0.08 * unit(rng)) * scale;
        b.amplitude = 0.15 + 0.2 * unit(rng);
    }

    const double tex_freq_x = (0.6 + 0.8 * unit(rng));
    const double tex_freq_y = (0.6 + 0.8 * unit(rng));
    const double tex_phase = unit(rng) * 6.283185307179586;
    std::normal_distribution<double> grain(0.0, 0.015);

    SamplePair pair;
    pair.scene_id = scene_id_for(index);
    pair.hr_rgb = ImageTensor(3, height, width);
    pair.hr_thermal = ImageTensor(1, height, width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double px = x + 0.5;
            const double py = y + 0.5;
            std::size_t best = 0;
            double best_d = 1e300;
            for (std::size_t i = 0; i < regions.size(); ++i) {
                const double dx = px - regions[i].cx;
                const double dy = py - regions[i].cy;
                const double d = (dx * dx + dy * dy) * regions[i].weight;
                if (d < best_d) {
                    best_d = d;
                    best = i;
                }
            }
            const Region& r = regions[best];

            double t = r.temperature;
            for (const auto& b : blobs) {
                const double dx = px - b.cx;
                const double dy = py - b.cy;
                t += b.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
            }
            pair.hr_thermal.at(0, y, x) = snap(t, 65535.0);

            const double texture = 0.04 * std::sin(tex_freq_x * px + tex_phase) * std::sin(tex_freq_y * py);
            for (int c = 0; c < 3; ++c)
                pair.hr_rgb.at(c, y, x) = snap(r.color[c] + texture + grain(rng), 255.0);
        }
    }
    pair.lr_thermal = downsample_x8(pair.hr_thermal);
    return pair;
}

std::vector<SamplePair> synthesize_pairs(std::uint64_t seed, int count, int height, int width)
{
    require(count >= 1, ErrorCode::precondition, "scene count must be at least 1");
    std::vector<SamplePair> pairs;
    pairs.reserve(std::size_t(count));
    for (int i = 0; i < count; ++i)
        pairs.push_back(synthesize_scene(seed, i, height, width));
    return pairs;
}

DatasetManifest generate_synthetic_dataset(const fs::path& root, std::uint64_t seed, int count, int height,
                                           int width, const GenerateOptions& options)
{
    require(count >= 1, ErrorCode::precondition, "scene count must be at least 1");
    require(height > 0 && width > 0 && height % kScaleFactor == 0 && width % kScaleFactor == 0,
            ErrorCode::precondition,
            "image size " + std::to_string(height) + "x" + std::to_string(width) + " is not a multiple of 8");
    require(options.val_fraction >= 0.0 && options.val_fraction < 1.0, ErrorCode::precondition,
            "val_fraction must be in [0, 1)");

    DatasetManifest m;
    m.root = root;
    m.seed = seed;
    m.height = height;
    m.width = width;
    int n_val = int(std::lround(count * options.val_fraction));
    if (count >= 2 && options.val_fraction > 0.0)
        n_val = std::clamp(n_val, 1, count - 1);
    const int n_train = count - n_val;

    fs::create_directories(root);
    for (int i = 0; i < count; ++i) {
        SamplePair pair = synthesize_scene(seed, i, height, width);
        save_pair(pair, root);
        m.scenes.push_back(pair.scene_id);
        (i < n_train ? m.train : m.val).push_back(pair.scene_id);
    }
    save_manifest(m);
    return m;
}

// ---------------------------------------------------------------------------

void save_pair(const SamplePair& pair, const fs::path& root)
{
    validate_pair(pair);
    const fs::path dir = root / pair.scene_id;
    std::error_code ec;
    fs::create_directories(dir, ec);
    require(!ec, ErrorCode::io, "cannot create " + dir.string() + ": " + ec.message());
    write_png(dir / "rgb.png", pair.hr_rgb, 8);
    write_png(dir / "lr_thermal.png", pair.lr_thermal, 16);
    write_png(dir / "hr_thermal.png", pair.hr_thermal, 16);
}

SamplePair load_pair(const DatasetManifest& manifest, const std::string& scene_id, ModalityMask mask)
{
    require(std::find(manifest.scenes.begin(), manifest.scenes.end(), scene_id) != manifest.scenes.end(),
            ErrorCode::missing_file, "scene '" + scene_id + "' is not in the manifest");
    const fs::path dir = manifest.root / scene_id;
    const int h = manifest.height;
    const int w = manifest.width;

    auto check = [&](const ImageTensor& img, int c, int eh, int ew, const char* name) {
        require(img.channels() == c && img.height() == eh && img.width() == ew, ErrorCode::dimension_mismatch,
                std::string(name) + " of " + scene_id + " has shape " + img.shape_string() + ", manifest expects (" +
                    std::to_string(c) + ", " + std::to_string(eh) + ", " + std::to_string(ew) + ")");
    };

    SamplePair pair;
    pair.scene_id = scene_id;
    if (mask.has(Modality::rgb)) {
        pair.hr_rgb = read_png(dir / "rgb.png");
        check(pair.hr_rgb, 3, h, w, "rgb.png");
    }
    if (mask.has(Modality::lr_thermal)) {
        pair.lr_thermal = read_png(dir / "lr_thermal.png");
        check(pair.lr_thermal, 1, h / kScaleFactor, w / kScaleFactor, "lr_thermal.png");
    }
    if (mask.has(Modality::hr_thermal)) {
        pair.hr_thermal = read_png(dir / "hr_thermal.png");
        check(pair.hr_thermal, 1, h, w, "hr_thermal.png");
    }
    return pair;
}

std::vector<SamplePair> load_split(const DatasetManifest& manifest, Split split, ModalityMask mask)
{
    std::vector<SamplePair> out;
    for (const auto& id : manifest.split(split))
        out.push_back(load_pair(manifest, id, mask));
    return out;
}

void save_manifest(const DatasetManifest& m)
{
    validate_manifest(m);
    nlohmann::json j;
    j["format_version"] = 1;
    j["seed"] = m.seed;
    j["dims"] = {{"height", m.height}, {"width", m.width}};
    j["scenes"] = m.scenes;
    j["splits"] = {{"train", m.train}, {"val", m.val}};
    std::ofstream out(m.root / "manifest.json");
    require(bool(out), ErrorCode::io, "cannot write " + (m.root / "manifest.json").string());
    out << j.dump(2) << '\n';
}

DatasetManifest load_manifest(const fs::path& root)
{
    const fs::path path = root / "manifest.json";
    require(fs::exists(path), ErrorCode::missing_file, "missing manifest " + path.string());
    std::ifstream in(path);
    nlohmann::json j;
    try {
        in >> j;
        DatasetManifest m;
        m.root = root;
        m.seed = j.at("seed").get<std::uint64_t>();
        m.height = j.at("dims").at("height").get<int>();
        m.width = j.at("dims").at("width").get<int>();
        m.scenes = j.at("scenes").get<std::vector<std::string>>();
        m.train = j.at("splits").at("train").get<std::vector<std::string>>();
        m.val = j.at("splits").at("val").get<std::vector<std::string>>();
        require(m.height > 0 && m.width > 0 && m.height % kScaleFactor == 0 && m.width % kScaleFactor == 0,
                ErrorCode::malformed_file, "manifest dimensions must be positive multiples of 8");
        validate_manifest(m);
        return m;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::malformed_file, "malformed manifest " + path.string() + ": " + e.what());
    }
}

} // namespace corefusion
