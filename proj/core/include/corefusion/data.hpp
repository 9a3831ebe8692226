#pragma once

#include "corefusion/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace corefusion {

inline constexpr int kScaleFactor = 8;

/// One registered training triplet. hr_rgb is (3, H, W), lr_thermal (1, H/8, W/8),
/// hr_thermal (1, H, W); all values nominally in [0, 1].
struct SamplePair {
    ImageTensor hr_rgb;
    ImageTensor lr_thermal;
    ImageTensor hr_thermal;
    std::string scene_id;
};

/// Throws if the pair violates the x8 geometry contract.
void validate_pair(const SamplePair& pair);

enum class Split { train, val };

const char* to_string(Split split) noexcept;
Split parse_split(const std::string& text);

struct DatasetManifest {
    std::filesystem::path root;
    std::uint64_t seed = 0;
    int height = 0;
    int width = 0;
    std::vector<std::string> scenes;
    std::vector<std::string> train;
    std::vector<std::string> val;

    const std::vector<std::string>& split(Split s) const { return s == Split::train ? train : val; }
};

/// Throws unless every scene is in exactly one split.
void validate_manifest(const DatasetManifest& manifest);

// ---------------------------------------------------------------------------
// Image operations

ImageTensor downsample_x8(const ImageTensor& img);
ImageTensor upsample_bilinear(const ImageTensor& img, int out_h, int out_w);

/// x -> 2x - 1, no clamping.
ImageTensor normalize(const ImageTensor& img);
/// x -> (x + 1) / 2, no clamping.
ImageTensor denormalize(const ImageTensor& img);

ImageTensor flip(const ImageTensor& img, bool flip_h, bool flip_v);
/// Applies the same flip to all three images so registration is preserved.
SamplePair augment_flip(const SamplePair& pair, bool flip_h, bool flip_v);

// ---------------------------------------------------------------------------
// Synthetic scenes

/// Deterministic in (seed, index). Thermal carries smooth regions plus hot
/// blobs; RGB shares the region boundaries and adds colour and texture.
/// RGB values lie on the 8-bit grid and hr_thermal on the 16-bit grid so that
/// both survive PNG storage exactly.
SamplePair synthesize_scene(std::uint64_t seed, int index, int height, int width);

std::vector<SamplePair> synthesize_pairs(std::uint64_t seed, int count, int height, int width);

std::string scene_id_for(int index);

struct GenerateOptions {
    double val_fraction = 0.2;
};

/// Synthesizes `count` scenes, writes them under `root` and returns the manifest.
DatasetManifest generate_synthetic_dataset(const std::filesystem::path& root, std::uint64_t seed, int count,
                                           int height, int width, const GenerateOptions& options = {});

// ---------------------------------------------------------------------------
// On-disk format: <root>/manifest.json and <root>/<scene>/{rgb,lr_thermal,hr_thermal}.png

enum class Modality : unsigned { rgb = 1u, lr_thermal = 2u, hr_thermal = 4u };

struct ModalityMask {
    unsigned bits = 7u;

    static ModalityMask all() { return {7u}; }
    ModalityMask with(Modality m) const { return {bits | unsigned(m)}; }
    bool has(Modality m) const { return (bits & unsigned(m)) != 0; }
};

inline ModalityMask only(Modality m) { return {unsigned(m)}; }

void save_pair(const SamplePair& pair, const std::filesystem::path& root);
/// Loads the requested images only; the others stay empty.
SamplePair load_pair(const DatasetManifest& manifest, const std::string& scene_id,
                     ModalityMask mask = ModalityMask::all());
std::vector<SamplePair> load_split(const DatasetManifest& manifest, Split split,
                                   ModalityMask mask = ModalityMask::all());

void save_manifest(const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& root);

// PNG helpers; values are scaled to the full integer range of the bit depth.
void write_png(const std::filesystem::path& path, const ImageTensor& img, int bit_depth);
ImageTensor read_png(const std::filesystem::path& path);

} // namespace corefusion
