#include "corefusion/data.hpp"
#include "corefusion/error.hpp"

#include "oracles.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <fstream>
#include <numeric>

using namespace corefusion;

namespace {

double mean_of(const ImageTensor& img)
{
    const auto v = img.values();
    return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

std::vector<double> sobel_magnitude(const std::vector<double>& a, int h, int w)
{
    auto px = [&](int y, int x) {
        y = std::clamp(y, 0, h - 1);
        x = std::clamp(x, 0, w - 1);
        return a[std::size_t(y) * w + x];
    };
    std::vector<double> out(a.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double gx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                              (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
            const double gy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                              (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
            out[std::size_t(y) * w + x] = std::hypot(gx, gy);
        }
    return out;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b)
{
    const double n = double(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

bool files_equal(const std::filesystem::path& a, const std::filesystem::path& b)
{
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(fa), {}) == std::string(std::istreambuf_iterator<char>(fb), {});
}

} // namespace

TEST_CASE("downsample_x8 averages 8x8 blocks")
{
    SUBCASE("constant")
    {
        const ImageTensor out = downsample_x8(ImageTensor(1, 16, 16, 0.5));
        CHECK(out.height() == 2);
        CHECK(out.width() == 2);
        for (double v : out.values())
            CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
    }
    SUBCASE("ramp 0..63 over 63")
    {
        ImageTensor img(1, 8, 8);
        for (int i = 0; i < 64; ++i)
            img.values()[std::size_t(i)] = i / 63.0;
        // sum of 0..63 is 2016, so the mean is 2016 / 64 / 63 = 0.5
        CHECK(downsample_x8(img).at(0, 0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    }
    SUBCASE("preserves the global mean")
    {
        std::mt19937_64 rng(3);
        const ImageTensor img = testing::random_image(rng, 2, 32, 24);
        CHECK(mean_of(downsample_x8(img)) == doctest::Approx(mean_of(img)).epsilon(1e-14));
    }
    SUBCASE("rejects sizes that are not multiples of 8")
    {
        CHECK_THROWS_AS(downsample_x8(ImageTensor(1, 12, 16)), Error);
    }
}

TEST_CASE("upsample_bilinear uses align-corners sampling")
{
    ImageTensor row(1, 1, 2, std::vector<double>{0.0, 1.0});
    const ImageTensor out = upsample_bilinear(row, 1, 5);
    const double expected[] = {0.0, 0.25, 0.5, 0.75, 1.0};
    for (int x = 0; x < 5; ++x)
        CHECK(out.at(0, 0, x) == doctest::Approx(expected[x]).epsilon(1e-15));

    std::mt19937_64 rng(5);
    const ImageTensor a = testing::random_image(rng, 1, 6, 6);
    const ImageTensor b = testing::random_image(rng, 1, 6, 6);
    CHECK(upsample_bilinear(a, 6, 6) == a);
    const ImageTensor c(1, 3, 4, 0.25);
    for (double v : upsample_bilinear(c, 24, 32).values())
        CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

    SUBCASE("matches the scalar oracle")
    {
        const ImageTensor up = upsample_bilinear(a, 48, 48);
        const auto ref = oracle::bilinear({a.values().begin(), a.values().end()}, 6, 6, 48, 48);
        for (std::size_t i = 0; i < ref.size(); ++i)
            CHECK(up.values()[i] == doctest::Approx(ref[i]).epsilon(1e-13));
    }
    SUBCASE("is linear")
    {
        ImageTensor mix(1, 6, 6);
        for (std::size_t i = 0; i < mix.size(); ++i)
            mix.values()[i] = 2.5 * a.values()[i] - 0.75 * b.values()[i];
        const ImageTensor ua = upsample_bilinear(a, 17, 23);
        const ImageTensor ub = upsample_bilinear(b, 17, 23);
        const ImageTensor um = upsample_bilinear(mix, 17, 23);
        for (std::size_t i = 0; i < um.size(); ++i)
            CHECK(um.values()[i] == doctest::Approx(2.5 * ua.values()[i] - 0.75 * ub.values()[i]).epsilon(1e-12));
    }
    CHECK_THROWS_AS(upsample_bilinear(a, 0, 6), Error);
    CHECK_THROWS_AS(upsample_bilinear(a, 3, 6), Error);
}

TEST_CASE("normalize and denormalize are affine inverses")
{
    CHECK(normalize(ImageTensor(1, 1, 1, 0.5)).at(0, 0, 0) == 0.0);
    CHECK(normalize(ImageTensor(1, 1, 1, 0.0)).at(0, 0, 0) == -1.0);
    CHECK(normalize(ImageTensor(1, 1, 1, 1.0)).at(0, 0, 0) == 1.0);
    CHECK(normalize(ImageTensor(1, 1, 1, 1.5)).at(0, 0, 0) == 2.0);

    std::mt19937_64 rng(11);
    const ImageTensor x = testing::random_image(rng, 3, 8, 8);
    const ImageTensor back = denormalize(normalize(x));
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(back.values()[i] == doctest::Approx(x.values()[i]).epsilon(1e-15));
}

TEST_CASE("augment_flip")
{
    std::mt19937_64 rng(13);
    SamplePair p;
    p.scene_id = "s";
    p.hr_rgb = testing::random_image(rng, 3, 16, 16);
    p.hr_thermal = testing::random_image(rng, 1, 16, 16);
    p.lr_thermal = downsample_x8(p.hr_thermal);

    const SamplePair id = augment_flip(p, false, false);
    CHECK(id.hr_rgb == p.hr_rgb);
    CHECK(id.hr_thermal == p.hr_thermal);
    CHECK(id.lr_thermal == p.lr_thermal);

    const SamplePair twice = augment_flip(augment_flip(p, true, false), true, false);
    CHECK(twice.hr_rgb == p.hr_rgb);
    CHECK(twice.hr_thermal == p.hr_thermal);

    const SamplePair hv = augment_flip(augment_flip(p, true, false), false, true);
    CHECK(hv.hr_rgb == augment_flip(p, true, true).hr_rgb);

    SUBCASE("commutes with downsample_x8")
    {
        for (int k = 0; k < 4; ++k) {
            const bool fh = k & 1;
            const bool fv = k & 2;
            CHECK(downsample_x8(flip(p.hr_thermal, fh, fv)) == flip(downsample_x8(p.hr_thermal), fh, fv));
            CHECK(augment_flip(p, fh, fv).lr_thermal == downsample_x8(augment_flip(p, fh, fv).hr_thermal));
        }
    }
    SUBCASE("preserves value multisets")
    {
        auto sorted = [](const ImageTensor& img) {
            std::vector<double> v(img.values().begin(), img.values().end());
            std::sort(v.begin(), v.end());
            return v;
        };
        const SamplePair f = augment_flip(p, true, true);
        CHECK(sorted(f.hr_rgb) == sorted(p.hr_rgb));
        CHECK(sorted(f.hr_thermal) == sorted(p.hr_thermal));
    }
    SUBCASE("keeps registration")
    {
        const SamplePair f = augment_flip(p, true, false);
        CHECK(f.hr_rgb.at(1, 2, 0) == p.hr_rgb.at(1, 2, 15));
        CHECK(f.hr_thermal.at(0, 2, 0) == p.hr_thermal.at(0, 2, 15));
    }
}

TEST_CASE("synthetic scenes")
{
    const SamplePair a = synthesize_scene(7, 3, 64, 64);
    const SamplePair b = synthesize_scene(7, 3, 64, 64);
    CHECK(a.hr_rgb == b.hr_rgb);
    CHECK(a.hr_thermal == b.hr_thermal);
    CHECK(a.lr_thermal.height() == 8);
    CHECK(a.lr_thermal.width() == 8);
    CHECK(a.lr_thermal == downsample_x8(a.hr_thermal));
    CHECK(a.hr_rgb.channels() == 3);
    CHECK(a.hr_thermal.channels() == 1);
    CHECK_NOTHROW(validate_pair(a));
    CHECK_FALSE(synthesize_scene(8, 3, 64, 64).hr_thermal == a.hr_thermal);
    CHECK_FALSE(synthesize_scene(7, 4, 64, 64).hr_thermal == a.hr_thermal);
    for (double v : a.hr_rgb.values())
        CHECK((v >= 0.0 && v <= 1.0));
    CHECK_THROWS_AS(synthesize_scene(7, 0, 60, 64), Error);

    SUBCASE("RGB luminance edges correlate with thermal edges in every scene")
    {
        for (const SamplePair& p : synthesize_pairs(7, 32, 64, 64)) {
            std::vector<double> lum(p.hr_thermal.size());
            for (int y = 0; y < 64; ++y)
                for (int x = 0; x < 64; ++x)
                    lum[std::size_t(y) * 64 + x] = 0.299 * p.hr_rgb.at(0, y, x) + 0.587 * p.hr_rgb.at(1, y, x) +
                                                  0.114 * p.hr_rgb.at(2, y, x);
            const std::vector<double> th(p.hr_thermal.values().begin(), p.hr_thermal.values().end());
            const double r = pearson(sobel_magnitude(lum, 64, 64), sobel_magnitude(th, 64, 64));
            INFO(p.scene_id);
            CHECK(r > 0.3);
        }
    }
}

TEST_CASE("dataset generation and storage")
{
    const auto root = testing::scratch_dir("data_gen");
    const DatasetManifest m = generate_synthetic_dataset(root / "a", 7, 5, 32, 32);
    CHECK(m.scenes.size() == 5);
    CHECK(m.train.size() == 4);
    CHECK(m.val.size() == 1);
    CHECK_NOTHROW(validate_manifest(m));

    SUBCASE("generation is deterministic byte for byte")
    {
        generate_synthetic_dataset(root / "b", 7, 5, 32, 32);
        for (const auto& id : m.scenes)
            for (const char* f : {"rgb.png", "lr_thermal.png", "hr_thermal.png"})
                CHECK(files_equal(root / "a" / id / f, root / "b" / id / f));
        CHECK(files_equal(root / "a" / "manifest.json", root / "b" / "manifest.json"));
    }
    SUBCASE("manifest round trip")
    {
        const DatasetManifest back = load_manifest(root / "a");
        CHECK(back.scenes == m.scenes);
        CHECK(back.train == m.train);
        CHECK(back.val == m.val);
        CHECK(back.seed == 7);
        CHECK(back.height == 32);
        CHECK(back.width == 32);
    }
    SUBCASE("generated pairs load back exactly")
    {
        for (int i = 0; i < 5; ++i) {
            const SamplePair s = synthesize_scene(7, i, 32, 32);
            const SamplePair l = load_pair(m, s.scene_id);
            CHECK(l.hr_rgb == s.hr_rgb);
            CHECK(l.hr_thermal == s.hr_thermal);
            for (std::size_t k = 0; k < s.lr_thermal.size(); ++k)
                CHECK(std::abs(l.lr_thermal.values()[k] - s.lr_thermal.values()[k]) <= 0.5 / 65535.0 + 1e-15);
        }
    }
    SUBCASE("arbitrary values round trip within storage precision")
    {
        std::mt19937_64 rng(17);
        SamplePair p;
        p.scene_id = "custom";
        p.hr_rgb = testing::random_image(rng, 3, 16, 16);
        p.hr_thermal = testing::random_image(rng, 1, 16, 16);
        p.lr_thermal = downsample_x8(p.hr_thermal);
        save_pair(p, root / "custom");
        DatasetManifest cm;
        cm.root = root / "custom";
        cm.height = 16;
        cm.width = 16;
        cm.scenes = {"custom"};
        cm.train = {"custom"};
        const SamplePair l = load_pair(cm, "custom");
        for (std::size_t k = 0; k < p.hr_thermal.size(); ++k)
            CHECK(std::abs(l.hr_thermal.values()[k] - p.hr_thermal.values()[k]) <= 1.0 / 65535.0);
        for (std::size_t k = 0; k < p.hr_rgb.size(); ++k)
            CHECK(std::abs(l.hr_rgb.values()[k] - p.hr_rgb.values()[k]) <= 0.5 / 255.0 + 1e-15);
    }
    SUBCASE("modality mask loads only the requested images")
    {
        const SamplePair l = load_pair(m, m.scenes[0], only(Modality::lr_thermal));
        CHECK(l.hr_rgb.empty());
        CHECK(l.hr_thermal.empty());
        CHECK_FALSE(l.lr_thermal.empty());
    }
    SUBCASE("load errors are distinct")
    {
        auto code_of = [](auto&& fn) {
            try {
                fn();
            } catch (const Error& e) {
                return e.code();
            }
            return ErrorCode::io;
        };
        CHECK(code_of([&] { load_pair(m, "scene_9999"); }) == ErrorCode::missing_file);

        DatasetManifest wrong = m;
        wrong.height = 64;
        wrong.width = 64;
        CHECK(code_of([&] { load_pair(wrong, m.scenes[0]); }) == ErrorCode::dimension_mismatch);

        std::ofstream(root / "a" / m.scenes[1] / "rgb.png") << "not a png";
        CHECK(code_of([&] { load_pair(m, m.scenes[1]); }) == ErrorCode::malformed_file);
        CHECK_NOTHROW(load_pair(m, m.scenes[1], only(Modality::lr_thermal).with(Modality::hr_thermal)));
    }
    SUBCASE("invalid requests")
    {
        CHECK_THROWS_AS(generate_synthetic_dataset(root / "c", 7, 0, 32, 32), Error);
        CHECK_THROWS_AS(generate_synthetic_dataset(root / "c", 7, 2, 30, 32), Error);
        DatasetManifest bad = m;
        bad.val.push_back(bad.train.front());
        CHECK_THROWS_AS(validate_manifest(bad), Error);
    }
}
