#include "corefusion/data.hpp"
#include "corefusion/error.hpp"

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>

namespace corefusion {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void png_error_handler(png_structp png, png_const_charp)
{
    std::longjmp(png_jmpbuf(png), 1);
}

void png_warning_handler(png_structp, png_const_charp) {}

std::uint32_t to_level(double v, std::uint32_t max_level)
{
    const double clamped = std::fmin(1.0, std::fmax(0.0, v));
    return std::uint32_t(std::lround(clamped * double(max_level)));
}

} // namespace

void write_png(const std::filesystem::path& path, const ImageTensor& img, int bit_depth)
{
    require(bit_depth == 8 || bit_depth == 16, ErrorCode::precondition, "png bit depth must be 8 or 16");
    require(img.channels() == 1 || img.channels() == 3, ErrorCode::precondition,
            "png export supports 1 or 3 channels, got " + std::to_string(img.channels()));
    FilePtr file(std::fopen(path.string().c_str(), "wb"));
    require(file != nullptr, ErrorCode::io, "cannot open " + path.string() + " for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    require(png && info, ErrorCode::io, "libpng initialisation failed");

    const int bytes = bit_depth / 8;
    const std::uint32_t max_level = (1u << bit_depth) - 1u;
    const int c = img.channels();
    std::vector<unsigned char> row(std::size_t(img.width()) * std::size_t(c) * std::size_t(bytes));

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(ErrorCode::io, "libpng failed writing " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, png_uint_32(img.width()), png_uint_32(img.height()), bit_depth,
                 c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height(); ++y) {
        std::size_t k = 0;
        for (int x = 0; x < img.width(); ++x) {
            for (int ch = 0; ch < c; ++ch) {
                const std::uint32_t level = to_level(img.at(ch, y, x), max_level);
                if (bytes == 2)
                    row[k++] = static_cast<unsigned char>(level >> 8);
                row[k++] = static_cast<unsigned char>(level & 0xffu);
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

ImageTensor read_png(const std::filesystem::path& path)
{
    require(std::filesystem::exists(path), ErrorCode::missing_file, "missing file " + path.string());
    FilePtr file(std::fopen(path.string().c_str(), "rb"));
    require(file != nullptr, ErrorCode::missing_file, "cannot open " + path.string());

    unsigned char sig[8] = {};
    const std::size_t got = std::fread(sig, 1, sizeof sig, file.get());
    require(got == sizeof sig && png_sig_cmp(sig, 0, sizeof sig) == 0, ErrorCode::malformed_file,
            "malformed png header in " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    require(png && info, ErrorCode::io, "libpng initialisation failed");

    // Declared before setjmp so longjmp does not skip their construction.
    std::vector<unsigned char> row;
    ImageTensor img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorCode::malformed_file, "corrupt png data in " + path.string());
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, sizeof sig);
    png_read_info(png, info);

    const int width = int(png_get_image_width(png, info));
    const int height = int(png_get_image_height(png, info));
    const int bit_depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    const bool supported = (bit_depth == 8 || bit_depth == 16) &&
                           (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_RGB) &&
                           png_get_interlace_type(png, info) == PNG_INTERLACE_NONE;
    if (!supported) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorCode::malformed_file, "unsupported png layout in " + path.string());
    }

    const int c = color == PNG_COLOR_TYPE_GRAY ? 1 : 3;
    const int bytes = bit_depth / 8;
    const double max_level = double((1u << bit_depth) - 1u);
    img = ImageTensor(c, height, width);
    row.resize(png_get_rowbytes(png, info));
    for (int y = 0; y < height; ++y) {
        png_read_row(png, row.data(), nullptr);
        std::size_t k = 0;
        for (int x = 0; x < width; ++x) {
            for (int ch = 0; ch < c; ++ch) {
                std::uint32_t level = row[k++];
                if (bytes == 2)
                    level = (level << 8) | row[k++];
                img.at(ch, y, x) = double(level) / max_level;
            }
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

} // namespace corefusion
