#include "corefusion/tensor.hpp"

#include "corefusion/error.hpp"

#include <algorithm>
#include <cmath>

namespace corefusion {

ImageTensor::ImageTensor(int channels, int height, int width, double fill)
    : channels_(channels), height_(height), width_(width)
{
    require(channels > 0 && height > 0 && width > 0, ErrorCode::precondition,
            "image dimensions must be positive");
    values_.assign(std::size_t(channels) * std::size_t(height) * std::size_t(width), fill);
}

ImageTensor::ImageTensor(int channels, int height, int width, std::vector<double> values)
    : channels_(channels), height_(height), width_(width), values_(std::move(values))
{
    require(channels > 0 && height > 0 && width > 0, ErrorCode::precondition,
            "image dimensions must be positive");
    require(values_.size() == std::size_t(channels) * std::size_t(height) * std::size_t(width),
            ErrorCode::shape_mismatch, "value count does not match " + shape_string());
}

bool ImageTensor::all_finite() const noexcept
{
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::string ImageTensor::shape_string() const
{
    return "(" + std::to_string(channels_) + ", " + std::to_string(height_) + ", " + std::to_string(width_) + ")";
}

std::string Shape4::to_string() const
{
    return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " + std::to_string(w) + ")";
}

Tensor::Tensor(Shape4 shape, std::vector<double> data) : shape_(shape), data_(data.begin(), data.end())
{
    require(data_.size() == shape_.size(), ErrorCode::shape_mismatch,
            "tensor data does not match shape " + shape_.to_string());
}

void Tensor::fill(double value)
{
    std::fill(data_.begin(), data_.end(), value);
}

bool Tensor::all_finite() const noexcept
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor stack(std::span<const ImageTensor> images)
{
    require(!images.empty(), ErrorCode::precondition, "cannot stack an empty image list");
    const ImageTensor& first = images.front();
    Tensor out(Shape4{int(images.size()), first.channels(), first.height(), first.width()});
    for (std::size_t i = 0; i < images.size(); ++i) {
        require(images[i].same_shape(first), ErrorCode::shape_mismatch,
                "stack: image " + std::to_string(i) + " has shape " + images[i].shape_string() +
                    ", expected " + first.shape_string());
        std::copy(images[i].values().begin(), images[i].values().end(), out.sample(int(i)).begin());
    }
    return out;
}

Tensor stack(const ImageTensor& image)
{
    return stack(std::span<const ImageTensor>(&image, 1));
}

ImageTensor unstack(const Tensor& batch, int index)
{
    const Shape4& s = batch.shape();
    require(index >= 0 && index < s.n, ErrorCode::precondition, "unstack index out of range");
    auto sample = batch.sample(index);
    return ImageTensor(s.c, s.h, s.w, std::vector<double>(sample.begin(), sample.end()));
}

} // namespace corefusion
