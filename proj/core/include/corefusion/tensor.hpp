#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace corefusion {

/// Dense (channels, height, width) image or feature map, row-major.
class ImageTensor {
public:
    ImageTensor() = default;
    ImageTensor(int channels, int height, int width, double fill = 0.0);
    ImageTensor(int channels, int height, int width, std::vector<double> values);

    int channels() const noexcept { return channels_; }
    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t size() const noexcept { return values_.size(); }
    std::size_t plane_size() const noexcept { return std::size_t(height_) * std::size_t(width_); }
    bool empty() const noexcept { return values_.empty(); }

    double& at(int c, int y, int x) { return values_[index(c, y, x)]; }
    double at(int c, int y, int x) const { return values_[index(c, y, x)]; }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    std::span<double> plane(int c) noexcept { return values().subspan(std::size_t(c) * plane_size(), plane_size()); }
    std::span<const double> plane(int c) const noexcept { return values().subspan(std::size_t(c) * plane_size(), plane_size()); }

    bool same_shape(const ImageTensor& other) const noexcept
    {
        return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
    }

    bool all_finite() const noexcept;
    std::string shape_string() const;

    friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

private:
    std::size_t index(int c, int y, int x) const noexcept
    {
        return (std::size_t(c) * std::size_t(height_) + std::size_t(y)) * std::size_t(width_) + std::size_t(x);
    }

    int channels_ = 0;
    int height_ = 0;
    int width_ = 0;
    std::vector<double> values_;
};

struct Shape4 {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    std::size_t size() const noexcept { return std::size_t(n) * std::size_t(c) * std::size_t(h) * std::size_t(w); }
    std::size_t sample_size() const noexcept { return std::size_t(c) * std::size_t(h) * std::size_t(w); }
    std::size_t plane_size() const noexcept { return std::size_t(h) * std::size_t(w); }
    std::string to_string() const;

    friend bool operator==(const Shape4&, const Shape4&) = default;
};

/// 64-byte aligned storage. Vectorized reductions then see the same alignment
/// on every run, which keeps results bit-for-bit reproducible.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() noexcept = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept
    {
    }

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    // Default-initialize rather than value-initialize: sized buffers start uninitialized.
    template <typename U>
    void construct(U* p) noexcept
    {
        ::new (static_cast<void*>(p)) U;
    }
    template <typename U, typename... Args>
    void construct(U* p, Args&&... args)
    {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }

    template <typename U>
    friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept
    {
        return true;
    }
};

using AlignedBuffer = std::vector<double, AlignedAllocator<double>>;

/// Batched (n, c, h, w) tensor used by the autodiff graph and for parameters.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape4 shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}
    Tensor(Shape4 shape, std::vector<double> data);

    /// Tensor whose contents are left for the caller to overwrite.
    static Tensor uninitialized(Shape4 shape)
    {
        Tensor t;
        t.shape_ = shape;
        t.data_.resize(shape.size());
        return t;
    }

    const Shape4& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> span() noexcept { return data_; }
    std::span<const double> span() const noexcept { return data_; }
    std::span<double> sample(int n) noexcept { return span().subspan(std::size_t(n) * shape_.sample_size(), shape_.sample_size()); }
    std::span<const double> sample(int n) const noexcept { return span().subspan(std::size_t(n) * shape_.sample_size(), shape_.sample_size()); }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    void fill(double value);
    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape4 shape_;
    AlignedBuffer data_;
};

/// Packs same-shaped images into a batch tensor.
Tensor stack(std::span<const ImageTensor> images);
Tensor stack(const ImageTensor& image);
ImageTensor unstack(const Tensor& batch, int index);

} // namespace corefusion
