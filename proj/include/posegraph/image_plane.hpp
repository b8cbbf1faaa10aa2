#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "posegraph/error.hpp"

namespace posegraph {

/// Dense real-valued raster used for images, feature maps and response maps.
///
/// Storage is planar: channel-major, and row-major within each channel, so
/// element (c, y, x) lives at `(c * height + y) * width + x`.
class ImagePlane {
public:
    ImagePlane() : ImagePlane(1, 1, 1) {}

    ImagePlane(std::size_t height, std::size_t width, std::size_t channels = 1, double fill = 0.0)
        : height_(height), width_(width), channels_(channels)
    {
        require(height >= 1 && width >= 1 && channels >= 1,
                "ImagePlane dimensions must be positive, got ", shape_string(height, width, channels));
        data_.assign(height * width * channels, fill);
    }

    ImagePlane(std::size_t height, std::size_t width, std::size_t channels, std::vector<double> data)
        : height_(height), width_(width), channels_(channels), data_(std::move(data))
    {
        require(height >= 1 && width >= 1 && channels >= 1,
                "ImagePlane dimensions must be positive, got ", shape_string(height, width, channels));
        require(data_.size() == height * width * channels, "ImagePlane data length ", data_.size(),
                " does not match ", shape_string(height, width, channels));
    }

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t channels() const noexcept { return channels_; }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t plane_size() const noexcept { return height_ * width_; }

    double& operator()(std::size_t c, std::size_t y, std::size_t x) noexcept
    {
        return data_[(c * height_ + y) * width_ + x];
    }
    const double& operator()(std::size_t c, std::size_t y, std::size_t x) const noexcept
    {
        return data_[(c * height_ + y) * width_ + x];
    }

    // Single-channel convenience accessors.
    double& at(std::size_t y, std::size_t x) noexcept { return data_[y * width_ + x]; }
    const double& at(std::size_t y, std::size_t x) const noexcept { return data_[y * width_ + x]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    std::span<double> channel(std::size_t c) noexcept
    {
        return std::span<double>(data_).subspan(c * plane_size(), plane_size());
    }
    std::span<const double> channel(std::size_t c) const noexcept
    {
        return std::span<const double>(data_).subspan(c * plane_size(), plane_size());
    }

    bool same_shape(const ImagePlane& other) const noexcept
    {
        return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
    }

    std::string shape() const { return shape_string(height_, width_, channels_); }

    bool all_finite() const noexcept
    {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    double sum() const noexcept
    {
        double s = 0.0;
        for (double v : data_)
            s += v;
        return s;
    }

    friend bool operator==(const ImagePlane&, const ImagePlane&) = default;

    static std::string shape_string(std::size_t h, std::size_t w, std::size_t c)
    {
        return detail::concat(c, "x", h, "x", w);
    }

private:
    std::size_t height_ = 1;
    std::size_t width_ = 1;
    std::size_t channels_ = 1;
    std::vector<double> data_;
};

/// Filter bank for a convolution layer, weights laid out outMaps x inMaps x kH x kW.
struct KernelStack {
    std::size_t outMaps = 0;
    std::size_t inMaps = 0;
    std::size_t kernelHeight = 0;
    std::size_t kernelWidth = 0;
    std::vector<double> weights;
    std::vector<double> bias;

    KernelStack() = default;
    KernelStack(std::size_t out, std::size_t in, std::size_t kh, std::size_t kw)
        : outMaps(out), inMaps(in), kernelHeight(kh), kernelWidth(kw),
          weights(out * in * kh * kw, 0.0), bias(out, 0.0)
    {
    }

    double& weight(std::size_t m, std::size_t c, std::size_t dy, std::size_t dx) noexcept
    {
        return weights[((m * inMaps + c) * kernelHeight + dy) * kernelWidth + dx];
    }
    double weight(std::size_t m, std::size_t c, std::size_t dy, std::size_t dx) const noexcept
    {
        return weights[((m * inMaps + c) * kernelHeight + dy) * kernelWidth + dx];
    }

    bool same_shape(const KernelStack& o) const noexcept
    {
        return outMaps == o.outMaps && inMaps == o.inMaps && kernelHeight == o.kernelHeight &&
               kernelWidth == o.kernelWidth;
    }

    std::string shape() const { return detail::concat(outMaps, "x", inMaps, "x", kernelHeight, "x", kernelWidth); }

    friend bool operator==(const KernelStack&, const KernelStack&) = default;
};

} // namespace posegraph
