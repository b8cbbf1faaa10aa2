#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "posegraph/error.hpp"
#include "posegraph/image_plane.hpp"

namespace posegraph {

// ---------------------------------------------------------------------------
// Valid-mode cross-correlation (network layers)
// ---------------------------------------------------------------------------

/// out[m][y][x] = bias[m] + sum_{c,dy,dx} w[m][c][dy][dx] * in[c][y*stride+dy][x*stride+dx]
///
/// Cross-correlation orientation: the kernel is not flipped. Terms are added in
/// (c, dy, dx) lexicographic order for every output cell, whatever the input size.
inline ImagePlane conv2d_valid(const ImagePlane& input, const KernelStack& kernels, std::size_t stride = 1)
{
    require(stride >= 1, "conv2d_valid: stride must be >= 1");
    require(kernels.outMaps >= 1 && kernels.kernelHeight >= 1 && kernels.kernelWidth >= 1,
            "conv2d_valid: empty kernel stack ", kernels.shape());
    require(input.channels() == kernels.inMaps && input.height() >= kernels.kernelHeight &&
                input.width() >= kernels.kernelWidth,
            "conv2d_valid: input ", input.shape(), " incompatible with kernels ", kernels.shape());

    const std::size_t kh = kernels.kernelHeight, kw = kernels.kernelWidth;
    const std::size_t oh = (input.height() - kh) / stride + 1;
    const std::size_t ow = (input.width() - kw) / stride + 1;
    const std::size_t iw = input.width();
    ImagePlane out(oh, ow, kernels.outMaps);

    for (std::size_t m = 0; m < kernels.outMaps; ++m) {
        double* dstPlane = &out(m, 0, 0);
        std::fill(dstPlane, dstPlane + oh * ow, kernels.bias[m]);
        for (std::size_t c = 0; c < kernels.inMaps; ++c) {
            const double* srcPlane = &input(c, 0, 0);
            for (std::size_t dy = 0; dy < kh; ++dy) {
                for (std::size_t dx = 0; dx < kw; ++dx) {
                    const double w = kernels.weight(m, c, dy, dx);
                    for (std::size_t y = 0; y < oh; ++y) {
                        const double* src = srcPlane + (y * stride + dy) * iw + dx;
                        double* dst = dstPlane + y * ow;
                        if (stride == 1) {
                            for (std::size_t x = 0; x < ow; ++x)
                                dst[x] += w * src[x];
                        } else {
                            for (std::size_t x = 0; x < ow; ++x)
                                dst[x] += w * src[x * stride];
                        }
                    }
                }
            }
        }
    }
    return out;
}

/// Backward pass of conv2d_valid. Weight and bias gradients are accumulated
/// into `gradKernels`; the input gradient is written only when requested.
inline void conv2d_valid_backward(const ImagePlane& input, const KernelStack& kernels, std::size_t stride,
                                  const ImagePlane& gradOutput, KernelStack& gradKernels,
                                  ImagePlane* gradInput)
{
    const std::size_t kh = kernels.kernelHeight, kw = kernels.kernelWidth;
    const std::size_t oh = gradOutput.height(), ow = gradOutput.width();
    require(gradOutput.channels() == kernels.outMaps && oh == (input.height() - kh) / stride + 1 &&
                ow == (input.width() - kw) / stride + 1,
            "conv2d_valid_backward: gradient ", gradOutput.shape(), " does not match forward shapes");
    require(gradKernels.same_shape(kernels), "conv2d_valid_backward: gradient accumulator ",
            gradKernels.shape(), " vs kernels ", kernels.shape());
    if (gradInput) {
        require(gradInput->same_shape(input), "conv2d_valid_backward: input gradient ", gradInput->shape(),
                " vs input ", input.shape());
        std::fill(gradInput->data().begin(), gradInput->data().end(), 0.0);
    }

    const std::size_t iw = input.width();
    for (std::size_t m = 0; m < kernels.outMaps; ++m) {
        const double* g = &gradOutput(m, 0, 0);
        double biasGrad = 0.0;
        for (std::size_t i = 0; i < oh * ow; ++i)
            biasGrad += g[i];
        gradKernels.bias[m] += biasGrad;

        for (std::size_t c = 0; c < kernels.inMaps; ++c) {
            const double* srcPlane = &input(c, 0, 0);
            double* dstPlane = gradInput ? &(*gradInput)(c, 0, 0) : nullptr;
            for (std::size_t dy = 0; dy < kh; ++dy) {
                for (std::size_t dx = 0; dx < kw; ++dx) {
                    const double w = kernels.weight(m, c, dy, dx);
                    double acc = 0.0;
                    for (std::size_t y = 0; y < oh; ++y) {
                        const double* src = srcPlane + (y * stride + dy) * iw + dx;
                        const double* gr = g + y * ow;
                        if (stride == 1) {
                            for (std::size_t x = 0; x < ow; ++x)
                                acc += gr[x] * src[x];
                            if (dstPlane) {
                                double* dst = dstPlane + (y + dy) * iw + dx;
                                for (std::size_t x = 0; x < ow; ++x)
                                    dst[x] += w * gr[x];
                            }
                        } else {
                            for (std::size_t x = 0; x < ow; ++x)
                                acc += gr[x] * src[x * stride];
                            if (dstPlane) {
                                double* dst = dstPlane + (y * stride + dy) * iw + dx;
                                for (std::size_t x = 0; x < ow; ++x)
                                    dst[x * stride] += w * gr[x];
                            }
                        }
                    }
                    gradKernels.weight(m, c, dy, dx) += acc;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Same-size true convolution with an origin-centered kernel (spatial model)
// ---------------------------------------------------------------------------

/// out(x) = sum_y prior(x - y) * a(y), prior indexed relative to its center cell.
/// Output has the shape of `a`; prior taps falling outside `a` contribute zero.
inline ImagePlane conv2d_same_centered(const ImagePlane& a, const ImagePlane& prior)
{
    require(a.channels() == 1 && prior.channels() == 1, "conv2d_same_centered: single-channel inputs required, got ",
            a.shape(), " and ", prior.shape());
    require(prior.height() % 2 == 1 && prior.width() % 2 == 1,
            "conv2d_same_centered: prior must have odd dimensions, got ", prior.shape());

    const long H = static_cast<long>(a.height()), W = static_cast<long>(a.width());
    const long cy = static_cast<long>(prior.height() / 2), cx = static_cast<long>(prior.width() / 2);
    ImagePlane out(a.height(), a.width(), 1);

    // Tap at prior (py, px) encodes offset (dy, dx) = (py - cy, px - cx):
    // out(y, x) += prior(py, px) * a(y - dy, x - dx).
    for (long py = 0; py < static_cast<long>(prior.height()); ++py) {
        const long dy = py - cy;
        const long y0 = std::max(0L, dy), y1 = std::min(H, H + dy);
        for (long px = 0; px < static_cast<long>(prior.width()); ++px) {
            const double w = prior.at(py, px);
            if (w == 0.0)
                continue;
            const long dx = px - cx;
            const long x0 = std::max(0L, dx), x1 = std::min(W, W + dx);
            for (long y = y0; y < y1; ++y) {
                double* dst = &out.at(y, 0);
                const double* src = &a.at(y - dy, 0);
                for (long x = x0; x < x1; ++x)
                    dst[x] += w * src[x - dx];
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Max pooling
// ---------------------------------------------------------------------------

/// Flat input index of each pooled winner, used to route gradients.
struct ArgmaxRecord {
    std::vector<std::size_t> indices;
    std::size_t inputHeight = 0;
    std::size_t inputWidth = 0;
    std::size_t channels = 0;
};

struct PoolResult {
    ImagePlane output;
    ArgmaxRecord argmax;
};

/// Non-overlapping max pooling. Sides not divisible by `window` are padded by
/// edge replication, so the output is ceil(H/window) x ceil(W/window). Ties go
/// to the lowest row-major input index.
inline PoolResult maxpool(const ImagePlane& input, std::size_t window)
{
    require(window >= 1, "maxpool: window must be >= 1");
    const std::size_t H = input.height(), W = input.width(), C = input.channels();
    const std::size_t oh = (H + window - 1) / window, ow = (W + window - 1) / window;
    PoolResult result{ImagePlane(oh, ow, C), ArgmaxRecord{std::vector<std::size_t>(oh * ow * C), H, W, C}};
    const auto in = input.data();

    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                std::size_t best = 0;
                double bestValue = -std::numeric_limits<double>::infinity();
                for (std::size_t wy = 0; wy < window; ++wy) {
                    const std::size_t y = std::min(oy * window + wy, H - 1);
                    for (std::size_t wx = 0; wx < window; ++wx) {
                        const std::size_t x = std::min(ox * window + wx, W - 1);
                        const std::size_t idx = (c * H + y) * W + x;
                        if (in[idx] > bestValue || (wy == 0 && wx == 0)) {
                            bestValue = in[idx];
                            best = idx;
                        }
                    }
                }
                result.output(c, oy, ox) = bestValue;
                result.argmax.indices[(c * oh + oy) * ow + ox] = best;
            }
        }
    }
    return result;
}

inline ImagePlane maxpool_backward(const ImagePlane& gradOutput, const ArgmaxRecord& argmax)
{
    require(gradOutput.size() == argmax.indices.size(), "maxpool_backward: gradient ", gradOutput.shape(),
            " does not match argmax record of ", argmax.indices.size(), " cells");
    ImagePlane gradInput(argmax.inputHeight, argmax.inputWidth, argmax.channels);
    auto dst = gradInput.data();
    const auto g = gradOutput.data();
    for (std::size_t i = 0; i < g.size(); ++i)
        dst[argmax.indices[i]] += g[i];
    return gradInput;
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

inline ImagePlane upsample_nearest(const ImagePlane& input, std::size_t factor)
{
    require(factor >= 1, "upsample_nearest: factor must be >= 1");
    ImagePlane out(input.height() * factor, input.width() * factor, input.channels());
    for (std::size_t c = 0; c < input.channels(); ++c)
        for (std::size_t y = 0; y < out.height(); ++y)
            for (std::size_t x = 0; x < out.width(); ++x)
                out(c, y, x) = input(c, y / factor, x / factor);
    return out;
}

/// Bilinear sample of channel c at real coordinates; `outside` is returned for
/// points beyond the pixel-center grid [0, H-1] x [0, W-1].
inline double sample_bilinear(const ImagePlane& img, std::size_t c, double y, double x, double outside = 0.0)
{
    const double maxY = static_cast<double>(img.height() - 1), maxX = static_cast<double>(img.width() - 1);
    if (!(y >= 0.0 && y <= maxY && x >= 0.0 && x <= maxX))
        return outside;
    const std::size_t y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
    const std::size_t y1 = std::min(y0 + 1, img.height() - 1), x1 = std::min(x0 + 1, img.width() - 1);
    const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
    const double top = img(c, y0, x0) * (1.0 - fx) + img(c, y0, x1) * fx;
    const double bottom = img(c, y1, x0) * (1.0 - fx) + img(c, y1, x1) * fx;
    return top * (1.0 - fy) + bottom * fy;
}

/// Scaled image of size floor(H*scale) x floor(W*scale). Output pixel (y, x)
/// samples the source at (y/scale, x/scale), clamped to the last row/column.
inline ImagePlane resize_by_scale(const ImagePlane& input, double scale)
{
    require(scale > 0.0 && std::isfinite(scale), "resize_by_scale: scale must be positive, got ", scale);
    const auto oh = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(input.height() * scale + 1e-9)));
    const auto ow = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(input.width() * scale + 1e-9)));
    if (oh == input.height() && ow == input.width() && scale == 1.0)
        return input;
    ImagePlane out(oh, ow, input.channels());
    const double maxY = static_cast<double>(input.height() - 1), maxX = static_cast<double>(input.width() - 1);
    for (std::size_t c = 0; c < input.channels(); ++c)
        for (std::size_t y = 0; y < oh; ++y) {
            const double sy = std::min(static_cast<double>(y) / scale, maxY);
            for (std::size_t x = 0; x < ow; ++x)
                out(c, y, x) = sample_bilinear(input, c, sy, std::min(static_cast<double>(x) / scale, maxX));
        }
    return out;
}

// ---------------------------------------------------------------------------
// Gaussian smoothing
// ---------------------------------------------------------------------------

/// Normalized 1-D Gaussian taps w[0..radius] for offsets 0..radius (one side).
inline std::vector<double> gaussian_half_kernel(double sigma, std::size_t radius)
{
    require(sigma > 0.0, "gaussian_half_kernel: sigma must be positive");
    std::vector<double> w(radius + 1);
    double total = 0.0;
    for (std::size_t k = 0; k <= radius; ++k) {
        w[k] = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
        total += k == 0 ? w[k] : 2.0 * w[k];
    }
    for (double& v : w)
        v /= total;
    return w;
}

namespace detail {

// One separable pass along a line of n samples with stride `step`. Each output
// is sum_k w_k * (v[i-k] + v[i+k]) over in-bounds taps divided by the in-bounds
// weight. Pairing the taps symmetrically makes the result bitwise invariant
// under reversal of the line.
inline void blur_line(const double* src, double* dst, std::size_t n, std::size_t step,
                      const std::vector<double>& half)
{
    const long radius = static_cast<long>(half.size()) - 1;
    const long len = static_cast<long>(n);
    for (long i = 0; i < len; ++i) {
        double acc = half[0] * src[i * static_cast<long>(step)];
        double norm = half[0];
        for (long k = 1; k <= radius; ++k) {
            const bool lo = i - k >= 0, hi = i + k < len;
            if (!lo && !hi)
                break;
            const double a = lo ? src[(i - k) * static_cast<long>(step)] : 0.0;
            const double b = hi ? src[(i + k) * static_cast<long>(step)] : 0.0;
            acc += half[k] * (a + b);
            norm += (lo && hi) ? 2.0 * half[k] : half[k];
        }
        dst[i * static_cast<long>(step)] = acc / norm;
    }
}

} // namespace detail

/// Separable Gaussian blur of every channel with boundary renormalization: only
/// in-bounds taps contribute and their weights are rescaled to sum to one, so a
/// constant image stays constant up to the border.
inline ImagePlane blur_normalized(const ImagePlane& input, double sigma, std::size_t radius)
{
    const auto half = gaussian_half_kernel(sigma, radius);
    const std::size_t H = input.height(), W = input.width();
    ImagePlane tmp(H, W, input.channels());
    ImagePlane out(H, W, input.channels());
    for (std::size_t c = 0; c < input.channels(); ++c) {
        for (std::size_t y = 0; y < H; ++y)
            detail::blur_line(&input(c, y, 0), &tmp(c, y, 0), W, 1, half);
        for (std::size_t x = 0; x < W; ++x)
            detail::blur_line(&tmp(c, 0, x), &out(c, 0, x), H, W, half);
    }
    return out;
}

/// Sum of a plane computed by pairing element i with element N-1-i, so that
/// index-reversed planes have bitwise equal sums.
inline double symmetric_sum(std::span<const double> v)
{
    const std::size_t n = v.size();
    double total = 0.0;
    for (std::size_t i = 0; i < n / 2; ++i)
        total += v[i] + v[n - 1 - i];
    if (n % 2 == 1)
        total += v[n / 2];
    return total;
}

} // namespace posegraph
