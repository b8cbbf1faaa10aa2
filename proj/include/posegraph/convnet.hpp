#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "posegraph/error.hpp"
#include "posegraph/image_plane.hpp"
#include "posegraph/rng.hpp"
#include "posegraph/tensor_ops.hpp"

namespace posegraph {

// ---------------------------------------------------------------------------
// Local contrast normalization
// ---------------------------------------------------------------------------

struct LcnConfig {
    std::size_t window = 9;
    double sigma = 2.0;
    // Smallest divisor. Keeps rounding noise in flat images from being
    // blown up to unit scale; far below the 1/255 quantization step.
    double minDivisor = 1e-4;
};

/// Subtractive step: removes the Gaussian-weighted local mean, where the mean
/// pools all channels and only in-bounds taps (renormalized to unit weight).
inline ImagePlane lcn_subtractive(const ImagePlane& image, const LcnConfig& cfg = {})
{
    require(cfg.window % 2 == 1, "lcn: window must be odd, got ", cfg.window);
    require(image.height() >= cfg.window && image.width() >= cfg.window, "lcn: image ", image.shape(),
            " smaller than the ", cfg.window, "x", cfg.window, " window");
    const ImagePlane blurred = blur_normalized(image, cfg.sigma, cfg.window / 2);
    const std::size_t C = image.channels(), N = image.plane_size();
    std::vector<double> mean(N, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        const auto b = blurred.channel(c);
        for (std::size_t i = 0; i < N; ++i)
            mean[i] += b[i];
    }
    ImagePlane out = image;
    for (std::size_t c = 0; c < C; ++c) {
        auto o = out.channel(c);
        for (std::size_t i = 0; i < N; ++i)
            o[i] -= mean[i] / static_cast<double>(C);
    }
    return out;
}

/// Full LCN: subtractive step, then division by
/// max(local std, mean local std, minDivisor).
inline ImagePlane lcn(const ImagePlane& image, const LcnConfig& cfg = {})
{
    ImagePlane centered = lcn_subtractive(image, cfg);
    ImagePlane squared = centered;
    for (double& v : squared.data())
        v *= v;
    const ImagePlane localVar = blur_normalized(squared, cfg.sigma, cfg.window / 2);

    const std::size_t C = image.channels(), N = image.plane_size();
    std::vector<double> stddev(N, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        const auto v = localVar.channel(c);
        for (std::size_t i = 0; i < N; ++i)
            stddev[i] += v[i];
    }
    double meanStd = 0.0;
    for (double& s : stddev) {
        s = std::sqrt(std::max(0.0, s / static_cast<double>(C)));
        meanStd += s;
    }
    meanStd /= static_cast<double>(N);

    for (std::size_t c = 0; c < C; ++c) {
        auto o = centered.channel(c);
        for (std::size_t i = 0; i < N; ++i) {
            o[i] /= std::max({stddev[i], meanStd, cfg.minDivisor});
        }
    }
    return centered;
}

// ---------------------------------------------------------------------------
// Architecture and parameters
// ---------------------------------------------------------------------------

/// Three conv(+ReLU) stages, 2x2 pooling after the first two, then three
/// fully-connected stages ending in one logistic unit.
struct Architecture {
    std::size_t patchSize = 64;
    std::size_t inputChannels = 3;
    std::array<std::size_t, 3> convMaps{16, 32, 64};
    std::array<std::size_t, 3> convKernels{5, 5, 5};
    std::array<std::size_t, 3> fcWidths{512, 256, 1};
    static constexpr std::array<std::size_t, 3> poolWindows{2, 2, 1};

    /// 8x8 patch with two maps per layer, small enough for finite differences.
    static Architecture reduced()
    {
        Architecture a;
        a.patchSize = 8;
        a.convMaps = {2, 2, 2};
        a.convKernels = {3, 2, 1};
        a.fcWidths = {2, 2, 1};
        return a;
    }

    static constexpr std::size_t stride() { return poolWindows[0] * poolWindows[1] * poolWindows[2]; }

    /// Spatial side entering conv stage `stage` (0..2) in patch mode.
    std::size_t stage_input_side(std::size_t stage) const
    {
        std::size_t side = patchSize;
        for (std::size_t s = 0; s < stage; ++s)
            side = (side - convKernels[s] + 1 + poolWindows[s] - 1) / poolWindows[s];
        return side;
    }

    std::size_t conv_output_side(std::size_t stage) const
    {
        return stage_input_side(stage) - convKernels[stage] + 1;
    }

    /// Side of the top-level grid that is flattened into fc1.
    std::size_t final_grid() const { return stage_input_side(3); }

    std::size_t flattened_size() const { return convMaps[2] * final_grid() * final_grid(); }

    void validate() const
    {
        require(patchSize >= 1 && inputChannels >= 1, "architecture: patch size and channels must be positive");
        for (std::size_t s = 0; s < 3; ++s) {
            require(convMaps[s] >= 1 && convKernels[s] >= 1 && fcWidths[s] >= 1,
                    "architecture: stage ", s + 1, " has a zero-sized dimension");
            require(stage_input_side(s) >= convKernels[s], "architecture: conv", s + 1, " kernel ",
                    convKernels[s], " exceeds its ", stage_input_side(s), "-pixel input");
        }
        require(fcWidths[2] == 1, "architecture: final fully-connected stage must have 1 unit, got ", fcWidths[2]);
    }

    /// True when no pooling stage needs edge padding in patch mode, which is what
    /// makes whole-image evaluation agree with per-window evaluation.
    bool pooling_aligned() const
    {
        for (std::size_t s = 0; s < 3; ++s)
            if (conv_output_side(s) % poolWindows[s] != 0)
                return false;
        return true;
    }

    friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct DenseLayer {
    std::size_t outputs = 0;
    std::size_t inputs = 0;
    std::vector<double> weights; // outputs x inputs, row-major
    std::vector<double> bias;

    DenseLayer() = default;
    DenseLayer(std::size_t out, std::size_t in) : outputs(out), inputs(in), weights(out * in, 0.0), bias(out, 0.0) {}

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Learnable state of one part detector. Also used, zero-initialized, as the
/// gradient accumulator and optimizer moment storage.
struct NetworkParams {
    Architecture arch;
    std::array<KernelStack, 3> conv;
    std::array<DenseLayer, 3> fc;

    NetworkParams() : NetworkParams(Architecture{}) {}

    explicit NetworkParams(const Architecture& a) : arch(a)
    {
        arch.validate();
        std::size_t inMaps = arch.inputChannels;
        for (std::size_t s = 0; s < 3; ++s) {
            conv[s] = KernelStack(arch.convMaps[s], inMaps, arch.convKernels[s], arch.convKernels[s]);
            inMaps = arch.convMaps[s];
        }
        std::size_t inputs = arch.flattened_size();
        for (std::size_t s = 0; s < 3; ++s) {
            fc[s] = DenseLayer(arch.fcWidths[s], inputs);
            inputs = arch.fcWidths[s];
        }
    }

    /// Every parameter array in canonical order: conv{1,2,3} weights/bias, then fc{1,2,3} weights/bias.
    std::vector<std::span<double>> blocks()
    {
        std::vector<std::span<double>> out;
        for (auto& k : conv) {
            out.emplace_back(k.weights);
            out.emplace_back(k.bias);
        }
        for (auto& d : fc) {
            out.emplace_back(d.weights);
            out.emplace_back(d.bias);
        }
        return out;
    }

    std::vector<std::span<const double>> blocks() const
    {
        std::vector<std::span<const double>> out;
        for (const auto& k : conv) {
            out.emplace_back(k.weights);
            out.emplace_back(k.bias);
        }
        for (const auto& d : fc) {
            out.emplace_back(d.weights);
            out.emplace_back(d.bias);
        }
        return out;
    }

    std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for (const auto& b : blocks())
            n += b.size();
        return n;
    }

    bool same_layout(const NetworkParams& other) const { return arch == other.arch; }

    friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

using GradientSet = NetworkParams;

/// Adds `src` into `dst` element-wise.
inline void accumulate(GradientSet& dst, const GradientSet& src)
{
    require(dst.same_layout(src), "accumulate: gradient layouts differ");
    auto d = dst.blocks();
    const auto s = src.blocks();
    for (std::size_t b = 0; b < d.size(); ++b)
        for (std::size_t i = 0; i < d[b].size(); ++i)
            d[b][i] += s[b][i];
}

inline void scale_in_place(GradientSet& g, double factor)
{
    for (auto block : g.blocks())
        for (double& v : block)
            v *= factor;
}

/// Glorot-uniform weights in +-sqrt(6 / (fanIn + fanOut)), zero biases.
inline NetworkParams init_params(std::uint64_t seed, const Architecture& arch)
{
    NetworkParams p(arch);
    Rng rng(seed);
    for (auto& k : p.conv) {
        const double area = static_cast<double>(k.kernelHeight * k.kernelWidth);
        const double limit = std::sqrt(6.0 / (static_cast<double>(k.inMaps + k.outMaps) * area));
        for (double& w : k.weights)
            w = uniform(rng, -limit, limit);
    }
    for (auto& d : p.fc) {
        const double limit = std::sqrt(6.0 / static_cast<double>(d.inputs + d.outputs));
        for (double& w : d.weights)
            w = uniform(rng, -limit, limit);
    }
    return p;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Binary cross-entropy of a logistic unit, computed from the logit.
inline double bce_from_logit(double logit, double target)
{
    const double softplus = logit > 0.0 ? logit + std::log1p(std::exp(-logit)) : std::log1p(std::exp(logit));
    return softplus - target * logit;
}

/// Inverted dropout on the input of each fully-connected stage.
struct DropoutSpec {
    double rate = 0.0;
    std::uint64_t seed = 0;
};

struct ForwardTrace {
    ImagePlane input;
    std::array<ImagePlane, 3> convPre;
    std::array<ImagePlane, 3> convAct;
    std::array<PoolResult, 3> pooled;
    std::array<std::vector<double>, 3> fcInput; // after dropout
    std::array<std::vector<double>, 3> dropoutMask; // empty when dropout is off
    std::array<std::vector<double>, 3> fcPre;
    double logit = 0.0;
    double probability = 0.5;
};

struct DropoutResult {
    std::vector<double> values;
    std::vector<double> mask;
};

/// Zeroes each unit with probability `rate` and scales survivors by 1/(1-rate).
inline DropoutResult apply_dropout(std::span<const double> activations, double rate, Rng& rng)
{
    require(rate >= 0.0 && rate < 1.0, "apply_dropout: rate must lie in [0,1), got ", rate);
    DropoutResult r{std::vector<double>(activations.begin(), activations.end()),
                    std::vector<double>(activations.size(), 1.0)};
    if (rate == 0.0)
        return r;
    const double keep = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < activations.size(); ++i) {
        r.mask[i] = uniform(rng) < rate ? 0.0 : keep;
        r.values[i] *= r.mask[i];
    }
    return r;
}

namespace detail {

inline void relu_in_place(ImagePlane& p)
{
    for (double& v : p.data())
        v = v > 0.0 ? v : 0.0;
}

inline std::vector<double> dense_forward(const DenseLayer& layer, std::span<const double> in)
{
    std::vector<double> out(layer.outputs);
    for (std::size_t o = 0; o < layer.outputs; ++o) {
        const double* w = &layer.weights[o * layer.inputs];
        double acc = layer.bias[o];
        for (std::size_t i = 0; i < layer.inputs; ++i)
            acc += w[i] * in[i];
        out[o] = acc;
    }
    return out;
}

} // namespace detail

/// Patch-mode forward pass. `patch` must already be LCN-processed. Passing a
/// dropout spec with a positive rate enables training-mode masking.
inline ForwardTrace forward_patch(const NetworkParams& params, const ImagePlane& patch,
                                  const DropoutSpec& dropout = {})
{
    const Architecture& a = params.arch;
    require(patch.height() == a.patchSize && patch.width() == a.patchSize && patch.channels() == a.inputChannels,
            "forward_patch: expected a ", ImagePlane::shape_string(a.patchSize, a.patchSize, a.inputChannels),
            " patch, got ", patch.shape());

    ForwardTrace t;
    t.input = patch;
    const ImagePlane* stageInput = &t.input;
    for (std::size_t s = 0; s < 3; ++s) {
        t.convPre[s] = conv2d_valid(*stageInput, params.conv[s]);
        t.convAct[s] = t.convPre[s];
        detail::relu_in_place(t.convAct[s]);
        t.pooled[s] = maxpool(t.convAct[s], Architecture::poolWindows[s]);
        stageInput = &t.pooled[s].output;
    }

    Rng rng(dropout.seed);
    std::vector<double> x(stageInput->data().begin(), stageInput->data().end());
    for (std::size_t s = 0; s < 3; ++s) {
        if (dropout.rate > 0.0) {
            auto d = apply_dropout(x, dropout.rate, rng);
            t.fcInput[s] = std::move(d.values);
            t.dropoutMask[s] = std::move(d.mask);
        } else {
            t.fcInput[s] = std::move(x);
        }
        t.fcPre[s] = detail::dense_forward(params.fc[s], t.fcInput[s]);
        x = t.fcPre[s];
        if (s < 2)
            for (double& v : x)
                v = v > 0.0 ? v : 0.0;
    }
    t.logit = t.fcPre[2][0];
    t.probability = logistic(t.logit);
    return t;
}

/// Adds dL/dtheta for one example into `grads`, L being the binary
/// cross-entropy against `target`. Returns the example's loss.
inline double accumulate_backward(const NetworkParams& params, const ForwardTrace& trace, double target,
                                  GradientSet& grads)
{
    const Architecture& a = params.arch;
    require(grads.same_layout(params), "backward: gradient set layout differs from params");
    require(trace.input.height() == a.patchSize && trace.fcPre[2].size() == 1 &&
                trace.convPre[0].channels() == a.convMaps[0] && trace.convPre[2].channels() == a.convMaps[2] &&
                trace.fcInput[0].size() == a.flattened_size() && trace.fcPre[0].size() == a.fcWidths[0] &&
                trace.fcPre[1].size() == a.fcWidths[1],
            "backward: trace does not match the parameter architecture");

    // Fully-connected stages, top down.
    std::vector<double> delta{trace.probability - target};
    std::vector<double> gradIn;
    for (std::size_t s = 3; s-- > 0;) {
        const DenseLayer& layer = params.fc[s];
        DenseLayer& g = grads.fc[s];
        const auto& in = trace.fcInput[s];
        gradIn.assign(layer.inputs, 0.0);
        for (std::size_t o = 0; o < layer.outputs; ++o) {
            const double d = delta[o];
            g.bias[o] += d;
            if (d == 0.0)
                continue;
            double* gw = &g.weights[o * layer.inputs];
            const double* w = &layer.weights[o * layer.inputs];
            for (std::size_t i = 0; i < layer.inputs; ++i) {
                gw[i] += d * in[i];
                gradIn[i] += d * w[i];
            }
        }
        if (!trace.dropoutMask[s].empty())
            for (std::size_t i = 0; i < gradIn.size(); ++i)
                gradIn[i] *= trace.dropoutMask[s][i];
        if (s > 0) {
            const auto& pre = trace.fcPre[s - 1];
            for (std::size_t i = 0; i < gradIn.size(); ++i)
                if (!(pre[i] > 0.0))
                    gradIn[i] = 0.0;
        }
        delta = gradIn;
    }

    // delta now holds dL/d(flattened top pooled map).
    const ImagePlane& top = trace.pooled[2].output;
    ImagePlane gradPooled(top.height(), top.width(), top.channels(), std::move(delta));
    for (std::size_t s = 3; s-- > 0;) {
        ImagePlane gradAct = maxpool_backward(gradPooled, trace.pooled[s].argmax);
        const auto pre = trace.convPre[s].data();
        auto ga = gradAct.data();
        for (std::size_t i = 0; i < ga.size(); ++i)
            if (!(pre[i] > 0.0))
                ga[i] = 0.0;
        const ImagePlane& stageInput = s == 0 ? trace.input : trace.pooled[s - 1].output;
        if (s > 0) {
            ImagePlane gradInput(stageInput.height(), stageInput.width(), stageInput.channels());
            conv2d_valid_backward(stageInput, params.conv[s], 1, gradAct, grads.conv[s], &gradInput);
            gradPooled = std::move(gradInput);
        } else {
            conv2d_valid_backward(stageInput, params.conv[s], 1, gradAct, grads.conv[s], nullptr);
        }
    }
    return bce_from_logit(trace.logit, target);
}

inline GradientSet backward(const NetworkParams& params, const ForwardTrace& trace, double target)
{
    GradientSet g(params.arch);
    accumulate_backward(params, trace, target, g);
    return g;
}

// ---------------------------------------------------------------------------
// Fully-convolutional application
// ---------------------------------------------------------------------------

/// Per-joint detector confidence over stride-aligned windows of a scaled image.
struct ResponseMap {
    ImagePlane probs;
    double scale = 1.0;
    double originRow = 0.0; // scaled-image pixel of cell (0, 0)
    double originCol = 0.0;
    std::size_t strideInPixels = Architecture::stride();
    std::size_t sourceHeight = 0; // original image size, pixels
    std::size_t sourceWidth = 0;

    /// Original-image pixel (x, y) of grid cell (r, c).
    std::array<double, 2> to_image(std::size_t r, std::size_t c) const
    {
        return {(originCol + static_cast<double>(c * strideInPixels)) / scale,
                (originRow + static_cast<double>(r * strideInPixels)) / scale};
    }

    bool same_geometry(const ResponseMap& o) const
    {
        return probs.height() == o.probs.height() && probs.width() == o.probs.width() && scale == o.scale &&
               originRow == o.originRow && originCol == o.originCol && strideInPixels == o.strideInPixels;
    }
};

/// Applies the network to every stride-aligned window of `image` in one pass.
/// Cell (r, c) equals forward_patch on the window whose top-left pixel is
/// (stride*r, stride*c); its location is that window's center.
inline ResponseMap forward_full(const NetworkParams& params, const ImagePlane& image, double scale = 1.0,
                                std::size_t sourceHeight = 0, std::size_t sourceWidth = 0)
{
    const Architecture& a = params.arch;
    require(image.channels() == a.inputChannels && image.height() >= a.patchSize && image.width() >= a.patchSize,
            "forward_full: image ", image.shape(), " smaller than the ", a.patchSize, "x", a.patchSize,
            " patch or wrong channel count");
    require(a.pooling_aligned(), "forward_full: architecture pooling is not window-aligned");

    ImagePlane x = image;
    for (std::size_t s = 0; s < 3; ++s) {
        ImagePlane act = conv2d_valid(x, params.conv[s]);
        detail::relu_in_place(act);
        x = Architecture::poolWindows[s] > 1 ? maxpool(act, Architecture::poolWindows[s]).output : std::move(act);
    }

    // fc1 as a valid convolution over the top grid footprint, fc2/fc3 as 1x1.
    const std::size_t g = a.final_grid();
    for (std::size_t s = 0; s < 3; ++s) {
        const DenseLayer& d = params.fc[s];
        const std::size_t side = s == 0 ? g : 1;
        KernelStack k(d.outputs, d.inputs / (side * side), side, side);
        k.weights = d.weights;
        k.bias = d.bias;
        x = conv2d_valid(x, k);
        if (s < 2)
            detail::relu_in_place(x);
    }

    const std::size_t stride = Architecture::stride();
    const std::size_t rows = (image.height() - a.patchSize) / stride + 1;
    const std::size_t cols = (image.width() - a.patchSize) / stride + 1;
    ResponseMap map;
    map.probs = ImagePlane(rows, cols, 1);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            map.probs.at(r, c) = logistic(x(0, r, c));
    map.scale = scale;
    map.originRow = map.originCol = (static_cast<double>(a.patchSize) - 1.0) / 2.0;
    map.strideInPixels = stride;
    map.sourceHeight = sourceHeight ? sourceHeight
                                    : static_cast<std::size_t>(std::lround(static_cast<double>(image.height()) / scale));
    map.sourceWidth = sourceWidth ? sourceWidth
                                  : static_cast<std::size_t>(std::lround(static_cast<double>(image.width()) / scale));
    return map;
}

} // namespace posegraph
