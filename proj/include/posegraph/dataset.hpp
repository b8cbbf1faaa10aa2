#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "posegraph/convnet.hpp"
#include "posegraph/error.hpp"
#include "posegraph/image_io.hpp"
#include "posegraph/parallel.hpp"
#include "posegraph/pose_types.hpp"
#include "posegraph/rng.hpp"
#include "posegraph/tensor_ops.hpp"

namespace posegraph {

enum class Split { Train, Test };

inline std::string_view split_name(Split s) { return s == Split::Train ? "train" : "test"; }

struct HeadBox {
    double x = 0, y = 0, w = 0, h = 0;
    friend bool operator==(const HeadBox&, const HeadBox&) = default;
};

struct PoseExample {
    std::string imagePath;
    Split split = Split::Train;
    HeadBox headBox;
    JointSet joints;

    friend bool operator==(const PoseExample&, const PoseExample&) = default;
};

// ---------------------------------------------------------------------------
// Annotation file
//
//   posegraph-annotations v1
//   imagePath,split,hx,hy,hw,hh,face_x,face_y,lsho_x,lsho_y,...,rwri_x,rwri_y
//
// Missing joints are written as nan,nan. Numbers use the shortest decimal form
// that round-trips, so writer and reader are bit-exact.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kAnnotationHeader = "posegraph-annotations v1";

namespace detail {

inline std::string format_double(double v)
{
    if (std::isnan(v))
        return "nan";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::vector<std::string_view> split_fields(std::string_view line, char sep = ',')
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos)
            break;
        start = pos + 1;
    }
    return out;
}

inline bool parse_double(std::string_view s, double& out)
{
    if (s == "nan") {
        out = std::numeric_limits<double>::quiet_NaN();
        return true;
    }
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

inline std::string annotation_field_name(std::size_t f)
{
    static constexpr std::array<std::string_view, 6> fixed{"imagePath", "split", "head_x", "head_y", "head_w", "head_h"};
    if (f < fixed.size())
        return std::string(fixed[f]);
    const std::size_t j = (f - fixed.size()) / 2;
    return std::string(kJointNames[j]) + ((f - fixed.size()) % 2 == 0 ? "_x" : "_y");
}

} // namespace detail

inline std::string format_annotations(std::span<const PoseExample> examples)
{
    std::string out(kAnnotationHeader);
    out += '\n';
    for (const auto& ex : examples) {
        require(ex.imagePath.find_first_of(",\n") == std::string::npos, "annotation image path '", ex.imagePath,
                "' contains a comma or newline");
        out += ex.imagePath;
        out += ',';
        out += split_name(ex.split);
        for (double v : {ex.headBox.x, ex.headBox.y, ex.headBox.w, ex.headBox.h}) {
            out += ',';
            out += detail::format_double(v);
        }
        for (const auto& p : ex.joints) {
            out += ',';
            out += detail::format_double(p.x);
            out += ',';
            out += detail::format_double(p.y);
        }
        out += '\n';
    }
    return out;
}

inline void save_annotations(const std::string& path, std::span<const PoseExample> examples)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw DataError("cannot open '" + path + "' for writing");
    out << format_annotations(examples);
    if (!out)
        throw DataError("failed writing '" + path + "'");
}

/// Structural parse without touching image files. `source` names the input in errors.
inline std::vector<PoseExample> parse_annotations(std::string_view text, const std::string& source = "<annotations>")
{
    std::vector<PoseExample> examples;
    std::size_t lineNo = 0;
    std::size_t pos = 0;
    bool sawHeader = false;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos)
            end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++lineNo;
        if (!line.empty() && line.back() == '\r')
            line.remove_suffix(1);
        if (!sawHeader) {
            if (line != kAnnotationHeader)
                throw DataError(detail::concat(source, ":", lineNo, ": expected header '", kAnnotationHeader,
                                               "', got '", line, "'"));
            sawHeader = true;
            continue;
        }
        if (line.empty())
            continue;

        const auto fields = detail::split_fields(line);
        constexpr std::size_t expected = 6 + 2 * kJointCount;
        if (fields.size() != expected)
            throw DataError(detail::concat(source, ":", lineNo, ": expected ", expected, " fields, got ", fields.size()));

        PoseExample ex;
        ex.imagePath = std::string(fields[0]);
        if (ex.imagePath.empty())
            throw DataError(detail::concat(source, ":", lineNo, ": field imagePath is empty"));
        if (fields[1] == "train")
            ex.split = Split::Train;
        else if (fields[1] == "test")
            ex.split = Split::Test;
        else
            throw DataError(detail::concat(source, ":", lineNo, ": field split must be train or test, got '",
                                           fields[1], "'"));
        std::array<double, expected - 2> values{};
        for (std::size_t f = 2; f < expected; ++f)
            if (!detail::parse_double(fields[f], values[f - 2]))
                throw DataError(detail::concat(source, ":", lineNo, ": field ", detail::annotation_field_name(f),
                                               " is not a number: '", fields[f], "'"));
        ex.headBox = {values[0], values[1], values[2], values[3]};
        for (std::size_t j = 0; j < kJointCount; ++j) {
            ex.joints[j] = {values[4 + 2 * j], values[5 + 2 * j]};
            if (std::isnan(ex.joints[j].x) != std::isnan(ex.joints[j].y) || std::isinf(ex.joints[j].x) ||
                std::isinf(ex.joints[j].y))
                throw DataError(detail::concat(source, ":", lineNo, ": joint ", kJointNames[j],
                                               " must have two finite coordinates or nan,nan"));
        }
        if (!(ex.headBox.w > 0.0 && ex.headBox.h > 0.0) || !std::isfinite(ex.headBox.x) ||
            !std::isfinite(ex.headBox.y))
            throw DataError(detail::concat(source, ":", lineNo, ": field head_w/head_h must describe a positive-area box"));
        examples.push_back(std::move(ex));
    }
    if (!sawHeader)
        throw DataError(source + ": missing header line");
    return examples;
}

/// Image paths are resolved relative to the annotation file's directory.
inline std::string resolve_image_path(const std::string& annotationPath, const std::string& imagePath)
{
    const std::filesystem::path p(imagePath);
    if (p.is_absolute())
        return imagePath;
    return (std::filesystem::path(annotationPath).parent_path() / p).string();
}

struct LoadOptions {
    bool checkImageBounds = true;
};

/// Parses and validates an annotation file. With bounds checking on, each
/// image header is read and every annotated joint must lie inside the image.
inline std::vector<PoseExample> load_annotations(const std::string& path, const LoadOptions& opts = {})
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open annotation file '" + path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    auto examples = parse_annotations(buffer.str(), path);
    if (opts.checkImageBounds) {
        for (std::size_t i = 0; i < examples.size(); ++i) {
            const auto& ex = examples[i];
            const ImageSize size = probe_image_size(resolve_image_path(path, ex.imagePath));
            for (std::size_t j = 0; j < kJointCount; ++j) {
                const Point2& p = ex.joints[j];
                if (!p.valid())
                    continue;
                if (p.x < 0.0 || p.y < 0.0 || p.x > static_cast<double>(size.width - 1) ||
                    p.y > static_cast<double>(size.height - 1))
                    throw DataError(detail::concat(path, ":", i + 2, ": joint ", kJointNames[j], " at (", p.x, ", ",
                                                   p.y, ") outside image bounds ", size.width, "x", size.height));
            }
        }
    }
    return examples;
}

// ---------------------------------------------------------------------------
// Canonical-frame normalization
// ---------------------------------------------------------------------------

struct NormalizeConfig {
    double headHeight = 50.0;
    std::size_t frameWidth = 320;
    std::size_t frameHeight = 240;
    Point2 shoulderAnchor{160.0, 80.0};
};

struct NormalizedExample {
    ImagePlane image; // frameHeight x frameWidth x 3
    JointSet joints;  // frame pixels
    double scaleApplied = 1.0;
    Point2 cropOffset{0.0, 0.0}; // frame = scale * source - cropOffset
    std::size_t sourceIndex = 0;
    bool mirrored = false;
};

inline Point2 source_to_frame(const Point2& p, double scale, const Point2& offset)
{
    return {scale * p.x - offset.x, scale * p.y - offset.y};
}

inline Point2 frame_to_source(const Point2& p, double scale, const Point2& offset)
{
    return {(p.x + offset.x) / scale, (p.y + offset.y) / scale};
}

/// Similarity transform taking the head box to the canonical height and the
/// shoulder midpoint to the anchor, followed by a single bilinear resample into
/// the frame. Pixels outside the source are zero.
inline NormalizedExample normalize_example(const PoseExample& ex, const ImagePlane& image,
                                           const NormalizeConfig& cfg = {})
{
    if (!(ex.headBox.h > 0.0 && ex.headBox.w > 0.0))
        throw DataError(detail::concat("normalize: degenerate head box for '", ex.imagePath, "'"));
    const Point2& ls = ex.joints[index(Joint::LSho)];
    const Point2& rs = ex.joints[index(Joint::RSho)];
    if (!ls.valid() || !rs.valid())
        throw DataError(detail::concat("normalize: '", ex.imagePath, "' lacks shoulder annotations"));

    NormalizedExample out;
    out.scaleApplied = cfg.headHeight / ex.headBox.h;
    const double s = out.scaleApplied;
    const Point2 mid{(ls.x + rs.x) / 2.0, (ls.y + rs.y) / 2.0};
    out.cropOffset = {s * mid.x - cfg.shoulderAnchor.x, s * mid.y - cfg.shoulderAnchor.y};
    out.image = ImagePlane(cfg.frameHeight, cfg.frameWidth, image.channels());
    for (std::size_t c = 0; c < image.channels(); ++c)
        for (std::size_t v = 0; v < cfg.frameHeight; ++v) {
            const double sy = (static_cast<double>(v) + out.cropOffset.y) / s;
            for (std::size_t u = 0; u < cfg.frameWidth; ++u)
                out.image(c, v, u) = sample_bilinear(image, c, sy, (static_cast<double>(u) + out.cropOffset.x) / s);
        }
    for (std::size_t j = 0; j < kJointCount; ++j)
        out.joints[j] = ex.joints[j].valid() ? source_to_frame(ex.joints[j], s, out.cropOffset) : Point2{};
    return out;
}

/// Frame-space joints of `ex` without resampling its image.
inline JointSet normalize_joints(const PoseExample& ex, const NormalizeConfig& cfg = {})
{
    if (!(ex.headBox.h > 0.0 && ex.headBox.w > 0.0))
        throw DataError(detail::concat("normalize: degenerate head box for '", ex.imagePath, "'"));
    const Point2& ls = ex.joints[index(Joint::LSho)];
    const Point2& rs = ex.joints[index(Joint::RSho)];
    if (!ls.valid() || !rs.valid())
        throw DataError(detail::concat("normalize: '", ex.imagePath, "' lacks shoulder annotations"));
    const double s = cfg.headHeight / ex.headBox.h;
    const Point2 offset{s * (ls.x + rs.x) / 2.0 - cfg.shoulderAnchor.x, s * (ls.y + rs.y) / 2.0 - cfg.shoulderAnchor.y};
    JointSet out;
    for (std::size_t j = 0; j < kJointCount; ++j)
        out[j] = ex.joints[j].valid() ? source_to_frame(ex.joints[j], s, offset) : Point2{};
    return out;
}

inline JointSet mirror_joints(const JointSet& joints, std::size_t frameWidth)
{
    JointSet out;
    for (Joint j : kAllJoints) {
        const Point2& p = joints[index(j)];
        out[index(mirror_partner(j))] = p.valid() ? Point2{static_cast<double>(frameWidth - 1) - p.x, p.y} : Point2{};
    }
    return out;
}

/// Horizontal flip with left/right labels exchanged.
inline NormalizedExample mirror_example(const NormalizedExample& ex)
{
    NormalizedExample out = ex;
    out.mirrored = !ex.mirrored;
    const std::size_t W = ex.image.width();
    for (std::size_t c = 0; c < ex.image.channels(); ++c)
        for (std::size_t y = 0; y < ex.image.height(); ++y)
            for (std::size_t x = 0; x < W; ++x)
                out.image(c, y, x) = ex.image(c, y, W - 1 - x);
    out.joints = mirror_joints(ex.joints, W);
    return out;
}

/// Appends the mirror of every example (n inputs -> 2n outputs).
inline std::vector<NormalizedExample> with_mirrors(std::vector<NormalizedExample> examples)
{
    const std::size_t n = examples.size();
    examples.reserve(2 * n);
    for (std::size_t i = 0; i < n; ++i)
        examples.push_back(mirror_example(examples[i]));
    return examples;
}

// ---------------------------------------------------------------------------
// Patch sampling
// ---------------------------------------------------------------------------

struct PatchConfig {
    std::size_t patchSize = 64;
    double positiveRadius = 3.0;
    std::size_t negPerPos = 2;
    double minNegDistance = 20.0;
    std::uint64_t seed = 1;
    LcnConfig lcn;
};

struct PatchSet {
    std::vector<PatchSample> samples;
    std::size_t skippedExamples = 0; // joint missing or too close to the border
};

/// Copies the patch whose top-left pixel is (left, top).
inline ImagePlane crop(const ImagePlane& img, std::size_t top, std::size_t left, std::size_t size)
{
    require(top + size <= img.height() && left + size <= img.width(), "crop: window at (", top, ", ", left,
            ") of size ", size, " exceeds image ", img.shape());
    ImagePlane out(size, size, img.channels());
    for (std::size_t c = 0; c < img.channels(); ++c)
        for (std::size_t y = 0; y < size; ++y)
            std::copy_n(&img(c, top + y, left), size, &out(c, y, 0));
    return out;
}

/// One positive (jittered within positiveRadius) and negPerPos negatives (at
/// least minNegDistance from the joint) per example, cropped from the
/// LCN-processed frame. A patch's center is its top-left plus (size-1)/2.
inline PatchSet sample_patches(std::span<const NormalizedExample> examples, Joint joint, const PatchConfig& cfg,
                               std::size_t workers = 1)
{
    require(cfg.patchSize >= 1 && cfg.positiveRadius >= 0.0 && cfg.minNegDistance > cfg.positiveRadius,
            "sample_patches: need minNegDistance > positiveRadius >= 0");
    const double half = (static_cast<double>(cfg.patchSize) - 1.0) / 2.0;
    std::vector<std::vector<PatchSample>> perExample(examples.size());
    std::vector<int> skipped(examples.size(), 0);

    parallel_for(examples.size(), workers, [&](std::size_t e) {
        const NormalizedExample& ex = examples[e];
        const Point2 truth = ex.joints[index(joint)];
        const std::size_t H = ex.image.height(), W = ex.image.width();
        if (!truth.valid() || H < cfg.patchSize || W < cfg.patchSize) {
            skipped[e] = 1;
            return;
        }
        const long maxTop = static_cast<long>(H - cfg.patchSize), maxLeft = static_cast<long>(W - cfg.patchSize);
        const long baseTop = std::lround(truth.y - half), baseLeft = std::lround(truth.x - half);
        if (baseTop < 0 || baseLeft < 0 || baseTop > maxTop || baseLeft > maxLeft) {
            skipped[e] = 1;
            return;
        }

        Rng rng(mix_seed(cfg.seed, 2 * ex.sourceIndex + (ex.mirrored ? 1 : 0)));
        const ImagePlane normalized = lcn(ex.image, cfg.lcn);
        auto make = [&](long top, long left, int label) {
            PatchSample s;
            s.patch = crop(normalized, static_cast<std::size_t>(top), static_cast<std::size_t>(left), cfg.patchSize);
            s.label = label;
            s.joint = joint;
            s.sourceExample = ex.sourceIndex;
            s.center = {static_cast<double>(left) + half, static_cast<double>(top) + half};
            s.truth = truth;
            return s;
        };

        // Positive: integer jitter, rejected until the center is within the radius.
        const long reach = static_cast<long>(std::ceil(cfg.positiveRadius)) + 1;
        long top = baseTop, left = baseLeft;
        if (distance({static_cast<double>(left) + half, static_cast<double>(top) + half}, truth) > cfg.positiveRadius) {
            skipped[e] = 1;
            return;
        }
        for (int attempt = 0; attempt < 64; ++attempt) {
            const long t = baseTop + static_cast<long>(uniform_index(rng, 2 * reach + 1)) - reach;
            const long l = baseLeft + static_cast<long>(uniform_index(rng, 2 * reach + 1)) - reach;
            const Point2 c{static_cast<double>(l) + half, static_cast<double>(t) + half};
            if (t >= 0 && l >= 0 && t <= maxTop && l <= maxLeft && distance(c, truth) <= cfg.positiveRadius) {
                top = t;
                left = l;
                break;
            }
        }
        auto& out = perExample[e];
        out.push_back(make(top, left, 1));

        for (std::size_t n = 0; n < cfg.negPerPos; ++n) {
            for (int attempt = 0; attempt < 1000; ++attempt) {
                const long t = static_cast<long>(uniform_index(rng, static_cast<std::size_t>(maxTop) + 1));
                const long l = static_cast<long>(uniform_index(rng, static_cast<std::size_t>(maxLeft) + 1));
                const Point2 c{static_cast<double>(l) + half, static_cast<double>(t) + half};
                if (distance(c, truth) >= cfg.minNegDistance) {
                    out.push_back(make(t, l, 0));
                    break;
                }
            }
        }
    });

    PatchSet set;
    for (std::size_t e = 0; e < examples.size(); ++e) {
        set.skippedExamples += static_cast<std::size_t>(skipped[e]);
        for (auto& s : perExample[e])
            set.samples.push_back(std::move(s));
    }
    return set;
}

} // namespace posegraph
