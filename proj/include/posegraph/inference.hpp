#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "posegraph/convnet.hpp"
#include "posegraph/dataset.hpp"
#include "posegraph/error.hpp"
#include "posegraph/parallel.hpp"
#include "posegraph/pose_types.hpp"
#include "posegraph/spatial_model.hpp"
#include "posegraph/tensor_ops.hpp"

namespace posegraph {

/// Geometric pyramid 1.25 * 1.15^-k, k = 0..5.
inline std::vector<double> default_scales()
{
    std::vector<double> s;
    for (int k = 0; k < 6; ++k)
        s.push_back(1.25 * std::pow(1.15, -k));
    return s;
}

struct ScaleConfig {
    std::vector<double> scales = default_scales();

    void validate() const
    {
        if (scales.empty())
            throw ConfigError("scale config: no scales");
        for (std::size_t i = 0; i < scales.size(); ++i) {
            if (!(scales[i] > 0.0) || !std::isfinite(scales[i]))
                throw ConfigError(detail::concat("scale config: scale ", scales[i], " is not positive"));
            if (i > 0 && !(scales[i] < scales[i - 1]))
                throw ConfigError("scale config: scales must be strictly decreasing");
        }
    }
};

struct PyramidLevel {
    ImagePlane image; // resized and LCN-processed
    double scale = 1.0;
};

struct Pyramid {
    std::vector<PyramidLevel> levels;
    std::size_t dropped = 0; // scales whose image fell below the patch size
};

/// Bilinear rescale then LCN per level. Levels smaller than `minSide` are
/// dropped; an empty pyramid is an error.
inline Pyramid build_pyramid(const ImagePlane& image, const ScaleConfig& cfg, std::size_t minSide = 64,
                             const LcnConfig& lcnCfg = {})
{
    cfg.validate();
    Pyramid p;
    for (double s : cfg.scales) {
        ImagePlane scaled = resize_by_scale(image, s);
        if (scaled.height() < minSide || scaled.width() < minSide || scaled.height() < lcnCfg.window ||
            scaled.width() < lcnCfg.window) {
            ++p.dropped;
            continue;
        }
        p.levels.push_back({lcn(scaled, lcnCfg), s});
    }
    if (p.levels.empty())
        throw DataError(detail::concat("image ", image.shape(), " is smaller than the ", minSide, "-pixel patch at every scale"));
    return p;
}

struct Detection {
    Joint joint = Joint::Face;
    Point2 position; // original-image pixels
    double confidence = 0.0;
    double scale = 1.0;

    friend bool operator==(const Detection&, const Detection&) = default;
};

/// One trained detector per chain part, in Part order.
using PartModels = std::array<NetworkParams, kPartCount>;

struct NmsConfig {
    double windowRadius = 20.0;
    std::size_t topN = 1;

    void validate() const
    {
        if (!(windowRadius >= 1.0) || topN < 1)
            throw ConfigError("nms config: need windowRadius >= 1 and topN >= 1");
    }
};

namespace detail {

inline Point2 clamp_to_image(std::array<double, 2> xy, std::size_t height, std::size_t width)
{
    return {std::clamp(xy[0], 0.0, static_cast<double>(width) - 1.0),
            std::clamp(xy[1], 0.0, static_cast<double>(height) - 1.0)};
}

inline Detection cell_detection(const ResponseMap& map, Joint joint, std::size_t r, std::size_t c)
{
    return {joint, clamp_to_image(map.to_image(r, c), map.sourceHeight, map.sourceWidth), map.probs.at(r, c),
            map.scale};
}

} // namespace detail

/// Highest cell of `map`; ties go to the lowest row-major index.
inline std::size_t argmax_cell(const ResponseMap& map)
{
    const auto d = map.probs.data();
    return static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
}

/// Detection at the argmax of `select`, reporting the value of `confidence`
/// (same grid) at that cell.
inline Detection argmax_detection(const ResponseMap& select, const ResponseMap& confidence, Joint joint)
{
    require(select.same_geometry(confidence), "argmax_detection: maps differ in geometry");
    const std::size_t best = argmax_cell(select);
    Detection d = detail::cell_detection(select, joint, best / select.probs.width(), best % select.probs.width());
    d.confidence = confidence.probs.data()[best];
    return d;
}

inline Detection argmax_detection(const ResponseMap& map, Joint joint) { return argmax_detection(map, map, joint); }

/// Greedy peak picking on `select`: take the largest remaining cell, drop
/// every cell within windowRadius original-image pixels of it, repeat until
/// topN peaks are found or the remaining maximum is not positive. Confidences
/// are read from `confidence` when given.
inline std::vector<Detection> nms_peaks(const ResponseMap& select, const NmsConfig& cfg, Joint joint = Joint::Face,
                                        const ResponseMap* confidence = nullptr)
{
    cfg.validate();
    if (confidence)
        require(select.same_geometry(*confidence), "nms_peaks: maps differ in geometry");
    const std::size_t H = select.probs.height(), W = select.probs.width();
    const auto v = select.probs.data();
    std::vector<char> alive(H * W, 1);
    std::vector<Detection> out;
    while (out.size() < cfg.topN) {
        std::size_t best = H * W;
        for (std::size_t i = 0; i < H * W; ++i)
            if (alive[i] && (best == H * W || v[i] > v[best]))
                best = i;
        if (best == H * W || !(v[best] > 0.0))
            break;
        const auto [bx, by] = select.to_image(best / W, best % W);
        for (std::size_t i = 0; i < H * W; ++i) {
            const auto [x, y] = select.to_image(i / W, i % W);
            if (std::hypot(x - bx, y - by) <= cfg.windowRadius)
                alive[i] = 0;
        }
        Detection d = detail::cell_detection(select, joint, best / W, best % W);
        if (confidence)
            d.confidence = confidence->probs.data()[best];
        out.push_back(d);
    }
    return out;
}

struct ScaleMaps {
    double scale = 1.0;
    PartMaps unary;    // raw detector probabilities
    PartMaps filtered; // spatial model output, unit mass per part
    PartMaps baseline; // unaries normalized to unit mass (no spatial model)
};

struct DetectOptions {
    ScaleConfig scales;
    SpatialConfig spatial;
    LcnConfig lcn;
    std::size_t workers = 1;
};

/// Runs every part detector and both filtering variants at each pyramid level.
inline std::vector<ScaleMaps> response_pyramid(const ImagePlane& image, const PartModels& models,
                                               const PriorBundle& priors, const DetectOptions& opt)
{
    const Architecture& arch = models[0].arch;
    for (const auto& m : models)
        require(m.arch.patchSize == arch.patchSize, "detect: part detectors use different patch sizes");
    const Pyramid pyramid = build_pyramid(image, opt.scales, arch.patchSize, opt.lcn);
    std::vector<ScaleMaps> out(pyramid.levels.size());
    parallel_for(out.size(), opt.workers, [&](std::size_t l) {
        const PyramidLevel& level = pyramid.levels[l];
        ScaleMaps& sm = out[l];
        sm.scale = level.scale;
        for (std::size_t p = 0; p < kPartCount; ++p)
            sm.unary[p] = forward_full(models[p], level.image, level.scale, image.height(), image.width());
        // The detectors fire where the figure is at canonical size, so the
        // canonical-frame priors apply unscaled at every level.
        sm.filtered = filter_responses(sm.unary, priors.on_grid(1.0, Architecture::stride()), priors.face, opt.spatial);
        sm.baseline = sm.unary;
        PartPlanes planes;
        for (std::size_t p = 0; p < kPartCount; ++p)
            planes[p] = sm.unary[p].probs;
        const PartPlanes normalized = normalize_unaries(planes);
        for (std::size_t p = 0; p < kPartCount; ++p)
            sm.baseline[p].probs = normalized[p];
    });
    return out;
}

struct PartDetections {
    std::array<Detection, kPartCount> spatial;
    std::array<Detection, kPartCount> unaryOnly;
};

/// Per scale, each part's location is the argmax of its filtered map (or of
/// its normalized unary for the baseline) and its confidence is the detector
/// probability at that cell. Across scales the most confident location wins;
/// scales are visited in pyramid order and a later one must be strictly
/// better.
inline PartDetections select_across_scales(const std::vector<ScaleMaps>& maps)
{
    require(!maps.empty(), "select_across_scales: no scales");
    PartDetections out;
    for (std::size_t p = 0; p < kPartCount; ++p) {
        const Joint j = kChainJoints[p];
        for (std::size_t s = 0; s < maps.size(); ++s) {
            const Detection f = argmax_detection(maps[s].filtered[p], maps[s].unary[p], j);
            const Detection u = argmax_detection(maps[s].baseline[p], maps[s].unary[p], j);
            if (s == 0 || f.confidence > out.spatial[p].confidence)
                out.spatial[p] = f;
            if (s == 0 || u.confidence > out.unaryOnly[p].confidence)
                out.unaryOnly[p] = u;
        }
    }
    return out;
}

inline PartDetections detect(const ImagePlane& image, const PartModels& models, const PriorBundle& priors,
                             const DetectOptions& opt = {})
{
    return select_across_scales(response_pyramid(image, models, priors, opt));
}

/// Multi-person variant: NMS on each scale's filtered map, then a greedy
/// merge of all candidates across scales, by detector confidence, with the
/// same suppression radius.
inline std::array<std::vector<Detection>, kPartCount> detect_multi(const ImagePlane& image, const PartModels& models,
                                                                   const PriorBundle& priors, const NmsConfig& nms,
                                                                   const DetectOptions& opt = {}, bool spatial = true)
{
    const auto maps = response_pyramid(image, models, priors, opt);
    std::array<std::vector<Detection>, kPartCount> out;
    for (std::size_t p = 0; p < kPartCount; ++p) {
        std::vector<Detection> candidates;
        for (const auto& sm : maps) {
            auto peaks = nms_peaks(spatial ? sm.filtered[p] : sm.baseline[p], nms, kChainJoints[p], &sm.unary[p]);
            candidates.insert(candidates.end(), peaks.begin(), peaks.end());
        }
        std::stable_sort(candidates.begin(), candidates.end(),
                         [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
        for (const Detection& c : candidates) {
            if (out[p].size() >= nms.topN)
                break;
            const bool suppressed = std::any_of(out[p].begin(), out[p].end(), [&](const Detection& kept) {
                return distance(kept.position, c.position) <= nms.windowRadius;
            });
            if (!suppressed)
                out[p].push_back(c);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Detection files
// ---------------------------------------------------------------------------

struct DetectionRecord {
    std::string imagePath;
    Detection detection;

    friend bool operator==(const DetectionRecord&, const DetectionRecord&) = default;
};

inline constexpr std::string_view kDetectionHeader = "posegraph-detections v1";

inline std::string format_detections(std::span<const DetectionRecord> records)
{
    std::string out(kDetectionHeader);
    out += '\n';
    for (const auto& r : records) {
        const Detection& d = r.detection;
        out += r.imagePath;
        for (const std::string& f : {std::string(joint_name(d.joint)), detail::format_double(d.position.x),
                                     detail::format_double(d.position.y), detail::format_double(d.confidence),
                                     detail::format_double(d.scale)}) {
            out += ',';
            out += f;
        }
        out += '\n';
    }
    return out;
}

inline std::vector<DetectionRecord> parse_detections(std::string_view text, const std::string& source = "<detections>")
{
    std::vector<DetectionRecord> out;
    std::size_t lineNo = 0;
    bool sawHeader = false;
    while (!text.empty()) {
        const std::size_t nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++lineNo;
        if (!line.empty() && line.back() == '\r')
            line.remove_suffix(1);
        if (!sawHeader) {
            if (line != kDetectionHeader)
                throw DataError(detail::concat(source, ":1: expected header '", kDetectionHeader, "'"));
            sawHeader = true;
            continue;
        }
        if (line.empty())
            continue;
        const auto f = detail::split_fields(line);
        if (f.size() != 6)
            throw DataError(detail::concat(source, ":", lineNo, ": expected 6 fields, got ", f.size()));
        DetectionRecord r;
        r.imagePath = std::string(f[0]);
        const auto joint = parse_joint(f[1]);
        if (!joint)
            throw DataError(detail::concat(source, ":", lineNo, ": unknown joint '", f[1], "'"));
        r.detection.joint = *joint;
        const std::array<std::pair<const char*, double*>, 4> numeric{
            std::pair{"x", &r.detection.position.x}, std::pair{"y", &r.detection.position.y},
            std::pair{"confidence", &r.detection.confidence}, std::pair{"scale", &r.detection.scale}};
        for (std::size_t k = 0; k < numeric.size(); ++k)
            if (!detail::parse_double(f[2 + k], *numeric[k].second))
                throw DataError(detail::concat(source, ":", lineNo, ": field '", numeric[k].first, "' is not a number"));
        out.push_back(std::move(r));
    }
    if (!sawHeader)
        throw DataError(source + ": empty detection file");
    return out;
}

inline void save_detections(const std::string& path, std::span<const DetectionRecord> records)
{
    const std::string text = format_detections(records);
    write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::vector<DetectionRecord> load_detections(const std::string& path)
{
    const Bytes bytes = read_file_bytes(path);
    return parse_detections(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), path);
}

} // namespace posegraph
