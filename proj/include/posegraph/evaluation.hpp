#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "posegraph/binary_io.hpp"
#include "posegraph/dataset.hpp"
#include "posegraph/error.hpp"
#include "posegraph/inference.hpp"
#include "posegraph/pose_types.hpp"

namespace posegraph {

struct AccuracyCurve {
    std::string name; // column label
    std::vector<double> radii;
    std::vector<double> accuracy;

    friend bool operator==(const AccuracyCurve&, const AccuracyCurve&) = default;
};

/// 0, 1, ..., 30 pixels.
inline std::vector<double> default_radii()
{
    std::vector<double> r;
    for (int i = 0; i <= 30; ++i)
        r.push_back(i);
    return r;
}

/// Column label: part name for chain joints, joint name otherwise.
inline std::string curve_label(Joint j)
{
    for (std::size_t p = 0; p < kPartCount; ++p)
        if (kChainJoints[p] == j)
            return std::string(kPartNames[p]);
    return std::string(joint_name(j));
}

struct AccuracyReport {
    std::vector<AccuracyCurve> curves;
    std::size_t missing = 0; // ground-truth joints without a detection
};

/// Fraction of annotated joints whose detection lies within each radius.
/// Detections are matched to ground truth by image path; a missing detection
/// counts as wrong at every radius.
inline AccuracyReport accuracy_within_radius(std::span<const DetectionRecord> detections,
                                             std::span<const PoseExample> groundTruth,
                                             std::span<const Joint> joints = kChainJoints,
                                             std::span<const double> radii = {})
{
    const std::vector<double> grid = radii.empty() ? default_radii() : std::vector<double>(radii.begin(), radii.end());
    for (std::size_t i = 1; i < grid.size(); ++i)
        require(grid[i] >= grid[i - 1], "accuracy_within_radius: radii must be non-decreasing");

    std::set<std::string> known;
    for (const auto& ex : groundTruth)
        known.insert(ex.imagePath);
    std::vector<std::string> orphans;
    std::map<std::pair<std::string, Joint>, Point2> found;
    for (const auto& d : detections) {
        if (!known.contains(d.imagePath)) {
            orphans.push_back(d.imagePath);
            continue;
        }
        if (!found.emplace(std::pair{d.imagePath, d.detection.joint}, d.detection.position).second)
            throw DataError(detail::concat("duplicate detection for ", d.imagePath, " / ", joint_name(d.detection.joint)));
    }
    if (!orphans.empty()) {
        std::string list;
        for (std::size_t i = 0; i < orphans.size() && i < 10; ++i)
            list += (i ? ", " : "") + orphans[i];
        throw DataError(detail::concat(orphans.size(), " detection(s) refer to images without ground truth: ", list,
                                       orphans.size() > 10 ? ", ..." : ""));
    }

    AccuracyReport report;
    for (Joint j : joints) {
        AccuracyCurve curve{curve_label(j), grid, std::vector<double>(grid.size(), 0.0)};
        std::size_t total = 0;
        for (const auto& ex : groundTruth) {
            const Point2& truth = ex.joints[index(j)];
            if (!truth.valid())
                continue;
            ++total;
            const auto it = found.find({ex.imagePath, j});
            if (it == found.end()) {
                ++report.missing;
                continue;
            }
            const double dist = distance(it->second, truth);
            for (std::size_t k = 0; k < grid.size(); ++k)
                if (dist <= grid[k])
                    curve.accuracy[k] += 1.0;
        }
        if (total > 0)
            for (double& a : curve.accuracy)
                a /= static_cast<double>(total);
        report.curves.push_back(std::move(curve));
    }
    return report;
}

inline bool is_monotone(const AccuracyCurve& c)
{
    return std::is_sorted(c.accuracy.begin(), c.accuracy.end());
}

// ---------------------------------------------------------------------------
// Curve files: CSV with a radius column and one accuracy column per curve.
// ---------------------------------------------------------------------------

inline std::string format_curves(std::span<const AccuracyCurve> curves)
{
    std::string out = "radius";
    for (const auto& c : curves) {
        require(c.radii.size() == c.accuracy.size(), "format_curves: curve '", c.name, "' has mismatched lengths");
        require(c.radii == curves.front().radii, "format_curves: curve '", c.name, "' uses a different radius grid");
        require(is_monotone(c), "format_curves: curve '", c.name, "' decreases with radius");
        require(c.name.find_first_of(",\n") == std::string::npos, "format_curves: bad column name '", c.name, "'");
        out += ',' + c.name;
    }
    out += '\n';
    if (curves.empty())
        return out;
    for (std::size_t k = 0; k < curves.front().radii.size(); ++k) {
        out += detail::format_double(curves.front().radii[k]);
        for (const auto& c : curves)
            out += ',' + detail::format_double(c.accuracy[k]);
        out += '\n';
    }
    return out;
}

inline std::vector<AccuracyCurve> parse_curves(std::string_view text, const std::string& source = "<curves>")
{
    std::vector<std::vector<std::string_view>> rows;
    while (!text.empty()) {
        const std::size_t nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (!line.empty() && line.back() == '\r')
            line.remove_suffix(1);
        if (!line.empty())
            rows.push_back(detail::split_fields(line));
    }
    if (rows.empty() || rows[0].empty() || rows[0][0] != "radius")
        throw DataError(source + ": missing 'radius' header");
    std::vector<AccuracyCurve> curves;
    for (std::size_t c = 1; c < rows[0].size(); ++c)
        curves.push_back({std::string(rows[0][c]), {}, {}});
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != rows[0].size())
            throw DataError(detail::concat(source, ":", r + 1, ": expected ", rows[0].size(), " columns"));
        double radius = 0.0;
        if (!detail::parse_double(rows[r][0], radius))
            throw DataError(detail::concat(source, ":", r + 1, ": bad radius"));
        for (std::size_t c = 1; c < rows[r].size(); ++c) {
            double v = 0.0;
            if (!detail::parse_double(rows[r][c], v))
                throw DataError(detail::concat(source, ":", r + 1, ": bad value in column '", rows[0][c], "'"));
            curves[c - 1].radii.push_back(radius);
            curves[c - 1].accuracy.push_back(v);
        }
    }
    return curves;
}

inline void emit_curves(std::span<const AccuracyCurve> curves, const std::string& path)
{
    const std::string text = format_curves(curves);
    write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::vector<AccuracyCurve> read_curves(const std::string& path)
{
    const Bytes bytes = read_file_bytes(path);
    return parse_curves(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), path);
}

/// Accuracy of `curve` at the first radius >= r.
inline double accuracy_at(const AccuracyCurve& curve, double r)
{
    for (std::size_t k = 0; k < curve.radii.size(); ++k)
        if (curve.radii[k] >= r)
            return curve.accuracy[k];
    throw ContractViolation(detail::concat("accuracy_at: radius ", r, " beyond the curve"));
}

} // namespace posegraph
