#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <string_view>

#include "posegraph/image_plane.hpp"

namespace posegraph {

enum class Joint : std::size_t { Face, LSho, LElb, LWri, RSho, RElb, RWri };

inline constexpr std::size_t kJointCount = 7;
inline constexpr std::array<Joint, kJointCount> kAllJoints{Joint::Face, Joint::LSho, Joint::LElb, Joint::LWri,
                                                           Joint::RSho, Joint::RElb, Joint::RWri};
inline constexpr std::array<std::string_view, kJointCount> kJointNames{"face", "lsho", "lelb", "lwri",
                                                                       "rsho", "relb", "rwri"};

/// The kinematic chain filtered by the spatial model: face - shoulder - elbow - wrist (left side).
inline constexpr std::size_t kPartCount = 4;
enum class Part : std::size_t { Face, Shoulder, Elbow, Wrist };
inline constexpr std::array<Joint, kPartCount> kChainJoints{Joint::Face, Joint::LSho, Joint::LElb, Joint::LWri};
inline constexpr std::array<std::string_view, kPartCount> kPartNames{"face", "shoulder", "elbow", "wrist"};

constexpr std::size_t index(Joint j) noexcept { return static_cast<std::size_t>(j); }
constexpr std::size_t index(Part p) noexcept { return static_cast<std::size_t>(p); }

inline std::string_view joint_name(Joint j) { return kJointNames[index(j)]; }

inline std::optional<Joint> parse_joint(std::string_view name)
{
    for (std::size_t i = 0; i < kJointCount; ++i)
        if (kJointNames[i] == name)
            return kAllJoints[i];
    return std::nullopt;
}

/// Left and right labels swap under horizontal mirroring.
constexpr Joint mirror_partner(Joint j) noexcept
{
    switch (j) {
    case Joint::LSho: return Joint::RSho;
    case Joint::LElb: return Joint::RElb;
    case Joint::LWri: return Joint::RWri;
    case Joint::RSho: return Joint::LSho;
    case Joint::RElb: return Joint::LElb;
    case Joint::RWri: return Joint::LWri;
    default: return j;
    }
}

struct Point2 {
    double x = std::numeric_limits<double>::quiet_NaN();
    double y = std::numeric_limits<double>::quiet_NaN();

    bool valid() const noexcept { return std::isfinite(x) && std::isfinite(y); }

    // NaN coordinates compare equal so that missing joints round-trip.
    friend bool operator==(const Point2& a, const Point2& b) noexcept
    {
        auto same = [](double u, double v) { return (std::isnan(u) && std::isnan(v)) || u == v; };
        return same(a.x, b.x) && same(a.y, b.y);
    }
};

inline double distance(const Point2& a, const Point2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Per-joint coordinates in pixels; missing joints hold NaN.
using JointSet = std::array<Point2, kJointCount>;

struct PatchSample {
    ImagePlane patch; // LCN-processed
    int label = 0;
    Joint joint = Joint::Face;
    std::size_t sourceExample = 0;
    Point2 center; // patch center in frame pixels
    Point2 truth;  // ground-truth joint in frame pixels
};

} // namespace posegraph
