#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "posegraph/dataset.hpp"
#include "posegraph/image_plane.hpp"
#include "posegraph/pose_types.hpp"
#include "posegraph/rng.hpp"

namespace posegraph {

/// Stick-figure generator: face disk, shoulder squares, elbow triangles and
/// wrist crosses joined by limbs over a noisy, cluttered background.
///
/// Arm angles are measured from straight down, positive pointing away from the
/// body. A figure's left side is on the image's right, as for a person facing
/// the camera.
struct SynthConfig {
    std::size_t n = 600;
    std::uint64_t seed = 1;
    double noise = 0.15;
    std::size_t width = 320;
    std::size_t height = 240;
    double trainFraction = 5.0 / 6.0;
    std::size_t clutter = 4;

    // Figure geometry at unit scale; the per-figure scale multiplies all lengths.
    double minScale = 0.92, maxScale = 1.08;
    double headHeight = 50.0;
    double headToShoulders = 44.0;
    double shoulderHalfWidth = 28.0;
    double upperArmMin = 36.0, upperArmMax = 44.0;
    double forearmMin = 32.0, forearmMax = 40.0;
    double upperArmAngleMin = 10.0, upperArmAngleMax = 50.0; // degrees
    double forearmAngleMin = -20.0, forearmAngleMax = 80.0;
    double centerJitterX = 12.0;
    double centerYMin = 90.0, centerYMax = 104.0;
};

struct SyntheticSample {
    ImagePlane image;
    PoseExample example;
    double figureScale = 1.0;
};

namespace detail {

using Color = std::array<double, 3>;

inline void paint(ImagePlane& img, long y, long x, const Color& c)
{
    if (y < 0 || x < 0 || y >= static_cast<long>(img.height()) || x >= static_cast<long>(img.width()))
        return;
    for (std::size_t ch = 0; ch < 3; ++ch)
        img(ch, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = c[ch];
}

template <class Inside>
void fill_region(ImagePlane& img, double x0, double y0, double x1, double y1, const Color& c, Inside inside)
{
    for (long y = static_cast<long>(std::floor(y0)); y <= static_cast<long>(std::ceil(y1)); ++y)
        for (long x = static_cast<long>(std::floor(x0)); x <= static_cast<long>(std::ceil(x1)); ++x)
            if (inside(static_cast<double>(x), static_cast<double>(y)))
                paint(img, y, x, c);
}

inline double segment_distance(double px, double py, const Point2& a, const Point2& b)
{
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((px - a.x) * dx + (py - a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(px - (a.x + t * dx), py - (a.y + t * dy));
}

inline void draw_line(ImagePlane& img, const Point2& a, const Point2& b, double thickness, const Color& c)
{
    const double r = thickness / 2.0;
    fill_region(img, std::min(a.x, b.x) - r, std::min(a.y, b.y) - r, std::max(a.x, b.x) + r, std::max(a.y, b.y) + r, c,
                [&](double x, double y) { return segment_distance(x, y, a, b) <= r; });
}

inline void draw_disk(ImagePlane& img, const Point2& p, double radius, const Color& c)
{
    fill_region(img, p.x - radius, p.y - radius, p.x + radius, p.y + radius, c,
                [&](double x, double y) { return std::hypot(x - p.x, y - p.y) <= radius; });
}

inline void draw_square(ImagePlane& img, const Point2& p, double half, const Color& c)
{
    fill_region(img, p.x - half, p.y - half, p.x + half, p.y + half, c,
                [&](double x, double y) { return std::abs(x - p.x) <= half && std::abs(y - p.y) <= half; });
}

// Upward-pointing triangle centered on p.
inline void draw_triangle(ImagePlane& img, const Point2& p, double half, const Color& c)
{
    fill_region(img, p.x - half, p.y - half, p.x + half, p.y + half, c, [&](double x, double y) {
        const double t = (y - (p.y - half)) / (2.0 * half); // 0 at apex, 1 at base
        return t >= 0.0 && t <= 1.0 && std::abs(x - p.x) <= t * half;
    });
}

inline void draw_cross(ImagePlane& img, const Point2& p, double half, double thickness, const Color& c)
{
    draw_line(img, {p.x - half, p.y - half}, {p.x + half, p.y + half}, thickness, c);
    draw_line(img, {p.x - half, p.y + half}, {p.x + half, p.y - half}, thickness, c);
}

inline double radians(double degrees) { return degrees * std::numbers::pi / 180.0; }

} // namespace detail

inline std::string synthetic_image_name(std::size_t i)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img_%05zu.ppm", i);
    return buf;
}

inline std::size_t synthetic_train_count(const SynthConfig& cfg)
{
    return static_cast<std::size_t>(std::llround(cfg.trainFraction * static_cast<double>(cfg.n)));
}

/// Example `i` of the dataset; depends only on (seed, i).
inline SyntheticSample generate_synthetic_one(const SynthConfig& cfg, std::size_t i)
{
    using namespace detail;
    Rng rng(mix_seed(cfg.seed, i));
    SyntheticSample out;
    ImagePlane& img = out.image = ImagePlane(cfg.height, cfg.width, 3);

    const Color background{uniform(rng, 0.1, 0.45), uniform(rng, 0.1, 0.45), uniform(rng, 0.1, 0.45)};
    for (std::size_t c = 0; c < 3; ++c)
        for (double& v : img.channel(c))
            v = background[c];
    for (std::size_t k = 0; k < cfg.clutter; ++k) {
        const Point2 a{uniform(rng, 0.0, cfg.width), uniform(rng, 0.0, cfg.height)};
        const Point2 b{a.x + uniform(rng, -60.0, 60.0), a.y + uniform(rng, -60.0, 60.0)};
        const Color col{uniform(rng, 0.0, 0.6), uniform(rng, 0.0, 0.6), uniform(rng, 0.0, 0.6)};
        draw_line(img, a, b, uniform(rng, 2.0, 6.0), col);
    }

    const double s = uniform(rng, cfg.minScale, cfg.maxScale);
    out.figureScale = s;
    const Point2 mid{cfg.width / 2.0 + uniform(rng, -cfg.centerJitterX, cfg.centerJitterX),
                     uniform(rng, cfg.centerYMin, cfg.centerYMax)};
    JointSet joints;
    const Point2 face{mid.x, mid.y - cfg.headToShoulders * s};
    const Point2 lsho{mid.x + cfg.shoulderHalfWidth * s, mid.y};
    const Point2 rsho{mid.x - cfg.shoulderHalfWidth * s, mid.y};
    joints[index(Joint::Face)] = face;
    joints[index(Joint::LSho)] = lsho;
    joints[index(Joint::RSho)] = rsho;

    // side = +1 for the figure's left arm (image right), -1 for the right arm.
    auto arm = [&](const Point2& shoulder, double side) {
        const double upper = uniform(rng, cfg.upperArmMin, cfg.upperArmMax) * s;
        const double a1 = radians(uniform(rng, cfg.upperArmAngleMin, cfg.upperArmAngleMax));
        const double fore = uniform(rng, cfg.forearmMin, cfg.forearmMax) * s;
        const double a2 = radians(uniform(rng, cfg.forearmAngleMin, cfg.forearmAngleMax));
        const Point2 elbow{shoulder.x + side * upper * std::sin(a1), shoulder.y + upper * std::cos(a1)};
        const Point2 wrist{elbow.x + side * fore * std::sin(a2), elbow.y + fore * std::cos(a2)};
        return std::pair{elbow, wrist};
    };
    const auto [lelb, lwri] = arm(lsho, +1.0);
    const auto [relb, rwri] = arm(rsho, -1.0);
    joints[index(Joint::LElb)] = lelb;
    joints[index(Joint::LWri)] = lwri;
    joints[index(Joint::RElb)] = relb;
    joints[index(Joint::RWri)] = rwri;

    const Color body{uniform(rng, 0.55, 0.75), uniform(rng, 0.55, 0.75), uniform(rng, 0.55, 0.75)};
    const Color part{uniform(rng, 0.85, 1.0), uniform(rng, 0.85, 1.0), uniform(rng, 0.85, 1.0)};

    // Torso, neck, limbs, then the part markers on top.
    fill_region(img, mid.x - 22 * s, mid.y, mid.x + 22 * s, mid.y + 90 * s, body, [](double, double) { return true; });
    draw_line(img, mid, face, 6 * s, body);
    draw_line(img, lsho, rsho, 6 * s, body);
    for (const auto& [a, b] : {std::pair{lsho, lelb}, {lelb, lwri}, {rsho, relb}, {relb, rwri}})
        draw_line(img, a, b, 4 * s, body);
    draw_disk(img, face, 15 * s, part);
    draw_square(img, lsho, 7 * s, part);
    draw_square(img, rsho, 7 * s, part);
    draw_triangle(img, lelb, 8 * s, part);
    draw_triangle(img, relb, 8 * s, part);
    draw_cross(img, lwri, 8 * s, 4 * s, part);
    draw_cross(img, rwri, 8 * s, 4 * s, part);

    // Pixel noise, then 8-bit quantization so in-memory images equal their PPM files.
    for (double& v : img.data())
        v = std::round(std::clamp(v + uniform(rng, -cfg.noise, cfg.noise), 0.0, 1.0) * 255.0) / 255.0;

    out.example.imagePath = synthetic_image_name(i);
    out.example.split = i < synthetic_train_count(cfg) ? Split::Train : Split::Test;
    const double headH = cfg.headHeight * s, headW = 0.8 * cfg.headHeight * s;
    out.example.headBox = {face.x - headW / 2.0, face.y - headH / 2.0, headW, headH};
    out.example.joints = joints;
    return out;
}

struct SyntheticDataset {
    std::vector<ImagePlane> images;
    std::vector<PoseExample> examples;
};

inline SyntheticDataset generate_synthetic(const SynthConfig& cfg)
{
    SyntheticDataset d;
    d.images.reserve(cfg.n);
    d.examples.reserve(cfg.n);
    for (std::size_t i = 0; i < cfg.n; ++i) {
        auto s = generate_synthetic_one(cfg, i);
        d.images.push_back(std::move(s.image));
        d.examples.push_back(std::move(s.example));
    }
    return d;
}

} // namespace posegraph
