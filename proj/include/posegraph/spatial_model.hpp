#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "posegraph/binary_io.hpp"
#include "posegraph/convnet.hpp"
#include "posegraph/error.hpp"
#include "posegraph/image_plane.hpp"
#include "posegraph/pose_types.hpp"
#include "posegraph/tensor_ops.hpp"

namespace posegraph {

/// Histogram of child-joint offsets relative to the parent joint at the
/// center cell. Odd-sized, nonnegative, sums to one.
struct PairwisePrior {
    ImagePlane hist;
    Joint child = Joint::LSho;
    Joint parent = Joint::Face;
    double smoothingSigma = 0.0;

    std::size_t radius() const { return hist.height() / 2; }
    friend bool operator==(const PairwisePrior&, const PairwisePrior&) = default;
};

/// Face-position histogram over the canonical frame.
struct GlobalPrior {
    ImagePlane hist;
    double smoothingSigma = 0.0;
    friend bool operator==(const GlobalPrior&, const GlobalPrior&) = default;
};

struct SpatialConfig {
    double lambda = 1.0;
    double logFloor = 1e-6;

    void validate() const
    {
        if (!(lambda >= 0.0) || !(logFloor > 0.0))
            throw ConfigError("spatial config: need lambda >= 0 and logFloor > 0");
    }
};

namespace detail {

inline std::size_t smoothing_radius(double sigma) { return static_cast<std::size_t>(std::ceil(3.0 * sigma)); }

/// Smooths (boundary-renormalized Gaussian) and rescales to unit mass.
inline ImagePlane smooth_and_normalize(ImagePlane hist, double sigma)
{
    if (sigma > 0.0)
        hist = blur_normalized(hist, sigma, smoothing_radius(sigma));
    const double total = symmetric_sum(hist.data());
    require(total > 0.0, "smooth_and_normalize: histogram has no mass");
    for (double& v : hist.data())
        v /= total;
    return hist;
}

inline long clamp_bin(double v, long radius)
{
    return std::clamp(std::lround(v), -radius, radius);
}

} // namespace detail

/// Offsets child - parent, rounded half away from zero and clamped to the
/// border bins of a (2R+1)^2 grid, then smoothed and normalized.
inline PairwisePrior learn_pairwise_prior(std::span<const JointSet> examples, Joint child, Joint parent,
                                          std::size_t gridRadius = 60, double sigma = 3.0)
{
    if (examples.empty())
        throw DataError("learn_pairwise_prior: no examples");
    require(sigma >= 0.0, "learn_pairwise_prior: sigma must be >= 0");
    const long R = static_cast<long>(gridRadius);
    ImagePlane hist(2 * gridRadius + 1, 2 * gridRadius + 1, 1);
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const Point2& c = examples[i][index(child)];
        const Point2& p = examples[i][index(parent)];
        if (!c.valid() || !p.valid())
            throw DataError(detail::concat("learn_pairwise_prior: example ", i, " lacks ", joint_name(child), " or ",
                                           joint_name(parent)));
        const long by = detail::clamp_bin(c.y - p.y, R) + R;
        const long bx = detail::clamp_bin(c.x - p.x, R) + R;
        hist.at(static_cast<std::size_t>(by), static_cast<std::size_t>(bx)) += 1.0;
    }
    return {detail::smooth_and_normalize(std::move(hist), sigma), child, parent, sigma};
}

/// p_{parent|child=0} from p_{child|parent=0}: offsets negate.
inline PairwisePrior rotate180(const PairwisePrior& prior)
{
    PairwisePrior out = prior;
    auto src = prior.hist.data();
    auto dst = out.hist.data();
    std::reverse_copy(src.begin(), src.end(), dst.begin());
    std::swap(out.child, out.parent);
    return out;
}

inline GlobalPrior learn_face_prior(std::span<const JointSet> examples, std::size_t frameHeight = 240,
                                    std::size_t frameWidth = 320, double sigma = 3.0)
{
    if (examples.empty())
        throw DataError("learn_face_prior: no examples");
    ImagePlane hist(frameHeight, frameWidth, 1);
    std::size_t used = 0;
    for (const auto& ex : examples) {
        const Point2& f = ex[index(Joint::Face)];
        if (!f.valid())
            continue;
        const long y = std::clamp(std::lround(f.y), 0L, static_cast<long>(frameHeight) - 1);
        const long x = std::clamp(std::lround(f.x), 0L, static_cast<long>(frameWidth) - 1);
        hist.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) += 1.0;
        ++used;
    }
    if (used == 0)
        throw DataError("learn_face_prior: no example has a face annotation");
    return {detail::smooth_and_normalize(std::move(hist), sigma), sigma};
}

// ---------------------------------------------------------------------------
// Resampling onto response-map grids
// ---------------------------------------------------------------------------

/// Re-bins a pixel-resolution prior onto the grid of a response map at
/// `scale` with `stride` pixels per cell. Mass is preserved.
inline ImagePlane prior_on_grid(const PairwisePrior& prior, double scale, std::size_t stride)
{
    require(scale > 0.0 && stride >= 1, "prior_on_grid: scale and stride must be positive");
    const long R = static_cast<long>(prior.radius());
    const double f = scale / static_cast<double>(stride);
    const long Rg = std::lround(static_cast<double>(R) * f);
    ImagePlane grid(2 * Rg + 1, 2 * Rg + 1, 1);
    for (long dy = -R; dy <= R; ++dy) {
        const long gy = std::lround(static_cast<double>(dy) * f) + Rg;
        for (long dx = -R; dx <= R; ++dx) {
            const long gx = std::lround(static_cast<double>(dx) * f) + Rg;
            grid.at(static_cast<std::size_t>(gy), static_cast<std::size_t>(gx)) +=
                prior.hist.at(static_cast<std::size_t>(dy + R), static_cast<std::size_t>(dx + R));
        }
    }
    return grid;
}

/// Face prior sampled at every cell of `geometry`. The frame is stretched
/// over the source image, so frame pixel (u, v) corresponds to source pixel
/// (u * W / frameW, v * H / frameH).
inline ImagePlane face_prior_on_grid(const GlobalPrior& prior, const ResponseMap& geometry)
{
    require(geometry.sourceHeight > 0 && geometry.sourceWidth > 0, "face_prior_on_grid: response map lacks source size");
    const double fy = static_cast<double>(prior.hist.height()) / static_cast<double>(geometry.sourceHeight);
    const double fx = static_cast<double>(prior.hist.width()) / static_cast<double>(geometry.sourceWidth);
    ImagePlane grid(geometry.probs.height(), geometry.probs.width(), 1);
    for (std::size_t r = 0; r < grid.height(); ++r)
        for (std::size_t c = 0; c < grid.width(); ++c) {
            const auto [x, y] = geometry.to_image(r, c);
            grid.at(r, c) = sample_bilinear(prior.hist, 0, y * fy, x * fx, 0.0);
        }
    return grid;
}

// ---------------------------------------------------------------------------
// Filtering
// ---------------------------------------------------------------------------

/// Pairwise priors at grid resolution, in their stored directions.
struct GridPriors {
    ImagePlane shoGivenFace;
    ImagePlane elbGivenSho;
    ImagePlane wriGivenElb;
};

using PartPlanes = std::array<ImagePlane, kPartCount>;

namespace detail {

inline ImagePlane reversed(const ImagePlane& p)
{
    ImagePlane out = p;
    std::reverse(out.data().begin(), out.data().end());
    return out;
}

inline ImagePlane normalized_floored(const ImagePlane& p, double floor, std::string_view what)
{
    const double total = p.sum();
    if (!(total > 0.0) || !std::isfinite(total))
        throw DataError(detail::concat("filter_responses: ", what, " map has no mass"));
    ImagePlane out = p;
    for (double& v : out.data())
        v = std::max(v / total, floor);
    return out;
}

inline void floor_in_place(ImagePlane& p, double floor)
{
    for (double& v : p.data())
        v = std::max(v, floor);
}

inline ImagePlane exp_normalize(const ImagePlane& logMap)
{
    const auto d = logMap.data();
    const double peak = *std::max_element(d.begin(), d.end());
    ImagePlane out(logMap.height(), logMap.width(), 1);
    double total = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        out.data()[i] = std::exp(d[i] - peak);
        total += out.data()[i];
    }
    for (double& v : out.data())
        v /= total;
    return out;
}

} // namespace detail

/// Each unary becomes a distribution (normalized, floored at logFloor); each
/// neighbor message is prior (*) neighbor, floored likewise. Then per part
///   face:     lambda log p_fac + log h_fac
///   shoulder: lambda log p_sho + log(p_sho|fac (*) p_fac) + log(p_sho|elb (*) p_elb)
///   elbow:    lambda log p_elb + log(p_elb|sho (*) p_sho) + log(p_elb|wri (*) p_wri)
///   wrist:    lambda log p_wri + log(p_wri|elb (*) p_elb)
/// with p_sho|elb and p_elb|wri the 180-degree rotations of the stored priors.
/// Outputs are exponentiated and normalized to unit mass.
inline PartPlanes filter_grid(const PartPlanes& unaries, const GridPriors& priors, const ImagePlane& faceGrid,
                              const SpatialConfig& cfg)
{
    cfg.validate();
    for (std::size_t i = 0; i < kPartCount; ++i)
        require(unaries[i].channels() == 1 && unaries[i].same_shape(unaries[0]), "filter_responses: unary ",
                kPartNames[i], " shape ", unaries[i].shape(), " differs from ", unaries[0].shape());
    require(faceGrid.same_shape(unaries[0]), "filter_responses: face prior grid ", faceGrid.shape(),
            " differs from unary grid ", unaries[0].shape());

    const double fl = cfg.logFloor;
    PartPlanes p;
    for (std::size_t i = 0; i < kPartCount; ++i)
        p[i] = detail::normalized_floored(unaries[i], fl, kPartNames[i]);

    ImagePlane face = faceGrid;
    if (face.sum() > 0.0)
        face = detail::normalized_floored(face, fl, "face prior");
    else
        face = ImagePlane(face.height(), face.width(), 1, std::max(1.0 / static_cast<double>(face.size()), fl));

    auto message = [&](const ImagePlane& neighbor, const ImagePlane& prior) {
        ImagePlane m = conv2d_same_centered(neighbor, prior);
        detail::floor_in_place(m, fl);
        return m;
    };
    const ImagePlane shoFromFace = message(p[index(Part::Face)], priors.shoGivenFace);
    const ImagePlane shoFromElb = message(p[index(Part::Elbow)], detail::reversed(priors.elbGivenSho));
    const ImagePlane elbFromSho = message(p[index(Part::Shoulder)], priors.elbGivenSho);
    const ImagePlane elbFromWri = message(p[index(Part::Wrist)], detail::reversed(priors.wriGivenElb));
    const ImagePlane wriFromElb = message(p[index(Part::Elbow)], priors.wriGivenElb);

    const std::array<std::vector<const ImagePlane*>, kPartCount> incoming{
        std::vector<const ImagePlane*>{&face},
        std::vector<const ImagePlane*>{&shoFromFace, &shoFromElb},
        std::vector<const ImagePlane*>{&elbFromSho, &elbFromWri},
        std::vector<const ImagePlane*>{&wriFromElb},
    };

    PartPlanes out;
    for (std::size_t i = 0; i < kPartCount; ++i) {
        ImagePlane logMap(p[i].height(), p[i].width(), 1);
        auto lm = logMap.data();
        const auto u = p[i].data();
        for (std::size_t k = 0; k < lm.size(); ++k) {
            double acc = cfg.lambda * std::log(u[k]);
            for (const ImagePlane* m : incoming[i])
                acc += std::log(m->data()[k]);
            lm[k] = acc;
        }
        out[i] = detail::exp_normalize(logMap);
    }
    return out;
}

/// Unary maps as unit-mass distributions, the no-spatial-model baseline.
inline PartPlanes normalize_unaries(const PartPlanes& unaries)
{
    PartPlanes out;
    for (std::size_t i = 0; i < kPartCount; ++i) {
        const double total = unaries[i].sum();
        if (!(total > 0.0))
            throw DataError(detail::concat("normalize_unaries: ", kPartNames[i], " map has no mass"));
        out[i] = unaries[i];
        for (double& v : out[i].data())
            v /= total;
    }
    return out;
}

using PartMaps = std::array<ResponseMap, kPartCount>;

inline PartMaps filter_responses(const PartMaps& unaries, const GridPriors& priors, const GlobalPrior& facePrior,
                                 const SpatialConfig& cfg)
{
    for (std::size_t i = 1; i < kPartCount; ++i)
        require(unaries[i].same_geometry(unaries[0]), "filter_responses: ", kPartNames[i],
                " map geometry differs from the face map");
    PartPlanes planes;
    for (std::size_t i = 0; i < kPartCount; ++i)
        planes[i] = unaries[i].probs;
    const PartPlanes filtered = filter_grid(planes, priors, face_prior_on_grid(facePrior, unaries[0]), cfg);
    PartMaps out = unaries;
    for (std::size_t i = 0; i < kPartCount; ++i)
        out[i].probs = filtered[i];
    return out;
}

// ---------------------------------------------------------------------------
// Prior bundle
// ---------------------------------------------------------------------------

struct PriorBundle {
    PairwisePrior shoGivenFace;
    PairwisePrior elbGivenSho;
    PairwisePrior wriGivenElb;
    GlobalPrior face;

    GridPriors on_grid(double scale, std::size_t stride) const
    {
        return {prior_on_grid(shoGivenFace, scale, stride), prior_on_grid(elbGivenSho, scale, stride),
                prior_on_grid(wriGivenElb, scale, stride)};
    }

    friend bool operator==(const PriorBundle&, const PriorBundle&) = default;
};

struct PriorOptions {
    std::size_t gridRadius = 60;
    double sigma = 3.0;
    double faceSigma = 25.0; // half the canonical head height: a coarse location prior
    std::size_t frameHeight = 240;
    std::size_t frameWidth = 320;
};

/// Pairwise priors come from canonical-frame joints; the face prior from face
/// positions already expressed on the frameHeight x frameWidth grid (see
/// stretch_to_frame).
inline PriorBundle learn_priors(std::span<const JointSet> frames, std::span<const JointSet> faceGrid,
                                const PriorOptions& opt = {})
{
    return {learn_pairwise_prior(frames, Joint::LSho, Joint::Face, opt.gridRadius, opt.sigma),
            learn_pairwise_prior(frames, Joint::LElb, Joint::LSho, opt.gridRadius, opt.sigma),
            learn_pairwise_prior(frames, Joint::LWri, Joint::LElb, opt.gridRadius, opt.sigma),
            learn_face_prior(faceGrid, opt.frameHeight, opt.frameWidth, opt.faceSigma)};
}

/// Joints of an image of the given size stretched onto a frameHeight x
/// frameWidth grid: (x * frameW / W, y * frameH / H). This is the inverse of
/// the mapping face_prior_on_grid applies at test time.
inline JointSet stretch_to_frame(const JointSet& joints, std::size_t imageHeight, std::size_t imageWidth,
                                 std::size_t frameHeight, std::size_t frameWidth)
{
    require(imageHeight > 0 && imageWidth > 0, "stretch_to_frame: empty image");
    const double fy = static_cast<double>(frameHeight) / static_cast<double>(imageHeight);
    const double fx = static_cast<double>(frameWidth) / static_cast<double>(imageWidth);
    JointSet out;
    for (std::size_t j = 0; j < kJointCount; ++j)
        if (joints[j].valid())
            out[j] = {joints[j].x * fx, joints[j].y * fy};
    return out;
}

// Layout: "PGPB" | u32 version | 3 x pairwise | face
//   pairwise: u64 child | u64 parent | f64 sigma | u64 h | u64 w | h*w f64
//   face:     f64 sigma | u64 h | u64 w | h*w f64
inline constexpr std::string_view kPriorMagic = "PGPB";
inline constexpr std::uint32_t kPriorVersion = 1;

class PriorBundleError : public DataError {
public:
    using DataError::DataError;
    PriorBundleError(std::size_t wanted, std::size_t available)
        : DataError(detail::concat("prior bundle truncated: needed ", wanted, " bytes, ", available, " left"))
    {
    }
};

inline Bytes save_prior_bundle(const PriorBundle& b)
{
    ByteWriter w;
    w.raw(kPriorMagic);
    w.u32(kPriorVersion);
    for (const PairwisePrior* p : {&b.shoGivenFace, &b.elbGivenSho, &b.wriGivenElb}) {
        w.u64(index(p->child));
        w.u64(index(p->parent));
        w.f64(p->smoothingSigma);
        w.u64(p->hist.height());
        w.u64(p->hist.width());
        w.f64s(p->hist.data());
    }
    w.f64(b.face.smoothingSigma);
    w.u64(b.face.hist.height());
    w.u64(b.face.hist.width());
    w.f64s(b.face.hist.data());
    return std::move(w).bytes();
}

inline PriorBundle load_prior_bundle(std::span<const std::uint8_t> bytes)
{
    ByteReader<PriorBundleError> r(bytes);
    if (bytes.size() < 4 || r.raw(4) != kPriorMagic)
        throw PriorBundleError("prior bundle has bad magic header (expected 'PGPB')");
    if (const auto v = r.u32(); v != kPriorVersion)
        throw PriorBundleError(detail::concat("prior bundle version ", v, " unsupported"));
    auto plane = [&](std::size_t maxSide) {
        const std::uint64_t h = r.u64(), w = r.u64();
        if (h == 0 || w == 0 || h > maxSide || w > maxSide)
            throw PriorBundleError(detail::concat("prior bundle has invalid histogram size ", h, "x", w));
        ImagePlane p(h, w, 1);
        r.f64s(p.data());
        return p;
    };
    PriorBundle b;
    for (PairwisePrior* p : {&b.shoGivenFace, &b.elbGivenSho, &b.wriGivenElb}) {
        const auto child = r.u64(), parent = r.u64();
        if (child >= kJointCount || parent >= kJointCount)
            throw PriorBundleError("prior bundle names an unknown joint");
        p->child = kAllJoints[child];
        p->parent = kAllJoints[parent];
        p->smoothingSigma = r.f64();
        p->hist = plane(100001);
        if (p->hist.height() % 2 == 0 || p->hist.width() % 2 == 0)
            throw PriorBundleError("prior bundle pairwise histogram must have odd dimensions");
    }
    b.face.smoothingSigma = r.f64();
    b.face.hist = plane(100001);
    if (r.remaining() != 0)
        throw PriorBundleError(detail::concat("prior bundle has ", r.remaining(), " trailing bytes"));
    return b;
}

} // namespace posegraph
