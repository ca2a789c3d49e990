#pragma once

// Deterministic synthetic spine phantoms: labeled rigid bodies stacked in
// soft tissue, pseudo-CT / pseudo-MRI intensity mappings with opposite
// body/disc contrast, and a ground-truth field that is exactly rigid on each
// body and blended through the disc gaps by inverse distance weights.

#include "rigidreg/field.hpp"
#include "rigidreg/rigidity.hpp"
#include "rigidreg/volume.hpp"

namespace rigidreg {

struct PhantomSpec {
    IVec3 dims{64, 64, 64};
    int body_count = 4;
    Vec3 half_extents{10, 8, 5};   // voxels; boxes by default
    bool ellipsoid = false;
    double gap = 4.0;              // disc thickness between bodies, voxels
    double max_rotation_deg = 5.0; // per-body ground-truth motion bounds
    double max_translation = 3.0;  // voxels
    double background_amplitude = 1.0;  // smooth background field, voxels
    double noise = 0.02;           // additive Gaussian sigma, intensity units
    double edt_exponent = 4.0;     // blend weight = (1 + distance)^-exponent
    uint64_t seed = 7;
};

struct PhantomPair {
    Volume fixed_image;     // pseudo-MRI
    Volume moving_image;    // pseudo-CT
    LabelVolume moving_labels;
    LabelVolume fixed_labels;  // ground truth, for evaluation only
    DisplacementField gt_field;
    std::vector<RigidTransform> gt_motions;  // per body, fixed -> moving
};

// ---------------------------------------------------------------------------
// Exact Euclidean distance transform (separable lower-envelope algorithm)

namespace detail {

// Sentinel for "no source here": large enough to never win, small enough to
// keep every quadratic exact in double.
constexpr double kEdtFar = 1e9;

// 1D squared-distance lower-envelope pass (Felzenszwalb/Huttenlocher).
inline void edt_1d(const std::vector<double>& f, std::vector<double>& d,
                   std::vector<int>& v, std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    int k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    for (int q = 1; q < n; ++q) {
        double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
        while (s <= z[k]) {
            --k;
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const double dq = q - v[k];
        d[q] = dq * dq + f[v[k]];
    }
}

inline Volume squared_edt_of_mask(const IVec3& dims, const std::vector<bool>& inside) {
    Volume sq(dims);
    for (size_t i = 0; i < sq.data.size(); ++i) sq.data[i] = inside[i] ? 0.0 : kEdtFar;

    // x pass
    {
        std::vector<double> f(dims.x), d(dims.x), z(dims.x + 1);
        std::vector<int> v(dims.x);
        for (int zz = 0; zz < dims.z; ++zz)
            for (int y = 0; y < dims.y; ++y) {
                for (int x = 0; x < dims.x; ++x) f[x] = sq.at(x, y, zz);
                edt_1d(f, d, v, z);
                for (int x = 0; x < dims.x; ++x) sq.at(x, y, zz) = d[x];
            }
    }
    // y pass
    {
        std::vector<double> f(dims.y), d(dims.y), z(dims.y + 1);
        std::vector<int> v(dims.y);
        for (int zz = 0; zz < dims.z; ++zz)
            for (int x = 0; x < dims.x; ++x) {
                for (int y = 0; y < dims.y; ++y) f[y] = sq.at(x, y, zz);
                edt_1d(f, d, v, z);
                for (int y = 0; y < dims.y; ++y) sq.at(x, y, zz) = d[y];
            }
    }
    // z pass
    {
        std::vector<double> f(dims.z), d(dims.z), z(dims.z + 1);
        std::vector<int> v(dims.z);
        for (int y = 0; y < dims.y; ++y)
            for (int x = 0; x < dims.x; ++x) {
                for (int zz = 0; zz < dims.z; ++zz) f[zz] = sq.at(x, y, zz);
                edt_1d(f, d, v, z);
                for (int zz = 0; zz < dims.z; ++zz) sq.at(x, y, zz) = d[zz];
            }
    }
    return sq;
}

}  // namespace detail

// Exact Euclidean distance (voxel units) from every voxel to the nearest
// voxel of each body, one volume per body in body_ids order.
inline std::vector<Volume> distance_transform(const LabelVolume& labels) {
    if (labels.body_ids.empty()) throw EmptyBody("distance_transform: no bodies labeled");
    std::vector<Volume> out;
    out.reserve(labels.body_ids.size());
    for (int body : labels.body_ids) {
        std::vector<bool> inside(labels.data.size());
        bool any = false;
        for (size_t i = 0; i < labels.data.size(); ++i) {
            inside[i] = labels.data[i] == body;
            any = any || inside[i];
        }
        if (!any) throw EmptyBody("distance_transform: body " + std::to_string(body));
        Volume sq = detail::squared_edt_of_mask(labels.dims, inside);
        for (double& v : sq.data) v = std::sqrt(v);
        sq.spacing = labels.spacing;
        sq.origin = labels.origin;
        out.push_back(std::move(sq));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pair generation

namespace detail {

struct BodyGeometry {
    Vec3 center;
    Vec3 half_extents;
    bool ellipsoid = false;

    bool contains(const Vec3& p) const {
        const Vec3 d = p - center;
        if (ellipsoid) {
            const double r = (d.x / half_extents.x) * (d.x / half_extents.x) +
                             (d.y / half_extents.y) * (d.y / half_extents.y) +
                             (d.z / half_extents.z) * (d.z / half_extents.z);
            return r <= 1.0;
        }
        return std::fabs(d.x) <= half_extents.x && std::fabs(d.y) <= half_extents.y &&
               std::fabs(d.z) <= half_extents.z;
    }
};

// Smooth deterministic background displacement: a few low-frequency modes.
struct BackgroundField {
    struct Mode {
        Vec3 dir;
        Vec3 freq;
        Vec3 phase;
        double amp;
    };
    std::vector<Mode> modes;

    static BackgroundField draw(Rng& rng, const IVec3& dims, double amplitude) {
        BackgroundField f;
        for (int k = 0; k < 3; ++k) {
            Mode m;
            m.dir = rng.unit_vector();
            m.freq = {2.0 * M_PI * rng.uniform(0.5, 1.5) / dims.x,
                      2.0 * M_PI * rng.uniform(0.5, 1.5) / dims.y,
                      2.0 * M_PI * rng.uniform(0.5, 1.5) / dims.z};
            m.phase = {rng.uniform(0, 2.0 * M_PI), rng.uniform(0, 2.0 * M_PI),
                       rng.uniform(0, 2.0 * M_PI)};
            m.amp = amplitude / 3.0;
            f.modes.push_back(m);
        }
        return f;
    }

    Vec3 at(const Vec3& p) const {
        Vec3 u{0, 0, 0};
        for (const Mode& m : modes) {
            const double s = std::sin(m.freq.x * p.x + m.phase.x) *
                             std::sin(m.freq.y * p.y + m.phase.y) *
                             std::sin(m.freq.z * p.z + m.phase.z);
            u += m.dir * (m.amp * s);
        }
        return u;
    }
};

}  // namespace detail

inline PhantomPair generate_pair(const PhantomSpec& spec) {
    if (spec.body_count < 1) throw std::invalid_argument("phantom: body_count must be >= 1");
    if (spec.dims.x < 8 || spec.dims.y < 8 || spec.dims.z < 8)
        throw std::invalid_argument("phantom: grid too small");

    // Stack bodies along z, centered in x/y.
    const double cx = (spec.dims.x - 1) / 2.0;
    const double cy = (spec.dims.y - 1) / 2.0;
    const double body_depth = 2.0 * spec.half_extents.z;
    const double span = spec.body_count * body_depth + (spec.body_count - 1) * spec.gap;
    const double z0 = ((spec.dims.z - 1) - span) / 2.0 + spec.half_extents.z;
    if (z0 - spec.half_extents.z < 2.0 || cx - spec.half_extents.x < 2.0 ||
        cy - spec.half_extents.y < 2.0)
        throw std::invalid_argument("phantom: bodies do not fit with a 2-voxel margin");

    std::vector<detail::BodyGeometry> bodies;
    for (int i = 0; i < spec.body_count; ++i)
        bodies.push_back({{cx, cy, z0 + i * (body_depth + spec.gap)},
                          spec.half_extents,
                          spec.ellipsoid});

    // Moving labels and tissue classes (0 background, 1 disc, 2.. body i+2).
    LabelVolume moving_labels(spec.dims);
    Volume moving_ct(spec.dims), moving_mr(spec.dims);
    const double ct_map[3] = {0.1, 0.3, 1.0};  // background, disc, body
    const double mr_map[3] = {0.5, 0.9, 0.2};
    for (int z = 0; z < spec.dims.z; ++z)
        for (int y = 0; y < spec.dims.y; ++y)
            for (int x = 0; x < spec.dims.x; ++x) {
                const Vec3 p{static_cast<double>(x), static_cast<double>(y),
                             static_cast<double>(z)};
                int cls = 0;
                for (size_t i = 0; i < bodies.size(); ++i)
                    if (bodies[i].contains(p)) {
                        moving_labels.at(x, y, z) = static_cast<uint16_t>(i + 1);
                        cls = 2;
                        break;
                    }
                if (cls == 0) {
                    // disc slab between consecutive bodies, within the xy footprint
                    for (size_t i = 0; i + 1 < bodies.size(); ++i) {
                        const double zlo = bodies[i].center.z + spec.half_extents.z;
                        const double zhi = bodies[i + 1].center.z - spec.half_extents.z;
                        if (p.z > zlo && p.z < zhi && std::fabs(p.x - cx) <= spec.half_extents.x &&
                            std::fabs(p.y - cy) <= spec.half_extents.y) {
                            cls = 1;
                            break;
                        }
                    }
                }
                moving_ct.at(x, y, z) = ct_map[cls];
                moving_mr.at(x, y, z) = mr_map[cls];
            }
    moving_labels.refresh_body_ids();
    if (static_cast<int>(moving_labels.body_ids.size()) != spec.body_count)
        throw std::invalid_argument("phantom: bodies overlap or fell outside the grid");

    Rng rng(spec.seed);
    auto background = detail::BackgroundField::draw(rng, spec.dims, spec.background_amplitude);

    // Draw per-body pullback motions (fixed -> moving).
    std::vector<RigidTransform> motions(bodies.size());
    for (size_t i = 0; i < bodies.size(); ++i) {
        const Vec3 axis = rng.unit_vector();
        const double angle =
            rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg) * M_PI / 180.0;
        RigidTransform t;
        t.rotation = rotation_about_axis(axis, angle);
        t.center = bodies[i].center;
        t.translation = {rng.uniform(-spec.max_translation, spec.max_translation),
                         rng.uniform(-spec.max_translation, spec.max_translation),
                         rng.uniform(-spec.max_translation, spec.max_translation)};
        motions[i] = t;
    }

    std::vector<Volume> indicators;
    for (int body : moving_labels.body_ids) indicators.push_back(indicator(moving_labels, body));

    // Warped body regions in the fixed domain under the exact rigid maps.
    LabelVolume fixed_labels(spec.dims);
    for (int z = 0; z < spec.dims.z; ++z)
        for (int y = 0; y < spec.dims.y; ++y)
            for (int x = 0; x < spec.dims.x; ++x) {
                const Vec3 p{static_cast<double>(x), static_cast<double>(y),
                             static_cast<double>(z)};
                int owner = 0;
                for (size_t i = 0; i < bodies.size(); ++i) {
                    if (sample_trilinear(indicators[i], motions[i].apply(p)) > 0.5) {
                        if (owner != 0)
                            throw BodiesOverlapAfterMotion(
                                "phantom: bodies " + std::to_string(owner) + " and " +
                                std::to_string(i + 1) + " collide after motion");
                        owner = static_cast<int>(i + 1);
                    }
                }
                fixed_labels.at(x, y, z) = static_cast<uint16_t>(owner);
            }
    fixed_labels.refresh_body_ids();
    if (fixed_labels.body_ids != moving_labels.body_ids)
        throw BodiesOverlapAfterMotion("phantom: a body left the grid after motion");

    // Blend the per-body rigid fields through the disc gaps using inverse
    // EDT weights. Two stages keep the field continuous AND exactly rigid
    // where the penalties look: within one voxel of a body only a sharp
    // body-to-body blend acts (foreign weights ~(1/4)^12 there), and the
    // spec exponent blend with the background engages beyond the taper.
    const std::vector<Volume> dist = distance_transform(fixed_labels);
    const double a_bg = std::pow(1.0 + 4.0, -spec.edt_exponent);
    constexpr double kSharpExponent = 12.0;

    DisplacementField gt(spec.dims);
    for (int z = 0; z < spec.dims.z; ++z)
        for (int y = 0; y < spec.dims.y; ++y)
            for (int x = 0; x < spec.dims.x; ++x) {
                const Vec3 p{static_cast<double>(x), static_cast<double>(y),
                             static_cast<double>(z)};
                Vec3 sharp_num{0, 0, 0};
                double sharp_den = 0.0;
                Vec3 soft_num = background.at(p) * a_bg;
                double soft_den = a_bg;
                double dmin = std::numeric_limits<double>::infinity();
                for (size_t i = 0; i < bodies.size(); ++i) {
                    const double d = dist[i].at(x, y, z);
                    dmin = std::min(dmin, d);
                    const Vec3 di = motions[i].apply(p) - p;
                    sharp_num += di * std::pow(1.0 + d, -kSharpExponent);
                    sharp_den += std::pow(1.0 + d, -kSharpExponent);
                    const double w = std::pow(1.0 + d, -spec.edt_exponent);
                    soft_num += di * w;
                    soft_den += w;
                }
                const double t = std::clamp(dmin - 1.0, 0.0, 1.0);
                const double tau = t * t * (3.0 - 2.0 * t);
                gt.at(x, y, z) =
                    (sharp_num / sharp_den) * (1.0 - tau) + (soft_num / soft_den) * tau;
            }

    // fixed = moving geometry warped by the ground-truth field, MRI mapping.
    Volume fixed_image = warp_volume(moving_mr, gt);
    Volume moving_image = moving_ct;

    if (spec.noise > 0.0) {
        for (double& v : fixed_image.data) v = std::clamp(v + spec.noise * rng.normal(), 0.0, 1.0);
        for (double& v : moving_image.data) v = std::clamp(v + spec.noise * rng.normal(), 0.0, 1.0);
    }

    PhantomPair pair;
    pair.fixed_image = std::move(fixed_image);
    pair.moving_image = std::move(moving_image);
    pair.moving_labels = std::move(moving_labels);
    pair.fixed_labels = std::move(fixed_labels);
    pair.gt_field = std::move(gt);
    pair.gt_motions = std::move(motions);
    return pair;
}

}  // namespace rigidreg
