#pragma once

// Shared fixtures and independent oracles for the test suites. Everything
// here stays deliberately dumb (dense loops, brute force) so it can serve as
// a reference for the optimized implementation paths.

#include <functional>

#include "rigidreg/field.hpp"
#include "rigidreg/rigidity.hpp"
#include "rigidreg/volume.hpp"

namespace test {

using namespace rigidreg;

inline Volume make_ramp(IVec3 dims, Vec3 coeff, double offset = 0.0) {
    Volume v(dims);
    for (int z = 0; z < dims.z; ++z)
        for (int y = 0; y < dims.y; ++y)
            for (int x = 0; x < dims.x; ++x)
                v.at(x, y, z) = coeff.x * x + coeff.y * y + coeff.z * z + offset;
    return v;
}

inline Volume make_random_volume(IVec3 dims, Rng& rng, double lo = 0.0, double hi = 1.0) {
    Volume v(dims);
    for (double& d : v.data) d = rng.uniform(lo, hi);
    return v;
}

// Smooth small random velocity field: random per-voxel values blurred by a
// few box passes, then scaled to a max norm.
inline VelocityField make_smooth_field(IVec3 dims, Rng& rng, double max_norm) {
    VelocityField v(dims);
    for (Vec3& u : v.data)
        u = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    for (int pass = 0; pass < 2; ++pass) {
        VelocityField s = v;
        for (int z = 0; z < dims.z; ++z)
            for (int y = 0; y < dims.y; ++y)
                for (int x = 0; x < dims.x; ++x) {
                    Vec3 acc{0, 0, 0};
                    int n = 0;
                    for (int dz = -1; dz <= 1; ++dz)
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx) {
                                const int xx = x + dx, yy = y + dy, zz = z + dz;
                                if (xx < 0 || yy < 0 || zz < 0 || xx >= dims.x ||
                                    yy >= dims.y || zz >= dims.z)
                                    continue;
                                acc += s.at(xx, yy, zz);
                                ++n;
                            }
                    v.at(x, y, z) = acc / n;
                }
    }
    double mx = 0.0;
    for (const Vec3& u : v.data) mx = std::max(mx, norm(u));
    if (mx > 0)
        for (Vec3& u : v.data) u *= max_norm / mx;
    return v;
}

// Displacement field of an affine map phi(x) = A x + b (A includes identity).
inline DisplacementField affine_field(IVec3 dims, const Mat3& a, const Vec3& b) {
    DisplacementField phi(dims);
    for (int z = 0; z < dims.z; ++z)
        for (int y = 0; y < dims.y; ++y)
            for (int x = 0; x < dims.x; ++x) {
                const Vec3 p{static_cast<double>(x), static_cast<double>(y),
                             static_cast<double>(z)};
                phi.at(x, y, z) = a * p + b - p;
            }
    return phi;
}

inline DisplacementField rigid_motion_field(IVec3 dims, const RigidTransform& t) {
    DisplacementField phi(dims);
    for (int z = 0; z < dims.z; ++z)
        for (int y = 0; y < dims.y; ++y)
            for (int x = 0; x < dims.x; ++x) {
                const Vec3 p{static_cast<double>(x), static_cast<double>(y),
                             static_cast<double>(z)};
                phi.at(x, y, z) = t.apply(p) - p;
            }
    return phi;
}

// Cube body centered in the grid; returns labels with a single body 1.
inline LabelVolume make_cube_labels(IVec3 dims, int side) {
    LabelVolume labels(dims);
    const int x0 = (dims.x - side) / 2, y0 = (dims.y - side) / 2, z0 = (dims.z - side) / 2;
    for (int z = z0; z < z0 + side; ++z)
        for (int y = y0; y < y0 + side; ++y)
            for (int x = x0; x < x0 + side; ++x) labels.at(x, y, z) = 1;
    labels.refresh_body_ids();
    return labels;
}

inline Vec3 cube_centroid(const LabelVolume& labels, int body) {
    Vec3 c{0, 0, 0};
    double n = 0;
    for (int z = 0; z < labels.dims.z; ++z)
        for (int y = 0; y < labels.dims.y; ++y)
            for (int x = 0; x < labels.dims.x; ++x)
                if (labels.at(x, y, z) == body) {
                    c += Vec3{static_cast<double>(x), static_cast<double>(y),
                              static_cast<double>(z)};
                    n += 1;
                }
    return c / n;
}

// Central finite-difference directional derivative of a scalar functional of
// a velocity field, for gradient dot-product tests.
inline double fd_directional(const std::function<double(const VelocityField&)>& f,
                             const VelocityField& v, const VelocityField& dir, double h) {
    VelocityField vp = v, vm = v;
    for (size_t i = 0; i < v.data.size(); ++i) {
        vp.data[i] += dir.data[i] * h;
        vm.data[i] -= dir.data[i] * h;
    }
    return (f(vp) - f(vm)) / (2.0 * h);
}

inline double dot_fields(const detail::FieldStorage& a, const detail::FieldStorage& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) s += dot(a.data[i], b.data[i]);
    return s;
}

inline double rel_err(double got, double want) {
    const double denom = std::max(std::fabs(got), std::fabs(want));
    if (denom == 0.0) return 0.0;
    return std::fabs(got - want) / denom;
}

}  // namespace test
