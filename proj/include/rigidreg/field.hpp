#pragma once

// Stationary velocity fields, their Lie exponential via scaling-and-squaring,
// the exact reverse-mode adjoint of that recursion, warping, and Jacobian
// analysis.
//
// Displacements are stored in voxel units on the fixed grid. A displacement
// field represents phi(x) = x + u(x), mapping fixed-grid voxel coordinates
// into moving-grid voxel coordinates.

#include "rigidreg/volume.hpp"

namespace rigidreg {

namespace detail {

struct FieldStorage {
    IVec3 dims;
    Vec3 spacing{1, 1, 1};
    Vec3 origin{0, 0, 0};
    std::vector<Vec3> data;

    FieldStorage() : dims{0, 0, 0} {}
    FieldStorage(IVec3 d, Vec3 sp = {1, 1, 1}, Vec3 org = {0, 0, 0})
        : dims(d), spacing(sp), origin(org),
          data(static_cast<size_t>(d.x) * d.y * d.z) {
        check_dims(d);
        check_spacing(sp);
    }

    size_t index(int x, int y, int z) const {
        return static_cast<size_t>(z) * dims.y * dims.x + static_cast<size_t>(y) * dims.x + x;
    }
    Vec3& at(int x, int y, int z) { return data[index(x, y, z)]; }
    const Vec3& at(int x, int y, int z) const { return data[index(x, y, z)]; }
    size_t voxel_count() const { return data.size(); }
    bool same_grid(const FieldStorage& o) const { return dims == o.dims; }

    bool all_finite() const {
        for (const Vec3& v : data)
            if (!std::isfinite(v.x) || !std::isfinite(v.y) || !std::isfinite(v.z)) return false;
        return true;
    }
};

// Trilinear interpolation of a vector field at clamped coordinate p.
inline Vec3 sample_field(const FieldStorage& f, Vec3 p) {
    p.x = std::clamp(p.x, 0.0, static_cast<double>(f.dims.x - 1));
    p.y = std::clamp(p.y, 0.0, static_cast<double>(f.dims.y - 1));
    p.z = std::clamp(p.z, 0.0, static_cast<double>(f.dims.z - 1));
    int ix, iy, iz;
    double fx, fy, fz;
    cell_coord(p.x, f.dims.x, ix, fx);
    cell_coord(p.y, f.dims.y, iy, fy);
    cell_coord(p.z, f.dims.z, iz, fz);

    const Vec3& c000 = f.at(ix, iy, iz);
    const Vec3& c100 = f.at(ix + 1, iy, iz);
    const Vec3& c010 = f.at(ix, iy + 1, iz);
    const Vec3& c110 = f.at(ix + 1, iy + 1, iz);
    const Vec3& c001 = f.at(ix, iy, iz + 1);
    const Vec3& c101 = f.at(ix + 1, iy, iz + 1);
    const Vec3& c011 = f.at(ix, iy + 1, iz + 1);
    const Vec3& c111 = f.at(ix + 1, iy + 1, iz + 1);

    const Vec3 c00 = c000 + fx * (c100 - c000);
    const Vec3 c10 = c010 + fx * (c110 - c010);
    const Vec3 c01 = c001 + fx * (c101 - c001);
    const Vec3 c11 = c011 + fx * (c111 - c011);
    const Vec3 c0 = c00 + fy * (c10 - c00);
    const Vec3 c1 = c01 + fy * (c11 - c01);
    return c0 + fz * (c1 - c0);
}

}  // namespace detail

struct VelocityField : detail::FieldStorage {
    using FieldStorage::FieldStorage;
};

struct DisplacementField : detail::FieldStorage {
    using FieldStorage::FieldStorage;

    Vec3 map(int x, int y, int z) const {  // phi(x) for a grid voxel
        const Vec3& u = at(x, y, z);
        return {x + u.x, y + u.y, z + u.z};
    }
};

struct JacobianField {
    IVec3 dims;
    std::vector<Mat3> data;

    JacobianField() : dims{0, 0, 0} {}
    explicit JacobianField(IVec3 d)
        : dims(d), data(static_cast<size_t>(d.x) * d.y * d.z) {}

    size_t index(int x, int y, int z) const {
        return static_cast<size_t>(z) * dims.y * dims.x + static_cast<size_t>(y) * dims.x + x;
    }
    Mat3& at(int x, int y, int z) { return data[index(x, y, z)]; }
    const Mat3& at(int x, int y, int z) const { return data[index(x, y, z)]; }
};

// Gradient accumulator with the same layout as a field (dL/du per voxel).
using FieldGrad = detail::FieldStorage;

// ---------------------------------------------------------------------------
// Scaling and squaring

namespace detail {

// One squaring step: w(x) = u(x) + u(x + u(x)).
inline void squaring_step(const FieldStorage& u, FieldStorage& w) {
    parallel_for_z(u.dims.z, [&](int z) {
        for (int y = 0; y < u.dims.y; ++y)
            for (int x = 0; x < u.dims.x; ++x) {
                const Vec3& ux = u.at(x, y, z);
                const Vec3 p{x + ux.x, y + ux.y, z + ux.z};
                w.at(x, y, z) = ux + sample_field(u, p);
            }
    });
}

}  // namespace detail

// Intermediate displacement ladder of exp_svf, kept for the adjoint pass.
// u[0] = v / 2^steps, u[k+1] = u[k] + u[k] o (id + u[k]); u[steps] is the
// final displacement.
struct SvfTape {
    std::vector<detail::FieldStorage> u;
    int steps = 0;
};

inline SvfTape exp_svf_tape(const VelocityField& v, int steps = 7) {
    if (steps < 0) throw Error("exp_svf: steps must be >= 0");
    SvfTape tape;
    tape.steps = steps;
    tape.u.reserve(static_cast<size_t>(steps) + 1);

    detail::FieldStorage u0(v.dims, v.spacing, v.origin);
    const double scale = std::pow(0.5, steps);
    for (size_t i = 0; i < v.data.size(); ++i) u0.data[i] = v.data[i] * scale;
    tape.u.push_back(std::move(u0));

    for (int k = 0; k < steps; ++k) {
        detail::FieldStorage w(v.dims, v.spacing, v.origin);
        detail::squaring_step(tape.u.back(), w);
        tape.u.push_back(std::move(w));
    }
    return tape;
}

// Lie exponential of a stationary velocity field: phi = id + u_steps.
inline DisplacementField exp_svf(const VelocityField& v, int steps = 7) {
    SvfTape tape = exp_svf_tape(v, steps);
    DisplacementField phi(v.dims, v.spacing, v.origin);
    phi.data = std::move(tape.u.back().data);
    return phi;
}

// Reverse-mode adjoint of the squaring recursion. Given dL/du_steps
// (== dL/dphi), returns dL/dv exactly: per step, the direct term, the
// scatter of the gradient through the trilinear weights at x + u_k(x), and
// the inner-argument term (grad u_k at the sample point, transposed).
inline FieldGrad exp_svf_adjoint(const SvfTape& tape, const FieldGrad& grad_phi) {
    const detail::FieldStorage& u_final = tape.u.back();
    if (!grad_phi.same_grid(u_final)) throw GridMismatch("adjoint gradient grid mismatch");

    const IVec3 dims = u_final.dims;
    FieldGrad g = grad_phi;

    for (int k = tape.steps - 1; k >= 0; --k) {
        const detail::FieldStorage& u = tape.u[static_cast<size_t>(k)];
        FieldGrad gk(u.dims, u.spacing, u.origin);

        // Scatter runs single-threaded: adjacent voxels write to shared
        // corners. The gather terms could be parallel but the pass is
        // memory-bound anyway.
        for (int z = 0; z < dims.z; ++z)
            for (int y = 0; y < dims.y; ++y)
                for (int x = 0; x < dims.x; ++x) {
                    const Vec3 gin = g.at(x, y, z);
                    // direct term
                    gk.at(x, y, z) += gin;

                    const Vec3& ux = u.at(x, y, z);
                    const Vec3 p{x + ux.x, y + ux.y, z + ux.z};
                    const bool out_x = p.x < 0.0 || p.x > dims.x - 1;
                    const bool out_y = p.y < 0.0 || p.y > dims.y - 1;
                    const bool out_z = p.z < 0.0 || p.z > dims.z - 1;
                    const double cx = std::clamp(p.x, 0.0, static_cast<double>(dims.x - 1));
                    const double cy = std::clamp(p.y, 0.0, static_cast<double>(dims.y - 1));
                    const double cz = std::clamp(p.z, 0.0, static_cast<double>(dims.z - 1));
                    int ix, iy, iz;
                    double fx, fy, fz;
                    detail::cell_coord(cx, dims.x, ix, fx);
                    detail::cell_coord(cy, dims.y, iy, fy);
                    detail::cell_coord(cz, dims.z, iz, fz);

                    const double wx[2] = {1 - fx, fx};
                    const double wy[2] = {1 - fy, fy};
                    const double wz[2] = {1 - fz, fz};

                    // scatter through the trilinear weights, and accumulate
                    // the interpolant's spatial gradient for the inner term
                    Vec3 du_dx{0, 0, 0}, du_dy{0, 0, 0}, du_dz{0, 0, 0};
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const double w = wx[dx] * wy[dy] * wz[dz];
                                Vec3& dst = gk.at(ix + dx, iy + dy, iz + dz);
                                dst += gin * w;

                                const Vec3& c = u.at(ix + dx, iy + dy, iz + dz);
                                const double sx = dx ? 1.0 : -1.0;
                                const double sy = dy ? 1.0 : -1.0;
                                const double sz = dz ? 1.0 : -1.0;
                                du_dx += c * (sx * wy[dy] * wz[dz]);
                                du_dy += c * (wx[dx] * sy * wz[dz]);
                                du_dz += c * (wx[dx] * wy[dy] * sz);
                            }
                    if (out_x) du_dx = {0, 0, 0};
                    if (out_y) du_dy = {0, 0, 0};
                    if (out_z) du_dz = {0, 0, 0};

                    // inner-argument term: (grad u at p)^T * gin
                    gk.at(x, y, z) += Vec3{dot(du_dx, gin), dot(du_dy, gin), dot(du_dz, gin)};
                }
        g = std::move(gk);
    }

    const double scale = std::pow(0.5, tape.steps);
    for (Vec3& v : g.data) v *= scale;
    return g;
}

inline FieldGrad exp_svf_adjoint(const VelocityField& v, const FieldGrad& grad_phi,
                                 int steps = 7) {
    return exp_svf_adjoint(exp_svf_tape(v, steps), grad_phi);
}

// ---------------------------------------------------------------------------
// Warping

// out(x) = vol sampled at phi(x).
inline Volume warp_volume(const Volume& vol, const DisplacementField& phi) {
    Volume out(phi.dims, phi.spacing, phi.origin);
    parallel_for_z(phi.dims.z, [&](int z) {
        for (int y = 0; y < phi.dims.y; ++y)
            for (int x = 0; x < phi.dims.x; ++x)
                out.at(x, y, z) = sample_trilinear(vol, phi.map(x, y, z));
    });
    return out;
}

// Trilinear warp of the {0,1} indicator of one body; values in [0,1].
inline Volume warp_label_soft(const LabelVolume& labels, int body,
                              const DisplacementField& phi) {
    const Volume ind = indicator(labels, body);  // throws UnknownBody
    return warp_volume(ind, phi);
}

// Composition r(x) = a(x) + b(x + a(x)): the displacement of phi_b o phi_a.
inline DisplacementField compose(const DisplacementField& a, const DisplacementField& b) {
    if (!a.same_grid(b)) throw GridMismatch("compose: field grids differ");
    DisplacementField r(a.dims, a.spacing, a.origin);
    parallel_for_z(a.dims.z, [&](int z) {
        for (int y = 0; y < a.dims.y; ++y)
            for (int x = 0; x < a.dims.x; ++x) {
                const Vec3& ua = a.at(x, y, z);
                r.at(x, y, z) = ua + detail::sample_field(b, {x + ua.x, y + ua.y, z + ua.z});
            }
    });
    return r;
}

// ---------------------------------------------------------------------------
// Jacobian analysis

namespace detail {

// Central difference along one axis of the displacement, one-sided at faces.
// Returns d(u)/d(axis) at (x,y,z) in voxel units.
inline Vec3 diff_axis(const FieldStorage& u, int x, int y, int z, int axis) {
    const int n = u.dims[axis];
    int c[3] = {x, y, z};
    if (c[axis] > 0 && c[axis] < n - 1) {
        int lo[3] = {x, y, z}, hi[3] = {x, y, z};
        lo[axis] -= 1;
        hi[axis] += 1;
        return (u.at(hi[0], hi[1], hi[2]) - u.at(lo[0], lo[1], lo[2])) * 0.5;
    }
    if (c[axis] == 0) {
        int hi[3] = {x, y, z};
        hi[axis] += 1;
        return u.at(hi[0], hi[1], hi[2]) - u.at(x, y, z);
    }
    int lo[3] = {x, y, z};
    lo[axis] -= 1;
    return u.at(x, y, z) - u.at(lo[0], lo[1], lo[2]);
}

}  // namespace detail

// Jacobian of the full map phi = id + u: J(x) = I + Du(x), central
// differences in the interior, one-sided at boundaries, voxel units.
inline JacobianField jacobian(const DisplacementField& phi) {
    JacobianField J(phi.dims);
    parallel_for_z(phi.dims.z, [&](int z) {
        for (int y = 0; y < phi.dims.y; ++y)
            for (int x = 0; x < phi.dims.x; ++x) {
                Mat3 m = Mat3::identity();
                for (int a = 0; a < 3; ++a) {
                    const Vec3 d = detail::diff_axis(phi, x, y, z, a);
                    m(0, a) += d.x;
                    m(1, a) += d.y;
                    m(2, a) += d.z;
                }
                J.at(x, y, z) = m;
            }
    });
    return J;
}

inline Volume jacobian_det(const JacobianField& J) {
    Volume out(J.dims);
    parallel_for_z(J.dims.z, [&](int z) {
        for (int y = 0; y < J.dims.y; ++y)
            for (int x = 0; x < J.dims.x; ++x) out.at(x, y, z) = J.at(x, y, z).det();
    });
    return out;
}

// Adjoint of the jacobian() stencil: scatters per-voxel dL/dJ back to dL/du.
// Column a of dL/dJ at x distributes to u at the stencil points of axis a.
inline FieldGrad jacobian_adjoint(const std::vector<Mat3>& dldj, const IVec3& dims) {
    FieldGrad g(dims);
    auto idx = [&](int x, int y, int z) {
        return static_cast<size_t>(z) * dims.y * dims.x + static_cast<size_t>(y) * dims.x + x;
    };
    for (int z = 0; z < dims.z; ++z)
        for (int y = 0; y < dims.y; ++y)
            for (int x = 0; x < dims.x; ++x) {
                const Mat3& m = dldj[idx(x, y, z)];
                int c[3] = {x, y, z};
                for (int a = 0; a < 3; ++a) {
                    const Vec3 col{m(0, a), m(1, a), m(2, a)};
                    const int n = dims[a];
                    int lo[3] = {x, y, z}, hi[3] = {x, y, z};
                    lo[a] -= 1;
                    hi[a] += 1;
                    if (c[a] > 0 && c[a] < n - 1) {
                        g.data[idx(hi[0], hi[1], hi[2])] += col * 0.5;
                        g.data[idx(lo[0], lo[1], lo[2])] -= col * 0.5;
                    } else if (c[a] == 0) {
                        g.data[idx(hi[0], hi[1], hi[2])] += col;
                        g.data[idx(x, y, z)] -= col;
                    } else {
                        g.data[idx(x, y, z)] += col;
                        g.data[idx(lo[0], lo[1], lo[2])] -= col;
                    }
                }
            }
    return g;
}

// ---------------------------------------------------------------------------
// Field resampling (pyramid transfer)

// Resample a field onto new dims covering the same extent. Values are
// displacement vectors in voxel units of their own grid, so each component
// is rescaled by the per-axis dimension ratio.
inline detail::FieldStorage resample_field(const detail::FieldStorage& f, IVec3 new_dims) {
    const Vec3 r{static_cast<double>(new_dims.x - 1) / (f.dims.x - 1),
                 static_cast<double>(new_dims.y - 1) / (f.dims.y - 1),
                 static_cast<double>(new_dims.z - 1) / (f.dims.z - 1)};
    detail::FieldStorage out(new_dims,
                             {f.spacing.x / r.x, f.spacing.y / r.y, f.spacing.z / r.z},
                             f.origin);
    parallel_for_z(new_dims.z, [&](int z) {
        for (int y = 0; y < new_dims.y; ++y)
            for (int x = 0; x < new_dims.x; ++x) {
                const Vec3 s = detail::sample_field(f, {x / r.x, y / r.y, z / r.z});
                out.at(x, y, z) = {s.x * r.x, s.y * r.y, s.z * r.z};
            }
    });
    return out;
}

}  // namespace rigidreg
