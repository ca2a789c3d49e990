#pragma once

// Dense 3D scalar and label grids with trilinear sampling, gradients,
// resampling and intensity normalization.
//
// Grid convention: world = origin + index * spacing, axis aligned. Data is
// row-major with x fastest. Sampling coordinates are continuous voxel
// indices; out-of-bounds coordinates clamp to the boundary face.

#include <cstdint>
#include <limits>

#include "rigidreg/core.hpp"

namespace rigidreg {

namespace detail {

inline void check_dims(const IVec3& dims) {
    if (dims.x < 2 || dims.y < 2 || dims.z < 2)
        throw Error("grid dims must be >= 2 per axis");
}

inline void check_spacing(const Vec3& spacing) {
    if (spacing.x <= 0 || spacing.y <= 0 || spacing.z <= 0)
        throw Error("voxel spacing must be positive");
}

// Per-axis interpolation cell: base index i in [0, n-2] and fraction
// f in [0, 1], from an already clamped coordinate.
inline void cell_coord(double p, int n, int& i, double& f) {
    i = static_cast<int>(std::floor(p));
    if (i < 0) i = 0;
    if (i > n - 2) i = n - 2;
    f = p - i;
}

}  // namespace detail

struct Volume {
    IVec3 dims;
    Vec3 spacing{1, 1, 1};
    Vec3 origin{0, 0, 0};
    std::vector<double> data;

    Volume() : dims{0, 0, 0} {}
    Volume(IVec3 d, Vec3 sp = {1, 1, 1}, Vec3 org = {0, 0, 0}, double fill = 0.0)
        : dims(d), spacing(sp), origin(org),
          data(static_cast<size_t>(d.x) * d.y * d.z, fill) {
        detail::check_dims(d);
        detail::check_spacing(sp);
    }

    size_t index(int x, int y, int z) const {
        return static_cast<size_t>(z) * dims.y * dims.x + static_cast<size_t>(y) * dims.x + x;
    }
    double& at(int x, int y, int z) { return data[index(x, y, z)]; }
    double at(int x, int y, int z) const { return data[index(x, y, z)]; }
    size_t voxel_count() const { return data.size(); }

    bool same_grid(const Volume& o) const {
        return dims == o.dims;
    }
};

struct LabelVolume {
    IVec3 dims;
    Vec3 spacing{1, 1, 1};
    Vec3 origin{0, 0, 0};
    std::vector<uint16_t> data;
    std::vector<int> body_ids;  // sorted distinct nonzero labels

    LabelVolume() : dims{0, 0, 0} {}
    LabelVolume(IVec3 d, Vec3 sp = {1, 1, 1}, Vec3 org = {0, 0, 0})
        : dims(d), spacing(sp), origin(org),
          data(static_cast<size_t>(d.x) * d.y * d.z, 0) {
        detail::check_dims(d);
        detail::check_spacing(sp);
    }

    size_t index(int x, int y, int z) const {
        return static_cast<size_t>(z) * dims.y * dims.x + static_cast<size_t>(y) * dims.x + x;
    }
    uint16_t& at(int x, int y, int z) { return data[index(x, y, z)]; }
    uint16_t at(int x, int y, int z) const { return data[index(x, y, z)]; }
    size_t voxel_count() const { return data.size(); }

    // Recomputes body_ids from data. Call after any bulk edit.
    void refresh_body_ids() {
        std::vector<bool> seen(65536, false);
        for (uint16_t v : data) seen[v] = true;
        body_ids.clear();
        for (int v = 1; v < 65536; ++v)
            if (seen[v]) body_ids.push_back(v);
    }

    bool has_body(int body) const {
        return std::find(body_ids.begin(), body_ids.end(), body) != body_ids.end();
    }
};

// {0,1} indicator volume of one body. Throws UnknownBody.
inline Volume indicator(const LabelVolume& labels, int body) {
    if (!labels.has_body(body))
        throw UnknownBody("no body with label " + std::to_string(body));
    Volume out(labels.dims, labels.spacing, labels.origin, 0.0);
    for (size_t i = 0; i < labels.data.size(); ++i)
        out.data[i] = labels.data[i] == body ? 1.0 : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Sampling

// Trilinear interpolation at continuous voxel coordinate p; coordinates
// outside the grid are clamped to the boundary face first.
inline double sample_trilinear(const Volume& vol, Vec3 p) {
    p.x = std::clamp(p.x, 0.0, static_cast<double>(vol.dims.x - 1));
    p.y = std::clamp(p.y, 0.0, static_cast<double>(vol.dims.y - 1));
    p.z = std::clamp(p.z, 0.0, static_cast<double>(vol.dims.z - 1));
    int ix, iy, iz;
    double fx, fy, fz;
    detail::cell_coord(p.x, vol.dims.x, ix, fx);
    detail::cell_coord(p.y, vol.dims.y, iy, fy);
    detail::cell_coord(p.z, vol.dims.z, iz, fz);

    const double c000 = vol.at(ix, iy, iz), c100 = vol.at(ix + 1, iy, iz);
    const double c010 = vol.at(ix, iy + 1, iz), c110 = vol.at(ix + 1, iy + 1, iz);
    const double c001 = vol.at(ix, iy, iz + 1), c101 = vol.at(ix + 1, iy, iz + 1);
    const double c011 = vol.at(ix, iy + 1, iz + 1), c111 = vol.at(ix + 1, iy + 1, iz + 1);

    const double c00 = c000 + fx * (c100 - c000);
    const double c10 = c010 + fx * (c110 - c010);
    const double c01 = c001 + fx * (c101 - c001);
    const double c11 = c011 + fx * (c111 - c011);
    const double c0 = c00 + fy * (c10 - c00);
    const double c1 = c01 + fy * (c11 - c01);
    return c0 + fz * (c1 - c0);
}

// Spatial gradient of the trilinear interpolant at p, in intensity per
// voxel. One-sided at clamped boundaries (the boundary cell's slope).
// If zero_clamped_axes is true, an axis whose input coordinate lies outside
// the grid contributes zero instead -- that is the true derivative of the
// clamped sampler and is what warp adjoints need.
inline Vec3 sample_gradient(const Volume& vol, Vec3 p, bool zero_clamped_axes = false) {
    const bool out_x = p.x < 0.0 || p.x > vol.dims.x - 1;
    const bool out_y = p.y < 0.0 || p.y > vol.dims.y - 1;
    const bool out_z = p.z < 0.0 || p.z > vol.dims.z - 1;
    p.x = std::clamp(p.x, 0.0, static_cast<double>(vol.dims.x - 1));
    p.y = std::clamp(p.y, 0.0, static_cast<double>(vol.dims.y - 1));
    p.z = std::clamp(p.z, 0.0, static_cast<double>(vol.dims.z - 1));
    int ix, iy, iz;
    double fx, fy, fz;
    detail::cell_coord(p.x, vol.dims.x, ix, fx);
    detail::cell_coord(p.y, vol.dims.y, iy, fy);
    detail::cell_coord(p.z, vol.dims.z, iz, fz);

    const double c000 = vol.at(ix, iy, iz), c100 = vol.at(ix + 1, iy, iz);
    const double c010 = vol.at(ix, iy + 1, iz), c110 = vol.at(ix + 1, iy + 1, iz);
    const double c001 = vol.at(ix, iy, iz + 1), c101 = vol.at(ix + 1, iy, iz + 1);
    const double c011 = vol.at(ix, iy + 1, iz + 1), c111 = vol.at(ix + 1, iy + 1, iz + 1);

    const double gx = (1 - fy) * (1 - fz) * (c100 - c000) + fy * (1 - fz) * (c110 - c010) +
                      (1 - fy) * fz * (c101 - c001) + fy * fz * (c111 - c011);
    const double gy = (1 - fx) * (1 - fz) * (c010 - c000) + fx * (1 - fz) * (c110 - c100) +
                      (1 - fx) * fz * (c011 - c001) + fx * fz * (c111 - c101);
    const double gz = (1 - fx) * (1 - fy) * (c001 - c000) + fx * (1 - fy) * (c101 - c100) +
                      (1 - fx) * fy * (c011 - c010) + fx * fy * (c111 - c110);

    Vec3 g{gx, gy, gz};
    if (zero_clamped_axes) {
        if (out_x) g.x = 0.0;
        if (out_y) g.y = 0.0;
        if (out_z) g.z = 0.0;
    }
    return g;
}

// ---------------------------------------------------------------------------
// Intensity utilities

// Affine rescale so min -> 0, max -> 1. Throws ConstantVolume.
inline Volume normalize_intensity(const Volume& vol) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (double v : vol.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (!(hi > lo)) throw ConstantVolume("cannot normalize a constant volume");
    Volume out = vol;
    const double scale = 1.0 / (hi - lo);
    for (double& v : out.data) v = (v - lo) * scale;
    return out;
}

// ---------------------------------------------------------------------------
// Resampling

namespace detail {
inline IVec3 resampled_dims(const IVec3& dims, const Vec3& spacing, double target) {
    auto axis = [&](int d, double sp) {
        return static_cast<int>(std::ceil((d - 1) * sp / target)) + 1;
    };
    return {axis(dims.x, spacing.x), axis(dims.y, spacing.y), axis(dims.z, spacing.z)};
}
}  // namespace detail

// Resample to isotropic spacing, covering the same physical extent.
// Output dims = ceil((dims-1)*spacing/target)+1 per axis.
inline Volume resample_isotropic(const Volume& vol, double target_spacing) {
    if (target_spacing <= 0) throw Error("target spacing must be positive");
    const IVec3 nd = detail::resampled_dims(vol.dims, vol.spacing, target_spacing);
    Volume out(nd, {target_spacing, target_spacing, target_spacing}, vol.origin);
    const Vec3 r{target_spacing / vol.spacing.x, target_spacing / vol.spacing.y,
                 target_spacing / vol.spacing.z};
    parallel_for_z(nd.z, [&](int z) {
        for (int y = 0; y < nd.y; ++y)
            for (int x = 0; x < nd.x; ++x)
                out.at(x, y, z) = sample_trilinear(vol, {x * r.x, y * r.y, z * r.z});
    });
    return out;
}

// Nearest-neighbor label resampling; never introduces new labels.
inline LabelVolume resample_isotropic(const LabelVolume& labels, double target_spacing) {
    if (target_spacing <= 0) throw Error("target spacing must be positive");
    const IVec3 nd = detail::resampled_dims(labels.dims, labels.spacing, target_spacing);
    LabelVolume out(nd, {target_spacing, target_spacing, target_spacing}, labels.origin);
    const Vec3 r{target_spacing / labels.spacing.x, target_spacing / labels.spacing.y,
                 target_spacing / labels.spacing.z};
    auto nearest = [](double p, int n) {
        int i = static_cast<int>(std::lround(p));
        return std::clamp(i, 0, n - 1);
    };
    parallel_for_z(nd.z, [&](int z) {
        for (int y = 0; y < nd.y; ++y)
            for (int x = 0; x < nd.x; ++x)
                out.at(x, y, z) = labels.at(nearest(x * r.x, labels.dims.x),
                                            nearest(y * r.y, labels.dims.y),
                                            nearest(z * r.z, labels.dims.z));
    });
    out.refresh_body_ids();
    return out;
}

}  // namespace rigidreg
