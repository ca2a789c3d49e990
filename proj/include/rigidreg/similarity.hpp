#pragma once

// Multi-modal intensity similarity losses: MIND descriptors, normalized
// mutual information with cubic B-spline Parzen windows, and normalized
// gradient fields. Each loss returns a scalar and the gradient needed to
// chain it back to the displacement field.

#include "rigidreg/field.hpp"
#include "rigidreg/volume.hpp"

namespace rigidreg {

// ---------------------------------------------------------------------------
// MIND

// Per-voxel descriptor over the 6 face neighbors. Channels are stored as
// Volumes so the warp/sampling machinery applies directly.
struct MindDescriptor {
    IVec3 dims;
    Vec3 spacing{1, 1, 1};
    Vec3 origin{0, 0, 0};
    int patch_radius = 1;
    std::array<Volume, 6> channels;
    Volume variance;  // V(x), the per-voxel mean of the 6 patch distances

    bool same_grid(const DisplacementField& phi) const { return dims == phi.dims; }
};

namespace detail {

inline const std::array<IVec3, 6>& face_neighbors() {
    static const std::array<IVec3, 6> r = {{{1, 0, 0},
                                            {-1, 0, 0},
                                            {0, 1, 0},
                                            {0, -1, 0},
                                            {0, 0, 1},
                                            {0, 0, -1}}};
    return r;
}

inline double clamped_at(const Volume& v, int x, int y, int z) {
    x = std::clamp(x, 0, v.dims.x - 1);
    y = std::clamp(y, 0, v.dims.y - 1);
    z = std::clamp(z, 0, v.dims.z - 1);
    return v.at(x, y, z);
}

}  // namespace detail

// MIND descriptor: channel_r = exp(-D_patch(x, x+r) / V(x)), max-normalized
// per voxel. D_patch is the Gaussian-weighted patch SSD (sigma 0.5 voxels),
// V(x) the mean of the 6 distances clamped below by 1e-6.
inline MindDescriptor mind_descriptor(const Volume& vol, int patch_radius = 1) {
    MindDescriptor d;
    d.dims = vol.dims;
    d.spacing = vol.spacing;
    d.origin = vol.origin;
    d.patch_radius = patch_radius;
    for (auto& ch : d.channels) ch = Volume(vol.dims, vol.spacing, vol.origin);
    d.variance = Volume(vol.dims, vol.spacing, vol.origin);

    // Gaussian patch weights, sigma = 0.5 voxels, normalized to sum 1.
    const int pr = patch_radius;
    std::vector<IVec3> offsets;
    std::vector<double> weights;
    double wsum = 0.0;
    for (int oz = -pr; oz <= pr; ++oz)
        for (int oy = -pr; oy <= pr; ++oy)
            for (int ox = -pr; ox <= pr; ++ox) {
                offsets.push_back({ox, oy, oz});
                const double w = std::exp(-(ox * ox + oy * oy + oz * oz) / (2.0 * 0.25));
                weights.push_back(w);
                wsum += w;
            }
    for (double& w : weights) w /= wsum;

    const auto& nbrs = detail::face_neighbors();
    parallel_for_z(vol.dims.z, [&](int z) {
        for (int y = 0; y < vol.dims.y; ++y)
            for (int x = 0; x < vol.dims.x; ++x) {
                double dist[6];
                double mean = 0.0;
                for (int r = 0; r < 6; ++r) {
                    const IVec3& nb = nbrs[r];
                    double ssd = 0.0;
                    for (size_t k = 0; k < offsets.size(); ++k) {
                        const IVec3& o = offsets[k];
                        const double a = detail::clamped_at(vol, x + o.x, y + o.y, z + o.z);
                        const double b = detail::clamped_at(vol, x + nb.x + o.x, y + nb.y + o.y,
                                                            z + nb.z + o.z);
                        ssd += weights[k] * (a - b) * (a - b);
                    }
                    dist[r] = ssd;
                    mean += ssd;
                }
                mean /= 6.0;
                const double V = std::max(mean, 1e-6);
                d.variance.at(x, y, z) = V;

                double ch[6];
                double mx = 0.0;
                for (int r = 0; r < 6; ++r) {
                    ch[r] = std::exp(-dist[r] / V);
                    mx = std::max(mx, ch[r]);
                }
                for (int r = 0; r < 6; ++r) d.channels[r].at(x, y, z) = ch[r] / mx;
            }
    });
    return d;
}

struct LossGradPhi {
    double loss = 0.0;
    FieldGrad grad;  // dL/du on the fixed grid
};

// Mean over voxels and channels of the squared difference between the fixed
// descriptor and the moving descriptor warped by phi. The fit direction of
// the gradient is dL/dphi through the channel interpolants.
inline LossGradPhi mind_loss(const MindDescriptor& fixed_desc,
                             const MindDescriptor& moving_desc,
                             const DisplacementField& phi) {
    if (!fixed_desc.same_grid(phi)) throw GridMismatch("mind_loss: fixed grid != phi grid");

    LossGradPhi out;
    out.grad = FieldGrad(phi.dims, phi.spacing, phi.origin);
    const double scale = 1.0 / (static_cast<double>(phi.voxel_count()) * 6.0);

    out.loss = parallel_sum_z(phi.dims.z, [&](int z) {
        double partial = 0.0;
        for (int y = 0; y < phi.dims.y; ++y)
            for (int x = 0; x < phi.dims.x; ++x) {
                const Vec3 p = phi.map(x, y, z);
                Vec3 g{0, 0, 0};
                for (int r = 0; r < 6; ++r) {
                    const double w = sample_trilinear(moving_desc.channels[r], p);
                    const double f = fixed_desc.channels[r].at(x, y, z);
                    const double diff = w - f;
                    partial += diff * diff;
                    g += (2.0 * scale * diff) *
                         sample_gradient(moving_desc.channels[r], p, /*zero_clamped_axes=*/true);
                }
                out.grad.at(x, y, z) = g;
            }
        return partial;
    });
    out.loss *= scale;
    return out;
}

// ---------------------------------------------------------------------------
// NMI

namespace detail {

// Cubic B-spline kernel and derivative, support |t| < 2.
inline double bspline3(double t) {
    t = std::fabs(t);
    if (t < 1.0) return (4.0 - 6.0 * t * t + 3.0 * t * t * t) / 6.0;
    if (t < 2.0) {
        const double u = 2.0 - t;
        return u * u * u / 6.0;
    }
    return 0.0;
}

inline double bspline3_deriv(double t) {
    const double s = t < 0 ? -1.0 : 1.0;
    t = std::fabs(t);
    if (t < 1.0) return s * (-2.0 * t + 1.5 * t * t);
    if (t < 2.0) {
        const double u = 2.0 - t;
        return s * (-0.5 * u * u);
    }
    return 0.0;
}

}  // namespace detail

// Joint intensity histogram, cubic B-spline Parzen windows. Intensities are
// expected in [0,1]; the bin coordinate is w*(bins-1). Kernel mass clipped
// at the histogram edge is recovered by global normalization.
struct JointHistogram {
    int bins = 32;
    double bandwidth = 1.0;            // kernel bandwidth in bin units
    double total_mass = 0.0;           // kernel mass before normalization
    std::vector<double> counts;        // bins x bins, row = fixed, col = moving
    std::vector<double> marginal_fixed;
    std::vector<double> marginal_moving;

    JointHistogram(const Volume& fixed, const Volume& moving, int nbins = 32)
        : bins(nbins), counts(static_cast<size_t>(nbins) * nbins, 0.0),
          marginal_fixed(nbins, 0.0), marginal_moving(nbins, 0.0) {
        if (!fixed.same_grid(moving)) throw GridMismatch("joint histogram: grids differ");
        const double k = bins - 1;
        for (size_t i = 0; i < fixed.data.size(); ++i) {
            const double tf = fixed.data[i] * k;
            const double tm = moving.data[i] * k;
            const int af0 = std::max(0, static_cast<int>(std::ceil(tf - 2.0)));
            const int af1 = std::min(bins - 1, static_cast<int>(std::floor(tf + 2.0)));
            const int am0 = std::max(0, static_cast<int>(std::ceil(tm - 2.0)));
            const int am1 = std::min(bins - 1, static_cast<int>(std::floor(tm + 2.0)));
            for (int a = af0; a <= af1; ++a) {
                const double wf = detail::bspline3(tf - a);
                if (wf == 0.0) continue;
                for (int b = am0; b <= am1; ++b)
                    counts[static_cast<size_t>(a) * bins + b] +=
                        wf * detail::bspline3(tm - b);
            }
        }
        double total = 0.0;
        for (double c : counts) total += c;
        total_mass = total;
        if (total > 0) {
            for (double& c : counts) c /= total;
        }
        for (int a = 0; a < bins; ++a)
            for (int b = 0; b < bins; ++b) {
                const double p = counts[static_cast<size_t>(a) * bins + b];
                marginal_fixed[a] += p;
                marginal_moving[b] += p;
            }
    }
};

struct LossGradImage {
    double loss = 0.0;
    std::vector<double> grad;  // dL/d(warped intensity) per voxel
};

// loss = -(H(F) + H(W)) / H(F, W) from the Parzen joint histogram.
inline LossGradImage nmi_loss(const Volume& fixed, const Volume& warped, int bins = 32) {
    if (!fixed.same_grid(warped)) throw GridMismatch("nmi_loss: grids differ");
    JointHistogram hist(fixed, warped, bins);

    auto entropy = [](const std::vector<double>& p) {
        double h = 0.0;
        for (double v : p)
            if (v > 0.0) h -= v * std::log(v);
        return h;
    };
    const double hf = entropy(hist.marginal_fixed);
    const double hw = entropy(hist.marginal_moving);
    const double hj = entropy(hist.counts);
    if (hj <= 0.0) throw ConstantVolume("nmi_loss: degenerate joint entropy");

    LossGradImage out;
    out.loss = -(hf + hw) / hj;

    // dL/dp for every histogram cell, then the normalization correction
    // dL/dc = (dL/dp - sum(dL/dp * p)) / S with S folded into p already.
    const size_t nb = static_cast<size_t>(bins);
    std::vector<double> dldp(nb * nb, 0.0);
    double inner = 0.0;
    for (size_t a = 0; a < nb; ++a)
        for (size_t b = 0; b < nb; ++b) {
            const double p = hist.counts[a * nb + b];
            if (p <= 0.0) continue;
            const double dhf = -(std::log(hist.marginal_fixed[a]) + 1.0);
            const double dhw = -(std::log(hist.marginal_moving[b]) + 1.0);
            const double dhj = -(std::log(p) + 1.0);
            const double v = -((dhf + dhw) * hj - (hf + hw) * dhj) / (hj * hj);
            dldp[a * nb + b] = v;
            inner += v * p;
        }

    const double k = bins - 1;
    out.grad.assign(fixed.data.size(), 0.0);
    for (size_t i = 0; i < fixed.data.size(); ++i) {
        const double tf = fixed.data[i] * k;
        const double tm = warped.data[i] * k;
        const int af0 = std::max(0, static_cast<int>(std::ceil(tf - 2.0)));
        const int af1 = std::min(bins - 1, static_cast<int>(std::floor(tf + 2.0)));
        const int am0 = std::max(0, static_cast<int>(std::ceil(tm - 2.0)));
        const int am1 = std::min(bins - 1, static_cast<int>(std::floor(tm + 2.0)));
        double g = 0.0;
        for (int a = af0; a <= af1; ++a) {
            const double wf = detail::bspline3(tf - a);
            if (wf == 0.0) continue;
            for (int b = am0; b <= am1; ++b) {
                const double dv = dldp[static_cast<size_t>(a) * nb + b] - inner;
                g += dv * wf * detail::bspline3_deriv(tm - b);
            }
        }
        // chain: dc/dw carries the bin scale k, dL/dc carries 1/total_mass
        out.grad[i] = g * k / hist.total_mass;
    }
    return out;
}

// ---------------------------------------------------------------------------
// NGF

namespace detail {

// Grid gradient of a scalar image: central differences, one-sided at faces.
inline Vec3 grid_gradient(const Volume& v, int x, int y, int z) {
    auto d = [&](int axis) {
        const int n = axis == 0 ? v.dims.x : (axis == 1 ? v.dims.y : v.dims.z);
        int c[3] = {x, y, z};
        if (c[axis] > 0 && c[axis] < n - 1) {
            int lo[3] = {x, y, z}, hi[3] = {x, y, z};
            --lo[axis];
            ++hi[axis];
            return 0.5 * (v.at(hi[0], hi[1], hi[2]) - v.at(lo[0], lo[1], lo[2]));
        }
        if (c[axis] == 0) {
            int hi[3] = {x, y, z};
            ++hi[axis];
            return v.at(hi[0], hi[1], hi[2]) - v.at(x, y, z);
        }
        int lo[3] = {x, y, z};
        --lo[axis];
        return v.at(x, y, z) - v.at(lo[0], lo[1], lo[2]);
    };
    return {d(0), d(1), d(2)};
}

// Scatter of per-voxel dL/d(grid gradient) back to dL/d(image), the
// transpose of grid_gradient's stencil.
inline void grid_gradient_adjoint(const IVec3& dims, const std::vector<Vec3>& dldg,
                                  std::vector<double>& dldv) {
    auto idx = [&](int x, int y, int z) {
        return static_cast<size_t>(z) * dims.y * dims.x + static_cast<size_t>(y) * dims.x + x;
    };
    for (int z = 0; z < dims.z; ++z)
        for (int y = 0; y < dims.y; ++y)
            for (int x = 0; x < dims.x; ++x) {
                const Vec3& g = dldg[idx(x, y, z)];
                int c[3] = {x, y, z};
                for (int a = 0; a < 3; ++a) {
                    const double ga = g[a];
                    if (ga == 0.0) continue;
                    const int n = dims[a];
                    int lo[3] = {x, y, z}, hi[3] = {x, y, z};
                    --lo[a];
                    ++hi[a];
                    if (c[a] > 0 && c[a] < n - 1) {
                        dldv[idx(hi[0], hi[1], hi[2])] += 0.5 * ga;
                        dldv[idx(lo[0], lo[1], lo[2])] -= 0.5 * ga;
                    } else if (c[a] == 0) {
                        dldv[idx(hi[0], hi[1], hi[2])] += ga;
                        dldv[idx(x, y, z)] -= ga;
                    } else {
                        dldv[idx(x, y, z)] += ga;
                        dldv[idx(lo[0], lo[1], lo[2])] -= ga;
                    }
                }
            }
}

}  // namespace detail

// Suggested epsilon: eps_rel times the mean gradient magnitude of the image.
inline double ngf_default_eps(const Volume& vol, double eps_rel = 1e-2) {
    double sum = 0.0;
    for (int z = 0; z < vol.dims.z; ++z)
        for (int y = 0; y < vol.dims.y; ++y)
            for (int x = 0; x < vol.dims.x; ++x)
                sum += norm(detail::grid_gradient(vol, x, y, z));
    const double mean = sum / static_cast<double>(vol.voxel_count());
    return std::max(eps_rel * mean, 1e-12);
}

// loss = 1 - mean over voxels of <gF, gW>^2 / ((|gF|^2+eps^2)(|gW|^2+eps^2)).
inline LossGradImage ngf_loss(const Volume& fixed, const Volume& warped, double eps) {
    if (!fixed.same_grid(warped)) throw GridMismatch("ngf_loss: grids differ");
    if (!(eps > 0)) throw Error("ngf_loss: eps must be positive");

    const size_t n = fixed.voxel_count();
    const double e2 = eps * eps;
    std::vector<Vec3> dldg(n, Vec3{});

    double acc = 0.0;
    for (int z = 0; z < fixed.dims.z; ++z)
        for (int y = 0; y < fixed.dims.y; ++y)
            for (int x = 0; x < fixed.dims.x; ++x) {
                const Vec3 gf = detail::grid_gradient(fixed, x, y, z);
                const Vec3 gw = detail::grid_gradient(warped, x, y, z);
                const double df = norm2(gf) + e2;
                const double dw = norm2(gw) + e2;
                const double s = dot(gf, gw);
                acc += s * s / (df * dw);
                // d(term)/d(gw) = (2s/(df*dw)) * (gf - (s/dw)*gw)
                dldg[fixed.index(x, y, z)] =
                    (-1.0 / static_cast<double>(n)) * (2.0 * s / (df * dw)) *
                    (gf - (s / dw) * gw);
            }

    LossGradImage out;
    out.loss = 1.0 - acc / static_cast<double>(n);
    out.grad.assign(n, 0.0);
    detail::grid_gradient_adjoint(fixed.dims, dldg, out.grad);
    return out;
}

}  // namespace rigidreg
