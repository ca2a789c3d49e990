#pragma once

// Biomechanical rigidity penalties: closest-rigid fitting of warped bodies,
// rigid dice loss, rigid field loss, properness condition (unit Jacobian
// determinant), orthonormal condition, and the direct volume loss. Each loss
// returns its value and dL/dphi; the rigid fits are treated as constants per
// evaluation (no gradient through the SVD).

#include <Eigen/Dense>

#include "rigidreg/field.hpp"
#include "rigidreg/volume.hpp"

namespace rigidreg {

// Proper rigid map T(x) = R (x - center) + center + translation, in voxel
// coordinates. center is the fit centroid, kept for conditioning.
struct RigidTransform {
    Mat3 rotation = Mat3::identity();
    Vec3 translation{0, 0, 0};
    Vec3 center{0, 0, 0};

    Vec3 apply(const Vec3& p) const { return rotation * (p - center) + center + translation; }

    // Equivalent translation for the origin-centered form T(x) = R x + t.
    Vec3 translation_about_origin() const {
        return center + translation - rotation * center;
    }
};

struct PointCorrespondences {
    std::vector<Vec3> source;  // P
    std::vector<Vec3> target;  // Q, same length
};

// Kabsch/Umeyama without scaling: centroid-align, SVD of the 3x3
// cross-covariance, reflection corrected by a sign flip of the smallest
// singular direction. Minimizes sum ||R(p - pbar) + qbar - q||^2.
inline RigidTransform fit_rigid(const PointCorrespondences& corr) {
    const size_t n = corr.source.size();
    if (n != corr.target.size()) throw Error("fit_rigid: point counts differ");
    if (n < 3) throw DegenerateGeometry("fit_rigid: need at least 3 correspondences");

    Vec3 pbar{0, 0, 0}, qbar{0, 0, 0};
    for (size_t i = 0; i < n; ++i) {
        pbar += corr.source[i];
        qbar += corr.target[i];
    }
    pbar = pbar / static_cast<double>(n);
    qbar = qbar / static_cast<double>(n);

    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    double spread = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const Vec3 p = corr.source[i] - pbar;
        const Vec3 q = corr.target[i] - qbar;
        Eigen::Vector3d pe(p.x, p.y, p.z), qe(q.x, q.y, q.z);
        cov += pe * qe.transpose();
        spread += norm2(p);
    }

    // Collinearity check on the source spread: the second-largest principal
    // extent must be non-negligible for a unique rotation.
    Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
    for (size_t i = 0; i < n; ++i) {
        const Vec3 p = corr.source[i] - pbar;
        Eigen::Vector3d pe(p.x, p.y, p.z);
        scatter += pe * pe.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(scatter);
    const double lead = eig.eigenvalues()(2);
    if (!(lead > 0.0) || eig.eigenvalues()(1) <= 1e-9 * lead)
        throw DegenerateGeometry("fit_rigid: source points are collinear");

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d u = svd.matrixU();
    Eigen::Matrix3d v = svd.matrixV();
    Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
    if ((v * u.transpose()).determinant() < 0.0) d(2, 2) = -1.0;
    const Eigen::Matrix3d rot = v * d * u.transpose();

    RigidTransform t;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) t.rotation(i, j) = rot(i, j);
    t.center = pbar;
    t.translation = qbar - pbar;
    return t;
}

// ---------------------------------------------------------------------------
// Per-body machinery

namespace detail {

// Fixed-grid voxels whose warped soft indicator exceeds 0.5, with the soft
// indicator itself. The summation domain of every per-body penalty.
struct BodySupport {
    Volume soft;               // warp_label_soft(body, phi)
    std::vector<IVec3> voxels; // coordinates with soft > 0.5
};

inline BodySupport body_support(const LabelVolume& labels, int body,
                                const DisplacementField& phi) {
    BodySupport s;
    s.soft = warp_label_soft(labels, body, phi);
    for (int z = 0; z < phi.dims.z; ++z)
        for (int y = 0; y < phi.dims.y; ++y)
            for (int x = 0; x < phi.dims.x; ++x)
                if (s.soft.at(x, y, z) > 0.5) s.voxels.push_back({x, y, z});
    return s;
}

// Deterministic stratified subsampling: evenly strided indices over the
// z-major voxel order.
inline std::vector<size_t> stride_sample(size_t n, size_t cap) {
    std::vector<size_t> idx;
    if (cap == 0 || n <= cap) {
        idx.resize(n);
        for (size_t i = 0; i < n; ++i) idx[i] = i;
        return idx;
    }
    idx.reserve(cap);
    for (size_t j = 0; j < cap; ++j) idx.push_back(j * n / cap);
    return idx;
}

}  // namespace detail

// Closest rigid transform of a body under phi: pairs every supporting voxel
// center x with phi(x) and fits. sample_cap = 0 keeps all voxels.
inline RigidTransform closest_rigid_of_body(const LabelVolume& labels, int body,
                                            const DisplacementField& phi,
                                            size_t sample_cap = 0) {
    const detail::BodySupport sup = detail::body_support(labels, body, phi);
    if (sup.voxels.size() < 3)
        throw DegenerateGeometry("closest_rigid_of_body: body " + std::to_string(body) +
                                 " has fewer than 3 supporting voxels");
    PointCorrespondences corr;
    const auto idx = detail::stride_sample(sup.voxels.size(), sample_cap);
    corr.source.reserve(idx.size());
    corr.target.reserve(idx.size());
    for (size_t i : idx) {
        const IVec3& v = sup.voxels[i];
        corr.source.push_back({static_cast<double>(v.x), static_cast<double>(v.y),
                               static_cast<double>(v.z)});
        corr.target.push_back(phi.map(v.x, v.y, v.z));
    }
    return fit_rigid(corr);
}

struct BodyLoss {
    double loss = 0.0;
    FieldGrad grad;
};

// ---------------------------------------------------------------------------
// Rigid dice loss
//
// Soft Dice between A = warp_label_soft(body, phi) and B = the body
// indicator resampled under the closest rigid transform. The squared-sum
// form 1 - 2*sum(AB)/(sum A^2 + sum B^2 + eps) is used: it reduces to the
// set formulation on binary masks and is exactly zero whenever A == B, so an
// exactly rigid phi scores ~0 even though rotations leave fractional border
// values. The rigid transform is held constant for the gradient.

inline BodyLoss rigid_dice_loss(const LabelVolume& labels, int body,
                                const DisplacementField& phi,
                                const RigidTransform* frozen = nullptr,
                                size_t sample_cap = 0) {
    const RigidTransform t =
        frozen ? *frozen : closest_rigid_of_body(labels, body, phi, sample_cap);
    const Volume ind = indicator(labels, body);
    const Volume a = warp_volume(ind, phi);

    Volume b(phi.dims, phi.spacing, phi.origin);
    parallel_for_z(phi.dims.z, [&](int z) {
        for (int y = 0; y < phi.dims.y; ++y)
            for (int x = 0; x < phi.dims.x; ++x)
                b.at(x, y, z) = sample_trilinear(
                    ind, t.apply({static_cast<double>(x), static_cast<double>(y),
                                  static_cast<double>(z)}));
    });

    double inter = 0.0, sa2 = 0.0, sb2 = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        inter += a.data[i] * b.data[i];
        sa2 += a.data[i] * a.data[i];
        sb2 += b.data[i] * b.data[i];
    }
    constexpr double kEps = 1e-6;
    const double den = sa2 + sb2 + kEps;

    BodyLoss out;
    out.loss = 1.0 - 2.0 * inter / den;
    out.grad = FieldGrad(phi.dims, phi.spacing, phi.origin);
    // dL/dA(x) = -2 B(x)/den + 4 inter A(x)/den^2, chained through the
    // indicator interpolant at phi(x).
    parallel_for_z(phi.dims.z, [&](int z) {
        for (int y = 0; y < phi.dims.y; ++y)
            for (int x = 0; x < phi.dims.x; ++x) {
                const double dlda = -2.0 * b.at(x, y, z) / den +
                                    4.0 * inter * a.at(x, y, z) / (den * den);
                if (dlda != 0.0)
                    out.grad.at(x, y, z) =
                        dlda * sample_gradient(ind, phi.map(x, y, z), true);
            }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Rigid field loss: mean squared distance between phi and the closest rigid
// transform over the body's supporting voxels.

inline BodyLoss rigid_field_loss(const LabelVolume& labels, int body,
                                 const DisplacementField& phi,
                                 const RigidTransform* frozen = nullptr,
                                 size_t sample_cap = 0) {
    const detail::BodySupport sup = detail::body_support(labels, body, phi);
    if (sup.voxels.size() < 3)
        throw DegenerateGeometry("rigid_field_loss: body " + std::to_string(body) +
                                 " has fewer than 3 supporting voxels");
    RigidTransform t;
    if (frozen) {
        t = *frozen;
    } else {
        PointCorrespondences corr;
        const auto idx = detail::stride_sample(sup.voxels.size(), sample_cap);
        for (size_t i : idx) {
            const IVec3& v = sup.voxels[i];
            corr.source.push_back({static_cast<double>(v.x), static_cast<double>(v.y),
                                   static_cast<double>(v.z)});
            corr.target.push_back(phi.map(v.x, v.y, v.z));
        }
        t = fit_rigid(corr);
    }

    BodyLoss out;
    out.grad = FieldGrad(phi.dims, phi.spacing, phi.origin);
    const double inv_count = 1.0 / static_cast<double>(sup.voxels.size());
    for (const IVec3& v : sup.voxels) {
        const Vec3 p = phi.map(v.x, v.y, v.z);
        const Vec3 r = t.apply({static_cast<double>(v.x), static_cast<double>(v.y),
                                static_cast<double>(v.z)});
        out.loss += norm2(r - p) * inv_count;
        out.grad.at(v.x, v.y, v.z) = 2.0 * inv_count * (p - r);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Properness and orthonormal conditions (Jacobian penalties)

namespace detail {

// Shared driver: accumulates a Jacobian-space penalty over every body's
// support, averaging per body and over bodies, then pulls dL/dJ back through
// the difference stencil. penalty(J, dldj_out) returns the voxel value and
// fills the voxel's dL/dJ (unscaled; the driver applies the averaging).
template <typename PenaltyFn>
BodyLoss jacobian_penalty(const LabelVolume& labels, const DisplacementField& phi,
                          PenaltyFn&& penalty, std::vector<double>* per_body = nullptr) {
    if (labels.body_ids.empty()) throw EmptyBody("no bodies labeled");
    const JacobianField J = jacobian(phi);
    const double inv_bodies = 1.0 / static_cast<double>(labels.body_ids.size());

    BodyLoss out;
    out.grad = FieldGrad(phi.dims, phi.spacing, phi.origin);
    std::vector<Mat3> dldj(phi.voxel_count());

    for (int body : labels.body_ids) {
        const BodySupport sup = body_support(labels, body, phi);
        if (sup.voxels.empty()) {
            if (per_body) per_body->push_back(0.0);
            continue;
        }
        const double w = inv_bodies / static_cast<double>(sup.voxels.size());
        double body_sum = 0.0;
        for (const IVec3& v : sup.voxels) {
            const size_t i = phi.index(v.x, v.y, v.z);
            Mat3 d;
            body_sum += penalty(J.data[i], d);
            dldj[i] = dldj[i] + d * w;
        }
        out.loss += body_sum * w;
        if (per_body)
            per_body->push_back(body_sum / static_cast<double>(sup.voxels.size()));
    }
    out.grad = jacobian_adjoint(dldj, phi.dims);
    return out;
}

}  // namespace detail

// Properness condition: mean over body voxels of (det J - 1)^2, averaged
// over bodies. Gradient via the cofactor rule.
inline BodyLoss pc_loss(const LabelVolume& labels, const DisplacementField& phi,
                        std::vector<double>* per_body = nullptr) {
    return detail::jacobian_penalty(
        labels, phi,
        [](const Mat3& J, Mat3& dldj) {
            const double d = J.det() - 1.0;
            dldj = J.cofactor() * (2.0 * d);
            return d * d;
        },
        per_body);
}

// Orthonormal condition: mean over body voxels of ||J^T J - I||_F^2,
// averaged over bodies. Gradient 4 J (J^T J - I).
inline BodyLoss oc_loss(const LabelVolume& labels, const DisplacementField& phi,
                        std::vector<double>* per_body = nullptr) {
    return detail::jacobian_penalty(
        labels, phi,
        [](const Mat3& J, Mat3& dldj) {
            const Mat3 m = J.transposed() * J - Mat3::identity();
            dldj = (J * m) * 4.0;
            return m.frobenius_norm2();
        },
        per_body);
}

// ---------------------------------------------------------------------------
// Direct volume loss: squared relative change between the warped soft count
// and the source voxel count of each body.

inline BodyLoss volume_loss(const LabelVolume& labels, const DisplacementField& phi,
                            std::vector<double>* per_body = nullptr) {
    if (labels.body_ids.empty()) throw EmptyBody("no bodies labeled");
    const double inv_bodies = 1.0 / static_cast<double>(labels.body_ids.size());

    BodyLoss out;
    out.grad = FieldGrad(phi.dims, phi.spacing, phi.origin);
    for (int body : labels.body_ids) {
        const Volume ind = indicator(labels, body);
        double source_count = 0.0;
        for (double v : ind.data) source_count += v;
        if (source_count == 0.0) throw EmptyBody("body " + std::to_string(body) + " is empty");

        const Volume a = warp_volume(ind, phi);
        double soft_count = 0.0;
        for (double v : a.data) soft_count += v;

        const double rel = (soft_count - source_count) / source_count;
        out.loss += rel * rel * inv_bodies;
        if (per_body) per_body->push_back(rel * rel);

        const double dlda = 2.0 * rel * inv_bodies / source_count;
        parallel_for_z(phi.dims.z, [&](int z) {
            for (int y = 0; y < phi.dims.y; ++y)
                for (int x = 0; x < phi.dims.x; ++x)
                    out.grad.at(x, y, z) +=
                        dlda * sample_gradient(ind, phi.map(x, y, z), true);
        });
    }
    return out;
}

}  // namespace rigidreg
