#pragma once

// Composite registration objective: similarity + lambda_smooth * smoothness
// + weighted rigidity penalties, with the total gradient taken with respect
// to the velocity field through the scaling-and-squaring adjoint.

#include <map>
#include <optional>

#include "rigidreg/rigidity.hpp"
#include "rigidreg/similarity.hpp"

namespace rigidreg {

enum class Similarity { Mind, Nmi, Ngf };

enum class RigidTerm { Pc, Oc, RigidDice, RigidField, Volume };

inline const char* to_string(RigidTerm t) {
    switch (t) {
        case RigidTerm::Pc: return "pc";
        case RigidTerm::Oc: return "oc";
        case RigidTerm::RigidDice: return "rigid_dice";
        case RigidTerm::RigidField: return "rigid_field";
        case RigidTerm::Volume: return "volume";
    }
    return "?";
}

inline const char* to_string(Similarity s) {
    switch (s) {
        case Similarity::Mind: return "mind";
        case Similarity::Nmi: return "nmi";
        case Similarity::Ngf: return "ngf";
    }
    return "?";
}

struct LossWeights {
    Similarity similarity = Similarity::Mind;
    double similarity_weight = 1.0;
    double lambda_smooth = 0.01;
    // Active rigidity terms and their weights. A weight < 0 requests
    // auto-scaling (resolved by the optimizer before evaluation).
    std::map<RigidTerm, double> rigid;

    int svf_steps = 7;
    int mind_patch_radius = 1;
    int nmi_bins = 32;
    double ngf_eps_rel = 1e-2;
    size_t rigidity_sample_cap = 0;

    void validate() const {
        if (!(lambda_smooth >= 0.0) || !std::isfinite(lambda_smooth))
            throw Error("lambda_smooth must be finite and non-negative");
        if (!(similarity_weight >= 0.0) || !std::isfinite(similarity_weight))
            throw Error("similarity_weight must be finite and non-negative");
        for (const auto& [term, w] : rigid)
            if (!std::isfinite(w)) throw Error("rigidity weight must be finite");
    }
};

struct LossBreakdown {
    double total = 0.0;
    double similarity = 0.0;
    double smoothness = 0.0;
    // Unweighted per-term means over bodies, and per-body values.
    std::map<RigidTerm, double> rigidity;
    std::map<RigidTerm, std::vector<double>> rigidity_per_body;
};

// ---------------------------------------------------------------------------
// Smoothness

struct LossGradV {
    double loss = 0.0;
    FieldGrad grad;
};

// Diffusion regularizer: mean over voxels of the summed squared spatial
// gradients of the three velocity components (central differences, one-sided
// at faces). A ramp v = (a*x, 0, 0) scores a^2.
inline LossGradV smoothness_loss(const VelocityField& v) {
    LossGradV out;
    out.grad = FieldGrad(v.dims, v.spacing, v.origin);
    const double inv_n = 1.0 / static_cast<double>(v.voxel_count());

    std::vector<Mat3> dldj(v.voxel_count());
    out.loss = parallel_sum_z(v.dims.z, [&](int z) {
        double partial = 0.0;
        for (int y = 0; y < v.dims.y; ++y)
            for (int x = 0; x < v.dims.x; ++x) {
                Mat3 d;  // rows: components, cols: derivative axes
                for (int a = 0; a < 3; ++a) {
                    const Vec3 da = detail::diff_axis(v, x, y, z, a);
                    d(0, a) = da.x;
                    d(1, a) = da.y;
                    d(2, a) = da.z;
                    partial += norm2(da);
                }
                dldj[v.index(x, y, z)] = d * (2.0 * inv_n);
            }
        return partial;
    });
    out.loss *= inv_n;
    out.grad = jacobian_adjoint(dldj, v.dims);
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation context
//
// Everything that stays constant while v changes: normalized images, MIND
// descriptors, per-body indicators, the NGF epsilon. Building it once per
// resolution level keeps the inner loop cheap.

struct ObjectiveContext {
    const Volume* fixed = nullptr;
    const Volume* moving = nullptr;
    const LabelVolume* labels = nullptr;
    LossWeights weights;

    std::optional<MindDescriptor> fixed_desc;
    std::optional<MindDescriptor> moving_desc;
    double ngf_eps = 0.0;

    ObjectiveContext(const Volume& f, const Volume& m, const LabelVolume& l,
                     const LossWeights& w)
        : fixed(&f), moving(&m), labels(&l), weights(w) {
        w.validate();
        if (!f.same_grid(m)) throw GridMismatch("objective: fixed and moving grids differ");
        if (l.dims != m.dims) throw GridMismatch("objective: labels must live on the moving grid");
        bool any_rigid = false;
        for (const auto& [term, wt] : w.rigid)
            if (wt != 0.0) any_rigid = true;
        if (any_rigid && l.body_ids.empty())
            throw EmptyBody("rigidity penalties need at least one labeled body");
        if (w.similarity == Similarity::Mind && w.similarity_weight != 0.0) {
            fixed_desc = mind_descriptor(f, w.mind_patch_radius);
            moving_desc = mind_descriptor(m, w.mind_patch_radius);
        } else if (w.similarity == Similarity::Ngf) {
            ngf_eps = ngf_default_eps(f, w.ngf_eps_rel);
        }
    }
};

struct Evaluation {
    LossBreakdown breakdown;
    FieldGrad grad_v;
};

// Computes phi = exp(v), accumulates dL/dphi from the similarity and
// rigidity terms, pulls it back through the squaring adjoint, and adds the
// direct smoothness gradient in v.
inline Evaluation evaluate(const ObjectiveContext& ctx, const VelocityField& v) {
    const LossWeights& w = ctx.weights;
    if (v.dims != ctx.fixed->dims) throw GridMismatch("evaluate: v grid != fixed grid");

    Evaluation ev;
    SvfTape tape = exp_svf_tape(v, w.svf_steps);
    DisplacementField phi(v.dims, v.spacing, v.origin);
    phi.data = tape.u.back().data;  // keep the tape for the adjoint

    FieldGrad grad_phi(v.dims, v.spacing, v.origin);

    // Similarity
    if (w.similarity_weight != 0.0) {
        switch (w.similarity) {
            case Similarity::Mind: {
                LossGradPhi r = mind_loss(*ctx.fixed_desc, *ctx.moving_desc, phi);
                ev.breakdown.similarity = r.loss;
                grad_phi = std::move(r.grad);
                if (w.similarity_weight != 1.0)
                    for (Vec3& g : grad_phi.data) g *= w.similarity_weight;
                break;
            }
            case Similarity::Nmi:
            case Similarity::Ngf: {
                const Volume warped = warp_volume(*ctx.moving, phi);
                LossGradImage r = w.similarity == Similarity::Nmi
                                      ? nmi_loss(*ctx.fixed, warped, w.nmi_bins)
                                      : ngf_loss(*ctx.fixed, warped, ctx.ngf_eps);
                ev.breakdown.similarity = r.loss;
                parallel_for_z(v.dims.z, [&](int z) {
                    for (int y = 0; y < v.dims.y; ++y)
                        for (int x = 0; x < v.dims.x; ++x) {
                            const double g =
                                w.similarity_weight * r.grad[v.index(x, y, z)];
                            if (g != 0.0)
                                grad_phi.at(x, y, z) =
                                    g * sample_gradient(*ctx.moving, phi.map(x, y, z), true);
                        }
                });
                break;
            }
        }
    }

    // Rigidity terms
    for (const auto& [term, wt] : w.rigid) {
        if (wt == 0.0) continue;
        if (wt < 0.0)
            throw Error("evaluate: unresolved auto weight for term " +
                        std::string(to_string(term)));
        std::vector<double> per_body;
        BodyLoss sum;
        sum.grad = FieldGrad(v.dims, v.spacing, v.origin);
        switch (term) {
            case RigidTerm::Pc:
                sum = pc_loss(*ctx.labels, phi, &per_body);
                break;
            case RigidTerm::Oc:
                sum = oc_loss(*ctx.labels, phi, &per_body);
                break;
            case RigidTerm::Volume:
                sum = volume_loss(*ctx.labels, phi, &per_body);
                break;
            case RigidTerm::RigidDice:
            case RigidTerm::RigidField: {
                const double inv_bodies =
                    1.0 / static_cast<double>(ctx.labels->body_ids.size());
                for (int body : ctx.labels->body_ids) {
                    BodyLoss b = term == RigidTerm::RigidDice
                                     ? rigid_dice_loss(*ctx.labels, body, phi, nullptr,
                                                       w.rigidity_sample_cap)
                                     : rigid_field_loss(*ctx.labels, body, phi, nullptr,
                                                        w.rigidity_sample_cap);
                    per_body.push_back(b.loss);
                    sum.loss += b.loss * inv_bodies;
                    for (size_t i = 0; i < sum.grad.data.size(); ++i)
                        sum.grad.data[i] += b.grad.data[i] * inv_bodies;
                }
                break;
            }
        }
        ev.breakdown.rigidity[term] = sum.loss;
        ev.breakdown.rigidity_per_body[term] = std::move(per_body);
        for (size_t i = 0; i < grad_phi.data.size(); ++i)
            grad_phi.data[i] += sum.grad.data[i] * wt;
    }

    // Pull back through the exponential, add the direct smoothness term.
    ev.grad_v = exp_svf_adjoint(tape, grad_phi);
    LossGradV sm = smoothness_loss(v);
    ev.breakdown.smoothness = sm.loss;
    for (size_t i = 0; i < ev.grad_v.data.size(); ++i)
        ev.grad_v.data[i] += sm.grad.data[i] * w.lambda_smooth;

    ev.breakdown.total = w.similarity_weight * ev.breakdown.similarity +
                         w.lambda_smooth * ev.breakdown.smoothness;
    for (const auto& [term, val] : ev.breakdown.rigidity)
        ev.breakdown.total += w.rigid.at(term) * val;
    return ev;
}

// Convenience entry matching the one-shot signature.
inline Evaluation evaluate(const Volume& fixed, const Volume& moving,
                           const LabelVolume& labels, const VelocityField& v,
                           const LossWeights& w) {
    return evaluate(ObjectiveContext(fixed, moving, labels, w), v);
}

}  // namespace rigidreg
