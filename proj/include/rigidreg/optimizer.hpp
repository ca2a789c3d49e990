#pragma once

// Per-pair instance optimization of the velocity field under the composite
// objective: adaptive-moment gradient descent with an optional coarse-to-fine
// pyramid and delayed activation / one-shot auto-scaling of the rigidity
// weights.

#include <chrono>

#include "rigidreg/objective.hpp"

namespace rigidreg {

struct OptimSettings {
    int max_iters = 150;       // per pyramid level
    double step_size = 0.1;    // voxels
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double tolerance = 1e-4;   // relative total-loss change over the window
    int tolerance_window = 10;
    int pyramid_levels = 2;
    int rigidity_activate_after = 0;  // iterations (coarsest level) before rigid terms engage
    // Auto-scaled weights target this fraction of the similarity magnitude
    // at the activation iteration, then stay frozen.
    double auto_scale_fraction = 0.1;
    uint64_t seed = 0;
    bool verbose = false;

    void validate() const {
        if (max_iters < 1) throw Error("max_iters must be >= 1");
        if (!(step_size > 0)) throw Error("step_size must be positive");
        if (!(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1))
            throw Error("moment decay rates must lie in (0,1)");
        if (pyramid_levels < 1) throw Error("pyramid_levels must be >= 1");
    }
};

struct RegistrationResult {
    VelocityField v;
    DisplacementField phi;
    std::vector<LossBreakdown> history;
    int iterations = 0;
    double wall_seconds = 0.0;
    LossWeights resolved_weights;  // auto weights replaced by their frozen values
};

namespace detail {

struct PyramidLevel {
    Volume fixed;
    Volume moving;
    LabelVolume labels;
};

inline IVec3 half_dims(const IVec3& d) {
    auto h = [](int n) { return std::max(2, (n - 1) / 2 + 1); };
    return {h(d.x), h(d.y), h(d.z)};
}

inline Volume downsample_half(const Volume& v) {
    const IVec3 nd = half_dims(v.dims);
    Volume out(nd, {v.spacing.x * 2, v.spacing.y * 2, v.spacing.z * 2}, v.origin);
    const Vec3 r{static_cast<double>(v.dims.x - 1) / (nd.x - 1),
                 static_cast<double>(v.dims.y - 1) / (nd.y - 1),
                 static_cast<double>(v.dims.z - 1) / (nd.z - 1)};
    parallel_for_z(nd.z, [&](int z) {
        for (int y = 0; y < nd.y; ++y)
            for (int x = 0; x < nd.x; ++x)
                out.at(x, y, z) = sample_trilinear(v, {x * r.x, y * r.y, z * r.z});
    });
    return out;
}

inline LabelVolume downsample_half(const LabelVolume& l) {
    const IVec3 nd = half_dims(l.dims);
    LabelVolume out(nd, {l.spacing.x * 2, l.spacing.y * 2, l.spacing.z * 2}, l.origin);
    const Vec3 r{static_cast<double>(l.dims.x - 1) / (nd.x - 1),
                 static_cast<double>(l.dims.y - 1) / (nd.y - 1),
                 static_cast<double>(l.dims.z - 1) / (nd.z - 1)};
    auto nearest = [](double p, int n) {
        return std::clamp(static_cast<int>(std::lround(p)), 0, n - 1);
    };
    for (int z = 0; z < nd.z; ++z)
        for (int y = 0; y < nd.y; ++y)
            for (int x = 0; x < nd.x; ++x)
                out.at(x, y, z) = l.at(nearest(x * r.x, l.dims.x), nearest(y * r.y, l.dims.y),
                                       nearest(z * r.z, l.dims.z));
    out.refresh_body_ids();
    return out;
}

// Adam state over a vector field.
struct AdamState {
    std::vector<Vec3> m, s;
    int t = 0;

    explicit AdamState(size_t n) : m(n), s(n) {}

    void step(VelocityField& v, const FieldGrad& g, const OptimSettings& cfg) {
        ++t;
        const double bc1 = 1.0 - std::pow(cfg.beta1, t);
        const double bc2 = 1.0 - std::pow(cfg.beta2, t);
        for (size_t i = 0; i < v.data.size(); ++i) {
            const Vec3& gi = g.data[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            s[i] = {cfg.beta2 * s[i].x + (1.0 - cfg.beta2) * gi.x * gi.x,
                    cfg.beta2 * s[i].y + (1.0 - cfg.beta2) * gi.y * gi.y,
                    cfg.beta2 * s[i].z + (1.0 - cfg.beta2) * gi.z * gi.z};
            const Vec3 mh = m[i] / bc1;
            const Vec3 sh = s[i] / bc2;
            v.data[i].x -= cfg.step_size * mh.x / (std::sqrt(sh.x) + cfg.adam_eps);
            v.data[i].y -= cfg.step_size * mh.y / (std::sqrt(sh.y) + cfg.adam_eps);
            v.data[i].z -= cfg.step_size * mh.z / (std::sqrt(sh.z) + cfg.adam_eps);
        }
    }
};

// One-shot auto-scaling: any weight < 0 is replaced so the weighted term
// equals auto_scale_fraction of the similarity magnitude at the freeze
// iteration. Degenerate raw values get a floored denominator.
inline void resolve_auto_weights(LossWeights& w, const ObjectiveContext& ctx,
                                 const VelocityField& v, double fraction) {
    bool any_auto = false;
    for (const auto& [term, wt] : w.rigid)
        if (wt < 0.0) any_auto = true;
    if (!any_auto) return;

    LossWeights probe = w;
    probe.rigid.clear();
    for (const auto& [term, wt] : w.rigid) probe.rigid[term] = wt < 0.0 ? 1.0 : wt;
    ObjectiveContext probe_ctx(*ctx.fixed, *ctx.moving, *ctx.labels, probe);
    const Evaluation ev = evaluate(probe_ctx, v);

    const double sim_mag = std::fabs(w.similarity_weight * ev.breakdown.similarity);
    for (auto& [term, wt] : w.rigid) {
        if (wt >= 0.0) continue;
        const double raw = std::fabs(ev.breakdown.rigidity.at(term));
        const double floor = std::max(1e-4 * sim_mag, 1e-12);
        wt = fraction * sim_mag / std::max(raw, floor);
    }
}

inline RegistrationResult optimize(const Volume& fixed, const Volume& moving,
                                   const LabelVolume& labels, LossWeights weights,
                                   const OptimSettings& cfg, const VelocityField* init_v) {
    cfg.validate();
    weights.validate();
    const auto t0 = std::chrono::steady_clock::now();

    // Pyramid, fine to coarse.
    std::vector<PyramidLevel> levels;
    levels.push_back({fixed, moving, labels});
    for (int l = 1; l < cfg.pyramid_levels; ++l) {
        const PyramidLevel& prev = levels.back();
        if (prev.fixed.dims.x <= 8 || prev.fixed.dims.y <= 8 || prev.fixed.dims.z <= 8) break;
        levels.push_back({downsample_half(prev.fixed), downsample_half(prev.moving),
                          downsample_half(prev.labels)});
    }

    RegistrationResult res;
    bool any_auto = false;
    for (const auto& [term, wt] : weights.rigid)
        if (wt < 0.0) any_auto = true;

    VelocityField v;
    for (int li = static_cast<int>(levels.size()) - 1; li >= 0; --li) {
        const PyramidLevel& lev = levels[static_cast<size_t>(li)];
        const bool coarsest = li == static_cast<int>(levels.size()) - 1;
        if (coarsest && init_v) {
            v = VelocityField(lev.fixed.dims, lev.fixed.spacing, lev.fixed.origin);
            static_cast<detail::FieldStorage&>(v) =
                init_v->dims == lev.fixed.dims
                    ? static_cast<const detail::FieldStorage&>(*init_v)
                    : resample_field(*init_v, lev.fixed.dims);
        } else if (coarsest) {
            v = VelocityField(lev.fixed.dims, lev.fixed.spacing, lev.fixed.origin);
        } else {
            VelocityField up(lev.fixed.dims, lev.fixed.spacing, lev.fixed.origin);
            static_cast<detail::FieldStorage&>(up) = resample_field(v, lev.fixed.dims);
            v = std::move(up);
        }

        // Rigidity engages after the configured delay, measured on the
        // coarsest level; finer levels inherit the resolved weights. Auto
        // weights freeze at the gate, once the field has left the identity.
        int gate = 0;
        if (coarsest && !weights.rigid.empty()) {
            gate = cfg.rigidity_activate_after;
            if (any_auto) gate = std::max(gate, 25);
            gate = std::min(gate, std::max(1, cfg.max_iters / 2));
        }

        LossWeights live = weights;
        if (gate > 0)
            for (auto& [term, wt] : live.rigid) wt = 0.0;
        ObjectiveContext ctx(lev.fixed, lev.moving, lev.labels, live);

        AdamState adam(v.data.size());
        const size_t level_start = res.history.size();
        for (int it = 0; it < cfg.max_iters; ++it) {
            if (gate > 0 && it == gate) {
                if (any_auto) resolve_auto_weights(weights, ctx, v, cfg.auto_scale_fraction);
                any_auto = false;
                live = weights;
                ctx.weights = live;
            }

            Evaluation ev = evaluate(ctx, v);
            if (!std::isfinite(ev.breakdown.total))
                throw NonFiniteLoss("non-finite loss at iteration " +
                                    std::to_string(res.iterations));
            res.history.push_back(ev.breakdown);
            ++res.iterations;

            // At an exact optimum the remaining gradient is rounding dust;
            // stepping on it would let the moment normalization wander.
            double grad_inf = 0.0;
            for (const Vec3& g : ev.grad_v.data)
                grad_inf = std::max({grad_inf, std::fabs(g.x), std::fabs(g.y),
                                     std::fabs(g.z)});
            if (grad_inf < 1e-12 && !(gate > 0 && it < gate)) break;

            adam.step(v, ev.grad_v, cfg);

            const size_t h = res.history.size() - level_start;
            if (static_cast<int>(h) > cfg.tolerance_window &&
                (gate == 0 || it > gate + cfg.tolerance_window)) {
                const double prev = res.history[res.history.size() - 1 - cfg.tolerance_window].total;
                const double cur = res.history.back().total;
                if (std::fabs(prev - cur) < cfg.tolerance * std::max(std::fabs(prev), 1e-12))
                    break;
            }
        }
    }

    res.v = std::move(v);
    res.phi = exp_svf(res.v, weights.svf_steps);
    res.resolved_weights = weights;
    res.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

}  // namespace detail

// Registers moving onto fixed. Inputs must already live on a common
// isotropic grid (see resample_isotropic); images should be rigidly
// pre-aligned by the caller. Deterministic for a fixed seed and thread
// configuration.
inline RegistrationResult register_pair(const Volume& fixed, const Volume& moving,
                                        const LabelVolume& labels, const LossWeights& weights,
                                        const OptimSettings& settings) {
    return detail::optimize(fixed, moving, labels, weights, settings, nullptr);
}

// Continues optimization from a previous result under new weights: the
// instance-level analogue of fine-tuning with added penalties.
inline RegistrationResult warm_start(const RegistrationResult& prev, const Volume& fixed,
                                     const Volume& moving, const LabelVolume& labels,
                                     const LossWeights& new_weights,
                                     OptimSettings settings) {
    settings.pyramid_levels = 1;  // continue at the resolution of the stored field
    if (prev.v.dims != fixed.dims) throw GridMismatch("warm_start: field/image grid mismatch");
    return detail::optimize(fixed, moving, labels, new_weights, settings, &prev.v);
}

}  // namespace rigidreg
