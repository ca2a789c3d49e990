#pragma once

// Registration-quality metrics: DSC, rigid DSC, relative volume change,
// folding count, SD of the log Jacobian determinant, and the properness
// metric, plus the JSON report.

#include <iomanip>
#include <sstream>

#include "rigidreg/rigidity.hpp"

namespace rigidreg {

// Hard {0,1} mask from a warped soft indicator (0.5 threshold everywhere).
inline Volume hard_mask(const Volume& soft) {
    Volume out = soft;
    for (double& v : out.data) v = v > 0.5 ? 1.0 : 0.0;
    return out;
}

inline Volume hard_warped_label(const LabelVolume& labels, int body,
                                const DisplacementField& phi) {
    return hard_mask(warp_label_soft(labels, body, phi));
}

// Dice similarity coefficient of two hard masks; 1.0 if both are empty.
inline double dsc(const Volume& a, const Volume& b) {
    if (!a.same_grid(b)) throw GridMismatch("dsc: grids differ");
    double na = 0.0, nb = 0.0, inter = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const bool ia = a.data[i] > 0.5, ib = b.data[i] > 0.5;
        na += ia;
        nb += ib;
        inter += ia && ib;
    }
    if (na + nb == 0.0) return 1.0;
    return 2.0 * inter / (na + nb);
}

// Dice between the warped body label and the same label under its closest
// rigid transform; measures how rigidly the body moved.
inline double rigid_dsc(const LabelVolume& labels, int body, const DisplacementField& phi) {
    const RigidTransform t = closest_rigid_of_body(labels, body, phi);
    const Volume ind = indicator(labels, body);
    const Volume a = hard_mask(warp_volume(ind, phi));
    Volume b(phi.dims, phi.spacing, phi.origin);
    parallel_for_z(phi.dims.z, [&](int z) {
        for (int y = 0; y < phi.dims.y; ++y)
            for (int x = 0; x < phi.dims.x; ++x)
                b.at(x, y, z) = sample_trilinear(
                    ind, t.apply({static_cast<double>(x), static_cast<double>(y),
                                  static_cast<double>(z)}));
    });
    return dsc(a, hard_mask(b));
}

// 100 * |count(warped hard label) - count(source label)| / count(source).
inline double pct_vol_change(const LabelVolume& labels, int body,
                             const DisplacementField& phi) {
    const Volume ind = indicator(labels, body);  // throws UnknownBody
    double source = 0.0;
    for (double v : ind.data) source += v;
    if (source == 0.0) throw EmptyBody("pct_vol_change: body " + std::to_string(body));
    const Volume warped = hard_mask(warp_volume(ind, phi));
    double w = 0.0;
    for (double v : warped.data) w += v;
    return 100.0 * std::fabs(w - source) / source;
}

// Number of voxels with a non-positive Jacobian determinant.
inline int folding_count(const DisplacementField& phi) {
    const Volume det = jacobian_det(jacobian(phi));
    int count = 0;
    for (double v : det.data)
        if (v <= 0.0) ++count;
    return count;
}

// Standard deviation of log(det J) over voxels with positive determinant.
inline double sd_log_jac(const DisplacementField& phi) {
    const Volume det = jacobian_det(jacobian(phi));
    double sum = 0.0, sum2 = 0.0;
    size_t n = 0;
    for (double v : det.data) {
        if (v <= 0.0) continue;
        const double l = std::log(v);
        sum += l;
        sum2 += l * l;
        ++n;
    }
    if (n == 0) throw AllFolded("sd_log_jac: no voxel has a positive determinant");
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(0.0, sum2 / static_cast<double>(n) - mean * mean);
    return std::sqrt(var);
}

// Properness condition as a metric: identical formula to pc_loss, no gradient.
inline double pc_metric(const LabelVolume& labels, const DisplacementField& phi,
                        std::vector<double>* per_body = nullptr) {
    return pc_loss(labels, phi, per_body).loss;
}

// ---------------------------------------------------------------------------
// Report

struct MetricReport {
    struct PerBody {
        int body = 0;
        double dsc = -1.0;  // < 0 when no fixed labels were supplied
        double rigid_dsc = 0.0;
        double pct_vol_change = 0.0;
        double pc_metric = 0.0;
    };
    std::vector<PerBody> per_body;
    int folding_voxels = 0;
    double sd_log_jac = 0.0;
    double wall_seconds = 0.0;

    struct Stats {
        double mean = 0.0, sd = 0.0;
    };
    Stats dsc_stats, rigid_dsc_stats, pct_vol_stats, pc_stats;
};

namespace detail {

inline MetricReport::Stats mean_sd(const std::vector<double>& v) {
    MetricReport::Stats s;
    if (v.empty()) return s;
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(v.size());
    for (double x : v) s.sd += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(s.sd / static_cast<double>(v.size()));
    return s;
}

}  // namespace detail

// Evaluates every Table-style metric for one registration. fixed_labels may
// be null when ground-truth labels in the fixed domain are unavailable; the
// per-body DSC is then omitted from the report.
inline MetricReport compute_metrics(const LabelVolume& moving_labels,
                                    const LabelVolume* fixed_labels,
                                    const DisplacementField& phi,
                                    double wall_seconds = 0.0) {
    MetricReport rep;
    rep.wall_seconds = wall_seconds;
    rep.folding_voxels = folding_count(phi);
    rep.sd_log_jac = sd_log_jac(phi);

    std::vector<double> pc_per_body;
    pc_metric(moving_labels, phi, &pc_per_body);

    std::vector<double> dscs, rdscs, vols;
    for (size_t i = 0; i < moving_labels.body_ids.size(); ++i) {
        const int body = moving_labels.body_ids[i];
        MetricReport::PerBody pb;
        pb.body = body;
        pb.rigid_dsc = rigid_dsc(moving_labels, body, phi);
        pb.pct_vol_change = pct_vol_change(moving_labels, body, phi);
        pb.pc_metric = pc_per_body[i];
        if (fixed_labels) {
            if (fixed_labels->dims != phi.dims)
                throw GridMismatch("fixed labels grid != field grid");
            pb.dsc = dsc(hard_warped_label(moving_labels, body, phi),
                         indicator(*fixed_labels, body));
            dscs.push_back(pb.dsc);
        }
        rdscs.push_back(pb.rigid_dsc);
        vols.push_back(pb.pct_vol_change);
        rep.per_body.push_back(pb);
    }
    rep.dsc_stats = detail::mean_sd(dscs);
    rep.rigid_dsc_stats = detail::mean_sd(rdscs);
    rep.pct_vol_stats = detail::mean_sd(vols);
    rep.pc_stats = detail::mean_sd(pc_per_body);
    return rep;
}

namespace detail {

// JSON numbers carry 6 significant digits.
inline std::string json_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

}  // namespace detail

inline std::string to_json(const MetricReport& rep, int indent_base = 0) {
    const std::string ind(static_cast<size_t>(indent_base), ' ');
    std::ostringstream os;
    os << ind << "{\n";
    os << ind << "  \"per_body\": [\n";
    for (size_t i = 0; i < rep.per_body.size(); ++i) {
        const auto& pb = rep.per_body[i];
        os << ind << "    {\"body\": " << pb.body;
        if (pb.dsc >= 0.0) os << ", \"dsc\": " << detail::json_num(pb.dsc);
        os << ", \"rigid_dsc\": " << detail::json_num(pb.rigid_dsc)
           << ", \"pct_vol_change\": " << detail::json_num(pb.pct_vol_change)
           << ", \"pc_metric\": " << detail::json_num(pb.pc_metric) << "}"
           << (i + 1 < rep.per_body.size() ? "," : "") << "\n";
    }
    os << ind << "  ],\n";
    os << ind << "  \"global\": {\"folding_voxels\": " << rep.folding_voxels
       << ", \"sd_log_jac\": " << detail::json_num(rep.sd_log_jac)
       << ", \"wall_seconds\": " << detail::json_num(rep.wall_seconds) << "},\n";
    auto stats = [&](const char* name, const MetricReport::Stats& s, bool last) {
        os << ind << "    \"" << name << "\": {\"mean\": " << detail::json_num(s.mean)
           << ", \"sd\": " << detail::json_num(s.sd) << "}" << (last ? "" : ",") << "\n";
    };
    os << ind << "  \"aggregates\": {\n";
    stats("dsc", rep.dsc_stats, false);
    stats("rigid_dsc", rep.rigid_dsc_stats, false);
    stats("pct_vol_change", rep.pct_vol_stats, false);
    stats("pc_metric", rep.pc_stats, true);
    os << ind << "  }\n";
    os << ind << "}";
    return os.str();
}

}  // namespace rigidreg
