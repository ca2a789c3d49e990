// Command-line front end: phantom generation, registration, metric reports,
// and a rigid-resampling convenience utility.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "rigidreg/rigidreg.hpp"

namespace rr = rigidreg;

namespace {

std::string json_escape_free(const std::string& s) { return s; }

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw rr::IoError("cannot open " + path + " for writing");
    out << text;
    if (!out) throw rr::IoError("failed writing " + path);
}

std::string loss_history_json(const std::vector<rr::LossBreakdown>& history) {
    std::ostringstream os;
    os << "[\n";
    for (size_t i = 0; i < history.size(); ++i) {
        const auto& h = history[i];
        os << "    {\"total\": " << rr::detail::json_num(h.total)
           << ", \"similarity\": " << rr::detail::json_num(h.similarity)
           << ", \"smoothness\": " << rr::detail::json_num(h.smoothness);
        for (const auto& [term, val] : h.rigidity)
            os << ", \"" << rr::to_string(term) << "\": " << rr::detail::json_num(val);
        os << "}" << (i + 1 < history.size() ? "," : "") << "\n";
    }
    os << "  ]";
    return os.str();
}

int run_register(const std::string& fixed_path, const std::string& moving_path,
                 const std::string& labels_path, const std::string& preset,
                 const std::string& config_path, const std::string& out_field,
                 const std::string& out_report, const std::string& out_warped,
                 uint64_t seed, int threads) {
    rr::thread_count() = std::max(1, threads);

    rr::RunConfig cfg = rr::preset_config(preset);
    if (!config_path.empty()) rr::apply_config_file(cfg, config_path);
    cfg.optim.seed = seed;

    rr::Volume fixed = rr::read_volume(fixed_path);
    rr::Volume moving = rr::read_volume(moving_path);
    rr::LabelVolume labels = rr::read_labels(labels_path);

    // Common isotropic grid: resample when spacings are anisotropic or
    // differ between inputs, then require matching grids.
    const rr::Vec3 fs = fixed.spacing, ms = moving.spacing;
    const bool iso = fs.x == fs.y && fs.y == fs.z && ms.x == ms.y && ms.y == ms.z &&
                     fs.x == ms.x;
    if (!iso) {
        const double target = std::min({fs.x, fs.y, fs.z, ms.x, ms.y, ms.z});
        fixed = rr::resample_isotropic(fixed, target);
        moving = rr::resample_isotropic(moving, target);
        labels = rr::resample_isotropic(labels, target);
    }
    if (labels.dims != moving.dims)
        throw rr::GridMismatch("labels grid does not match the moving image grid");

    fixed = rr::normalize_intensity(fixed);
    moving = rr::normalize_intensity(moving);

    rr::RegistrationResult res =
        rr::register_pair(fixed, moving, labels, cfg.weights, cfg.optim);

    if (!out_field.empty()) rr::write_field(out_field, res.phi);
    if (!out_warped.empty()) rr::write_volume(out_warped, rr::warp_volume(moving, res.phi));

    if (!out_report.empty()) {
        rr::MetricReport rep =
            rr::compute_metrics(labels, nullptr, res.phi, res.wall_seconds);
        std::ostringstream os;
        os << "{\n  \"preset\": \"" << json_escape_free(preset) << "\",\n"
           << "  \"seed\": " << seed << ",\n"
           << "  \"iterations\": " << res.iterations << ",\n"
           << "  \"metrics\": " << rr::to_json(rep, 2).substr(2) << ",\n"
           << "  \"loss_history\": " << loss_history_json(res.history) << "\n}\n";
        write_text(out_report, os.str());
    }
    std::cout << "registered in " << res.iterations << " iterations, "
              << res.wall_seconds << " s\n";
    return 0;
}

int run_phantom(const std::string& spec_path, const std::string& out_dir) {
    rr::PhantomSpec spec;
    if (!spec_path.empty()) spec = rr::load_phantom_spec(spec_path);
    rr::PhantomPair pair = rr::generate_pair(spec);

    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    rr::write_volume((dir / "fixed.mhd").string(), pair.fixed_image);
    rr::write_volume((dir / "moving.mhd").string(), pair.moving_image);
    rr::write_labels((dir / "labels_moving.mhd").string(), pair.moving_labels);
    rr::write_labels((dir / "labels_fixed.mhd").string(), pair.fixed_labels);
    rr::write_field((dir / "gt_field.mhd").string(), pair.gt_field);
    std::cout << "phantom written to " << out_dir << "\n";
    return 0;
}

int run_metrics(const std::string& field_path, const std::string& labels_moving_path,
                const std::string& labels_fixed_path, const std::string& out_path) {
    const rr::DisplacementField phi = rr::read_displacement_field(field_path);
    const rr::LabelVolume moving_labels = rr::read_labels(labels_moving_path);
    rr::LabelVolume fixed_labels;
    const bool have_fixed = !labels_fixed_path.empty();
    if (have_fixed) fixed_labels = rr::read_labels(labels_fixed_path);

    rr::MetricReport rep =
        rr::compute_metrics(moving_labels, have_fixed ? &fixed_labels : nullptr, phi);
    const std::string text = rr::to_json(rep) + "\n";
    if (out_path.empty())
        std::cout << text;
    else
        write_text(out_path, text);
    return 0;
}

int run_apply_rigid(const std::string& in_path, const std::string& out_path, bool is_labels,
                    double angle_deg, std::vector<double> axis, std::vector<double> center,
                    std::vector<double> translation) {
    rr::RigidTransform t;
    t.rotation = rr::rotation_about_axis({axis[0], axis[1], axis[2]},
                                         angle_deg * M_PI / 180.0);
    t.center = {center[0], center[1], center[2]};
    t.translation = {translation[0], translation[1], translation[2]};

    if (is_labels) {
        rr::LabelVolume labels = rr::read_labels(in_path);
        rr::LabelVolume out(labels.dims, labels.spacing, labels.origin);
        for (int z = 0; z < labels.dims.z; ++z)
            for (int y = 0; y < labels.dims.y; ++y)
                for (int x = 0; x < labels.dims.x; ++x) {
                    const rr::Vec3 p = t.apply({static_cast<double>(x),
                                                static_cast<double>(y),
                                                static_cast<double>(z)});
                    const int sx = std::clamp(static_cast<int>(std::lround(p.x)), 0,
                                              labels.dims.x - 1);
                    const int sy = std::clamp(static_cast<int>(std::lround(p.y)), 0,
                                              labels.dims.y - 1);
                    const int sz = std::clamp(static_cast<int>(std::lround(p.z)), 0,
                                              labels.dims.z - 1);
                    out.at(x, y, z) = labels.at(sx, sy, sz);
                }
        out.refresh_body_ids();
        rr::write_labels(out_path, out);
    } else {
        rr::Volume vol = rr::read_volume(in_path);
        rr::Volume out(vol.dims, vol.spacing, vol.origin);
        for (int z = 0; z < vol.dims.z; ++z)
            for (int y = 0; y < vol.dims.y; ++y)
                for (int x = 0; x < vol.dims.x; ++x)
                    out.at(x, y, z) = rr::sample_trilinear(
                        vol, t.apply({static_cast<double>(x), static_cast<double>(y),
                                      static_cast<double>(z)}));
        rr::write_volume(out_path, out);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rigidity-preserving deformable registration engine"};
    app.require_subcommand(1);

    // register
    auto* reg = app.add_subcommand("register", "register a moving image onto a fixed image");
    std::string fixed_path, moving_path, labels_path, config_path;
    std::string preset = "baseline";
    std::string out_field, out_report, out_warped;
    uint64_t seed = 0;
    int threads = 1;
    reg->add_option("--fixed", fixed_path, "fixed image (.mhd)")->required();
    reg->add_option("--moving", moving_path, "moving image (.mhd)")->required();
    reg->add_option("--labels", labels_path, "moving-image rigid body labels (.mhd)")->required();
    reg->add_option("--preset", preset,
                    "baseline|staring|pc|oc|rigid_dice|rigid_field|pc_oc|pc_rigid_dice|pc_rigid_field");
    reg->add_option("--config", config_path, "key = value config file");
    reg->add_option("--out-field", out_field, "output displacement field (.mhd)");
    reg->add_option("--out-report", out_report, "output JSON report");
    reg->add_option("--out-warped", out_warped, "output warped moving image (.mhd)");
    reg->add_option("--seed", seed, "random seed recorded in the report");
    reg->add_option("--threads", threads, "worker threads (1 = deterministic reference mode)");

    // phantom
    auto* ph = app.add_subcommand("phantom", "generate a synthetic spine phantom pair");
    std::string spec_path, out_dir;
    ph->add_option("--spec", spec_path, "phantom spec file (key = value)");
    ph->add_option("--out-dir", out_dir, "output directory")->required();

    // metrics
    auto* me = app.add_subcommand("metrics", "evaluate a displacement field");
    std::string field_path, labels_moving_path, labels_fixed_path, metrics_out;
    me->add_option("--field", field_path, "displacement field (.mhd)")->required();
    me->add_option("--labels-moving", labels_moving_path, "moving labels (.mhd)")->required();
    me->add_option("--labels-fixed", labels_fixed_path, "fixed labels for DSC (.mhd)");
    me->add_option("--out", metrics_out, "output JSON report (stdout if omitted)");

    // apply-rigid
    auto* ar = app.add_subcommand("apply-rigid", "resample a volume under a rigid transform");
    std::string ar_in, ar_out;
    bool ar_labels = false;
    double ar_angle = 0.0;
    std::vector<double> ar_axis{0, 0, 1}, ar_center{0, 0, 0}, ar_trans{0, 0, 0};
    ar->add_option("--in", ar_in, "input volume (.mhd)")->required();
    ar->add_option("--out", ar_out, "output volume (.mhd)")->required();
    ar->add_flag("--labels", ar_labels, "treat input as labels (nearest neighbor)");
    ar->add_option("--angle-deg", ar_angle, "rotation angle in degrees");
    ar->add_option("--axis", ar_axis, "rotation axis")->expected(3);
    ar->add_option("--center", ar_center, "rotation center (voxels)")->expected(3);
    ar->add_option("--translation", ar_trans, "translation (voxels)")->expected(3);

    CLI11_PARSE(app, argc, argv);

    try {
        if (reg->parsed())
            return run_register(fixed_path, moving_path, labels_path, preset, config_path,
                                out_field, out_report, out_warped, seed, threads);
        if (ph->parsed()) return run_phantom(spec_path, out_dir);
        if (me->parsed())
            return run_metrics(field_path, labels_moving_path, labels_fixed_path, metrics_out);
        if (ar->parsed())
            return run_apply_rigid(ar_in, ar_out, ar_labels, ar_angle, ar_axis, ar_center,
                                   ar_trans);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
