#pragma once

// key = value configuration text for the CLI and presets mirroring the
// ablation rows: baseline, staring, pc, oc, rigid_dice, rigid_field, pc_oc,
// pc_rigid_dice, pc_rigid_field.

#include <fstream>
#include <map>
#include <sstream>

#include "rigidreg/objective.hpp"
#include "rigidreg/optimizer.hpp"
#include "rigidreg/phantom.hpp"

namespace rigidreg {

struct RunConfig {
    LossWeights weights;
    OptimSettings optim;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline std::map<std::string, std::string> parse_kv_text(std::istream& in,
                                                        const std::string& what) {
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(what + ": line " + std::to_string(lineno) + " is not key = value");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

inline std::map<std::string, std::string> parse_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    return parse_kv_text(in, path);
}

inline double to_double(const std::string& s, const std::string& key) {
    try {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw Error("config: bad number for " + key + ": " + s);
    }
}

inline int to_int(const std::string& s, const std::string& key) {
    return static_cast<int>(to_double(s, key));
}

inline RigidTerm parse_term(const std::string& s) {
    if (s == "pc") return RigidTerm::Pc;
    if (s == "oc") return RigidTerm::Oc;
    if (s == "rigid_dice") return RigidTerm::RigidDice;
    if (s == "rigid_field") return RigidTerm::RigidField;
    if (s == "volume") return RigidTerm::Volume;
    throw Error("config: unknown rigidity term " + s);
}

}  // namespace detail

// Named preset -> weights/term selection. Auto-scaled rigidity weights
// (encoded as -1) are frozen by the optimizer at the activation iteration.
inline RunConfig preset_config(const std::string& name) {
    RunConfig cfg;
    auto rigid = [&](std::initializer_list<RigidTerm> terms) {
        for (RigidTerm t : terms) cfg.weights.rigid[t] = -1.0;
    };
    if (name == "baseline") {
        // similarity + smoothness only
    } else if (name == "staring") {
        cfg.weights.similarity = Similarity::Nmi;
        rigid({RigidTerm::Pc, RigidTerm::Oc});
    } else if (name == "pc") {
        rigid({RigidTerm::Pc});
    } else if (name == "oc") {
        rigid({RigidTerm::Oc});
    } else if (name == "rigid_dice") {
        rigid({RigidTerm::RigidDice});
    } else if (name == "rigid_field") {
        rigid({RigidTerm::RigidField});
    } else if (name == "pc_oc") {
        rigid({RigidTerm::Pc, RigidTerm::Oc});
    } else if (name == "pc_rigid_dice") {
        rigid({RigidTerm::Pc, RigidTerm::RigidDice});
    } else if (name == "pc_rigid_field") {
        rigid({RigidTerm::Pc, RigidTerm::RigidField});
    } else {
        throw Error("unknown preset " + name);
    }
    return cfg;
}

// Applies config keys on top of a RunConfig (typically a preset).
inline void apply_config_kv(RunConfig& cfg, const std::map<std::string, std::string>& kv) {
    using detail::parse_term;
    using detail::to_double;
    using detail::to_int;
    for (const auto& [key, value] : kv) {
        if (key == "similarity") {
            if (value == "mind") cfg.weights.similarity = Similarity::Mind;
            else if (value == "nmi") cfg.weights.similarity = Similarity::Nmi;
            else if (value == "ngf") cfg.weights.similarity = Similarity::Ngf;
            else throw Error("config: unknown similarity " + value);
        } else if (key == "similarity.weight") {
            cfg.weights.similarity_weight = to_double(value, key);
        } else if (key == "lambda_smooth") {
            cfg.weights.lambda_smooth = to_double(value, key);
        } else if (key == "svf.steps") {
            cfg.weights.svf_steps = to_int(value, key);
        } else if (key == "mind.patch_radius") {
            cfg.weights.mind_patch_radius = to_int(value, key);
        } else if (key == "nmi.bins") {
            cfg.weights.nmi_bins = to_int(value, key);
        } else if (key == "ngf.eps_rel") {
            cfg.weights.ngf_eps_rel = to_double(value, key);
        } else if (key == "rigidity.terms") {
            cfg.weights.rigid.clear();
            std::istringstream ts(value);
            std::string tok;
            while (std::getline(ts, tok, ',')) {
                tok = detail::trim(tok);
                if (!tok.empty()) cfg.weights.rigid[parse_term(tok)] = -1.0;
            }
        } else if (key == "rigidity.weight") {
            for (auto& [t, w] : cfg.weights.rigid) w = to_double(value, key);
        } else if (key.rfind("rigidity.weight.", 0) == 0) {
            const RigidTerm t = parse_term(key.substr(16));
            if (!cfg.weights.rigid.count(t))
                throw Error("config: weight for inactive term " + key.substr(16));
            cfg.weights.rigid[t] = to_double(value, key);
        } else if (key == "rigidity.sample_cap") {
            cfg.weights.rigidity_sample_cap = static_cast<size_t>(to_int(value, key));
        } else if (key == "rigidity.activate_after") {
            cfg.optim.rigidity_activate_after = to_int(value, key);
        } else if (key == "rigidity.auto_fraction") {
            cfg.optim.auto_scale_fraction = to_double(value, key);
        } else if (key == "optim.max_iters") {
            cfg.optim.max_iters = to_int(value, key);
        } else if (key == "optim.step_size") {
            cfg.optim.step_size = to_double(value, key);
        } else if (key == "optim.beta1") {
            cfg.optim.beta1 = to_double(value, key);
        } else if (key == "optim.beta2") {
            cfg.optim.beta2 = to_double(value, key);
        } else if (key == "optim.tolerance") {
            cfg.optim.tolerance = to_double(value, key);
        } else if (key == "optim.pyramid_levels") {
            cfg.optim.pyramid_levels = to_int(value, key);
        } else {
            throw Error("config: unknown key " + key);
        }
    }
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
    apply_config_kv(cfg, detail::parse_kv_file(path));
}

// ---------------------------------------------------------------------------
// Phantom spec files

inline PhantomSpec parse_phantom_spec(const std::map<std::string, std::string>& kv) {
    using detail::to_double;
    using detail::to_int;
    PhantomSpec spec;
    for (const auto& [key, value] : kv) {
        if (key == "dims") {
            std::istringstream vs(value);
            vs >> spec.dims.x >> spec.dims.y >> spec.dims.z;
            if (!vs) throw Error("phantom spec: bad dims");
        } else if (key == "bodies") {
            spec.body_count = to_int(value, key);
        } else if (key == "half_extents") {
            std::istringstream vs(value);
            vs >> spec.half_extents.x >> spec.half_extents.y >> spec.half_extents.z;
            if (!vs) throw Error("phantom spec: bad half_extents");
        } else if (key == "shape") {
            if (value == "box") spec.ellipsoid = false;
            else if (value == "ellipsoid") spec.ellipsoid = true;
            else throw Error("phantom spec: unknown shape " + value);
        } else if (key == "gap") {
            spec.gap = to_double(value, key);
        } else if (key == "max_rotation_deg") {
            spec.max_rotation_deg = to_double(value, key);
        } else if (key == "max_translation") {
            spec.max_translation = to_double(value, key);
        } else if (key == "background_amplitude") {
            spec.background_amplitude = to_double(value, key);
        } else if (key == "noise") {
            spec.noise = to_double(value, key);
        } else if (key == "edt_exponent") {
            spec.edt_exponent = to_double(value, key);
        } else if (key == "seed") {
            spec.seed = static_cast<uint64_t>(to_double(value, key));
        } else {
            throw Error("phantom spec: unknown key " + key);
        }
    }
    return spec;
}

inline PhantomSpec load_phantom_spec(const std::string& path) {
    return parse_phantom_spec(detail::parse_kv_file(path));
}

}  // namespace rigidreg
