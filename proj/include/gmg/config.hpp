#pragma once

// JSON round-trips for experiment configuration and the constraint-file
// schema. Every CLI run writes its resolved config next to its outputs so
// reruns are reproducible from the artifact directory alone.

#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gmg/diffusion.hpp"
#include "gmg/loss.hpp"
#include "gmg/moments.hpp"
#include "gmg/phantom.hpp"
#include "gmg/vgf.hpp"

namespace gmg {

using nlohmann::json;

// --- phantom spec ----------------------------------------------------------

inline json to_json(const Interval& iv) { return json::array({iv.lo, iv.hi}); }
inline Interval interval_from_json(const json& j) {
    return {j.at(0).get<double>(), j.at(1).get<double>()};
}

inline const char* kind_name(PrimitiveKind k) {
    switch (k) {
        case PrimitiveKind::Ellipsoid: return "ellipsoid";
        case PrimitiveKind::Shell: return "shell";
        case PrimitiveKind::Crescent: return "crescent";
        case PrimitiveKind::Tube: return "tube";
    }
    return "ellipsoid";
}

inline PrimitiveKind kind_from_name(const std::string& s) {
    if (s == "ellipsoid") return PrimitiveKind::Ellipsoid;
    if (s == "shell") return PrimitiveKind::Shell;
    if (s == "crescent") return PrimitiveKind::Crescent;
    if (s == "tube") return PrimitiveKind::Tube;
    throw std::invalid_argument("config: unknown primitive kind " + s);
}

inline json to_json(const PrimitiveSpec& p) {
    json j;
    j["name"] = p.name;
    j["kind"] = kind_name(p.kind);
    j["attach_to"] = p.attach_to;
    j["center"] = {to_json(p.center[0]), to_json(p.center[1]), to_json(p.center[2])};
    j["semi"] = {to_json(p.semi[0]), to_json(p.semi[1]), to_json(p.semi[2])};
    j["random_rotation"] = p.random_rotation;
    j["outer_scale"] = to_json(p.outer_scale);
    j["offset"] = {to_json(p.offset[0]), to_json(p.offset[1]), to_json(p.offset[2])};
    j["cut_scale"] = to_json(p.cut_scale);
    j["p0"] = {p.p0.x, p.p0.y, p.p0.z};
    j["p1"] = {p.p1.x, p.p1.y, p.p1.z};
    j["p2"] = {p.p2.x, p.p2.y, p.p2.z};
    j["tube_offset"] = to_json(p.tube_offset);
    j["point_jitter"] = to_json(p.point_jitter);
    j["radius"] = to_json(p.radius);
    return j;
}

inline PrimitiveSpec primitive_from_json(const json& j) {
    PrimitiveSpec p;
    p.name = j.at("name").get<std::string>();
    p.kind = kind_from_name(j.at("kind").get<std::string>());
    p.attach_to = j.value("attach_to", -1);
    for (int a = 0; a < 3; ++a) {
        p.center[a] = interval_from_json(j.at("center").at(a));
        p.semi[a] = interval_from_json(j.at("semi").at(a));
        p.offset[a] = interval_from_json(j.at("offset").at(a));
    }
    p.random_rotation = j.value("random_rotation", false);
    p.outer_scale = interval_from_json(j.at("outer_scale"));
    p.cut_scale = interval_from_json(j.at("cut_scale"));
    auto vec = [&](const char* key) {
        return Vec3{j.at(key).at(0).get<double>(), j.at(key).at(1).get<double>(),
                    j.at(key).at(2).get<double>()};
    };
    p.p0 = vec("p0");
    p.p1 = vec("p1");
    p.p2 = vec("p2");
    p.tube_offset = interval_from_json(j.at("tube_offset"));
    p.point_jitter = interval_from_json(j.at("point_jitter"));
    p.radius = interval_from_json(j.at("radius"));
    return p;
}

inline json to_json(const PhantomSpec& spec) {
    json j;
    j["seed"] = spec.seed;
    j["shape"] = {spec.shape.h, spec.shape.w, spec.shape.d};
    j["margin"] = spec.margin;
    j["max_retries"] = spec.max_retries;
    j["voxel_edge"] = spec.voxel_edge;
    j["components"] = json::array();
    for (const auto& c : spec.components) j["components"].push_back(to_json(c));
    return j;
}

inline PhantomSpec phantom_from_json(const json& j) {
    PhantomSpec spec;
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.shape = {j.at("shape").at(0).get<int>(), j.at("shape").at(1).get<int>(),
                  j.at("shape").at(2).get<int>()};
    spec.margin = j.value("margin", 0.03);
    spec.max_retries = j.value("max_retries", 64);
    spec.voxel_edge = j.value("voxel_edge", 1.0);
    for (const auto& c : j.at("components")) spec.components.push_back(primitive_from_json(c));
    return spec;
}

inline std::string phantom_spec_hash(const PhantomSpec& spec) {
    return hex64(fnv1a64(to_json(spec).dump()));
}

inline std::vector<std::string> phantom_labels(const PhantomSpec& spec) {
    std::vector<std::string> labels{"BG"};
    for (const auto& c : spec.components) labels.push_back(c.name);
    return labels;
}

// --- training / schedule / sampling ----------------------------------------

inline json to_json(const TrainConfig& c) {
    return json{{"steps", c.steps},
                {"batch", c.batch},
                {"lr", c.lr},
                {"final_lr_fraction", c.final_lr_fraction},
                {"sigma_log_mean", c.sigma_log_mean},
                {"sigma_log_std", c.sigma_log_std},
                {"seed", c.seed},
                {"log_every", c.log_every},
                {"logit_amplitude", c.logit_amplitude}};
}

inline TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.steps = j.value("steps", c.steps);
    c.batch = j.value("batch", c.batch);
    c.lr = j.value("lr", c.lr);
    c.final_lr_fraction = j.value("final_lr_fraction", c.final_lr_fraction);
    c.sigma_log_mean = j.value("sigma_log_mean", c.sigma_log_mean);
    c.sigma_log_std = j.value("sigma_log_std", c.sigma_log_std);
    c.seed = j.value("seed", c.seed);
    c.log_every = j.value("log_every", c.log_every);
    c.logit_amplitude = j.value("logit_amplitude", c.logit_amplitude);
    return c;
}

struct ScheduleConfig {
    int steps = 50;
    double sigma_min = 1e-2;
    double sigma_max = 80.0;
    double rho = 3.0;

    NoiseSchedule make() const { return make_schedule(steps, sigma_min, sigma_max, rho); }
};

inline json to_json(const ScheduleConfig& c) {
    return json{{"steps", c.steps},
                {"sigma_min", c.sigma_min},
                {"sigma_max", c.sigma_max},
                {"rho", c.rho}};
}

inline ScheduleConfig schedule_from_json(const json& j) {
    ScheduleConfig c;
    c.steps = j.value("steps", c.steps);
    c.sigma_min = j.value("sigma_min", c.sigma_min);
    c.sigma_max = j.value("sigma_max", c.sigma_max);
    c.rho = j.value("rho", c.rho);
    return c;
}

inline json to_json(const SampleOptions& o) {
    return json{{"mode", o.mode == SolverMode::DeterministicOde ? "ode" : "sde"},
                {"gradient_path", o.path == GradientPath::FullVjp ? "full" : "clean"},
                {"temperature", o.temperature},
                {"logit_amplitude", o.logit_amplitude}};
}

inline SampleOptions sample_options_from_json(const json& j) {
    SampleOptions o;
    std::string mode = j.value("mode", "ode");
    if (mode == "ode")
        o.mode = SolverMode::DeterministicOde;
    else if (mode == "sde")
        o.mode = SolverMode::StochasticSde;
    else
        throw std::invalid_argument("config: unknown solver mode " + mode);
    std::string path = j.value("gradient_path", "full");
    if (path == "full")
        o.path = GradientPath::FullVjp;
    else if (path == "clean")
        o.path = GradientPath::CleanPrediction;
    else
        throw std::invalid_argument("config: unknown gradient path " + path);
    o.temperature = j.value("temperature", o.temperature);
    o.logit_amplitude = j.value("logit_amplitude", o.logit_amplitude);
    return o;
}

// --- constraints ------------------------------------------------------------

inline int resolve_label(const json& entry, const std::vector<std::string>& labels) {
    if (entry.is_number_integer()) return entry.get<int>();
    const std::string name = entry.get<std::string>();
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == name) return int(i);
    throw std::invalid_argument("constraints: unknown label name " + name);
}

// Parses the constraint schema. Group targets may be given literally or
// copied from a reference VGF's measured moments ("from": {"vgf": path,
// "labels": [...], "mass_scale": 2.0}). `labels` maps names to channels;
// `base_dir` resolves relative "from" paths.
inline ConstraintSet constraints_from_json(const json& j, const std::vector<std::string>& labels,
                                           const std::string& base_dir = "") {
    ConstraintSet cs;
    if (j.contains("lambdas")) {
        cs.lambda_size = j["lambdas"].at(0).get<double>();
        cs.lambda_pos = j["lambdas"].at(1).get<double>();
        cs.lambda_shape = j["lambdas"].at(2).get<double>();
    }
    cs.guidance_weight = j.value("w", 1.0);

    for (const auto& gj : j.at("groups")) {
        MomentConstraint g;
        for (const auto& l : gj.at("labels")) g.labels.push_back(resolve_label(l, labels));

        std::optional<ComponentMoments> measured;
        double mass_scale = 1.0;
        if (gj.contains("from")) {
            const auto& f = gj["from"];
            std::string path = f.at("vgf").get<std::string>();
            if (!base_dir.empty() && !path.empty() && path[0] != '/')
                path = base_dir + "/" + path;
            LabelGrid ref = read_vgf(path);
            ComponentSelection sel;
            std::vector<int> ref_labels;
            if (f.contains("labels"))
                for (const auto& l : f["labels"])
                    ref_labels.push_back(resolve_label(l, ref.labels));
            else
                ref_labels = g.labels;
            sel.groups = {ref_labels};
            GeometricMoments m = extract_moments(select_components(ref, sel));
            if (m[0].empty)
                throw std::invalid_argument("constraints: 'from' component is empty in " + path);
            measured = m[0];
            mass_scale = f.value("mass_scale", 1.0);
        }

        auto parse_moment = [&](const char* key, bool& on_flag, auto&& apply_target,
                                auto&& apply_measured) {
            if (!gj.contains(key)) {
                if (measured) {
                    // With a reference, moments default to off unless listed.
                }
                return;
            }
            const auto& mj = gj[key];
            on_flag = mj.value("on", true);
            if (mj.contains("target"))
                apply_target(mj["target"]);
            else if (measured)
                apply_measured(*measured);
            else if (on_flag)
                throw std::invalid_argument(std::string("constraints: active '") + key +
                                            "' needs a target or a 'from' reference");
        };

        parse_moment(
            "mass", g.mass_on, [&](const json& t) { g.mass_target = t.get<double>(); },
            [&](const ComponentMoments& m) { g.mass_target = m.mass * mass_scale; });
        parse_moment(
            "centroid", g.centroid_on,
            [&](const json& t) {
                g.centroid_target = {t.at(0).get<double>(), t.at(1).get<double>(),
                                     t.at(2).get<double>()};
            },
            [&](const ComponentMoments& m) { g.centroid_target = m.centroid; });
        parse_moment(
            "shape", g.shape_on,
            [&](const json& t) {
                for (int r = 0; r < 3; ++r)
                    for (int c = 0; c < 3; ++c) g.shape_target(r, c) = t.at(r).at(c).get<double>();
            },
            [&](const ComponentMoments& m) { g.shape_target = m.cov_normalized; });

        cs.groups.push_back(g);
    }
    return cs;
}

inline json to_json(const ConstraintSet& cs, const std::vector<std::string>& labels = {}) {
    json j;
    j["lambdas"] = {cs.lambda_size, cs.lambda_pos, cs.lambda_shape};
    j["w"] = cs.guidance_weight;
    j["groups"] = json::array();
    for (const auto& g : cs.groups) {
        json gj;
        gj["labels"] = json::array();
        for (int l : g.labels) {
            if (l < int(labels.size()))
                gj["labels"].push_back(labels[l]);
            else
                gj["labels"].push_back(l);
        }
        if (g.mass_on) gj["mass"] = {{"on", true}, {"target", g.mass_target}};
        if (g.centroid_on)
            gj["centroid"] = {{"on", true},
                              {"target", {g.centroid_target.x, g.centroid_target.y,
                                          g.centroid_target.z}}};
        if (g.shape_on) {
            json rows = json::array();
            for (int r = 0; r < 3; ++r)
                rows.push_back({g.shape_target(r, 0), g.shape_target(r, 1), g.shape_target(r, 2)});
            gj["shape"] = {{"on", true}, {"target", rows}};
        }
        j["groups"].push_back(gj);
    }
    return j;
}

inline ConstraintSet load_constraints(const std::string& path,
                                      const std::vector<std::string>& labels) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("constraints: cannot open " + path);
    std::string base_dir = ".";
    if (auto slash = path.find_last_of('/'); slash != std::string::npos)
        base_dir = path.substr(0, slash);
    return constraints_from_json(json::parse(in), labels, base_dir);
}

// --- experiment config -------------------------------------------------------

struct ExperimentConfig {
    PhantomSpec phantom = default_phantom_spec();
    TrainConfig training;
    ScheduleConfig schedule;
    SampleOptions sampling;
    NetConfig net;
    std::vector<double> w_sweep{0.0, 0.5, 1.0, 2.0};
    std::uint64_t seed_start = 0;
    int seed_count = 50;
    std::string constraints_path;
    std::string out_dir = "out";
};

inline json to_json(const ExperimentConfig& c) {
    json j;
    j["phantom"] = to_json(c.phantom);
    j["training"] = to_json(c.training);
    j["schedule"] = to_json(c.schedule);
    j["sampling"] = to_json(c.sampling);
    j["net"] = {{"base", c.net.base}, {"mid", c.net.mid}, {"head", c.net.head},
                {"emb", c.net.emb},   {"sigma_data", c.net.sigma_data}};
    j["w_sweep"] = c.w_sweep;
    j["seeds"] = {{"start", c.seed_start}, {"count", c.seed_count}};
    j["constraints"] = c.constraints_path;
    j["out_dir"] = c.out_dir;
    return j;
}

inline ExperimentConfig experiment_from_json(const json& j) {
    ExperimentConfig c;
    if (j.contains("phantom")) c.phantom = phantom_from_json(j["phantom"]);
    if (j.contains("training")) c.training = train_config_from_json(j["training"]);
    if (j.contains("schedule")) c.schedule = schedule_from_json(j["schedule"]);
    if (j.contains("sampling")) c.sampling = sample_options_from_json(j["sampling"]);
    if (j.contains("net")) {
        c.net.base = j["net"].value("base", c.net.base);
        c.net.mid = j["net"].value("mid", c.net.mid);
        c.net.head = j["net"].value("head", c.net.head);
        c.net.emb = j["net"].value("emb", c.net.emb);
        c.net.sigma_data = j["net"].value("sigma_data", c.net.sigma_data);
    }
    if (j.contains("w_sweep")) c.w_sweep = j["w_sweep"].get<std::vector<double>>();
    if (j.contains("seeds")) {
        c.seed_start = j["seeds"].value("start", std::uint64_t(0));
        c.seed_count = j["seeds"].value("count", 50);
    }
    c.constraints_path = j.value("constraints", std::string());
    c.out_dir = j.value("out_dir", std::string("out"));
    return c;
}

inline ExperimentConfig load_experiment(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    return experiment_from_json(json::parse(in));
}

inline void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("config: cannot write " + path);
    out << j.dump(2) << "\n";
}

}  // namespace gmg
