// gmg: geometric-moment guided diffusion over 3D multi-label voxel grids.
//
// Subcommands: gen-data, train, sample, guide, inpaint, moments, eval, mesh,
// recipe. Every run writes its resolved config and a hash manifest into the
// output directory; deterministic-mode runs reproduce hashes from the
// resolved config alone.

#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "gmg/config.hpp"
#include "gmg/diffusion.hpp"
#include "gmg/mesh.hpp"
#include "gmg/metrics.hpp"
#include "gmg/svg.hpp"
#include "gmg/vgf.hpp"

namespace fs = std::filesystem;
using namespace gmg;

namespace {

constexpr const char* kToolVersion = "gmg 0.1.0";

// --- run directory plumbing -------------------------------------------------

struct RunDir {
    fs::path dir;
    int lock_fd = -1;
    std::map<std::string, std::string> file_hashes;

    explicit RunDir(const std::string& path) : dir(path) {
        fs::create_directories(dir);
        fs::path lock = dir / ".lock";
        lock_fd = ::open(lock.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (lock_fd < 0)
            throw std::runtime_error("run directory is locked by another process: " +
                                     dir.string());
    }

    ~RunDir() {
        if (lock_fd >= 0) {
            ::close(lock_fd);
            std::error_code ec;
            fs::remove(dir / ".lock", ec);
        }
    }

    fs::path path(const std::string& name) const { return dir / name; }

    void record(const std::string& name) {
        std::ifstream in(dir / name, std::ios::binary);
        std::uint64_t h = 0xCBF29CE484222325ull;
        char buf[65536];
        while (in.read(buf, sizeof buf) || in.gcount() > 0)
            h = fnv1a64(buf, std::size_t(in.gcount()), h);
        file_hashes[name] = hex64(h);
    }

    void finish(const json& resolved_config) {
        write_json_file(path("resolved_config.json").string(), resolved_config);
        json manifest;
        manifest["tool"] = kToolVersion;
        manifest["config_hash"] = hex64(fnv1a64(resolved_config.dump()));
        manifest["files"] = file_hashes;
        write_json_file(path("manifest.json").string(), manifest);
    }
};

void write_grid(RunDir& run, const std::string& name, const LabelGrid& grid) {
    write_vgf(run.path(name).string(), grid);
    run.record(name);
    run.record(name + ".json");
}

json moment_summary(const GeometricMoments& m, const std::vector<std::string>& labels) {
    json out = json::array();
    for (std::size_t k = 0; k < m.size(); ++k) {
        const auto& cm = m[k];
        json cj;
        cj["label"] = k + 1 < labels.size() ? labels[k + 1] : std::to_string(k + 1);
        cj["mass"] = cm.mass;
        cj["empty"] = cm.empty;
        if (!cm.empty) {
            cj["centroid"] = {cm.centroid.x, cm.centroid.y, cm.centroid.z};
            json cov = json::array(), covn = json::array();
            for (int r = 0; r < 3; ++r) {
                cov.push_back({cm.cov(r, 0), cm.cov(r, 1), cm.cov(r, 2)});
                covn.push_back({cm.cov_normalized(r, 0), cm.cov_normalized(r, 1),
                                cm.cov_normalized(r, 2)});
            }
            cj["cov"] = cov;
            cj["cov_normalized"] = covn;
        }
        out.push_back(cj);
    }
    return out;
}

std::vector<LabelGrid> load_grid_dir(const std::string& dir) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir)) {
        std::string p = e.path().string();
        if (p.size() > 4 && p.substr(p.size() - 4) == ".vgf") names.push_back(p);
    }
    std::sort(names.begin(), names.end());
    if (names.empty()) throw std::runtime_error("no .vgf grids in " + dir);
    std::vector<LabelGrid> grids;
    grids.reserve(names.size());
    for (const auto& n : names) grids.push_back(read_vgf(n));
    return grids;
}

// Per-sample constraint targets measured from validation phantoms. Validation
// indices live far above the training range.
constexpr std::uint64_t kValidationOffset = 1'000'000;

ConstraintSet targets_from_phantom(const PhantomSpec& spec, std::uint64_t index,
                                   const std::vector<std::vector<int>>& groups, bool mass_on,
                                   bool pos_on, bool shape_on, const ConstraintSet& base) {
    LabelGrid target_grid = generate_phantom(spec, kValidationOffset + index);
    ComponentSelection sel;
    sel.groups = groups;
    GeometricMoments m = extract_moments(select_components(target_grid, sel));
    ConstraintSet cs = base;
    cs.groups.clear();
    for (std::size_t k = 0; k < groups.size(); ++k) {
        MomentConstraint g;
        g.labels = groups[k];
        g.mass_on = mass_on;
        g.mass_target = m[k].mass;
        g.centroid_on = pos_on;
        g.centroid_target = m[k].centroid;
        g.shape_on = shape_on;
        g.shape_target = m[k].cov_normalized;
        cs.groups.push_back(g);
    }
    return cs;
}

struct LoadedModel {
    std::unique_ptr<EdmDenoiser> model;
    std::string checkpoint_path;
};

LoadedModel obtain_model(const ExperimentConfig& cfg, const std::string& ckpt_path, RunDir& run) {
    LoadedModel lm;
    if (!ckpt_path.empty()) {
        lm.model = load_checkpoint(ckpt_path);
        lm.checkpoint_path = ckpt_path;
        return lm;
    }
    std::cerr << "training denoiser (" << cfg.training.steps << " steps)...\n";
    auto dataset = generate_phantoms(cfg.phantom, 256);
    TrainLog log;
    lm.model = train_denoiser(dataset, cfg.training, cfg.net, &log);
    std::string name = "model.ckpt";
    save_checkpoint(run.path(name).string(), *lm.model);
    run.record(name);
    lm.checkpoint_path = run.path(name).string();

    std::ofstream curve(run.path("training_curve.csv"));
    curve << "step,loss\n";
    for (auto [s, l] : log.curve) curve << s << "," << l << "\n";
    curve.close();
    run.record("training_curve.csv");
    return lm;
}

// --- fidelity bookkeeping -----------------------------------------------------

struct RunFidelity {
    std::vector<double> size, pos, shape;

    void add(const LabelGrid& sample, const ConstraintSet& cs) {
        GeometricMoments m = extract_moments(select_components(sample, cs.selection()));
        FidelityAccumulator acc;
        acc.add(m, cs.groups);
        size.push_back(acc.size());
        pos.push_back(acc.position());
        shape.push_back(acc.shape());
    }

    static double median(std::vector<double> v) {
        if (v.empty()) return 0;
        std::sort(v.begin(), v.end());
        return v.size() % 2 ? v[v.size() / 2]
                            : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
    }
};

// One guided (or unconditional) run against per-seed validation targets.
struct SweepRow {
    double w = 0;
    bool mass_on = false, pos_on = false, shape_on = false;
    std::vector<std::vector<int>> groups;

    RunFidelity fidelity;
    std::vector<LabelGrid> samples;
};

void run_sweep_row(SweepRow& row, const EdmDenoiser& model, const ExperimentConfig& cfg,
                   int n_samples) {
    NoiseSchedule sched = cfg.schedule.make();
    SampleOptions opts = cfg.sampling;
    opts.labels = phantom_labels(cfg.phantom);
    row.samples.resize(n_samples);
    std::vector<ConstraintSet> targets(n_samples);

    parallel_for(n_samples, [&](std::int64_t i) {
        ConstraintSet cs = targets_from_phantom(cfg.phantom, std::uint64_t(i), row.groups,
                                                row.mass_on, row.pos_on, row.shape_on,
                                                ConstraintSet{});
        cs.guidance_weight = row.w;
        targets[i] = cs;
        std::uint64_t seed = cfg.seed_start + std::uint64_t(i);
        SampleResult r = (row.w != 0.0 && (row.mass_on || row.pos_on || row.shape_on))
                             ? guided_sample(model, sched, cs, cfg.phantom.shape, seed, opts)
                             : sample(model, sched, cfg.phantom.shape, seed, opts);
        row.samples[i] = std::move(r.hard);
    });

    for (int i = 0; i < n_samples; ++i) {
        ConstraintSet measured_against = targets[i];
        // Fidelity always measures all three moment families.
        for (auto& g : measured_against.groups) {
            g.mass_on = true;
            g.centroid_on = true;
            g.shape_on = true;
        }
        row.fidelity.add(row.samples[i], measured_against);
    }
}

double morph_frechet(const std::vector<LabelGrid>& real, const std::vector<LabelGrid>& synth) {
    std::vector<std::vector<double>> rv, sv;
    for (const auto& g : real) rv.push_back(morph_vector(g));
    for (const auto& g : synth) sv.push_back(morph_vector(g));
    ZScore z = ZScore::fit(rv);
    for (auto& v : rv) v = z.apply(v);
    for (auto& v : sv) v = z.apply(v);
    return frechet_distance(rv, sv).value;
}

// --- subcommand implementations ----------------------------------------------

int cmd_gen_data(const ExperimentConfig& cfg, int n, const std::string& out) {
    RunDir run(out);
    auto grids = generate_phantoms(cfg.phantom, n);
    json manifest_samples = json::array();
    char name[64];
    for (int i = 0; i < n; ++i) {
        std::snprintf(name, sizeof name, "phantom_%05d.vgf", i);
        write_grid(run, name, grids[i]);
        GeometricMoments m = extract_moments(
            select_components(grids[i], ComponentSelection::singletons(grids[i].channels)));
        manifest_samples.push_back(
            {{"file", name}, {"moments", moment_summary(m, grids[i].labels)}});
    }
    json data_manifest;
    data_manifest["seed"] = cfg.phantom.seed;
    data_manifest["spec_hash"] = phantom_spec_hash(cfg.phantom);
    data_manifest["samples"] = manifest_samples;
    write_json_file(run.path("data_manifest.json").string(), data_manifest);
    run.record("data_manifest.json");

    json resolved;
    resolved["command"] = "gen-data";
    resolved["n"] = n;
    resolved["experiment"] = to_json(cfg);
    run.finish(resolved);
    std::cout << "wrote " << n << " phantoms to " << out << "\n";
    return 0;
}

int cmd_train(const ExperimentConfig& cfg, const std::string& data_dir, const std::string& out) {
    RunDir run(out);
    std::vector<LabelGrid> dataset;
    if (!data_dir.empty())
        dataset = load_grid_dir(data_dir);
    else
        dataset = generate_phantoms(cfg.phantom, 256);

    TrainLog log;
    auto model = train_denoiser(dataset, cfg.training, cfg.net, &log);
    save_checkpoint(run.path("model.ckpt").string(), *model);
    run.record("model.ckpt");

    std::ofstream curve(run.path("training_curve.csv"));
    curve << "step,loss\n";
    for (auto [s, l] : log.curve) curve << s << "," << l << "\n";
    curve.close();
    run.record("training_curve.csv");

    json resolved;
    resolved["command"] = "train";
    resolved["data_dir"] = data_dir;
    resolved["experiment"] = to_json(cfg);
    run.finish(resolved);
    std::cout << "checkpoint: " << run.path("model.ckpt").string() << "\n";
    return 0;
}

int cmd_sample(const ExperimentConfig& cfg, const std::string& ckpt, int n,
               const std::string& out, const std::string& constraints_path, bool is_guided,
               double w_override) {
    RunDir run(out);
    auto model = load_checkpoint(ckpt);
    NoiseSchedule sched = cfg.schedule.make();
    std::vector<std::string> labels = phantom_labels(cfg.phantom);
    SampleOptions opts = cfg.sampling;
    opts.labels = labels;

    ConstraintSet cs;
    if (is_guided) {
        cs = load_constraints(constraints_path, labels);
        if (w_override >= 0) cs.guidance_weight = w_override;
        cs.validate(model->channels());
    }

    std::vector<SampleResult> results(n);
    parallel_for(n, [&](std::int64_t i) {
        std::uint64_t seed = cfg.seed_start + std::uint64_t(i);
        results[i] = is_guided
                         ? guided_sample(*model, sched, cs, cfg.phantom.shape, seed, opts)
                         : sample(*model, sched, cfg.phantom.shape, seed, opts);
    });

    json fidelity = json::array();
    char name[64];
    for (int i = 0; i < n; ++i) {
        std::snprintf(name, sizeof name, "sample_%05d.vgf", i);
        write_grid(run, name, results[i].hard);
        if (is_guided) {
            GeometricMoments m =
                extract_moments(select_components(results[i].hard, cs.selection()));
            FidelityAccumulator acc;
            acc.add(m, cs.groups);
            fidelity.push_back({{"file", name},
                                {"size", acc.size()},
                                {"position", acc.position()},
                                {"shape", acc.shape()},
                                {"gate_events", results[i].gate_events}});
        }
    }
    if (is_guided) {
        json report;
        report["per_sample"] = fidelity;
        write_json_file(run.path("fidelity.json").string(), report);
        run.record("fidelity.json");
    }

    json resolved;
    resolved["command"] = is_guided ? "guide" : "sample";
    resolved["checkpoint"] = ckpt;
    resolved["n"] = n;
    if (is_guided) resolved["constraints"] = to_json(cs, labels);
    resolved["experiment"] = to_json(cfg);
    run.finish(resolved);
    std::cout << "wrote " << n << " samples to " << out << "\n";
    return 0;
}

int cmd_inpaint(const ExperimentConfig& cfg, const std::string& ckpt, const std::string& known_path,
                const std::string& mask_path, const std::string& constraints_path, int n,
                const std::string& out, double w_override) {
    RunDir run(out);
    auto model = load_checkpoint(ckpt);
    LabelGrid known = read_vgf(known_path);
    LabelGrid mask_grid = read_vgf(mask_path);
    if (mask_grid.channels != 1 || !(mask_grid.shape == known.shape))
        throw std::invalid_argument("inpaint: mask must be a 1-channel grid matching the known grid");
    std::vector<std::uint8_t> editable(mask_grid.values.size());
    for (std::size_t i = 0; i < editable.size(); ++i)
        editable[i] = mask_grid.values[i] >= 0.5 ? 1 : 0;

    ConstraintSet cs = load_constraints(constraints_path, known.labels);
    if (w_override >= 0) cs.guidance_weight = w_override;
    cs.validate(known.channels);

    NoiseSchedule sched = cfg.schedule.make();
    SampleOptions opts = cfg.sampling;
    opts.labels = known.labels;

    std::vector<SampleResult> results(n);
    parallel_for(n, [&](std::int64_t i) {
        results[i] = inpaint(*model, sched, cs, known, editable, cfg.seed_start + i, opts);
    });

    json report = json::array();
    char name[64];
    for (int i = 0; i < n; ++i) {
        std::snprintf(name, sizeof name, "inpaint_%05d.vgf", i);
        write_grid(run, name, results[i].hard);
        GeometricMoments m = extract_moments(select_components(results[i].hard, cs.selection()));
        FidelityAccumulator acc;
        acc.add(m, cs.groups);
        json entry = {{"file", name}, {"size", acc.size()}, {"position", acc.position()},
                      {"shape", acc.shape()}};
        entry["warnings"] = results[i].warnings;
        for (const auto& w : results[i].warnings) std::cerr << "warning: " << w << "\n";
        report.push_back(entry);
    }
    write_json_file(run.path("inpaint_report.json").string(), json{{"per_sample", report}});
    run.record("inpaint_report.json");

    json resolved;
    resolved["command"] = "inpaint";
    resolved["checkpoint"] = ckpt;
    resolved["known"] = known_path;
    resolved["mask"] = mask_path;
    resolved["n"] = n;
    resolved["constraints"] = to_json(cs, known.labels);
    resolved["experiment"] = to_json(cfg);
    run.finish(resolved);
    return 0;
}

int cmd_moments(const std::string& grid_path, const std::string& selection_path,
                const std::string& out_path, const std::string& ellipsoid_obj_prefix) {
    LabelGrid grid = read_vgf(grid_path);
    ComponentSelection sel;
    if (!selection_path.empty()) {
        std::ifstream in(selection_path);
        if (!in) throw std::runtime_error("moments: cannot open " + selection_path);
        json j = json::parse(in);
        for (const auto& gj : j.at("groups")) {
            std::vector<int> g;
            for (const auto& l : gj) g.push_back(resolve_label(l, grid.labels));
            sel.groups.push_back(g);
        }
    } else {
        sel = ComponentSelection::singletons(grid.channels);
    }

    GeometricMoments m = extract_moments(select_components(grid, sel));
    json out;
    out["grid"] = grid_path;
    out["groups"] = json::array();
    for (std::size_t k = 0; k < m.size(); ++k) {
        json gj;
        gj["channels"] = sel.groups[k];
        gj["mass"] = m[k].mass;
        gj["empty"] = m[k].empty;
        if (!m[k].empty) {
            gj["centroid"] = {m[k].centroid.x, m[k].centroid.y, m[k].centroid.z};
            json cov = json::array(), covn = json::array();
            for (int r = 0; r < 3; ++r) {
                cov.push_back({m[k].cov(r, 0), m[k].cov(r, 1), m[k].cov(r, 2)});
                covn.push_back({m[k].cov_normalized(r, 0), m[k].cov_normalized(r, 1),
                                m[k].cov_normalized(r, 2)});
            }
            gj["cov"] = cov;
            gj["cov_normalized"] = covn;
            FittedEllipsoid fit = ellipsoid_from_moments(m, k);
            gj["ellipsoid"] = {
                {"center", {fit.center.x, fit.center.y, fit.center.z}},
                {"semi_axes", {fit.semi_axes.x, fit.semi_axes.y, fit.semi_axes.z}},
                {"rotation",
                 {{fit.rotation(0, 0), fit.rotation(0, 1), fit.rotation(0, 2)},
                  {fit.rotation(1, 0), fit.rotation(1, 1), fit.rotation(1, 2)},
                  {fit.rotation(2, 0), fit.rotation(2, 1), fit.rotation(2, 2)}}},
                {"degenerate", {fit.degenerate[0], fit.degenerate[1], fit.degenerate[2]}}};
            if (!ellipsoid_obj_prefix.empty()) {
                TriangleMesh mesh = ellipsoid_mesh(fit.center, fit.semi_axes, fit.rotation);
                write_obj(ellipsoid_obj_prefix + "_group" + std::to_string(k) + ".obj", mesh,
                          "ellipsoid");
            }
        }
        out["groups"].push_back(gj);
    }

    if (out_path.empty() || out_path == "-")
        std::cout << out.dump(2) << "\n";
    else
        write_json_file(out_path, out);
    return 0;
}

int cmd_eval(const std::string& real_dir, const std::string& synth_dir, const std::string& out,
             const std::string& constraints_path) {
    RunDir run(out);
    auto real = load_grid_dir(real_dir);
    auto synth = load_grid_dir(synth_dir);

    // Morphological metrics in z-scored morph space.
    std::vector<std::vector<double>> rv, sv;
    for (const auto& g : real) rv.push_back(morph_vector(g));
    for (const auto& g : synth) sv.push_back(morph_vector(g));
    ZScore z = ZScore::fit(rv);
    for (auto& v : rv) v = z.apply(v);
    for (auto& v : sv) v = z.apply(v);
    FrechetResult fd = frechet_distance(rv, sv);
    auto [precision, recall] = precision_recall(rv, sv, 5);

    // Pointcloud metrics per label, averaged.
    const int channels = real[0].channels;
    double mmd = 0, cov = 0, nna = 0;
    int unconverged = 0;
    json per_label = json::array();
    for (int c = 1; c < channels; ++c) {
        std::vector<PointCloud> rc, sc;
        for (const auto& g : real) {
            PointCloud pc = label_pointcloud(g, c);
            if (!pc.points.empty()) rc.push_back(std::move(pc));
        }
        for (const auto& g : synth) {
            PointCloud pc = label_pointcloud(g, c);
            if (!pc.points.empty()) sc.push_back(std::move(pc));
        }
        if (rc.empty() || sc.empty()) continue;
        PointcloudMetrics pm = pointcloud_metrics(rc, sc);
        mmd += pm.mmd;
        cov += pm.coverage;
        nna += pm.one_nna;
        unconverged += pm.unconverged_pairs;
        per_label.push_back({{"label", c},
                             {"mmd", pm.mmd},
                             {"coverage", pm.coverage},
                             {"one_nna", pm.one_nna}});
    }
    int n_labels = int(per_label.size());
    if (n_labels > 0) {
        mmd /= n_labels;
        cov /= n_labels;
        nna /= n_labels;
    }

    json report;
    report["frechet_distance"] = fd.value;
    report["frechet_jittered"] = fd.jittered;
    report["precision"] = precision;
    report["recall"] = recall;
    report["mmd"] = mmd;
    report["coverage"] = cov;
    report["one_nna"] = nna;
    report["sinkhorn_unconverged_pairs"] = unconverged;
    report["per_label"] = per_label;

    // Conditional fidelity when constraints are provided.
    if (!constraints_path.empty()) {
        ConstraintSet cs = load_constraints(constraints_path, real[0].labels);
        FidelityAccumulator acc;
        for (const auto& g : synth) {
            GeometricMoments m = extract_moments(select_components(g, cs.selection()));
            acc.add(m, cs.groups);
        }
        report["fidelity"] = {{"size", acc.size()},
                              {"position", acc.position()},
                              {"shape", acc.shape()},
                              {"size_scaled", acc.size_scaled()},
                              {"position_scaled", acc.position_scaled()},
                              {"shape_scaled", acc.shape_scaled()},
                              {"excluded", acc.excluded}};
    }

    write_json_file(run.path("eval.json").string(), report);
    run.record("eval.json");

    // Morph report CSV over the synthetic set.
    std::ofstream csv(run.path("morph_report.csv"));
    csv << "grid,label,mass,centroid_x,polar_angle,elongation,empty\n";
    for (std::size_t gi = 0; gi < synth.size(); ++gi)
        for (const auto& row : morph_report(synth[gi]))
            csv << gi << "," << row.label << "," << row.mass << "," << row.centroid_x << ","
                << row.polar_angle << "," << (row.capped ? -1.0 : row.elongation) << ","
                << int(row.empty) << "\n";
    csv.close();
    run.record("morph_report.csv");

    json resolved;
    resolved["command"] = "eval";
    resolved["real"] = real_dir;
    resolved["synth"] = synth_dir;
    resolved["constraints"] = constraints_path;
    run.finish(resolved);
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_mesh(const std::string& grid_path, const std::string& out_prefix) {
    LabelGrid grid = read_vgf(grid_path);
    export_label_meshes(grid, out_prefix);
    std::cout << "wrote label meshes with prefix " << out_prefix << "\n";
    return 0;
}

// --- recipes -------------------------------------------------------------------

int recipe_disentangle(const ExperimentConfig& cfg, const std::string& ckpt,
                       const std::string& out, bool check, const std::string& component) {
    RunDir run(out);
    LoadedModel lm = obtain_model(cfg, ckpt, run);

    std::vector<std::string> labels = phantom_labels(cfg.phantom);
    int channel = -1;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == component) channel = int(i);
    if (channel <= 0) throw std::invalid_argument("recipe: unknown component " + component);

    struct RowSpec {
        const char* name;
        bool mass, pos, shape;
        double w;
    };
    const RowSpec rows[] = {{"uncond", false, false, false, 0.0},
                            {"size", true, false, false, 1.0},
                            {"pos", false, true, false, 1.0},
                            {"shape", false, false, true, 1.0},
                            {"geom", true, true, true, 1.0}};

    std::vector<LabelGrid> validation;
    for (int i = 0; i < cfg.seed_count; ++i)
        validation.push_back(generate_phantom(cfg.phantom, kValidationOffset + i));

    std::ofstream csv(run.path("disentangle.csv"));
    csv << "row,size_fid_x1e4,pos_fid_x1e3,shape_fid_x1e3,frechet\n";
    std::map<std::string, std::array<double, 4>> table;
    for (const RowSpec& spec : rows) {
        SweepRow row;
        row.w = spec.w;
        row.mass_on = spec.mass;
        row.pos_on = spec.pos;
        row.shape_on = spec.shape;
        row.groups = {{channel}};
        run_sweep_row(row, *lm.model, cfg, cfg.seed_count);
        double fd = morph_frechet(validation, row.samples);
        table[spec.name] = {RunFidelity::median(row.fidelity.size) * 1e4,
                            RunFidelity::median(row.fidelity.pos) * 1e3,
                            RunFidelity::median(row.fidelity.shape) * 1e3, fd};
        csv << spec.name << "," << table[spec.name][0] << "," << table[spec.name][1] << ","
            << table[spec.name][2] << "," << table[spec.name][3] << "\n";
        std::cerr << "row " << spec.name << " done\n";
    }
    csv.close();
    run.record("disentangle.csv");

    SvgPlot plot("Disentangled guidance (component " + component + ")", "row index",
                 "median fidelity (scaled)");
    SvgSeries s_size{"size x1e4", "#d62728"}, s_pos{"pos x1e3", "#2ca02c"},
        s_shape{"shape x1e3", "#1f77b4"};
    int xi = 0;
    for (const RowSpec& spec : rows) {
        s_size.points.push_back({double(xi), table[spec.name][0]});
        s_pos.points.push_back({double(xi), table[spec.name][1]});
        s_shape.points.push_back({double(xi), table[spec.name][2]});
        ++xi;
    }
    plot.add_series(s_size);
    plot.add_series(s_pos);
    plot.add_series(s_shape);
    plot.write(run.path("disentangle.svg").string());
    run.record("disentangle.svg");

    int failures = 0;
    if (check) {
        auto expect = [&](bool cond, const std::string& what) {
            if (!cond) {
                ++failures;
                std::cerr << "[check failed] " << what << "\n";
            }
        };
        expect(table["size"][0] < table["uncond"][0], "size row improves size fidelity");
        expect(table["pos"][1] < table["uncond"][1], "pos row improves position fidelity");
        expect(table["shape"][2] < table["uncond"][2], "shape row improves shape fidelity");
        expect(table["geom"][0] < table["uncond"][0], "geom row improves size fidelity");
    }

    json resolved;
    resolved["command"] = "recipe";
    resolved["recipe"] = "disentangle";
    resolved["component"] = component;
    resolved["checkpoint"] = ckpt;
    resolved["experiment"] = to_json(cfg);
    run.finish(resolved);
    return failures ? 1 : 0;
}

int recipe_w_sweep(const ExperimentConfig& cfg, const std::string& ckpt, const std::string& out,
                   bool check, const std::string& component) {
    RunDir run(out);
    LoadedModel lm = obtain_model(cfg, ckpt, run);

    std::vector<std::string> labels = phantom_labels(cfg.phantom);
    int channel = -1;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == component) channel = int(i);
    if (channel <= 0) throw std::invalid_argument("recipe: unknown component " + component);

    std::ofstream csv(run.path("w_sweep.csv"));
    csv << "w,size_fid_median,pos_fid_median,shape_fid_median\n";
    std::vector<std::array<double, 4>> results;
    for (double w : cfg.w_sweep) {
        SweepRow row;
        row.w = w;
        row.mass_on = true;
        row.pos_on = true;
        row.shape_on = true;
        row.groups = {{channel}};
        run_sweep_row(row, *lm.model, cfg, cfg.seed_count);
        results.push_back({w, RunFidelity::median(row.fidelity.size),
                           RunFidelity::median(row.fidelity.pos),
                           RunFidelity::median(row.fidelity.shape)});
        csv << w << "," << results.back()[1] << "," << results.back()[2] << ","
            << results.back()[3] << "\n";
        std::cerr << "w=" << w << " done\n";
    }
    csv.close();
    run.record("w_sweep.csv");

    SvgPlot plot("Guidance weight sweep (component " + component + ")", "w", "median fidelity");
    SvgSeries s_size{"size", "#d62728"}, s_pos{"pos", "#2ca02c"}, s_shape{"shape", "#1f77b4"};
    for (const auto& r : results) {
        s_size.points.push_back({r[0], r[1]});
        s_pos.points.push_back({r[0], r[2]});
        s_shape.points.push_back({r[0], r[3]});
    }
    plot.add_series(s_size);
    plot.add_series(s_pos);
    plot.add_series(s_shape);
    plot.write(run.path("w_sweep.svg").string());
    run.record("w_sweep.svg");

    int failures = 0;
    if (check) {
        for (std::size_t i = 1; i < results.size(); ++i)
            for (int f = 1; f <= 3; ++f)
                if (results[i][f] > results[i - 1][f] * 1.02 &&
                    results[i][0] > results[i - 1][0]) {
                    // Median fidelity should be non-increasing along the sweep.
                    std::cerr << "[check failed] fidelity " << f << " increased from w="
                              << results[i - 1][0] << " to w=" << results[i][0] << "\n";
                    ++failures;
                }
    }

    json resolved;
    resolved["command"] = "recipe";
    resolved["recipe"] = "w-sweep";
    resolved["component"] = component;
    resolved["checkpoint"] = ckpt;
    resolved["experiment"] = to_json(cfg);
    run.finish(resolved);
    return failures ? 1 : 0;
}

int recipe_compositional(const ExperimentConfig& cfg, const std::string& ckpt,
                         const std::string& out, bool check) {
    RunDir run(out);
    LoadedModel lm = obtain_model(cfg, ckpt, run);

    std::vector<std::string> labels = phantom_labels(cfg.phantom);
    auto channel_of = [&](const std::string& name) {
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == name) return int(i);
        throw std::invalid_argument("recipe: unknown component " + name);
    };

    // 0/1/2/3-of-4 nested sets plus the singles needed for comparison.
    std::vector<std::pair<std::string, std::vector<std::string>>> sets = {
        {"0", {}},
        {"1", {"LV"}},
        {"2", {"LV", "RV"}},
        {"3", {"LV", "RV", "Ao"}},
        {"single_RV", {"RV"}},
        {"single_Ao", {"Ao"}},
    };

    std::ofstream csv(run.path("compositional.csv"));
    csv << "set,component,size_fid_median\n";
    std::map<std::string, std::map<std::string, double>> size_fid;
    for (const auto& [set_name, names] : sets) {
        SweepRow row;
        row.w = names.empty() ? 0.0 : 1.0;
        row.mass_on = row.pos_on = row.shape_on = !names.empty();
        for (const auto& n : names) row.groups.push_back({channel_of(n)});
        if (row.groups.empty()) row.groups = {{channel_of("LV")}};  // measured, not guided
        run_sweep_row(row, *lm.model, cfg, cfg.seed_count);

        // Recompute per-component size fidelity from the samples.
        for (std::size_t k = 0; k < row.groups.size(); ++k) {
            std::vector<double> per_comp;
            for (int i = 0; i < cfg.seed_count; ++i) {
                ConstraintSet cs = targets_from_phantom(cfg.phantom, std::uint64_t(i), row.groups,
                                                        true, false, false, ConstraintSet{});
                ComponentSelection sel;
                sel.groups = {row.groups[k]};
                GeometricMoments m = extract_moments(select_components(row.samples[i], sel));
                if (!m[0].empty) per_comp.push_back(std::abs(m[0].mass - cs.groups[k].mass_target));
            }
            std::string comp_name = labels[row.groups[k][0]];
            size_fid[set_name][comp_name] = RunFidelity::median(per_comp);
            csv << set_name << "," << comp_name << "," << size_fid[set_name][comp_name] << "\n";
        }
        std::cerr << "set " << set_name << " done\n";
    }
    csv.close();
    run.record("compositional.csv");

    int failures = 0;
    if (check) {
        auto expect = [&](bool cond, const std::string& what) {
            if (!cond) {
                ++failures;
                std::cerr << "[check failed] " << what << "\n";
            }
        };
        // Each constrained component stays within 2x of its single-set value.
        expect(size_fid["2"]["LV"] <= 2 * size_fid["1"]["LV"], "LV fidelity in set 2");
        expect(size_fid["3"]["LV"] <= 2 * size_fid["1"]["LV"], "LV fidelity in set 3");
        expect(size_fid["2"]["RV"] <= 2 * size_fid["single_RV"]["RV"], "RV fidelity in set 2");
        expect(size_fid["3"]["RV"] <= 2 * size_fid["single_RV"]["RV"], "RV fidelity in set 3");
        expect(size_fid["3"]["Ao"] <= 2 * size_fid["single_Ao"]["Ao"], "Ao fidelity in set 3");
    }

    json resolved;
    resolved["command"] = "recipe";
    resolved["recipe"] = "compositional";
    resolved["checkpoint"] = ckpt;
    resolved["experiment"] = to_json(cfg);
    run.finish(resolved);
    return failures ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{std::string(kToolVersion) +
                 " - geometric-moment guided diffusion over voxel label grids"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    std::string config_path, out_dir = "out", ckpt, data_dir, constraints_path;
    std::string grid_path, selection_path, mask_path, known_path, component = "Myo";
    std::string real_dir, synth_dir, obj_prefix, recipe_name, moments_out;
    int n = 16, steps = -1;
    double w = -1;
    std::uint64_t seed = std::uint64_t(-1);
    bool check = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment config JSON");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--seed", seed, "first seed");
        cmd->add_option("--steps", steps, "denoising steps");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate phantom dataset as VGF files");
    add_common(gen);
    gen->add_option("--n", n, "number of phantoms");

    CLI::App* train_cmd = app.add_subcommand("train", "train the denoiser");
    add_common(train_cmd);
    train_cmd->add_option("--data", data_dir, "directory of VGF grids (default: generated)");

    CLI::App* sample_cmd = app.add_subcommand("sample", "unconditional sampling");
    add_common(sample_cmd);
    sample_cmd->add_option("--ckpt", ckpt, "checkpoint")->required();
    sample_cmd->add_option("--n", n, "number of samples");

    CLI::App* guide_cmd = app.add_subcommand("guide", "geometrically guided sampling");
    add_common(guide_cmd);
    guide_cmd->add_option("--ckpt", ckpt, "checkpoint")->required();
    guide_cmd->add_option("--constraints", constraints_path, "constraint JSON")->required();
    guide_cmd->add_option("--n", n, "number of samples");
    guide_cmd->add_option("--w", w, "guidance weight override");

    CLI::App* inpaint_cmd = app.add_subcommand("inpaint", "mask-based geometric inpainting");
    add_common(inpaint_cmd);
    inpaint_cmd->add_option("--ckpt", ckpt, "checkpoint")->required();
    inpaint_cmd->add_option("--known", known_path, "known grid VGF")->required();
    inpaint_cmd->add_option("--mask", mask_path, "editable-region VGF (1 channel)")->required();
    inpaint_cmd->add_option("--constraints", constraints_path, "constraint JSON")->required();
    inpaint_cmd->add_option("--n", n, "number of seeds");
    inpaint_cmd->add_option("--w", w, "guidance weight override");

    CLI::App* moments_cmd = app.add_subcommand("moments", "measure moments of a grid");
    moments_cmd->add_option("--grid", grid_path, "VGF grid")->required();
    moments_cmd->add_option("--selection", selection_path, "selection JSON");
    moments_cmd->add_option("--out", moments_out, "output JSON path (default stdout)");
    moments_cmd->add_option("--ellipsoid-obj", obj_prefix, "write fitted ellipsoid OBJs");

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate synth grids against real grids");
    eval_cmd->add_option("--real", real_dir, "reference grid directory")->required();
    eval_cmd->add_option("--synth", synth_dir, "synthetic grid directory")->required();
    eval_cmd->add_option("--out", out_dir, "output directory");
    eval_cmd->add_option("--constraints", constraints_path, "constraints for fidelity");

    CLI::App* mesh_cmd = app.add_subcommand("mesh", "marching-cubes OBJ export per label");
    mesh_cmd->add_option("--grid", grid_path, "VGF grid")->required();
    mesh_cmd->add_option("--out", obj_prefix, "output OBJ path prefix")->required();

    CLI::App* recipe_cmd = app.add_subcommand("recipe", "named end-to-end experiments");
    recipe_cmd->add_option("name", recipe_name, "disentangle | w-sweep | compositional")
        ->required();
    add_common(recipe_cmd);
    recipe_cmd->add_option("--ckpt", ckpt, "reuse an existing checkpoint");
    recipe_cmd->add_option("--component", component, "constrained component (by label name)");
    recipe_cmd->add_option("--n", n, "samples per row");
    recipe_cmd->add_flag("--check", check, "exit nonzero when invariants fail");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        ExperimentConfig cfg;
        if (!config_path.empty()) cfg = load_experiment(config_path);
        if (seed != std::uint64_t(-1)) cfg.seed_start = seed;
        if (steps > 0) cfg.schedule.steps = steps;
        if (gen->count("--n") || sample_cmd->count("--n") || guide_cmd->count("--n") ||
            inpaint_cmd->count("--n") || recipe_cmd->count("--n"))
            cfg.seed_count = n;

        if (gen->parsed()) return cmd_gen_data(cfg, n, out_dir);
        if (train_cmd->parsed()) return cmd_train(cfg, data_dir, out_dir);
        if (sample_cmd->parsed())
            return cmd_sample(cfg, ckpt, n, out_dir, "", false, -1);
        if (guide_cmd->parsed())
            return cmd_sample(cfg, ckpt, n, out_dir, constraints_path, true, w);
        if (inpaint_cmd->parsed())
            return cmd_inpaint(cfg, ckpt, known_path, mask_path, constraints_path, n, out_dir, w);
        if (moments_cmd->parsed())
            return cmd_moments(grid_path, selection_path, moments_out, obj_prefix);
        if (eval_cmd->parsed()) return cmd_eval(real_dir, synth_dir, out_dir, constraints_path);
        if (mesh_cmd->parsed()) return cmd_mesh(grid_path, obj_prefix);
        if (recipe_cmd->parsed()) {
            if (recipe_name == "disentangle")
                return recipe_disentangle(cfg, ckpt, out_dir, check, component);
            if (recipe_name == "w-sweep")
                return recipe_w_sweep(cfg, ckpt, out_dir, check, component);
            if (recipe_name == "compositional")
                return recipe_compositional(cfg, ckpt, out_dir, check);
            throw std::invalid_argument("unknown recipe: " + recipe_name);
        }
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
