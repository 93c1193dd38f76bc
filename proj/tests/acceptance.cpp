// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Criteria 5-7 share a phantom-trained 32^3 model (trained here
// unless --ckpt provides one); criterion 9 drives the CLI binary given by
// --cli.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gmg/config.hpp"
#include "gmg/diffusion.hpp"
#include "gmg/metrics.hpp"
#include "gmg/vgf.hpp"
#include "oracle_helpers.hpp"

namespace fs = std::filesystem;
using namespace gmg;
using nlohmann::json;

namespace {

int g_failures = 0;
std::vector<std::string> g_lines;

void criterion(int number, const std::string& name, bool pass, const std::string& detail) {
    std::string line = std::string(pass ? "[PASS]" : "[FAIL]") + " criterion " +
                       std::to_string(number) + ": " + name + " — " + detail;
    std::cout << line << "\n" << std::flush;
    g_lines.push_back(line);
    if (!pass) ++g_failures;
}

void info(const std::string& msg) { std::cout << "       " << msg << "\n" << std::flush; }

double median(std::vector<double> v) {
    if (v.empty()) return 0;
    std::sort(v.begin(), v.end());
    return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os.precision(prec);
    os << v;
    return os.str();
}

// ---------------------------------------------------------------------------
// Criterion 1: production extract_moments vs. naive triple loop, 200 random
// grids <= 16^3, 1e-12, under a minute.
// ---------------------------------------------------------------------------
void criterion_1() {
    auto t0 = std::chrono::steady_clock::now();
    Rng rng(1001);
    double worst = 0;
    for (int trial = 0; trial < 200; ++trial) {
        Shape3 shape{rng.uniform_int(2, 16), rng.uniform_int(2, 16), rng.uniform_int(2, 16)};
        std::vector<double> field(shape.count());
        for (auto& x : field) x = rng.uniform();
        ComponentField cf;
        cf.shape = shape;
        cf.fields.push_back(field);
        GeometricMoments prod = extract_moments(cf);
        gmg_test::NaiveMoments naive = gmg_test::naive_moments(field, shape);
        worst = std::max(worst, std::abs(prod[0].mass - naive.mass));
        for (int a = 0; a < 3; ++a)
            worst = std::max(worst, std::abs(prod[0].centroid[a] - naive.centroid[a]));
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) {
                worst = std::max(worst, std::abs(prod[0].cov(a, b) - naive.cov(a, b)));
                worst = std::max(worst,
                                 std::abs(prod[0].cov_normalized(a, b) - naive.cov_normalized(a, b)));
            }
    }
    double secs = elapsed_s(t0);
    criterion(1, "moment oracle equivalence", worst <= 1e-12 && secs < 60.0,
              "max |production - naive| = " + fmt(worst, 3) + " over 200 grids, " +
                  fmt(secs, 3) + " s");
}

// ---------------------------------------------------------------------------
// Criterion 2: analytic fixtures.
// ---------------------------------------------------------------------------
void criterion_2() {
    bool pass = true;
    std::string detail;

    {
        Shape3 shape{4, 4, 4};
        ComponentField cf;
        cf.shape = shape;
        cf.fields.emplace_back(shape.count(), 1.0);
        GeometricMoments m = extract_moments(cf);
        bool ok = m[0].mass == 1.0 && m[0].centroid.x == 0.5 && m[0].centroid.y == 0.5 &&
                  m[0].centroid.z == 0.5;
        pass &= ok;
        detail += std::string("full-grid centroid ") + (ok ? "exact" : "NOT exact");
    }
    {
        bool ok = true;
        for (int n : {4, 9, 16}) {
            Shape3 shape{n, n, n};
            ComponentField cf;
            cf.shape = shape;
            cf.fields.emplace_back(shape.count(), 1.0);
            GeometricMoments m = extract_moments(cf);
            double expected = double(n + 1) / (12.0 * double(n - 1));
            for (int a = 0; a < 3; ++a)
                if (std::abs(m[0].cov(a, a) - expected) > 1e-14) ok = false;
        }
        pass &= ok;
        detail += std::string("; lattice variance ") + (ok ? "matches (N+1)/(12(N-1))" : "WRONG");
    }
    {
        Shape3 shape{48, 48, 48};
        auto occ = rasterize_ellipsoid({0.5, 0.5, 0.5}, {0.25, 0.25, 0.25}, Mat3::identity(), shape);
        ComponentField cf;
        cf.shape = shape;
        cf.fields.emplace_back(occ.begin(), occ.end());
        GeometricMoments m = extract_moments(cf);
        double worst = 0;
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
                worst = std::max(worst, std::abs(m[0].cov_normalized(a, b) -
                                                 (a == b ? 1.0 / 3.0 : 0.0)));
        pass &= worst < 0.02;
        detail += "; ball S^n max dev " + fmt(worst, 3);
    }
    {
        Shape3 shape{64, 64, 64};
        auto occ = rasterize_ellipsoid({0.5, 0.5, 0.5}, {0.30, 0.20, 0.10}, Mat3::identity(), shape);
        ComponentField cf;
        cf.shape = shape;
        cf.fields.emplace_back(occ.begin(), occ.end());
        FittedEllipsoid fit = ellipsoid_from_moments(extract_moments(cf), 0);
        double expect[3] = {0.30, 0.20, 0.10};
        double worst_rel = 0;
        for (int i = 0; i < 3; ++i)
            worst_rel = std::max(worst_rel, std::abs(fit.semi_axes[i] - expect[i]) / expect[i]);
        pass &= worst_rel < 0.05;
        detail += "; ellipsoid roundtrip max rel err " + fmt(worst_rel, 3);
    }
    criterion(2, "analytic moment fixtures", pass, detail);
}

// ---------------------------------------------------------------------------
// Criterion 3: loss gradient vs. central differences, >= 50 random cases.
// ---------------------------------------------------------------------------
void criterion_3() {
    auto t0 = std::chrono::steady_clock::now();
    Rng rng(3003);
    double worst = 0;
    int cases = 0;
    for (int trial = 0; trial < 50; ++trial) {
        int channels = rng.uniform_int(3, 5);
        LabelGrid grid = gmg_test::random_soft_grid(channels, {8, 8, 8}, rng);
        double temperature = rng.uniform(0.15, 1.0);

        ConstraintSet cs;
        int n_groups = rng.uniform_int(1, 2);
        for (int g = 0; g < n_groups; ++g) {
            MomentConstraint mc;
            mc.labels = {rng.uniform_int(1, channels - 1)};
            int extra = rng.uniform_int(1, channels - 1);
            if (extra != mc.labels[0] && rng.uniform() < 0.4) mc.labels.push_back(extra);
            mc.mass_on = rng.uniform() < 0.85;
            mc.mass_target = rng.uniform(0.0, 0.6);
            mc.centroid_on = rng.uniform() < 0.85;
            mc.centroid_target = {rng.uniform(), rng.uniform(), rng.uniform()};
            mc.shape_on = rng.uniform() < 0.85;
            Mat3 r;
            for (int t = 0; t < 9; ++t) r.m[t] = rng.uniform(-1, 1);
            Mat3 psd = r * r.transposed();
            mc.shape_target = psd * (1.0 / psd.trace());
            if (!mc.mass_on && !mc.centroid_on && !mc.shape_on) mc.mass_on = true;
            cs.groups.push_back(mc);
        }
        cs.lambda_size = rng.uniform(0.5, 2.0) * 1e3;
        cs.lambda_pos = rng.uniform(0.5, 2.0) * 1e2;
        cs.lambda_shape = rng.uniform(0.5, 2.0) * 1e2;

        auto f = [&](const std::vector<double>& x) {
            LabelGrid gx = grid;
            gx.values = x;
            LabelGrid soft = soft_binarize(gx, temperature);
            GeometricMoments m = extract_moments(select_components(soft, cs.selection()));
            return geometric_loss(m, cs).total;
        };
        std::vector<double> analytic = loss_gradient_wrt_grid(grid, cs, temperature);
        std::vector<double> fd = gmg_test::central_differences(f, grid.values, 1e-4);
        worst = std::max(worst, gmg_test::gradient_relative_error(analytic, fd));
        ++cases;
    }
    double secs = elapsed_s(t0);
    criterion(3, "loss gradient finite-difference agreement", worst < 1e-4 && secs < 300.0,
              "worst relative error " + fmt(worst, 3) + " over " + std::to_string(cases) +
                  " cases, " + fmt(secs, 3) + " s");
}

// ---------------------------------------------------------------------------
// Shared state for the trained-model criteria.
// ---------------------------------------------------------------------------
struct TrainedSetup {
    PhantomSpec spec;
    std::unique_ptr<EdmDenoiser> model;
    std::vector<std::string> labels;
    double untrained_val_loss = 0, trained_val_loss = 0;
};

constexpr std::uint64_t kValOffset = 1'000'000;

TrainedSetup prepare_model(const std::string& ckpt_path, const std::string& save_path) {
    TrainedSetup setup;
    setup.spec = default_phantom_spec(0, {32, 32, 32});
    setup.labels = phantom_labels(setup.spec);

    std::vector<LabelGrid> val;
    for (int i = 0; i < 32; ++i) val.push_back(generate_phantom(setup.spec, kValOffset + 5000 + i));

    NetConfig net_cfg;
    net_cfg.channels = setup.spec.channels();
    TrainConfig tcfg;
    tcfg.steps = 3000;
    tcfg.batch = 4;
    tcfg.lr = 1e-3;
    tcfg.seed = 0;

    {
        EdmDenoiser untrained(net_cfg);
        Rng rng = Rng::stream(tcfg.seed, 0x1417);
        untrained.net().init_weights(rng);
        setup.untrained_val_loss = validation_denoising_loss(untrained, val, 1.0, 99);
    }

    if (!ckpt_path.empty() && fs::exists(ckpt_path)) {
        std::cout << "       using checkpoint " << ckpt_path << "\n";
        setup.model = load_checkpoint(ckpt_path);
    } else {
        std::cout << "       training 32^3 model on 256 phantoms (" << tcfg.steps
                  << " steps)...\n";
        auto t0 = std::chrono::steady_clock::now();
        auto dataset = generate_phantoms(setup.spec, 256);
        setup.model = train_denoiser(dataset, tcfg, net_cfg);
        std::cout << "       training took " << fmt(elapsed_s(t0), 3) << " s\n";
        if (!save_path.empty()) save_checkpoint(save_path, *setup.model);
    }
    setup.trained_val_loss = validation_denoising_loss(*setup.model, val, 1.0, 99);
    return setup;
}

// ---------------------------------------------------------------------------
// Criterion 4: schedule endpoints, w=0 bitwise identity, closed-form
// single-point denoiser recovery.
// ---------------------------------------------------------------------------
class PointDenoiser final : public Denoiser {
  public:
    PointDenoiser(std::vector<double> point, int channels)
        : point_(std::move(point)), channels_(channels) {}
    int channels() const override { return channels_; }
    std::vector<double> denoise(const std::vector<double>&, double, Shape3,
                                std::unique_ptr<DenoiserContext>* ctx) const override {
        if (ctx) *ctx = std::make_unique<DenoiserContext>();
        return point_;
    }
    std::vector<double> vjp(DenoiserContext&, const std::vector<double>& cot) const override {
        return std::vector<double>(cot.size(), 0.0);
    }

  private:
    std::vector<double> point_;
    int channels_;
};

void criterion_4(const TrainedSetup& setup) {
    bool pass = true;
    std::string detail;

    NoiseSchedule sched = make_schedule(50, 1e-2, 80.0, 3.0);
    bool endpoints = sched.sigmas[0] == 80.0 && sched.sigmas[49] == 0.01 && sched.sigmas[50] == 0.0;
    pass &= endpoints;
    detail += std::string("sigma endpoints ") + (endpoints ? "exact" : "NOT exact");

    {
        ConstraintSet cs;
        MomentConstraint g;
        g.labels = {1};
        g.mass_on = true;
        g.mass_target = 0.02;
        cs.groups.push_back(g);
        cs.guidance_weight = 0.0;
        SampleOptions opts;
        opts.labels = setup.labels;
        NoiseSchedule s20 = make_schedule(20);
        SampleResult uncond = sample(*setup.model, s20, setup.spec.shape, 12345, opts);
        SampleResult guided = guided_sample(*setup.model, s20, cs, setup.spec.shape, 12345, opts);
        bool identical = uncond.logits == guided.logits;
        pass &= identical;
        detail += std::string("; w=0 ") + (identical ? "bit-identical" : "DIFFERS");
    }
    {
        LabelGrid point = generate_phantom(setup.spec, 777);
        PointDenoiser oracle(encode_logits(point), point.channels);
        SampleOptions opts;
        opts.labels = point.labels;
        SampleResult r = sample(oracle, make_schedule(30), point.shape, 9, opts);
        const std::int64_t n = point.voxels();
        std::int64_t same = 0;
        for (std::int64_t v = 0; v < n; ++v) {
            int ca = -1, cb = -1;
            for (int c = 0; c < point.channels; ++c) {
                if (r.hard.values[std::size_t(c) * n + v] == 1.0) ca = c;
                if (point.values[std::size_t(c) * n + v] == 1.0) cb = c;
            }
            same += ca == cb;
        }
        double agree = double(same) / double(n);
        pass &= agree >= 0.99;
        detail += "; closed-form denoiser agreement " + fmt(agree, 4);
    }
    criterion(4, "schedule and sampler correctness", pass, detail);
}

// ---------------------------------------------------------------------------
// Criteria 5-7 helpers: guided runs against per-seed validation targets.
// ---------------------------------------------------------------------------
struct GuidedRun {
    std::vector<double> size_fid, pos_fid, shape_fid;
    std::vector<LabelGrid> samples;
};

ConstraintSet validation_targets(const PhantomSpec& spec, std::uint64_t index,
                                 const std::vector<std::vector<int>>& groups, bool mass_on,
                                 bool pos_on, bool shape_on, double w) {
    LabelGrid target = generate_phantom(spec, kValOffset + index);
    ComponentSelection sel;
    sel.groups = groups;
    GeometricMoments m = extract_moments(select_components(target, sel));
    ConstraintSet cs;
    cs.guidance_weight = w;
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

GuidedRun run_guided(const TrainedSetup& setup, const std::vector<std::vector<int>>& groups,
                     bool mass_on, bool pos_on, bool shape_on, double w, int n_samples,
                     int steps) {
    GuidedRun run;
    run.samples.resize(n_samples);
    NoiseSchedule sched = make_schedule(steps);
    SampleOptions opts;
    opts.labels = setup.labels;

    std::vector<std::array<double, 3>> fid(n_samples);
    parallel_for(n_samples, [&](std::int64_t i) {
        ConstraintSet cs = validation_targets(setup.spec, std::uint64_t(i), groups, mass_on,
                                              pos_on, shape_on, w);
        SampleResult r = (w != 0.0 && (mass_on || pos_on || shape_on))
                             ? guided_sample(*setup.model, sched, cs, setup.spec.shape,
                                             std::uint64_t(i), opts)
                             : sample(*setup.model, sched, setup.spec.shape, std::uint64_t(i),
                                      opts);
        // Fidelity measures all three families against the same targets.
        for (auto& g : cs.groups) {
            g.mass_on = true;
            g.centroid_on = true;
            g.shape_on = true;
        }
        GeometricMoments m = extract_moments(select_components(r.hard, cs.selection()));
        FidelityAccumulator acc;
        acc.add(m, cs.groups);
        fid[i] = {acc.size(), acc.position(), acc.shape()};
        run.samples[i] = std::move(r.hard);
    });
    for (auto& f : fid) {
        run.size_fid.push_back(f[0]);
        run.pos_fid.push_back(f[1]);
        run.shape_fid.push_back(f[2]);
    }
    return run;
}

void criterion_5(const TrainedSetup& setup) {
    auto t0 = std::chrono::steady_clock::now();
    const int n = 50, steps = 50;
    const std::vector<std::vector<int>> lv_group{{1}};  // "LV"

    info("training oracle: validation denoising loss at sigma=1: untrained " +
         fmt(setup.untrained_val_loss, 4) + " -> trained " + fmt(setup.trained_val_loss, 4) +
         " (ratio " + fmt(setup.untrained_val_loss / setup.trained_val_loss, 3) + ", needs >= 5)");

    GuidedRun uncond = run_guided(setup, lv_group, false, false, false, 0.0, n, steps);
    info("unconditional done (" + fmt(elapsed_s(t0), 3) + " s)");
    GuidedRun mass_only = run_guided(setup, lv_group, true, false, false, 1.0, n, steps);
    info("mass-only done (" + fmt(elapsed_s(t0), 3) + " s)");
    GuidedRun pos_only = run_guided(setup, lv_group, false, true, false, 1.0, n, steps);
    info("position-only done (" + fmt(elapsed_s(t0), 3) + " s)");
    GuidedRun shape_only = run_guided(setup, lv_group, false, false, true, 1.0, n, steps);
    info("shape-only done (" + fmt(elapsed_s(t0), 3) + " s)");

    const double u_size = median(uncond.size_fid), u_pos = median(uncond.pos_fid),
                 u_shape = median(uncond.shape_fid);

    auto ratio = [](double uncond_v, double guided_v) {
        return guided_v > 0 ? uncond_v / guided_v : 1e300;
    };
    auto drift = [](double uncond_v, double guided_v) {
        return uncond_v > 0 ? std::abs(guided_v - uncond_v) / uncond_v : 0.0;
    };

    double r_size = ratio(u_size, median(mass_only.size_fid));
    double r_pos = ratio(u_pos, median(pos_only.pos_fid));
    double r_shape = ratio(u_shape, median(shape_only.shape_fid));

    double d_mass_pos = drift(u_pos, median(mass_only.pos_fid));
    double d_mass_shape = drift(u_shape, median(mass_only.shape_fid));
    double d_pos_size = drift(u_size, median(pos_only.size_fid));
    double d_pos_shape = drift(u_shape, median(pos_only.shape_fid));
    double d_shape_size = drift(u_size, median(shape_only.size_fid));
    double d_shape_pos = drift(u_pos, median(shape_only.pos_fid));

    info("median fidelities (uncond): size " + fmt(u_size * 1e4, 4) + "e-4, pos " +
         fmt(u_pos * 1e3, 4) + "e-3, shape " + fmt(u_shape * 1e3, 4) + "e-3");
    info("improvements: size x" + fmt(r_size, 3) + " (need >=5), pos x" + fmt(r_pos, 3) +
         " (need >=5), shape x" + fmt(r_shape, 3) + " (need >=2)");
    info("off-target drift: mass-run pos/shape " + fmt(d_mass_pos, 3) + "/" +
         fmt(d_mass_shape, 3) + ", pos-run size/shape " + fmt(d_pos_size, 3) + "/" +
         fmt(d_pos_shape, 3) + ", shape-run size/pos " + fmt(d_shape_size, 3) + "/" +
         fmt(d_shape_pos, 3) + " (need < 0.25)");

    bool pass = setup.untrained_val_loss / setup.trained_val_loss >= 5.0;
    pass &= r_size >= 5.0 && r_pos >= 5.0 && r_shape >= 2.0;
    pass &= d_mass_pos < 0.25 && d_mass_shape < 0.25;
    pass &= d_pos_size < 0.25 && d_pos_shape < 0.25;
    pass &= d_shape_size < 0.25 && d_shape_pos < 0.25;

    // Guidance-monotonicity property: mass-only fidelity median is
    // non-increasing over w in {0, 0.5, 1, 2} (20 seeds).
    {
        std::vector<double> medians;
        medians.push_back(median(std::vector<double>(uncond.size_fid.begin(),
                                                     uncond.size_fid.begin() + 20)));
        for (double w : {0.5, 2.0}) {
            GuidedRun r = run_guided(setup, lv_group, true, false, false, w, 20, steps);
            medians.push_back(median(r.size_fid));
        }
        // order: w=0, 0.5, 2; insert w=1 from the mass-only run
        medians.insert(medians.begin() + 2,
                       median(std::vector<double>(mass_only.size_fid.begin(),
                                                  mass_only.size_fid.begin() + 20)));
        bool mono = true;
        for (std::size_t i = 1; i < medians.size(); ++i)
            if (medians[i] > medians[i - 1] * 1.0001) mono = false;
        info("w-sweep medians (size fidelity, w=0/0.5/1/2): " + fmt(medians[0], 4) + " " +
             fmt(medians[1], 4) + " " + fmt(medians[2], 4) + " " + fmt(medians[3], 4) +
             (mono ? " (non-increasing)" : " (NOT monotonic)"));
        pass &= mono;
    }

    double secs = elapsed_s(t0);
    criterion(5, "guidance efficacy and disentanglement", pass && secs < 7200.0,
              "size x" + fmt(r_size, 3) + ", pos x" + fmt(r_pos, 3) + ", shape x" +
                  fmt(r_shape, 3) + ", max drift " +
                  fmt(std::max({d_mass_pos, d_mass_shape, d_pos_size, d_pos_shape, d_shape_size,
                                d_shape_pos}), 3) + ", " + fmt(secs, 4) + " s");
}

void criterion_6(const TrainedSetup& setup) {
    auto t0 = std::chrono::steady_clock::now();
    const int n = 32, steps = 100;  // compositional runs use 100 steps

    // Component channels: LV=1, Myo=2, RV=3, Ao=4. Nested sets 1/2/3-of-4.
    const std::vector<int> lv{1}, rv{3}, ao{4};
    std::map<std::string, std::vector<std::vector<int>>> sets = {
        {"single_LV", {lv}}, {"single_RV", {rv}}, {"single_Ao", {ao}},
        {"set2", {lv, rv}},  {"set3", {lv, rv, ao}},
    };

    // Per-component size fidelity for each configuration.
    std::map<std::string, std::map<int, double>> size_fid;
    std::map<std::string, GuidedRun> runs;
    for (const auto& [name, groups] : sets) {
        GuidedRun run = run_guided(setup, groups, true, true, true, 1.0, n, steps);
        for (std::size_t k = 0; k < groups.size(); ++k) {
            std::vector<double> fid;
            for (int i = 0; i < n; ++i) {
                ConstraintSet cs =
                    validation_targets(setup.spec, std::uint64_t(i), groups, true, false, false, 1.0);
                ComponentSelection sel;
                sel.groups = {groups[k]};
                GeometricMoments m = extract_moments(select_components(run.samples[i], sel));
                if (!m[0].empty) fid.push_back(std::abs(m[0].mass - cs.groups[k].mass_target));
            }
            size_fid[name][groups[k][0]] = median(fid);
        }
        runs[name] = std::move(run);
        info(name + " done (" + fmt(elapsed_s(t0), 3) + " s)");
    }
    GuidedRun uncond = run_guided(setup, {lv}, false, false, false, 0.0, n, steps);
    info("unconditional done (" + fmt(elapsed_s(t0), 3) + " s)");

    bool pass = true;
    auto check_ratio = [&](const std::string& multi, int ch, const std::string& single) {
        double multi_v = size_fid[multi][ch], single_v = size_fid[single][ch];
        bool ok = multi_v <= 2.0 * single_v;
        info(multi + " ch" + std::to_string(ch) + " size fid " + fmt(multi_v * 1e4, 3) +
             "e-4 vs single " + fmt(single_v * 1e4, 3) + "e-4" + (ok ? "" : "  <-- FAIL"));
        pass &= ok;
    };
    check_ratio("set2", 1, "single_LV");
    check_ratio("set2", 3, "single_RV");
    check_ratio("set3", 1, "single_LV");
    check_ratio("set3", 3, "single_RV");
    check_ratio("set3", 4, "single_Ao");

    // Unconstrained components keep their morph-report spread: per
    // unconstrained component, the median variance ratio over the four morph
    // quantities stays within 50% of the unconditional variance.
    auto morph_variances = [&](const std::vector<LabelGrid>& samples, int channel) {
        std::vector<double> mass, cx, angle, elong;
        for (const auto& g : samples) {
            auto rows = morph_report(g);
            const auto& row = rows[channel - 1];
            if (row.empty) continue;
            mass.push_back(row.mass);
            cx.push_back(row.centroid_x);
            angle.push_back(row.polar_angle);
            elong.push_back(row.capped ? 0.0 : row.elongation);
        }
        auto var = [](const std::vector<double>& v) {
            if (v.size() < 2) return 0.0;
            double mean = 0;
            for (double x : v) mean += x;
            mean /= double(v.size());
            double out = 0;
            for (double x : v) out += (x - mean) * (x - mean);
            return out / double(v.size());
        };
        return std::array<double, 4>{var(mass), var(cx), var(angle), var(elong)};
    };

    for (const auto& [name, groups] : std::map<std::string, std::vector<int>>{
             {"set2", {2, 4}}, {"set3", {2}}}) {  // unconstrained channels per set
        for (int ch : groups) {
            auto vu = morph_variances(uncond.samples, ch);
            auto vg = morph_variances(runs[name].samples, ch);
            std::vector<double> ratios;
            for (int q = 0; q < 4; ++q)
                if (vu[q] > 0) ratios.push_back(vg[q] / vu[q]);
            double med = median(ratios);
            bool ok = med >= 0.5 && med <= 1.5;
            info(name + " unconstrained ch" + std::to_string(ch) + " variance ratio median " +
                 fmt(med, 3) + (ok ? "" : "  <-- FAIL"));
            pass &= ok;
        }
    }

    criterion(6, "multi-component compositionality", pass,
              "per-component size fidelity within 2x of single runs; unconstrained variance "
              "preserved; " + fmt(elapsed_s(t0), 4) + " s");
}

void criterion_7(const TrainedSetup& setup) {
    auto t0 = std::chrono::steady_clock::now();
    LabelGrid known = generate_phantom(setup.spec, kValOffset + 4242);
    const int rv_channel = 3;
    const std::int64_t n = known.voxels();

    // Editable region: the RV bounding box dilated by 4 voxels.
    int lo[3] = {known.shape.h, known.shape.w, known.shape.d}, hi[3] = {0, 0, 0};
    {
        const double* ch = known.channel(rv_channel);
        std::int64_t v = 0;
        for (int i = 0; i < known.shape.h; ++i)
            for (int j = 0; j < known.shape.w; ++j)
                for (int k = 0; k < known.shape.d; ++k, ++v)
                    if (ch[v] == 1.0) {
                        lo[0] = std::min(lo[0], i);
                        hi[0] = std::max(hi[0], i);
                        lo[1] = std::min(lo[1], j);
                        hi[1] = std::max(hi[1], j);
                        lo[2] = std::min(lo[2], k);
                        hi[2] = std::max(hi[2], k);
                    }
    }
    std::vector<std::uint8_t> editable(n, 0);
    {
        std::int64_t v = 0;
        const int d = 4;
        for (int i = 0; i < known.shape.h; ++i)
            for (int j = 0; j < known.shape.w; ++j)
                for (int k = 0; k < known.shape.d; ++k, ++v)
                    editable[v] = i >= lo[0] - d && i <= hi[0] + d && j >= lo[1] - d &&
                                  j <= hi[1] + d && k >= lo[2] - d && k <= hi[2] + d;
    }

    GeometricMoments known_m = extract_moments(
        select_components(known, ComponentSelection{{{rv_channel}}}));
    const double base_mass = known_m[0].mass;

    NoiseSchedule sched = make_schedule(50);
    SampleOptions opts;
    opts.labels = known.labels;

    bool pass = true;
    for (double scale : {2.0, 0.5}) {
        ConstraintSet cs;
        MomentConstraint g;
        g.labels = {rv_channel};
        g.mass_on = true;
        g.mass_target = base_mass * scale;
        cs.groups.push_back(g);
        cs.guidance_weight = 1.0;

        std::vector<double> achieved(10);
        std::vector<int> outside_mismatches(10, 0);
        parallel_for(10, [&](std::int64_t s) {
            SampleResult r = inpaint(*setup.model, sched, cs, known, editable, 9000 + s, opts);
            GeometricMoments m = extract_moments(
                select_components(r.hard, ComponentSelection{{{rv_channel}}}));
            achieved[s] = m[0].empty ? 0.0 : m[0].mass;
            int mism = 0;
            for (int c = 0; c < known.channels; ++c)
                for (std::int64_t v = 0; v < n; ++v)
                    if (!editable[v] &&
                        r.hard.values[std::size_t(c) * n + v] != known.values[std::size_t(c) * n + v])
                        ++mism;
            outside_mismatches[s] = mism;
        });

        int total_mismatch = 0;
        for (int m : outside_mismatches) total_mismatch += m;
        double med = median(achieved);
        double target = base_mass * scale;
        double rel = std::abs(med - target) / target;
        bool ok = total_mismatch == 0 && rel <= 0.15;
        info("target x" + fmt(scale, 3) + ": base " + fmt(base_mass, 4) + " target " +
             fmt(target, 4) + " achieved median " + fmt(med, 4) + " rel err " + fmt(rel, 3) +
             ", outside mismatches " + std::to_string(total_mismatch) + (ok ? "" : "  <-- FAIL"));
        pass &= ok;
    }
    criterion(7, "mask-based geometric inpainting", pass,
              "frozen region exact, mass x2 and x0.5 within 15%; " + fmt(elapsed_s(t0), 4) + " s");
}

void criterion_8(const TrainedSetup& setup) {
    auto t0 = std::chrono::steady_clock::now();
    bool pass = true;
    std::string detail;

    // Morph-space identities on 64 phantoms.
    std::vector<std::vector<double>> vecs;
    for (int i = 0; i < 64; ++i)
        vecs.push_back(morph_vector(generate_phantom(setup.spec, kValOffset + 2000 + i)));
    ZScore z = ZScore::fit(vecs);
    for (auto& v : vecs) v = z.apply(v);
    double fd_same = frechet_distance(vecs, vecs).value;
    auto [p_same, r_same] = precision_recall(vecs, vecs, 5);
    pass &= std::abs(fd_same) < 1e-6 && p_same == 1.0 && r_same == 1.0;
    detail += "FD(A,A)=" + fmt(fd_same, 3) + ", P=R=" + fmt(p_same, 3);

    // Sinkhorn identities.
    {
        LabelGrid g0 = generate_phantom(setup.spec, kValOffset + 3000);
        LabelGrid g1 = generate_phantom(setup.spec, kValOffset + 3001);
        PointCloud a = label_pointcloud(g0, 1), b = label_pointcloud(g1, 1);
        SinkhornResult same = sinkhorn_divergence(a, a);
        SinkhornResult ab = sinkhorn_divergence(a, b);
        SinkhornResult ba = sinkhorn_divergence(b, a);
        pass &= std::abs(same.value) < 1e-6;
        pass &= std::abs(ab.value - ba.value) < 1e-9;
        detail += "; sinkhorn self " + fmt(same.value, 3) + ", asym " +
                  fmt(std::abs(ab.value - ba.value), 3);
    }

    // 1-NNA of two i.i.d. halves over >= 100 clouds, plus MMD/COV ranges.
    {
        std::vector<PointCloud> half_a, half_b;
        for (int i = 0; i < 112; ++i) {
            LabelGrid g = generate_phantom(setup.spec, kValOffset + 8000 + i);
            PointCloud pc = label_pointcloud(g, 1);
            (i % 2 == 0 ? half_a : half_b).push_back(std::move(pc));
        }
        PointcloudMetrics pm = pointcloud_metrics(half_a, half_b);
        bool nna_ok = pm.one_nna >= 0.35 && pm.one_nna <= 0.65;
        bool ranges_ok = pm.mmd >= 0.0 && pm.coverage > 0.0 && pm.coverage <= 1.0;
        pass &= nna_ok && ranges_ok;
        detail += "; iid-half 1-NNA " + fmt(pm.one_nna, 3) + " (" +
                  std::to_string(half_a.size() + half_b.size()) + " clouds), MMD " +
                  fmt(pm.mmd, 3) + ", COV " + fmt(pm.coverage, 3);
    }

    criterion(8, "metrics self-consistency", pass, detail + "; " + fmt(elapsed_s(t0), 4) + " s");
}

// ---------------------------------------------------------------------------
// Criterion 9: CLI recipe determinism — rerun from the resolved config and
// compare output hashes.
// ---------------------------------------------------------------------------
int run_cli(const std::string& cli, const std::string& args) {
    std::string cmd = cli + " " + args + " >/dev/null 2>&1";
    return std::system(cmd.c_str());
}

json read_json_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    return json::parse(in);
}

void criterion_9(const std::string& cli, const fs::path& work) {
    auto t0 = std::chrono::steady_clock::now();
    if (cli.empty()) {
        criterion(9, "CLI recipe determinism", false, "no --cli path provided");
        return;
    }

    // Tiny but complete experiment config.
    json cfg;
    cfg["phantom"] = to_json(default_phantom_spec(0, {32, 32, 32}));
    cfg["training"] = {{"steps", 30}, {"batch", 2}, {"lr", 1e-3}, {"seed", 0}};
    cfg["schedule"] = {{"steps", 8}, {"sigma_min", 1e-2}, {"sigma_max", 80.0}, {"rho", 3.0}};
    cfg["sampling"] = {{"mode", "ode"}, {"gradient_path", "full"}};
    cfg["net"] = {{"base", 8}, {"mid", 16}, {"head", 8}, {"emb", 16}};
    cfg["w_sweep"] = {0.0, 1.0};
    cfg["seeds"] = {{"start", 0}, {"count", 2}};
    fs::create_directories(work);
    std::ofstream(work / "tiny.json") << cfg.dump(2);

    bool pass = true;
    std::string detail;
    for (const std::string recipe : {"disentangle", "w-sweep", "compositional"}) {
        fs::path out1 = work / (recipe + "_run1");
        fs::path out2 = work / (recipe + "_run2");
        fs::remove_all(out1);
        fs::remove_all(out2);

        std::string base_args = "recipe " + recipe + " --component LV --n 2";
        int rc1 = run_cli(cli, base_args + " --config " + (work / "tiny.json").string() +
                                   " --out " + out1.string());
        // Rerun strictly from the resolved config written by the first run.
        int rc2 = run_cli(cli, base_args + " --config " +
                                   (out1 / "resolved_config.json").string() + " --out " +
                                   out2.string());
        bool ok = rc1 == 0 && rc2 == 0;
        if (ok) {
            json m1 = read_json_file(out1 / "manifest.json");
            json m2 = read_json_file(out2 / "manifest.json");
            ok = m1["files"] == m2["files"] && !m1["files"].empty();
        }
        detail += recipe + (ok ? " ok" : " MISMATCH") + "; ";
        pass &= ok;
    }
    criterion(9, "CLI recipe determinism", pass, detail + fmt(elapsed_s(t0), 4) + " s");
}

}  // namespace

int main(int argc, char** argv) {
    std::string cli_path, ckpt_path, save_ckpt;
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        std::string a = argv[i];
        if (a == "--cli" && i + 1 < argc) cli_path = argv[++i];
        else if (a == "--ckpt" && i + 1 < argc) ckpt_path = argv[++i];
        else if (a == "--save-ckpt" && i + 1 < argc) save_ckpt = argv[++i];
        else if (a == "--only" && i + 1 < argc) only = std::atoi(argv[++i]);
    }

    fs::path work = fs::temp_directory_path() / "gmg_acceptance";
    fs::create_directories(work);

    auto want = [&](int n) { return only == 0 || only == n; };
    auto t0 = std::chrono::steady_clock::now();

    if (want(1)) criterion_1();
    if (want(2)) criterion_2();
    if (want(3)) criterion_3();

    if (want(4) || want(5) || want(6) || want(7) || want(8)) {
        TrainedSetup setup = prepare_model(ckpt_path, save_ckpt);
        if (want(4)) criterion_4(setup);
        if (want(5)) criterion_5(setup);
        if (want(6)) criterion_6(setup);
        if (want(7)) criterion_7(setup);
        if (want(8)) criterion_8(setup);
    }
    if (want(9)) criterion_9(cli_path, work / "cli");

    std::cout << "----------------------------------------\n";
    for (const auto& line : g_lines) std::cout << line << "\n";
    std::cout << (g_failures == 0 ? "ALL CRITERIA PASSED" : "FAILURES: " + std::to_string(g_failures))
              << " (total " << fmt(elapsed_s(t0), 4) << " s)\n";
    return g_failures == 0 ? 0 : 1;
}
