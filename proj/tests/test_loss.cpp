#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gmg/loss.hpp"
#include "gmg/phantom.hpp"
#include "oracle_helpers.hpp"

using namespace gmg;

namespace {

// A constraint on channels {1} of a 3-channel grid with all moments active,
// targets taken from the measured moments of `grid`.
ConstraintSet matched_constraints(const LabelGrid& grid, double temperature) {
    ConstraintSet cs;
    MomentConstraint g;
    g.labels = {1};
    LabelGrid soft = soft_binarize(grid, temperature);
    GeometricMoments m = extract_moments(select_components(soft, ComponentSelection{{{1}}}));
    g.mass_on = true;
    g.mass_target = m[0].mass;
    g.centroid_on = true;
    g.centroid_target = m[0].centroid;
    g.shape_on = true;
    g.shape_target = m[0].cov_normalized;
    cs.groups.push_back(g);
    return cs;
}

ConstraintSet random_constraints(int channels, Rng& rng) {
    ConstraintSet cs;
    int n_groups = rng.uniform_int(1, 2);
    for (int i = 0; i < n_groups; ++i) {
        MomentConstraint g;
        int a = rng.uniform_int(1, channels - 1);
        g.labels = {a};
        int b = rng.uniform_int(1, channels - 1);
        if (b != a && rng.uniform() < 0.5) g.labels.push_back(b);
        g.mass_on = rng.uniform() < 0.8;
        g.mass_target = rng.uniform(0.0, 0.6);
        g.centroid_on = rng.uniform() < 0.8;
        g.centroid_target = {rng.uniform(), rng.uniform(), rng.uniform()};
        g.shape_on = rng.uniform() < 0.8;
        // Random PSD matrix with unit trace.
        Mat3 r;
        for (int t = 0; t < 9; ++t) r.m[t] = rng.uniform(-1, 1);
        Mat3 psd = r * r.transposed();
        g.shape_target = psd * (1.0 / psd.trace());
        if (!g.mass_on && !g.centroid_on && !g.shape_on) g.mass_on = true;
        cs.groups.push_back(g);
    }
    cs.lambda_size = rng.uniform(0.5, 2.0) * 1e3;
    cs.lambda_pos = rng.uniform(0.5, 2.0) * 1e2;
    cs.lambda_shape = rng.uniform(0.5, 2.0) * 1e2;
    return cs;
}

}  // namespace

TEST_CASE("loss is zero when measured equals target") {
    Rng rng(1);
    LabelGrid g = gmg_test::random_soft_grid(3, {6, 6, 6}, rng);
    ConstraintSet cs = matched_constraints(g, 0.5);
    LabelGrid soft = soft_binarize(g, 0.5);
    GeometricMoments m = extract_moments(select_components(soft, cs.selection()));
    LossBreakdown bd = geometric_loss(m, cs);
    CHECK(bd.total < 1e-20);
    CHECK(bd.size_term < 1e-20);
    CHECK(bd.pos_term < 1e-20);
    CHECK(bd.shape_term < 1e-20);
}

TEST_CASE("mass-only loss: paper-scale weight factor arithmetic") {
    // |M - target| = 0.01 with lambda_size = 1e7 gives 1e7 * 1e-4 = 1e3.
    GeometricMoments m;
    m.shape = {8, 8, 8};
    ComponentMoments cm;
    cm.mass = 0.11;
    cm.raw_mass = 0.11 * 512;
    m.components.push_back(cm);

    ConstraintSet cs;
    MomentConstraint g;
    g.labels = {1};
    g.mass_on = true;
    g.mass_target = 0.10;
    cs.groups.push_back(g);
    cs.lambda_size = 1e7;

    LossBreakdown bd = geometric_loss(m, cs);
    CHECK(bd.size_term == doctest::Approx(1e-4).epsilon(1e-9));
    CHECK(bd.total == doctest::Approx(1e3).epsilon(1e-9));
}

TEST_CASE("all weights zero: zero loss and zero gradient") {
    Rng rng(2);
    LabelGrid g = gmg_test::random_soft_grid(3, {5, 5, 5}, rng);
    ConstraintSet cs = matched_constraints(g, 0.3);
    cs.groups[0].mass_target += 0.1;  // off-target on purpose
    cs.lambda_size = cs.lambda_pos = cs.lambda_shape = 0.0;

    LossBreakdown bd;
    std::vector<double> grad = loss_gradient_wrt_grid(g, cs, 0.3, &bd);
    CHECK(bd.total == 0.0);
    for (double x : grad) CHECK(x == 0.0);
}

TEST_CASE("loss gradient matches central finite differences") {
    Rng rng(42);
    int passes = 0;
    for (int trial = 0; trial < 10; ++trial) {
        int channels = rng.uniform_int(3, 4);
        LabelGrid g = gmg_test::random_soft_grid(channels, {8, 8, 8}, rng);
        ConstraintSet cs = random_constraints(channels, rng);
        double temperature = rng.uniform(0.15, 1.0);

        auto f = [&](const std::vector<double>& x) {
            LabelGrid gx = g;
            gx.values = x;
            LabelGrid soft = soft_binarize(gx, temperature);
            GeometricMoments m = extract_moments(select_components(soft, cs.selection()));
            return geometric_loss(m, cs).total;
        };

        std::vector<double> analytic = loss_gradient_wrt_grid(g, cs, temperature);
        std::vector<double> fd = gmg_test::central_differences(f, g.values, 1e-4);
        double err = gmg_test::gradient_relative_error(analytic, fd);
        CHECK(err < 1e-4);
        if (err < 1e-4) ++passes;
    }
    CHECK(passes == 10);
}

TEST_CASE("mass deficit pushes selected logits up") {
    Rng rng(9);
    LabelGrid g = gmg_test::random_soft_grid(3, {8, 8, 8}, rng);
    ConstraintSet cs;
    MomentConstraint c;
    c.labels = {1};
    c.mass_on = true;
    cs.groups.push_back(c);
    cs.lambda_pos = cs.lambda_shape = 0;

    LabelGrid soft = soft_binarize(g, 0.5);
    GeometricMoments m = extract_moments(select_components(soft, cs.selection()));
    cs.groups[0].mass_target = m[0].mass + 0.2;  // measured below target

    std::vector<double> grad = loss_gradient_wrt_grid(g, cs, 0.5);
    const std::int64_t n = g.voxels();
    double mean_selected = 0;
    for (std::int64_t v = 0; v < n; ++v) mean_selected += grad[std::size_t(1) * n + v];
    mean_selected /= double(n);
    CHECK(mean_selected < 0.0);  // descent direction raises the channel
}

TEST_CASE("term activation is linear: single-term equals full loss with others zeroed") {
    Rng rng(17);
    LabelGrid g = gmg_test::random_soft_grid(3, {6, 6, 6}, rng);
    ConstraintSet full = matched_constraints(g, 0.4);
    full.groups[0].mass_target += 0.05;
    full.groups[0].centroid_target.x += 0.1;

    ConstraintSet size_only = full;
    size_only.lambda_pos = 0;
    size_only.lambda_shape = 0;

    ConstraintSet zeroed = full;
    zeroed.lambda_pos = 0;
    zeroed.lambda_shape = 0;
    zeroed.groups[0].centroid_on = true;  // flags stay on; weights gate the terms

    std::vector<double> a = loss_gradient_wrt_grid(g, size_only, 0.4);
    std::vector<double> b = loss_gradient_wrt_grid(g, zeroed, 0.4);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);

    // And the weighted sum is linear in the three terms.
    LabelGrid soft = soft_binarize(g, 0.4);
    GeometricMoments m = extract_moments(select_components(soft, full.selection()));
    LossBreakdown bd = geometric_loss(m, full);
    CHECK(bd.total == doctest::Approx(full.lambda_size * bd.size_term +
                                      full.lambda_pos * bd.pos_term +
                                      full.lambda_shape * bd.shape_term));
}

TEST_CASE("shape loss gradient is orthogonal to uniform occupancy rescaling") {
    Shape3 shape{32, 32, 32};
    auto occ = rasterize_ellipsoid({0.5, 0.5, 0.5}, {0.25, 0.18, 0.12}, Mat3::identity(), shape);
    ComponentField cf;
    cf.shape = shape;
    cf.fields.emplace_back(occ.begin(), occ.end());
    GeometricMoments m = extract_moments(cf);

    // Shape-only cotangent against an off-target normalized covariance.
    std::vector<MomentCotangents> cots(1);
    Mat3 target = Mat3::identity() * (1.0 / 3.0);
    cots[0].d_cov_normalized = (m[0].cov_normalized - target) * 2.0;
    auto grads = moment_gradients(cf, cots);

    // Directional derivative along the occupancy itself: d/ds L(s*field) at s=1.
    double dir = 0;
    for (std::size_t v = 0; v < cf.fields[0].size(); ++v) dir += grads[0][v] * cf.fields[0][v];
    CHECK(std::abs(dir) < 1e-6);
}

TEST_CASE("constraint validation") {
    ConstraintSet cs;
    MomentConstraint g;
    g.labels = {1};
    g.shape_on = true;
    g.shape_target = Mat3::identity();  // trace 3, invalid
    cs.groups.push_back(g);
    CHECK_THROWS_AS(cs.validate(3), std::invalid_argument);

    cs.groups[0].shape_target = Mat3::identity() * (1.0 / 3.0);
    CHECK_NOTHROW(cs.validate(3));

    cs.groups[0].labels = {0};  // background
    CHECK_THROWS_AS(cs.validate(3), std::invalid_argument);

    cs.groups[0].labels = {1};
    cs.groups[0].shape_on = false;
    cs.groups[0].mass_on = false;
    cs.guidance_weight = 1.0;
    CHECK_THROWS_AS(cs.validate(3), std::invalid_argument);  // w > 0, nothing active
}

TEST_CASE("empty component: gated from position/shape, kept in size") {
    Shape3 shape{8, 8, 8};
    LabelGrid g(3, shape);
    // Channel 1 empty (never wins the softmax); channel 2 has support.
    const std::int64_t n = g.voxels();
    for (std::int64_t v = 0; v < n; ++v) {
        g.values[v] = 4.0;  // background dominates
        g.values[std::size_t(1) * n + v] = -4.0;
        g.values[std::size_t(2) * n + v] = v < n / 4 ? 8.0 : -4.0;
    }

    ConstraintSet cs;
    for (int c : {1, 2}) {
        MomentConstraint mc;
        mc.labels = {c};
        mc.mass_on = true;
        mc.mass_target = 0.3;
        mc.centroid_on = true;
        mc.centroid_target = {0.5, 0.5, 0.5};
        cs.groups.push_back(mc);
    }

    LossBreakdown bd;
    std::vector<double> grad = loss_gradient_wrt_grid(g, cs, 0.01, &bd);
    CHECK(bd.gated.size() == 2);
    CHECK(bd.gated[0]);
    CHECK(!bd.gated[1]);
    CHECK(bd.gated_count == 1);
    CHECK(bd.size_term > 0.0);  // empty component still contributes to size
    for (double x : grad) CHECK(std::isfinite(x));
}
