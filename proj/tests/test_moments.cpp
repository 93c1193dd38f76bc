#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gmg/moments.hpp"
#include "gmg/phantom.hpp"
#include "oracle_helpers.hpp"

using namespace gmg;

namespace {

ComponentField single_field(std::vector<double> f, Shape3 shape) {
    ComponentField cf;
    cf.shape = shape;
    cf.fields.push_back(std::move(f));
    return cf;
}

ComponentField occupancy_field(const std::vector<std::uint8_t>& occ, Shape3 shape) {
    std::vector<double> f(occ.begin(), occ.end());
    return single_field(std::move(f), shape);
}

}  // namespace

TEST_CASE("full grid: mass 1, centroid at the exact center") {
    Shape3 shape{4, 4, 4};
    ComponentField cf = single_field(std::vector<double>(shape.count(), 1.0), shape);
    GeometricMoments m = extract_moments(cf);
    CHECK(m[0].mass == 1.0);
    CHECK(m[0].centroid.x == 0.5);
    CHECK(m[0].centroid.y == 0.5);
    CHECK(m[0].centroid.z == 0.5);
}

TEST_CASE("full grid: lattice variance matches the closed form (N+1)/(12(N-1))") {
    for (int n : {2, 4, 7, 16}) {
        Shape3 shape{n, n, n};
        ComponentField cf = single_field(std::vector<double>(shape.count(), 1.0), shape);
        GeometricMoments m = extract_moments(cf);
        double expected = double(n + 1) / (12.0 * double(n - 1));
        for (int a = 0; a < 3; ++a) CHECK(m[0].cov(a, a) == doctest::Approx(expected).epsilon(1e-12));
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
                if (a != b) CHECK(std::abs(m[0].cov(a, b)) < 1e-12);
    }
    // N=4 specifically: 5/36.
    Shape3 shape{4, 4, 4};
    ComponentField cf = single_field(std::vector<double>(shape.count(), 1.0), shape);
    GeometricMoments m = extract_moments(cf);
    CHECK(m[0].cov(0, 0) == doctest::Approx(5.0 / 36.0).epsilon(1e-14));
}

TEST_CASE("rasterized ball: normalized covariance near identity/3") {
    Shape3 shape{48, 48, 48};
    auto occ = rasterize_ellipsoid({0.5, 0.5, 0.5}, {0.25, 0.25, 0.25}, Mat3::identity(), shape);
    GeometricMoments m = extract_moments(occupancy_field(occ, shape));
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
            double expect = a == b ? 1.0 / 3.0 : 0.0;
            CHECK(std::abs(m[0].cov_normalized(a, b) - expect) < 0.02);
        }
    CHECK(std::abs(m[0].cov_normalized.trace() - 1.0) < 1e-9);
}

TEST_CASE("production moments match the naive triple-loop oracle to 1e-12") {
    Rng rng(101);
    for (int trial = 0; trial < 25; ++trial) {
        Shape3 shape{rng.uniform_int(2, 16), rng.uniform_int(2, 16), rng.uniform_int(2, 16)};
        std::vector<double> f(shape.count());
        for (auto& x : f) x = rng.uniform();
        GeometricMoments prod = extract_moments(single_field(f, shape));
        gmg_test::NaiveMoments naive = gmg_test::naive_moments(f, shape);
        CHECK(std::abs(prod[0].mass - naive.mass) <= 1e-12);
        for (int a = 0; a < 3; ++a)
            CHECK(std::abs(prod[0].centroid[a] - naive.centroid[a]) <= 1e-12);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) {
                CHECK(std::abs(prod[0].cov(a, b) - naive.cov(a, b)) <= 1e-12);
                CHECK(std::abs(prod[0].cov_normalized(a, b) - naive.cov_normalized(a, b)) <= 1e-12);
            }
    }
}

TEST_CASE("covariance invariants: symmetric, PSD, unit trace when non-empty") {
    Rng rng(55);
    for (int trial = 0; trial < 10; ++trial) {
        Shape3 shape{8, 8, 8};
        std::vector<double> f(shape.count());
        for (auto& x : f) x = rng.uniform();
        GeometricMoments m = extract_moments(single_field(f, shape));
        REQUIRE(!m[0].empty);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) CHECK(std::abs(m[0].cov(a, b) - m[0].cov(b, a)) < 1e-9);
        SymEig3 eig = eigen_sym3(m[0].cov);
        CHECK(eig.eigenvalues[2] > -1e-9);
        CHECK(std::abs(m[0].cov_normalized.trace() - 1.0) < 1e-9);
        CHECK(m[0].mass >= 0.0);
        CHECK(m[0].mass <= 1.0);
        for (int a = 0; a < 3; ++a) {
            CHECK(m[0].centroid[a] >= 0.0);
            CHECK(m[0].centroid[a] <= 1.0);
        }
    }
}

TEST_CASE("empty component is flagged instead of NaN") {
    Shape3 shape{8, 8, 8};
    std::vector<double> f(shape.count(), 0.0);
    f[3] = 1e-5;  // mass 2e-8 < 1e-6 threshold
    GeometricMoments m = extract_moments(single_field(f, shape));
    CHECK(m[0].empty);
    CHECK(std::isfinite(m[0].centroid.x));
    CHECK(std::isfinite(m[0].cov(0, 0)));
}

TEST_CASE("translation equivariance: centroid shifts, covariance fixed") {
    Shape3 shape{16, 16, 16};
    auto occ = rasterize_ellipsoid({0.35, 0.35, 0.35}, {0.2, 0.15, 0.1}, Mat3::identity(), shape);
    // Shift by (3,2,1) voxels; the pattern stays inside, no clipping.
    std::vector<double> shifted(shape.count(), 0.0);
    for (int i = 0; i < shape.h - 3; ++i)
        for (int j = 0; j < shape.w - 2; ++j)
            for (int k = 0; k < shape.d - 1; ++k)
                shifted[voxel_index(shape, i + 3, j + 2, k + 1)] =
                    occ[voxel_index(shape, i, j, k)];

    GeometricMoments m0 = extract_moments(occupancy_field(occ, shape));
    GeometricMoments m1 = extract_moments(single_field(shifted, shape));
    CHECK(std::abs((m1[0].centroid.x - m0[0].centroid.x) - 3.0 / 15.0) < 1e-9);
    CHECK(std::abs((m1[0].centroid.y - m0[0].centroid.y) - 2.0 / 15.0) < 1e-9);
    CHECK(std::abs((m1[0].centroid.z - m0[0].centroid.z) - 1.0 / 15.0) < 1e-9);
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) CHECK(std::abs(m1[0].cov(a, b) - m0[0].cov(a, b)) < 1e-9);
}

TEST_CASE("scale invariance of the normalized covariance") {
    Shape3 shape{48, 48, 48};
    Vec3 semi{0.36, 0.26, 0.18};
    auto base = rasterize_ellipsoid({0.5, 0.5, 0.5}, semi, Mat3::identity(), shape);
    GeometricMoments m0 = extract_moments(occupancy_field(base, shape));
    for (double s : {0.5, 0.75}) {
        auto scaled = rasterize_ellipsoid({0.5, 0.5, 0.5}, semi * s, Mat3::identity(), shape);
        GeometricMoments m1 = extract_moments(occupancy_field(scaled, shape));
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
                CHECK(std::abs(m1[0].cov_normalized(a, b) - m0[0].cov_normalized(a, b)) < 0.02);
        double ratio = m1[0].cov.trace() / m0[0].cov.trace();
        CHECK(ratio == doctest::Approx(s * s).epsilon(0.06));
    }
}

TEST_CASE("moment_gradients: mass-only cotangent gives a constant field") {
    Rng rng(77);
    Shape3 shape{6, 5, 4};
    std::vector<double> f(shape.count());
    for (auto& x : f) x = rng.uniform();
    std::vector<MomentCotangents> cots(1);
    cots[0].d_mass = 2.5;
    auto grads = moment_gradients(single_field(f, shape), cots);
    double expect = 2.5 / double(shape.count());
    for (double g : grads[0]) CHECK(g == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("moment_gradients: zero cotangents give a zero field") {
    Rng rng(78);
    Shape3 shape{5, 5, 5};
    std::vector<double> f(shape.count());
    for (auto& x : f) x = rng.uniform();
    std::vector<MomentCotangents> cots(1);
    auto grads = moment_gradients(single_field(f, shape), cots);
    for (double g : grads[0]) CHECK(g == 0.0);
}

TEST_CASE("moment_gradients match central finite differences") {
    Rng rng(79);
    for (int trial = 0; trial < 8; ++trial) {
        Shape3 shape{8, 8, 8};
        std::vector<double> f(shape.count());
        for (auto& x : f) x = rng.uniform(0.05, 1.0);

        MomentCotangents cot;
        cot.d_mass = rng.uniform(-1, 1);
        for (int a = 0; a < 3; ++a) cot.d_centroid[a] = rng.uniform(-1, 1);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) {
                cot.d_cov(a, b) = rng.uniform(-1, 1);
                cot.d_cov_normalized(a, b) = rng.uniform(-1, 1);
            }

        auto scalar = [&](const std::vector<double>& x) {
            GeometricMoments m = extract_moments(single_field(x, shape));
            double acc = cot.d_mass * m[0].mass;
            for (int a = 0; a < 3; ++a) acc += cot.d_centroid[a] * m[0].centroid[a];
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b) {
                    acc += cot.d_cov(a, b) * m[0].cov(a, b);
                    acc += cot.d_cov_normalized(a, b) * m[0].cov_normalized(a, b);
                }
            return acc;
        };

        std::vector<MomentCotangents> cots{cot};
        auto analytic = moment_gradients(single_field(f, shape), cots);
        auto fd = gmg_test::central_differences(scalar, f, 1e-4);
        CHECK(gmg_test::gradient_relative_error(analytic[0], fd) < 1e-4);
    }
}

TEST_CASE("moment_gradients reject position cotangents on empty components") {
    Shape3 shape{8, 8, 8};
    std::vector<double> f(shape.count(), 0.0);
    std::vector<MomentCotangents> cots(1);
    cots[0].d_centroid = {1, 0, 0};
    CHECK_THROWS_AS(moment_gradients(single_field(f, shape), cots), std::invalid_argument);
    // Mass cotangent alone is fine.
    cots[0] = MomentCotangents{};
    cots[0].d_mass = 1.0;
    auto g = moment_gradients(single_field(f, shape), cots);
    CHECK(g[0][0] == doctest::Approx(1.0 / shape.count()));
}

TEST_CASE("ellipsoid roundtrip: rasterize, measure, fit") {
    Shape3 shape{64, 64, 64};
    Vec3 semi{0.30, 0.20, 0.10};
    auto occ = rasterize_ellipsoid({0.5, 0.5, 0.5}, semi, Mat3::identity(), shape);
    GeometricMoments m = extract_moments(occupancy_field(occ, shape));
    FittedEllipsoid fit = ellipsoid_from_moments(m, 0);
    CHECK(fit.semi_axes.x == doctest::Approx(0.30).epsilon(0.05));
    CHECK(fit.semi_axes.y == doctest::Approx(0.20).epsilon(0.05));
    CHECK(fit.semi_axes.z == doctest::Approx(0.10).epsilon(0.05));
    CHECK(is_orthonormal(fit.rotation, 1e-9));
    CHECK((fit.center - Vec3{0.5, 0.5, 0.5}).norm() < 1e-3);
}

TEST_CASE("ellipsoid roundtrip with rotation recovers the axes") {
    Shape3 shape{64, 64, 64};
    Mat3 rot = axis_angle_rotation({1, 2, 0.5}, 0.9);
    auto occ = rasterize_ellipsoid({0.5, 0.5, 0.5}, {0.30, 0.20, 0.10}, rot, shape);
    GeometricMoments m = extract_moments(occupancy_field(occ, shape));
    FittedEllipsoid fit = ellipsoid_from_moments(m, 0);
    CHECK(fit.semi_axes.x == doctest::Approx(0.30).epsilon(0.05));
    CHECK(fit.semi_axes.y == doctest::Approx(0.20).epsilon(0.05));
    CHECK(fit.semi_axes.z == doctest::Approx(0.10).epsilon(0.05));
    // Principal axis should align with the rotated x axis (up to sign).
    Vec3 want = rot * Vec3{1, 0, 0};
    double align = std::abs(fit.rotation.col(0).dot(want));
    CHECK(align > 0.99);
}

TEST_CASE("ball fit: all semi-axes equal within 2%") {
    Shape3 shape{48, 48, 48};
    auto occ = rasterize_ellipsoid({0.5, 0.5, 0.5}, {0.25, 0.25, 0.25}, Mat3::identity(), shape);
    GeometricMoments m = extract_moments(occupancy_field(occ, shape));
    FittedEllipsoid fit = ellipsoid_from_moments(m, 0);
    CHECK(fit.semi_axes.x / fit.semi_axes.z < 1.02);
    CHECK(fit.semi_axes.x / fit.semi_axes.z > 0.98);
}
