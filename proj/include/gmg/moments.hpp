#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "gmg/grid.hpp"
#include "gmg/linalg.hpp"

namespace gmg {

// Mass below this volume fraction marks a component empty; centroid and
// covariance are then reported as zeros with the flag set, and downstream
// position/shape losses are gated off.
inline constexpr double kEmptyMassThreshold = 1e-6;

// Additive stabilizer for mass denominators on the gradient path, in volume
// fraction units. The forward moments stay exact.
inline constexpr double kMassStabilizer = 1e-8;

struct ComponentMoments {
    double mass = 0.0;       // volume fraction: raw_mass / (H*W*D)
    double raw_mass = 0.0;   // sum of occupancies
    Vec3 centroid;           // normalized coordinates
    Mat3 cov;                // second central moment
    Mat3 cov_normalized;     // cov / tr(cov), trace 1
    bool empty = false;
};

struct GeometricMoments {
    Shape3 shape;
    std::vector<ComponentMoments> components;

    const ComponentMoments& operator[](std::size_t k) const { return components[k]; }
    std::size_t size() const { return components.size(); }
};

namespace detail {

struct RawSums {
    double s0 = 0;          // sum w
    double s1[3] = {};      // sum w*p
    double s2[6] = {};      // sum w*p_a*p_b, upper triangle xx,xy,xz,yy,yz,zz
};

// Sums are accumulated against raw integer indices and normalized by the
// axis spans afterwards; integer-valued partial sums keep the uniform-grid
// fixtures (centroid exactly 0.5) exact in double precision.
inline RawSums accumulate_sums(const std::vector<double>& field, const Shape3& shape) {
    RawSums r;
    std::int64_t v = 0;
    for (int i = 0; i < shape.h; ++i) {
        double px = double(i);
        for (int j = 0; j < shape.w; ++j) {
            double py = double(j);
            for (int k = 0; k < shape.d; ++k, ++v) {
                double pz = double(k);
                double w = field[v];
                r.s0 += w;
                r.s1[0] += w * px;
                r.s1[1] += w * py;
                r.s1[2] += w * pz;
                r.s2[0] += w * px * px;
                r.s2[1] += w * px * py;
                r.s2[2] += w * px * pz;
                r.s2[3] += w * py * py;
                r.s2[4] += w * py * pz;
                r.s2[5] += w * pz * pz;
            }
        }
    }
    double span[3] = {double(std::max(shape.h - 1, 1)), double(std::max(shape.w - 1, 1)),
                      double(std::max(shape.d - 1, 1))};
    for (int a = 0; a < 3; ++a) r.s1[a] /= span[a];
    const int ui[6] = {0, 0, 0, 1, 1, 2};
    const int uj[6] = {0, 1, 2, 1, 2, 2};
    for (int t = 0; t < 6; ++t) r.s2[t] /= span[ui[t]] * span[uj[t]];
    return r;
}

inline Mat3 unpack_sym(const double s[6]) {
    Mat3 m;
    m.m = {s[0], s[1], s[2], s[1], s[3], s[4], s[2], s[4], s[5]};
    return m;
}

}  // namespace detail

// Zeroth/first/second moments of each occupancy field: mass as volume
// fraction, centroid, covariance, and the trace-normalized covariance.
// tr(cov) equals the eigenvalue trace for symmetric matrices, so no
// eigendecomposition is needed here.
inline GeometricMoments extract_moments(const ComponentField& fields) {
    GeometricMoments out;
    out.shape = fields.shape;
    const double n_voxels = double(fields.shape.count());
    out.components.reserve(fields.fields.size());

    for (const auto& field : fields.fields) {
        detail::RawSums r = detail::accumulate_sums(field, fields.shape);
        ComponentMoments cm;
        cm.raw_mass = r.s0;
        cm.mass = r.s0 / n_voxels;
        if (cm.mass < kEmptyMassThreshold) {
            cm.empty = true;
            out.components.push_back(cm);
            continue;
        }
        cm.centroid = {r.s1[0] / r.s0, r.s1[1] / r.s0, r.s1[2] / r.s0};
        Mat3 second = detail::unpack_sym(r.s2) * (1.0 / r.s0);
        cm.cov = second - outer(cm.centroid, cm.centroid);
        double tr = cm.cov.trace();
        cm.cov_normalized = tr != 0.0 ? cm.cov * (1.0 / tr) : Mat3{};
        out.components.push_back(cm);
    }
    return out;
}

// Cotangents for one component's moments. Unset fields stay zero.
struct MomentCotangents {
    double d_mass = 0.0;
    Vec3 d_centroid;
    Mat3 d_cov;
    Mat3 d_cov_normalized;

    bool touches_position_or_shape() const {
        return d_centroid.norm() != 0.0 || d_cov.max_abs() != 0.0 ||
               d_cov_normalized.max_abs() != 0.0;
    }
};

// Exact reverse-mode derivative of extract_moments composed with the given
// cotangents. Mass denominators are stabilized by kMassStabilizer on this
// path. The caller must gate position/shape cotangents on empty components.
inline std::vector<std::vector<double>> moment_gradients(
    const ComponentField& fields, const std::vector<MomentCotangents>& cotangents) {
    if (cotangents.size() != fields.fields.size())
        throw std::invalid_argument("moment_gradients: cotangent count mismatch");

    const Shape3 shape = fields.shape;
    const double n_voxels = double(shape.count());
    std::vector<std::vector<double>> grads;
    grads.reserve(fields.fields.size());

    for (std::size_t kc = 0; kc < fields.fields.size(); ++kc) {
        const auto& field = fields.fields[kc];
        const auto& cot = cotangents[kc];

        detail::RawSums r = detail::accumulate_sums(field, shape);
        const double mass = r.s0 / n_voxels;
        const bool empty = mass < kEmptyMassThreshold;
        if (empty && cot.touches_position_or_shape())
            throw std::invalid_argument(
                "moment_gradients: position/shape cotangent on empty component");

        std::vector<double> g(field.size(), 0.0);
        double g_s0 = cot.d_mass / n_voxels;

        if (!empty) {
            const double s0s = r.s0 + kMassStabilizer * n_voxels;  // stabilized denominator
            const Vec3 centroid = {r.s1[0] / r.s0, r.s1[1] / r.s0, r.s1[2] / r.s0};
            const Mat3 second = detail::unpack_sym(r.s2) * (1.0 / r.s0);
            const Mat3 cov = second - outer(centroid, centroid);
            const double tr = cov.trace();

            // S^n = S / tr(S)
            Mat3 g_cov = cot.d_cov;
            if (cot.d_cov_normalized.max_abs() != 0.0) {
                double dot = 0;
                for (int i = 0; i < 9; ++i) dot += cot.d_cov_normalized.m[i] * cov.m[i];
                double inv_tr = 1.0 / tr;
                for (int i = 0; i < 9; ++i)
                    g_cov.m[i] += cot.d_cov_normalized.m[i] * inv_tr;
                for (int a = 0; a < 3; ++a) g_cov(a, a) -= dot * inv_tr * inv_tr;
            }

            // S = S2/s0 - C C^T
            double g_s2[6] = {};
            Vec3 g_centroid = cot.d_centroid;
            if (g_cov.max_abs() != 0.0) {
                const int ui[6] = {0, 0, 0, 1, 1, 2};
                const int uj[6] = {0, 1, 2, 1, 2, 2};
                for (int t = 0; t < 6; ++t) {
                    int a = ui[t], b = uj[t];
                    double gab = g_cov(a, b) + (a != b ? g_cov(b, a) : 0.0);
                    g_s2[t] = gab / s0s;
                    g_s0 -= gab * (r.s2[t] / r.s0) / s0s;  // d(S2/s0)/ds0 = -S2/s0^2
                }
                for (int a = 0; a < 3; ++a)
                    for (int b = 0; b < 3; ++b)
                        g_centroid[a] -= (g_cov(a, b) + g_cov(b, a)) * centroid[b];
            }

            // C = S1/s0
            for (int a = 0; a < 3; ++a) g_s0 -= g_centroid[a] * (r.s1[a] / r.s0) / s0s;
            double g_s1[3] = {g_centroid.x / s0s, g_centroid.y / s0s, g_centroid.z / s0s};

            std::int64_t v = 0;
            for (int i = 0; i < shape.h; ++i) {
                double px = axis_coord(i, shape.h);
                for (int j = 0; j < shape.w; ++j) {
                    double py = axis_coord(j, shape.w);
                    for (int k = 0; k < shape.d; ++k, ++v) {
                        double pz = axis_coord(k, shape.d);
                        g[v] = g_s0 + g_s1[0] * px + g_s1[1] * py + g_s1[2] * pz +
                               g_s2[0] * px * px + g_s2[1] * px * py + g_s2[2] * px * pz +
                               g_s2[3] * py * py + g_s2[4] * py * pz + g_s2[5] * pz * pz;
                    }
                }
            }
        } else if (cot.d_mass != 0.0) {
            for (auto& x : g) x = g_s0;
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

struct FittedEllipsoid {
    Vec3 center;
    Vec3 semi_axes;      // descending
    Mat3 rotation;       // columns are the principal axes, right-handed
    bool degenerate[3] = {false, false, false};
};

// The uniform solid ellipsoid whose covariance matches the component's:
// semi-axis i = sqrt(5 * lambda_i).
inline FittedEllipsoid ellipsoid_from_moments(const GeometricMoments& m, std::size_t k) {
    if (k >= m.size()) throw std::invalid_argument("ellipsoid_from_moments: bad component");
    const ComponentMoments& cm = m[k];
    if (cm.empty) throw std::invalid_argument("ellipsoid_from_moments: empty component");

    SymEig3 eig = eigen_sym3(cm.cov);
    FittedEllipsoid out;
    out.center = cm.centroid;
    out.rotation = eig.eigenvectors;
    for (int i = 0; i < 3; ++i) {
        double lam = eig.eigenvalues[i];
        if (lam < -1e-9) throw std::invalid_argument("ellipsoid_from_moments: covariance not PSD");
        if (lam < 1e-12) {
            out.degenerate[i] = true;
            lam = std::max(lam, 0.0);
        }
        out.semi_axes[i] = std::sqrt(5.0 * lam);
    }
    return out;
}

}  // namespace gmg
