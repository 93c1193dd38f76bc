#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmg/common.hpp"
#include "gmg/grid.hpp"
#include "gmg/linalg.hpp"

namespace gmg {

struct Interval {
    double lo = 0.0, hi = 0.0;

    double sample(Rng& rng) const { return lo == hi ? lo : rng.uniform(lo, hi); }
};

enum class PrimitiveKind { Ellipsoid, Shell, Crescent, Tube };

// One phantom component. Shells and crescents reference the sampled ellipsoid
// of an earlier component (attach_to); tubes are quadratic Bezier sweeps.
struct PrimitiveSpec {
    std::string name;
    PrimitiveKind kind = PrimitiveKind::Ellipsoid;
    int attach_to = -1;

    // Ellipsoid / crescent body.
    Interval center[3];
    Interval semi[3];
    bool random_rotation = false;

    // Shell: outer semi-axes = reference semi * outer_scale, inner = reference.
    Interval outer_scale{1.3, 1.3};

    // Crescent: body center = reference center + offset; the cut removes the
    // reference ellipsoid scaled by cut_scale.
    Interval offset[3];
    Interval cut_scale{1.45, 1.45};

    // Tube. The whole centerline is translated by a common offset, then each
    // control point is jittered independently.
    Vec3 p0, p1, p2;
    Interval tube_offset{0.0, 0.0};   // per-axis common translation amplitude
    Interval point_jitter{0.0, 0.0};
    Interval radius{0.05, 0.05};
};

struct PhantomSpec {
    std::uint64_t seed = 0;
    Shape3 shape{32, 32, 32};
    double margin = 0.03;
    int max_retries = 64;
    double voxel_edge = 1.0;
    std::vector<PrimitiveSpec> components;  // z-order: later components overwrite earlier

    int channels() const { return int(components.size()) + 1; }
};

struct SampledEllipsoid {
    Vec3 center;
    Vec3 semi;
    Mat3 rot = Mat3::identity();
};

namespace detail {

// Mahalanobis-style quadratic form: inside iff q(p) <= 1.
inline double ellipsoid_quadratic(const SampledEllipsoid& e, const Vec3& p) {
    Vec3 local = e.rot.transposed() * (p - e.center);
    double qx = local.x / e.semi.x, qy = local.y / e.semi.y, qz = local.z / e.semi.z;
    return qx * qx + qy * qy + qz * qz;
}

inline Mat3 random_rotation(Rng& rng) {
    // Uniform axis on the sphere, uniform angle.
    double z = rng.uniform(-1.0, 1.0);
    double phi = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    Vec3 axis{r * std::cos(phi), r * std::sin(phi), z};
    double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    return axis_angle_rotation(axis, angle);
}

inline bool box_inside_margin(const Vec3& lo, const Vec3& hi, double margin) {
    for (int a = 0; a < 3; ++a)
        if (lo[a] < margin || hi[a] > 1.0 - margin) return false;
    return true;
}

}  // namespace detail

inline std::vector<std::uint8_t> rasterize_ellipsoid(const Vec3& center, const Vec3& semi,
                                                     const Mat3& rotation, Shape3 shape) {
    if (!(semi.x > 0 && semi.y > 0 && semi.z > 0))
        throw std::invalid_argument("rasterize_ellipsoid: semi-axes must be positive");
    if (!is_orthonormal(rotation, 1e-9))
        throw std::invalid_argument("rasterize_ellipsoid: rotation not orthonormal");

    SampledEllipsoid e{center, semi, rotation};
    std::vector<std::uint8_t> occ(shape.count(), 0);
    std::int64_t v = 0;
    for (int i = 0; i < shape.h; ++i)
        for (int j = 0; j < shape.w; ++j)
            for (int k = 0; k < shape.d; ++k, ++v) {
                Vec3 p{axis_coord(i, shape.h), axis_coord(j, shape.w), axis_coord(k, shape.d)};
                if (detail::ellipsoid_quadratic(e, p) <= 1.0) occ[v] = 1;
            }
    return occ;
}

namespace detail {

struct SampledPrimitive {
    PrimitiveKind kind;
    SampledEllipsoid body;       // ellipsoid / shell outer / crescent body
    SampledEllipsoid secondary;  // shell inner / crescent cut
    Vec3 p0, p1, p2;             // tube
    double radius = 0.0;
};

inline Vec3 bezier_point(const Vec3& p0, const Vec3& p1, const Vec3& p2, double t) {
    double u = 1.0 - t;
    return p0 * (u * u) + p1 * (2.0 * u * t) + p2 * (t * t);
}

inline void primitive_bounds(const SampledPrimitive& prim, Vec3& lo, Vec3& hi) {
    if (prim.kind == PrimitiveKind::Tube) {
        lo = hi = prim.p0;
        for (const Vec3& p : {prim.p1, prim.p2})
            for (int a = 0; a < 3; ++a) {
                lo[a] = std::min(lo[a], p[a]);
                hi[a] = std::max(hi[a], p[a]);
            }
        lo = lo - Vec3{prim.radius, prim.radius, prim.radius};
        hi = hi + Vec3{prim.radius, prim.radius, prim.radius};
    } else {
        double r = std::max({prim.body.semi.x, prim.body.semi.y, prim.body.semi.z});
        lo = prim.body.center - Vec3{r, r, r};
        hi = prim.body.center + Vec3{r, r, r};
    }
}

inline void rasterize_into(const SampledPrimitive& prim, Shape3 shape, int channel,
                           std::vector<int>& owner) {
    std::vector<Vec3> polyline;
    if (prim.kind == PrimitiveKind::Tube) {
        const int segs = 64;
        polyline.reserve(segs + 1);
        for (int s = 0; s <= segs; ++s)
            polyline.push_back(bezier_point(prim.p0, prim.p1, prim.p2, double(s) / segs));
    }

    // Only scan the primitive's bounding box.
    Vec3 blo, bhi;
    primitive_bounds(prim, blo, bhi);
    auto lo_idx = [](double x, int n) {
        return std::max(0, int(std::floor(x * (n - 1))) - 1);
    };
    auto hi_idx = [](double x, int n) {
        return std::min(n - 1, int(std::ceil(x * (n - 1))) + 1);
    };
    int i0 = lo_idx(blo.x, shape.h), i1 = hi_idx(bhi.x, shape.h);
    int j0 = lo_idx(blo.y, shape.w), j1 = hi_idx(bhi.y, shape.w);
    int k0 = lo_idx(blo.z, shape.d), k1 = hi_idx(bhi.z, shape.d);

    for (int i = i0; i <= i1; ++i)
        for (int j = j0; j <= j1; ++j)
            for (int k = k0; k <= k1; ++k) {
                std::int64_t v = voxel_index(shape, i, j, k);
                Vec3 p{axis_coord(i, shape.h), axis_coord(j, shape.w), axis_coord(k, shape.d)};
                bool inside = false;
                switch (prim.kind) {
                    case PrimitiveKind::Ellipsoid:
                        inside = ellipsoid_quadratic(prim.body, p) <= 1.0;
                        break;
                    case PrimitiveKind::Shell:
                        inside = ellipsoid_quadratic(prim.body, p) <= 1.0 &&
                                 ellipsoid_quadratic(prim.secondary, p) > 1.0;
                        break;
                    case PrimitiveKind::Crescent:
                        inside = ellipsoid_quadratic(prim.body, p) <= 1.0 &&
                                 ellipsoid_quadratic(prim.secondary, p) > 1.0;
                        break;
                    case PrimitiveKind::Tube: {
                        double best = 1e300;
                        for (std::size_t s = 0; s + 1 < polyline.size(); ++s) {
                            Vec3 a = polyline[s], b = polyline[s + 1];
                            Vec3 ab = b - a;
                            double len2 = ab.dot(ab);
                            double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
                            Vec3 q = a + ab * t;
                            best = std::min(best, (p - q).dot(p - q));
                        }
                        inside = best <= prim.radius * prim.radius;
                        break;
                    }
                }
                if (inside) owner[v] = channel;
            }
}

inline SampledPrimitive sample_primitive(const PrimitiveSpec& spec,
                                         const std::vector<SampledPrimitive>& earlier, Rng& rng) {
    SampledPrimitive out;
    out.kind = spec.kind;
    const SampledEllipsoid* ref = nullptr;
    if (spec.attach_to >= 0) {
        if (spec.attach_to >= int(earlier.size()))
            throw std::invalid_argument("phantom: attach_to out of range");
        ref = &earlier[spec.attach_to].body;
    }

    switch (spec.kind) {
        case PrimitiveKind::Ellipsoid: {
            out.body.center = {spec.center[0].sample(rng), spec.center[1].sample(rng),
                               spec.center[2].sample(rng)};
            out.body.semi = {spec.semi[0].sample(rng), spec.semi[1].sample(rng),
                             spec.semi[2].sample(rng)};
            out.body.rot = spec.random_rotation ? random_rotation(rng) : Mat3::identity();
            break;
        }
        case PrimitiveKind::Shell: {
            if (!ref) throw std::invalid_argument("phantom: shell requires attach_to");
            double s = spec.outer_scale.sample(rng);
            out.body = {ref->center, ref->semi * s, ref->rot};
            out.secondary = *ref;
            break;
        }
        case PrimitiveKind::Crescent: {
            if (!ref) throw std::invalid_argument("phantom: crescent requires attach_to");
            Vec3 off{spec.offset[0].sample(rng), spec.offset[1].sample(rng),
                     spec.offset[2].sample(rng)};
            out.body.center = ref->center + off;
            out.body.semi = {spec.semi[0].sample(rng), spec.semi[1].sample(rng),
                             spec.semi[2].sample(rng)};
            out.body.rot = spec.random_rotation ? random_rotation(rng) : Mat3::identity();
            out.secondary = {ref->center, ref->semi * spec.cut_scale.sample(rng), ref->rot};
            break;
        }
        case PrimitiveKind::Tube: {
            double amp = spec.tube_offset.sample(rng);
            Vec3 common{rng.uniform(-amp, amp), rng.uniform(-amp, amp), rng.uniform(-amp, amp)};
            double jitter = spec.point_jitter.sample(rng);
            auto jittered = [&](const Vec3& base) {
                return base + common +
                       Vec3{rng.uniform(-jitter, jitter), rng.uniform(-jitter, jitter),
                            rng.uniform(-jitter, jitter)};
            };
            out.p0 = jittered(spec.p0);
            out.p1 = jittered(spec.p1);
            out.p2 = jittered(spec.p2);
            out.radius = spec.radius.sample(rng);
            break;
        }
    }
    return out;
}

// Conservative: ellipsoid bounds ignore rotation, tube bounds use the Bezier
// control-point hull.
inline bool primitive_within_margin(const SampledPrimitive& prim, double margin) {
    Vec3 lo, hi;
    primitive_bounds(prim, lo, hi);
    return box_inside_margin(lo, hi, margin);
}

}  // namespace detail

// Generates one phantom; a pure function of (spec, index). Components are
// rasterized in list order with later components overwriting earlier ones.
inline LabelGrid generate_phantom(const PhantomSpec& spec, std::uint64_t index) {
    if (spec.components.empty()) throw std::invalid_argument("phantom: no components");

    for (int attempt = 0; attempt < spec.max_retries; ++attempt) {
        Rng rng = Rng::stream(spec.seed, index, std::uint64_t(attempt));

        std::vector<detail::SampledPrimitive> sampled;
        bool ok = true;
        for (const auto& comp : spec.components) {
            detail::SampledPrimitive prim;
            bool placed = false;
            for (int retry = 0; retry < spec.max_retries; ++retry) {
                prim = detail::sample_primitive(comp, sampled, rng);
                if (detail::primitive_within_margin(prim, spec.margin)) {
                    placed = true;
                    break;
                }
            }
            if (!placed) {
                ok = false;
                break;
            }
            sampled.push_back(prim);
        }
        if (!ok) continue;

        std::vector<int> owner(spec.shape.count(), 0);
        for (std::size_t c = 0; c < sampled.size(); ++c)
            detail::rasterize_into(sampled[c], spec.shape, int(c) + 1, owner);

        std::vector<std::int64_t> counts(spec.channels(), 0);
        for (int o : owner) ++counts[o];
        bool nonempty = true;
        for (int c = 1; c < spec.channels(); ++c)
            if (counts[c] == 0) nonempty = false;
        if (!nonempty) continue;

        LabelGrid grid(spec.channels(), spec.shape);
        grid.voxel_edge = spec.voxel_edge;
        grid.labels.push_back("BG");
        for (const auto& comp : spec.components) grid.labels.push_back(comp.name);
        const std::int64_t n = grid.voxels();
        for (std::int64_t v = 0; v < n; ++v) grid.values[std::size_t(owner[v]) * n + v] = 1.0;
        return grid;
    }
    throw std::runtime_error("phantom: could not place components within margin (index " +
                             std::to_string(index) + ")");
}

inline std::vector<LabelGrid> generate_phantoms(const PhantomSpec& spec, int n,
                                                std::uint64_t first_index = 0, int threads = 0) {
    if (n < 1) throw std::invalid_argument("phantom: n must be >= 1");
    std::vector<LabelGrid> out(n);
    parallel_for(
        n, [&](std::int64_t i) { out[i] = generate_phantom(spec, first_index + i); }, threads);
    return out;
}

// The documented default family: an "LV" ellipsoid, a "Myo" shell around it,
// an "RV" crescent beside it, and an "Ao" tube arching above. Cardio-like in
// taxonomy only.
inline PhantomSpec default_phantom_spec(std::uint64_t seed = 0, Shape3 shape = {32, 32, 32}) {
    PhantomSpec spec;
    spec.seed = seed;
    spec.shape = shape;

    PrimitiveSpec lv;
    lv.name = "LV";
    lv.kind = PrimitiveKind::Ellipsoid;
    lv.center[0] = {0.44, 0.56};
    lv.center[1] = {0.46, 0.58};
    lv.center[2] = {0.40, 0.50};
    lv.semi[0] = {0.12, 0.18};
    lv.semi[1] = {0.12, 0.18};
    lv.semi[2] = {0.12, 0.18};
    lv.random_rotation = true;
    spec.components.push_back(lv);

    PrimitiveSpec myo;
    myo.name = "Myo";
    myo.kind = PrimitiveKind::Shell;
    myo.attach_to = 0;
    myo.outer_scale = {1.35, 1.50};
    spec.components.push_back(myo);

    PrimitiveSpec rv;
    rv.name = "RV";
    rv.kind = PrimitiveKind::Crescent;
    rv.attach_to = 0;
    rv.offset[0] = {-0.04, 0.04};
    rv.offset[1] = {-0.25, -0.19};
    rv.offset[2] = {-0.04, 0.04};
    rv.semi[0] = {0.12, 0.16};
    rv.semi[1] = {0.12, 0.16};
    rv.semi[2] = {0.12, 0.16};
    rv.cut_scale = {1.52, 1.64};
    spec.components.push_back(rv);

    PrimitiveSpec ao;
    ao.name = "Ao";
    ao.kind = PrimitiveKind::Tube;
    ao.p0 = {0.50, 0.52, 0.60};
    ao.p1 = {0.54, 0.58, 0.70};
    ao.p2 = {0.62, 0.62, 0.74};
    ao.tube_offset = {0.06, 0.07};
    ao.point_jitter = {0.02, 0.04};
    ao.radius = {0.07, 0.10};
    spec.components.push_back(ao);

    return spec;
}

}  // namespace gmg
