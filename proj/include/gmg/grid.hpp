#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmg/common.hpp"
#include "gmg/linalg.hpp"

namespace gmg {

// ---------------------------------------------------------------------------
// Dense multi-label voxel volume. Channel 0 is the background by convention.
// Storage is channel-major: value(c,i,j,k) lives at ((c*H + i)*W + j)*D + k.
// Grids are treated as immutable once built; every operation below returns a
// fresh grid and is safe to call concurrently.
// ---------------------------------------------------------------------------
struct LabelGrid {
    int channels = 0;
    Shape3 shape;
    double voxel_edge = 1.0;                // physical edge length, metadata only
    std::vector<std::string> labels;        // optional, size == channels when set
    std::vector<double> values;             // size == channels * H*W*D

    LabelGrid() = default;
    LabelGrid(int c, Shape3 s) : channels(c), shape(s), values(std::size_t(c) * s.count(), 0.0) {}

    std::int64_t voxels() const { return shape.count(); }

    std::int64_t index(int c, int i, int j, int k) const {
        return (std::int64_t(c) * shape.h + i) * shape.w * shape.d + std::int64_t(j) * shape.d + k;
    }

    double at(int c, int i, int j, int k) const { return values[index(c, i, j, k)]; }
    double& at(int c, int i, int j, int k) { return values[index(c, i, j, k)]; }

    const double* channel(int c) const { return values.data() + std::size_t(c) * voxels(); }
    double* channel(int c) { return values.data() + std::size_t(c) * voxels(); }

    bool same_layout(const LabelGrid& o) const {
        return channels == o.channels && shape == o.shape;
    }

    bool is_one_hot(double tol = 0.0) const {
        const std::int64_t n = voxels();
        for (std::int64_t v = 0; v < n; ++v) {
            int ones = 0;
            for (int c = 0; c < channels; ++c) {
                double x = values[std::size_t(c) * n + v];
                if (std::abs(x - 1.0) <= tol)
                    ++ones;
                else if (std::abs(x) > tol)
                    return false;
            }
            if (ones != 1) return false;
        }
        return true;
    }
};

// Normalized voxel-center coordinates, a pure function of the shape: axis
// value index/(n-1), so endpoints are exactly 0 and 1. Axis order (x,y,z)
// maps to indices (i,j,k) over (H,W,D).
struct CoordinateField {
    Shape3 shape;

    explicit CoordinateField(Shape3 s) : shape(s) {}

    Vec3 at(int i, int j, int k) const {
        return {axis_coord(i, shape.h), axis_coord(j, shape.w), axis_coord(k, shape.d)};
    }
};

// Ordered label groups; each group's channels are summed into one occupancy
// field (boolean union for one-hot inputs). Background (channel 0) is never
// selectable.
struct ComponentSelection {
    std::vector<std::vector<int>> groups;

    void validate(int channels) const {
        if (groups.empty()) throw std::invalid_argument("selection: no groups");
        for (const auto& g : groups) {
            if (g.empty()) throw std::invalid_argument("selection: empty group");
            for (int c : g) {
                if (c <= 0 || c >= channels)
                    throw std::invalid_argument("selection: channel index " + std::to_string(c) +
                                                " out of range (background is not selectable)");
            }
        }
    }

    static ComponentSelection singletons(int channels) {
        ComponentSelection s;
        for (int c = 1; c < channels; ++c) s.groups.push_back({c});
        return s;
    }
};

// E scalar occupancy fields over a shared shape.
struct ComponentField {
    Shape3 shape;
    std::vector<std::vector<double>> fields;

    int count() const { return int(fields.size()); }
};

// ---------------------------------------------------------------------------
// Label-wise softmax with temperature: logits are value/temperature, so a low
// temperature pushes each voxel toward one-hot. Differentiable; the analytic
// Jacobian is applied by soft_binarize_backward.
// ---------------------------------------------------------------------------
inline LabelGrid soft_binarize(const LabelGrid& grid, double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("soft_binarize: temperature must be > 0");
    if (grid.channels < 2) throw std::invalid_argument("soft_binarize: need >= 2 channels");

    LabelGrid out = grid;
    const std::int64_t n = grid.voxels();
    const int C = grid.channels;
    const double inv_t = 1.0 / temperature;

    for (std::int64_t v = 0; v < n; ++v) {
        double mx = -1e300;
        for (int c = 0; c < C; ++c) mx = std::max(mx, grid.values[std::size_t(c) * n + v]);
        double sum = 0;
        for (int c = 0; c < C; ++c) {
            double e = std::exp((grid.values[std::size_t(c) * n + v] - mx) * inv_t);
            out.values[std::size_t(c) * n + v] = e;
            sum += e;
        }
        double inv_sum = 1.0 / sum;
        for (int c = 0; c < C; ++c) out.values[std::size_t(c) * n + v] *= inv_sum;
    }
    return out;
}

// Pulls a cotangent on the softmax output back to the input values:
// d/dv_c = (1/T) * y_c * (g_c - sum_d g_d y_d), per voxel.
inline std::vector<double> soft_binarize_backward(const LabelGrid& softened, double temperature,
                                                  const std::vector<double>& out_cotangent) {
    const std::int64_t n = softened.voxels();
    const int C = softened.channels;
    if (out_cotangent.size() != softened.values.size())
        throw std::invalid_argument("soft_binarize_backward: cotangent size mismatch");

    std::vector<double> grad(softened.values.size(), 0.0);
    const double inv_t = 1.0 / temperature;
    for (std::int64_t v = 0; v < n; ++v) {
        double dot = 0;
        for (int c = 0; c < C; ++c)
            dot += out_cotangent[std::size_t(c) * n + v] * softened.values[std::size_t(c) * n + v];
        for (int c = 0; c < C; ++c) {
            double y = softened.values[std::size_t(c) * n + v];
            grad[std::size_t(c) * n + v] =
                inv_t * y * (out_cotangent[std::size_t(c) * n + v] - dot);
        }
    }
    return grad;
}

inline ComponentField select_components(const LabelGrid& grid, const ComponentSelection& sel) {
    sel.validate(grid.channels);
    ComponentField out;
    out.shape = grid.shape;
    const std::int64_t n = grid.voxels();
    out.fields.reserve(sel.groups.size());
    for (const auto& g : sel.groups) {
        std::vector<double> f(n, 0.0);
        for (int c : g) {
            const double* src = grid.channel(c);
            for (std::int64_t v = 0; v < n; ++v) f[v] += src[v];
        }
        out.fields.push_back(std::move(f));
    }
    return out;
}

// Per voxel: winning channel -> 1, rest -> 0. Ties break to the lowest index.
inline LabelGrid argmax_harden(const LabelGrid& grid) {
    LabelGrid out(grid.channels, grid.shape);
    out.voxel_edge = grid.voxel_edge;
    out.labels = grid.labels;
    const std::int64_t n = grid.voxels();
    for (std::int64_t v = 0; v < n; ++v) {
        int best = 0;
        double bv = grid.values[v];
        for (int c = 1; c < grid.channels; ++c) {
            double x = grid.values[std::size_t(c) * n + v];
            if (x > bv) {
                bv = x;
                best = c;
            }
        }
        out.values[std::size_t(best) * n + v] = 1.0;
    }
    return out;
}

}  // namespace gmg
