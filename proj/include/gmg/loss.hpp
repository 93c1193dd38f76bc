#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmg/grid.hpp"
#include "gmg/moments.hpp"

namespace gmg {

// Paper-table default weight factors for size/position/shape.
inline constexpr double kDefaultLambdaSize = 1e7;
inline constexpr double kDefaultLambdaPos = 1e5;
inline constexpr double kDefaultLambdaShape = 1e4;

// Softmax temperature used before moment extraction on the guidance path.
inline constexpr double kDefaultBinarizeTemperature = 1e-2;

struct MomentConstraint {
    std::vector<int> labels;  // channel indices, boolean union; background excluded

    bool mass_on = false;
    double mass_target = 0.0;

    bool centroid_on = false;
    Vec3 centroid_target;

    bool shape_on = false;
    Mat3 shape_target;  // trace 1, PSD
};

struct ConstraintSet {
    std::vector<MomentConstraint> groups;
    double lambda_size = kDefaultLambdaSize;
    double lambda_pos = kDefaultLambdaPos;
    double lambda_shape = kDefaultLambdaShape;
    double guidance_weight = 1.0;  // w

    ComponentSelection selection() const {
        ComponentSelection s;
        for (const auto& g : groups) s.groups.push_back(g.labels);
        return s;
    }

    bool any_active() const {
        for (const auto& g : groups)
            if (g.mass_on || g.centroid_on || g.shape_on) return true;
        return false;
    }

    void validate(int channels) const {
        if (lambda_size < 0 || lambda_pos < 0 || lambda_shape < 0)
            throw std::invalid_argument("constraints: negative lambda");
        selection().validate(channels);
        if (guidance_weight > 0 && !any_active())
            throw std::invalid_argument("constraints: w > 0 with no active moment flags");
        for (const auto& g : groups) {
            if (g.shape_on) {
                double tr = g.shape_target.trace();
                if (std::abs(tr - 1.0) > 1e-6)
                    throw std::invalid_argument("constraints: shape target trace != 1");
                SymEig3 eig = eigen_sym3(g.shape_target);
                if (eig.eigenvalues[2] < -1e-9)
                    throw std::invalid_argument("constraints: shape target not PSD");
            }
        }
    }
};

struct LossBreakdown {
    double total = 0.0;
    double size_term = 0.0;   // unweighted MSE terms
    double pos_term = 0.0;
    double shape_term = 0.0;
    std::vector<bool> gated;  // per group: position/shape terms dropped (empty component)
    int gated_count = 0;
};

// Composite geometric loss: lambda_size*L_size + lambda_pos*L_pos +
// lambda_shape*L_shape. Each term is the mean squared error over its active
// entries (1 per mass, 3 per centroid, all 9 covariance entries). Empty
// components contribute only to the size term; their position/shape targets
// are gated off and recorded in the breakdown.
inline LossBreakdown geometric_loss(const GeometricMoments& m, const ConstraintSet& cs) {
    if (m.size() != cs.groups.size())
        throw std::invalid_argument("geometric_loss: component count mismatch");

    double size_sq = 0, pos_sq = 0, shape_sq = 0;
    int n_size = 0, n_pos = 0, n_shape = 0;
    LossBreakdown bd;
    bd.gated.assign(cs.groups.size(), false);

    for (std::size_t k = 0; k < cs.groups.size(); ++k) {
        const auto& g = cs.groups[k];
        const auto& cm = m[k];
        if (g.shape_on && std::abs(g.shape_target.trace() - 1.0) > 1e-6)
            throw std::invalid_argument("geometric_loss: shape target trace != 1");

        if (g.mass_on) {
            double d = cm.mass - g.mass_target;
            size_sq += d * d;
            n_size += 1;
        }
        bool gate = cm.empty;
        if (gate && (g.centroid_on || g.shape_on)) {
            bd.gated[k] = true;
            ++bd.gated_count;
        }
        if (g.centroid_on && !gate) {
            Vec3 d = cm.centroid - g.centroid_target;
            pos_sq += d.dot(d);
            n_pos += 3;
        }
        if (g.shape_on && !gate) {
            Mat3 d = cm.cov_normalized - g.shape_target;
            for (double x : d.m) shape_sq += x * x;
            n_shape += 9;
        }
    }

    bd.size_term = n_size ? size_sq / n_size : 0.0;
    bd.pos_term = n_pos ? pos_sq / n_pos : 0.0;
    bd.shape_term = n_shape ? shape_sq / n_shape : 0.0;
    bd.total = cs.lambda_size * bd.size_term + cs.lambda_pos * bd.pos_term +
               cs.lambda_shape * bd.shape_term;
    return bd;
}

// Full chain: soft_binarize -> select_components -> extract_moments ->
// geometric_loss, differentiated back to every channel of the input grid.
// The input is the decoded clean prediction before binarization; unselected
// channels receive gradient through the softmax coupling only.
inline std::vector<double> loss_gradient_wrt_grid(const LabelGrid& grid,
                                                  const ConstraintSet& cs, double temperature,
                                                  LossBreakdown* breakdown_out = nullptr) {
    cs.selection().validate(grid.channels);

    LabelGrid soft = soft_binarize(grid, temperature);
    ComponentField fields = select_components(soft, cs.selection());
    GeometricMoments m = extract_moments(fields);
    LossBreakdown bd = geometric_loss(m, cs);
    if (breakdown_out) *breakdown_out = bd;

    // Entry counts mirror geometric_loss's reductions.
    int n_size = 0, n_pos = 0, n_shape = 0;
    for (std::size_t k = 0; k < cs.groups.size(); ++k) {
        const auto& g = cs.groups[k];
        if (g.mass_on) ++n_size;
        if (g.centroid_on && !bd.gated[k] && !m[k].empty) n_pos += 3;
        if (g.shape_on && !bd.gated[k] && !m[k].empty) n_shape += 9;
    }

    std::vector<MomentCotangents> cots(cs.groups.size());
    for (std::size_t k = 0; k < cs.groups.size(); ++k) {
        const auto& g = cs.groups[k];
        const auto& cm = m[k];
        auto& cot = cots[k];
        if (g.mass_on && n_size)
            cot.d_mass = cs.lambda_size * 2.0 * (cm.mass - g.mass_target) / n_size;
        if (g.centroid_on && !cm.empty && n_pos) {
            Vec3 d = cm.centroid - g.centroid_target;
            cot.d_centroid = d * (cs.lambda_pos * 2.0 / n_pos);
        }
        if (g.shape_on && !cm.empty && n_shape) {
            Mat3 d = cm.cov_normalized - g.shape_target;
            cot.d_cov_normalized = d * (cs.lambda_shape * 2.0 / n_shape);
        }
    }

    std::vector<std::vector<double>> field_grads = moment_gradients(fields, cots);

    // Scatter component-field gradients back onto the softened channels.
    std::vector<double> d_soft(soft.values.size(), 0.0);
    const std::int64_t n = soft.voxels();
    for (std::size_t k = 0; k < cs.groups.size(); ++k) {
        const auto& fg = field_grads[k];
        for (int c : cs.groups[k].labels) {
            double* dst = d_soft.data() + std::size_t(c) * n;
            for (std::int64_t v = 0; v < n; ++v) dst[v] += fg[v];
        }
    }

    return soft_binarize_backward(soft, temperature, d_soft);
}

}  // namespace gmg
