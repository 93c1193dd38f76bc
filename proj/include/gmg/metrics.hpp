#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "gmg/common.hpp"
#include "gmg/grid.hpp"
#include "gmg/linalg.hpp"
#include "gmg/loss.hpp"
#include "gmg/moments.hpp"

namespace gmg {

// ---------------------------------------------------------------------------
// Morphological vectors: per foreground label, [mass, centroid xyz, sorted
// eigenvalues of the normalized covariance] — 7 entries per label. Empty
// labels contribute neutral entries (domain center, isotropic shape).
// ---------------------------------------------------------------------------
inline constexpr int kMorphEntriesPerLabel = 7;

inline std::vector<double> morph_vector(const LabelGrid& grid) {
    ComponentSelection sel = ComponentSelection::singletons(grid.channels);
    GeometricMoments m = extract_moments(select_components(grid, sel));
    std::vector<double> out;
    out.reserve(m.size() * kMorphEntriesPerLabel);
    for (std::size_t k = 0; k < m.size(); ++k) {
        const auto& cm = m[k];
        out.push_back(cm.mass);
        if (cm.empty) {
            out.insert(out.end(), {0.5, 0.5, 0.5, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0});
            continue;
        }
        out.push_back(cm.centroid.x);
        out.push_back(cm.centroid.y);
        out.push_back(cm.centroid.z);
        SymEig3 eig = eigen_sym3(cm.cov_normalized);
        out.push_back(eig.eigenvalues.x);
        out.push_back(eig.eigenvalues.y);
        out.push_back(eig.eigenvalues.z);
    }
    return out;
}

// z-scoring statistics, fitted on the reference (real) set.
struct ZScore {
    std::vector<double> mean, std;
    int degenerate_dims = 0;  // dimensions with zero variance, std forced to 1

    static ZScore fit(const std::vector<std::vector<double>>& vecs) {
        if (vecs.empty()) throw std::invalid_argument("zscore: empty reference set");
        const std::size_t dim = vecs[0].size();
        ZScore z;
        z.mean.assign(dim, 0.0);
        z.std.assign(dim, 0.0);
        for (const auto& v : vecs)
            for (std::size_t i = 0; i < dim; ++i) z.mean[i] += v[i];
        for (auto& m : z.mean) m /= double(vecs.size());
        for (const auto& v : vecs)
            for (std::size_t i = 0; i < dim; ++i) {
                double d = v[i] - z.mean[i];
                z.std[i] += d * d;
            }
        for (auto& s : z.std) s = std::sqrt(s / double(vecs.size()));
        for (auto& s : z.std)
            if (s < 1e-12) {
                s = 1.0;
                ++z.degenerate_dims;
            }
        return z;
    }

    std::vector<double> apply(const std::vector<double>& v) const {
        std::vector<double> out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mean[i]) / std[i];
        return out;
    }
};

// ---------------------------------------------------------------------------
// Frechet distance between two vector sets:
//   ||mu_r - mu_s||^2 + tr(S_r + S_s - 2 (S_r^1/2 S_s S_r^1/2)^1/2)
// Eigenvalues below -1e-9 are an error; small negatives clamp to zero.
// Singular covariances get 1e-6 diagonal jitter, reported via the flag.
// ---------------------------------------------------------------------------
struct FrechetResult {
    double value = 0;
    bool jittered = false;
};

namespace detail {

struct MeanCov {
    std::vector<double> mean;
    std::vector<double> cov;  // row-major dim x dim
    std::size_t dim = 0;
};

inline MeanCov mean_cov(const std::vector<std::vector<double>>& vecs) {
    MeanCov mc;
    mc.dim = vecs[0].size();
    mc.mean.assign(mc.dim, 0.0);
    mc.cov.assign(mc.dim * mc.dim, 0.0);
    for (const auto& v : vecs)
        for (std::size_t i = 0; i < mc.dim; ++i) mc.mean[i] += v[i];
    for (auto& m : mc.mean) m /= double(vecs.size());
    for (const auto& v : vecs)
        for (std::size_t i = 0; i < mc.dim; ++i)
            for (std::size_t j = 0; j < mc.dim; ++j)
                mc.cov[i * mc.dim + j] += (v[i] - mc.mean[i]) * (v[j] - mc.mean[j]);
    for (auto& c : mc.cov) c /= double(vecs.size());
    return mc;
}

// tr(sqrt(M)) for symmetric PSD M, clamping small negative eigenvalues.
inline double trace_sqrt_sym(std::vector<double> m, int n) {
    std::vector<double> vals, vecs;
    jacobi_eigen_sym(m, n, vals, vecs);
    double tr = 0;
    for (double v : vals) {
        if (v < -1e-9) throw std::runtime_error("frechet: matrix not PSD");
        tr += std::sqrt(std::max(v, 0.0));
    }
    return tr;
}

// B = sqrt(A) for symmetric PSD A.
inline std::vector<double> sqrt_sym(std::vector<double> a, int n) {
    std::vector<double> vals, vecs;
    jacobi_eigen_sym(a, n, vals, vecs);
    std::vector<double> out(std::size_t(n) * n, 0.0);
    for (int k = 0; k < n; ++k) {
        double s = std::sqrt(std::max(vals[k], 0.0));
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                out[std::size_t(i) * n + j] += s * vecs[std::size_t(i) * n + k] * vecs[std::size_t(j) * n + k];
    }
    return out;
}

inline double min_eigenvalue(std::vector<double> a, int n) {
    std::vector<double> vals, vecs;
    jacobi_eigen_sym(a, n, vals, vecs);
    return vals.back();
}

}  // namespace detail

inline FrechetResult frechet_distance(const std::vector<std::vector<double>>& real,
                                      const std::vector<std::vector<double>>& synth) {
    if (real.size() < 2 || synth.size() < 2)
        throw std::invalid_argument("frechet: need at least 2 vectors per set");
    detail::MeanCov r = detail::mean_cov(real);
    detail::MeanCov s = detail::mean_cov(synth);
    if (r.dim != s.dim) throw std::invalid_argument("frechet: dimension mismatch");
    const int n = int(r.dim);

    FrechetResult result;
    if (detail::min_eigenvalue(r.cov, n) < 1e-12 || detail::min_eigenvalue(s.cov, n) < 1e-12) {
        result.jittered = true;
        for (int i = 0; i < n; ++i) {
            r.cov[std::size_t(i) * n + i] += 1e-6;
            s.cov[std::size_t(i) * n + i] += 1e-6;
        }
    }

    double mean_sq = 0;
    for (int i = 0; i < n; ++i) {
        double d = r.mean[i] - s.mean[i];
        mean_sq += d * d;
    }

    std::vector<double> r_half = detail::sqrt_sym(r.cov, n);
    // M = r_half * s.cov * r_half
    std::vector<double> tmp(std::size_t(n) * n, 0.0), m(std::size_t(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) {
            double rik = r_half[std::size_t(i) * n + k];
            for (int j = 0; j < n; ++j) tmp[std::size_t(i) * n + j] += rik * s.cov[std::size_t(k) * n + j];
        }
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) {
            double tik = tmp[std::size_t(i) * n + k];
            for (int j = 0; j < n; ++j) m[std::size_t(i) * n + j] += tik * r_half[std::size_t(k) * n + j];
        }
    // Symmetrize against roundoff before the eigensolve.
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double avg = 0.5 * (m[std::size_t(i) * n + j] + m[std::size_t(j) * n + i]);
            m[std::size_t(i) * n + j] = m[std::size_t(j) * n + i] = avg;
        }

    double tr_r = 0, tr_s = 0;
    for (int i = 0; i < n; ++i) {
        tr_r += r.cov[std::size_t(i) * n + i];
        tr_s += s.cov[std::size_t(i) * n + i];
    }
    result.value = mean_sq + tr_r + tr_s - 2.0 * detail::trace_sqrt_sym(m, n);
    return result;
}

// ---------------------------------------------------------------------------
// Improved precision/recall: manifold membership with k-NN radii. A point is
// inside the other manifold if it lies within the k-NN radius of any point
// there; boundary ties count as inside.
// ---------------------------------------------------------------------------
inline std::pair<double, double> precision_recall(const std::vector<std::vector<double>>& real,
                                                  const std::vector<std::vector<double>>& synth,
                                                  int k = 5) {
    if (int(real.size()) <= k || int(synth.size()) <= k)
        throw std::invalid_argument("precision_recall: set sizes must exceed k");

    auto sq_dist = [](const std::vector<double>& a, const std::vector<double>& b) {
        double d = 0;
        for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
        return d;
    };

    auto knn_radii = [&](const std::vector<std::vector<double>>& set) {
        std::vector<double> radii(set.size());
        std::vector<double> dists;
        for (std::size_t i = 0; i < set.size(); ++i) {
            dists.clear();
            for (std::size_t j = 0; j < set.size(); ++j)
                if (i != j) dists.push_back(sq_dist(set[i], set[j]));
            std::nth_element(dists.begin(), dists.begin() + (k - 1), dists.end());
            radii[i] = dists[k - 1];
        }
        return radii;
    };

    auto fraction_inside = [&](const std::vector<std::vector<double>>& queries,
                               const std::vector<std::vector<double>>& manifold,
                               const std::vector<double>& radii) {
        std::size_t inside = 0;
        for (const auto& q : queries) {
            bool in = false;
            for (std::size_t j = 0; j < manifold.size() && !in; ++j)
                if (sq_dist(q, manifold[j]) <= radii[j]) in = true;
            if (in) ++inside;
        }
        return double(inside) / double(queries.size());
    };

    std::vector<double> real_radii = knn_radii(real);
    std::vector<double> synth_radii = knn_radii(synth);
    double precision = fraction_inside(synth, real, real_radii);
    double recall = fraction_inside(real, synth, synth_radii);
    return {precision, recall};
}

// ---------------------------------------------------------------------------
// Point clouds: farthest point sampling over a label's occupied voxel
// centers. Deterministic: the seed point is the occupied voxel nearest the
// component centroid (ties to the lowest linear index), and argmax ties
// resolve to the lowest index.
// ---------------------------------------------------------------------------
struct PointCloud {
    std::vector<Vec3> points;
};

inline PointCloud farthest_point_sample(const std::vector<Vec3>& candidates, int count) {
    PointCloud out;
    if (candidates.empty()) return out;
    count = std::min<int>(count, int(candidates.size()));

    Vec3 centroid{0, 0, 0};
    for (const auto& p : candidates) centroid = centroid + p;
    centroid = centroid * (1.0 / double(candidates.size()));

    std::size_t seed = 0;
    double best = 1e300;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        double d = (candidates[i] - centroid).dot(candidates[i] - centroid);
        if (d < best) {
            best = d;
            seed = i;
        }
    }

    std::vector<double> min_dist(candidates.size(), 1e300);
    std::vector<std::uint8_t> taken(candidates.size(), 0);
    std::size_t current = seed;
    out.points.push_back(candidates[current]);
    taken[current] = 1;
    for (int n = 1; n < count; ++n) {
        double far_d = -1;
        std::size_t far_i = 0;
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            if (taken[i]) continue;
            double d = (candidates[i] - candidates[current]).dot(candidates[i] - candidates[current]);
            if (d < min_dist[i]) min_dist[i] = d;
            if (min_dist[i] > far_d) {
                far_d = min_dist[i];
                far_i = i;
            }
        }
        current = far_i;
        out.points.push_back(candidates[current]);
        taken[current] = 1;
    }
    return out;
}

inline PointCloud label_pointcloud(const LabelGrid& grid, int channel, int count = 256) {
    std::vector<Vec3> occupied;
    const double* ch = grid.channel(channel);
    std::int64_t v = 0;
    for (int i = 0; i < grid.shape.h; ++i)
        for (int j = 0; j < grid.shape.w; ++j)
            for (int k = 0; k < grid.shape.d; ++k, ++v)
                if (ch[v] >= 0.5)
                    occupied.push_back({axis_coord(i, grid.shape.h), axis_coord(j, grid.shape.w),
                                        axis_coord(k, grid.shape.d)});
    return farthest_point_sample(occupied, count);
}

// ---------------------------------------------------------------------------
// Debiased Sinkhorn divergence with squared-Euclidean cost and uniform
// weights:  S(a,b) = OT_eps(a,b) - OT_eps(a,a)/2 - OT_eps(b,b)/2.
// Symmetric averaged updates in the log domain with epsilon scaling; the
// update rule is invariant under swapping the inputs.
// ---------------------------------------------------------------------------
struct SinkhornConfig {
    double epsilon = 1e-3;  // in squared normalized-coordinate units
    int max_iter = 500;
    double tol = 1e-9;
};

struct SinkhornResult {
    double value = 0;
    bool converged = true;
};

namespace detail {

inline SinkhornResult entropic_ot(const PointCloud& a, const PointCloud& b,
                                  const SinkhornConfig& cfg) {
    const std::size_t n = a.points.size(), m = b.points.size();
    if (n == 0 || m == 0) throw std::invalid_argument("sinkhorn: empty cloud");

    std::vector<double> cost(n * m);
    double max_cost = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            Vec3 d = a.points[i] - b.points[j];
            double c = d.dot(d);
            cost[i * m + j] = c;
            max_cost = std::max(max_cost, c);
        }

    std::vector<double> f(n, 0.0), g(m, 0.0), f_new(n), g_new(m);
    const double log_wa = -std::log(double(n));
    const double log_wb = -std::log(double(m));

    auto softmin_rows = [&](double eps) {
        // f_new_i = -eps * log sum_j w_b exp((g_j - C_ij)/eps)
        for (std::size_t i = 0; i < n; ++i) {
            double mx = -1e300;
            for (std::size_t j = 0; j < m; ++j)
                mx = std::max(mx, (g[j] - cost[i * m + j]));
            double s = 0;
            for (std::size_t j = 0; j < m; ++j)
                s += std::exp(((g[j] - cost[i * m + j]) - mx) / eps);
            f_new[i] = -(mx + eps * (std::log(s) + log_wb));
        }
    };
    auto softmin_cols = [&](double eps) {
        for (std::size_t j = 0; j < m; ++j) {
            double mx = -1e300;
            for (std::size_t i = 0; i < n; ++i)
                mx = std::max(mx, (f[i] - cost[i * m + j]));
            double s = 0;
            for (std::size_t i = 0; i < n; ++i)
                s += std::exp(((f[i] - cost[i * m + j]) - mx) / eps);
            g_new[j] = -(mx + eps * (std::log(s) + log_wa));
        }
    };

    SinkhornResult result;
    int iters_used = 0;
    bool reached_tol = false;

    // Epsilon scaling: anneal from the cost scale down to the target.
    std::vector<double> eps_ladder;
    for (double e = std::max(max_cost, cfg.epsilon); e > cfg.epsilon; e *= 0.5)
        eps_ladder.push_back(e);
    eps_ladder.push_back(cfg.epsilon);

    for (double eps : eps_ladder) {
        const bool final_eps = eps == cfg.epsilon;
        const int cap = final_eps ? cfg.max_iter : 2;
        for (int it = 0; it < cap; ++it) {
            if (iters_used >= cfg.max_iter && final_eps) break;
            ++iters_used;
            softmin_rows(eps);
            softmin_cols(eps);
            // Symmetric averaged (over-relaxed) update; swapping the inputs
            // exchanges f and g exactly.
            double delta = 0;
            for (std::size_t i = 0; i < n; ++i) {
                double nf = 0.5 * (f[i] + f_new[i]);
                delta = std::max(delta, std::abs(nf - f[i]));
                f[i] = nf;
            }
            for (std::size_t j = 0; j < m; ++j) {
                double ng = 0.5 * (g[j] + g_new[j]);
                delta = std::max(delta, std::abs(ng - g[j]));
                g[j] = ng;
            }
            if (final_eps && delta < cfg.tol) {
                reached_tol = true;
                break;
            }
        }
    }
    result.converged = reached_tol;

    double value = 0;
    for (std::size_t i = 0; i < n; ++i) value += f[i] / double(n);
    for (std::size_t j = 0; j < m; ++j) value += g[j] / double(m);
    result.value = value;
    return result;
}

}  // namespace detail

inline SinkhornResult sinkhorn_divergence(const PointCloud& a, const PointCloud& b,
                                          const SinkhornConfig& cfg = {}) {
    SinkhornResult ab = detail::entropic_ot(a, b, cfg);
    SinkhornResult aa = detail::entropic_ot(a, a, cfg);
    SinkhornResult bb = detail::entropic_ot(b, b, cfg);
    SinkhornResult out;
    out.value = ab.value - 0.5 * aa.value - 0.5 * bb.value;
    out.converged = ab.converged && aa.converged && bb.converged;
    return out;
}

// ---------------------------------------------------------------------------
// Pointcloud distribution metrics over one label's cloud collections.
//   MMD: mean over real clouds of the min divergence to a synth cloud.
//   COV: fraction of real clouds that are some synth cloud's nearest.
//   1-NNA: leave-one-out 1-NN classification accuracy over the union;
//          distance ties count as "other set".
// ---------------------------------------------------------------------------
struct PointcloudMetrics {
    double mmd = 0;
    double coverage = 0;
    double one_nna = 0;
    int unconverged_pairs = 0;
};

inline PointcloudMetrics pointcloud_metrics(const std::vector<PointCloud>& real,
                                            const std::vector<PointCloud>& synth,
                                            const SinkhornConfig& cfg = {}, int threads = 0) {
    const int nr = int(real.size()), ns = int(synth.size());
    if (nr == 0 || ns == 0) throw std::invalid_argument("pointcloud_metrics: empty set");
    const int total = nr + ns;
    auto cloud = [&](int i) -> const PointCloud& {
        return i < nr ? real[i] : synth[i - nr];
    };

    // Self OT terms, then all cross pairs (i < j), debiased on the fly.
    std::vector<double> self_ot(total);
    std::vector<int> unconverged(total + total * total, 0);
    parallel_for(
        total,
        [&](std::int64_t i) {
            SinkhornResult r = detail::entropic_ot(cloud(int(i)), cloud(int(i)), cfg);
            self_ot[i] = r.value;
            if (!r.converged) unconverged[i] = 1;
        },
        threads);

    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < total; ++i)
        for (int j = i + 1; j < total; ++j) pairs.emplace_back(i, j);

    std::vector<double> dist(std::size_t(total) * total, 0.0);
    parallel_for(
        std::int64_t(pairs.size()),
        [&](std::int64_t p) {
            auto [i, j] = pairs[p];
            SinkhornResult r = detail::entropic_ot(cloud(i), cloud(j), cfg);
            double d = r.value - 0.5 * self_ot[i] - 0.5 * self_ot[j];
            dist[std::size_t(i) * total + j] = d;
            dist[std::size_t(j) * total + i] = d;
            if (!r.converged) unconverged[total + std::size_t(i) * total + j] = 1;
        },
        threads);

    PointcloudMetrics out;
    for (int u : unconverged) out.unconverged_pairs += u;

    // MMD over real; COV via synth nearest-real matches.
    std::vector<std::uint8_t> covered(nr, 0);
    double mmd = 0;
    for (int r = 0; r < nr; ++r) {
        double best = 1e300;
        for (int s = 0; s < ns; ++s) best = std::min(best, dist[std::size_t(r) * total + (nr + s)]);
        mmd += best;
    }
    out.mmd = mmd / double(nr);
    for (int s = 0; s < ns; ++s) {
        double best = 1e300;
        int arg = 0;
        for (int r = 0; r < nr; ++r) {
            double d = dist[std::size_t(nr + s) * total + r];
            if (d < best) {
                best = d;
                arg = r;
            }
        }
        covered[arg] = 1;
    }
    int cov_count = 0;
    for (auto c : covered) cov_count += c;
    out.coverage = double(cov_count) / double(nr);

    // 1-NNA with the documented tie rule.
    const double tie_tol = 1e-12;
    int correct = 0;
    for (int i = 0; i < total; ++i) {
        double best = 1e300;
        for (int j = 0; j < total; ++j)
            if (j != i) best = std::min(best, dist[std::size_t(i) * total + j]);
        bool own_at_best = false, other_at_best = false;
        for (int j = 0; j < total; ++j) {
            if (j == i) continue;
            if (dist[std::size_t(i) * total + j] <= best + tie_tol) {
                bool same_set = (i < nr) == (j < nr);
                (same_set ? own_at_best : other_at_best) = true;
            }
        }
        bool predicted_own = own_at_best && !other_at_best;  // ties -> other set
        if (predicted_own) ++correct;
    }
    out.one_nna = double(correct) / double(total);
    return out;
}

// ---------------------------------------------------------------------------
// Conditional fidelity: mean L1 between target and measured moments, per
// moment family. Empty components are excluded and counted.
// ---------------------------------------------------------------------------
struct FidelityAccumulator {
    double size_sum = 0, pos_sum = 0, shape_sum = 0;
    std::int64_t size_n = 0, pos_n = 0, shape_n = 0;
    int excluded = 0;

    void add(const GeometricMoments& measured, const std::vector<MomentConstraint>& targets) {
        if (measured.size() != targets.size())
            throw std::invalid_argument("fidelity: group count mismatch");
        for (std::size_t k = 0; k < targets.size(); ++k) {
            const auto& t = targets[k];
            const auto& cm = measured[k];
            if (cm.empty) {
                ++excluded;
                continue;
            }
            if (t.mass_on) {
                size_sum += std::abs(cm.mass - t.mass_target);
                size_n += 1;
            }
            if (t.centroid_on) {
                for (int a = 0; a < 3; ++a)
                    pos_sum += std::abs(cm.centroid[a] - t.centroid_target[a]);
                pos_n += 3;
            }
            if (t.shape_on) {
                for (int i = 0; i < 9; ++i)
                    shape_sum += std::abs(cm.cov_normalized.m[i] - t.shape_target.m[i]);
                shape_n += 9;
            }
        }
    }

    double size() const { return size_n ? size_sum / double(size_n) : 0.0; }
    double position() const { return pos_n ? pos_sum / double(pos_n) : 0.0; }
    double shape() const { return shape_n ? shape_sum / double(shape_n) : 0.0; }

    // Paper-style display scalings: size x1e4, position/shape x1e3.
    double size_scaled() const { return size() * 1e4; }
    double position_scaled() const { return position() * 1e3; }
    double shape_scaled() const { return shape() * 1e3; }
};

// ---------------------------------------------------------------------------
// Morph report rows: per label, mass, centroid x, polar angle of the
// principal axis, elongation lambda1/lambda2 (capped when degenerate).
// ---------------------------------------------------------------------------
struct MorphRow {
    int label = 0;
    double mass = 0;
    double centroid_x = 0;
    double polar_angle = 0;  // radians in [0, pi/2], axis sign folded out
    double elongation = 1;
    bool empty = false;
    bool capped = false;
};

inline constexpr double kElongationCap = 1e12;

inline std::vector<MorphRow> morph_report(const LabelGrid& grid) {
    ComponentSelection sel = ComponentSelection::singletons(grid.channels);
    GeometricMoments m = extract_moments(select_components(grid, sel));
    std::vector<MorphRow> rows;
    for (std::size_t k = 0; k < m.size(); ++k) {
        MorphRow row;
        row.label = int(k) + 1;
        const auto& cm = m[k];
        row.mass = cm.mass;
        if (cm.empty) {
            row.empty = true;
            rows.push_back(row);
            continue;
        }
        row.centroid_x = cm.centroid.x;
        SymEig3 eig = eigen_sym3(cm.cov);
        Vec3 principal = eig.eigenvectors.col(0);
        row.polar_angle = std::acos(std::clamp(std::abs(principal.z), 0.0, 1.0));
        if (eig.eigenvalues.y < 1e-12) {
            row.elongation = kElongationCap;
            row.capped = true;
        } else {
            row.elongation = eig.eigenvalues.x / eig.eigenvalues.y;
        }
        rows.push_back(row);
    }
    return rows;
}

}  // namespace gmg
