#pragma once

// Minimal fixed-graph neural net kernels with explicit backward passes.
// Everything is templated on the scalar type: float at runtime, double in
// gradient-check tests. Layout is [C][H][W][D] with D contiguous.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace gmg::nn {

template <class T>
struct Tensor {
    int c = 0, h = 0, w = 0, d = 0;
    std::vector<T> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_, int d_)
        : c(c_), h(h_), w(w_), d(d_), v(std::size_t(c_) * h_ * w_ * d_, T(0)) {}

    std::int64_t spatial() const { return std::int64_t(h) * w * d; }
    std::int64_t size() const { return std::int64_t(c) * spatial(); }

    T* ch(int i) { return v.data() + std::size_t(i) * spatial(); }
    const T* ch(int i) const { return v.data() + std::size_t(i) * spatial(); }

    void zero() { std::fill(v.begin(), v.end(), T(0)); }
    bool same_dims(const Tensor& o) const {
        return c == o.c && h == o.h && w == o.w && d == o.d;
    }
};

// ---------------------------------------------------------------------------
// Parameter registry: one flat vector, layers hold offsets. Serialization and
// optimizer state follow the registration order.
// ---------------------------------------------------------------------------
template <class T>
struct ParamStore {
    struct Entry {
        std::string name;
        std::size_t offset = 0, count = 0;
    };

    std::vector<T> data;
    std::vector<Entry> entries;

    std::size_t add(const std::string& name, std::size_t count) {
        std::size_t off = data.size();
        data.resize(off + count, T(0));
        entries.push_back({name, off, count});
        return off;
    }

    std::size_t size() const { return data.size(); }
};

// ---------------------------------------------------------------------------
// Layers: plain descriptors over the store.
// ---------------------------------------------------------------------------
struct Conv3d {           // dense 3x3x3, padding 1
    int cin = 0, cout = 0, stride = 1;
    std::size_t w_off = 0, b_off = 0;  // w: [cout][cin][27]
};

struct Depthwise3d {      // per-channel 3x3x3, padding 1, stride 1
    int ch = 0;
    std::size_t w_off = 0, b_off = 0;  // w: [ch][27]
};

struct Pointwise {        // 1x1x1 channel mix
    int cin = 0, cout = 0;
    std::size_t w_off = 0, b_off = 0;  // w: [cout][cin]
};

struct GroupNorm {
    int ch = 0, groups = 1;
    std::size_t gamma_off = 0, beta_off = 0;
    static constexpr double eps = 1e-5;
};

struct Linear {
    int in = 0, out = 0;
    std::size_t w_off = 0, b_off = 0;  // w: [out][in]
};

// ---------------------------------------------------------------------------
// conv3d
// ---------------------------------------------------------------------------
namespace detail {

template <class T>
void pad1(const Tensor<T>& in, std::vector<T>& padded) {
    const int ph = in.h + 2, pw = in.w + 2, pd = in.d + 2;
    padded.assign(std::size_t(in.c) * ph * pw * pd, T(0));
    for (int c = 0; c < in.c; ++c) {
        const T* src = in.ch(c);
        T* dst = padded.data() + std::size_t(c) * ph * pw * pd;
        for (int z = 0; z < in.h; ++z)
            for (int y = 0; y < in.w; ++y)
                std::memcpy(dst + ((std::size_t(z + 1) * pw + (y + 1)) * pd + 1),
                            src + (std::size_t(z) * in.w + y) * in.d, sizeof(T) * in.d);
    }
}

template <class T>
void unpad1_add(const std::vector<T>& padded, Tensor<T>& out) {
    const int ph = out.h + 2, pw = out.w + 2, pd = out.d + 2;
    for (int c = 0; c < out.c; ++c) {
        const T* src = padded.data() + std::size_t(c) * ph * pw * pd;
        T* dst = out.ch(c);
        for (int z = 0; z < out.h; ++z)
            for (int y = 0; y < out.w; ++y) {
                const T* s = src + (std::size_t(z + 1) * pw + (y + 1)) * pd + 1;
                T* o = dst + (std::size_t(z) * out.w + y) * out.d;
                for (int x = 0; x < out.d; ++x) o[x] += s[x];
            }
    }
}

}  // namespace detail

template <class T>
Tensor<T> conv3d_forward(const Conv3d& layer, const std::vector<T>& params, const Tensor<T>& in) {
    const int oh = in.h / layer.stride, ow = in.w / layer.stride, od = in.d / layer.stride;
    Tensor<T> out(layer.cout, oh, ow, od);
    std::vector<T> padded;
    detail::pad1(in, padded);
    const int ph = in.h + 2, pw = in.w + 2, pd = in.d + 2;
    const int s = layer.stride;

    for (int co = 0; co < layer.cout; ++co) {
        T* o = out.ch(co);
        const T bias = params[layer.b_off + co];
        for (std::int64_t i = 0; i < out.spatial(); ++i) o[i] = bias;
        for (int ci = 0; ci < layer.cin; ++ci) {
            const T* wp = params.data() + layer.w_off + (std::size_t(co) * layer.cin + ci) * 27;
            const T* ip = padded.data() + std::size_t(ci) * ph * pw * pd;
            for (int t = 0; t < 27; ++t) {
                const int dz = t / 9, dy = (t / 3) % 3, dx = t % 3;
                const T wv = wp[t];
                if (s == 1) {
                    for (int z = 0; z < oh; ++z)
                        for (int y = 0; y < ow; ++y) {
                            const T* irow = ip + (std::size_t(z + dz) * pw + (y + dy)) * pd + dx;
                            T* orow = o + (std::size_t(z) * ow + y) * od;
                            for (int x = 0; x < od; ++x) orow[x] += wv * irow[x];
                        }
                } else {
                    for (int z = 0; z < oh; ++z)
                        for (int y = 0; y < ow; ++y) {
                            const T* irow =
                                ip + (std::size_t(z * s + dz) * pw + (y * s + dy)) * pd + dx;
                            T* orow = o + (std::size_t(z) * ow + y) * od;
                            for (int x = 0; x < od; ++x) orow[x] += wv * irow[x * s];
                        }
                }
            }
        }
    }
    return out;
}

template <class T>
void conv3d_backward(const Conv3d& layer, const std::vector<T>& params, const Tensor<T>& in,
                     const Tensor<T>& d_out, Tensor<T>* d_in, std::vector<T>* param_grads) {
    const int oh = d_out.h, ow = d_out.w, od = d_out.d;
    const int ph = in.h + 2, pw = in.w + 2, pd = in.d + 2;
    const int s = layer.stride;

    std::vector<T> padded_in;
    detail::pad1(in, padded_in);
    std::vector<T> padded_din;
    if (d_in) padded_din.assign(std::size_t(in.c) * ph * pw * pd, T(0));

    for (int co = 0; co < layer.cout; ++co) {
        const T* go = d_out.ch(co);
        if (param_grads) {
            T acc = 0;
            for (std::int64_t i = 0; i < d_out.spatial(); ++i) acc += go[i];
            (*param_grads)[layer.b_off + co] += acc;
        }
        for (int ci = 0; ci < layer.cin; ++ci) {
            const std::size_t w_base = layer.w_off + (std::size_t(co) * layer.cin + ci) * 27;
            const T* ip = padded_in.data() + std::size_t(ci) * ph * pw * pd;
            T* gp = d_in ? padded_din.data() + std::size_t(ci) * ph * pw * pd : nullptr;
            for (int t = 0; t < 27; ++t) {
                const int dz = t / 9, dy = (t / 3) % 3, dx = t % 3;
                const T wv = params[w_base + t];
                T wg = 0;
                for (int z = 0; z < oh; ++z)
                    for (int y = 0; y < ow; ++y) {
                        const std::size_t ibase =
                            (std::size_t(z * s + dz) * pw + (y * s + dy)) * pd + dx;
                        const T* grow = go + (std::size_t(z) * ow + y) * od;
                        const T* irow = ip + ibase;
                        if (param_grads) {
                            for (int x = 0; x < od; ++x) wg += grow[x] * irow[std::size_t(x) * s];
                        }
                        if (gp) {
                            T* garr = gp + ibase;
                            for (int x = 0; x < od; ++x) garr[std::size_t(x) * s] += wv * grow[x];
                        }
                    }
                if (param_grads) (*param_grads)[w_base + t] += wg;
            }
        }
    }
    if (d_in) {
        *d_in = Tensor<T>(in.c, in.h, in.w, in.d);
        detail::unpad1_add(padded_din, *d_in);
    }
}

// ---------------------------------------------------------------------------
// depthwise conv3d (stride 1)
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> depthwise_forward(const Depthwise3d& layer, const std::vector<T>& params,
                            const Tensor<T>& in) {
    Tensor<T> out(in.c, in.h, in.w, in.d);
    std::vector<T> padded;
    detail::pad1(in, padded);
    const int ph = in.h + 2, pw = in.w + 2, pd = in.d + 2;

    for (int c = 0; c < in.c; ++c) {
        T* o = out.ch(c);
        const T bias = params[layer.b_off + c];
        for (std::int64_t i = 0; i < out.spatial(); ++i) o[i] = bias;
        const T* wp = params.data() + layer.w_off + std::size_t(c) * 27;
        const T* ip = padded.data() + std::size_t(c) * ph * pw * pd;
        for (int t = 0; t < 27; ++t) {
            const int dz = t / 9, dy = (t / 3) % 3, dx = t % 3;
            const T wv = wp[t];
            for (int z = 0; z < in.h; ++z)
                for (int y = 0; y < in.w; ++y) {
                    const T* irow = ip + (std::size_t(z + dz) * pw + (y + dy)) * pd + dx;
                    T* orow = o + (std::size_t(z) * in.w + y) * in.d;
                    for (int x = 0; x < in.d; ++x) orow[x] += wv * irow[x];
                }
        }
    }
    return out;
}

template <class T>
void depthwise_backward(const Depthwise3d& layer, const std::vector<T>& params,
                        const Tensor<T>& in, const Tensor<T>& d_out, Tensor<T>* d_in,
                        std::vector<T>* param_grads) {
    const int ph = in.h + 2, pw = in.w + 2, pd = in.d + 2;
    std::vector<T> padded_in;
    detail::pad1(in, padded_in);
    std::vector<T> padded_din;
    if (d_in) padded_din.assign(std::size_t(in.c) * ph * pw * pd, T(0));

    for (int c = 0; c < in.c; ++c) {
        const T* go = d_out.ch(c);
        if (param_grads) {
            T acc = 0;
            for (std::int64_t i = 0; i < d_out.spatial(); ++i) acc += go[i];
            (*param_grads)[layer.b_off + c] += acc;
        }
        const std::size_t w_base = layer.w_off + std::size_t(c) * 27;
        const T* ip = padded_in.data() + std::size_t(c) * ph * pw * pd;
        T* gp = d_in ? padded_din.data() + std::size_t(c) * ph * pw * pd : nullptr;
        for (int t = 0; t < 27; ++t) {
            const int dz = t / 9, dy = (t / 3) % 3, dx = t % 3;
            const T wv = params[w_base + t];
            T wg = 0;
            for (int z = 0; z < in.h; ++z)
                for (int y = 0; y < in.w; ++y) {
                    const std::size_t ibase = (std::size_t(z + dz) * pw + (y + dy)) * pd + dx;
                    const T* grow = go + (std::size_t(z) * in.w + y) * in.d;
                    if (param_grads) {
                        const T* irow = ip + ibase;
                        for (int x = 0; x < in.d; ++x) wg += grow[x] * irow[x];
                    }
                    if (gp) {
                        T* garr = gp + ibase;
                        for (int x = 0; x < in.d; ++x) garr[x] += wv * grow[x];
                    }
                }
            if (param_grads) (*param_grads)[w_base + t] += wg;
        }
    }
    if (d_in) {
        *d_in = Tensor<T>(in.c, in.h, in.w, in.d);
        detail::unpad1_add(padded_din, *d_in);
    }
}

// ---------------------------------------------------------------------------
// pointwise (1x1x1)
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> pointwise_forward(const Pointwise& layer, const std::vector<T>& params,
                            const Tensor<T>& in) {
    Tensor<T> out(layer.cout, in.h, in.w, in.d);
    const std::int64_t n = in.spatial();
    for (int co = 0; co < layer.cout; ++co) {
        T* o = out.ch(co);
        const T bias = params[layer.b_off + co];
        for (std::int64_t i = 0; i < n; ++i) o[i] = bias;
        for (int ci = 0; ci < layer.cin; ++ci) {
            const T wv = params[layer.w_off + std::size_t(co) * layer.cin + ci];
            const T* ip = in.ch(ci);
            for (std::int64_t i = 0; i < n; ++i) o[i] += wv * ip[i];
        }
    }
    return out;
}

template <class T>
void pointwise_backward(const Pointwise& layer, const std::vector<T>& params, const Tensor<T>& in,
                        const Tensor<T>& d_out, Tensor<T>* d_in, std::vector<T>* param_grads) {
    const std::int64_t n = in.spatial();
    if (d_in) *d_in = Tensor<T>(in.c, in.h, in.w, in.d);
    for (int co = 0; co < layer.cout; ++co) {
        const T* go = d_out.ch(co);
        if (param_grads) {
            T acc = 0;
            for (std::int64_t i = 0; i < n; ++i) acc += go[i];
            (*param_grads)[layer.b_off + co] += acc;
        }
        for (int ci = 0; ci < layer.cin; ++ci) {
            const T wv = params[layer.w_off + std::size_t(co) * layer.cin + ci];
            const T* ip = in.ch(ci);
            if (param_grads) {
                T wg = 0;
                for (std::int64_t i = 0; i < n; ++i) wg += go[i] * ip[i];
                (*param_grads)[layer.w_off + std::size_t(co) * layer.cin + ci] += wg;
            }
            if (d_in) {
                T* gi = d_in->ch(ci);
                for (std::int64_t i = 0; i < n; ++i) gi[i] += wv * go[i];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// group norm
// ---------------------------------------------------------------------------
template <class T>
struct GroupNormCache {
    std::vector<T> mean, rstd;  // per group
    Tensor<T> normalized;       // (x - mean) * rstd, before scale/shift
};

template <class T>
Tensor<T> groupnorm_forward(const GroupNorm& layer, const std::vector<T>& params,
                            const Tensor<T>& in, GroupNormCache<T>& cache) {
    const int per_group = layer.ch / layer.groups;
    const std::int64_t n = in.spatial();
    Tensor<T> out(in.c, in.h, in.w, in.d);
    cache.mean.assign(layer.groups, T(0));
    cache.rstd.assign(layer.groups, T(0));
    cache.normalized = Tensor<T>(in.c, in.h, in.w, in.d);

    for (int g = 0; g < layer.groups; ++g) {
        const std::int64_t count = std::int64_t(per_group) * n;
        double mean = 0;
        for (int c = g * per_group; c < (g + 1) * per_group; ++c) {
            const T* ip = in.ch(c);
            for (std::int64_t i = 0; i < n; ++i) mean += double(ip[i]);
        }
        mean /= double(count);
        double var = 0;
        for (int c = g * per_group; c < (g + 1) * per_group; ++c) {
            const T* ip = in.ch(c);
            for (std::int64_t i = 0; i < n; ++i) {
                double d = double(ip[i]) - mean;
                var += d * d;
            }
        }
        var /= double(count);
        const double rstd = 1.0 / std::sqrt(var + GroupNorm::eps);
        cache.mean[g] = T(mean);
        cache.rstd[g] = T(rstd);
        for (int c = g * per_group; c < (g + 1) * per_group; ++c) {
            const T* ip = in.ch(c);
            T* np = cache.normalized.ch(c);
            T* op = out.ch(c);
            const T gamma = params[layer.gamma_off + c];
            const T beta = params[layer.beta_off + c];
            for (std::int64_t i = 0; i < n; ++i) {
                T nv = T((double(ip[i]) - mean) * rstd);
                np[i] = nv;
                op[i] = gamma * nv + beta;
            }
        }
    }
    return out;
}

template <class T>
void groupnorm_backward(const GroupNorm& layer, const std::vector<T>& params,
                        const GroupNormCache<T>& cache, const Tensor<T>& d_out, Tensor<T>* d_in,
                        std::vector<T>* param_grads) {
    const int per_group = layer.ch / layer.groups;
    const std::int64_t n = cache.normalized.spatial();
    if (d_in) *d_in = Tensor<T>(d_out.c, d_out.h, d_out.w, d_out.d);

    for (int g = 0; g < layer.groups; ++g) {
        const double count = double(per_group) * double(n);
        // d_norm = d_out * gamma; need sums of d_norm and d_norm*normalized.
        double sum_dn = 0, sum_dn_x = 0;
        for (int c = g * per_group; c < (g + 1) * per_group; ++c) {
            const T gamma = params[layer.gamma_off + c];
            const T* go = d_out.ch(c);
            const T* np = cache.normalized.ch(c);
            double g_gamma = 0, g_beta = 0;
            for (std::int64_t i = 0; i < n; ++i) {
                double dn = double(go[i]) * double(gamma);
                sum_dn += dn;
                sum_dn_x += dn * double(np[i]);
                g_gamma += double(go[i]) * double(np[i]);
                g_beta += double(go[i]);
            }
            if (param_grads) {
                (*param_grads)[layer.gamma_off + c] += T(g_gamma);
                (*param_grads)[layer.beta_off + c] += T(g_beta);
            }
        }
        if (!d_in) continue;
        const double rstd = double(cache.rstd[g]);
        for (int c = g * per_group; c < (g + 1) * per_group; ++c) {
            const T gamma = params[layer.gamma_off + c];
            const T* go = d_out.ch(c);
            const T* np = cache.normalized.ch(c);
            T* gi = d_in->ch(c);
            for (std::int64_t i = 0; i < n; ++i) {
                double dn = double(go[i]) * double(gamma);
                gi[i] = T(rstd * (dn - sum_dn / count - double(np[i]) * sum_dn_x / count));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// SiLU
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> silu_forward(const Tensor<T>& in) {
    Tensor<T> out(in.c, in.h, in.w, in.d);
    for (std::size_t i = 0; i < in.v.size(); ++i) {
        double x = double(in.v[i]);
        out.v[i] = T(x / (1.0 + std::exp(-x)));
    }
    return out;
}

template <class T>
Tensor<T> silu_backward(const Tensor<T>& in, const Tensor<T>& d_out) {
    Tensor<T> d_in(in.c, in.h, in.w, in.d);
    for (std::size_t i = 0; i < in.v.size(); ++i) {
        double x = double(in.v[i]);
        double s = 1.0 / (1.0 + std::exp(-x));
        d_in.v[i] = T(double(d_out.v[i]) * (s * (1.0 + x * (1.0 - s))));
    }
    return d_in;
}

// ---------------------------------------------------------------------------
// FiLM: per-channel y = x * (1 + scale_c) + shift_c, scale/shift from the
// conditioning vector.
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> film_forward(const Tensor<T>& in, const std::vector<T>& scale_shift) {
    // scale_shift: [2*C], first C scales then C shifts.
    Tensor<T> out(in.c, in.h, in.w, in.d);
    const std::int64_t n = in.spatial();
    for (int c = 0; c < in.c; ++c) {
        const T s = T(1) + scale_shift[c];
        const T b = scale_shift[std::size_t(in.c) + c];
        const T* ip = in.ch(c);
        T* op = out.ch(c);
        for (std::int64_t i = 0; i < n; ++i) op[i] = s * ip[i] + b;
    }
    return out;
}

template <class T>
void film_backward(const Tensor<T>& in, const std::vector<T>& scale_shift, const Tensor<T>& d_out,
                   Tensor<T>* d_in, std::vector<T>* d_scale_shift) {
    const std::int64_t n = in.spatial();
    if (d_in) *d_in = Tensor<T>(in.c, in.h, in.w, in.d);
    if (d_scale_shift) d_scale_shift->assign(std::size_t(in.c) * 2, T(0));
    for (int c = 0; c < in.c; ++c) {
        const T s = T(1) + scale_shift[c];
        const T* ip = in.ch(c);
        const T* go = d_out.ch(c);
        T ds = 0, db = 0;
        T* gi = d_in ? d_in->ch(c) : nullptr;
        for (std::int64_t i = 0; i < n; ++i) {
            if (gi) gi[i] = s * go[i];
            ds += go[i] * ip[i];
            db += go[i];
        }
        if (d_scale_shift) {
            (*d_scale_shift)[c] = ds;
            (*d_scale_shift)[std::size_t(in.c) + c] = db;
        }
    }
}

// ---------------------------------------------------------------------------
// Trilinear 2x upsample: output voxel centers sample the input at
// (o + 0.5)/2 - 0.5 per axis, clamped at the borders.
// ---------------------------------------------------------------------------
namespace detail {
inline void up2_taps(int o, int n_in, int& i0, int& i1, double& w1) {
    double x = (o + 0.5) / 2.0 - 0.5;
    double f = std::floor(x);
    i0 = int(f);
    i1 = i0 + 1;
    w1 = x - f;
    if (i0 < 0) i0 = 0;
    if (i1 > n_in - 1) i1 = n_in - 1;
}
}  // namespace detail

template <class T>
Tensor<T> upsample2_forward(const Tensor<T>& in) {
    Tensor<T> out(in.c, in.h * 2, in.w * 2, in.d * 2);
    for (int c = 0; c < in.c; ++c) {
        const T* ip = in.ch(c);
        T* op = out.ch(c);
        for (int z = 0; z < out.h; ++z) {
            int z0, z1;
            double wz;
            detail::up2_taps(z, in.h, z0, z1, wz);
            for (int y = 0; y < out.w; ++y) {
                int y0, y1;
                double wy;
                detail::up2_taps(y, in.w, y0, y1, wy);
                for (int x = 0; x < out.d; ++x) {
                    int x0, x1;
                    double wx;
                    detail::up2_taps(x, in.d, x0, x1, wx);
                    auto at = [&](int a, int b, int cc) {
                        return double(ip[(std::size_t(a) * in.w + b) * in.d + cc]);
                    };
                    double v = (1 - wz) * ((1 - wy) * ((1 - wx) * at(z0, y0, x0) + wx * at(z0, y0, x1)) +
                                           wy * ((1 - wx) * at(z0, y1, x0) + wx * at(z0, y1, x1))) +
                               wz * ((1 - wy) * ((1 - wx) * at(z1, y0, x0) + wx * at(z1, y0, x1)) +
                                     wy * ((1 - wx) * at(z1, y1, x0) + wx * at(z1, y1, x1)));
                    op[(std::size_t(z) * out.w + y) * out.d + x] = T(v);
                }
            }
        }
    }
    return out;
}

template <class T>
Tensor<T> upsample2_backward(int in_c, int in_h, int in_w, int in_d, const Tensor<T>& d_out) {
    Tensor<T> d_in(in_c, in_h, in_w, in_d);
    for (int c = 0; c < in_c; ++c) {
        T* gi = d_in.ch(c);
        const T* go = d_out.ch(c);
        for (int z = 0; z < d_out.h; ++z) {
            int z0, z1;
            double wz;
            detail::up2_taps(z, in_h, z0, z1, wz);
            for (int y = 0; y < d_out.w; ++y) {
                int y0, y1;
                double wy;
                detail::up2_taps(y, in_w, y0, y1, wy);
                for (int x = 0; x < d_out.d; ++x) {
                    int x0, x1;
                    double wx;
                    detail::up2_taps(x, in_d, x0, x1, wx);
                    double g = double(go[(std::size_t(z) * d_out.w + y) * d_out.d + x]);
                    auto add = [&](int a, int b, int cc, double w) {
                        gi[(std::size_t(a) * in_w + b) * in_d + cc] += T(g * w);
                    };
                    add(z0, y0, x0, (1 - wz) * (1 - wy) * (1 - wx));
                    add(z0, y0, x1, (1 - wz) * (1 - wy) * wx);
                    add(z0, y1, x0, (1 - wz) * wy * (1 - wx));
                    add(z0, y1, x1, (1 - wz) * wy * wx);
                    add(z1, y0, x0, wz * (1 - wy) * (1 - wx));
                    add(z1, y0, x1, wz * (1 - wy) * wx);
                    add(z1, y1, x0, wz * wy * (1 - wx));
                    add(z1, y1, x1, wz * wy * wx);
                }
            }
        }
    }
    return d_in;
}

// ---------------------------------------------------------------------------
// Linear (vectors)
// ---------------------------------------------------------------------------
template <class T>
std::vector<T> linear_forward(const Linear& layer, const std::vector<T>& params,
                              const std::vector<T>& in) {
    std::vector<T> out(layer.out);
    for (int o = 0; o < layer.out; ++o) {
        T acc = params[layer.b_off + o];
        const T* wp = params.data() + layer.w_off + std::size_t(o) * layer.in;
        for (int i = 0; i < layer.in; ++i) acc += wp[i] * in[i];
        out[o] = acc;
    }
    return out;
}

template <class T>
void linear_backward(const Linear& layer, const std::vector<T>& params, const std::vector<T>& in,
                     const std::vector<T>& d_out, std::vector<T>* d_in,
                     std::vector<T>* param_grads) {
    if (d_in) d_in->assign(layer.in, T(0));
    for (int o = 0; o < layer.out; ++o) {
        const T go = d_out[o];
        const T* wp = params.data() + layer.w_off + std::size_t(o) * layer.in;
        if (param_grads) {
            (*param_grads)[layer.b_off + o] += go;
            T* wg = param_grads->data() + layer.w_off + std::size_t(o) * layer.in;
            for (int i = 0; i < layer.in; ++i) wg[i] += go * in[i];
        }
        if (d_in)
            for (int i = 0; i < layer.in; ++i) (*d_in)[i] += wp[i] * go;
    }
}

template <class T>
std::vector<T> silu_vec(const std::vector<T>& in) {
    std::vector<T> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        double x = double(in[i]);
        out[i] = T(x / (1.0 + std::exp(-x)));
    }
    return out;
}

template <class T>
std::vector<T> silu_vec_backward(const std::vector<T>& in, const std::vector<T>& d_out) {
    std::vector<T> d_in(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        double x = double(in[i]);
        double s = 1.0 / (1.0 + std::exp(-x));
        d_in[i] = T(double(d_out[i]) * (s * (1.0 + x * (1.0 - s))));
    }
    return d_in;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------
template <class T>
struct Adam {
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<T> m, v;
    std::int64_t t = 0;

    void step(std::vector<T>& params, const std::vector<T>& grads) {
        if (m.empty()) {
            m.assign(params.size(), T(0));
            v.assign(params.size(), T(0));
        }
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, double(t));
        const double bc2 = 1.0 - std::pow(beta2, double(t));
        for (std::size_t i = 0; i < params.size(); ++i) {
            double g = double(grads[i]);
            double mi = beta1 * double(m[i]) + (1.0 - beta1) * g;
            double vi = beta2 * double(v[i]) + (1.0 - beta2) * g * g;
            m[i] = T(mi);
            v[i] = T(vi);
            params[i] -= T(lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
        }
    }
};

}  // namespace gmg::nn
