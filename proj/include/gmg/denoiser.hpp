#pragma once

// The trainable clean-data predictor D(z; sigma): a small 3-level conv
// residual net (32^3 head, 16^3, 8^3) under EDM-style sigma preconditioning:
//   D(z; sigma) = c_skip * z + c_out * F(c_in * z; c_noise)
// As sigma -> 0 the skip path dominates and D -> z.

#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gmg/common.hpp"
#include "gmg/nn.hpp"

namespace gmg {

struct Preconditioning {
    double sigma_data = 1.0;

    double c_skip(double sigma) const {
        double sd2 = sigma_data * sigma_data;
        return sd2 / (sigma * sigma + sd2);
    }
    double c_out(double sigma) const {
        double sd2 = sigma_data * sigma_data;
        return sigma * sigma_data / std::sqrt(sigma * sigma + sd2);
    }
    double c_in(double sigma) const {
        double sd2 = sigma_data * sigma_data;
        return 1.0 / std::sqrt(sigma * sigma + sd2);
    }
    double c_noise(double sigma) const { return 0.25 * std::log(sigma); }
    // EDM loss weight, 1 / c_out^2.
    double loss_weight(double sigma) const {
        double co = c_out(sigma);
        return 1.0 / (co * co);
    }
};

struct NetConfig {
    int channels = 5;  // data channels
    int base = 16;     // 16^3 width
    int mid = 32;      // 8^3 width
    int head = 8;      // 32^3 head width
    int emb = 32;
    double sigma_data = 1.0;

    bool operator==(const NetConfig&) const = default;
};

// ---------------------------------------------------------------------------
// The raw network F. Hand-wired forward/backward over a fixed graph.
// ---------------------------------------------------------------------------
template <class T>
class DenoiserNet {
  public:
    using Tensor = nn::Tensor<T>;

    // The stem sees the data channels plus 3 normalized coordinate channels,
    // giving the otherwise translation-equivariant net absolute position.
    static constexpr int kCoordChannels = 3;

    explicit DenoiserNet(const NetConfig& cfg) : cfg_(cfg) {
        const int C = cfg.channels + kCoordChannels;
        const int B = cfg.base, M = cfg.mid, H = cfg.head, E = cfg.emb;

        emb1_ = {1, E, store_.add("emb1.w", std::size_t(E)), store_.add("emb1.b", E)};
        emb2_ = {E, E, store_.add("emb2.w", std::size_t(E) * E), store_.add("emb2.b", E)};

        stem_ = {C, B, 2, store_.add("stem.w", std::size_t(B) * C * 27), store_.add("stem.b", B)};

        gn1_ = {B, 4, store_.add("blk1.gn.gamma", B), store_.add("blk1.gn.beta", B)};
        film1_ = {E, 2 * B, store_.add("blk1.film.w", std::size_t(2 * B) * E),
                  store_.add("blk1.film.b", 2 * B)};
        dw1_ = {B, store_.add("blk1.dw.w", std::size_t(B) * 27), store_.add("blk1.dw.b", B)};
        pw1_ = {B, B, store_.add("blk1.pw.w", std::size_t(B) * B), store_.add("blk1.pw.b", B)};

        down_ = {B, M, 2, store_.add("down.w", std::size_t(M) * B * 27), store_.add("down.b", M)};

        for (int i = 0; i < 2; ++i) {
            std::string p = "mid" + std::to_string(i + 1) + ".";
            gnm_[i] = {M, 4, store_.add(p + "gn.gamma", M), store_.add(p + "gn.beta", M)};
            filmm_[i] = {E, 2 * M, store_.add(p + "film.w", std::size_t(2 * M) * E),
                         store_.add(p + "film.b", 2 * M)};
            convm_[i] = {M, M, 1, store_.add(p + "conv.w", std::size_t(M) * M * 27),
                         store_.add(p + "conv.b", M)};
        }

        up1_ = {M, B, store_.add("up1.w", std::size_t(B) * M), store_.add("up1.b", B)};

        gn2_ = {B, 4, store_.add("blk2.gn.gamma", B), store_.add("blk2.gn.beta", B)};
        film2_ = {E, 2 * B, store_.add("blk2.film.w", std::size_t(2 * B) * E),
                  store_.add("blk2.film.b", 2 * B)};
        dw2_ = {B, store_.add("blk2.dw.w", std::size_t(B) * 27), store_.add("blk2.dw.b", B)};
        pw2_ = {B, B, store_.add("blk2.pw.w", std::size_t(B) * B), store_.add("blk2.pw.b", B)};

        up2_ = {B, H, store_.add("up2.w", std::size_t(H) * B), store_.add("up2.b", H)};

        // Full-resolution local branch: per-voxel features straight from the
        // input, merged into the head so 32^3 label boundaries do not have to
        // survive a 16^3 bottleneck.
        loc_pw_ = {C, H, store_.add("local.pw.w", std::size_t(H) * C), store_.add("local.pw.b", H)};
        loc_dw_ = {H, store_.add("local.dw.w", std::size_t(H) * 27), store_.add("local.dw.b", H)};

        gnh_ = {H, 4, store_.add("head.gn.gamma", H), store_.add("head.gn.beta", H)};
        dwh_ = {H, store_.add("head.dw.w", std::size_t(H) * 27), store_.add("head.dw.b", H)};
        pwh_ = {H, cfg.channels, store_.add("head.pw.w", std::size_t(cfg.channels) * H),
                store_.add("head.pw.b", cfg.channels)};
    }

    int input_channels() const { return cfg_.channels + kCoordChannels; }

    const NetConfig& config() const { return cfg_; }
    std::size_t param_count() const { return store_.size(); }
    std::vector<T>& params() { return store_.data; }
    const std::vector<T>& params() const { return store_.data; }
    const std::vector<typename nn::ParamStore<T>::Entry>& param_entries() const {
        return store_.entries;
    }

    void init_weights(Rng& rng) {
        auto he = [&](std::size_t off, std::size_t count, int fan_in) {
            double std = std::sqrt(2.0 / double(fan_in));
            for (std::size_t i = 0; i < count; ++i) store_.data[off + i] = T(rng.normal() * std);
        };
        auto zeros = [&](std::size_t off, std::size_t count) {
            for (std::size_t i = 0; i < count; ++i) store_.data[off + i] = T(0);
        };
        auto ones = [&](std::size_t off, std::size_t count) {
            for (std::size_t i = 0; i < count; ++i) store_.data[off + i] = T(1);
        };

        for (const auto& e : store_.entries) zeros(e.offset, e.count);

        he(emb1_.w_off, std::size_t(emb1_.out) * emb1_.in, emb1_.in);
        he(emb2_.w_off, std::size_t(emb2_.out) * emb2_.in, emb2_.in);
        he(stem_.w_off, std::size_t(stem_.cout) * stem_.cin * 27, stem_.cin * 27);
        he(down_.w_off, std::size_t(down_.cout) * down_.cin * 27, down_.cin * 27);
        for (int i = 0; i < 2; ++i)
            he(convm_[i].w_off, std::size_t(convm_[i].cout) * convm_[i].cin * 27,
               convm_[i].cin * 27);
        he(dw1_.w_off, std::size_t(dw1_.ch) * 27, 27);
        he(dw2_.w_off, std::size_t(dw2_.ch) * 27, 27);
        he(dwh_.w_off, std::size_t(dwh_.ch) * 27, 27);
        he(pw1_.w_off, std::size_t(pw1_.cout) * pw1_.cin, pw1_.cin);
        he(pw2_.w_off, std::size_t(pw2_.cout) * pw2_.cin, pw2_.cin);
        he(up1_.w_off, std::size_t(up1_.cout) * up1_.cin, up1_.cin);
        he(up2_.w_off, std::size_t(up2_.cout) * up2_.cin, up2_.cin);
        he(loc_pw_.w_off, std::size_t(loc_pw_.cout) * loc_pw_.cin, loc_pw_.cin);
        he(loc_dw_.w_off, std::size_t(loc_dw_.ch) * 27, 27);

        ones(gn1_.gamma_off, gn1_.ch);
        ones(gn2_.gamma_off, gn2_.ch);
        ones(gnh_.gamma_off, gnh_.ch);
        for (int i = 0; i < 2; ++i) ones(gnm_[i].gamma_off, gnm_[i].ch);

        // FiLM linears and the output head start at zero: the untrained net
        // is the identity-skip denoiser.
        zeros(film1_.w_off, std::size_t(film1_.out) * film1_.in);
        zeros(film2_.w_off, std::size_t(film2_.out) * film2_.in);
        for (int i = 0; i < 2; ++i)
            zeros(filmm_[i].w_off, std::size_t(filmm_[i].out) * filmm_[i].in);
        zeros(pwh_.w_off, std::size_t(pwh_.cout) * pwh_.cin);
        zeros(pwh_.b_off, pwh_.cout);
    }

    struct Workspace {
        std::vector<T> u;                          // c_noise input
        std::vector<T> e_pre1, e_act1, e_pre2, e;  // conditioning MLP
        std::vector<T> ss1, ssm[2], ss2;           // film scale/shift vectors

        Tensor x;
        Tensor s0;
        Tensor a1, f1, c1, d1, d1s, p1, h1;
        nn::GroupNormCache<T> gc1;
        Tensor dn;
        Tensor am[2], fm[2], cm[2], km[2], m[2];
        nn::GroupNormCache<T> gcm[2];
        Tensor uu, pu, sk;
        Tensor a2, f2, c2, d2, d2s, p2, h2;
        nn::GroupNormCache<T> gc2;
        Tensor y0, y1;
        Tensor lx, lxs, ld;  // full-res local branch
        Tensor ah, chh, dh, dhs;
        nn::GroupNormCache<T> gch;
    };

    Tensor forward(const Tensor& x, double sigma, Workspace& ws) const {
        const auto& P = store_.data;
        Preconditioning pre{cfg_.sigma_data};

        ws.x = x;
        ws.u = {T(pre.c_noise(sigma))};
        ws.e_pre1 = nn::linear_forward(emb1_, P, ws.u);
        ws.e_act1 = nn::silu_vec(ws.e_pre1);
        ws.e_pre2 = nn::linear_forward(emb2_, P, ws.e_act1);
        ws.e = nn::silu_vec(ws.e_pre2);

        ws.ss1 = nn::linear_forward(film1_, P, ws.e);
        for (int i = 0; i < 2; ++i) ws.ssm[i] = nn::linear_forward(filmm_[i], P, ws.e);
        ws.ss2 = nn::linear_forward(film2_, P, ws.e);

        ws.s0 = nn::conv3d_forward(stem_, P, x);

        ws.a1 = nn::groupnorm_forward(gn1_, P, ws.s0, ws.gc1);
        ws.f1 = nn::film_forward(ws.a1, ws.ss1);
        ws.c1 = nn::silu_forward(ws.f1);
        ws.d1 = nn::depthwise_forward(dw1_, P, ws.c1);
        ws.d1s = nn::silu_forward(ws.d1);
        ws.p1 = nn::pointwise_forward(pw1_, P, ws.d1s);
        ws.h1 = ws.s0;
        for (std::size_t i = 0; i < ws.h1.v.size(); ++i) ws.h1.v[i] += ws.p1.v[i];

        ws.dn = nn::conv3d_forward(down_, P, ws.h1);

        const Tensor* cur = &ws.dn;
        for (int i = 0; i < 2; ++i) {
            ws.am[i] = nn::groupnorm_forward(gnm_[i], P, *cur, ws.gcm[i]);
            ws.fm[i] = nn::film_forward(ws.am[i], ws.ssm[i]);
            ws.cm[i] = nn::silu_forward(ws.fm[i]);
            ws.km[i] = nn::conv3d_forward(convm_[i], P, ws.cm[i]);
            ws.m[i] = *cur;
            for (std::size_t j = 0; j < ws.m[i].v.size(); ++j) ws.m[i].v[j] += ws.km[i].v[j];
            cur = &ws.m[i];
        }

        ws.uu = nn::upsample2_forward(ws.m[1]);
        ws.pu = nn::pointwise_forward(up1_, P, ws.uu);
        ws.sk = ws.pu;
        for (std::size_t i = 0; i < ws.sk.v.size(); ++i) ws.sk.v[i] += ws.h1.v[i];

        ws.a2 = nn::groupnorm_forward(gn2_, P, ws.sk, ws.gc2);
        ws.f2 = nn::film_forward(ws.a2, ws.ss2);
        ws.c2 = nn::silu_forward(ws.f2);
        ws.d2 = nn::depthwise_forward(dw2_, P, ws.c2);
        ws.d2s = nn::silu_forward(ws.d2);
        ws.p2 = nn::pointwise_forward(pw2_, P, ws.d2s);
        ws.h2 = ws.sk;
        for (std::size_t i = 0; i < ws.h2.v.size(); ++i) ws.h2.v[i] += ws.p2.v[i];

        ws.y0 = nn::upsample2_forward(ws.h2);
        ws.y1 = nn::pointwise_forward(up2_, P, ws.y0);

        ws.lx = nn::pointwise_forward(loc_pw_, P, x);
        ws.lxs = nn::silu_forward(ws.lx);
        ws.ld = nn::depthwise_forward(loc_dw_, P, ws.lxs);
        for (std::size_t i = 0; i < ws.y1.v.size(); ++i) ws.y1.v[i] += ws.ld.v[i];

        ws.ah = nn::groupnorm_forward(gnh_, P, ws.y1, ws.gch);
        ws.chh = nn::silu_forward(ws.ah);
        ws.dh = nn::depthwise_forward(dwh_, P, ws.chh);
        ws.dhs = nn::silu_forward(ws.dh);
        return nn::pointwise_forward(pwh_, P, ws.dhs);
    }

    // Backward through F. d_in may be null (weight gradients only) and
    // param_grads may be null (input VJP only, cheaper).
    void backward(const Workspace& ws, const Tensor& d_out, Tensor* d_in,
                  std::vector<T>* param_grads) const {
        const auto& P = store_.data;
        Tensor g;  // gradient flowing backward through the main trunk

        Tensor g_dhs;
        nn::pointwise_backward(pwh_, P, ws.dhs, d_out, &g_dhs, param_grads);
        Tensor g_dh = nn::silu_backward(ws.dh, g_dhs);
        Tensor g_chh;
        nn::depthwise_backward(dwh_, P, ws.chh, g_dh, &g_chh, param_grads);
        Tensor g_ah = nn::silu_backward(ws.ah, g_chh);
        Tensor g_y1;
        nn::groupnorm_backward(gnh_, P, ws.gch, g_ah, &g_y1, param_grads);

        // Local full-res branch (y1 = up2(y0) + ld).
        Tensor d_x_local;
        {
            Tensor g_lxs;
            nn::depthwise_backward(loc_dw_, P, ws.lxs, g_y1, &g_lxs, param_grads);
            Tensor g_lx = nn::silu_backward(ws.lx, g_lxs);
            nn::pointwise_backward(loc_pw_, P, ws.x, g_lx, d_in ? &d_x_local : nullptr,
                                   param_grads);
        }

        Tensor g_y0;
        nn::pointwise_backward(up2_, P, ws.y0, g_y1, &g_y0, param_grads);
        g = nn::upsample2_backward(ws.h2.c, ws.h2.h, ws.h2.w, ws.h2.d, g_y0);

        // light block 2: h2 = sk + pw(silu(dw(silu(film(gn(sk))))))
        std::vector<T> g_ss2;
        Tensor g_sk = g;  // residual premise
        {
            Tensor g_d2s;
            nn::pointwise_backward(pw2_, P, ws.d2s, g, &g_d2s, param_grads);
            Tensor g_d2 = nn::silu_backward(ws.d2, g_d2s);
            Tensor g_c2;
            nn::depthwise_backward(dw2_, P, ws.c2, g_d2, &g_c2, param_grads);
            Tensor g_f2 = nn::silu_backward(ws.f2, g_c2);
            Tensor g_a2;
            nn::film_backward(ws.a2, ws.ss2, g_f2, &g_a2, &g_ss2);
            Tensor g_from_block;
            nn::groupnorm_backward(gn2_, P, ws.gc2, g_a2, &g_from_block, param_grads);
            for (std::size_t i = 0; i < g_sk.v.size(); ++i) g_sk.v[i] += g_from_block.v[i];
        }

        // sk = pu + h1
        Tensor g_h1 = g_sk;
        Tensor g_uu;
        nn::pointwise_backward(up1_, P, ws.uu, g_sk, &g_uu, param_grads);
        Tensor g_m1 = nn::upsample2_backward(ws.m[1].c, ws.m[1].h, ws.m[1].w, ws.m[1].d, g_uu);

        // mid blocks in reverse
        std::vector<T> g_ssm[2];
        Tensor g_mid = g_m1;
        for (int i = 1; i >= 0; --i) {
            Tensor g_cm;
            nn::conv3d_backward(convm_[i], P, ws.cm[i], g_mid, &g_cm, param_grads);
            Tensor g_fm = nn::silu_backward(ws.fm[i], g_cm);
            Tensor g_am;
            nn::film_backward(ws.am[i], ws.ssm[i], g_fm, &g_am, &g_ssm[i]);
            Tensor g_res;
            nn::groupnorm_backward(gnm_[i], P, ws.gcm[i], g_am, &g_res, param_grads);
            for (std::size_t j = 0; j < g_mid.v.size(); ++j) g_mid.v[j] += g_res.v[j];
        }

        Tensor g_h1_from_down;
        nn::conv3d_backward(down_, P, ws.h1, g_mid, &g_h1_from_down, param_grads);
        for (std::size_t i = 0; i < g_h1.v.size(); ++i) g_h1.v[i] += g_h1_from_down.v[i];

        // light block 1: h1 = s0 + pw(silu(dw(silu(film(gn(s0))))))
        std::vector<T> g_ss1;
        Tensor g_s0 = g_h1;
        {
            Tensor g_d1s;
            nn::pointwise_backward(pw1_, P, ws.d1s, g_h1, &g_d1s, param_grads);
            Tensor g_d1 = nn::silu_backward(ws.d1, g_d1s);
            Tensor g_c1;
            nn::depthwise_backward(dw1_, P, ws.c1, g_d1, &g_c1, param_grads);
            Tensor g_f1 = nn::silu_backward(ws.f1, g_c1);
            Tensor g_a1;
            nn::film_backward(ws.a1, ws.ss1, g_f1, &g_a1, &g_ss1);
            Tensor g_from_block;
            nn::groupnorm_backward(gn1_, P, ws.gc1, g_a1, &g_from_block, param_grads);
            for (std::size_t i = 0; i < g_s0.v.size(); ++i) g_s0.v[i] += g_from_block.v[i];
        }

        nn::conv3d_backward(stem_, P, ws.x, g_s0, d_in, param_grads);
        if (d_in)
            for (std::size_t i = 0; i < d_in->v.size(); ++i) d_in->v[i] += d_x_local.v[i];

        // Conditioning path only matters for parameter gradients.
        if (param_grads) {
            std::vector<T> g_e(std::size_t(cfg_.emb), T(0));
            auto accum = [&](const nn::Linear& lin, const std::vector<T>& gss) {
                std::vector<T> ge;
                nn::linear_backward(lin, P, ws.e, gss, &ge, param_grads);
                for (std::size_t i = 0; i < g_e.size(); ++i) g_e[i] += ge[i];
            };
            accum(film1_, g_ss1);
            for (int i = 0; i < 2; ++i) accum(filmm_[i], g_ssm[i]);
            accum(film2_, g_ss2);

            std::vector<T> g_pre2 = nn::silu_vec_backward(ws.e_pre2, g_e);
            std::vector<T> g_act1;
            nn::linear_backward(emb2_, P, ws.e_act1, g_pre2, &g_act1, param_grads);
            std::vector<T> g_pre1 = nn::silu_vec_backward(ws.e_pre1, g_act1);
            nn::linear_backward(emb1_, P, ws.u, g_pre1, static_cast<std::vector<T>*>(nullptr),
                                param_grads);
        }
    }

  private:
    NetConfig cfg_;
    nn::ParamStore<T> store_;

    nn::Linear emb1_, emb2_;
    nn::Conv3d stem_;
    nn::GroupNorm gn1_;
    nn::Linear film1_;
    nn::Depthwise3d dw1_;
    nn::Pointwise pw1_;
    nn::Conv3d down_;
    nn::GroupNorm gnm_[2];
    nn::Linear filmm_[2];
    nn::Conv3d convm_[2];
    nn::Pointwise up1_;
    nn::GroupNorm gn2_;
    nn::Linear film2_;
    nn::Depthwise3d dw2_;
    nn::Pointwise pw2_;
    nn::Pointwise up2_;
    nn::Pointwise loc_pw_;
    nn::Depthwise3d loc_dw_;
    nn::GroupNorm gnh_;
    nn::Depthwise3d dwh_;
    nn::Pointwise pwh_;
};

// ---------------------------------------------------------------------------
// Sampler-facing denoiser interface: flat double vectors in LabelGrid's
// channel-major layout. Implementations must be safe to call concurrently.
// ---------------------------------------------------------------------------
struct DenoiserContext {
    virtual ~DenoiserContext() = default;
};

class Denoiser {
  public:
    virtual ~Denoiser() = default;
    virtual int channels() const = 0;

    virtual std::vector<double> denoise(const std::vector<double>& z, double sigma, Shape3 shape,
                                        std::unique_ptr<DenoiserContext>* ctx_out = nullptr) const = 0;

    // VJP of denoise at the point captured by ctx.
    virtual std::vector<double> vjp(DenoiserContext& ctx,
                                    const std::vector<double>& cotangent) const {
        (void)ctx;
        (void)cotangent;
        throw std::runtime_error("denoiser: vjp not supported");
    }
};

class EdmDenoiser final : public Denoiser {
  public:
    explicit EdmDenoiser(NetConfig cfg) : net_(cfg), pre_{cfg.sigma_data} {}

    DenoiserNet<float>& net() { return net_; }
    const DenoiserNet<float>& net() const { return net_; }
    const Preconditioning& preconditioning() const { return pre_; }
    int channels() const override { return net_.config().channels; }

    std::string train_config_hash;

    struct Ctx final : DenoiserContext {
        DenoiserNet<float>::Workspace ws;
        double sigma = 0;
        Shape3 shape;
    };

    // Scaled data channels followed by 3 coordinate channels.
    template <class T>
    static void fill_net_input(nn::Tensor<T>& x, const std::vector<double>& z, double c_in,
                               int data_channels, Shape3 shape) {
        for (std::size_t i = 0; i < z.size(); ++i) x.v[i] = T(z[i] * c_in);
        for (int axis = 0; axis < 3; ++axis) {
            T* ch = x.ch(data_channels + axis);
            std::int64_t v = 0;
            for (int i = 0; i < shape.h; ++i)
                for (int j = 0; j < shape.w; ++j)
                    for (int k = 0; k < shape.d; ++k, ++v)
                        ch[v] = T(axis == 0 ? axis_coord(i, shape.h)
                                            : axis == 1 ? axis_coord(j, shape.w)
                                                        : axis_coord(k, shape.d));
        }
    }

    std::vector<double> denoise(const std::vector<double>& z, double sigma, Shape3 shape,
                                std::unique_ptr<DenoiserContext>* ctx_out = nullptr) const override {
        const int C = net_.config().channels;
        if (std::int64_t(z.size()) != C * shape.count())
            throw std::invalid_argument("denoiser: state size mismatch");

        nn::Tensor<float> x(net_.input_channels(), shape.h, shape.w, shape.d);
        fill_net_input(x, z, pre_.c_in(sigma), C, shape);

        auto ctx = std::make_unique<Ctx>();
        ctx->sigma = sigma;
        ctx->shape = shape;
        nn::Tensor<float> f = net_.forward(x, sigma, ctx->ws);

        const double cs = pre_.c_skip(sigma), co = pre_.c_out(sigma);
        std::vector<double> out(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) out[i] = cs * z[i] + co * double(f.v[i]);
        if (ctx_out) *ctx_out = std::move(ctx);
        return out;
    }

    std::vector<double> vjp(DenoiserContext& ctx_base,
                            const std::vector<double>& cot) const override {
        auto& ctx = dynamic_cast<Ctx&>(ctx_base);
        const double cs = pre_.c_skip(ctx.sigma), co = pre_.c_out(ctx.sigma),
                     ci = pre_.c_in(ctx.sigma);
        nn::Tensor<float> d_out(channels(), ctx.shape.h, ctx.shape.w, ctx.shape.d);
        for (std::size_t i = 0; i < cot.size(); ++i) d_out.v[i] = float(cot[i] * co);
        nn::Tensor<float> d_x;
        net_.backward(ctx.ws, d_out, &d_x, nullptr);
        // Coordinate channels are constants; only the data channels carry
        // gradient back to z.
        std::vector<double> out(cot.size());
        for (std::size_t i = 0; i < cot.size(); ++i) out[i] = cs * cot[i] + ci * double(d_x.v[i]);
        return out;
    }

  private:
    DenoiserNet<float> net_;
    Preconditioning pre_;
};

// ---------------------------------------------------------------------------
// Checkpoints: magic, little-endian u64 JSON length, JSON header, raw f32
// parameters in registration order.
// ---------------------------------------------------------------------------
inline constexpr char kCheckpointMagic[8] = {'G', 'M', 'G', 'C', 'K', 'P', 'T', '1'};

inline void save_checkpoint(const std::string& path, const EdmDenoiser& model) {
    nlohmann::json header;
    const NetConfig& cfg = model.net().config();
    header["arch"] = {{"channels", cfg.channels}, {"base", cfg.base},   {"mid", cfg.mid},
                      {"head", cfg.head},         {"emb", cfg.emb}};
    header["sigma_data"] = cfg.sigma_data;
    header["param_count"] = model.net().param_count();
    header["train_config_hash"] = model.train_config_hash;
    std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    out.write(kCheckpointMagic, 8);
    std::uint64_t len = hs.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(hs.data(), std::streamsize(hs.size()));
    const auto& params = model.net().params();
    out.write(reinterpret_cast<const char*>(params.data()),
              std::streamsize(params.size() * sizeof(float)));
    if (!out) throw std::runtime_error("checkpoint: short write to " + path);
}

inline std::unique_ptr<EdmDenoiser> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 8);
    std::string hs(len, '\0');
    in.read(hs.data(), std::streamsize(len));
    nlohmann::json header = nlohmann::json::parse(hs);

    NetConfig cfg;
    cfg.channels = header["arch"]["channels"].get<int>();
    cfg.base = header["arch"]["base"].get<int>();
    cfg.mid = header["arch"]["mid"].get<int>();
    cfg.head = header["arch"]["head"].get<int>();
    cfg.emb = header["arch"]["emb"].get<int>();
    cfg.sigma_data = header["sigma_data"].get<double>();

    auto model = std::make_unique<EdmDenoiser>(cfg);
    model->train_config_hash = header.value("train_config_hash", "");
    std::size_t expect = header["param_count"].get<std::size_t>();
    if (expect != model->net().param_count())
        throw std::runtime_error("checkpoint: parameter count mismatch");
    auto& params = model->net().params();
    in.read(reinterpret_cast<char*>(params.data()),
            std::streamsize(params.size() * sizeof(float)));
    if (std::size_t(in.gcount()) != params.size() * sizeof(float))
        throw std::runtime_error("checkpoint: truncated payload in " + path);
    return model;
}

}  // namespace gmg
