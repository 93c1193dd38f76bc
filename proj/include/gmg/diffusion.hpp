#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmg/common.hpp"
#include "gmg/denoiser.hpp"
#include "gmg/grid.hpp"
#include "gmg/loss.hpp"

namespace gmg {

// One-hot grids are mapped to symmetric logits (+a / -a) for diffusion, so
// Gaussian noise is well scaled against sigma_data = 1. Binarization
// recovers labels; the f=1 decode is the identity.
inline constexpr double kLogitAmplitude = 4.0;

inline std::vector<double> encode_logits(const LabelGrid& grid, double amplitude = kLogitAmplitude) {
    std::vector<double> z(grid.values.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = amplitude * (2.0 * grid.values[i] - 1.0);
    return z;
}

inline LabelGrid logits_to_grid(const std::vector<double>& z, int channels, Shape3 shape,
                                const std::vector<std::string>& labels = {}) {
    LabelGrid g(channels, shape);
    if (std::int64_t(z.size()) != g.voxels() * channels)
        throw std::invalid_argument("logits_to_grid: size mismatch");
    g.values = z;
    g.labels = labels;
    return g;
}

// ---------------------------------------------------------------------------
// Noise schedule: rho-power interpolation between sigma_max and sigma_min
// with the endpoints pinned exactly, plus a terminal 0.
// ---------------------------------------------------------------------------
struct NoiseSchedule {
    std::vector<double> sigmas;  // size steps+1, sigmas.back() == 0

    int steps() const { return int(sigmas.size()) - 1; }
};

inline NoiseSchedule make_schedule(int steps, double sigma_min = 1e-2, double sigma_max = 80.0,
                                   double rho = 3.0) {
    if (steps < 2) throw std::invalid_argument("schedule: need at least 2 steps");
    if (!(sigma_min > 0) || !(sigma_max > sigma_min))
        throw std::invalid_argument("schedule: need 0 < sigma_min < sigma_max");
    NoiseSchedule sched;
    sched.sigmas.resize(steps + 1);
    const double max_r = std::pow(sigma_max, 1.0 / rho);
    const double min_r = std::pow(sigma_min, 1.0 / rho);
    for (int i = 0; i < steps; ++i) {
        double t = double(i) / double(steps - 1);
        sched.sigmas[i] = std::pow(max_r + t * (min_r - max_r), rho);
    }
    sched.sigmas[0] = sigma_max;          // exact endpoints
    sched.sigmas[steps - 1] = sigma_min;
    sched.sigmas[steps] = 0.0;
    for (int i = 0; i + 1 < steps; ++i)
        if (!(sched.sigmas[i] > sched.sigmas[i + 1]))
            throw std::runtime_error("schedule: not strictly decreasing");
    return sched;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------
struct TrainConfig {
    int steps = 4000;
    int batch = 4;
    double lr = 1e-3;
    double final_lr_fraction = 0.1;  // linear decay endpoint
    double sigma_log_mean = 1.0;     // ln(sigma) ~ N(mean, std^2)
    double sigma_log_std = 1.2;
    std::uint64_t seed = 0;
    int log_every = 200;
    double logit_amplitude = kLogitAmplitude;

    std::string hash() const {
        std::string s = std::to_string(steps) + "|" + std::to_string(batch) + "|" +
                        std::to_string(lr) + "|" + std::to_string(final_lr_fraction) + "|" +
                        std::to_string(sigma_log_mean) + "|" + std::to_string(sigma_log_std) +
                        "|" + std::to_string(seed) + "|" + std::to_string(logit_amplitude);
        return hex64(fnv1a64(s));
    }
};

struct TrainLog {
    std::vector<std::pair<int, double>> curve;  // (step, mean batch loss)
};

// Per-element denoising MSE at a fixed sigma with seed-fixed noise; the
// validation-side training oracle.
inline double validation_denoising_loss(const EdmDenoiser& model,
                                        const std::vector<LabelGrid>& grids, double sigma,
                                        std::uint64_t seed, double amplitude = kLogitAmplitude) {
    double total = 0;
    for (std::size_t g = 0; g < grids.size(); ++g) {
        std::vector<double> z = encode_logits(grids[g], amplitude);
        Rng rng = Rng::stream(seed, 0x7A11D, g);
        std::vector<double> noisy(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) noisy[i] = z[i] + sigma * rng.normal();
        std::vector<double> denoised = model.denoise(noisy, sigma, grids[g].shape);
        double mse = 0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            double d = denoised[i] - z[i];
            mse += d * d;
        }
        total += mse / double(z.size());
    }
    return total / double(grids.size());
}

// Minimizes E[lambda(sigma) ||D(z + n; sigma) - z||^2] with Adam. Per-slot
// gradients are computed in parallel and reduced in slot order, so results
// do not depend on the thread count.
inline std::unique_ptr<EdmDenoiser> train_denoiser(const std::vector<LabelGrid>& dataset,
                                                   const TrainConfig& cfg, NetConfig net_cfg,
                                                   TrainLog* log = nullptr, int threads = 0) {
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    const Shape3 shape = dataset[0].shape;
    const int C = dataset[0].channels;
    for (const auto& g : dataset)
        if (g.channels != C || !(g.shape == shape))
            throw std::invalid_argument("train: dataset grids must share shape and channels");

    net_cfg.channels = C;
    auto model = std::make_unique<EdmDenoiser>(net_cfg);
    Rng init_rng = Rng::stream(cfg.seed, 0x1417);
    model->net().init_weights(init_rng);
    model->train_config_hash = cfg.hash();
    const Preconditioning& pre = model->preconditioning();

    // Dataset encoded once, in float.
    const std::int64_t numel = std::int64_t(C) * shape.count();
    std::vector<std::vector<float>> data(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        data[i].resize(numel);
        for (std::int64_t j = 0; j < numel; ++j)
            data[i][j] = float(cfg.logit_amplitude * (2.0 * dataset[i].values[j] - 1.0));
    }

    const std::size_t n_params = model->net().param_count();
    std::vector<std::vector<float>> slot_grads(cfg.batch, std::vector<float>(n_params, 0.0f));
    std::vector<double> slot_loss(cfg.batch, 0.0);
    nn::Adam<float> adam;
    adam.lr = cfg.lr;
    std::vector<float> total_grad(n_params);

    for (int step = 0; step < cfg.steps; ++step) {
        parallel_for(
            cfg.batch,
            [&](std::int64_t b) {
                Rng rng = Rng::stream(cfg.seed, std::uint64_t(step), std::uint64_t(b));
                const std::size_t idx = std::size_t(rng.next_u64() % dataset.size());
                const double sigma =
                    std::exp(cfg.sigma_log_mean + cfg.sigma_log_std * rng.normal());

                std::vector<double> noisy(numel);
                for (std::int64_t j = 0; j < numel; ++j)
                    noisy[j] = double(data[idx][j]) + sigma * rng.normal();
                nn::Tensor<float> x(model->net().input_channels(), shape.h, shape.w, shape.d);
                EdmDenoiser::fill_net_input(x, noisy, pre.c_in(sigma), C, shape);

                DenoiserNet<float>::Workspace ws;
                nn::Tensor<float> f = model->net().forward(x, sigma, ws);

                const double cs = pre.c_skip(sigma), co = pre.c_out(sigma);
                const double lam = pre.loss_weight(sigma);
                nn::Tensor<float> d_f(C, shape.h, shape.w, shape.d);
                double loss = 0;
                for (std::int64_t j = 0; j < numel; ++j) {
                    double denoised = cs * noisy[j] + co * double(f.v[j]);
                    double resid = denoised - double(data[idx][j]);
                    loss += lam * resid * resid;
                    d_f.v[j] = float(lam * 2.0 * resid * co / double(numel));
                }
                slot_loss[b] = loss / double(numel);

                std::fill(slot_grads[b].begin(), slot_grads[b].end(), 0.0f);
                model->net().backward(ws, d_f, nullptr, &slot_grads[b]);
            },
            threads);

        double mean_loss = 0;
        for (int b = 0; b < cfg.batch; ++b) mean_loss += slot_loss[b];
        mean_loss /= cfg.batch;
        if (!std::isfinite(mean_loss))
            throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));

        std::fill(total_grad.begin(), total_grad.end(), 0.0f);
        for (int b = 0; b < cfg.batch; ++b)  // fixed reduction order
            for (std::size_t i = 0; i < n_params; ++i)
                total_grad[i] += slot_grads[b][i] / float(cfg.batch);

        double frac = cfg.steps > 1 ? double(step) / double(cfg.steps - 1) : 0.0;
        adam.lr = cfg.lr * (1.0 - (1.0 - cfg.final_lr_fraction) * frac);
        adam.step(model->net().params(), total_grad);

        if (log && (step % cfg.log_every == 0 || step + 1 == cfg.steps))
            log->curve.emplace_back(step, mean_loss);
    }
    return model;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------
enum class SolverMode { DeterministicOde, StochasticSde };
enum class GradientPath { FullVjp, CleanPrediction };

struct SampleOptions {
    SolverMode mode = SolverMode::DeterministicOde;
    GradientPath path = GradientPath::FullVjp;
    double temperature = kDefaultBinarizeTemperature;
    double logit_amplitude = kLogitAmplitude;
    std::vector<std::string> labels;
};

struct SampleResult {
    LabelGrid hard;               // one-hot output
    std::vector<double> logits;   // final state before binarization
    int gate_events = 0;          // empty-component gates hit during guidance
    std::vector<std::string> warnings;
};

namespace detail {

inline constexpr std::uint64_t kInitNoiseStream = 0;
inline constexpr std::uint64_t kStepNoiseStream = 1;
inline constexpr std::uint64_t kInpaintNoiseStream = 2;

struct InpaintState {
    const std::vector<double>* known_logits = nullptr;
    const std::vector<std::uint8_t>* editable = nullptr;  // per voxel, 1 = free
    bool any_frozen = false;
};

inline SampleResult run_sampler(const Denoiser& model, const NoiseSchedule& sched, Shape3 shape,
                                const ConstraintSet* cs, std::uint64_t seed,
                                const SampleOptions& opts, const InpaintState* inpaint) {
    const int C = model.channels();
    const std::int64_t numel = std::int64_t(C) * shape.count();
    const bool guided = cs && cs->guidance_weight != 0.0 && cs->any_active();
    if (cs) cs->validate(C);

    SampleResult result;
    std::vector<double> z(numel);
    {
        Rng rng = Rng::stream(seed, kInitNoiseStream);
        const double s0 = sched.sigmas[0];
        for (auto& v : z) v = s0 * rng.normal();
    }

    for (int i = 0; i < sched.steps(); ++i) {
        const double sigma = sched.sigmas[i];
        const double sigma_next = sched.sigmas[i + 1];

        std::unique_ptr<DenoiserContext> ctx;
        std::vector<double> denoised =
            model.denoise(z, sigma, shape,
                          guided && opts.path == GradientPath::FullVjp ? &ctx : nullptr);

        if (guided) {
            // Clean prediction -> geometric loss gradient -> guided update:
            // D_w = D - sigma^2 * w * grad.
            LabelGrid x0 = logits_to_grid(denoised, C, shape);
            LossBreakdown bd;
            std::vector<double> grad = loss_gradient_wrt_grid(x0, *cs, opts.temperature, &bd);
            result.gate_events += bd.gated_count;
            std::vector<double> gz = opts.path == GradientPath::FullVjp
                                         ? model.vjp(*ctx, grad)
                                         : std::move(grad);
            const double scale = sigma * sigma * cs->guidance_weight;
            for (std::int64_t j = 0; j < numel; ++j) denoised[j] -= scale * gz[j];
        }

        if (sigma_next == 0.0) {
            // Final step of the ODE lands on the clean prediction exactly.
            z = denoised;
        } else if (opts.mode == SolverMode::DeterministicOde) {
            const double f = (sigma_next - sigma) / sigma;
            for (std::int64_t j = 0; j < numel; ++j) z[j] += f * (z[j] - denoised[j]);
        } else {
            // Euler-Maruyama on dz = -2 sigma score dt + sqrt(2 sigma) dw.
            const double dt = sigma_next - sigma;
            const double drift = -2.0 * dt / sigma;
            const double diffusion = std::sqrt(2.0 * sigma * std::abs(dt));
            Rng rng = Rng::stream(seed, kStepNoiseStream, std::uint64_t(i));
            for (std::int64_t j = 0; j < numel; ++j)
                z[j] += drift * (denoised[j] - z[j]) + diffusion * rng.normal();
        }

        if (inpaint && inpaint->any_frozen) {
            Rng rng = Rng::stream(seed, kInpaintNoiseStream, std::uint64_t(i));
            const std::int64_t n = shape.count();
            for (int c = 0; c < C; ++c)
                for (std::int64_t v = 0; v < n; ++v) {
                    double noise = sigma_next > 0 ? sigma_next * rng.normal() : 0.0;
                    if (!(*inpaint->editable)[v]) {
                        std::size_t j = std::size_t(c) * n + v;
                        z[j] = (*inpaint->known_logits)[j] + noise;
                    }
                }
        }
    }

    LabelGrid logits_grid = logits_to_grid(z, C, shape, opts.labels);
    LabelGrid soft = soft_binarize(logits_grid, opts.temperature);
    result.hard = argmax_harden(soft);
    result.hard.labels = opts.labels;
    result.logits = std::move(z);
    return result;
}

}  // namespace detail

inline SampleResult sample(const Denoiser& model, const NoiseSchedule& sched, Shape3 shape,
                           std::uint64_t seed, const SampleOptions& opts = {}) {
    return detail::run_sampler(model, sched, shape, nullptr, seed, opts, nullptr);
}

inline SampleResult guided_sample(const Denoiser& model, const NoiseSchedule& sched,
                                  const ConstraintSet& cs, Shape3 shape, std::uint64_t seed,
                                  const SampleOptions& opts = {}) {
    return detail::run_sampler(model, sched, shape, &cs, seed, opts, nullptr);
}

// Mask-based inpainting: outside the editable mask the state is replaced by
// the known grid noised to the current level; inside, guided denoising
// proceeds. After hardening, frozen voxels match `known` exactly.
inline SampleResult inpaint(const Denoiser& model, const NoiseSchedule& sched,
                            const ConstraintSet& cs, const LabelGrid& known,
                            const std::vector<std::uint8_t>& editable, std::uint64_t seed,
                            const SampleOptions& opts = {}) {
    if (std::int64_t(editable.size()) != known.voxels())
        throw std::invalid_argument("inpaint: mask size mismatch");
    if (!known.is_one_hot()) throw std::invalid_argument("inpaint: known grid must be one-hot");

    std::vector<double> known_logits = encode_logits(known, opts.logit_amplitude);
    detail::InpaintState state;
    state.known_logits = &known_logits;
    state.editable = &editable;
    for (auto e : editable)
        if (!e) {
            state.any_frozen = true;
            break;
        }

    SampleOptions o = opts;
    if (o.labels.empty()) o.labels = known.labels;
    SampleResult result =
        detail::run_sampler(model, sched, known.shape, &cs, seed, o, &state);

    // Unsatisfiable-constraint heuristic: a constrained component none of
    // whose voxels are editable cannot change.
    const std::int64_t n = known.voxels();
    for (std::size_t g = 0; g < cs.groups.size(); ++g) {
        bool any_editable = false;
        for (int c : cs.groups[g].labels) {
            const double* ch = known.channel(c);
            for (std::int64_t v = 0; v < n && !any_editable; ++v)
                if (ch[v] != 0.0 && editable[v]) any_editable = true;
        }
        if (!any_editable)
            result.warnings.push_back("inpaint: mask covers no voxels of constrained group " +
                                      std::to_string(g));
    }
    return result;
}

}  // namespace gmg
