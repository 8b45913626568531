#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "layerkit/errors.hpp"
#include "layerkit/grid.hpp"

namespace layerkit {

// Cumulative noise coefficients alpha_bar indexed by sampler position:
// position 0 is fully clean (alpha_bar = 1), position S is most noisy.
struct NoiseSchedule {
    int steps = 0;                  // S
    std::vector<double> alpha_bar;  // size S + 1, strictly decreasing

    // Scaled-linear beta schedule over `train_steps` diffusion steps,
    // discretized to S sampler positions. Mirrors common latent-diffusion
    // defaults; the exact curve is a config knob, only monotonicity matters.
    static NoiseSchedule scaled_linear(int steps = 50, double beta_start = 0.00085,
                                       double beta_end = 0.012, int train_steps = 1000) {
        require(steps >= 1, "schedule steps must be >= 1");
        require(beta_start > 0.0 && beta_end > beta_start && beta_end < 1.0,
                "beta range must satisfy 0 < beta_start < beta_end < 1");
        require(train_steps >= steps, "train_steps must be >= steps");
        std::vector<double> cumprod(train_steps + 1, 1.0);
        double s0 = std::sqrt(beta_start);
        double s1 = std::sqrt(beta_end);
        for (int i = 1; i <= train_steps; ++i) {
            double frac = train_steps == 1 ? 0.0 : double(i - 1) / (train_steps - 1);
            double beta = (s0 + frac * (s1 - s0)) * (s0 + frac * (s1 - s0));
            cumprod[i] = cumprod[i - 1] * (1.0 - beta);
        }
        NoiseSchedule sched;
        sched.steps = steps;
        sched.alpha_bar.resize(steps + 1);
        sched.alpha_bar[0] = 1.0;
        for (int p = 1; p <= steps; ++p) {
            std::int64_t t = static_cast<std::int64_t>(p) * train_steps / steps;
            sched.alpha_bar[p] = cumprod[static_cast<std::size_t>(t)];
        }
        return sched;
    }

    double alpha_at(int position) const {
        require(position >= 0 && position <= steps, "schedule position out of range");
        return alpha_bar[static_cast<std::size_t>(position)];
    }

    // Dump as a 1 x (S+1) x 1 grid for cross-implementation comparison.
    FeatureGrid as_grid() const {
        FeatureGrid g(1, steps + 1, 1);
        g.values = alpha_bar;
        return g;
    }
};

struct LatentState {
    int step = 0;  // sampler position in [0, S]
    FeatureGrid latent;
};

// sqrt(alpha_bar / (1 - alpha_bar)); grows as denoising proceeds toward clean.
// alpha_bar == 1 is clamped to 1 - 1e-9 and flagged.
inline double snr(const NoiseSchedule& sched, int position, bool* clamped = nullptr) {
    double a = sched.alpha_at(position);
    bool clamp = a >= 1.0;
    if (clamp) a = 1.0 - 1e-9;
    if (clamped) *clamped = clamp;
    return std::sqrt(a / (1.0 - a));
}

// z_t = sqrt(alpha_bar) z0 + sqrt(1 - alpha_bar) eps
inline FeatureGrid forward_noise(const FeatureGrid& z0, int position, const FeatureGrid& eps,
                                 const NoiseSchedule& sched) {
    require(z0.same_shape(eps), "forward_noise: z0/eps shape mismatch");
    double a = sched.alpha_at(position);
    double sa = std::sqrt(a);
    double sb = std::sqrt(1.0 - a);
    FeatureGrid out(z0.height, z0.width, z0.channels);
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] = sa * z0.values[i] + sb * eps.values[i];
    return out;
}

// Deterministic (eta = 0) sampler update from position p to p-1.
inline LatentState ddim_step(const LatentState& state, const FeatureGrid& noise_pred,
                             const NoiseSchedule& sched) {
    if (state.step < 1) throw StateError("ddim_step: latent is already clean");
    require(state.latent.same_shape(noise_pred), "ddim_step: shape mismatch");
    double a_cur = sched.alpha_at(state.step);
    double a_prev = sched.alpha_at(state.step - 1);
    double inv_sa = 1.0 / std::sqrt(a_cur);
    double sb_cur = std::sqrt(1.0 - a_cur);
    double sa_prev = std::sqrt(a_prev);
    double sb_prev = std::sqrt(1.0 - a_prev);
    LatentState out;
    out.step = state.step - 1;
    out.latent = FeatureGrid(state.latent.height, state.latent.width, state.latent.channels);
    for (std::size_t i = 0; i < out.latent.values.size(); ++i) {
        double z0_hat = (state.latent.values[i] - sb_cur * noise_pred.values[i]) * inv_sa;
        out.latent.values[i] = sa_prev * z0_hat + sb_prev * noise_pred.values[i];
    }
    return out;
}

// eps_uncond + scale * (eps_cond - eps_uncond)
inline FeatureGrid cfg_combine(const FeatureGrid& eps_uncond, const FeatureGrid& eps_cond,
                               double scale) {
    require(eps_uncond.same_shape(eps_cond), "cfg_combine: shape mismatch");
    FeatureGrid out(eps_uncond.height, eps_uncond.width, eps_uncond.channels);
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] =
            eps_uncond.values[i] + scale * (eps_cond.values[i] - eps_uncond.values[i]);
    return out;
}

template <class MapList>
struct InversionResult {
    LatentState state;                     // at position S
    std::vector<MapList> step_token_maps;  // one entry per evaluation position 0..S-1
};

// Deterministic inversion of a clean latent to position S. The denoiser is any
// callable (latent, position) -> {FeatureGrid noise_pred; MapList token_maps;};
// the per-step cross-attention maps are collected as a side channel.
template <class Denoiser>
auto ddim_invert(const FeatureGrid& z0, Denoiser&& denoise, const NoiseSchedule& sched) {
    using Eval = decltype(denoise(z0, 0));
    InversionResult<decltype(std::declval<Eval>().token_maps)> result;
    result.state.step = 0;
    result.state.latent = z0;
    result.step_token_maps.reserve(static_cast<std::size_t>(sched.steps));
    for (int p = 0; p < sched.steps; ++p) {
        Eval eval = denoise(result.state.latent, p);
        double a_cur = sched.alpha_at(p);
        double a_next = sched.alpha_at(p + 1);
        double inv_sa = 1.0 / std::sqrt(a_cur);
        double sb_cur = std::sqrt(1.0 - a_cur);
        double sa_next = std::sqrt(a_next);
        double sb_next = std::sqrt(1.0 - a_next);
        FeatureGrid next(z0.height, z0.width, z0.channels);
        for (std::size_t i = 0; i < next.values.size(); ++i) {
            double z0_hat =
                (result.state.latent.values[i] - sb_cur * eval.noise_pred.values[i]) * inv_sa;
            next.values[i] = sa_next * z0_hat + sb_next * eval.noise_pred.values[i];
        }
        result.state.latent = std::move(next);
        result.state.step = p + 1;
        result.step_token_maps.push_back(std::move(eval.token_maps));
    }
    return result;
}

}  // namespace layerkit
