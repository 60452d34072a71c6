#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "pf/rng.hpp"
#include "pf/schedule.hpp"
#include "pf/tensor.hpp"

namespace pf {

// Noise predictor eps_theta(x_t, t, cond). cond may be an undefined Tensor
// for models that ignore conditioning.
using NoisePredictor = std::function<Tensor(const Tensor& x_t, int t, const Tensor& cond)>;

struct SamplerConfig {
    std::uint64_t seed = 0;
    bool clip_output = true;  // clamp the final x_0 to [-1, 1]
};

// Closed-form forward marginal: x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps.
// Returns a leaf tensor (no graph through x0/eps).
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s);

// eps-prediction objective: draws eps from rng, noises x0 to step t, returns
// mse(model(x_t, t, cond), eps). Differentiable w.r.t. model parameters.
Tensor ddpm_loss(const NoisePredictor& model, const Tensor& x0, int t, const Tensor& cond,
                 const NoiseSchedule& s, Rng& rng);

// One ancestral step: mu = (x_t - beta_t/sqrt(1-abar_t) eps_hat)/sqrt(alpha_t),
// plus sqrt(beta_t) z for t > 1 (fixed variance sigma_t^2 = beta_t); no noise
// at t = 1.
Tensor p_sample_step(const NoisePredictor& model, const Tensor& x_t, int t, const Tensor& cond,
                     const NoiseSchedule& s, Rng& rng);

// Full reverse chain from x_T ~ N(0, I). Pure function of (model, seed, cfg).
Tensor sample(const NoisePredictor& model, const std::vector<int>& shape, const Tensor& cond,
              const NoiseSchedule& s, const SamplerConfig& cfg);

// Partial-noising entry point for img2img. t_start = round(strength * T).
// strength 0 returns the input untouched; strength 1 starts from pure noise
// (matching a fresh txt2img draw); anything between applies q_sample.
std::pair<Tensor, int> noise_to_step(const Tensor& x_in, double strength, const NoiseSchedule& s,
                                     Rng& rng);

}  // namespace pf
