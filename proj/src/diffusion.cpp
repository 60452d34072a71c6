#include "pf/diffusion.hpp"

#include <cmath>
#include <string>

#include "pf/error.hpp"
#include "pf/ops.hpp"

namespace pf {

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s) {
    if (eps.shape() != x0.shape())
        throw DimensionError("q_sample: eps shape " + shape_str(eps.shape()) +
                             " != x0 shape " + shape_str(x0.shape()));
    const double abar = s.alpha_bar_at(t);
    const float c0 = static_cast<float>(std::sqrt(abar));
    const float ce = static_cast<float>(std::sqrt(1.0 - abar));
    Tensor out = Tensor::zeros(x0.shape());
    float* o = out.mutable_data().data();
    const float* a = x0.data().data();
    const float* e = eps.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) o[i] = c0 * a[i] + ce * e[i];
    check_finite(out, "q_sample");
    return out;
}

Tensor ddpm_loss(const NoisePredictor& model, const Tensor& x0, int t, const Tensor& cond,
                 const NoiseSchedule& s, Rng& rng) {
    Tensor eps = Tensor::zeros(x0.shape());
    rng.fill_normal(eps.mutable_data().data(), eps.size());
    Tensor x_t = q_sample(x0, t, eps, s);
    Tensor pred = model(x_t, t, cond);
    if (pred.shape() != x0.shape())
        throw DimensionError("ddpm_loss: model output " + shape_str(pred.shape()) +
                             " != input " + shape_str(x0.shape()));
    return mse(pred, eps);
}

Tensor p_sample_step(const NoisePredictor& model, const Tensor& x_t, int t, const Tensor& cond,
                     const NoiseSchedule& s, Rng& rng) {
    const double beta = s.beta_at(t);
    const double alpha = s.alpha_at(t);
    const double abar = s.alpha_bar_at(t);

    NoGradGuard no_grad;
    Tensor eps_hat = model(x_t, t, cond);
    if (eps_hat.shape() != x_t.shape())
        throw DimensionError("p_sample_step: model output " + shape_str(eps_hat.shape()) +
                             " != x_t " + shape_str(x_t.shape()));

    const float k_eps = static_cast<float>(beta / std::sqrt(1.0 - abar));
    const float inv_sqrt_alpha = static_cast<float>(1.0 / std::sqrt(alpha));
    const float sigma = static_cast<float>(std::sqrt(beta));

    Tensor out = Tensor::zeros(x_t.shape());
    float* o = out.mutable_data().data();
    const float* x = x_t.data().data();
    const float* e = eps_hat.data().data();
    const std::size_t n = out.size();
    if (t > 1) {
        for (std::size_t i = 0; i < n; ++i)
            o[i] = inv_sqrt_alpha * (x[i] - k_eps * e[i]) + sigma * rng.normal_f();
    } else {
        for (std::size_t i = 0; i < n; ++i) o[i] = inv_sqrt_alpha * (x[i] - k_eps * e[i]);
    }
    check_finite(out, "p_sample_step");
    return out;
}

Tensor sample(const NoisePredictor& model, const std::vector<int>& shape, const Tensor& cond,
              const NoiseSchedule& s, const SamplerConfig& cfg) {
    Rng rng(cfg.seed);
    Tensor x = Tensor::zeros(shape);
    rng.fill_normal(x.mutable_data().data(), x.size());
    for (int t = s.t_max; t >= 1; --t) x = p_sample_step(model, x, t, cond, s, rng);
    if (cfg.clip_output) {
        for (float& v : x.mutable_data()) v = std::min(1.0f, std::max(-1.0f, v));
    }
    return x;
}

std::pair<Tensor, int> noise_to_step(const Tensor& x_in, double strength, const NoiseSchedule& s,
                                     Rng& rng) {
    if (strength < 0.0 || strength > 1.0)
        throw ConfigError("noise_to_step: strength must lie in [0, 1], got " +
                          std::to_string(strength));
    const int t_start = static_cast<int>(std::llround(strength * s.t_max));
    if (t_start == 0) return {x_in, 0};
    Tensor eps = Tensor::zeros(x_in.shape());
    rng.fill_normal(eps.mutable_data().data(), eps.size());
    if (t_start == s.t_max) return {eps, t_start};  // full strength = fresh x_T draw
    return {q_sample(x_in, t_start, eps, s), t_start};
}

}  // namespace pf
