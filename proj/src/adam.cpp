#include "pf/adam.hpp"

#include <cmath>

#include "pf/error.hpp"

namespace pf {

AdamState AdamState::for_param(const Tensor& param) {
    AdamState s;
    s.m.assign(param.size(), 0.0f);
    s.v.assign(param.size(), 0.0f);
    return s;
}

void adam_step(Tensor& param, AdamState& state, float lr) {
    if (!param.has_grad())
        throw ContractError("adam_step: parameter has no gradient");
    if (state.m.size() != param.size() || state.v.size() != param.size())
        throw ContractError("adam_step: moment buffers do not match parameter size");

    state.step_count += 1;
    const double b1 = state.beta1, b2 = state.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));

    float* p = param.mutable_data().data();
    float* g = param.mutable_grad().data();
    const std::size_t n = param.size();
    for (std::size_t i = 0; i < n; ++i) {
        state.m[i] = static_cast<float>(b1 * state.m[i] + (1.0 - b1) * g[i]);
        state.v[i] = static_cast<float>(b2 * state.v[i] + (1.0 - b2) * g[i] * g[i]);
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        p[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + state.eps));
    }
    param.zero_grad();
}

void AdamOptimizer::step(std::map<std::string, Tensor>& params, float lr) {
    for (auto& [name, t] : params) {
        if (!t.requires_grad()) continue;
        auto it = states.find(name);
        if (it == states.end()) it = states.emplace(name, AdamState::for_param(t)).first;
        if (!t.has_grad()) t.ensure_grad();  // untouched params get a zero-grad (no-op) step
        adam_step(t, it->second, lr);
    }
}

}  // namespace pf
