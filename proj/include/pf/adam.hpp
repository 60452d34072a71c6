#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pf/tensor.hpp"

namespace pf {

// Per-parameter Adam moment buffers. step_count advances by exactly one per
// adam_step call.
struct AdamState {
    std::vector<float> m;
    std::vector<float> v;
    std::int64_t step_count = 0;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;

    static AdamState for_param(const Tensor& param);
};

// Bias-corrected Adam update in place; zeroes the parameter's grad afterwards.
// Missing grad is a contract error.
void adam_step(Tensor& param, AdamState& state, float lr);

// Named-parameter convenience used by the trainers.
struct AdamOptimizer {
    std::map<std::string, AdamState> states;

    void step(std::map<std::string, Tensor>& params, float lr);
};

}  // namespace pf
