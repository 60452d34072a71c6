#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pf/tensor.hpp"
#include "pf/unet.hpp"

namespace pf {

// Low-rank update factors for one frozen 2-D weight W[d x h]:
// delta W = B A with B[d x k], A[k x h], applied at scale 1.
struct LoRAAdapter {
    std::string target_path;
    Tensor a;  // [k x h], init N(0, std 1/k)
    Tensor b;  // [d x k], init zero
    int rank = 4;
};

// One adapter per matched projection, base weights frozen.
struct LoRASet {
    std::vector<LoRAAdapter> adapters;  // sorted by target_path, paths unique
    const ModelParams* base = nullptr;

    const LoRAAdapter* find(const std::string& path) const;
    // sum of k*(d+h) over adapters
    std::size_t trainable_count() const;
    void zero_grads();
};

// Default target pattern: every q/k/v/out projection of every attention
// block, self- and cross-.
inline constexpr const char* kDefaultLoraTargets = "*.attn.*.weight";

// Glob match with '*' wildcards (no escaping).
bool glob_match(const std::string& pattern, const std::string& text);

// Freezes every tensor in `params`, then attaches rank-k adapters to each
// 2-D weight matching the pattern. Deterministic in `seed`.
LoRASet attach(ModelParams& params, int rank, const std::string& target_pattern,
               std::uint64_t seed);

// x . (W + B A)^T computed as x W^T + (x A^T) B^T; never materializes the
// update. Gradients flow to A and B only (W stays frozen).
Tensor effective_forward(const LoRAAdapter& adapter, const Tensor& w, const Tensor& x);

// Copy of the base with each target replaced by W + B A; base untouched.
ModelParams merge(const LoRASet& set);

// Adapter checkpoint (same container as full checkpoints, adapter_only flag
// set). load verifies target paths and shapes against the supplied params.
void save_adapter(const LoRASet& set, const std::string& path);
LoRASet load_adapter(const std::string& path, const ModelParams& params);

}  // namespace pf
