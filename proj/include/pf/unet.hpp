#pragma once

#include <map>
#include <set>
#include <string>

#include "pf/rng.hpp"
#include "pf/tensor.hpp"

namespace pf {

// Named parameter store. Paths are dot-separated and unique; iteration order
// is the sorted path order, which keeps optimizers and checkpoints
// deterministic.
struct ModelParams {
    std::map<std::string, Tensor> tensors;

    Tensor& at(const std::string& path);
    const Tensor& at(const std::string& path) const;
    bool has(const std::string& path) const { return tensors.count(path) > 0; }
    std::size_t total_values() const;
    void set_requires_grad(bool rg);
    void zero_grads();
    ModelParams clone_detached() const;
};

struct UNetConfig {
    int in_channels = 1;
    int base_channels = 32;
    int depth = 2;
    int time_embed_dim = 64;
    int cond_dim = 64;
    // Stage indices carrying self+cross attention after the residual block;
    // index == depth addresses the bottleneck (the default and smallest
    // conditioning path). Empty set = unconditional network.
    std::set<int> attn_stages = {2};
    int groups = 8;

    int channels_at(int stage) const { return base_channels << stage; }
};

// Sinusoidal position code: element 2i = sin(t / 10000^(2i/dim)),
// element 2i+1 = cos of the same argument. dim must be even.
Tensor time_embedding(int t, int dim);

// Fresh parameters: truncated normal (std 0.02) weights, zero biases, unit
// norm gains, zero-initialized final output conv. Paths carry the "unet."
// prefix.
ModelParams init_unet(const UNetConfig& cfg, Rng& rng);

struct LoRASet;

// eps_theta(x_t, t, cond): x CxHxW with H, W divisible by 2^depth, cond
// L x cond_dim (required whenever attn_stages is non-empty). When `lora` is
// given, attention projections route through the adapters.
Tensor unet_forward(const ModelParams& params, const UNetConfig& cfg, const Tensor& x_t, int t,
                    const Tensor& cond, const LoRASet* lora = nullptr);

}  // namespace pf
