#pragma once

#include <vector>

#include "pf/adam.hpp"
#include "pf/rng.hpp"
#include "pf/unet.hpp"

namespace pf {

// Perceptual-compression autoencoder: downsampling factor f = 2^m.
struct AutoencoderConfig {
    int m = 2;  // f = 2^m
    int latent_channels = 4;
    int base_channels = 32;
    int in_channels = 1;

    int factor() const { return 1 << m; }
};

// Paths carry the "ae." prefix.
ModelParams init_autoencoder(const AutoencoderConfig& cfg, Rng& rng);

// x [in x H x W] -> z [latent x H/f x W/f]; f must divide H and W.
Tensor ae_encode(const ModelParams& params, const AutoencoderConfig& cfg, const Tensor& x);
// z -> reconstruction [in x H x W]
Tensor ae_decode(const ModelParams& params, const AutoencoderConfig& cfg, const Tensor& z);

// One Adam step on mean ||D(E(x)) - x||^2 over the batch; returns the loss.
float ae_train_step(ModelParams& params, const AutoencoderConfig& cfg,
                    const std::vector<Tensor>& batch, AdamOptimizer& opt, float lr);

}  // namespace pf
