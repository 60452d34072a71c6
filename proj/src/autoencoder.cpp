#include "pf/autoencoder.hpp"

#include <cmath>

#include "pf/error.hpp"
#include "pf/ops.hpp"

namespace pf {

namespace {

float trunc_normal(Rng& rng, float std_dev) {
    for (;;) {
        const double v = rng.normal();
        if (std::fabs(v) <= 2.0) return static_cast<float>(v) * std_dev;
    }
}

Tensor init_weight(std::vector<int> shape, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (float& v : t.mutable_data()) v = trunc_normal(rng, 0.02f);
    return t;
}

void validate(const AutoencoderConfig& cfg) {
    if (cfg.m < 0 || cfg.latent_channels < 1 || cfg.base_channels < 1 || cfg.in_channels < 1)
        throw ConfigError("autoencoder: bad config");
}

}  // namespace

ModelParams init_autoencoder(const AutoencoderConfig& cfg, Rng& rng) {
    validate(cfg);
    ModelParams p;
    const int b = cfg.base_channels;
    p.tensors.emplace("ae.enc.stem.weight", init_weight({b, cfg.in_channels, 3, 3}, rng));
    p.tensors.emplace("ae.enc.stem.bias", Tensor::zeros({b}));
    for (int i = 0; i < cfg.m; ++i) {
        const std::string prefix = "ae.enc.down" + std::to_string(i);
        p.tensors.emplace(prefix + ".weight", init_weight({b, b, 3, 3}, rng));
        p.tensors.emplace(prefix + ".bias", Tensor::zeros({b}));
    }
    p.tensors.emplace("ae.enc.head.weight", init_weight({cfg.latent_channels, b, 3, 3}, rng));
    p.tensors.emplace("ae.enc.head.bias", Tensor::zeros({cfg.latent_channels}));

    p.tensors.emplace("ae.dec.stem.weight", init_weight({b, cfg.latent_channels, 3, 3}, rng));
    p.tensors.emplace("ae.dec.stem.bias", Tensor::zeros({b}));
    for (int i = 0; i < cfg.m; ++i) {
        const std::string prefix = "ae.dec.up" + std::to_string(i);
        p.tensors.emplace(prefix + ".weight", init_weight({b, b, 3, 3}, rng));
        p.tensors.emplace(prefix + ".bias", Tensor::zeros({b}));
    }
    p.tensors.emplace("ae.dec.head.weight", init_weight({cfg.in_channels, b, 3, 3}, rng));
    p.tensors.emplace("ae.dec.head.bias", Tensor::zeros({cfg.in_channels}));
    return p;
}

Tensor ae_encode(const ModelParams& params, const AutoencoderConfig& cfg, const Tensor& x) {
    validate(cfg);
    if (x.ndim() != 3 || x.dim(0) != cfg.in_channels)
        throw DimensionError("ae_encode: expected " + std::to_string(cfg.in_channels) +
                             "xHxW input, got " + shape_str(x.shape()));
    const int f = cfg.factor();
    if (x.dim(1) % f != 0 || x.dim(2) % f != 0)
        throw DimensionError("ae_encode: f = " + std::to_string(f) + " must divide " +
                             shape_str(x.shape()));
    Tensor h = silu(conv2d(x, params.at("ae.enc.stem.weight"), params.at("ae.enc.stem.bias"), 1, 1));
    for (int i = 0; i < cfg.m; ++i) {
        const std::string prefix = "ae.enc.down" + std::to_string(i);
        h = silu(conv2d(h, params.at(prefix + ".weight"), params.at(prefix + ".bias"), 1, 1));
        h = avgpool2(h);
    }
    return conv2d(h, params.at("ae.enc.head.weight"), params.at("ae.enc.head.bias"), 1, 1);
}

Tensor ae_decode(const ModelParams& params, const AutoencoderConfig& cfg, const Tensor& z) {
    validate(cfg);
    if (z.ndim() != 3 || z.dim(0) != cfg.latent_channels)
        throw DimensionError("ae_decode: expected " + std::to_string(cfg.latent_channels) +
                             "xhxw latent, got " + shape_str(z.shape()));
    Tensor h = silu(conv2d(z, params.at("ae.dec.stem.weight"), params.at("ae.dec.stem.bias"), 1, 1));
    for (int i = 0; i < cfg.m; ++i) {
        const std::string prefix = "ae.dec.up" + std::to_string(i);
        h = upsample_nearest2(h);
        h = silu(conv2d(h, params.at(prefix + ".weight"), params.at(prefix + ".bias"), 1, 1));
    }
    return conv2d(h, params.at("ae.dec.head.weight"), params.at("ae.dec.head.bias"), 1, 1);
}

float ae_train_step(ModelParams& params, const AutoencoderConfig& cfg,
                    const std::vector<Tensor>& batch, AdamOptimizer& opt, float lr) {
    if (batch.empty()) throw ConfigError("ae_train_step: empty batch");
    Tensor loss;
    for (const Tensor& x : batch) {
        Tensor rec = ae_decode(params, cfg, ae_encode(params, cfg, x));
        Tensor term = mse(rec, x);
        loss = loss.defined() ? add(loss, term) : term;
    }
    if (batch.size() > 1) loss = scale(loss, 1.0f / static_cast<float>(batch.size()));
    const float value = loss.item();
    backward(loss);
    opt.step(params.tensors, lr);
    return value;
}

}  // namespace pf
