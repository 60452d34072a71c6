#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pf/autoencoder.hpp"
#include "pf/checkpoint.hpp"
#include "pf/dataset.hpp"
#include "pf/lora.hpp"
#include "pf/schedule.hpp"
#include "pf/text.hpp"
#include "pf/unet.hpp"

namespace pf {

// Cosine schedule with hard restarts: lr0 * (1 + cos(pi * (step mod period)
// / period)) / 2. Restarts to lr0 at every multiple of `period`.
double cosine_restart_lr(std::int64_t step, double lr0, std::int64_t period);

// total_steps / T: how many training examples each timestep sees on average.
double expected_pairs_per_timestep(std::int64_t total_steps, int t_max);

struct TrainConfig {
    int total_steps = 5000;
    int batch_size = 1;
    float lr0 = 1e-4f;
    int lr_period = 0;  // 0 -> total_steps / 2
    std::uint64_t seed = 0;
    int checkpoint_every = 0;  // 0 = final only
    bool latent_mode = false;
    int log_every = 100;
    std::string log_path;         // JSONL step log; empty = none
    std::string checkpoint_path;  // stem for periodic checkpoints
};

// Everything a sampler or trainer needs, as stored in one checkpoint file.
struct ModelBundle {
    UNetConfig ucfg;
    ModelParams unet;
    ModelParams text;
    Vocab vocab;
    std::optional<LoRASet> lora;  // adapters riding on `unet`
    bool latent_mode = false;
    AutoencoderConfig acfg;
    std::optional<ModelParams> ae;
    int image_size = 32;
    NoiseSchedule schedule;
    std::int64_t step_count = 0;
};

void save_bundle(const ModelBundle& bundle, const std::string& path);
std::unique_ptr<ModelBundle> load_bundle(const std::string& path);

struct TrainResult {
    std::vector<float> losses;  // one entry per step
};

// Base-model training: the whole U-Net plus the text encoder learns. The
// desk-scale stand-in for a pretrained base checkpoint.
TrainResult train_unet(ModelBundle& bundle, const DatasetManifest& manifest,
                       const TrainConfig& cfg);

// Fine-tuning per the frozen-base recipe: trainables are the LoRA factors
// and the text encoder; every step samples a random (image, timestep) pair.
// bundle.lora must be attached; the base weights are bit-identical afterwards.
TrainResult train_lora(ModelBundle& bundle, const DatasetManifest& manifest,
                       const TrainConfig& cfg);

// One Adam pass over the autoencoder on the manifest images (reconstruction
// MSE); used by the train-ae CLI path.
TrainResult train_autoencoder(ModelParams& ae_params, const AutoencoderConfig& acfg,
                              const std::vector<Tensor>& images, int steps, float lr,
                              std::uint64_t seed, std::vector<float>* losses = nullptr);

}  // namespace pf
