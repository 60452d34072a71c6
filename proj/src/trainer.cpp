#include "pf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "pf/adam.hpp"
#include "pf/diffusion.hpp"
#include "pf/error.hpp"
#include "pf/image.hpp"
#include "pf/ops.hpp"

namespace pf {

double cosine_restart_lr(std::int64_t step, double lr0, std::int64_t period) {
    if (step < 0) throw ContractError("cosine_restart_lr: negative step");
    if (period < 1) throw ConfigError("cosine_restart_lr: period must be >= 1");
    const double phase = static_cast<double>(step % period) / static_cast<double>(period);
    return lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * phase));
}

double expected_pairs_per_timestep(std::int64_t total_steps, int t_max) {
    if (t_max < 1) throw ConfigError("expected_pairs_per_timestep: T must be >= 1");
    if (total_steps < 0) throw ContractError("expected_pairs_per_timestep: negative steps");
    return static_cast<double>(total_steps) / static_cast<double>(t_max);
}

namespace {

nlohmann::json unet_config_json(const UNetConfig& c) {
    nlohmann::json j;
    j["in_channels"] = c.in_channels;
    j["base_channels"] = c.base_channels;
    j["depth"] = c.depth;
    j["time_embed_dim"] = c.time_embed_dim;
    j["cond_dim"] = c.cond_dim;
    j["attn_stages"] = std::vector<int>(c.attn_stages.begin(), c.attn_stages.end());
    j["groups"] = c.groups;
    return j;
}

UNetConfig unet_config_from_json(const nlohmann::json& j) {
    UNetConfig c;
    c.in_channels = j.at("in_channels").get<int>();
    c.base_channels = j.at("base_channels").get<int>();
    c.depth = j.at("depth").get<int>();
    c.time_embed_dim = j.at("time_embed_dim").get<int>();
    c.cond_dim = j.at("cond_dim").get<int>();
    c.attn_stages.clear();
    for (int s : j.at("attn_stages").get<std::vector<int>>()) c.attn_stages.insert(s);
    c.groups = j.at("groups").get<int>();
    return c;
}

nlohmann::json ae_config_json(const AutoencoderConfig& c) {
    nlohmann::json j;
    j["m"] = c.m;
    j["latent_channels"] = c.latent_channels;
    j["base_channels"] = c.base_channels;
    j["in_channels"] = c.in_channels;
    return j;
}

AutoencoderConfig ae_config_from_json(const nlohmann::json& j) {
    AutoencoderConfig c;
    c.m = j.at("m").get<int>();
    c.latent_channels = j.at("latent_channels").get<int>();
    c.base_channels = j.at("base_channels").get<int>();
    c.in_channels = j.at("in_channels").get<int>();
    return c;
}

}  // namespace

void save_bundle(const ModelBundle& bundle, const std::string& path) {
    std::map<std::string, Tensor> tensors;
    for (const auto& [name, t] : bundle.unet.tensors) tensors.emplace(name, t);
    for (const auto& [name, t] : bundle.text.tensors) tensors.emplace(name, t);
    if (bundle.ae.has_value())
        for (const auto& [name, t] : bundle.ae->tensors) tensors.emplace(name, t);

    CheckpointMeta meta;
    meta.step_count = bundle.step_count;
    meta.config["unet"] = unet_config_json(bundle.ucfg);
    meta.config["vocab"] = bundle.vocab.tokens;
    meta.config["image_size"] = bundle.image_size;
    meta.config["latent_mode"] = bundle.latent_mode;
    meta.config["schedule"] = {{"t_max", bundle.schedule.t_max},
                               {"beta_start", bundle.schedule.beta.empty() ? 0.0 : bundle.schedule.beta.front()},
                               {"beta_end", bundle.schedule.beta.empty() ? 0.0 : bundle.schedule.beta.back()}};
    if (bundle.ae.has_value()) meta.config["ae"] = ae_config_json(bundle.acfg);
    if (bundle.lora.has_value()) {
        nlohmann::json targets = nlohmann::json::array();
        for (const auto& ad : bundle.lora->adapters) {
            tensors.emplace("lora." + ad.target_path + ".A", ad.a);
            tensors.emplace("lora." + ad.target_path + ".B", ad.b);
            nlohmann::json e;
            e["target"] = ad.target_path;
            e["rank"] = ad.rank;
            targets.push_back(std::move(e));
        }
        meta.config["lora_targets"] = std::move(targets);
    }
    save_checkpoint(tensors, meta, path);
}

std::unique_ptr<ModelBundle> load_bundle(const std::string& path) {
    auto [tensors, meta] = load_checkpoint(path);
    auto bundle = std::make_unique<ModelBundle>();
    bundle->step_count = meta.step_count;
    bundle->ucfg = unet_config_from_json(meta.config.at("unet"));
    bundle->vocab.tokens = meta.config.at("vocab").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < bundle->vocab.tokens.size(); ++i)
        bundle->vocab.ids[bundle->vocab.tokens[i]] = static_cast<int>(i);
    bundle->image_size = meta.config.value("image_size", 32);
    bundle->latent_mode = meta.config.value("latent_mode", false);
    const auto& sj = meta.config.at("schedule");
    bundle->schedule = make_schedule(sj.at("t_max").get<int>(), sj.at("beta_start").get<double>(),
                                     sj.at("beta_end").get<double>());
    if (meta.config.contains("ae")) {
        bundle->acfg = ae_config_from_json(meta.config.at("ae"));
        bundle->ae.emplace();
    }

    for (auto& [name, t] : tensors) {
        if (name.rfind("unet.", 0) == 0) {
            bundle->unet.tensors.emplace(name, std::move(t));
        } else if (name.rfind("text.", 0) == 0) {
            bundle->text.tensors.emplace(name, std::move(t));
        } else if (name.rfind("ae.", 0) == 0) {
            if (!bundle->ae.has_value())
                throw IntegrityError("load_bundle: ae tensors without ae config");
            bundle->ae->tensors.emplace(name, std::move(t));
        }
    }
    if (meta.config.contains("lora_targets")) {
        LoRASet set;
        for (const auto& e : meta.config["lora_targets"]) {
            LoRAAdapter ad;
            ad.target_path = e.at("target").get<std::string>();
            ad.rank = e.at("rank").get<int>();
            auto ia = tensors.find("lora." + ad.target_path + ".A");
            auto ib = tensors.find("lora." + ad.target_path + ".B");
            if (ia == tensors.end() || ib == tensors.end())
                throw IntegrityError("load_bundle: missing adapter factors for " + ad.target_path);
            ad.a = ia->second;
            ad.b = ib->second;
            ad.a.set_requires_grad(true);
            ad.b.set_requires_grad(true);
            set.adapters.push_back(std::move(ad));
        }
        std::sort(set.adapters.begin(), set.adapters.end(),
                  [](const LoRAAdapter& x, const LoRAAdapter& y) {
                      return x.target_path < y.target_path;
                  });
        bundle->lora = std::move(set);
        bundle->lora->base = &bundle->unet;
        bundle->unet.set_requires_grad(false);
    }
    return bundle;
}

namespace {

struct LoadedDataset {
    std::vector<Tensor> images;            // pixel-space tensors, or AE latents
    std::vector<std::vector<int>> tokens;  // tokenized captions
};

LoadedDataset load_dataset(const ModelBundle& bundle, const DatasetManifest& manifest) {
    if (manifest.records.empty()) throw ConfigError("training needs a non-empty manifest");
    LoadedDataset ds;
    ds.images.reserve(manifest.records.size());
    ds.tokens.reserve(manifest.records.size());
    for (const auto& rec : manifest.records) {
        PageImage img = read_png(rec.image);
        Tensor x = image_to_tensor(
            img, bundle.latent_mode ? bundle.acfg.in_channels : bundle.ucfg.in_channels);
        if (bundle.latent_mode) {
            if (!bundle.ae.has_value())
                throw ConfigError("latent_mode training needs autoencoder params");
            NoGradGuard ng;
            x = ae_encode(*bundle.ae, bundle.acfg, x).detach();
        }
        ds.images.push_back(std::move(x));
        ds.tokens.push_back(tokenize(rec.caption, bundle.vocab));
    }
    return ds;
}

TrainResult run_training(ModelBundle& bundle, const DatasetManifest& manifest,
                         const TrainConfig& cfg, bool lora_mode) {
    if (cfg.total_steps < 1) throw ConfigError("train: total_steps must be >= 1");
    if (cfg.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    const std::int64_t period = cfg.lr_period > 0 ? cfg.lr_period
                                                  : std::max(1, cfg.total_steps / 2);

    LoRASet* lora = nullptr;
    if (lora_mode) {
        if (!bundle.lora.has_value()) throw ConfigError("train_lora: no adapters attached");
        lora = &*bundle.lora;
        bundle.unet.set_requires_grad(false);  // frozen-base contract
    } else {
        bundle.unet.set_requires_grad(true);
    }
    bundle.text.set_requires_grad(true);
    if (bundle.ae.has_value()) bundle.ae->set_requires_grad(false);

    // the optimizer walks one named map: adapters get stable "lora.*" names
    std::map<std::string, Tensor> trainables;
    if (lora_mode) {
        for (auto& ad : bundle.lora->adapters) {
            trainables.emplace("lora." + ad.target_path + ".A", ad.a);
            trainables.emplace("lora." + ad.target_path + ".B", ad.b);
        }
    } else {
        for (auto& [name, t] : bundle.unet.tensors) trainables.emplace(name, t);
    }
    for (auto& [name, t] : bundle.text.tensors) trainables.emplace(name, t);

    const LoadedDataset ds = load_dataset(bundle, manifest);
    const int t_max = bundle.schedule.t_max;

    std::ofstream log;
    if (!cfg.log_path.empty()) {
        log.open(cfg.log_path, std::ios::trunc);
        if (!log) throw IoError("train: cannot open log " + cfg.log_path);
    }

    AdamOptimizer opt;
    Rng rng(cfg.seed);
    TrainResult result;
    result.losses.reserve(static_cast<std::size_t>(cfg.total_steps));

    auto model = [&](const Tensor& x_t, int t, const Tensor& cond) {
        return unet_forward(bundle.unet, bundle.ucfg, x_t, t, cond, lora);
    };

    for (int step = 0; step < cfg.total_steps; ++step) {
        const double lr = cosine_restart_lr(step, cfg.lr0, period);
        Tensor loss;
        int last_t = 0;
        try {
            for (int b = 0; b < cfg.batch_size; ++b) {
                const std::size_t idx = rng.uniform_below(ds.images.size());
                const int t = 1 + static_cast<int>(rng.uniform_below(
                                      static_cast<std::uint64_t>(t_max)));
                last_t = t;
                Tensor cond = encode_text(ds.tokens[idx], bundle.text);
                Tensor term = ddpm_loss(model, ds.images[idx], t, cond, bundle.schedule, rng);
                loss = loss.defined() ? add(loss, term) : term;
            }
            if (cfg.batch_size > 1) loss = scale(loss, 1.0f / static_cast<float>(cfg.batch_size));
        } catch (const NumericError& e) {
            throw NumericError("train aborted at step " + std::to_string(step) + " (lr=" +
                               std::to_string(lr) + "): " + e.what());
        }
        const float loss_value = loss.item();
        if (!std::isfinite(loss_value))
            throw NumericError("train aborted at step " + std::to_string(step) + " (lr=" +
                               std::to_string(lr) + "): non-finite loss");
        result.losses.push_back(loss_value);

        backward(loss);
        opt.step(trainables, static_cast<float>(lr));

        if (log.is_open() && (step % std::max(1, cfg.log_every)) == 0) {
            nlohmann::json line;
            line["step"] = step;
            line["loss"] = loss_value;
            line["lr"] = lr;
            line["t_sampled"] = last_t;
            log << line.dump() << "\n";
        }
        bundle.step_count += 1;
        if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() &&
            (step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.total_steps) {
            save_bundle(bundle, cfg.checkpoint_path + ".step" + std::to_string(step + 1));
        }
    }
    return result;
}

}  // namespace

TrainResult train_unet(ModelBundle& bundle, const DatasetManifest& manifest,
                       const TrainConfig& cfg) {
    return run_training(bundle, manifest, cfg, /*lora_mode=*/false);
}

TrainResult train_lora(ModelBundle& bundle, const DatasetManifest& manifest,
                       const TrainConfig& cfg) {
    return run_training(bundle, manifest, cfg, /*lora_mode=*/true);
}

TrainResult train_autoencoder(ModelParams& ae_params, const AutoencoderConfig& acfg,
                              const std::vector<Tensor>& images, int steps, float lr,
                              std::uint64_t seed, std::vector<float>* losses) {
    if (images.empty()) throw ConfigError("train_autoencoder: no images");
    ae_params.set_requires_grad(true);
    AdamOptimizer opt;
    Rng rng(seed);
    TrainResult result;
    for (int step = 0; step < steps; ++step) {
        const std::size_t idx = rng.uniform_below(images.size());
        const float value = ae_train_step(ae_params, acfg, {images[idx]}, opt, lr);
        result.losses.push_back(value);
        if (losses != nullptr) losses->push_back(value);
    }
    return result;
}

}  // namespace pf
