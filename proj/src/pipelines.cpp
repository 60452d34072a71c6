#include "pf/pipelines.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pf/diffusion.hpp"
#include "pf/error.hpp"
#include "pf/gradcheck.hpp"
#include "pf/image.hpp"
#include "pf/ops.hpp"

namespace fs = std::filesystem;

namespace pf {

namespace {

NoisePredictor make_predictor(const ModelBundle& bundle) {
    const LoRASet* lora = bundle.lora.has_value() ? &*bundle.lora : nullptr;
    return [&bundle, lora](const Tensor& x, int t, const Tensor& cond) {
        return unet_forward(bundle.unet, bundle.ucfg, x, t, cond, lora);
    };
}

Tensor encode_prompt(const ModelBundle& bundle, const std::string& prompt) {
    NoGradGuard ng;
    return encode_text(tokenize(prompt, bundle.vocab), bundle.text).detach();
}

std::vector<int> sample_shape(const ModelBundle& bundle) {
    if (bundle.latent_mode) {
        const int f = bundle.acfg.factor();
        return {bundle.acfg.latent_channels, bundle.image_size / f, bundle.image_size / f};
    }
    return {bundle.ucfg.in_channels, bundle.image_size, bundle.image_size};
}

Tensor clamp_unit(Tensor x) {
    for (float& v : x.mutable_data()) v = std::min(1.0f, std::max(-1.0f, v));
    return x;
}

// latent chains decode (and clamp) at the very end; pixel chains were
// already clamped by the sampler
Tensor to_pixel_space(const ModelBundle& bundle, Tensor x, bool clip) {
    if (!bundle.latent_mode) return x;
    if (!bundle.ae.has_value()) throw ConfigError("latent checkpoint is missing ae parameters");
    NoGradGuard ng;
    Tensor img = ae_decode(*bundle.ae, bundle.acfg, x);
    return clip ? clamp_unit(std::move(img)) : img;
}

std::string write_output(const Tensor& x, const std::string& out_dir, int index) {
    fs::create_directories(out_dir);
    char name[32];
    std::snprintf(name, sizeof(name), "out_%04d.png", index);
    const std::string path = (fs::path(out_dir) / name).string();
    write_png(tensor_to_image(x), path);
    return path;
}

Tensor load_input_tensor(const ModelBundle& bundle, const PageImage& img) {
    if (img.width != bundle.image_size || img.height != bundle.image_size)
        throw ConfigError("input is " + std::to_string(img.width) + "x" +
                          std::to_string(img.height) + " but the checkpoint expects " +
                          std::to_string(bundle.image_size) + "x" +
                          std::to_string(bundle.image_size));
    const int channels = bundle.latent_mode ? bundle.acfg.in_channels : bundle.ucfg.in_channels;
    return image_to_tensor(img, channels);
}

}  // namespace

Tensor img2img_tensor(const ModelBundle& bundle, const Tensor& x_in, double strength,
                      std::uint64_t seed, const std::string& prompt, bool clip_output) {
    const Tensor cond = encode_prompt(bundle, prompt);
    const NoisePredictor model = make_predictor(bundle);
    Rng rng(seed);

    Tensor work = x_in;
    if (bundle.latent_mode) {
        if (!bundle.ae.has_value()) throw ConfigError("latent checkpoint is missing ae parameters");
        NoGradGuard ng;
        work = ae_encode(*bundle.ae, bundle.acfg, x_in).detach();
    }
    auto [x, t_start] = noise_to_step(work, strength, bundle.schedule, rng);
    for (int t = t_start; t >= 1; --t) x = p_sample_step(model, x, t, cond, bundle.schedule, rng);
    if (bundle.latent_mode) return to_pixel_space(bundle, x, clip_output);
    // untouched input passes through bit-exactly at strength 0
    if (t_start > 0 && clip_output) x = clamp_unit(std::move(x));
    return x;
}

std::vector<std::string> txt2img(const ModelBundle& bundle, const GenerationRequest& req) {
    if (req.count < 1) throw ConfigError("txt2img: count must be >= 1");
    const Tensor cond = encode_prompt(bundle, req.prompt);
    const NoisePredictor model = make_predictor(bundle);
    std::vector<std::string> written;
    for (int i = 0; i < req.count; ++i) {
        SamplerConfig cfg;
        cfg.seed = req.seed + static_cast<std::uint64_t>(i);
        cfg.clip_output = !bundle.latent_mode && req.clip_output;
        Tensor x = sample(model, sample_shape(bundle), cond, bundle.schedule, cfg);
        x = to_pixel_space(bundle, std::move(x), req.clip_output);
        written.push_back(write_output(x, req.output_dir, i));
    }
    return written;
}

std::vector<std::string> img2img(const ModelBundle& bundle, const GenerationRequest& req) {
    if (req.count < 1) throw ConfigError("img2img: count must be >= 1");
    if (req.input_path.empty()) throw ConfigError("img2img: input image required");
    const Tensor x_in = load_input_tensor(bundle, read_png(req.input_path));
    std::vector<std::string> written;
    for (int i = 0; i < req.count; ++i) {
        Tensor x = img2img_tensor(bundle, x_in, req.strength,
                                  req.seed + static_cast<std::uint64_t>(i), req.prompt,
                                  req.clip_output);
        written.push_back(write_output(x, req.output_dir, i));
    }
    return written;
}

std::vector<std::string> edge2img(const ModelBundle& bundle, const GenerationRequest& req) {
    if (req.input_path.empty()) throw ConfigError("edge2img: input image required");
    PageImage edges = edge_map(read_png(req.input_path), req.edge_low, req.edge_high);
    GenerationRequest inner = req;
    inner.mode = GenMode::img2img;
    const Tensor x_in = load_input_tensor(bundle, edges);
    std::vector<std::string> written;
    for (int i = 0; i < req.count; ++i) {
        Tensor x = img2img_tensor(bundle, x_in, req.strength,
                                  req.seed + static_cast<std::uint64_t>(i), req.prompt,
                                  req.clip_output);
        written.push_back(write_output(x, req.output_dir, i));
    }
    return written;
}

namespace {

double frame_diff(const PageImage& a, const PageImage& b) {
    if (a.width != b.width || a.height != b.height || a.channels != b.channels)
        throw DimensionError("video frames disagree in geometry");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i)
        acc += std::fabs(static_cast<double>(a.pixels[i]) - b.pixels[i]);
    return acc / static_cast<double>(a.pixels.size());
}

}  // namespace

std::pair<std::vector<std::string>, TemporalReport> video_frames(
    const ModelBundle& bundle, const std::vector<std::string>& frame_paths,
    const GenerationRequest& req, SeedMode seed_mode) {
    if (frame_paths.empty()) throw ConfigError("video: no frames");
    std::vector<PageImage> inputs;
    inputs.reserve(frame_paths.size());
    for (const auto& p : frame_paths) inputs.push_back(read_png(p));

    fs::create_directories(req.output_dir);
    std::vector<std::string> written;
    std::vector<PageImage> outputs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const std::uint64_t seed =
            seed_mode == SeedMode::shared ? req.seed : req.seed + static_cast<std::uint64_t>(i);
        Tensor x = img2img_tensor(bundle, load_input_tensor(bundle, inputs[i]), req.strength,
                                  seed, req.prompt, req.clip_output);
        PageImage out = tensor_to_image(x);
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04d.png", static_cast<int>(i));
        const std::string path = (fs::path(req.output_dir) / name).string();
        write_png(out, path);
        written.push_back(path);
        outputs.push_back(std::move(out));
    }

    TemporalReport report;
    if (inputs.size() >= 2) {
        double acc_in = 0.0, acc_out = 0.0;
        for (std::size_t i = 0; i + 1 < inputs.size(); ++i) {
            const double din = frame_diff(inputs[i], inputs[i + 1]);
            const double dout = frame_diff(outputs[i], outputs[i + 1]);
            report.input_diffs.push_back(din);
            report.output_diffs.push_back(dout);
            acc_in += din;
            acc_out += dout;
        }
        report.ti_input = acc_in / static_cast<double>(report.input_diffs.size());
        report.ti_output = acc_out / static_cast<double>(report.output_diffs.size());
    }
    return {std::move(written), std::move(report)};
}

// ---------------------------------------------------------------------------
// CLI
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> sorted_pngs(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
    std::vector<std::string> paths;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") paths.push_back(e.path().string());
    std::sort(paths.begin(), paths.end());
    return paths;
}

PanelGrid parse_grid(const std::string& spec) {
    PanelGrid g;
    if (spec.empty()) return g;
    std::vector<int> v;
    std::string token;
    std::istringstream stream(spec);
    while (std::getline(stream, token, ',')) v.push_back(std::stoi(token));
    if (v.size() == 2) {
        g.rows = v[0];
        g.cols = v[1];
    } else if (v.size() == 4) {
        g.rows = v[0];
        g.cols = v[1];
        g.margin_left = g.margin_right = g.margin_top = g.margin_bottom = v[2];
        g.gutter_x = g.gutter_y = v[3];
    } else if (v.size() == 8) {
        g.rows = v[0];
        g.cols = v[1];
        g.margin_left = v[2];
        g.margin_right = v[3];
        g.margin_top = v[4];
        g.margin_bottom = v[5];
        g.gutter_x = v[6];
        g.gutter_y = v[7];
    } else {
        throw ConfigError("--grid expects rows,cols[,margins,gutters] or the 8-value form");
    }
    return g;
}

int cmd_prepare(const std::string& pages, const std::string& out, int threshold,
                const std::string& grid_spec) {
    const PanelGrid grid = parse_grid(grid_spec);
    fs::create_directories(out);
    nlohmann::json report;
    report["pages"] = nlohmann::json::array();
    int bw = 0, color = 0, panels_written = 0;
    for (const auto& path : sorted_pngs(pages)) {
        const PageImage page = read_png(path);
        const PageClass cls = classify_page(page, threshold);
        nlohmann::json entry;
        entry["file"] = fs::path(path).filename().string();
        entry["label"] = cls == PageClass::BlackWhite ? "black_white" : "color";
        report["pages"].push_back(std::move(entry));
        if (cls == PageClass::Color) {
            ++color;
            continue;
        }
        ++bw;
        const auto panels = extract_panels(page, grid);
        const std::string stem = fs::path(path).stem().string();
        for (std::size_t i = 0; i < panels.size(); ++i) {
            write_png(panels[i],
                      (fs::path(out) / (stem + "_p" + std::to_string(i) + ".png")).string());
            ++panels_written;
        }
    }
    report["black_white"] = bw;
    report["color"] = color;
    report["panels_written"] = panels_written;
    std::ofstream rep(fs::path(out) / "classification_report.json");
    rep << report.dump(2) << "\n";
    std::printf("classified %d black/white + %d color pages, wrote %d panels\n", bw, color,
                panels_written);
    return 0;
}

std::vector<Tensor> manifest_tensors(const DatasetManifest& manifest, int channels) {
    std::vector<Tensor> images;
    for (const auto& rec : manifest.records)
        images.push_back(image_to_tensor(read_png(rec.image), channels));
    return images;
}

int cmd_train_ae(const std::string& manifest_path, const std::string& out, int m, int steps,
                 float lr, std::uint64_t seed, int base_channels, int latent_channels) {
    const DatasetManifest manifest = load_manifest(manifest_path);
    if (manifest.records.empty()) throw ConfigError("train-ae: empty manifest");
    AutoencoderConfig acfg;
    acfg.m = m;
    acfg.base_channels = base_channels;
    acfg.latent_channels = latent_channels;
    acfg.in_channels = 1;
    const std::vector<Tensor> images = manifest_tensors(manifest, acfg.in_channels);
    Rng rng(seed);
    ModelParams ae = init_autoencoder(acfg, rng);
    std::vector<float> losses;
    train_autoencoder(ae, acfg, images, steps, lr, seed + 1, &losses);

    CheckpointMeta meta;
    meta.config["ae"] = {{"m", acfg.m},
                         {"latent_channels", acfg.latent_channels},
                         {"base_channels", acfg.base_channels},
                         {"in_channels", acfg.in_channels}};
    meta.config["image_size"] = images.front().dim(1);
    save_checkpoint(ae.tensors, meta, out);
    std::printf("trained autoencoder for %d steps, final loss %.6f, wrote %s\n", steps,
                losses.empty() ? 0.0f : losses.back(), out.c_str());
    return 0;
}

ModelBundle make_base_bundle(const DatasetManifest& manifest, int size, int base_channels,
                             int depth, int cond_dim, int time_dim, int groups, int t_max,
                             double beta_start, double beta_end, std::uint64_t seed,
                             bool latent, const std::string& ae_ckpt) {
    ModelBundle bundle;
    bundle.ucfg.base_channels = base_channels;
    bundle.ucfg.depth = depth;
    bundle.ucfg.cond_dim = cond_dim;
    bundle.ucfg.time_embed_dim = time_dim;
    bundle.ucfg.groups = groups;
    bundle.ucfg.attn_stages = {depth};
    bundle.image_size = size;
    bundle.schedule = make_schedule(t_max, beta_start, beta_end);

    std::vector<std::string> words;
    for (const auto& rec : manifest.records) words.push_back(rec.caption);
    bundle.vocab = Vocab::from_tokens({});
    if (latent) {
        auto [tensors, meta] = load_checkpoint(ae_ckpt);
        if (!meta.config.contains("ae"))
            throw CompatibilityError("train-base: " + ae_ckpt + " is not an autoencoder checkpoint");
        bundle.latent_mode = true;
        bundle.acfg.m = meta.config["ae"].at("m").get<int>();
        bundle.acfg.latent_channels = meta.config["ae"].at("latent_channels").get<int>();
        bundle.acfg.base_channels = meta.config["ae"].at("base_channels").get<int>();
        bundle.acfg.in_channels = meta.config["ae"].at("in_channels").get<int>();
        bundle.ae.emplace();
        for (auto& [name, tns] : tensors) bundle.ae->tensors.emplace(name, std::move(tns));
        bundle.ucfg.in_channels = bundle.acfg.latent_channels;
        const int latent_size = size / bundle.acfg.factor();
        if (latent_size % (1 << depth) != 0)
            throw ConfigError("train-base: latent size " + std::to_string(latent_size) +
                              " not divisible by 2^depth");
    } else {
        bundle.ucfg.in_channels = 1;
    }

    bundle.text = init_text_encoder(2, cond_dim, seed + 1);
    extend_vocab(bundle.vocab, bundle.text, words, seed + 2);
    Rng rng(seed + 3);
    bundle.unet = init_unet(bundle.ucfg, rng);
    return bundle;
}

int cmd_train_base(const std::string& manifest_path, const std::string& out, TrainConfig tcfg,
                   int size, int base_channels, int depth, int cond_dim, int time_dim, int groups,
                   int t_max, double beta_start, double beta_end, bool latent,
                   const std::string& ae_ckpt) {
    const DatasetManifest manifest = load_manifest(manifest_path);
    if (manifest.records.empty()) throw ConfigError("train-base: empty manifest");
    ModelBundle bundle = make_base_bundle(manifest, size, base_channels, depth, cond_dim, time_dim,
                                          groups, t_max, beta_start, beta_end, tcfg.seed, latent,
                                          ae_ckpt);
    tcfg.latent_mode = bundle.latent_mode;
    tcfg.checkpoint_path = out;
    TrainResult res = train_unet(bundle, manifest, tcfg);
    save_bundle(bundle, out);
    std::printf("trained base model for %d steps, final loss %.6f, wrote %s\n", tcfg.total_steps,
                res.losses.empty() ? 0.0f : res.losses.back(), out.c_str());
    return 0;
}

int cmd_train_lora(const std::string& manifest_path, const std::string& base, int rank,
                   const std::string& targets, TrainConfig tcfg, const std::string& out,
                   const std::string& adapter_out) {
    const DatasetManifest manifest = load_manifest(manifest_path);
    if (manifest.records.empty()) throw ConfigError("train-lora: empty manifest");
    auto bundle = load_bundle(base);
    std::vector<std::string> captions;
    for (const auto& rec : manifest.records) captions.push_back(rec.caption);
    extend_vocab(bundle->vocab, bundle->text, captions, tcfg.seed + 11);
    bundle->lora = attach(bundle->unet, rank, targets, tcfg.seed + 12);
    bundle->lora->base = &bundle->unet;
    tcfg.latent_mode = bundle->latent_mode;
    tcfg.checkpoint_path = out;
    TrainResult res = train_lora(*bundle, manifest, tcfg);
    save_bundle(*bundle, out);
    if (!adapter_out.empty()) save_adapter(*bundle->lora, adapter_out);
    std::printf("fine-tuned %zu adapters for %d steps, final loss %.6f, wrote %s\n",
                bundle->lora->adapters.size(), tcfg.total_steps,
                res.losses.empty() ? 0.0f : res.losses.back(), out.c_str());
    return 0;
}

int cmd_train_clip(const std::string& corpus, const std::string& out, int steps, float lr,
                   std::uint64_t seed) {
    std::vector<ShapePanel> panels;
    for (const auto& path : sorted_pngs(corpus)) {
        const std::string stem = fs::path(path).stem().string();
        const auto cut = stem.find('_');
        const std::string cls = cut == std::string::npos ? stem : stem.substr(0, cut);
        const auto& names = shape_class_names();
        const auto it = std::find(names.begin(), names.end(), cls);
        if (it == names.end())
            throw ConfigError("train-clip: cannot infer class from filename " + stem +
                              " (expected <class>_*.png)");
        ShapePanel p;
        p.label = static_cast<int>(it - names.begin());
        p.image = read_png(path);
        panels.push_back(std::move(p));
    }
    if (panels.empty()) throw ConfigError("train-clip: no panels under " + corpus);
    ToyClipConfig cfg;
    cfg.steps = steps;
    cfg.lr = lr;
    cfg.seed = seed;
    std::vector<float> losses;
    ToyClip clip = train_toy_clip(panels, cfg, &losses);

    std::map<std::string, Tensor> tensors;
    for (const auto& [name, t] : clip.image_tower.tensors) tensors.emplace(name, t);
    for (const auto& [name, t] : clip.text_tower.tensors) tensors.emplace(name, t);
    CheckpointMeta meta;
    meta.config["clip"] = {{"embed_dim", clip.embed_dim}};
    meta.config["vocab"] = clip.vocab.tokens;
    save_checkpoint(tensors, meta, out);
    std::printf("trained toy clip for %d steps, loss %.4f -> %.4f, wrote %s\n", steps,
                losses.empty() ? 0.0f : losses.front(), losses.empty() ? 0.0f : losses.back(),
                out.c_str());
    return 0;
}

int cmd_synth(const std::string& kind, int n, std::uint64_t seed, const std::string& out) {
    fs::create_directories(out);
    if (kind == "shape_panels") {
        const auto panels = generate_shape_panels(n, seed);
        for (std::size_t i = 0; i < panels.size(); ++i) {
            char name[64];
            std::snprintf(name, sizeof(name), "%s_%04d.png",
                          shape_class_names()[static_cast<std::size_t>(panels[i].label)].c_str(),
                          static_cast<int>(i));
            write_png(panels[i].image, (fs::path(out) / name).string());
        }
        std::printf("wrote %d shape panels to %s\n", n, out.c_str());
        return 0;
    }
    CorpusKind ck;
    if (kind == "bw_pages") {
        ck = CorpusKind::bw_pages;
    } else if (kind == "color_pages") {
        ck = CorpusKind::color_pages;
    } else {
        throw ConfigError("synth: unknown kind " + kind);
    }
    const auto pages = generate_synthetic_corpus(ck, n, seed);
    for (std::size_t i = 0; i < pages.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "page_%04d.png", static_cast<int>(i));
        write_png(pages[i], (fs::path(out) / name).string());
    }
    std::printf("wrote %d pages to %s\n", n, out.c_str());
    return 0;
}

void write_report(const TemporalReport& report, const std::string& path) {
    nlohmann::json j;
    j["ti_input"] = report.ti_input.has_value() ? nlohmann::json(*report.ti_input)
                                                : nlohmann::json(nullptr);
    j["ti_output"] = report.ti_output.has_value() ? nlohmann::json(*report.ti_output)
                                                  : nlohmann::json(nullptr);
    j["input_diffs"] = report.input_diffs;
    j["output_diffs"] = report.output_diffs;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("video: cannot write report " + path);
    out << j.dump(2) << "\n";
}

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"desk-scale diffusion fine-tuning over comic panels"};
    app.require_subcommand(1);

    // prepare
    auto* prepare = app.add_subcommand("prepare", "classify pages and crop panels");
    std::string pages_dir, prep_out, grid_spec;
    int threshold = 10;
    prepare->add_option("--pages", pages_dir, "directory of page png files")->required();
    prepare->add_option("--out", prep_out, "output directory")->required();
    prepare->add_option("--threshold", threshold, "max channel difference for black/white");
    prepare->add_option("--grid", grid_spec, "rows,cols[,margins,gutters]");

    // manifest
    auto* man = app.add_subcommand("manifest", "build a caption manifest from panels");
    std::string man_panels, man_caption = "CNH3000", man_out;
    man->add_option("--panels", man_panels, "panel directory")->required();
    man->add_option("--caption", man_caption, "caption for every record");
    man->add_option("--out", man_out, "manifest path")->required();

    // train-ae
    auto* tae = app.add_subcommand("train-ae", "train the autoencoder");
    std::string tae_manifest, tae_out;
    int tae_m = 2, tae_steps = 2000, tae_base = 32, tae_latent = 4;
    float tae_lr = 1e-3f;
    std::uint64_t tae_seed = 0;
    tae->add_option("--manifest", tae_manifest)->required();
    tae->add_option("--out", tae_out)->required();
    tae->add_option("--m", tae_m, "downsampling exponent (f = 2^m)");
    tae->add_option("--steps", tae_steps);
    tae->add_option("--lr", tae_lr);
    tae->add_option("--seed", tae_seed);
    tae->add_option("--base-channels", tae_base);
    tae->add_option("--latent-channels", tae_latent);

    // train-base
    auto* tb = app.add_subcommand("train-base", "train a base diffusion model");
    std::string tb_manifest, tb_out, tb_ae, tb_log;
    TrainConfig tb_cfg;
    tb_cfg.total_steps = 3000;
    int tb_size = 32, tb_base_ch = 32, tb_depth = 2, tb_cond = 64, tb_time = 64, tb_groups = 8;
    int tb_t = 100;
    double tb_bstart = 1e-4, tb_bend = 0.02;
    bool tb_latent = false;
    tb->add_option("--manifest", tb_manifest)->required();
    tb->add_option("--out", tb_out)->required();
    tb->add_option("--steps", tb_cfg.total_steps);
    tb->add_option("--lr", tb_cfg.lr0);
    tb->add_option("--lr-period", tb_cfg.lr_period);
    tb->add_option("--seed", tb_cfg.seed);
    tb->add_option("--batch", tb_cfg.batch_size);
    tb->add_option("--checkpoint-every", tb_cfg.checkpoint_every);
    tb->add_option("--log", tb_log);
    tb->add_option("--size", tb_size);
    tb->add_option("--base-channels", tb_base_ch);
    tb->add_option("--depth", tb_depth);
    tb->add_option("--cond-dim", tb_cond);
    tb->add_option("--time-dim", tb_time);
    tb->add_option("--groups", tb_groups);
    tb->add_option("--t", tb_t, "diffusion timesteps");
    tb->add_option("--beta-start", tb_bstart);
    tb->add_option("--beta-end", tb_bend);
    tb->add_flag("--latent", tb_latent, "run diffusion in autoencoder latents");
    tb->add_option("--ae", tb_ae, "autoencoder checkpoint (latent mode)");

    // train-lora
    auto* tl = app.add_subcommand("train-lora", "fine-tune with low-rank adapters");
    std::string tl_manifest, tl_base, tl_out, tl_adapter_out, tl_log;
    std::string tl_targets = kDefaultLoraTargets;
    TrainConfig tl_cfg;
    int tl_rank = 4;
    tl->add_option("--manifest", tl_manifest)->required();
    tl->add_option("--base", tl_base, "base model checkpoint")->required();
    tl->add_option("--rank", tl_rank);
    tl->add_option("--targets", tl_targets, "glob over parameter paths");
    tl->add_option("--steps", tl_cfg.total_steps);
    tl->add_option("--lr", tl_cfg.lr0);
    tl->add_option("--lr-period", tl_cfg.lr_period);
    tl->add_option("--seed", tl_cfg.seed);
    tl->add_option("--batch", tl_cfg.batch_size);
    tl->add_option("--checkpoint-every", tl_cfg.checkpoint_every);
    tl->add_option("--log", tl_log);
    tl->add_option("--out", tl_out)->required();
    tl->add_option("--adapter-out", tl_adapter_out, "also write an adapter-only checkpoint");

    // train-clip
    auto* tc = app.add_subcommand("train-clip", "toy contrastive image/text demo");
    std::string tc_corpus, tc_out;
    int tc_steps = 400;
    float tc_lr = 2e-3f;
    std::uint64_t tc_seed = 0;
    tc->add_option("--corpus", tc_corpus, "directory of <class>_*.png panels")->required();
    tc->add_option("--out", tc_out)->required();
    tc->add_option("--steps", tc_steps);
    tc->add_option("--lr", tc_lr);
    tc->add_option("--seed", tc_seed);

    // sample / img2img / edge2img / video share most flags
    GenerationRequest req;
    std::string ckpt, frames_dir, report_path, seed_mode_str = "independent";
    auto add_gen_flags = [&](CLI::App* cmd, bool needs_input) {
        cmd->add_option("--ckpt", ckpt, "model checkpoint")->required();
        cmd->add_option("--prompt", req.prompt);
        cmd->add_option("--seed", req.seed);
        cmd->add_option("--count", req.count);
        cmd->add_option("--out", req.output_dir)->required();
        cmd->add_flag("--no-clip", [&](std::int64_t) { req.clip_output = false; },
                      "skip clamping outputs to [-1,1]");
        if (needs_input) {
            cmd->add_option("--input", req.input_path)->required();
            cmd->add_option("--strength", req.strength, "fraction of the chain applied as noise");
        }
    };
    auto* smp = app.add_subcommand("sample", "text-to-image");
    add_gen_flags(smp, false);
    auto* i2i = app.add_subcommand("img2img", "image-to-image");
    add_gen_flags(i2i, true);
    auto* e2i = app.add_subcommand("edge2img", "edge-map-to-image");
    add_gen_flags(e2i, true);
    e2i->add_option("--edge-low", req.edge_low, "weak edge threshold, 0..255");
    e2i->add_option("--edge-high", req.edge_high, "strong edge threshold, 0..255");
    auto* vid = app.add_subcommand("video", "per-frame image-to-image");
    vid->add_option("--ckpt", ckpt)->required();
    vid->add_option("--frames", frames_dir, "directory of numbered png frames")->required();
    vid->add_option("--seed-mode", seed_mode_str, "shared|independent");
    vid->add_option("--prompt", req.prompt);
    vid->add_option("--strength", req.strength);
    vid->add_option("--seed", req.seed);
    vid->add_option("--out", req.output_dir)->required();
    vid->add_option("--report", report_path, "write the temporal report JSON here");

    // synth + gradcheck
    auto* synth = app.add_subcommand("synth", "generate synthetic test corpora");
    std::string synth_kind = "shape_panels", synth_out;
    int synth_n = 16;
    std::uint64_t synth_seed = 0;
    synth->add_option("--kind", synth_kind, "bw_pages|color_pages|shape_panels");
    synth->add_option("--n", synth_n);
    synth->add_option("--seed", synth_seed);
    synth->add_option("--out", synth_out)->required();

    auto* gc = app.add_subcommand("gradcheck", "run the gradient verification suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (prepare->parsed()) return cmd_prepare(pages_dir, prep_out, threshold, grid_spec);
        if (man->parsed()) {
            save_manifest(build_manifest(man_panels, man_caption), man_out);
            std::printf("wrote manifest %s\n", man_out.c_str());
            return 0;
        }
        if (tae->parsed())
            return cmd_train_ae(tae_manifest, tae_out, tae_m, tae_steps, tae_lr, tae_seed,
                                tae_base, tae_latent);
        if (tb->parsed()) {
            tb_cfg.log_path = tb_log;
            return cmd_train_base(tb_manifest, tb_out, tb_cfg, tb_size, tb_base_ch, tb_depth,
                                  tb_cond, tb_time, tb_groups, tb_t, tb_bstart, tb_bend, tb_latent,
                                  tb_ae);
        }
        if (tl->parsed()) {
            tl_cfg.log_path = tl_log;
            return cmd_train_lora(tl_manifest, tl_base, tl_rank, tl_targets, tl_cfg, tl_out,
                                  tl_adapter_out);
        }
        if (tc->parsed()) return cmd_train_clip(tc_corpus, tc_out, tc_steps, tc_lr, tc_seed);
        if (smp->parsed() || i2i->parsed() || e2i->parsed()) {
            auto bundle = load_bundle(ckpt);
            std::vector<std::string> written;
            if (smp->parsed()) {
                req.mode = GenMode::txt2img;
                written = txt2img(*bundle, req);
            } else if (i2i->parsed()) {
                req.mode = GenMode::img2img;
                written = img2img(*bundle, req);
            } else {
                req.mode = GenMode::edge2img;
                written = edge2img(*bundle, req);
            }
            for (const auto& p : written) std::printf("%s\n", p.c_str());
            return 0;
        }
        if (vid->parsed()) {
            SeedMode mode;
            if (seed_mode_str == "shared") {
                mode = SeedMode::shared;
            } else if (seed_mode_str == "independent") {
                mode = SeedMode::independent;
            } else {
                throw ConfigError("video: --seed-mode must be shared or independent");
            }
            auto bundle = load_bundle(ckpt);
            req.mode = GenMode::video;
            auto [written, report] = video_frames(*bundle, sorted_pngs(frames_dir), req, mode);
            if (!report_path.empty()) write_report(report, report_path);
            for (const auto& p : written) std::printf("%s\n", p.c_str());
            if (report.ti_input.has_value())
                std::printf("ti_input=%.4f ti_output=%.4f\n", *report.ti_input,
                            *report.ti_output);
            return 0;
        }
        if (synth->parsed()) return cmd_synth(synth_kind, synth_n, synth_seed, synth_out);
        if (gc->parsed()) {
            const bool ok = run_gradcheck_suite(true);
            std::printf("gradcheck: %s\n", ok ? "all ops pass" : "FAILURES");
            return ok ? 0 : 1;
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: internal: %s\n", e.what());
        return 1;
    }
    return 0;
}

}  // namespace pf
