#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "pf/dataset.hpp"
#include "pf/error.hpp"
#include "pf/image.hpp"
#include "pf/lora.hpp"
#include "pf/pipelines.hpp"
#include "pf/rng.hpp"
#include "pf/trainer.hpp"

using namespace pf;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("pf_pipe_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// small but live model: random weights, live output conv, no training
ModelBundle make_bundle(std::uint64_t seed) {
    ModelBundle b;
    b.ucfg.in_channels = 1;
    b.ucfg.base_channels = 8;
    b.ucfg.depth = 2;
    b.ucfg.time_embed_dim = 8;
    b.ucfg.cond_dim = 8;
    b.ucfg.attn_stages = {2};
    b.ucfg.groups = 4;
    b.image_size = 32;
    b.schedule = make_schedule(10, 1e-3, 0.05);
    b.vocab = Vocab::from_tokens({"cnh3000", "style"});
    b.text = init_text_encoder(b.vocab.size(), 8, seed + 1);
    Rng rng(seed + 2);
    b.unet = init_unet(b.ucfg, rng);
    for (float& v : b.unet.at("unet.out.conv.weight").mutable_data())
        v = 0.05f * static_cast<float>(rng.normal());
    return b;
}

int run_argv(std::vector<std::string> args) {
    std::vector<char*> argv;
    argv.push_back(const_cast<char*>("panelforge"));
    for (auto& a : args) argv.push_back(a.data());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("txt2img: distinct files per seed, bit-identical reruns") {
    ModelBundle bundle = make_bundle(10);
    const fs::path out = fresh_dir("t2i");
    GenerationRequest req;
    req.prompt = "cnh3000";
    req.seed = 42;
    req.count = 3;
    req.output_dir = out.string();
    auto files = txt2img(bundle, req);
    REQUIRE(files.size() == 3);
    CHECK(files[0] != files[1]);
    CHECK(slurp(files[0]) != slurp(files[1]));  // different seeds, different images

    const std::string first = slurp(files[0]);
    const fs::path out2 = fresh_dir("t2i_rerun");
    req.output_dir = out2.string();
    auto files2 = txt2img(bundle, req);
    CHECK(slurp(files2[0]) == first);
}

TEST_CASE("txt2img: the prompt steers the output through cross-attention") {
    ModelBundle bundle = make_bundle(11);
    // untrained 0.02-std weights push prompt effects below the 8-bit
    // quantization step; turn the conditioning path up so it registers
    for (float& v : bundle.text.at("text.embed").mutable_data()) v *= 30.0f;
    for (auto& [name, t] : bundle.unet.tensors)
        if (name.find(".cross.") != std::string::npos)
            for (float& v : t.mutable_data()) v *= 10.0f;
    GenerationRequest req;
    req.seed = 5;
    req.count = 1;

    req.prompt = "cnh3000";
    req.output_dir = fresh_dir("t2i_kw").string();
    auto with_kw = txt2img(bundle, req);
    req.prompt = "";
    req.output_dir = fresh_dir("t2i_plain").string();
    auto without = txt2img(bundle, req);
    CHECK(slurp(with_kw[0]) != slurp(without[0]));
}

TEST_CASE("img2img: strength 0 is a bit-exact identity in pixel mode") {
    ModelBundle bundle = make_bundle(12);
    const fs::path dir = fresh_dir("i2i_zero");
    auto panels = generate_shape_panels(1, 77);
    const std::string input = (dir / "in.png").string();
    write_png(panels[0].image, input);

    GenerationRequest req;
    req.input_path = input;
    req.strength = 0.0;
    req.seed = 9;
    req.output_dir = (dir / "out").string();
    auto files = img2img(bundle, req);
    REQUIRE(files.size() == 1);
    PageImage in_img = read_png(input);
    PageImage out_img = read_png(files[0]);
    CHECK(in_img.pixels == out_img.pixels);
}

TEST_CASE("img2img at strength 1 equals txt2img with the same seed bit-exactly") {
    ModelBundle bundle = make_bundle(13);
    const fs::path dir = fresh_dir("i2i_full");
    auto panels = generate_shape_panels(1, 78);
    const std::string input = (dir / "in.png").string();
    write_png(panels[0].image, input);

    GenerationRequest req;
    req.prompt = "cnh3000 style";
    req.seed = 31;
    req.count = 1;
    req.input_path = input;
    req.strength = 1.0;
    req.output_dir = (dir / "i2i").string();
    auto i2i_files = img2img(bundle, req);

    GenerationRequest treq;
    treq.prompt = req.prompt;
    treq.seed = req.seed;
    treq.count = 1;
    treq.output_dir = (dir / "t2i").string();
    auto t2i_files = txt2img(bundle, treq);

    CHECK(slurp(i2i_files[0]) == slurp(t2i_files[0]));
}

TEST_CASE("img2img: zero strength is quiet, full strength diverges") {
    ModelBundle bundle = make_bundle(14);
    auto panels = generate_shape_panels(1, 79);
    Tensor x_in = image_to_tensor(panels[0].image, 1);

    Tensor s0 = img2img_tensor(bundle, x_in, 0.0, 17, "cnh3000", true);
    double d0 = 0.0, d1 = 0.0;
    Tensor s1 = img2img_tensor(bundle, x_in, 1.0, 17, "cnh3000", true);
    for (std::size_t i = 0; i < x_in.size(); ++i) {
        d0 += std::fabs(s0.data()[i] - x_in.data()[i]);
        d1 += std::fabs(s1.data()[i] - x_in.data()[i]);
    }
    CHECK(d0 == 0.0);
    CHECK(d1 > 0.0);
}

TEST_CASE("edge2img: strength 0 returns the edge map itself") {
    ModelBundle bundle = make_bundle(15);
    const fs::path dir = fresh_dir("e2i");
    auto panels = generate_shape_panels(1, 80);
    const std::string input = (dir / "in.png").string();
    write_png(panels[0].image, input);

    GenerationRequest req;
    req.input_path = input;
    req.strength = 0.0;
    req.output_dir = (dir / "out").string();
    auto files = edge2img(bundle, req);
    REQUIRE(files.size() == 1);

    PageImage want = edge_map(read_png(input), req.edge_low, req.edge_high);
    PageImage got = read_png(files[0]);
    CHECK(got.pixels == want.pixels);
}

TEST_CASE("edge2img: constant input degenerates to an all-white edge map and still runs") {
    ModelBundle bundle = make_bundle(16);
    const fs::path dir = fresh_dir("e2i_const");
    PageImage flat = PageImage::create(32, 32, 1, 140);
    const std::string input = (dir / "in.png").string();
    write_png(flat, input);

    GenerationRequest req;
    req.input_path = input;
    req.strength = 0.4;
    req.seed = 3;
    req.output_dir = (dir / "out").string();
    auto files = edge2img(bundle, req);
    CHECK(files.size() == 1);
}

TEST_CASE("video: single frame yields a null temporal report") {
    ModelBundle bundle = make_bundle(17);
    const fs::path dir = fresh_dir("vid1");
    auto panels = generate_shape_panels(1, 81);
    const std::string f0 = (dir / "f0.png").string();
    write_png(panels[0].image, f0);

    GenerationRequest req;
    req.strength = 0.5;
    req.seed = 7;
    req.output_dir = (dir / "out").string();
    auto [files, report] = video_frames(bundle, {f0}, req, SeedMode::independent);
    CHECK(files.size() == 1);
    CHECK_FALSE(report.ti_input.has_value());
    CHECK_FALSE(report.ti_output.has_value());
    CHECK(report.output_diffs.empty());
}

TEST_CASE("video: repeated frames, shared seed -> zero TI; independent -> positive") {
    ModelBundle bundle = make_bundle(18);
    const fs::path dir = fresh_dir("vid");
    auto panels = generate_shape_panels(1, 82);
    std::vector<std::string> frames;
    for (int i = 0; i < 4; ++i) {
        char name[16];
        std::snprintf(name, sizeof(name), "f%02d.png", i);
        const std::string p = (dir / name).string();
        write_png(panels[0].image, p);
        frames.push_back(p);
    }

    GenerationRequest req;
    req.strength = 0.6;
    req.seed = 5;
    req.output_dir = (dir / "shared").string();
    auto [sfiles, sreport] = video_frames(bundle, frames, req, SeedMode::shared);
    REQUIRE(sreport.ti_output.has_value());
    CHECK(*sreport.ti_input == 0.0);
    CHECK(*sreport.ti_output == 0.0);

    req.output_dir = (dir / "indep").string();
    auto [ifiles, ireport] = video_frames(bundle, frames, req, SeedMode::independent);
    REQUIRE(ireport.ti_output.has_value());
    CHECK(*ireport.ti_output > 0.0);
    CHECK(*sreport.ti_output <= *ireport.ti_output);
}

TEST_CASE("cli: full pipeline from synthetic corpus to generated frames") {
    const fs::path root = fresh_dir("cli");
    const std::string panels = (root / "panels").string();
    const std::string manifest = (root / "manifest.jsonl").string();
    const std::string base_ckpt = (root / "base.pnlf").string();
    const std::string lora_ckpt = (root / "styled.pnlf").string();
    const std::string adapter_ckpt = (root / "adapter.pnlf").string();

    CHECK(run_argv({"synth", "--kind", "shape_panels", "--n", "8", "--seed", "3", "--out",
                    panels}) == 0);
    CHECK(run_argv({"manifest", "--panels", panels, "--caption", "CNH3000", "--out", manifest}) ==
          0);
    CHECK(run_argv({"train-base", "--manifest", manifest, "--out", base_ckpt, "--steps", "30",
                    "--size", "32", "--base-channels", "8", "--depth", "2", "--cond-dim", "8",
                    "--time-dim", "8", "--groups", "4", "--t", "10", "--seed", "1"}) == 0);
    CHECK(run_argv({"train-lora", "--manifest", manifest, "--base", base_ckpt, "--rank", "2",
                    "--steps", "20", "--lr", "1e-3", "--seed", "2", "--out", lora_ckpt,
                    "--adapter-out", adapter_ckpt}) == 0);
    CHECK(fs::exists(adapter_ckpt));

    const std::string gen_dir = (root / "gen").string();
    CHECK(run_argv({"sample", "--ckpt", lora_ckpt, "--prompt", "in the style of CNH3000",
                    "--seed", "11", "--count", "2", "--out", gen_dir}) == 0);
    CHECK(fs::exists(fs::path(gen_dir) / "out_0000.png"));
    CHECK(fs::exists(fs::path(gen_dir) / "out_0001.png"));

    const std::string input = (fs::path(panels) / "circle_0000.png").string();
    const std::string i2i_dir = (root / "i2i").string();
    CHECK(run_argv({"img2img", "--ckpt", lora_ckpt, "--input", input, "--strength", "0.5",
                    "--prompt", "CNH3000", "--seed", "4", "--out", i2i_dir}) == 0);
    CHECK(fs::exists(fs::path(i2i_dir) / "out_0000.png"));

    const std::string e2i_dir = (root / "e2i").string();
    CHECK(run_argv({"edge2img", "--ckpt", lora_ckpt, "--input", input, "--strength", "0.5",
                    "--prompt", "CNH3000", "--seed", "4", "--out", e2i_dir, "--edge-low", "50",
                    "--edge-high", "110"}) == 0);
    CHECK(fs::exists(fs::path(e2i_dir) / "out_0000.png"));

    // frames for the video path: reuse generated panels
    const std::string frames_dir = (root / "frames").string();
    fs::create_directories(frames_dir);
    for (int i = 0; i < 3; ++i)
        fs::copy_file(input, fs::path(frames_dir) / ("f" + std::to_string(i) + ".png"));
    const std::string vid_dir = (root / "vid").string();
    const std::string report_path = (root / "report.json").string();
    CHECK(run_argv({"video", "--ckpt", lora_ckpt, "--frames", frames_dir, "--seed-mode", "shared",
                    "--strength", "0.5", "--seed", "6", "--out", vid_dir, "--report",
                    report_path}) == 0);
    nlohmann::json report = nlohmann::json::parse(slurp(report_path));
    CHECK(report.contains("ti_input"));
    CHECK(report.contains("ti_output"));
    CHECK(report["ti_output"].get<double>() == 0.0);  // identical frames, shared seed

    // prepare on synthetic pages exercises classification + cropping
    const std::string pages = (root / "pages").string();
    const std::string color_pages = (root / "color_pages").string();
    CHECK(run_argv({"synth", "--kind", "bw_pages", "--n", "2", "--seed", "9", "--out", pages}) ==
          0);
    CHECK(run_argv({"synth", "--kind", "color_pages", "--n", "1", "--seed", "10", "--out",
                    color_pages}) == 0);
    fs::copy_file(fs::path(color_pages) / "page_0000.png", fs::path(pages) / "sunday_0000.png");
    const std::string prep = (root / "prep").string();
    CHECK(run_argv({"prepare", "--pages", pages, "--out", prep, "--threshold", "10"}) == 0);
    nlohmann::json prep_report =
        nlohmann::json::parse(slurp(fs::path(prep) / "classification_report.json"));
    CHECK(prep_report["black_white"].get<int>() == 2);
    CHECK(prep_report["color"].get<int>() == 1);
    CHECK(prep_report["panels_written"].get<int>() == 16);

    // machine-parseable single-line error on failure
    CHECK(run_argv({"sample", "--ckpt", (root / "missing.pnlf").string(), "--prompt", "x",
                    "--seed", "1", "--count", "1", "--out", gen_dir}) != 0);
}
