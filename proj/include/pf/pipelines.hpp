#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pf/trainer.hpp"

namespace pf {

enum class GenMode { txt2img, img2img, edge2img, video };
enum class SeedMode { shared, independent };

struct GenerationRequest {
    GenMode mode = GenMode::txt2img;
    std::string prompt;
    std::string input_path;  // required for every mode except txt2img
    double strength = 0.6;   // fraction of the chain applied as forward noising
    std::uint64_t seed = 0;
    std::string output_dir;
    int count = 1;
    bool clip_output = true;
    double edge_low = 60.0;
    double edge_high = 120.0;
};

// Mean absolute inter-frame difference (8-bit scale) for input and output
// sequences; null for single-frame clips.
struct TemporalReport {
    std::optional<double> ti_input;
    std::optional<double> ti_output;
    std::vector<double> input_diffs;
    std::vector<double> output_diffs;
};

// Each call returns the written file paths; generation i uses seed + i and
// reruns are byte-identical.
std::vector<std::string> txt2img(const ModelBundle& bundle, const GenerationRequest& req);
std::vector<std::string> img2img(const ModelBundle& bundle, const GenerationRequest& req);
std::vector<std::string> edge2img(const ModelBundle& bundle, const GenerationRequest& req);

std::pair<std::vector<std::string>, TemporalReport> video_frames(
    const ModelBundle& bundle, const std::vector<std::string>& frame_paths,
    const GenerationRequest& req, SeedMode seed_mode);

// In-memory core of img2img (the strength-0/1 contracts live here):
// normalized [-1,1] input tensor -> generated tensor.
Tensor img2img_tensor(const ModelBundle& bundle, const Tensor& x_in, double strength,
                      std::uint64_t seed, const std::string& prompt, bool clip_output);

// CLI entry point; returns the process exit code and reports failures as a
// single "error: <category>: <message>" line on stderr.
int run_cli(int argc, char** argv);

}  // namespace pf
