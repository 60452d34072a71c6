#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>

#include <json.hpp>

#include "pf/tensor.hpp"

namespace pf {

// Single-file container: magic "PNLF", u32 little-endian header length, UTF-8
// JSON header, then the concatenated little-endian float32 blob. The header
// lists tensors as {name, shape, offset} with byte offsets that must tile the
// blob exactly.
struct CheckpointMeta {
    int format_version = 1;
    std::int64_t step_count = 0;
    bool adapter_only = false;
    nlohmann::json config;  // free-form snapshot (model/schedule/train config)
};

void save_checkpoint(const std::map<std::string, Tensor>& tensors, const CheckpointMeta& meta,
                     const std::string& path);

std::pair<std::map<std::string, Tensor>, CheckpointMeta> load_checkpoint(const std::string& path);

}  // namespace pf
