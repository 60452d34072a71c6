#include "pf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "pf/error.hpp"

namespace pf {

namespace {

static_assert(sizeof(float) == 4);

constexpr char kMagic[4] = {'P', 'N', 'L', 'F'};

void append_f32_le(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    if constexpr (std::endian::native == std::endian::big) {
        bits = ((bits & 0xFF) << 24) | ((bits & 0xFF00) << 8) | ((bits >> 8) & 0xFF00) |
               (bits >> 24);
    }
    out.push_back(static_cast<std::uint8_t>(bits));
    out.push_back(static_cast<std::uint8_t>(bits >> 8));
    out.push_back(static_cast<std::uint8_t>(bits >> 16));
    out.push_back(static_cast<std::uint8_t>(bits >> 24));
}

float read_f32_le(const std::uint8_t* p) {
    std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                         (static_cast<std::uint32_t>(p[2]) << 16) |
                         (static_cast<std::uint32_t>(p[3]) << 24);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

void save_checkpoint(const std::map<std::string, Tensor>& tensors, const CheckpointMeta& meta,
                     const std::string& path) {
    nlohmann::json header;
    header["format_version"] = meta.format_version;
    header["step_count"] = meta.step_count;
    header["adapter_only"] = meta.adapter_only;
    header["config"] = meta.config;

    nlohmann::json list = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {  // std::map: sorted, deterministic
        nlohmann::json e;
        e["name"] = name;
        e["shape"] = t.shape();
        e["offset"] = offset;
        list.push_back(std::move(e));
        offset += static_cast<std::uint64_t>(t.size()) * 4;
    }
    header["tensors"] = std::move(list);
    const std::string header_str = header.dump();

    std::vector<std::uint8_t> blob;
    blob.reserve(offset);
    for (const auto& [name, t] : tensors)
        for (float v : t.data()) append_f32_le(blob, v);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("save_checkpoint: cannot open " + path);
    out.write(kMagic, 4);
    const std::uint32_t hlen = static_cast<std::uint32_t>(header_str.size());
    const std::uint8_t hlen_le[4] = {
        static_cast<std::uint8_t>(hlen), static_cast<std::uint8_t>(hlen >> 8),
        static_cast<std::uint8_t>(hlen >> 16), static_cast<std::uint8_t>(hlen >> 24)};
    out.write(reinterpret_cast<const char*>(hlen_le), 4);
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("save_checkpoint: short write to " + path);
}

std::pair<std::map<std::string, Tensor>, CheckpointMeta> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_checkpoint: cannot open " + path);
    std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    if (file.size() < 8 || std::memcmp(file.data(), kMagic, 4) != 0)
        throw IntegrityError("load_checkpoint: bad magic in " + path);
    const std::uint32_t hlen = static_cast<std::uint32_t>(file[4]) |
                               (static_cast<std::uint32_t>(file[5]) << 8) |
                               (static_cast<std::uint32_t>(file[6]) << 16) |
                               (static_cast<std::uint32_t>(file[7]) << 24);
    if (8ull + hlen > file.size())
        throw IntegrityError("load_checkpoint: header length exceeds file size");
    nlohmann::json header = nlohmann::json::parse(
        file.begin() + 8, file.begin() + 8 + hlen, nullptr, false);
    if (header.is_discarded()) throw IntegrityError("load_checkpoint: unparseable header");

    CheckpointMeta meta;
    meta.format_version = header.value("format_version", -1);
    if (meta.format_version != 1)
        throw IntegrityError("load_checkpoint: unsupported format version " +
                             std::to_string(meta.format_version));
    meta.step_count = header.value("step_count", static_cast<std::int64_t>(0));
    meta.adapter_only = header.value("adapter_only", false);
    if (header.contains("config")) meta.config = header["config"];

    const std::uint8_t* blob = file.data() + 8 + hlen;
    const std::uint64_t blob_size = file.size() - 8 - hlen;

    std::map<std::string, Tensor> tensors;
    std::uint64_t expect_offset = 0;
    for (const auto& e : header.at("tensors")) {
        const std::string name = e.at("name").get<std::string>();
        const std::vector<int> shape = e.at("shape").get<std::vector<int>>();
        const std::uint64_t offset = e.at("offset").get<std::uint64_t>();
        const std::uint64_t bytes = static_cast<std::uint64_t>(numel(shape)) * 4;
        if (offset != expect_offset)
            throw IntegrityError("load_checkpoint: bad offset " + std::to_string(offset) +
                                 " for tensor " + name + ", expected " +
                                 std::to_string(expect_offset));
        if (offset + bytes > blob_size)
            throw IntegrityError("load_checkpoint: tensor " + name + " at offset " +
                                 std::to_string(offset) + " overruns blob of " +
                                 std::to_string(blob_size) + " bytes");
        std::vector<float> values(numel(shape));
        for (std::size_t i = 0; i < values.size(); ++i)
            values[i] = read_f32_le(blob + offset + i * 4);
        tensors.emplace(name, Tensor::from_data(shape, std::move(values)));
        expect_offset = offset + bytes;
    }
    if (expect_offset != blob_size)
        throw IntegrityError("load_checkpoint: blob has " + std::to_string(blob_size) +
                             " bytes but tensors cover " + std::to_string(expect_offset));
    return {std::move(tensors), std::move(meta)};
}

}  // namespace pf
