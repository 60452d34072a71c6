#include "pf/image.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "pf/error.hpp"

namespace pf {

PageImage PageImage::create(int width, int height, int channels, std::uint8_t fill) {
    if (width <= 0 || height <= 0 || (channels != 1 && channels != 3))
        throw DimensionError("PageImage: bad geometry " + std::to_string(width) + "x" +
                             std::to_string(height) + "x" + std::to_string(channels));
    PageImage img;
    img.width = width;
    img.height = height;
    img.channels = channels;
    img.pixels.assign(static_cast<std::size_t>(width) * height * channels, fill);
    return img;
}

namespace {

constexpr std::uint8_t kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};

void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t read_u32_be(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::vector<std::uint8_t>& data) {
    put_u32_be(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t type_pos = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    std::uint32_t crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, out.data() + type_pos, static_cast<uInt>(4 + data.size()));
    put_u32_be(out, crc);
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

void write_png(const PageImage& img, const std::string& path) {
    if (img.width <= 0 || img.height <= 0 || (img.channels != 1 && img.channels != 3))
        throw DimensionError("write_png: bad image geometry");
    if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * img.channels)
        throw DimensionError("write_png: pixel buffer does not match dimensions");

    std::vector<std::uint8_t> ihdr;
    put_u32_be(ihdr, static_cast<std::uint32_t>(img.width));
    put_u32_be(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.push_back(8);                          // bit depth
    ihdr.push_back(img.channels == 1 ? 0 : 2);  // gray / rgb
    ihdr.push_back(0);                          // deflate
    ihdr.push_back(0);                          // adaptive filters
    ihdr.push_back(0);                          // no interlace

    // filter byte 0 per scanline
    const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
    std::vector<std::uint8_t> raw((stride + 1) * static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y) {
        raw[(stride + 1) * y] = 0;
        std::memcpy(raw.data() + (stride + 1) * y + 1, img.pixels.data() + stride * y, stride);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> idat(bound);
    if (compress2(idat.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                  Z_DEFAULT_COMPRESSION) != Z_OK)
        throw IoError("write_png: deflate failed");
    idat.resize(bound);

    std::vector<std::uint8_t> file(kPngMagic, kPngMagic + 8);
    append_chunk(file, "IHDR", ihdr);
    append_chunk(file, "IDAT", idat);
    append_chunk(file, "IEND", {});

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("write_png: cannot open " + path);
    out.write(reinterpret_cast<const char*>(file.data()),
              static_cast<std::streamsize>(file.size()));
    if (!out) throw IoError("write_png: short write to " + path);
}

PageImage read_png(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_png: cannot open " + path);
    std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    if (file.size() < 8 || std::memcmp(file.data(), kPngMagic, 8) != 0)
        throw IntegrityError("read_png: not a png file: " + path);

    int width = 0, height = 0, channels_in = 0;
    std::vector<std::uint8_t> compressed;
    std::size_t pos = 8;
    bool saw_end = false;
    while (pos + 12 <= file.size()) {
        const std::uint32_t len = read_u32_be(file.data() + pos);
        if (pos + 12 + len > file.size())
            throw IntegrityError("read_png: truncated chunk at offset " + std::to_string(pos));
        const char* type = reinterpret_cast<const char*>(file.data() + pos + 4);
        const std::uint8_t* data = file.data() + pos + 8;
        const std::uint32_t want_crc = read_u32_be(data + len);
        std::uint32_t crc = crc32(0L, Z_NULL, 0);
        crc = crc32(crc, file.data() + pos + 4, len + 4);
        if (crc != want_crc)
            throw IntegrityError("read_png: crc mismatch at offset " + std::to_string(pos));

        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw IntegrityError("read_png: bad IHDR");
            width = static_cast<int>(read_u32_be(data));
            height = static_cast<int>(read_u32_be(data + 4));
            const int depth = data[8];
            const int color_type = data[9];
            if (depth != 8)
                throw IntegrityError("read_png: only 8-bit depth supported, got " +
                                     std::to_string(depth));
            if (data[12] != 0) throw IntegrityError("read_png: interlaced png not supported");
            switch (color_type) {
                case 0: channels_in = 1; break;
                case 2: channels_in = 3; break;
                case 4: channels_in = 2; break;
                case 6: channels_in = 4; break;
                default:
                    throw IntegrityError("read_png: unsupported color type " +
                                         std::to_string(color_type));
            }
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            compressed.insert(compressed.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_end = true;
            break;
        }
        pos += 12 + len;
    }
    if (width <= 0 || height <= 0 || channels_in == 0)
        throw IntegrityError("read_png: missing IHDR in " + path);
    if (!saw_end) throw IntegrityError("read_png: missing IEND in " + path);

    const std::size_t stride = static_cast<std::size_t>(width) * channels_in;
    std::vector<std::uint8_t> raw((stride + 1) * static_cast<std::size_t>(height));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    const int zrc =
        uncompress(raw.data(), &raw_len, compressed.data(), static_cast<uLong>(compressed.size()));
    if (zrc != Z_OK || raw_len != raw.size())
        throw IntegrityError("read_png: inflate failed for " + path);

    std::vector<std::uint8_t> prev(stride, 0);
    std::vector<std::uint8_t> line(stride);
    const int bpp = channels_in;
    PageImage img = PageImage::create(width, height, channels_in >= 3 ? 3 : 1);
    for (int y = 0; y < height; ++y) {
        const std::uint8_t filter = raw[(stride + 1) * y];
        const std::uint8_t* src = raw.data() + (stride + 1) * y + 1;
        for (std::size_t i = 0; i < stride; ++i) {
            const int a = i >= static_cast<std::size_t>(bpp) ? line[i - bpp] : 0;
            const int b = prev[i];
            const int c = i >= static_cast<std::size_t>(bpp) ? prev[i - bpp] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default:
                    throw IntegrityError("read_png: bad filter byte " + std::to_string(filter));
            }
            line[i] = static_cast<std::uint8_t>(v & 0xFF);
        }
        for (int x = 0; x < width; ++x)
            for (int ch = 0; ch < img.channels; ++ch)
                img.at(x, y, ch) = line[static_cast<std::size_t>(x) * channels_in + ch];
        prev = line;
    }
    return img;
}

Tensor image_to_tensor(const PageImage& img, int out_channels) {
    if (out_channels != 1 && out_channels != 3)
        throw ConfigError("image_to_tensor: out_channels must be 1 or 3");
    Tensor t = Tensor::zeros({out_channels, img.height, img.width});
    const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
    float* d = t.mutable_data().data();
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * img.width + x;
            if (out_channels == img.channels) {
                for (int c = 0; c < out_channels; ++c)
                    d[c * plane + p] = static_cast<float>(img.at(x, y, c)) / 127.5f - 1.0f;
            } else if (out_channels == 1) {
                const float luma = 0.299f * img.at(x, y, 0) + 0.587f * img.at(x, y, 1) +
                                   0.114f * img.at(x, y, 2);
                d[p] = luma / 127.5f - 1.0f;
            } else {
                const float v = static_cast<float>(img.at(x, y, 0)) / 127.5f - 1.0f;
                for (int c = 0; c < 3; ++c) d[c * plane + p] = v;
            }
        }
    }
    return t;
}

PageImage tensor_to_image(const Tensor& t) {
    if (t.ndim() != 3 || (t.dim(0) != 1 && t.dim(0) != 3))
        throw DimensionError("tensor_to_image: expected 1xHxW or 3xHxW, got " +
                             shape_str(t.shape()));
    const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
    PageImage img = PageImage::create(w, h, c);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * w + x;
            for (int ch = 0; ch < c; ++ch) {
                const float v = (t.data()[ch * plane + p] + 1.0f) * 127.5f;
                img.at(x, y, ch) =
                    static_cast<std::uint8_t>(std::lround(std::min(255.0f, std::max(0.0f, v))));
            }
        }
    }
    return img;
}

}  // namespace pf
