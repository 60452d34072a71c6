#include "pf/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "pf/error.hpp"
#include "pf/rng.hpp"

namespace fs = std::filesystem;

namespace pf {

PageClass classify_page(const PageImage& page, int threshold) {
    if (page.channels == 1) return PageClass::BlackWhite;
    int worst = 0;
    for (int y = 0; y < page.height; ++y) {
        for (int x = 0; x < page.width; ++x) {
            const int rg = std::abs(static_cast<int>(page.at(x, y, 0)) - page.at(x, y, 1));
            const int gb = std::abs(static_cast<int>(page.at(x, y, 1)) - page.at(x, y, 2));
            worst = std::max({worst, rg, gb});
            if (worst > threshold) return PageClass::Color;
        }
    }
    return worst <= threshold ? PageClass::BlackWhite : PageClass::Color;
}

std::vector<PageImage> extract_panels(const PageImage& page, const PanelGrid& g) {
    if (g.rows < 1 || g.cols < 1) throw ConfigError("extract_panels: grid needs rows,cols >= 1");
    const int content_w = page.width - g.margin_left - g.margin_right;
    const int content_h = page.height - g.margin_top - g.margin_bottom;
    const int panel_w = (content_w - (g.cols - 1) * g.gutter_x) / g.cols;
    const int panel_h = (content_h - (g.rows - 1) * g.gutter_y) / g.rows;
    if (panel_w <= 0 || panel_h <= 0)
        throw GeometryError("extract_panels: computed panel size " + std::to_string(panel_w) +
                            "x" + std::to_string(panel_h) + " not positive for page " +
                            std::to_string(page.width) + "x" + std::to_string(page.height));
    const int extent_x = g.margin_left + g.cols * panel_w + (g.cols - 1) * g.gutter_x;
    const int extent_y = g.margin_top + g.rows * panel_h + (g.rows - 1) * g.gutter_y;
    if (extent_x > page.width - g.margin_right || extent_y > page.height - g.margin_bottom)
        throw GeometryError("extract_panels: grid extent " + std::to_string(extent_x) + "x" +
                            std::to_string(extent_y) + " exceeds page " +
                            std::to_string(page.width) + "x" + std::to_string(page.height));

    std::vector<PageImage> panels;
    panels.reserve(static_cast<std::size_t>(g.rows) * g.cols);
    for (int r = 0; r < g.rows; ++r) {
        for (int c = 0; c < g.cols; ++c) {
            const int x0 = g.margin_left + c * (panel_w + g.gutter_x);
            const int y0 = g.margin_top + r * (panel_h + g.gutter_y);
            PageImage panel = PageImage::create(panel_w, panel_h, page.channels);
            for (int y = 0; y < panel_h; ++y)
                for (int x = 0; x < panel_w; ++x)
                    for (int ch = 0; ch < page.channels; ++ch)
                        panel.at(x, y, ch) = page.at(x0 + x, y0 + y, ch);
            panels.push_back(std::move(panel));
        }
    }
    return panels;
}

long long expected_panel_count(long long volumes, long long pages_per_volume, double bw_fraction,
                               long long strips_per_page, long long panels_per_strip) {
    const double product = static_cast<double>(volumes) * static_cast<double>(pages_per_volume) *
                           bw_fraction * static_cast<double>(strips_per_page) *
                           static_cast<double>(panels_per_strip);
    return static_cast<long long>(std::floor(product));
}

DatasetManifest build_manifest(const std::string& panel_dir, const std::string& caption) {
    if (caption.empty()) throw ConfigError("build_manifest: caption must be non-empty");
    if (!fs::is_directory(panel_dir))
        throw IoError("build_manifest: not a directory: " + panel_dir);
    std::vector<std::string> paths;
    for (const auto& entry : fs::directory_iterator(panel_dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png")
            paths.push_back(entry.path().string());
    }
    std::sort(paths.begin(), paths.end());
    if (paths.empty())
        std::fprintf(stderr, "warning: no png files under %s, manifest is empty\n",
                     panel_dir.c_str());
    DatasetManifest m;
    for (auto& p : paths) m.records.push_back({std::move(p), caption});
    return m;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("save_manifest: cannot open " + path);
    for (const auto& rec : m.records) {
        nlohmann::json j;
        j["image"] = rec.image;
        j["caption"] = rec.caption;
        out << j.dump() << "\n";
    }
    if (!out) throw IoError("save_manifest: short write to " + path);
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_manifest: cannot open " + path);
    DatasetManifest m;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("image") || !j.contains("caption"))
            throw IntegrityError("load_manifest: bad record at line " + std::to_string(lineno));
        m.records.push_back({j["image"].get<std::string>(), j["caption"].get<std::string>()});
    }
    return m;
}

namespace {

std::vector<double> to_gray(const PageImage& img) {
    std::vector<double> g(static_cast<std::size_t>(img.width) * img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double v;
            if (img.channels == 1) {
                v = img.at(x, y, 0);
            } else {
                v = 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
            }
            g[static_cast<std::size_t>(y) * img.width + x] = v;
        }
    }
    return g;
}

}  // namespace

PageImage edge_map(const PageImage& img, double low, double high) {
    if (low < 0 || high < low || high > 255)
        throw ConfigError("edge_map: need 0 <= low <= high <= 255");
    const int w = img.width, h = img.height;
    const std::vector<double> gray = to_gray(img);
    auto px = [&](int x, int y) {
        x = std::clamp(x, 0, w - 1);  // replicate borders
        y = std::clamp(y, 0, h - 1);
        return gray[static_cast<std::size_t>(y) * w + x];
    };

    std::vector<double> mag(static_cast<std::size_t>(w) * h);
    double max_mag = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double gx = -px(x - 1, y - 1) + px(x + 1, y - 1) - 2 * px(x - 1, y) +
                              2 * px(x + 1, y) - px(x - 1, y + 1) + px(x + 1, y + 1);
            const double gy = -px(x - 1, y - 1) - 2 * px(x, y - 1) - px(x + 1, y - 1) +
                              px(x - 1, y + 1) + 2 * px(x, y + 1) + px(x + 1, y + 1);
            const double m = std::sqrt(gx * gx + gy * gy);
            mag[static_cast<std::size_t>(y) * w + x] = m;
            max_mag = std::max(max_mag, m);
        }
    }

    PageImage out = PageImage::create(w, h, 1, 255);
    if (max_mag <= 0.0) return out;  // constant image: no edges

    // 0 = background, 1 = weak, 2 = strong
    std::vector<std::uint8_t> mark(static_cast<std::size_t>(w) * h, 0);
    std::deque<std::pair<int, int>> frontier;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double m = mag[static_cast<std::size_t>(y) * w + x] / max_mag * 255.0;
            if (m >= high) {
                mark[static_cast<std::size_t>(y) * w + x] = 2;
                frontier.emplace_back(x, y);
            } else if (m >= low) {
                mark[static_cast<std::size_t>(y) * w + x] = 1;
            }
        }
    }
    while (!frontier.empty()) {
        auto [x, y] = frontier.front();
        frontier.pop_front();
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                const int nx = x + dx, ny = y + dy;
                if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
                std::uint8_t& m = mark[static_cast<std::size_t>(ny) * w + nx];
                if (m == 1) {
                    m = 2;
                    frontier.emplace_back(nx, ny);
                }
            }
        }
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            out.at(x, y, 0) = mark[static_cast<std::size_t>(y) * w + x] == 2 ? 0 : 255;
    return out;
}

namespace {

// near-binary page texture: background around 250, ink around 3
std::uint8_t bg_value(Rng& rng) { return static_cast<std::uint8_t>(246 + rng.uniform_below(8)); }
std::uint8_t ink_value(Rng& rng) { return static_cast<std::uint8_t>(rng.uniform_below(6)); }

void fill_gray(PageImage& img, int x0, int y0, int x1, int y1, std::uint8_t v) {
    for (int y = std::max(0, y0); y < std::min(img.height, y1); ++y)
        for (int x = std::max(0, x0); x < std::min(img.width, x1); ++x)
            for (int c = 0; c < img.channels; ++c) img.at(x, y, c) = v;
}

PageImage synth_bw_page(Rng& rng) {
    const int w = 160, h = 240;
    PageImage page = PageImage::create(w, h, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::uint8_t v = bg_value(rng);
            for (int c = 0; c < 3; ++c) page.at(x, y, c) = v;
        }
    // two strips of four bordered panels
    for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 4; ++c) {
            const int x0 = 4 + c * 38, y0 = 12 + r * 110;
            const int x1 = x0 + 34, y1 = y0 + 90;
            for (int x = x0; x < x1; ++x) {
                for (int cch = 0; cch < 3; ++cch) {
                    page.at(x, y0, cch) = ink_value(rng);
                    page.at(x, y1 - 1, cch) = ink_value(rng);
                }
            }
            for (int y = y0; y < y1; ++y) {
                for (int cch = 0; cch < 3; ++cch) {
                    page.at(x0, y, cch) = ink_value(rng);
                    page.at(x1 - 1, y, cch) = ink_value(rng);
                }
            }
            // a few ink blobs inside the panel
            for (int blob = 0; blob < 3; ++blob) {
                const int bx = x0 + 3 + static_cast<int>(rng.uniform_below(26));
                const int by = y0 + 3 + static_cast<int>(rng.uniform_below(80));
                const std::uint8_t v = ink_value(rng);
                fill_gray(page, bx, by, bx + 3, by + 3, v);
            }
        }
    }
    return page;
}

PageImage synth_color_page(Rng& rng) {
    PageImage page = synth_bw_page(rng);
    // tinted rectangles guarantee a channel spread well past the threshold
    const int blocks = 3 + static_cast<int>(rng.uniform_below(3));
    for (int b = 0; b < blocks; ++b) {
        const int x0 = static_cast<int>(rng.uniform_below(page.width - 24));
        const int y0 = static_cast<int>(rng.uniform_below(page.height - 24));
        const std::uint8_t r = static_cast<std::uint8_t>(120 + rng.uniform_below(120));
        const std::uint8_t g = static_cast<std::uint8_t>(rng.uniform_below(90));
        const std::uint8_t bl = static_cast<std::uint8_t>(40 + rng.uniform_below(120));
        for (int y = y0; y < y0 + 20; ++y) {
            for (int x = x0; x < x0 + 20; ++x) {
                page.at(x, y, 0) = r;
                page.at(x, y, 1) = g;
                page.at(x, y, 2) = bl;
            }
        }
    }
    return page;
}

void draw_shape(PageImage& img, int label, Rng& rng) {
    const int w = img.width, h = img.height;
    const int cx = w / 2 + static_cast<int>(rng.uniform_below(7)) - 3;
    const int cy = h / 2 + static_cast<int>(rng.uniform_below(7)) - 3;
    const int size = 8 + static_cast<int>(rng.uniform_below(4));
    auto ink = [&]() { return ink_value(rng); };
    switch (label) {
        case 0:  // circle outline, thick
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const double d = std::sqrt(static_cast<double>((x - cx) * (x - cx) +
                                                                   (y - cy) * (y - cy)));
                    if (std::fabs(d - size) <= 1.6)
                        for (int c = 0; c < img.channels; ++c) img.at(x, y, c) = ink();
                }
            break;
        case 1:  // cross
            fill_gray(img, cx - size, cy - 2, cx + size, cy + 2, ink());
            fill_gray(img, cx - 2, cy - size, cx + 2, cy + size, ink());
            break;
        case 2:  // filled square
            fill_gray(img, cx - size + 2, cy - size + 2, cx + size - 2, cy + size - 2, ink());
            break;
        case 3:  // filled triangle
            for (int y = 0; y <= size * 2; ++y) {
                const int yy = cy - size + y;
                if (yy < 0 || yy >= h) continue;
                const int half = (y * size) / (2 * size);
                for (int x = cx - half; x <= cx + half; ++x)
                    if (x >= 0 && x < w)
                        for (int c = 0; c < img.channels; ++c) img.at(x, yy, c) = ink();
            }
            break;
        default: throw ConfigError("draw_shape: unknown label " + std::to_string(label));
    }
}

}  // namespace

const std::vector<std::string>& shape_class_names() {
    static const std::vector<std::string> names = {"circle", "cross", "square", "triangle"};
    return names;
}

std::vector<ShapePanel> generate_shape_panels(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<ShapePanel> panels;
    panels.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        ShapePanel p;
        p.label = i % 4;  // balanced classes
        p.image = PageImage::create(32, 32, 1);
        Rng local(rng.next_u64());
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) p.image.at(x, y, 0) = bg_value(local);
        draw_shape(p.image, p.label, local);
        panels.push_back(std::move(p));
    }
    return panels;
}

std::vector<PageImage> generate_synthetic_corpus(CorpusKind kind, int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<PageImage> out;
    out.reserve(static_cast<std::size_t>(n));
    switch (kind) {
        case CorpusKind::bw_pages:
            for (int i = 0; i < n; ++i) {
                Rng local(rng.next_u64());
                out.push_back(synth_bw_page(local));
            }
            break;
        case CorpusKind::color_pages:
            for (int i = 0; i < n; ++i) {
                Rng local(rng.next_u64());
                out.push_back(synth_color_page(local));
            }
            break;
        case CorpusKind::shape_panels: {
            for (auto& p : generate_shape_panels(n, seed)) out.push_back(std::move(p.image));
            break;
        }
    }
    return out;
}

}  // namespace pf
