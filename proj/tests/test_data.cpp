#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "pf/dataset.hpp"
#include "pf/error.hpp"
#include "pf/image.hpp"
#include "pf/rng.hpp"

using namespace pf;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("pf_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("png roundtrip is bit-exact for gray and rgb") {
    const fs::path dir = fresh_dir("png");
    Rng rng(2024);
    for (int channels : {1, 3}) {
        for (auto [w, h] : {std::pair{1, 1}, {7, 3}, {33, 17}, {64, 64}}) {
            PageImage img = PageImage::create(w, h, channels);
            for (auto& px : img.pixels) px = static_cast<std::uint8_t>(rng.uniform_below(256));
            const std::string path = (dir / ("t" + std::to_string(w) + "x" + std::to_string(h) +
                                             "c" + std::to_string(channels) + ".png"))
                                         .string();
            write_png(img, path);
            PageImage back = read_png(path);
            REQUIRE(back.width == w);
            REQUIRE(back.height == h);
            REQUIRE(back.channels == channels);
            CHECK(back.pixels == img.pixels);
        }
    }
}

TEST_CASE("read_png rejects garbage and truncation") {
    const fs::path dir = fresh_dir("pngbad");
    {
        std::ofstream out(dir / "junk.png", std::ios::binary);
        out << "definitely not a png";
    }
    CHECK_THROWS_AS(read_png((dir / "junk.png").string()), IntegrityError);

    PageImage img = PageImage::create(8, 8, 1, 128);
    write_png(img, (dir / "ok.png").string());
    std::string bytes = slurp(dir / "ok.png");
    {
        std::ofstream out(dir / "trunc.png", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(read_png((dir / "trunc.png").string()), IntegrityError);
    CHECK_THROWS_AS(read_png((dir / "missing.png").string()), IoError);
}

TEST_CASE("byte -> tensor -> byte roundtrip is exact for every value") {
    PageImage img = PageImage::create(16, 16, 1);
    for (int i = 0; i < 256; ++i) img.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(i);
    Tensor t = image_to_tensor(img, 1);
    PageImage back = tensor_to_image(t);
    for (int i = 0; i < 256; ++i)
        CHECK(back.pixels[static_cast<std::size_t>(i)] == img.pixels[static_cast<std::size_t>(i)]);
}

TEST_CASE("classify_page: gray pages are BlackWhite, saturated pixels flip to Color") {
    PageImage gray = PageImage::create(20, 20, 3);
    Rng rng(7);
    for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 20; ++x) {
            const auto v = static_cast<std::uint8_t>(rng.uniform_below(256));
            for (int c = 0; c < 3; ++c) gray.at(x, y, c) = v;
        }
    CHECK(classify_page(gray) == PageClass::BlackWhite);

    PageImage color = gray;
    color.at(13, 7, 0) = 255;
    color.at(13, 7, 1) = 0;
    color.at(13, 7, 2) = 0;
    CHECK(classify_page(color) == PageClass::Color);
}

TEST_CASE("classify_page: channel difference of exactly 10 stays BlackWhite") {
    PageImage page = PageImage::create(8, 8, 3, 100);
    page.at(3, 3, 1) = 110;  // worst pixel (100, 110, 100): max diff exactly 10
    CHECK(classify_page(page, 10) == PageClass::BlackWhite);
    page.at(3, 3, 1) = 111;
    CHECK(classify_page(page, 10) == PageClass::Color);
}

TEST_CASE("classify_page is invariant to pixel permutation") {
    Rng rng(99);
    PageImage page = PageImage::create(10, 10, 3);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x) {
            const auto v = static_cast<std::uint8_t>(rng.uniform_below(250));
            page.at(x, y, 0) = v;
            page.at(x, y, 1) = static_cast<std::uint8_t>(v + rng.uniform_below(6));
            page.at(x, y, 2) = v;
        }
    const PageClass before = classify_page(page);
    std::vector<std::size_t> idx(100);
    for (std::size_t i = 0; i < 100; ++i) idx[i] = i;
    std::mt19937 shuffler(5);
    std::shuffle(idx.begin(), idx.end(), shuffler);
    PageImage shuffled = PageImage::create(10, 10, 3);
    for (std::size_t i = 0; i < 100; ++i)
        for (int c = 0; c < 3; ++c)
            shuffled.pixels[i * 3 + c] = page.pixels[idx[i] * 3 + c];
    CHECK(classify_page(shuffled) == before);
}

TEST_CASE("synthetic corpora classify perfectly") {
    auto bw = generate_synthetic_corpus(CorpusKind::bw_pages, 50, 11);
    auto color = generate_synthetic_corpus(CorpusKind::color_pages, 50, 12);
    for (const auto& p : bw) CHECK(classify_page(p) == PageClass::BlackWhite);
    for (const auto& p : color) CHECK(classify_page(p) == PageClass::Color);
}

TEST_CASE("synthetic corpora are deterministic in the seed") {
    auto a = generate_synthetic_corpus(CorpusKind::shape_panels, 8, 42);
    auto b = generate_synthetic_corpus(CorpusKind::shape_panels, 8, 42);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].pixels == b[i].pixels);
}

TEST_CASE("extract_panels: 800x1200 page with zero margins gives eight 200x600 crops") {
    PageImage page = PageImage::create(800, 1200, 3);
    Rng rng(4);
    for (auto& px : page.pixels) px = static_cast<std::uint8_t>(rng.uniform_below(256));
    PanelGrid grid;  // defaults: 2x4, no margins/gutters
    auto panels = extract_panels(page, grid);
    REQUIRE(panels.size() == 8);
    for (const auto& p : panels) {
        CHECK(p.width == 200);
        CHECK(p.height == 600);
    }

    // crop contents match direct indexing, reading order left-right top-bottom
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 4; ++c) {
            const PageImage& p = panels[static_cast<std::size_t>(r) * 4 + c];
            for (int y = 0; y < 600; y += 97)
                for (int x = 0; x < 200; x += 41)
                    for (int ch = 0; ch < 3; ++ch)
                        CHECK(p.at(x, y, ch) == page.at(c * 200 + x, r * 600 + y, ch));
        }

    // reassembly reproduces the page bit-exactly
    PageImage rebuilt = PageImage::create(800, 1200, 3);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 4; ++c) {
            const PageImage& p = panels[static_cast<std::size_t>(r) * 4 + c];
            for (int y = 0; y < 600; ++y)
                for (int x = 0; x < 200; ++x)
                    for (int ch = 0; ch < 3; ++ch)
                        rebuilt.at(c * 200 + x, r * 600 + y, ch) = p.at(x, y, ch);
        }
    CHECK(rebuilt.pixels == page.pixels);
}

TEST_CASE("extract_panels honors margins and gutters") {
    PageImage page = PageImage::create(100, 60, 1);
    for (int y = 0; y < 60; ++y)
        for (int x = 0; x < 100; ++x)
            page.at(x, y, 0) = static_cast<std::uint8_t>((x * 7 + y * 13) & 0xFF);
    PanelGrid g;
    g.rows = 2;
    g.cols = 2;
    g.margin_left = 4;
    g.margin_right = 4;
    g.margin_top = 2;
    g.margin_bottom = 2;
    g.gutter_x = 2;
    g.gutter_y = 4;
    auto panels = extract_panels(page, g);
    REQUIRE(panels.size() == 4);
    // content 92x56, panel (92-2)/2=45 wide, (56-4)/2=26 tall
    CHECK(panels[0].width == 45);
    CHECK(panels[0].height == 26);
    CHECK(panels[3].at(0, 0, 0) == page.at(4 + 45 + 2, 2 + 26 + 4, 0));
}

TEST_CASE("extract_panels rejects grids that exceed the page") {
    PageImage page = PageImage::create(50, 50, 1);
    PanelGrid g;
    g.cols = 4;
    g.rows = 2;
    g.margin_left = 49;
    CHECK_THROWS_AS(extract_panels(page, g), GeometryError);
}

TEST_CASE("expected_panel_count matches the stated arithmetic") {
    CHECK(expected_panel_count(11, 166, 2.0 / 3.0, 2, 4) == 9738);
    CHECK(expected_panel_count(1, 1, 1.0, 1, 1) == 1);
    CHECK(expected_panel_count(0, 166, 2.0 / 3.0, 2, 4) == 0);
}

TEST_CASE("build_manifest: sorted records, fixed caption, deterministic bytes") {
    const fs::path dir = fresh_dir("manifest");
    for (const char* name : {"b.png", "a.png", "c.png"}) {
        PageImage img = PageImage::create(4, 4, 1, 200);
        write_png(img, (dir / name).string());
    }
    {
        std::ofstream out(dir / "notes.txt");
        out << "ignored";
    }
    DatasetManifest m = build_manifest(dir.string());
    REQUIRE(m.records.size() == 3);
    CHECK(m.records[0].image == (dir / "a.png").string());
    CHECK(m.records[1].image == (dir / "b.png").string());
    CHECK(m.records[2].image == (dir / "c.png").string());
    for (const auto& r : m.records) CHECK(r.caption == "CNH3000");

    const fs::path f1 = dir / "m1.jsonl", f2 = dir / "m2.jsonl";
    save_manifest(m, f1.string());
    save_manifest(build_manifest(dir.string()), f2.string());
    CHECK(slurp(f1) == slurp(f2));

    DatasetManifest loaded = load_manifest(f1.string());
    REQUIRE(loaded.records.size() == 3);
    CHECK(loaded.records[2].image == m.records[2].image);
    CHECK(loaded.records[2].caption == "CNH3000");
}

TEST_CASE("build_manifest on an empty directory warns and returns nothing") {
    const fs::path dir = fresh_dir("empty");
    DatasetManifest m = build_manifest(dir.string());
    CHECK(m.records.empty());
    CHECK_THROWS_AS(build_manifest(dir.string(), ""), ConfigError);
}

TEST_CASE("edge_map: constant image has no edges") {
    PageImage img = PageImage::create(16, 16, 1, 180);
    PageImage edges = edge_map(img, 60, 120);
    for (auto px : edges.pixels) CHECK(px == 255);
}

TEST_CASE("edge_map: vertical step produces one black band at the step") {
    const int w = 24, h = 12, step = 11;
    PageImage img = PageImage::create(w, h, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) img.at(x, y, 0) = x < step ? 0 : 255;
    PageImage edges = edge_map(img, 60, 120);
    REQUIRE(edges.channels == 1);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const bool in_band = (x == step - 1 || x == step);  // 3-wide sobel support
            CHECK(edges.at(x, y, 0) == (in_band ? 0 : 255));
        }
    }
}

TEST_CASE("edge_map output is binary and shape-preserving") {
    auto panels = generate_shape_panels(4, 77);
    for (const auto& p : panels) {
        PageImage edges = edge_map(p.image, 40, 100);
        CHECK(edges.width == p.image.width);
        CHECK(edges.height == p.image.height);
        CHECK(edges.channels == 1);
        for (auto px : edges.pixels) CHECK((px == 0 || px == 255));
    }
    CHECK_THROWS_AS(edge_map(panels[0].image, 120, 60), ConfigError);
}

TEST_CASE("shape panels: four balanced classes with labels") {
    auto panels = generate_shape_panels(16, 5);
    REQUIRE(panels.size() == 16);
    int counts[4] = {0, 0, 0, 0};
    for (const auto& p : panels) {
        REQUIRE(p.label >= 0);
        REQUIRE(p.label < 4);
        counts[p.label]++;
        CHECK(p.image.width == 32);
        CHECK(p.image.height == 32);
    }
    for (int c : counts) CHECK(c == 4);
    CHECK(shape_class_names().size() == 4);
}
