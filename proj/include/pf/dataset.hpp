#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pf/image.hpp"

namespace pf {

enum class PageClass { BlackWhite, Color };

// Fixed-coordinate crop layout: `rows` strips of `cols` panels inside the
// margins, separated by gutters. All panels share one size.
struct PanelGrid {
    int rows = 2;
    int cols = 4;
    int margin_left = 0;
    int margin_right = 0;
    int margin_top = 0;
    int margin_bottom = 0;
    int gutter_x = 0;
    int gutter_y = 0;
};

struct ManifestRecord {
    std::string image;
    std::string caption;
};

// JSON-lines manifest: {"image": "...", "caption": "..."} per record.
struct DatasetManifest {
    std::vector<ManifestRecord> records;
};

// BlackWhite iff max over pixels of max(|R-G|, |G-B|) <= threshold
// (inclusive). Grayscale images are trivially BlackWhite.
PageClass classify_page(const PageImage& page, int threshold = 10);

// rows x cols crops in reading order (left-to-right, top-to-bottom).
std::vector<PageImage> extract_panels(const PageImage& page, const PanelGrid& grid);

// floor(volumes * pages_per_volume * bw_fraction * strips * panels)
long long expected_panel_count(long long volumes, long long pages_per_volume, double bw_fraction,
                               long long strips_per_page, long long panels_per_strip);

// One record per *.png under panel_dir, sorted by path, all with `caption`.
// Warns on stderr and returns an empty manifest for an empty directory.
DatasetManifest build_manifest(const std::string& panel_dir,
                               const std::string& caption = "CNH3000");

void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

// Sobel magnitude, normalized to [0,255], hysteresis-thresholded with
// low/high (weak edges survive only when 8-connected to a strong edge),
// then inverted: edges black (0) on a white (255) background.
PageImage edge_map(const PageImage& img, double low, double high);

enum class CorpusKind { bw_pages, color_pages, shape_panels };

// Deterministic synthetic corpora for tests and toy training.
std::vector<PageImage> generate_synthetic_corpus(CorpusKind kind, int n, std::uint64_t seed);

// 32x32 grayscale panels with a class label; captions name the shape.
struct ShapePanel {
    PageImage image;
    int label = 0;  // index into shape_class_names()
};
const std::vector<std::string>& shape_class_names();
std::vector<ShapePanel> generate_shape_panels(int n, std::uint64_t seed);

}  // namespace pf
