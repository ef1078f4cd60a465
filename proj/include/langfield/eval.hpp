#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace langfield {

/// Inclusive pixel box.
struct BBox {
    std::int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    bool contains(std::int64_t x, std::int64_t y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

struct PixelPrediction {
    std::int64_t x = 0;
    std::int64_t y = 0;
};

/// Percentage of predictions lying inside their box (edges count as inside).
double eval_localization(std::span<const PixelPrediction> preds, std::span<const BBox> gts);

/// IoU of two binary masks; two empty masks have IoU 1.
double mask_iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

/// Mean IoU in percent over paired masks.
double eval_iou(std::span<const std::vector<std::uint8_t>> preds, std::span<const std::vector<std::uint8_t>> gts);

struct ClassMetrics {
    double miou = 0.0;     // percent
    double accuracy = 0.0; // percent of labeled pixels with the right class
    std::vector<std::optional<double>> class_iou; // index c - 1; empty if class never occurs
};

/// Label images use 0 for "no class" (pred) / "unlabeled" (gt) and 1..num_classes otherwise.
/// Only gt-labeled pixels are scored.
ClassMetrics eval_miou_accuracy(std::span<const std::vector<std::uint16_t>> preds,
                                std::span<const std::vector<std::uint16_t>> gts, std::uint32_t num_classes);

/// Combines per-class binary masks into a label image; the lowest class index wins overlaps.
std::vector<std::uint16_t> labels_from_masks(std::span<const std::vector<std::uint8_t>> class_masks);

struct SceneMetrics {
    std::string scene;
    std::optional<double> localization_accuracy;
    std::optional<double> mean_iou;
    std::optional<double> miou;
    std::optional<double> accuracy;
    std::optional<double> seconds_per_query;
};

struct MetricsReport {
    std::vector<SceneMetrics> scenes;
    SceneMetrics overall; // unweighted mean over scenes reporting each metric

    void validate() const;
};

MetricsReport aggregate_metrics(std::vector<SceneMetrics> scenes);
void write_metrics_json(const MetricsReport& report, const std::filesystem::path& path);
void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path);

// Ground-truth annotations: {"scene": name, "views": [{"image_id", "queries": [{"label",
// "bbox": [x0, y0, x1, y1] (optional), "mask": relative PNG path (optional)}]}]}
struct QueryAnnotation {
    std::string label;
    std::optional<BBox> bbox;
    std::optional<std::filesystem::path> mask; // resolved against the annotation file's folder
};

struct ViewAnnotation {
    std::string image_id;
    std::vector<QueryAnnotation> queries;
};

struct SceneAnnotations {
    std::string scene;
    std::vector<ViewAnnotation> views;
};

SceneAnnotations load_annotations(const std::filesystem::path& path);
void save_annotations(const SceneAnnotations& ann, const std::filesystem::path& path);

std::vector<std::uint8_t> read_binary_mask(const std::filesystem::path& path, std::uint32_t* width = nullptr,
                                           std::uint32_t* height = nullptr);

} // namespace langfield
