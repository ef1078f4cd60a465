#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "langfield/scene.hpp"

namespace langfield {

struct RawMask {
    std::vector<std::uint8_t> bitmap; // H*W, nonzero = inside
    double predicted_iou = 0.0;
    double stability = 0.0;

    std::size_t area() const;
};

/// Unfiltered masks of one image at one semantic level.
struct RawMaskSet {
    std::string image_id;
    SemanticLevel level = SemanticLevel::whole;
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<RawMask> masks;

    void validate() const;
};

struct MaskFilterConfig {
    double min_predicted_iou = 0.7;
    double min_stability = 0.85;
    double max_overlap = 0.8; // masks with bitmap IoU >= this against a kept mask are dropped
};

double bitmap_iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

/// Score thresholds, then greedy deduplication in descending predicted-IoU order.
/// Empty bitmaps are dropped. Output order is keep order.
RawMaskSet filter_masks(const RawMaskSet& raw, const MaskFilterConfig& cfg = {});

/// Full-image label map; 0 = unassigned, 1..mask_count = mask ids.
struct SegmentationMap {
    std::string image_id;
    SemanticLevel level = SemanticLevel::whole;
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::uint32_t mask_count = 0;
    std::vector<std::uint16_t> labels;

    std::uint16_t label(std::size_t x, std::size_t y) const { return labels[y * width + x]; }
};

struct BuiltSegmentation {
    SegmentationMap map;
    // source_mask[id - 1] = index into the filtered set that received label id.
    std::vector<std::size_t> source_mask;
};

/// Paints masks largest-first so smaller masks end up on top; ids follow paint order.
BuiltSegmentation build_segmentation_map(const RawMaskSet& filtered);

/// Row k-1 holds the unit-norm embedding of mask id k.
struct MaskEmbeddingTable {
    std::string image_id;
    SemanticLevel level = SemanticLevel::whole;
    std::uint32_t dim = 0;
    std::vector<float> rows; // mask_count() x dim

    std::size_t mask_count() const { return dim == 0 ? 0 : rows.size() / dim; }
    std::span<const float> row(std::uint32_t id) const { return {rows.data() + std::size_t{id - 1} * dim, dim}; }

    // Row norms must be 1 within 1e-4.
    void validate() const;
};

struct Pixel {
    std::uint32_t x = 0;
    std::uint32_t y = 0;
};

/// Looks up each pixel's mask embedding. Unassigned pixels map to nullopt.
/// Throws FormatError when a label has no table row.
std::vector<std::optional<std::span<const float>>>
assign_pixel_embeddings(const SegmentationMap& seg, const MaskEmbeddingTable& table,
                        std::span<const Pixel> pixels);

/// Throws FormatError unless every label id present has a table row and sizes agree.
void check_consistency(const SegmentationMap& seg, const MaskEmbeddingTable& table);

// File formats.
SegmentationMap read_segmentation_map(const std::filesystem::path& path, std::string image_id,
                                      SemanticLevel level);
void write_segmentation_map(const SegmentationMap& seg, const std::filesystem::path& path);

MaskEmbeddingTable read_lemb(const std::filesystem::path& path, std::string image_id, SemanticLevel level);
void write_lemb(const MaskEmbeddingTable& table, const std::filesystem::path& path);

/// Directory of mask_NNNN.png (1-bit) plus mask_NNNN.json {"predicted_iou", "stability"}.
RawMaskSet read_raw_mask_set(const std::filesystem::path& dir, std::string image_id, SemanticLevel level);
void write_raw_mask_set(const RawMaskSet& set, const std::filesystem::path& dir);

} // namespace langfield
