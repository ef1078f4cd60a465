#pragma once

#include <filesystem>
#include <string>

#include "langfield/scene.hpp"

namespace langfield {

/// File layout of a pipeline input tree.
///
///   scene.lsplat, cameras.json, queries.json, canonical.json, annotations.json
///   raw_masks/<image>/<level>/mask_NNNN.{png,json}
///   masks/<image>_<level>.png      16-bit label maps
///   embeddings/<image>_<level>.lemb
struct DatasetLayout {
    std::filesystem::path root;

    std::filesystem::path scene() const { return root / "scene.lsplat"; }
    std::filesystem::path cameras() const { return root / "cameras.json"; }
    std::filesystem::path queries() const { return root / "queries.json"; }
    std::filesystem::path canonical() const { return root / "canonical.json"; }
    std::filesystem::path annotations() const { return root / "annotations.json"; }
    std::filesystem::path gaussian_labels() const { return root / "gaussian_labels.json"; }
    std::filesystem::path raw_masks_dir() const { return root / "raw_masks"; }
    std::filesystem::path masks_dir() const { return root / "masks"; }
    std::filesystem::path embeddings_dir() const { return root / "embeddings"; }

    std::filesystem::path raw_masks(const std::string& image, SemanticLevel l) const {
        return raw_masks_dir() / image / std::string(level_name(l));
    }
    std::filesystem::path seg_map(const std::string& image, SemanticLevel l) const {
        return masks_dir() / (image + "_" + std::string(level_name(l)) + ".png");
    }
    std::filesystem::path embeddings(const std::string& image, SemanticLevel l) const {
        return embeddings_dir() / (image + "_" + std::string(level_name(l)) + ".lemb");
    }
};

} // namespace langfield
