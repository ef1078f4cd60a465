#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "langfield/masks.hpp"
#include "langfield/query.hpp"
#include "langfield/rasterizer.hpp"
#include "langfield/scene.hpp"

namespace langfield {

/// Parameters of the synthetic test scene: spheres covered in flat surface discs, split
/// into halves (part) and quarters (subpart), in front of a flat backdrop.
struct SyntheticSceneSpec {
    std::uint32_t num_gaussians = 2000;
    std::uint32_t num_objects = 3;
    std::uint32_t num_views = 8;
    std::uint32_t width = 128;
    std::uint32_t height = 128;
    std::uint32_t latent_dim = 3;
    double object_radius = 0.7;   // world units
    double layout_radius = 1.2;   // distance of object centers from the origin
    double camera_distance = 5.0;
    double focal = 150.0;         // pixels
    bool backdrop = true;
    bool plant_latents = false;   // fill latents with distinct per-region vectors
    std::uint64_t seed = 1;
};

/// Planted semantic identity of one Gaussian. object 0 is the backdrop.
struct GaussianLabel {
    std::uint16_t object = 0;
    std::uint8_t part = 0;    // 0..1 on objects
    std::uint8_t subpart = 0; // 0..3 on objects
};

/// Region index of a Gaussian at a level: backdrop is region 0, object regions follow.
std::uint32_t region_of(const GaussianLabel& label, SemanticLevel level);
std::uint32_t region_count(std::uint32_t num_objects, SemanticLevel level);

struct SyntheticScene {
    GaussianScene scene;
    std::vector<Camera> cameras;
    std::vector<GaussianLabel> labels;
    std::uint32_t num_objects = 0;
};

/// Deterministic in `spec.seed`. Throws ConfigError for zero Gaussians or objects.
SyntheticScene synth_scene(const SyntheticSceneSpec& spec);

/// Per-pixel planted region label (region + 1), 0 where accumulated alpha < 0.5.
/// Each pixel takes the region with the largest compositing weight.
std::vector<std::uint16_t> planted_label_image(const SyntheticScene& synth, const Camera& camera, SemanticLevel level,
                                               const RasterConfig& cfg = {});

/// Stand-in for the image/text encoders: every planted region gets a D-dimensional
/// embedding sharing a common component with the canonical phrases.
struct SyntheticEmbeddings {
    std::uint32_t dim = 512;
    std::array<std::vector<std::vector<double>>, 3> regions; // [level][region] unit vectors
    std::vector<QueryEmbedding> queries;                     // one per object, "object_<k>"
    CanonicalSet canonical;
};

SyntheticEmbeddings synth_embeddings(std::uint32_t num_objects, std::uint32_t dim, std::uint64_t seed);

struct SyntheticDatasetSpec {
    SyntheticSceneSpec scene;
    std::uint32_t embedding_dim = 512;
    double mask_noise = 0.05; // per-mask perturbation of the region embedding
};

/// Writes the full input tree consumed by the pipeline (see DatasetLayout).
void write_synthetic_dataset(const SyntheticDatasetSpec& spec, const std::filesystem::path& root);

/// Gaussian labels file: JSON array of [object, part, subpart].
void save_gaussian_labels(const std::vector<GaussianLabel>& labels, const std::filesystem::path& path);
std::vector<GaussianLabel> load_gaussian_labels(const std::filesystem::path& path);

} // namespace langfield
