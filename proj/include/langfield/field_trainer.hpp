#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "langfield/autoencoder.hpp"
#include "langfield/feature_image.hpp"
#include "langfield/masks.hpp"
#include "langfield/rasterizer.hpp"
#include "langfield/scene.hpp"

namespace langfield {

/// Encoded per-pixel latent targets for one level. Invalid pixels (label 0) carry zeros.
struct LevelTarget {
    FeatureImage latent;
    std::vector<std::uint8_t> valid;
};

struct TrainingView {
    Camera camera;
    std::array<LevelTarget, 3> levels;

    const LevelTarget& level(SemanticLevel l) const { return levels[level_index(l)]; }
    void validate(std::uint32_t latent_dim) const;
};

/// Encodes every table row once and scatters the latents through the label map.
TrainingView make_training_view(const Camera& camera, const std::array<SegmentationMap, 3>& segs,
                                const std::array<MaskEmbeddingTable, 3>& tables, const AutoencoderParams& ae);

// One LFIM per level with d + 1 channels; the last channel is the validity flag.
void write_training_view(const TrainingView& view, const std::filesystem::path& dir);
TrainingView read_training_view(const Camera& camera, const std::filesystem::path& dir);

enum class LangDistance { l1, l2 };

struct FieldTrainConfig {
    std::uint32_t iterations = 30000;
    double lr = 2.5e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
    LangDistance distance = LangDistance::l1;
    std::uint64_t seed = 0;
    std::uint32_t log_every = 100;
    RasterConfig raster;
};

struct LangLoss {
    double value = 0.0;
    std::size_t valid_pixels = 0;
};

/// Mean over valid pixels of the per-pixel distance (L1: sum of absolute channel
/// differences; L2: sum of squared differences). No valid pixels gives 0 and a warning.
LangLoss lang_loss(const FeatureImage& rendered, const LevelTarget& target, LangDistance distance = LangDistance::l1);

/// Loss summed over levels for one view and its gradient with respect to the stacked
/// latents (row i = [f_subpart, f_part, f_whole] of Gaussian i).
struct FieldObjective {
    std::array<LangLoss, 3> levels;
    double total = 0.0;
    std::vector<double> grad;
};

FieldObjective field_objective(const RasterPlan& plan, std::span<const double> stacked, std::uint32_t latent_dim,
                               const TrainingView& view, const FieldTrainConfig& cfg);

std::vector<double> stack_latents(const GaussianScene& scene);
void unstack_latents(std::span<const double> stacked, GaussianScene& scene);

struct FieldLogEntry {
    std::uint32_t iteration = 0;
    std::array<double, 3> level_loss{}; // running mean over the logging window
};

struct FieldTrainReport {
    double initial_loss = 0.0; // mean over views of the summed level loss before training
    double final_loss = 0.0;   // same, after training
    std::vector<FieldLogEntry> log;
};

/// Optimizes only the latent fields of `scene`; geometry is untouched.
FieldTrainReport train_field(GaussianScene& scene, std::span<const TrainingView> views, const FieldTrainConfig& cfg);

} // namespace langfield
