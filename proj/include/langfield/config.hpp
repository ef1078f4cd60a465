#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "langfield/autoencoder.hpp"
#include "langfield/bench.hpp"
#include "langfield/dataset.hpp"
#include "langfield/field_trainer.hpp"
#include "langfield/masks.hpp"
#include "langfield/query.hpp"
#include "langfield/synth.hpp"

namespace langfield {

/// Everything a pipeline run depends on. Loaded from JSON (see README for the schema);
/// command-line flags override individual fields.
struct PipelineConfig {
    std::filesystem::path data = ".";  // dataset root, laid out as DatasetLayout
    std::filesystem::path out = "out"; // artifacts written by the pipeline stages

    // Optional path overrides; unset means the dataset layout / output default.
    std::optional<std::filesystem::path> scene;
    std::optional<std::filesystem::path> cameras;
    std::optional<std::filesystem::path> queries;
    std::optional<std::filesystem::path> canonical;
    std::optional<std::filesystem::path> annotations;
    std::optional<std::filesystem::path> autoencoder;

    std::uint64_t seed = 0;
    std::uint32_t threads = 0; // 0 keeps LANGFIELD_THREADS / all cores
    std::uint32_t latent_dim = 3;

    SyntheticDatasetSpec synth;
    MaskFilterConfig masks;
    AeTrainConfig ae;
    FieldTrainConfig field;
    QueryConfig query;
    ProtocolConfig protocol;
    BenchConfig bench;

    DatasetLayout layout() const { return {data}; }
    std::filesystem::path input_scene_path() const { return layout().scene(); }
    std::filesystem::path trained_scene_path() const { return out / "scene_trained.lsplat"; }
    std::filesystem::path cameras_path() const { return cameras.value_or(layout().cameras()); }
    std::filesystem::path queries_path() const { return queries.value_or(layout().queries()); }
    std::filesystem::path canonical_path() const { return canonical.value_or(layout().canonical()); }
    std::filesystem::path annotations_path() const { return annotations.value_or(layout().annotations()); }
    std::filesystem::path autoencoder_path() const { return autoencoder.value_or(out / "autoencoder.laep"); }
    std::filesystem::path targets_dir() const { return out / "targets"; }

    /// Propagates `seed` and `raster` into the module configs that carry their own copies.
    void sync();
    /// Throws ConfigError for out-of-range values.
    void validate() const;
};

/// Overlays the keys present in a JSON document; unknown keys are a ConfigError.
void apply_config_json(PipelineConfig& cfg, const std::string& json_text);
PipelineConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const PipelineConfig& cfg);

} // namespace langfield
