#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "langfield/autoencoder.hpp"
#include "langfield/query.hpp"
#include "langfield/scene.hpp"

namespace langfield {

struct BenchConfig {
    std::uint32_t repeats = 5; // channel-scaling measurements keep the fastest of these
    std::size_t scaling_camera = 0;
    QueryConfig query;
    ProtocolConfig protocol;
};

/// Wall-clock seconds of one (view, query) evaluation split by stage.
struct QueryTiming {
    std::string image_id;
    std::string label;
    double render = 0.0;   // three latent renders
    double decode = 0.0;   // three decodes
    double protocol = 0.0; // relevancy maps, localize, segment
    double total = 0.0;
};

/// Full render (projection, binning, compositing) of the latent field versus a field
/// carrying full-width embeddings, on one camera with the current worker count.
struct ChannelScaling {
    std::string image_id;
    std::uint32_t latent_channels = 0;
    std::uint32_t wide_channels = 0;
    double latent_seconds = 0.0;
    double wide_seconds = 0.0;
    double ratio = 0.0;
    std::size_t threads = 0;
};

/// Outputs of the benchmarked queries. Independent of timing and identical across runs.
struct BenchOutputs {
    struct Entry {
        std::string image_id;
        std::string label;
        Localization location;
        std::uint64_t mask_pixels = 0;
        int segment_level = -1; // level index of the segmentation, -1 when empty
        std::uint64_t render_digest = 0; // FNV-1a over the three rendered latent images
    };
    std::vector<Entry> entries;
};

struct BenchReport {
    BenchOutputs outputs;
    std::vector<QueryTiming> queries;
    double render_seconds = 0.0;
    double decode_seconds = 0.0;
    double protocol_seconds = 0.0;
    double total_seconds = 0.0; // measured around the whole query loop
    double seconds_per_query = 0.0;
    ChannelScaling scaling;
};

/// Times every query on every camera, then measures channel scaling. The wide field
/// carries each Gaussian's decoded whole-level embedding (input_dim channels).
BenchReport benchmark_query(const GaussianScene& scene, const AutoencoderParams& ae,
                            std::span<const QueryEmbedding> queries, const CanonicalSet& canon,
                            std::span<const Camera> cameras, const BenchConfig& cfg = {});

ChannelScaling measure_channel_scaling(const GaussianScene& scene, const AutoencoderParams& ae, const Camera& camera,
                                       std::uint32_t repeats, const RasterConfig& raster = {});

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

void write_bench_outputs(const BenchOutputs& outputs, const std::filesystem::path& path);
void write_bench_timing(const BenchReport& report, const std::filesystem::path& path);

} // namespace langfield
