#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "langfield/autoencoder.hpp"
#include "langfield/feature_image.hpp"
#include "langfield/rasterizer.hpp"
#include "langfield/scene.hpp"

namespace langfield {

struct QueryEmbedding {
    std::string label;
    std::vector<double> vector; // unit norm
};

/// The four canonical negatives ("object", "things", "stuff", "texture").
struct CanonicalSet {
    std::array<std::vector<double>, 4> phrases;
};

/// JSON array of {"label", "vector"}; every vector must be unit norm within 1e-4.
std::vector<QueryEmbedding> load_queries(const std::filesystem::path& path);
void save_queries(std::span<const QueryEmbedding> queries, const std::filesystem::path& path);
/// Same shape as a query file with exactly four entries.
CanonicalSet load_canonical(const std::filesystem::path& path);
void save_canonical(const CanonicalSet& canon, const std::filesystem::path& path);

/// min_i exp(img.qry) / (exp(img.qry) + exp(img.canon_i)), evaluated in the
/// overflow-free form 1 / (1 + exp(max_i img.canon_i - img.qry)).
double relevancy(std::span<const double> img, std::span<const double> qry, const CanonicalSet& canon);

/// Scalar field over an image for one query at one level.
struct RelevancyMap {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<double> values;
    SemanticLevel level = SemanticLevel::whole;
    std::string label;

    double at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
};

using MapTriple = std::array<RelevancyMap, 3>;

struct QueryConfig {
    bool normalize = true; // L2-normalize decoded, query and canonical vectors before dot products
    RasterConfig raster;
};

/// Decodes every pixel of a latent image (normalized when configured).
FeatureImage decode_latents(const FeatureImage& latent, const AutoencoderParams& ae, const QueryConfig& cfg = {});

/// render_level followed by decode_latents.
FeatureImage decode_level(const GaussianScene& scene, const Camera& camera, const AutoencoderParams& ae,
                          SemanticLevel level, const QueryConfig& cfg = {});

RelevancyMap relevancy_map(const FeatureImage& decoded, const QueryEmbedding& qry, const CanonicalSet& canon,
                           SemanticLevel level, const QueryConfig& cfg = {});

MapTriple relevancy_maps(const GaussianScene& scene, const Camera& camera, const AutoencoderParams& ae,
                         const QueryEmbedding& qry, const CanonicalSet& canon, const QueryConfig& cfg = {});

inline constexpr std::uint32_t kSmoothSize = 20;

/// Box mean over a size x size window with edge-replicate padding. The window spans
/// offsets [-size/2, size - 1 - size/2] on each axis; size 1 is the identity. Each window
/// row is summed left to right, then the row sums top to bottom, then scaled by 1/size^2.
RelevancyMap smooth(const RelevancyMap& map, std::uint32_t size = kSmoothSize);

struct Localization {
    std::uint32_t x = 0;
    std::uint32_t y = 0;
    SemanticLevel level = SemanticLevel::subpart;
    double score = 0.0;
};

/// Argmax of the smoothed maps; ties go to the lowest level, then the first pixel in row-major order.
Localization localize(const MapTriple& maps, std::uint32_t smooth_size = kSmoothSize);

struct SegmentResult {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<std::uint8_t> mask;
    std::optional<SemanticLevel> level; // empty when no candidate was selected
};

/// Smooth all three maps, take the one with the highest smoothed value, min-max
/// normalize it and keep pixels >= threshold. A constant selected map yields an empty mask.
SegmentResult segment_lerf(const MapTriple& maps, double threshold = 0.5, std::uint32_t smooth_size = kSmoothSize);

/// Binarize each map at the threshold (value >= threshold), then keep the binarization whose
/// mean raw relevancy inside the mask is highest. Empty binarizations never win.
SegmentResult segment_ovs(const MapTriple& maps, double threshold = 0.4);

enum class SegmentProtocol { ovs, lerf };

/// Protocol parameters shared by the localize/segment entry points.
struct ProtocolConfig {
    SegmentProtocol protocol = SegmentProtocol::ovs;
    double lerf_threshold = 0.5;
    double ovs_threshold = 0.4;
    std::uint32_t smooth_size = kSmoothSize;
};

SegmentResult segment(const MapTriple& maps, const ProtocolConfig& cfg = {});

/// Latent image shown as RGB with per-channel min-max normalization (constant channel -> 0.5).
/// Requires latent_dim == 3.
std::vector<std::uint8_t> viz_latent(const GaussianScene& scene, const Camera& camera, SemanticLevel level,
                                     const RasterConfig& cfg = {});
std::vector<std::uint8_t> latent_to_rgb(const FeatureImage& latent);

/// Maps [0, 1] to an RGB heat ramp for PNG output.
std::vector<std::uint8_t> heatmap_rgb(const RelevancyMap& map);

} // namespace langfield
