#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "langfield/feature_image.hpp"
#include "langfield/scene.hpp"

namespace langfield {

/// Rasterization constants. Defaults follow common splatting practice.
struct RasterConfig {
    std::uint32_t tile_size = 16;
    double blur = 0.3;             // px^2 added to both diagonal entries of cov2d
    double near_plane = 0.01;      // camera-frame z at or below this is culled
    double sigma_extent = 3.0;     // splat footprint: Mahalanobis distance <= sigma_extent
    double alpha_clamp = 0.99;     // per-splat alpha upper bound
    double min_transmittance = 1e-4; // stop blending once transmittance drops below this
};

/// One Gaussian projected to screen space.
struct Splat2D {
    std::uint32_t gaussian_index = 0;
    double center[2]{};
    double cov[3]{};   // (xx, xy, yy), blur included
    double conic[3]{}; // inverse of cov, (xx, xy, yy)
    double depth = 0.0;
    double opacity = 0.0;
    double extent[2]{}; // half-widths of the axis-aligned box around the footprint ellipse

    /// Builds a splat from an explicit screen covariance (blur already applied by the caller).
    static Splat2D make(std::uint32_t gaussian_index, double cx, double cy, double cov_xx, double cov_xy,
                        double cov_yy, double depth, double opacity, double sigma_extent = 3.0);
};

/// Alpha of a splat (Splat2D or PackedSplat) at pixel center (px, py): opacity * G2D, zero
/// outside the footprint, clamped to `alpha_clamp`.
template <typename S>
inline double splat_alpha(const S& s, double px, double py, double sigma_extent, double alpha_clamp) {
    const double dx = px - s.center[0];
    const double dy = py - s.center[1];
    const double m2 = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
    if (!(m2 <= sigma_extent * sigma_extent)) {
        return 0.0;
    }
    const double a = s.opacity * std::exp(-0.5 * m2);
    return a < alpha_clamp ? a : alpha_clamp;
}

struct ProjectionStats {
    std::size_t behind_near_plane = 0;
    std::size_t off_screen = 0;
};

/// Projects every Gaussian; culled primitives are dropped, survivors keep scene order.
std::vector<Splat2D> project(const GaussianScene& scene, const Camera& camera,
                             const RasterConfig& cfg = {}, ProjectionStats* stats = nullptr);

/// Screen-space covariance (without blur) of a camera-frame Gaussian at `mean_cam`.
Eigen::Matrix2d project_covariance(const Eigen::Matrix3d& cov_cam, const Eigen::Vector3d& mean_cam,
                                   double fx, double fy);

/// Per-tile splat lists, each ordered by (depth, gaussian_index).
struct TileGrid {
    std::uint32_t tile_size = 16;
    std::uint32_t tiles_x = 0;
    std::uint32_t tiles_y = 0;
    std::vector<std::vector<std::uint32_t>> tiles; // indices into the splat list

    std::size_t tile_count() const { return tiles.size(); }
};

TileGrid build_tile_grid(std::span<const Splat2D> splats, std::uint32_t width, std::uint32_t height,
                         std::uint32_t tile_size);

/// Footprint parameters of one tile-list entry, stored contiguously per tile.
struct PackedSplat {
    double center[2];
    double conic[3];
    double opacity;
    double extent[2];
    std::uint32_t gaussian_index;
};

/// Projected and binned splats for one camera; reusable across channel sets while
/// geometry is frozen.
struct RasterPlan {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<Splat2D> splats;
    TileGrid grid;
    ProjectionStats stats;
    // Tile lists flattened in grid order; tile t owns packed[tile_offsets[t] .. tile_offsets[t + 1]).
    std::vector<PackedSplat> packed;
    std::vector<std::size_t> tile_offsets;
};

RasterPlan make_plan(const GaussianScene& scene, const Camera& camera, const RasterConfig& cfg = {});
RasterPlan make_plan(std::vector<Splat2D> splats, std::uint32_t width, std::uint32_t height,
                     const RasterConfig& cfg = {});

/// Front-to-back alpha compositing of per-Gaussian k-vectors.
/// `channels` holds one k-vector per Gaussian, indexed by Splat2D::gaussian_index.
FeatureImage composite_forward(const RasterPlan& plan, std::span<const double> channels, std::size_t k,
                               const RasterConfig& cfg = {});

FeatureImage composite_forward(std::span<const Splat2D> splats, std::span<const double> channels,
                               std::size_t k, const Camera& camera, const RasterConfig& cfg = {});

/// Gradient of sum(upstream * F) with respect to every channel vector.
/// Returns one k-vector per channel row; Gaussians without splats get zeros.
std::vector<double> composite_backward(const RasterPlan& plan, std::span<const double> channels,
                                       std::size_t k, std::span<const double> upstream,
                                       const RasterConfig& cfg = {});

std::vector<double> composite_backward(std::span<const Splat2D> splats, std::span<const double> channels,
                                       std::size_t k, const Camera& camera,
                                       std::span<const double> upstream, const RasterConfig& cfg = {});

/// Latents of one level widened to double, laid out as composite_forward expects.
std::vector<double> level_channels(const GaussianScene& scene, SemanticLevel level);

FeatureImage render_level(const GaussianScene& scene, const Camera& camera, SemanticLevel level,
                          const RasterConfig& cfg = {});

/// Per-Gaussian RGB color compositing.
FeatureImage render_color(const GaussianScene& scene, const Camera& camera, const RasterConfig& cfg = {});

} // namespace langfield
