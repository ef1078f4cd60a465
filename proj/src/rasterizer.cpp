#include "langfield/rasterizer.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "langfield/errors.hpp"
#include "langfield/parallel.hpp"

namespace langfield {

namespace {

struct PixelRange {
    std::int64_t lo = 0;
    std::int64_t hi = -1; // inclusive; empty when hi < lo
};

// Pixel centers inside [c - e, c + e], clipped to [0, n - 1].
PixelRange covered_pixels(double center, double extent, std::uint32_t n) {
    const double lo = std::max(0.0, std::ceil(center - extent));
    const double hi = std::min(static_cast<double>(n) - 1.0, std::floor(center + extent));
    if (!(lo <= hi)) {
        return {};
    }
    return {static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)};
}

void check_channels(const RasterPlan& plan, std::span<const double> channels, std::size_t k) {
    if (k == 0) {
        throw ShapeError("channel count must be >= 1");
    }
    if (channels.size() % k != 0) {
        throw ShapeError("channel buffer length " + std::to_string(channels.size()) +
                         " is not a multiple of k=" + std::to_string(k));
    }
    const std::size_t rows = channels.size() / k;
    for (const Splat2D& s : plan.splats) {
        if (s.gaussian_index >= rows) {
            throw ShapeError("splat references Gaussian " + std::to_string(s.gaussian_index) +
                             " but only " + std::to_string(rows) + " channel rows were given");
        }
    }
}

struct TileBounds {
    std::uint32_t x0, y0, x1, y1; // pixel range [x0, x1) x [y0, y1)
};

TileBounds tile_bounds(const RasterPlan& plan, std::size_t tile) {
    const std::uint32_t ts = plan.grid.tile_size;
    const auto tx = static_cast<std::uint32_t>(tile % plan.grid.tiles_x);
    const auto ty = static_cast<std::uint32_t>(tile / plan.grid.tiles_x);
    return {tx * ts, ty * ts, std::min(plan.width, (tx + 1) * ts), std::min(plan.height, (ty + 1) * ts)};
}

// Walks a tile splat by splat, visiting only the pixels inside each splat's box. Every pixel
// still sees its splats front to back and stops after transmittance falls below the floor,
// so the result matches a per-pixel loop over the same list.
// fn(slot, pixel_index, weight) is called for every blended contribution; returns the
// final transmittance of each tile pixel through `transmittance`.
template <typename Fn>
void walk_tile(const RasterPlan& plan, std::size_t tile, const RasterConfig& cfg,
               std::vector<double>& transmittance, Fn&& fn) {
    const TileBounds b = tile_bounds(plan, tile);
    const std::uint32_t tw = b.x1 - b.x0;
    const std::size_t n = std::size_t{tw} * (b.y1 - b.y0);
    transmittance.assign(n, 1.0);
    std::vector<std::uint8_t> done(n, 0);
    std::size_t remaining = n;
    const double extent2 = cfg.sigma_extent * cfg.sigma_extent;
    // The float buffers are aligned and padded so exp runs on whole packets only; Eigen's
    // scalar head/tail path rounds differently and would make alpha depend on box position.
    constexpr Eigen::Index kPad = 16;
    std::vector<double> m2_buf(n);
    std::vector<float, Eigen::aligned_allocator<float>> m2f_buf(n + kPad, 0.0f), alpha_buf(n + kPad);

    const std::size_t first = plan.tile_offsets[tile];
    const std::size_t last = plan.tile_offsets[tile + 1];
    for (std::size_t slot = first; slot < last && remaining > 0; ++slot) {
        const PackedSplat& s = plan.packed[slot];
        const PixelRange xs = covered_pixels(s.center[0], s.extent[0], plan.width);
        const PixelRange ys = covered_pixels(s.center[1], s.extent[1], plan.height);
        const std::int64_t xa = std::max<std::int64_t>(xs.lo, b.x0);
        const std::int64_t xb = std::min<std::int64_t>(xs.hi, b.x1 - 1);
        const std::int64_t ya = std::max<std::int64_t>(ys.lo, b.y0);
        const std::int64_t yb = std::min<std::int64_t>(ys.hi, b.y1 - 1);
        if (xa > xb || ya > yb) {
            continue;
        }
        const auto span = static_cast<Eigen::Index>(xb - xa + 1);
        const auto n_box = span * static_cast<Eigen::Index>(yb - ya + 1);
        // splat_alpha for the whole box at once; the footprint test stays in double, exp runs in float.
        for (std::int64_t y = ya, i = 0; y <= yb; ++y) {
            const double dy = static_cast<double>(y) - s.center[1];
            for (std::int64_t x = xa; x <= xb; ++x, ++i) {
                const double dx = static_cast<double>(x) - s.center[0];
                m2_buf[static_cast<std::size_t>(i)] =
                    s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
            }
        }
        const Eigen::Index n_pad = (n_box + kPad - 1) / kPad * kPad;
        Eigen::Map<Eigen::ArrayXf>(m2f_buf.data(), n_box) =
            Eigen::Map<const Eigen::ArrayXd>(m2_buf.data(), n_box).cast<float>();
        Eigen::Map<Eigen::ArrayXf, Eigen::AlignedMax>(alpha_buf.data(), n_pad) =
            (-0.5f * Eigen::Map<const Eigen::ArrayXf, Eigen::AlignedMax>(m2f_buf.data(), n_pad)).exp();
        for (std::int64_t y = ya, i = 0; y <= yb; ++y) {
            const std::size_t row = static_cast<std::size_t>(y - b.y0) * tw;
            const std::size_t pixel_row = static_cast<std::size_t>(y) * plan.width;
            for (std::int64_t x = xa; x <= xb; ++x, ++i) {
                const std::size_t li = row + static_cast<std::size_t>(x - b.x0);
                if (done[li] != 0 || !(m2_buf[static_cast<std::size_t>(i)] <= extent2)) {
                    continue;
                }
                const double a = std::min(s.opacity * static_cast<double>(alpha_buf[static_cast<std::size_t>(i)]),
                                          cfg.alpha_clamp);
                if (a <= 0.0) {
                    continue;
                }
                fn(slot - first, pixel_row + static_cast<std::size_t>(x), a * transmittance[li]);
                transmittance[li] *= 1.0 - a;
                if (transmittance[li] < cfg.min_transmittance) {
                    done[li] = 1;
                    --remaining;
                }
            }
        }
    }
}

// K > 0 fixes the channel count at compile time; K == 0 uses the runtime k.
template <std::size_t K>
void composite_tiles(const RasterPlan& plan, std::span<const double> channels, std::size_t k,
                     const RasterConfig& cfg, FeatureImage& img) {
    const std::size_t kk = K > 0 ? K : k;
    parallel_for(plan.grid.tile_count(), [&](std::size_t tile) {
        const std::size_t first = plan.tile_offsets[tile];
        std::vector<double> transmittance;
        walk_tile(plan, tile, cfg, transmittance, [&](std::size_t slot, std::size_t p, double w) {
            const double* f = channels.data() + std::size_t{plan.packed[first + slot].gaussian_index} * kk;
            double* out = img.data.data() + p * kk;
            for (std::size_t c = 0; c < kk; ++c) {
                out[c] += w * f[c];
            }
        });
        const TileBounds b = tile_bounds(plan, tile);
        for (std::uint32_t y = b.y0; y < b.y1; ++y) {
            for (std::uint32_t x = b.x0; x < b.x1; ++x) {
                img.alpha[std::size_t{y} * plan.width + x] =
                    1.0 - transmittance[std::size_t{y - b.y0} * (b.x1 - b.x0) + (x - b.x0)];
            }
        }
    });
}

} // namespace

Splat2D Splat2D::make(std::uint32_t gaussian_index, double cx, double cy, double cov_xx, double cov_xy,
                      double cov_yy, double depth, double opacity, double sigma_extent) {
    Splat2D s;
    s.gaussian_index = gaussian_index;
    s.center[0] = cx;
    s.center[1] = cy;
    s.cov[0] = cov_xx;
    s.cov[1] = cov_xy;
    s.cov[2] = cov_yy;
    const double det = cov_xx * cov_yy - cov_xy * cov_xy;
    if (!(det > 0.0) || !(cov_xx > 0.0)) {
        throw NumericalError("screen covariance of Gaussian " + std::to_string(gaussian_index) +
                             " is not positive definite");
    }
    s.conic[0] = cov_yy / det;
    s.conic[1] = -cov_xy / det;
    s.conic[2] = cov_xx / det;
    s.depth = depth;
    s.opacity = opacity;
    s.extent[0] = sigma_extent * std::sqrt(cov_xx);
    s.extent[1] = sigma_extent * std::sqrt(cov_yy);
    return s;
}

Eigen::Matrix2d project_covariance(const Eigen::Matrix3d& cov_cam, const Eigen::Vector3d& mean_cam,
                                   double fx, double fy) {
    const double z = mean_cam.z();
    const double iz = 1.0 / z;
    Eigen::Matrix<double, 2, 3> j;
    j << fx * iz, 0.0, -fx * mean_cam.x() * iz * iz, //
        0.0, fy * iz, -fy * mean_cam.y() * iz * iz;
    return j * cov_cam * j.transpose();
}

std::vector<Splat2D> project(const GaussianScene& scene, const Camera& camera, const RasterConfig& cfg,
                             ProjectionStats* stats) {
    const Eigen::Matrix3d rot = camera.rotation();
    const Eigen::Vector3d trans = camera.translation();
    ProjectionStats local;
    std::vector<Splat2D> out;
    out.reserve(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const Gaussian& g = scene.gaussian(i);
        const Eigen::Vector3d mean_cam = rot * Eigen::Vector3d(g.mean[0], g.mean[1], g.mean[2]) + trans;
        if (mean_cam.z() <= cfg.near_plane) {
            ++local.behind_near_plane;
            continue;
        }
        // cov2d = (J W R S)(J W R S)^T with the scale folded into the rotation columns.
        const double iz = 1.0 / mean_cam.z();
        Eigen::Matrix<double, 2, 3> j;
        j << camera.fx * iz, 0.0, -camera.fx * mean_cam.x() * iz * iz, //
            0.0, camera.fy * iz, -camera.fy * mean_cam.y() * iz * iz;
        const Eigen::Quaterniond q(g.rotation[0], g.rotation[1], g.rotation[2], g.rotation[3]);
        const Eigen::Matrix3d rs =
            q.normalized().toRotationMatrix() * Eigen::Vector3d(g.scale[0], g.scale[1], g.scale[2]).asDiagonal();
        const Eigen::Matrix<double, 2, 3> t = (j * rot) * rs;
        const Eigen::Matrix2d cov2d = t * t.transpose();
        const double u = camera.fx * mean_cam.x() / mean_cam.z() + camera.cx;
        const double v = camera.fy * mean_cam.y() / mean_cam.z() + camera.cy;
        const Splat2D s = Splat2D::make(static_cast<std::uint32_t>(i), u, v, cov2d(0, 0) + cfg.blur,
                                        0.5 * (cov2d(0, 1) + cov2d(1, 0)), cov2d(1, 1) + cfg.blur,
                                        mean_cam.z(), g.opacity, cfg.sigma_extent);
        const PixelRange xs = covered_pixels(s.center[0], s.extent[0], camera.width);
        const PixelRange ys = covered_pixels(s.center[1], s.extent[1], camera.height);
        if (xs.hi < xs.lo || ys.hi < ys.lo) {
            ++local.off_screen;
            continue;
        }
        out.push_back(s);
    }
    if (stats != nullptr) {
        *stats = local;
    }
    return out;
}

TileGrid build_tile_grid(std::span<const Splat2D> splats, std::uint32_t width, std::uint32_t height,
                         std::uint32_t tile_size) {
    if (tile_size == 0) {
        throw ConfigError("tile_size must be >= 1");
    }
    TileGrid grid;
    grid.tile_size = tile_size;
    grid.tiles_x = (width + tile_size - 1) / tile_size;
    grid.tiles_y = (height + tile_size - 1) / tile_size;
    grid.tiles.resize(std::size_t{grid.tiles_x} * grid.tiles_y);

    std::vector<std::pair<double, std::uint32_t>> keys(splats.size());
    for (std::uint32_t i = 0; i < splats.size(); ++i) {
        keys[i] = {splats[i].depth, splats[i].gaussian_index};
    }
    std::vector<std::uint32_t> order(splats.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return keys[a] < keys[b]; });

    struct TileRange {
        std::uint32_t tx0, tx1, ty0, ty1; // inclusive; tx1 < tx0 when uncovered
    };
    std::vector<TileRange> ranges(splats.size());
    std::vector<std::size_t> counts(grid.tiles.size(), 0);
    for (std::size_t i = 0; i < splats.size(); ++i) {
        const Splat2D& s = splats[i];
        const PixelRange xs = covered_pixels(s.center[0], s.extent[0], width);
        const PixelRange ys = covered_pixels(s.center[1], s.extent[1], height);
        if (xs.hi < xs.lo || ys.hi < ys.lo) {
            ranges[i] = {1, 0, 1, 0};
            continue;
        }
        ranges[i] = {static_cast<std::uint32_t>(xs.lo / tile_size), static_cast<std::uint32_t>(xs.hi / tile_size),
                     static_cast<std::uint32_t>(ys.lo / tile_size), static_cast<std::uint32_t>(ys.hi / tile_size)};
        for (std::uint32_t ty = ranges[i].ty0; ty <= ranges[i].ty1; ++ty) {
            for (std::uint32_t tx = ranges[i].tx0; tx <= ranges[i].tx1; ++tx) {
                ++counts[std::size_t{ty} * grid.tiles_x + tx];
            }
        }
    }
    for (std::size_t t = 0; t < grid.tiles.size(); ++t) {
        grid.tiles[t].reserve(counts[t]);
    }
    for (std::uint32_t idx : order) {
        const TileRange& r = ranges[idx];
        for (std::uint32_t ty = r.ty0; ty <= r.ty1; ++ty) {
            for (std::uint32_t tx = r.tx0; tx <= r.tx1; ++tx) {
                grid.tiles[std::size_t{ty} * grid.tiles_x + tx].push_back(idx);
            }
        }
    }
    return grid;
}

RasterPlan make_plan(std::vector<Splat2D> splats, std::uint32_t width, std::uint32_t height,
                     const RasterConfig& cfg) {
    RasterPlan plan;
    plan.width = width;
    plan.height = height;
    plan.splats = std::move(splats);
    plan.grid = build_tile_grid(plan.splats, width, height, cfg.tile_size);
    plan.tile_offsets.assign(plan.grid.tile_count() + 1, 0);
    for (std::size_t t = 0; t < plan.grid.tile_count(); ++t) {
        plan.tile_offsets[t + 1] = plan.tile_offsets[t] + plan.grid.tiles[t].size();
    }
    plan.packed.reserve(plan.tile_offsets.back());
    for (const auto& list : plan.grid.tiles) {
        for (std::uint32_t idx : list) {
            const Splat2D& s = plan.splats[idx];
            plan.packed.push_back({{s.center[0], s.center[1]},
                                   {s.conic[0], s.conic[1], s.conic[2]},
                                   s.opacity,
                                   {s.extent[0], s.extent[1]},
                                   s.gaussian_index});
        }
    }
    return plan;
}

RasterPlan make_plan(const GaussianScene& scene, const Camera& camera, const RasterConfig& cfg) {
    ProjectionStats stats;
    RasterPlan plan = make_plan(project(scene, camera, cfg, &stats), camera.width, camera.height, cfg);
    plan.stats = stats;
    return plan;
}

FeatureImage composite_forward(const RasterPlan& plan, std::span<const double> channels, std::size_t k,
                               const RasterConfig& cfg) {
    check_channels(plan, channels, k);
    FeatureImage img(plan.width, plan.height, static_cast<std::uint32_t>(k));
    switch (k) {
    case 1:
        composite_tiles<1>(plan, channels, 1, cfg, img);
        break;
    case 2:
        composite_tiles<2>(plan, channels, 2, cfg, img);
        break;
    case 3:
        composite_tiles<3>(plan, channels, 3, cfg, img);
        break;
    case 4:
        composite_tiles<4>(plan, channels, 4, cfg, img);
        break;
    default:
        composite_tiles<0>(plan, channels, k, cfg, img);
        break;
    }
    return img;
}

FeatureImage composite_forward(std::span<const Splat2D> splats, std::span<const double> channels,
                               std::size_t k, const Camera& camera, const RasterConfig& cfg) {
    const RasterPlan plan =
        make_plan(std::vector<Splat2D>(splats.begin(), splats.end()), camera.width, camera.height, cfg);
    return composite_forward(plan, channels, k, cfg);
}

std::vector<double> composite_backward(const RasterPlan& plan, std::span<const double> channels,
                                       std::size_t k, std::span<const double> upstream,
                                       const RasterConfig& cfg) {
    check_channels(plan, channels, k);
    if (upstream.size() != std::size_t{plan.width} * plan.height * k) {
        throw ShapeError("upstream gradient has " + std::to_string(upstream.size()) + " values, expected " +
                         std::to_string(std::size_t{plan.width} * plan.height * k));
    }

    // Per-tile partial sums, one k-vector per entry of the tile's splat list.
    std::vector<std::vector<double>> partial(plan.grid.tile_count());
    parallel_for(plan.grid.tile_count(), [&](std::size_t tile) {
        const std::size_t count = plan.tile_offsets[tile + 1] - plan.tile_offsets[tile];
        auto& acc = partial[tile];
        acc.assign(count * k, 0.0);
        std::vector<double> transmittance;
        walk_tile(plan, tile, cfg, transmittance, [&](std::size_t slot, std::size_t p, double w) {
            const double* up = upstream.data() + p * k;
            double* g = acc.data() + slot * k;
            for (std::size_t c = 0; c < k; ++c) {
                g[c] += w * up[c];
            }
        });
    });

    // Tile-major merge keeps the reduction order independent of the worker count.
    std::vector<double> grads(channels.size(), 0.0);
    for (std::size_t tile = 0; tile < plan.grid.tile_count(); ++tile) {
        const PackedSplat* list = plan.packed.data() + plan.tile_offsets[tile];
        const std::size_t count = plan.tile_offsets[tile + 1] - plan.tile_offsets[tile];
        const auto& acc = partial[tile];
        for (std::size_t j = 0; j < count; ++j) {
            double* g = grads.data() + std::size_t{list[j].gaussian_index} * k;
            for (std::size_t c = 0; c < k; ++c) {
                g[c] += acc[j * k + c];
            }
        }
    }
    return grads;
}

std::vector<double> composite_backward(std::span<const Splat2D> splats, std::span<const double> channels,
                                       std::size_t k, const Camera& camera,
                                       std::span<const double> upstream, const RasterConfig& cfg) {
    const RasterPlan plan =
        make_plan(std::vector<Splat2D>(splats.begin(), splats.end()), camera.width, camera.height, cfg);
    return composite_backward(plan, channels, k, upstream, cfg);
}

std::vector<double> level_channels(const GaussianScene& scene, SemanticLevel level) {
    const auto src = scene.latents(level);
    return {src.begin(), src.end()};
}

FeatureImage render_level(const GaussianScene& scene, const Camera& camera, SemanticLevel level,
                          const RasterConfig& cfg) {
    const RasterPlan plan = make_plan(scene, camera, cfg);
    return composite_forward(plan, level_channels(scene, level), scene.latent_dim(), cfg);
}

FeatureImage render_color(const GaussianScene& scene, const Camera& camera, const RasterConfig& cfg) {
    std::vector<double> colors(scene.size() * 3);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            colors[i * 3 + c] = scene.gaussian(i).color[c];
        }
    }
    return composite_forward(make_plan(scene, camera, cfg), colors, 3, cfg);
}

} // namespace langfield
