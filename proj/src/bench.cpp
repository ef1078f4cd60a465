#include "langfield/bench.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "langfield/errors.hpp"
#include "langfield/parallel.hpp"
#include "langfield/rasterizer.hpp"

namespace langfield {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::uint64_t digest_image(const FeatureImage& img, std::uint64_t h) {
    for (double v : img.data) {
        const auto bits = std::bit_cast<std::array<std::uint8_t, sizeof(double)>>(v);
        h = fnv1a(bits, h);
    }
    return h;
}

void open_for_write(const std::filesystem::path& path, std::ofstream& out) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    out.open(path);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
}

} // namespace

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

ChannelScaling measure_channel_scaling(const GaussianScene& scene, const AutoencoderParams& ae, const Camera& camera,
                                       std::uint32_t repeats, const RasterConfig& raster) {
    if (repeats == 0) {
        throw ConfigError("bench repeats must be >= 1");
    }
    if (ae.latent_dim != scene.latent_dim()) {
        throw ShapeError("autoencoder latent_dim does not match the scene");
    }
    const std::vector<double> latent = level_channels(scene, SemanticLevel::whole);
    const std::size_t n = scene.size();
    const std::size_t d = scene.latent_dim();

    Eigen::MatrixXd h(d, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
            h(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(i)) = latent[i * d + c];
        }
    }
    // Column-major D x N is already one contiguous D-vector per Gaussian.
    const Eigen::MatrixXd decoded = decode_batch(ae, h);
    const std::vector<double> wide(decoded.data(), decoded.data() + decoded.size());

    auto render = [&](const std::vector<double>& channels, std::size_t k) {
        const auto t0 = Clock::now();
        const RasterPlan plan = make_plan(scene, camera, raster);
        const FeatureImage img = composite_forward(plan, channels, k, raster);
        const double dt = seconds_since(t0);
        if (img.data.empty()) {
            throw ShapeError("empty render");
        }
        return dt;
    };

    ChannelScaling out;
    out.image_id = camera.id;
    out.latent_channels = static_cast<std::uint32_t>(d);
    out.wide_channels = ae.input_dim;
    out.threads = worker_count();
    out.latent_seconds = std::numeric_limits<double>::infinity();
    out.wide_seconds = std::numeric_limits<double>::infinity();
    render(latent, d);
    render(wide, ae.input_dim);
    // Interleaved so slow drifts in machine load hit both sides alike.
    for (std::uint32_t r = 0; r < repeats; ++r) {
        out.latent_seconds = std::min(out.latent_seconds, render(latent, d));
        out.wide_seconds = std::min(out.wide_seconds, render(wide, ae.input_dim));
    }
    out.ratio = out.wide_seconds / out.latent_seconds;
    return out;
}

BenchReport benchmark_query(const GaussianScene& scene, const AutoencoderParams& ae,
                            std::span<const QueryEmbedding> queries, const CanonicalSet& canon,
                            std::span<const Camera> cameras, const BenchConfig& cfg) {
    if (cameras.empty()) {
        throw ConfigError("bench needs at least one camera");
    }
    if (cfg.scaling_camera >= cameras.size()) {
        throw ConfigError("scaling camera index out of range");
    }
    BenchReport report;
    const auto loop_start = Clock::now();
    for (const Camera& cam : cameras) {
        for (const QueryEmbedding& q : queries) {
            QueryTiming t;
            t.image_id = cam.id;
            t.label = q.label;
            BenchOutputs::Entry e;
            e.image_id = cam.id;
            e.label = q.label;

            auto t0 = Clock::now();
            std::array<FeatureImage, 3> latents;
            for (SemanticLevel l : kLevels) {
                latents[level_index(l)] = render_level(scene, cam, l, cfg.query.raster);
            }
            t.render = seconds_since(t0);

            t0 = Clock::now();
            std::array<FeatureImage, 3> decoded;
            for (SemanticLevel l : kLevels) {
                decoded[level_index(l)] = decode_latents(latents[level_index(l)], ae, cfg.query);
            }
            t.decode = seconds_since(t0);

            t0 = Clock::now();
            MapTriple maps;
            for (SemanticLevel l : kLevels) {
                maps[level_index(l)] = relevancy_map(decoded[level_index(l)], q, canon, l, cfg.query);
            }
            e.location = localize(maps, cfg.protocol.smooth_size);
            const SegmentResult seg = segment(maps, cfg.protocol);
            t.protocol = seconds_since(t0);
            t.total = t.render + t.decode + t.protocol;

            e.mask_pixels = static_cast<std::uint64_t>(std::count(seg.mask.begin(), seg.mask.end(), 1));
            e.segment_level = seg.level ? static_cast<int>(level_index(*seg.level)) : -1;
            std::uint64_t h = 0xcbf29ce484222325ULL;
            for (const FeatureImage& img : latents) {
                h = digest_image(img, h);
            }
            e.render_digest = h;

            report.render_seconds += t.render;
            report.decode_seconds += t.decode;
            report.protocol_seconds += t.protocol;
            report.queries.push_back(std::move(t));
            report.outputs.entries.push_back(std::move(e));
        }
    }
    report.total_seconds = seconds_since(loop_start);
    if (!report.queries.empty()) {
        report.seconds_per_query = report.total_seconds / static_cast<double>(report.queries.size());
    }
    report.scaling = measure_channel_scaling(scene, ae, cameras[cfg.scaling_camera], cfg.repeats, cfg.query.raster);
    return report;
}

void write_bench_outputs(const BenchOutputs& outputs, const std::filesystem::path& path) {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& e : outputs.entries) {
        doc.push_back({{"image_id", e.image_id},
                       {"label", e.label},
                       {"localize", {{"x", e.location.x}, {"y", e.location.y},
                                     {"level", level_name(e.location.level)}, {"score", e.location.score}}},
                       {"segment_level", e.segment_level},
                       {"mask_pixels", e.mask_pixels},
                       {"render_digest", e.render_digest}});
    }
    std::ofstream out;
    open_for_write(path, out);
    out << doc.dump(2) << '\n';
}

void write_bench_timing(const BenchReport& report, const std::filesystem::path& path) {
    nlohmann::json doc;
    doc["total_seconds"] = report.total_seconds;
    doc["seconds_per_query"] = report.seconds_per_query;
    doc["render_seconds"] = report.render_seconds;
    doc["decode_seconds"] = report.decode_seconds;
    doc["protocol_seconds"] = report.protocol_seconds;
    doc["queries"] = nlohmann::json::array();
    for (const auto& q : report.queries) {
        doc["queries"].push_back({{"image_id", q.image_id},
                                  {"label", q.label},
                                  {"render", q.render},
                                  {"decode", q.decode},
                                  {"protocol", q.protocol},
                                  {"total", q.total}});
    }
    const ChannelScaling& s = report.scaling;
    doc["channel_scaling"] = {{"image_id", s.image_id},
                              {"latent_channels", s.latent_channels},
                              {"wide_channels", s.wide_channels},
                              {"latent_seconds", s.latent_seconds},
                              {"wide_seconds", s.wide_seconds},
                              {"ratio", s.ratio},
                              {"threads", s.threads}};
    std::ofstream out;
    open_for_write(path, out);
    out << doc.dump(2) << '\n';
}

} // namespace langfield
