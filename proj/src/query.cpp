#include "langfield/query.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "langfield/errors.hpp"
#include "langfield/parallel.hpp"

namespace langfield {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

std::vector<double> normalized(std::span<const double> v) {
    const double n = std::sqrt(dot(v, v));
    std::vector<double> out(v.begin(), v.end());
    if (n > 0.0) {
        for (double& x : out) {
            x /= n;
        }
    }
    return out;
}

std::vector<QueryEmbedding> parse_embedding_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    if (!doc.is_array()) {
        throw FormatError(path.string() + ": expected a JSON array");
    }
    std::vector<QueryEmbedding> out;
    for (const auto& j : doc) {
        QueryEmbedding q;
        try {
            q.label = j.at("label").get<std::string>();
            q.vector = j.at("vector").get<std::vector<double>>();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ": " + e.what());
        }
        if (q.vector.empty()) {
            throw FormatError(path.string() + ": empty vector for \"" + q.label + "\"");
        }
        if (!out.empty() && q.vector.size() != out.front().vector.size()) {
            throw FormatError(path.string() + ": vector length differs for \"" + q.label + "\"");
        }
        const double n = std::sqrt(dot(q.vector, q.vector));
        if (!std::isfinite(n) || std::abs(n - 1.0) > 1e-4) {
            throw FormatError(path.string() + ": vector for \"" + q.label + "\" is not unit norm");
        }
        out.push_back(std::move(q));
    }
    return out;
}

void write_embedding_file(std::span<const QueryEmbedding> entries, const std::filesystem::path& path) {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& q : entries) {
        const double n = std::sqrt(dot(q.vector, q.vector));
        if (q.vector.empty() || !std::isfinite(n) || std::abs(n - 1.0) > 1e-4) {
            throw FormatError(path.string() + ": vector for \"" + q.label + "\" is not unit norm");
        }
        std::vector<float> v(q.vector.begin(), q.vector.end());
        doc.push_back({{"label", q.label}, {"vector", v}});
    }
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    out << doc.dump() << '\n';
}

// Separable box sum with replicated edges; every pixel runs the same operation sequence.
std::vector<double> box_mean(const std::vector<double>& src, std::uint32_t w, std::uint32_t h, std::uint32_t size) {
    const std::int64_t lo = -static_cast<std::int64_t>(size / 2);
    const std::int64_t hi = lo + size - 1;
    auto clampi = [](std::int64_t v, std::int64_t n) { return std::clamp<std::int64_t>(v, 0, n - 1); };
    std::vector<double> rows(src.size());
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            double s = 0.0;
            for (std::int64_t o = lo; o <= hi; ++o) {
                s += src[static_cast<std::size_t>(y * w + clampi(x + o, w))];
            }
            rows[static_cast<std::size_t>(y * w + x)] = s;
        }
    }
    std::vector<double> out(src.size());
    const double inv = 1.0 / (static_cast<double>(size) * size);
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            double s = 0.0;
            for (std::int64_t o = lo; o <= hi; ++o) {
                s += rows[static_cast<std::size_t>(clampi(y + o, h) * w + x)];
            }
            out[static_cast<std::size_t>(y * w + x)] = s * inv;
        }
    }
    return out;
}

void check_triple(const MapTriple& maps) {
    for (const RelevancyMap& m : maps) {
        if (m.width != maps[0].width || m.height != maps[0].height ||
            m.values.size() != std::size_t{m.width} * m.height) {
            throw ShapeError("relevancy maps must share one size");
        }
    }
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

} // namespace

std::vector<QueryEmbedding> load_queries(const std::filesystem::path& path) { return parse_embedding_file(path); }

void save_queries(std::span<const QueryEmbedding> queries, const std::filesystem::path& path) {
    write_embedding_file(queries, path);
}

CanonicalSet load_canonical(const std::filesystem::path& path) {
    const auto entries = parse_embedding_file(path);
    if (entries.size() != 4) {
        throw FormatError(path.string() + ": canonical set needs exactly 4 entries, found " +
                          std::to_string(entries.size()));
    }
    CanonicalSet c;
    for (std::size_t i = 0; i < 4; ++i) {
        c.phrases[i] = entries[i].vector;
    }
    return c;
}

void save_canonical(const CanonicalSet& canon, const std::filesystem::path& path) {
    static const char* kNames[4] = {"object", "things", "stuff", "texture"};
    std::vector<QueryEmbedding> entries;
    for (std::size_t i = 0; i < 4; ++i) {
        entries.push_back({kNames[i], canon.phrases[i]});
    }
    write_embedding_file(entries, path);
}

double relevancy(std::span<const double> img, std::span<const double> qry, const CanonicalSet& canon) {
    if (qry.size() != img.size()) {
        throw ShapeError("query and image embedding lengths differ");
    }
    const double q = dot(img, qry);
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& c : canon.phrases) {
        if (c.size() != img.size()) {
            throw ShapeError("canonical and image embedding lengths differ");
        }
        worst = std::max(worst, dot(img, c));
    }
    // Each pairwise term is a 2-way softmax; the minimum belongs to the largest canonical dot.
    return 1.0 / (1.0 + std::exp(worst - q));
}

FeatureImage decode_latents(const FeatureImage& latent, const AutoencoderParams& ae, const QueryConfig& cfg) {
    if (latent.channels != ae.latent_dim) {
        throw ShapeError("latent image has " + std::to_string(latent.channels) + " channels, autoencoder expects " +
                         std::to_string(ae.latent_dim));
    }
    const Eigen::Map<const Eigen::MatrixXd> h(latent.data.data(), latent.channels,
                                              static_cast<Eigen::Index>(latent.pixel_count()));
    FeatureImage out(latent.width, latent.height, ae.input_dim);
    out.alpha = latent.alpha;

    constexpr std::size_t kChunk = 1024;
    const std::size_t n = latent.pixel_count();
    const std::size_t chunks = (n + kChunk - 1) / kChunk;
    parallel_for(chunks, [&](std::size_t ci) {
        const auto begin = static_cast<Eigen::Index>(ci * kChunk);
        const auto count = static_cast<Eigen::Index>(std::min(kChunk, n - ci * kChunk));
        Eigen::MatrixXd dec = decode_batch(ae, h.middleCols(begin, count));
        if (cfg.normalize) {
            for (Eigen::Index c = 0; c < dec.cols(); ++c) {
                const double norm = dec.col(c).norm();
                if (norm > 0.0) {
                    dec.col(c) /= norm;
                }
            }
        }
        std::copy(dec.data(), dec.data() + dec.size(), out.data.begin() + begin * ae.input_dim);
    });
    return out;
}

FeatureImage decode_level(const GaussianScene& scene, const Camera& camera, const AutoencoderParams& ae,
                          SemanticLevel level, const QueryConfig& cfg) {
    if (scene.latent_dim() != ae.latent_dim) {
        throw ShapeError("scene latent_dim " + std::to_string(scene.latent_dim()) + " does not match autoencoder " +
                         std::to_string(ae.latent_dim));
    }
    return decode_latents(render_level(scene, camera, level, cfg.raster), ae, cfg);
}

RelevancyMap relevancy_map(const FeatureImage& decoded, const QueryEmbedding& qry, const CanonicalSet& canon,
                           SemanticLevel level, const QueryConfig& cfg) {
    if (qry.vector.size() != decoded.channels) {
        throw ShapeError("query \"" + qry.label + "\" has dimension " + std::to_string(qry.vector.size()) +
                         ", decoded embeddings have " + std::to_string(decoded.channels));
    }
    CanonicalSet c = canon;
    std::vector<double> q = qry.vector;
    if (cfg.normalize) {
        q = normalized(q);
        for (auto& p : c.phrases) {
            p = normalized(p);
        }
    }
    RelevancyMap map;
    map.width = decoded.width;
    map.height = decoded.height;
    map.level = level;
    map.label = qry.label;
    map.values.resize(decoded.pixel_count());
    for (std::size_t p = 0; p < decoded.pixel_count(); ++p) {
        map.values[p] = relevancy(decoded.pixel(p), q, c);
    }
    return map;
}

MapTriple relevancy_maps(const GaussianScene& scene, const Camera& camera, const AutoencoderParams& ae,
                         const QueryEmbedding& qry, const CanonicalSet& canon, const QueryConfig& cfg) {
    MapTriple out;
    for (SemanticLevel l : kLevels) {
        out[level_index(l)] = relevancy_map(decode_level(scene, camera, ae, l, cfg), qry, canon, l, cfg);
    }
    return out;
}

RelevancyMap smooth(const RelevancyMap& map, std::uint32_t size) {
    if (size < 1) {
        throw ConfigError("smoothing size must be >= 1");
    }
    RelevancyMap out = map;
    if (size == 1 || map.values.empty()) {
        return out;
    }
    out.values = box_mean(map.values, map.width, map.height, size);
    return out;
}

Localization localize(const MapTriple& maps, std::uint32_t smooth_size) {
    check_triple(maps);
    Localization best;
    bool found = false;
    for (SemanticLevel l : kLevels) {
        const RelevancyMap s = smooth(maps[level_index(l)], smooth_size);
        for (std::uint32_t y = 0; y < s.height; ++y) {
            for (std::uint32_t x = 0; x < s.width; ++x) {
                const double v = s.at(x, y);
                if (!found || v > best.score) {
                    best = {x, y, l, v};
                    found = true;
                }
            }
        }
    }
    return best;
}

SegmentResult segment_lerf(const MapTriple& maps, double threshold, std::uint32_t smooth_size) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw ConfigError("segmentation threshold must lie in (0, 1)");
    }
    check_triple(maps);
    SegmentResult out;
    out.width = maps[0].width;
    out.height = maps[0].height;
    out.mask.assign(maps[0].values.size(), 0);
    if (maps[0].values.empty()) {
        return out;
    }

    std::array<RelevancyMap, 3> smoothed;
    std::size_t chosen = 0;
    double chosen_max = -std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < 3; ++l) {
        smoothed[l] = smooth(maps[l], smooth_size);
        const double m = *std::max_element(smoothed[l].values.begin(), smoothed[l].values.end());
        if (m > chosen_max) {
            chosen_max = m;
            chosen = l;
        }
    }
    out.level = kLevels[chosen];
    const auto& v = smoothed[chosen].values;
    const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    const double range = *mx - *mn;
    if (!(range > 0.0)) {
        return out;
    }
    for (std::size_t p = 0; p < v.size(); ++p) {
        out.mask[p] = (v[p] - *mn) / range >= threshold ? 1 : 0;
    }
    return out;
}

SegmentResult segment_ovs(const MapTriple& maps, double threshold) {
    check_triple(maps);
    SegmentResult out;
    out.width = maps[0].width;
    out.height = maps[0].height;
    out.mask.assign(maps[0].values.size(), 0);

    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < 3; ++l) {
        const auto& v = maps[l].values;
        double sum = 0.0;
        std::size_t count = 0;
        for (double x : v) {
            if (x >= threshold) {
                sum += x;
                ++count;
            }
        }
        const double mean = count == 0 ? -std::numeric_limits<double>::infinity() : sum / static_cast<double>(count);
        if (count > 0 && mean > best) {
            best = mean;
            out.level = kLevels[l];
        }
    }
    if (out.level) {
        const auto& v = maps[level_index(*out.level)].values;
        for (std::size_t p = 0; p < v.size(); ++p) {
            out.mask[p] = v[p] >= threshold ? 1 : 0;
        }
    }
    return out;
}

std::vector<std::uint8_t> latent_to_rgb(const FeatureImage& latent) {
    if (latent.channels != 3) {
        throw ConfigError("latent visualization needs exactly 3 channels, got " + std::to_string(latent.channels));
    }
    const std::size_t n = latent.pixel_count();
    std::vector<std::uint8_t> rgb(n * 3);
    for (std::size_t c = 0; c < 3; ++c) {
        double mn = std::numeric_limits<double>::infinity();
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t p = 0; p < n; ++p) {
            mn = std::min(mn, latent.data[p * 3 + c]);
            mx = std::max(mx, latent.data[p * 3 + c]);
        }
        const double range = mx - mn;
        for (std::size_t p = 0; p < n; ++p) {
            const double v = range > 0.0 ? (latent.data[p * 3 + c] - mn) / range : 0.5;
            rgb[p * 3 + c] = to_byte(v);
        }
    }
    return rgb;
}

std::vector<std::uint8_t> viz_latent(const GaussianScene& scene, const Camera& camera, SemanticLevel level,
                                     const RasterConfig& cfg) {
    if (scene.latent_dim() != 3) {
        throw ConfigError("latent visualization is only supported for latent_dim = 3");
    }
    return latent_to_rgb(render_level(scene, camera, level, cfg));
}

std::vector<std::uint8_t> heatmap_rgb(const RelevancyMap& map) {
    std::vector<std::uint8_t> rgb(map.values.size() * 3);
    for (std::size_t p = 0; p < map.values.size(); ++p) {
        const double t = std::clamp(map.values[p], 0.0, 1.0);
        // blue -> cyan -> yellow -> red
        const double r = std::clamp(2.0 * t - 0.5, 0.0, 1.0);
        const double g = std::clamp(1.5 - std::abs(4.0 * t - 2.0), 0.0, 1.0);
        const double b = std::clamp(1.5 - 2.0 * t, 0.0, 1.0);
        rgb[p * 3] = to_byte(r);
        rgb[p * 3 + 1] = to_byte(g);
        rgb[p * 3 + 2] = to_byte(b);
    }
    return rgb;
}

SegmentResult segment(const MapTriple& maps, const ProtocolConfig& cfg) {
    if (cfg.protocol == SegmentProtocol::lerf) {
        return segment_lerf(maps, cfg.lerf_threshold, cfg.smooth_size);
    }
    return segment_ovs(maps, cfg.ovs_threshold);
}

} // namespace langfield
