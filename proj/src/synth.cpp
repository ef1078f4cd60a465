#include "langfield/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <Eigen/Geometry>

#include "json.hpp"
#include "langfield/dataset.hpp"
#include "langfield/errors.hpp"
#include "langfield/eval.hpp"
#include "langfield/png_io.hpp"

namespace langfield {

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

// Unit quaternion (w, x, y, z) turning +z onto the unit vector n.
std::array<float, 4> rotation_to(const Eigen::Vector3d& n) {
    const Eigen::Quaterniond q = Eigen::Quaterniond::FromTwoVectors(Eigen::Vector3d::UnitZ(), n);
    return {static_cast<float>(q.w()), static_cast<float>(q.x()), static_cast<float>(q.y()), static_cast<float>(q.z())};
}

std::vector<double> random_unit(Rng& rng, std::uint32_t dim) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> v(dim);
    double norm = 0.0;
    for (double& x : v) {
        x = n(rng);
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v) {
        x /= norm;
    }
    return v;
}

std::vector<double> combine(std::initializer_list<std::pair<double, const std::vector<double>*>> terms) {
    std::vector<double> out(terms.begin()->second->size(), 0.0);
    for (const auto& [w, v] : terms) {
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] += w * (*v)[i];
        }
    }
    double norm = 0.0;
    for (double x : out) {
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : out) {
        x /= norm;
    }
    return out;
}

std::array<float, 3> hue_color(double h) {
    const double r = 0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * h);
    const double g = 0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * (h - 1.0 / 3.0));
    const double b = 0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * (h - 2.0 / 3.0));
    return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

std::vector<std::uint8_t> dilate(const std::vector<std::uint8_t>& m, std::uint32_t w, std::uint32_t h) {
    std::vector<std::uint8_t> out = m;
    for (std::uint32_t y = 0; y < h; ++y) {
        for (std::uint32_t x = 0; x < w; ++x) {
            if (m[std::size_t{y} * w + x] == 0) {
                continue;
            }
            if (x > 0) out[std::size_t{y} * w + x - 1] = 1;
            if (x + 1 < w) out[std::size_t{y} * w + x + 1] = 1;
            if (y > 0) out[std::size_t{y - 1} * w + x] = 1;
            if (y + 1 < h) out[std::size_t{y + 1} * w + x] = 1;
        }
    }
    return out;
}

std::vector<std::uint8_t> random_rect(Rng& rng, std::uint32_t w, std::uint32_t h) {
    std::vector<std::uint8_t> m(std::size_t{w} * h, 0);
    const auto rw = static_cast<std::uint32_t>(uniform(rng, 0.08, 0.3) * w) + 1;
    const auto rh = static_cast<std::uint32_t>(uniform(rng, 0.08, 0.3) * h) + 1;
    const auto x0 = static_cast<std::uint32_t>(uniform(rng, 0.0, 1.0) * (w - std::min(rw, w)));
    const auto y0 = static_cast<std::uint32_t>(uniform(rng, 0.0, 1.0) * (h - std::min(rh, h)));
    for (std::uint32_t y = y0; y < std::min(h, y0 + rh); ++y) {
        for (std::uint32_t x = x0; x < std::min(w, x0 + rw); ++x) {
            m[std::size_t{y} * w + x] = 1;
        }
    }
    return m;
}

} // namespace

std::uint32_t region_of(const GaussianLabel& label, SemanticLevel level) {
    if (label.object == 0) {
        return 0;
    }
    const std::uint32_t o = label.object - 1u;
    switch (level) {
    case SemanticLevel::whole:
        return label.object;
    case SemanticLevel::part:
        return 1 + o * 2 + label.part;
    case SemanticLevel::subpart:
        return 1 + o * 4 + label.subpart;
    }
    return 0;
}

std::uint32_t region_count(std::uint32_t num_objects, SemanticLevel level) {
    switch (level) {
    case SemanticLevel::whole:
        return 1 + num_objects;
    case SemanticLevel::part:
        return 1 + 2 * num_objects;
    case SemanticLevel::subpart:
        return 1 + 4 * num_objects;
    }
    return 0;
}

SyntheticScene synth_scene(const SyntheticSceneSpec& spec) {
    if (spec.num_gaussians == 0) {
        throw ConfigError("synthetic scene needs at least one Gaussian");
    }
    if (spec.num_objects == 0) {
        throw ConfigError("synthetic scene needs at least one object");
    }
    if (spec.latent_dim == 0) {
        throw ConfigError("latent_dim must be >= 1");
    }
    Rng rng(spec.seed);

    const std::uint32_t n_back = spec.backdrop ? static_cast<std::uint32_t>(std::lround(spec.num_gaussians * 0.4)) : 0;
    const std::uint32_t n_obj_total = spec.num_gaussians - n_back;

    std::vector<Gaussian> gaussians;
    std::vector<GaussianLabel> labels;
    gaussians.reserve(spec.num_gaussians);
    labels.reserve(spec.num_gaussians);

    const double r = spec.object_radius;
    for (std::uint32_t o = 0; o < spec.num_objects; ++o) {
        const double theta = std::numbers::pi / 2 + 2.0 * std::numbers::pi * o / spec.num_objects;
        const double lr = spec.num_objects == 1 ? 0.0 : spec.layout_radius;
        const Eigen::Vector3d center(lr * std::cos(theta), lr * std::sin(theta), 0.0);
        const double phi = uniform(rng, 0.0, std::numbers::pi);
        const Eigen::Vector3d axis_a(std::cos(phi), std::sin(phi), 0.0);
        const Eigen::Vector3d axis_b(-std::sin(phi), std::cos(phi), 0.0);
        const auto color = hue_color(static_cast<double>(o) / spec.num_objects);

        const std::uint32_t count = n_obj_total / spec.num_objects + (o < n_obj_total % spec.num_objects ? 1 : 0);
        // Tangent discs on a Fibonacci lattice over the sphere surface.
        const double spacing = std::sqrt(4.0 * std::numbers::pi * r * r / std::max(count, 1u));
        const double offset = uniform(rng, 0.0, 1.0);
        for (std::uint32_t i = 0; i < count; ++i) {
            const double zc = 1.0 - 2.0 * (i + 0.5) / count;
            const double ring = std::sqrt(std::max(0.0, 1.0 - zc * zc));
            const double az = 2.0 * std::numbers::pi * (i * 0.6180339887498949 + offset);
            const Eigen::Vector3d n(ring * std::cos(az), ring * std::sin(az), zc);
            const Eigen::Vector3d p = r * n;
            Gaussian g;
            for (int c = 0; c < 3; ++c) {
                g.mean[c] = static_cast<float>(center[c] + p[c]);
            }
            const double tangent = 0.6 * spacing * uniform(rng, 0.9, 1.1);
            g.scale = {static_cast<float>(tangent), static_cast<float>(tangent), static_cast<float>(0.08 * tangent)};
            g.rotation = rotation_to(n);
            g.opacity = static_cast<float>(uniform(rng, 0.85, 0.99));
            g.color = color;
            gaussians.push_back(g);

            GaussianLabel lab;
            lab.object = static_cast<std::uint16_t>(o + 1);
            lab.part = p.dot(axis_a) >= 0.0 ? 1 : 0;
            lab.subpart = static_cast<std::uint8_t>(lab.part * 2 + (p.dot(axis_b) >= 0.0 ? 1 : 0));
            labels.push_back(lab);
        }
    }

    if (n_back > 0) {
        const double wall_w = 15.0;
        const double wall_h = 13.0;
        const double wall_z = -2.2;
        const auto cols = static_cast<std::uint32_t>(std::ceil(std::sqrt(n_back * wall_w / wall_h)));
        const std::uint32_t rows = (n_back + cols - 1) / cols;
        const double sx = wall_w / cols;
        const double sy = wall_h / rows;
        for (std::uint32_t i = 0; i < n_back; ++i) {
            const std::uint32_t cx = i % cols;
            const std::uint32_t cy = i / cols;
            Gaussian g;
            g.mean = {static_cast<float>(-wall_w / 2 + (cx + 0.5) * sx), static_cast<float>(-wall_h / 2 + (cy + 0.5) * sy),
                      static_cast<float>(wall_z + uniform(rng, -0.02, 0.02))};
            g.scale = {static_cast<float>(0.6 * sx), static_cast<float>(0.6 * sy), 0.03f};
            g.rotation = {1.0f, 0.0f, 0.0f, 0.0f};
            g.opacity = 0.95f;
            const float shade = static_cast<float>(uniform(rng, 0.4, 0.6));
            g.color = {shade, shade, shade};
            gaussians.push_back(g);
            labels.push_back(GaussianLabel{});
        }
    }

    SyntheticScene out;
    out.num_objects = spec.num_objects;
    out.labels = std::move(labels);
    out.scene = GaussianScene(std::move(gaussians), spec.latent_dim);

    if (spec.plant_latents) {
        for (SemanticLevel l : kLevels) {
            std::vector<std::vector<float>> region_latent(region_count(spec.num_objects, l));
            for (auto& v : region_latent) {
                v.resize(spec.latent_dim);
                for (float& x : v) {
                    x = static_cast<float>(uniform(rng, -1.0, 1.0));
                }
            }
            for (std::size_t i = 0; i < out.scene.size(); ++i) {
                const auto& v = region_latent[region_of(out.labels[i], l)];
                std::copy(v.begin(), v.end(), out.scene.latent(l, i).begin());
            }
        }
    }

    for (std::uint32_t v = 0; v < spec.num_views; ++v) {
        const double t = spec.num_views == 1 ? 0.5 : static_cast<double>(v) / (spec.num_views - 1);
        const double az = (-30.0 + 60.0 * t) * std::numbers::pi / 180.0;
        const double el = (v % 2 == 0 ? -8.0 : 12.0) * std::numbers::pi / 180.0;
        const Eigen::Vector3d eye = spec.camera_distance *
                                    Eigen::Vector3d(std::sin(az) * std::cos(el), std::sin(el), std::cos(az) * std::cos(el));
        char id[32];
        std::snprintf(id, sizeof(id), "view_%03u", v);
        out.cameras.push_back(look_at_camera(id, spec.width, spec.height, spec.focal, eye, Eigen::Vector3d::Zero()));
    }
    out.scene.validate();
    return out;
}

std::vector<std::uint16_t> planted_label_image(const SyntheticScene& synth, const Camera& camera, SemanticLevel level,
                                               const RasterConfig& cfg) {
    const std::uint32_t regions = region_count(synth.num_objects, level);
    std::vector<double> onehot(synth.scene.size() * regions, 0.0);
    for (std::size_t i = 0; i < synth.scene.size(); ++i) {
        onehot[i * regions + region_of(synth.labels[i], level)] = 1.0;
    }
    const FeatureImage img = composite_forward(make_plan(synth.scene, camera, cfg), onehot, regions, cfg);
    std::vector<std::uint16_t> out(img.pixel_count(), 0);
    for (std::size_t p = 0; p < img.pixel_count(); ++p) {
        if (img.alpha[p] < 0.5) {
            continue;
        }
        const auto px = img.pixel(p);
        const auto it = std::max_element(px.begin(), px.end());
        out[p] = static_cast<std::uint16_t>(std::distance(px.begin(), it) + 1);
    }
    return out;
}

SyntheticEmbeddings synth_embeddings(std::uint32_t num_objects, std::uint32_t dim, std::uint64_t seed) {
    Rng rng(seed ^ 0x5eed5eed5eedULL);
    SyntheticEmbeddings out;
    out.dim = dim;
    const std::vector<double> common = random_unit(rng, dim);

    std::vector<std::vector<double>> identity(num_objects + 1);
    for (auto& u : identity) {
        u = random_unit(rng, dim);
    }
    auto& whole = out.regions[level_index(SemanticLevel::whole)];
    auto& part = out.regions[level_index(SemanticLevel::part)];
    auto& subpart = out.regions[level_index(SemanticLevel::subpart)];
    for (std::uint32_t o = 0; o <= num_objects; ++o) {
        whole.push_back(combine({{1.0, &common}, {1.0, &identity[o]}}));
    }
    part.push_back(whole[0]);
    subpart.push_back(whole[0]);
    for (std::uint32_t o = 1; o <= num_objects; ++o) {
        for (int p = 0; p < 2; ++p) {
            const auto v = random_unit(rng, dim);
            part.push_back(combine({{1.0, &common}, {0.5, &identity[o]}, {1.0, &v}}));
        }
        for (int s = 0; s < 4; ++s) {
            const auto v = random_unit(rng, dim);
            subpart.push_back(combine({{1.0, &common}, {0.25, &identity[o]}, {1.0, &v}}));
        }
    }
    for (std::uint32_t o = 1; o <= num_objects; ++o) {
        const auto n = random_unit(rng, dim);
        out.queries.push_back({"object_" + std::to_string(o), combine({{1.0, &identity[o]}, {0.1, &common}, {0.05, &n}})});
    }
    for (auto& c : out.canonical.phrases) {
        const auto n = random_unit(rng, dim);
        c = combine({{1.0, &common}, {0.2, &n}});
    }
    return out;
}

void save_gaussian_labels(const std::vector<GaussianLabel>& labels, const std::filesystem::path& path) {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& l : labels) {
        doc.push_back({l.object, l.part, l.subpart});
    }
    std::ofstream out(path);
    out << doc.dump() << '\n';
}

std::vector<GaussianLabel> load_gaussian_labels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    std::vector<GaussianLabel> out;
    try {
        for (const auto& j : nlohmann::json::parse(in)) {
            out.push_back({j.at(0).get<std::uint16_t>(), j.at(1).get<std::uint8_t>(), j.at(2).get<std::uint8_t>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return out;
}

void write_synthetic_dataset(const SyntheticDatasetSpec& spec, const std::filesystem::path& root) {
    const DatasetLayout layout{root};
    std::filesystem::create_directories(root);
    const SyntheticScene synth = synth_scene(spec.scene);
    const SyntheticEmbeddings emb = synth_embeddings(synth.num_objects, spec.embedding_dim, spec.scene.seed);
    Rng rng(spec.scene.seed ^ 0xda7a5e7ULL);

    save_scene(synth.scene, layout.scene());
    save_cameras(synth.cameras, layout.cameras());
    save_gaussian_labels(synth.labels, layout.gaussian_labels());
    save_queries(emb.queries, layout.queries());
    save_canonical(emb.canonical, layout.canonical());

    SceneAnnotations ann;
    ann.scene = "synthetic";
    for (const Camera& cam : synth.cameras) {
        const std::uint32_t w = cam.width;
        const std::uint32_t h = cam.height;
        for (SemanticLevel level : kLevels) {
            const auto labels = planted_label_image(synth, cam, level);
            const std::uint32_t regions = region_count(synth.num_objects, level);

            RawMaskSet raw;
            raw.image_id = cam.id;
            raw.level = level;
            raw.width = w;
            raw.height = h;
            for (std::uint32_t r = 0; r < regions; ++r) {
                RawMask m;
                m.bitmap.assign(labels.size(), 0);
                for (std::size_t p = 0; p < labels.size(); ++p) {
                    m.bitmap[p] = labels[p] == r + 1 ? 1 : 0;
                }
                if (m.area() < 16) {
                    continue;
                }
                m.predicted_iou = uniform(rng, 0.88, 1.0);
                m.stability = uniform(rng, 0.9, 1.0);
                RawMask dup{dilate(m.bitmap, w, h), m.predicted_iou - 0.03, m.stability};
                raw.masks.push_back(std::move(m));
                raw.masks.push_back(std::move(dup));
            }
            raw.masks.push_back({random_rect(rng, w, h), uniform(rng, 0.3, 0.65), uniform(rng, 0.9, 1.0)});
            raw.masks.push_back({random_rect(rng, w, h), uniform(rng, 0.8, 1.0), uniform(rng, 0.3, 0.8)});
            write_raw_mask_set(raw, layout.raw_masks(cam.id, level));

            const RawMaskSet filtered = filter_masks(raw);
            const BuiltSegmentation built = build_segmentation_map(filtered);
            write_segmentation_map(built.map, layout.seg_map(cam.id, level));

            MaskEmbeddingTable table;
            table.image_id = cam.id;
            table.level = level;
            table.dim = spec.embedding_dim;
            for (std::size_t id = 1; id <= built.map.mask_count; ++id) {
                const auto& bitmap = filtered.masks[built.source_mask[id - 1]].bitmap;
                std::vector<std::size_t> votes(regions + 1, 0);
                for (std::size_t p = 0; p < bitmap.size(); ++p) {
                    if (bitmap[p] != 0) {
                        ++votes[labels[p]];
                    }
                }
                votes[0] = 0;
                const auto best = std::max_element(votes.begin(), votes.end());
                const std::size_t region = *best == 0 ? 0 : static_cast<std::size_t>(std::distance(votes.begin(), best)) - 1;
                const auto noise = random_unit(rng, spec.embedding_dim);
                const auto row = combine({{1.0, &emb.regions[level_index(level)][region]}, {spec.mask_noise, &noise}});
                table.rows.insert(table.rows.end(), row.begin(), row.end());
            }
            write_lemb(table, layout.embeddings(cam.id, level));

            if (level == SemanticLevel::whole) {
                ViewAnnotation view;
                view.image_id = cam.id;
                for (std::uint32_t o = 1; o <= synth.num_objects; ++o) {
                    std::vector<std::uint8_t> mask(labels.size(), 0);
                    BBox box{static_cast<std::int64_t>(w), static_cast<std::int64_t>(h), -1, -1};
                    std::size_t count = 0;
                    for (std::uint32_t y = 0; y < h; ++y) {
                        for (std::uint32_t x = 0; x < w; ++x) {
                            if (labels[std::size_t{y} * w + x] != o + 1) {
                                continue;
                            }
                            mask[std::size_t{y} * w + x] = 1;
                            ++count;
                            box.x0 = std::min<std::int64_t>(box.x0, x);
                            box.y0 = std::min<std::int64_t>(box.y0, y);
                            box.x1 = std::max<std::int64_t>(box.x1, x);
                            box.y1 = std::max<std::int64_t>(box.y1, y);
                        }
                    }
                    if (count < 50) {
                        continue;
                    }
                    const std::string label = "object_" + std::to_string(o);
                    const std::filesystem::path rel = std::filesystem::path("gt") / (cam.id + "_" + label + ".png");
                    png::write_mask1(root / rel, w, h, mask);
                    view.queries.push_back({label, box, rel});
                }
                ann.views.push_back(std::move(view));
            }
        }
    }
    save_annotations(ann, layout.annotations());
}

} // namespace langfield
