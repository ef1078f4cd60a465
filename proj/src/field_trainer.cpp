#include "langfield/field_trainer.hpp"

#include <cmath>
#include <random>
#include <string>

#include "langfield/errors.hpp"
#include "langfield/log.hpp"

namespace langfield {

void TrainingView::validate(std::uint32_t latent_dim) const {
    camera.validate();
    for (SemanticLevel l : kLevels) {
        const LevelTarget& t = level(l);
        if (t.latent.width != camera.width || t.latent.height != camera.height) {
            throw ShapeError("target for camera " + camera.id + " (" + std::string(level_name(l)) +
                             ") does not match the camera size");
        }
        if (t.latent.channels != latent_dim) {
            throw ShapeError("target for camera " + camera.id + " has " + std::to_string(t.latent.channels) +
                             " channels but the scene latent_dim is " + std::to_string(latent_dim));
        }
        if (t.valid.size() != camera.pixel_count()) {
            throw ShapeError("validity mask for camera " + camera.id + " has the wrong size");
        }
        for (std::size_t p = 0; p < t.valid.size(); ++p) {
            if (t.valid[p] == 0) {
                continue;
            }
            for (double v : t.latent.pixel(p)) {
                if (!std::isfinite(v)) {
                    throw NumericalError("non-finite target on camera " + camera.id);
                }
            }
        }
    }
}

TrainingView make_training_view(const Camera& camera, const std::array<SegmentationMap, 3>& segs,
                                const std::array<MaskEmbeddingTable, 3>& tables, const AutoencoderParams& ae) {
    TrainingView view;
    view.camera = camera;
    for (SemanticLevel l : kLevels) {
        const SegmentationMap& seg = segs[level_index(l)];
        const MaskEmbeddingTable& table = tables[level_index(l)];
        if (seg.width != camera.width || seg.height != camera.height) {
            throw ShapeError("segmentation map " + seg.image_id + " does not match camera " + camera.id);
        }
        if (table.mask_count() > 0 && table.dim != ae.input_dim) {
            throw ShapeError("embedding table " + table.image_id + " has dim " + std::to_string(table.dim) +
                             " but the autoencoder expects " + std::to_string(ae.input_dim));
        }
        check_consistency(seg, table);

        const std::size_t k = table.mask_count();
        Eigen::MatrixXd rows(ae.input_dim, static_cast<Eigen::Index>(k));
        for (std::size_t r = 0; r < k; ++r) {
            for (std::size_t c = 0; c < ae.input_dim; ++c) {
                rows(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(r)) = table.rows[r * table.dim + c];
            }
        }
        const Eigen::MatrixXd latents = k > 0 ? encode_batch(ae, rows) : Eigen::MatrixXd(ae.latent_dim, 0);

        LevelTarget& t = view.levels[level_index(l)];
        t.latent = FeatureImage(camera.width, camera.height, ae.latent_dim);
        t.valid.assign(camera.pixel_count(), 0);
        for (std::size_t p = 0; p < seg.labels.size(); ++p) {
            const std::uint16_t id = seg.labels[p];
            if (id == 0) {
                continue;
            }
            t.valid[p] = 1;
            for (std::size_t c = 0; c < ae.latent_dim; ++c) {
                t.latent.data[p * ae.latent_dim + c] = latents(static_cast<Eigen::Index>(c), id - 1);
            }
        }
        std::fill(t.latent.alpha.begin(), t.latent.alpha.end(), 1.0);
    }
    return view;
}

void write_training_view(const TrainingView& view, const std::filesystem::path& dir) {
    for (SemanticLevel l : kLevels) {
        const LevelTarget& t = view.level(l);
        const std::uint32_t d = t.latent.channels;
        FeatureImage packed(t.latent.width, t.latent.height, d + 1);
        for (std::size_t p = 0; p < t.latent.pixel_count(); ++p) {
            for (std::size_t c = 0; c < d; ++c) {
                packed.data[p * (d + 1) + c] = t.latent.data[p * d + c];
            }
            packed.data[p * (d + 1) + d] = t.valid[p] != 0 ? 1.0 : 0.0;
        }
        write_lfim(packed, dir / (view.camera.id + "_" + std::string(level_name(l)) + ".lfim"));
    }
}

TrainingView read_training_view(const Camera& camera, const std::filesystem::path& dir) {
    TrainingView view;
    view.camera = camera;
    for (SemanticLevel l : kLevels) {
        const FeatureImage packed = read_lfim(dir / (camera.id + "_" + std::string(level_name(l)) + ".lfim"));
        if (packed.channels < 2) {
            throw FormatError("target file for " + camera.id + " needs at least 2 channels");
        }
        const std::uint32_t d = packed.channels - 1;
        LevelTarget& t = view.levels[level_index(l)];
        t.latent = FeatureImage(packed.width, packed.height, d);
        t.valid.assign(packed.pixel_count(), 0);
        for (std::size_t p = 0; p < packed.pixel_count(); ++p) {
            for (std::size_t c = 0; c < d; ++c) {
                t.latent.data[p * d + c] = packed.data[p * (d + 1) + c];
            }
            t.valid[p] = packed.data[p * (d + 1) + d] > 0.5 ? 1 : 0;
        }
        std::fill(t.latent.alpha.begin(), t.latent.alpha.end(), 1.0);
    }
    return view;
}

LangLoss lang_loss(const FeatureImage& rendered, const LevelTarget& target, LangDistance distance) {
    if (rendered.width != target.latent.width || rendered.height != target.latent.height ||
        rendered.channels != target.latent.channels || target.valid.size() != rendered.pixel_count()) {
        throw ShapeError("rendered image and target shapes differ");
    }
    LangLoss out;
    const std::size_t k = rendered.channels;
    for (std::size_t p = 0; p < rendered.pixel_count(); ++p) {
        if (target.valid[p] == 0) {
            continue;
        }
        ++out.valid_pixels;
        for (std::size_t c = 0; c < k; ++c) {
            const double diff = rendered.data[p * k + c] - target.latent.data[p * k + c];
            out.value += distance == LangDistance::l1 ? std::abs(diff) : diff * diff;
        }
    }
    if (out.valid_pixels == 0) {
        log::warn("language loss evaluated on a target with no valid pixels; defined as 0");
        return out;
    }
    out.value /= static_cast<double>(out.valid_pixels);
    return out;
}

FieldObjective field_objective(const RasterPlan& plan, std::span<const double> stacked, std::uint32_t latent_dim,
                               const TrainingView& view, const FieldTrainConfig& cfg) {
    const std::size_t d = latent_dim;
    const std::size_t k = 3 * d;
    const FeatureImage rendered = composite_forward(plan, stacked, k, cfg.raster);

    FieldObjective out;
    std::vector<double> upstream(rendered.data.size(), 0.0);
    for (SemanticLevel l : kLevels) {
        const std::size_t li = level_index(l);
        const LevelTarget& t = view.levels[li];
        if (t.latent.channels != d || t.valid.size() != rendered.pixel_count()) {
            throw ShapeError("target for camera " + view.camera.id + " does not match the scene");
        }
        std::size_t valid = 0;
        for (std::uint8_t v : t.valid) {
            valid += v != 0;
        }
        LangLoss& loss = out.levels[li];
        loss.valid_pixels = valid;
        if (valid == 0) {
            continue;
        }
        const double inv = 1.0 / static_cast<double>(valid);
        for (std::size_t p = 0; p < rendered.pixel_count(); ++p) {
            if (t.valid[p] == 0) {
                continue;
            }
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = rendered.data[p * k + li * d + c] - t.latent.data[p * d + c];
                double g = 0.0;
                if (cfg.distance == LangDistance::l1) {
                    loss.value += std::abs(diff);
                    g = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
                } else {
                    loss.value += diff * diff;
                    g = 2.0 * diff;
                }
                upstream[p * k + li * d + c] = g * inv;
            }
        }
        loss.value *= inv;
        out.total += loss.value;
    }
    out.grad = composite_backward(plan, stacked, k, upstream, cfg.raster);
    return out;
}

std::vector<double> stack_latents(const GaussianScene& scene) {
    const std::size_t d = scene.latent_dim();
    std::vector<double> out(scene.size() * 3 * d);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        for (SemanticLevel l : kLevels) {
            const auto f = scene.latent(l, i);
            std::copy(f.begin(), f.end(), out.begin() + static_cast<std::ptrdiff_t>((i * 3 + level_index(l)) * d));
        }
    }
    return out;
}

void unstack_latents(std::span<const double> stacked, GaussianScene& scene) {
    const std::size_t d = scene.latent_dim();
    if (stacked.size() != scene.size() * 3 * d) {
        throw ShapeError("stacked latent buffer does not match the scene");
    }
    for (std::size_t i = 0; i < scene.size(); ++i) {
        for (SemanticLevel l : kLevels) {
            auto f = scene.latent(l, i);
            for (std::size_t c = 0; c < d; ++c) {
                f[c] = static_cast<float>(stacked[(i * 3 + level_index(l)) * d + c]);
            }
        }
    }
}

FieldTrainReport train_field(GaussianScene& scene, std::span<const TrainingView> views, const FieldTrainConfig& cfg) {
    if (views.empty()) {
        throw ShapeError("train_field needs at least one training view");
    }
    scene.validate();
    for (const TrainingView& v : views) {
        v.validate(scene.latent_dim());
    }

    std::vector<RasterPlan> plans;
    plans.reserve(views.size());
    for (const TrainingView& v : views) {
        plans.push_back(make_plan(scene, v.camera, cfg.raster));
    }

    std::vector<double> params = stack_latents(scene);
    const std::uint32_t d = scene.latent_dim();
    auto mean_loss = [&] {
        double sum = 0.0;
        for (std::size_t v = 0; v < views.size(); ++v) {
            sum += field_objective(plans[v], params, d, views[v], cfg).total;
        }
        return sum / static_cast<double>(views.size());
    };

    FieldTrainReport report;
    report.initial_loss = mean_loss();
    if (cfg.iterations == 0) {
        report.final_loss = report.initial_loss;
        return report;
    }

    // Adam moments are element-wise, so one buffer per level is a view into a shared array.
    std::vector<double> m(params.size(), 0.0);
    std::vector<double> s(params.size(), 0.0);
    std::mt19937_64 rng(cfg.seed);
    std::array<double, 3> window{};
    std::uint32_t window_count = 0;

    for (std::uint32_t it = 1; it <= cfg.iterations; ++it) {
        const std::size_t v = static_cast<std::size_t>(rng() % views.size());
        const FieldObjective obj = field_objective(plans[v], params, d, views[v], cfg);
        if (!std::isfinite(obj.total)) {
            throw NumericalError("language loss became non-finite at iteration " + std::to_string(it));
        }
        const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(it));
        const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(it));
        for (std::size_t j = 0; j < params.size(); ++j) {
            const double g = obj.grad[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            s[j] = cfg.beta2 * s[j] + (1.0 - cfg.beta2) * g * g;
            params[j] -= cfg.lr * (m[j] / c1) / (std::sqrt(s[j] / c2) + cfg.eps);
        }

        for (std::size_t l = 0; l < 3; ++l) {
            window[l] += obj.levels[l].value;
        }
        ++window_count;
        if (cfg.log_every > 0 && (it % cfg.log_every == 0 || it == cfg.iterations)) {
            FieldLogEntry e;
            e.iteration = it;
            for (std::size_t l = 0; l < 3; ++l) {
                e.level_loss[l] = window[l] / window_count;
            }
            report.log.push_back(e);
            window = {};
            window_count = 0;
        }
    }

    unstack_latents(params, scene);
    // Report the loss of the latents actually stored (float precision).
    params = stack_latents(scene);
    report.final_loss = mean_loss();
    return report;
}

} // namespace langfield
