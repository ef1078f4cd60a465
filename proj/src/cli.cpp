#include "langfield/cli.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "langfield/bench.hpp"
#include "langfield/config.hpp"
#include "langfield/errors.hpp"
#include "langfield/log.hpp"
#include "langfield/parallel.hpp"
#include "langfield/pipeline.hpp"
#include "langfield/png_io.hpp"

namespace langfield {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Flag values are parsed into temporaries and applied on top of the config file, so a
// flag always wins regardless of where --config appears on the command line.
class Overrides {
public:
    template <typename T, typename Set>
    CLI::Option* add(CLI::App* app, const std::string& name, const std::string& desc, Set set) {
        auto value = std::make_shared<T>();
        CLI::Option* opt = app->add_option(name, *value, desc);
        items_.push_back({opt, [value, set](PipelineConfig& c) { set(c, *value); }});
        return opt;
    }

    void apply(PipelineConfig& cfg) const {
        for (const auto& [opt, fn] : items_) {
            if (opt->count() > 0) {
                fn(cfg);
            }
        }
    }

private:
    std::vector<std::pair<CLI::Option*, std::function<void(PipelineConfig&)>>> items_;
};

struct Options {
    std::string config_path;
    std::vector<std::string> views;  // empty = every camera
    std::vector<std::string> levels; // empty = every level
    std::string label;               // empty = every query
};

void write_json(const fs::path& path, const json& doc) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    out << doc.dump(2) << '\n';
}

std::vector<Camera> select_views(const std::vector<Camera>& cameras, const std::vector<std::string>& ids) {
    if (ids.empty()) {
        return cameras;
    }
    std::vector<Camera> out;
    for (const std::string& id : ids) {
        auto it = std::find_if(cameras.begin(), cameras.end(), [&](const Camera& c) { return c.id == id; });
        if (it == cameras.end()) {
            throw FormatError("no camera with id " + id);
        }
        out.push_back(*it);
    }
    return out;
}

std::vector<SemanticLevel> select_levels(const std::vector<std::string>& names) {
    if (names.empty()) {
        return {kLevels.begin(), kLevels.end()};
    }
    std::vector<SemanticLevel> out;
    for (const std::string& n : names) {
        const auto l = parse_level(n);
        if (!l) {
            throw ConfigError("unknown level " + n + " (expected subpart, part or whole)");
        }
        out.push_back(*l);
    }
    return out;
}

std::vector<QueryEmbedding> select_queries(const PipelineConfig& cfg, const std::string& label) {
    std::vector<QueryEmbedding> all = load_queries(cfg.queries_path());
    if (label.empty()) {
        return all;
    }
    for (auto& q : all) {
        if (q.label == label) {
            return {q};
        }
    }
    throw FormatError("no query labelled " + label + " in " + cfg.queries_path().string());
}

// Scene the query-side subcommands operate on: --scene, else the trained output.
GaussianScene load_field(const PipelineConfig& cfg) {
    const fs::path p = cfg.scene.value_or(cfg.trained_scene_path());
    GaussianScene scene = load_scene(p);
    scene.validate();
    return scene;
}

AutoencoderParams load_ae_for(const PipelineConfig& cfg, const GaussianScene& scene) {
    AutoencoderParams ae = load_autoencoder(cfg.autoencoder_path());
    if (ae.latent_dim != scene.latent_dim()) {
        throw FormatError("autoencoder latent_dim " + std::to_string(ae.latent_dim) + " does not match scene latent_dim " +
                          std::to_string(scene.latent_dim()));
    }
    return ae;
}

std::string file_stem(const std::string& label) {
    std::string s = label;
    for (char& c : s) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) {
            c = '_';
        }
    }
    return s;
}

json loss_json(const AeLoss& l) { return {{"total", l.total}, {"l1", l.l1}, {"cosine", l.cosine}}; }

json location_json(const Localization& loc) {
    return {{"x", loc.x}, {"y", loc.y}, {"level", level_name(loc.level)}, {"score", loc.score}};
}

json segment_json(const SegmentResult& seg) {
    return {{"level", seg.level ? json(level_name(*seg.level)) : json(nullptr)},
            {"pixels", std::count(seg.mask.begin(), seg.mask.end(), 1)}};
}

FeatureImage map_image(const RelevancyMap& m) {
    FeatureImage img(m.width, m.height, 1);
    img.data = m.values;
    std::fill(img.alpha.begin(), img.alpha.end(), 1.0);
    return img;
}

// ---- subcommands -----------------------------------------------------------------

int cmd_validate(const PipelineConfig& cfg, std::ostream& out) {
    const DatasetLayout layout = cfg.layout();
    const GaussianScene scene = load_scene(cfg.scene.value_or(layout.scene()));
    scene.validate();
    const std::vector<Camera> cameras = load_cameras(cfg.cameras_path());
    out << "scene: " << scene.size() << " gaussians, latent_dim " << scene.latent_dim() << '\n';
    out << "cameras: " << cameras.size() << '\n';

    std::size_t raw_sets = 0;
    if (fs::exists(layout.raw_masks_dir())) {
        for (const Camera& cam : cameras) {
            for (SemanticLevel l : kLevels) {
                const fs::path dir = layout.raw_masks(cam.id, l);
                if (!fs::exists(dir)) {
                    throw FormatError("missing raw mask directory " + dir.string());
                }
                const RawMaskSet set = read_raw_mask_set(dir, cam.id, l);
                set.validate();
                if (set.width != cam.width || set.height != cam.height) {
                    throw FormatError("raw masks in " + dir.string() + " do not match camera size");
                }
                ++raw_sets;
            }
        }
        out << "raw mask sets: " << raw_sets << '\n';
    }
    if (fs::exists(layout.masks_dir()) || fs::exists(layout.embeddings_dir())) {
        const std::vector<ViewInputs> views = load_view_inputs(layout, cameras);
        std::size_t rows = 0;
        for (const auto& v : views) {
            for (const auto& t : v.tables) {
                rows += t.mask_count();
            }
        }
        out << "label maps: " << views.size() * 3 << ", embedding rows: " << rows << '\n';
    }
    if (fs::exists(cfg.queries_path())) {
        out << "queries: " << load_queries(cfg.queries_path()).size() << '\n';
    }
    if (fs::exists(cfg.canonical_path())) {
        load_canonical(cfg.canonical_path());
        out << "canonical: 4\n";
    }
    if (fs::exists(cfg.annotations_path())) {
        const SceneAnnotations ann = load_annotations(cfg.annotations_path());
        for (const auto& v : ann.views) {
            if (std::none_of(cameras.begin(), cameras.end(), [&](const Camera& c) { return c.id == v.image_id; })) {
                throw FormatError("annotation references unknown camera " + v.image_id);
            }
        }
        out << "annotated views: " << ann.views.size() << '\n';
    }
    out << "ok\n";
    return kExitOk;
}

int cmd_synth(const PipelineConfig& cfg, std::ostream& out) {
    write_synthetic_dataset(cfg.synth, cfg.data);
    out << "wrote synthetic dataset to " << cfg.data.string() << '\n';
    return kExitOk;
}

int cmd_build_maps(const PipelineConfig& cfg, std::ostream& out) {
    const std::vector<Camera> cameras = load_cameras(cfg.cameras_path());
    const std::size_t n = build_label_maps(cfg.layout(), cameras, cfg.masks);
    out << "wrote " << n << " label maps\n";
    return kExitOk;
}

int cmd_train_ae(const PipelineConfig& cfg, std::ostream& out) {
    const std::vector<Camera> cameras = load_cameras(cfg.cameras_path());
    const std::vector<ViewInputs> views = load_view_inputs(cfg.layout(), cameras);
    const Eigen::MatrixXd data = gather_embeddings(views);
    if (data.cols() == 0) {
        throw FormatError("no mask embeddings to train on");
    }
    auto [params, report] = train_autoencoder(data, cfg.latent_dim, cfg.ae);
    save_autoencoder(params, cfg.autoencoder_path());

    json epochs = json::array();
    for (const AeEpoch& e : report.epochs) {
        epochs.push_back({{"loss", loss_json(e.loss)}, {"lr", e.lr}, {"rejected", e.rejected}});
    }
    write_json(cfg.out / "ae_report.json", {{"samples", data.cols()},
                                            {"distinct_samples", report.distinct_samples},
                                            {"input_dim", params.input_dim},
                                            {"latent_dim", params.latent_dim},
                                            {"initial", loss_json(report.initial)},
                                            {"epochs", epochs},
                                            {"final_cosine_distance", report.final_cosine_distance}});
    out << "trained autoencoder " << params.input_dim << " -> " << params.latent_dim << " on " << data.cols()
        << " embeddings, cosine distance " << report.final_cosine_distance << '\n';
    return kExitOk;
}

int cmd_encode_targets(const PipelineConfig& cfg, std::ostream& out) {
    const std::vector<Camera> cameras = load_cameras(cfg.cameras_path());
    const std::vector<ViewInputs> views = load_view_inputs(cfg.layout(), cameras);
    const AutoencoderParams ae = load_autoencoder(cfg.autoencoder_path());
    const std::vector<TrainingView> targets = encode_targets(views, ae);
    for (const TrainingView& t : targets) {
        write_training_view(t, cfg.targets_dir() / t.camera.id);
    }
    out << "encoded targets for " << targets.size() << " views\n";
    return kExitOk;
}

int cmd_train_field(const PipelineConfig& cfg, std::ostream& out) {
    const GaussianScene input = load_scene(cfg.scene.value_or(cfg.input_scene_path()));
    input.validate();
    const std::vector<Camera> cameras = load_cameras(cfg.cameras_path());
    std::vector<TrainingView> views;
    for (const Camera& cam : cameras) {
        views.push_back(read_training_view(cam, cfg.targets_dir() / cam.id));
    }
    if (views.empty()) {
        throw FormatError("no training views");
    }
    const std::uint32_t d = views.front().levels[0].latent.channels;
    // Latents of a matching scene are the starting point; otherwise they start at zero.
    GaussianScene scene = input.latent_dim() == d ? input : GaussianScene(input.gaussians(), d);
    const FieldTrainReport report = train_field(scene, views, cfg.field);
    save_scene(scene, cfg.trained_scene_path());

    json log = json::array();
    for (const FieldLogEntry& e : report.log) {
        log.push_back({{"iteration", e.iteration},
                       {"subpart", e.level_loss[0]},
                       {"part", e.level_loss[1]},
                       {"whole", e.level_loss[2]}});
    }
    write_json(cfg.out / "field_report.json",
               {{"initial_loss", report.initial_loss}, {"final_loss", report.final_loss}, {"log", log}});
    out << "trained field over " << views.size() << " views, loss " << report.initial_loss << " -> "
        << report.final_loss << '\n';
    return kExitOk;
}

int cmd_render(const PipelineConfig& cfg, const Options& opt, std::ostream& out) {
    const GaussianScene scene = load_field(cfg);
    const std::vector<Camera> cameras = select_views(load_cameras(cfg.cameras_path()), opt.views);
    std::size_t n = 0;
    for (const Camera& cam : cameras) {
        for (SemanticLevel l : select_levels(opt.levels)) {
            const FeatureImage img = render_level(scene, cam, l, cfg.query.raster);
            write_lfim(img, cfg.out / "render" / (cam.id + "_" + std::string(level_name(l)) + ".lfim"));
            ++n;
        }
    }
    out << "rendered " << n << " latent images\n";
    return kExitOk;
}

int cmd_query(const PipelineConfig& cfg, const Options& opt, std::ostream& out) {
    const GaussianScene scene = load_field(cfg);
    const AutoencoderParams ae = load_ae_for(cfg, scene);
    const std::vector<Camera> cameras = select_views(load_cameras(cfg.cameras_path()), opt.views);
    const std::vector<QueryEmbedding> queries = select_queries(cfg, opt.label);
    const CanonicalSet canon = load_canonical(cfg.canonical_path());
    std::size_t n = 0;
    for (const Camera& cam : cameras) {
        for (const QueryEmbedding& q : queries) {
            const MapTriple maps = relevancy_maps(scene, cam, ae, q, canon, cfg.query);
            for (const RelevancyMap& m : maps) {
                const fs::path base =
                    cfg.out / "query" / (cam.id + "_" + file_stem(q.label) + "_" + std::string(level_name(m.level)));
                write_lfim(map_image(m), base.string() + ".lfim");
                png::write_rgb8(base.string() + ".png", m.width, m.height, heatmap_rgb(m));
                ++n;
            }
        }
    }
    out << "wrote " << n << " relevancy maps\n";
    return kExitOk;
}

// Shared loop of localize and segment: decodes each view once, then runs `fn` per query.
template <typename Fn>
void for_each_query_maps(const PipelineConfig& cfg, const Options& opt, Fn&& fn) {
    const GaussianScene scene = load_field(cfg);
    const AutoencoderParams ae = load_ae_for(cfg, scene);
    const std::vector<Camera> cameras = select_views(load_cameras(cfg.cameras_path()), opt.views);
    const std::vector<QueryEmbedding> queries = select_queries(cfg, opt.label);
    const CanonicalSet canon = load_canonical(cfg.canonical_path());
    for (const Camera& cam : cameras) {
        std::array<FeatureImage, 3> decoded;
        for (SemanticLevel l : kLevels) {
            decoded[level_index(l)] = decode_level(scene, cam, ae, l, cfg.query);
        }
        for (const QueryEmbedding& q : queries) {
            MapTriple maps;
            for (SemanticLevel l : kLevels) {
                maps[level_index(l)] = relevancy_map(decoded[level_index(l)], q, canon, l, cfg.query);
            }
            fn(cam, q, maps);
        }
    }
}

int cmd_localize(const PipelineConfig& cfg, const Options& opt, std::ostream& out) {
    json results = json::array();
    for_each_query_maps(cfg, opt, [&](const Camera& cam, const QueryEmbedding& q, const MapTriple& maps) {
        results.push_back({{"image_id", cam.id}, {"label", q.label}, {"location", location_json(localize(maps, cfg.protocol.smooth_size))}});
    });
    write_json(cfg.out / "localize.json", results);
    out << "localized " << results.size() << " queries\n";
    return kExitOk;
}

int cmd_segment(const PipelineConfig& cfg, const Options& opt, std::ostream& out) {
    json results = json::array();
    for_each_query_maps(cfg, opt, [&](const Camera& cam, const QueryEmbedding& q, const MapTriple& maps) {
        const SegmentResult seg = segment(maps, cfg.protocol);
        const std::string name = cam.id + "_" + file_stem(q.label) + ".png";
        png::write_mask1(cfg.out / "segment" / name, seg.width, seg.height, seg.mask);
        json entry = segment_json(seg);
        entry["image_id"] = cam.id;
        entry["label"] = q.label;
        entry["mask"] = "segment/" + name;
        results.push_back(entry);
    });
    write_json(cfg.out / "segment.json", results);
    out << "segmented " << results.size() << " queries\n";
    return kExitOk;
}

int cmd_eval(const PipelineConfig& cfg, std::ostream& out) {
    const GaussianScene scene = load_field(cfg);
    const AutoencoderParams ae = load_ae_for(cfg, scene);
    const std::vector<Camera> cameras = load_cameras(cfg.cameras_path());
    const std::vector<QueryEmbedding> queries = load_queries(cfg.queries_path());
    const CanonicalSet canon = load_canonical(cfg.canonical_path());
    const SceneAnnotations ann = load_annotations(cfg.annotations_path());
    const EvaluationResult result = evaluate_scene(scene, cameras, ae, queries, canon, ann, cfg.query, cfg.protocol);

    const MetricsReport report = aggregate_metrics({result.metrics});
    write_metrics_json(report, cfg.out / "metrics.json");
    write_metrics_csv(report, cfg.out / "metrics.csv");
    json per_query = json::array();
    for (const QueryEvaluation& q : result.queries) {
        json e = {{"image_id", q.image_id}, {"label", q.label}};
        if (q.has_bbox) {
            e["location"] = location_json(q.location);
            e["location_hit"] = q.location_hit;
        }
        if (q.has_mask) {
            e["segment"] = segment_json(q.segmentation);
            e["iou"] = q.iou;
        }
        per_query.push_back(e);
    }
    write_json(cfg.out / "eval_queries.json", per_query);

    const SceneMetrics& m = report.overall;
    auto show = [&](const char* name, const std::optional<double>& v) {
        out << name << ": " << (v ? std::to_string(*v) : std::string("n/a")) << '\n';
    };
    show("localization accuracy %", m.localization_accuracy);
    show("mean IoU %", m.mean_iou);
    show("mIoU %", m.miou);
    show("accuracy %", m.accuracy);
    return kExitOk;
}

int cmd_viz(const PipelineConfig& cfg, const Options& opt, std::ostream& out) {
    const GaussianScene scene = load_field(cfg);
    if (scene.latent_dim() != 3) {
        throw ConfigError("viz needs latent_dim 3, the scene has " + std::to_string(scene.latent_dim()));
    }
    const std::vector<Camera> cameras = select_views(load_cameras(cfg.cameras_path()), opt.views);
    std::size_t n = 0;
    for (const Camera& cam : cameras) {
        for (SemanticLevel l : select_levels(opt.levels)) {
            const std::vector<std::uint8_t> rgb = viz_latent(scene, cam, l, cfg.query.raster);
            png::write_rgb8(cfg.out / "viz" / (cam.id + "_" + std::string(level_name(l)) + ".png"), cam.width,
                            cam.height, rgb);
            ++n;
        }
        const FeatureImage color = render_color(scene, cam, cfg.query.raster);
        std::vector<std::uint8_t> rgb(color.data.size());
        std::transform(color.data.begin(), color.data.end(), rgb.begin(), [](double v) {
            return static_cast<std::uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
        });
        png::write_rgb8(cfg.out / "viz" / (cam.id + "_color.png"), cam.width, cam.height, rgb);
    }
    out << "wrote " << n << " latent visualizations\n";
    return kExitOk;
}

int cmd_bench(const PipelineConfig& cfg, const Options& opt, std::ostream& out) {
    const GaussianScene scene = load_field(cfg);
    const AutoencoderParams ae = load_ae_for(cfg, scene);
    const std::vector<Camera> cameras = select_views(load_cameras(cfg.cameras_path()), opt.views);
    const std::vector<QueryEmbedding> queries = select_queries(cfg, opt.label);
    const CanonicalSet canon = load_canonical(cfg.canonical_path());
    const BenchReport report = benchmark_query(scene, ae, queries, canon, cameras, cfg.bench);
    write_bench_outputs(report.outputs, cfg.out / "bench_outputs.json");
    write_bench_timing(report, cfg.out / "bench_timing.json");
    out << "seconds per query: " << report.seconds_per_query << " (render " << report.render_seconds << ", decode "
        << report.decode_seconds << ", protocol " << report.protocol_seconds << ", total " << report.total_seconds
        << ")\n";
    out << "render k=" << report.scaling.wide_channels << " vs k=" << report.scaling.latent_channels << ": "
        << report.scaling.ratio << "x\n";
    return kExitOk;
}

void report_error(std::ostream& err, const char* kind, const std::string& msg) {
    err << json{{"error", kind}, {"message", msg}}.dump() << '\n';
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Language feature fields on 3D Gaussian scenes", "langfield"};
    app.require_subcommand(1);
    app.fallthrough(false);

    Options opt;
    Overrides ov;
    std::map<CLI::App*, std::function<int(const PipelineConfig&)>> handlers;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config_path, "JSON config file; flags override its values");
        ov.add<std::string>(sub, "--data", "Dataset root", [](PipelineConfig& c, const std::string& v) { c.data = v; });
        ov.add<std::string>(sub, "--out", "Output directory", [](PipelineConfig& c, const std::string& v) { c.out = v; });
        ov.add<std::uint64_t>(sub, "--seed", "Random seed", [](PipelineConfig& c, std::uint64_t v) { c.seed = v; });
        ov.add<std::uint32_t>(sub, "--threads", "Worker threads (0 = LANGFIELD_THREADS or all cores)",
                              [](PipelineConfig& c, std::uint32_t v) { c.threads = v; });
        ov.add<std::string>(sub, "--cameras", "Camera file", [](PipelineConfig& c, const std::string& v) { c.cameras = v; });
    };
    auto scene_flag = [&](CLI::App* sub, const std::string& desc) {
        ov.add<std::string>(sub, "--scene", desc, [](PipelineConfig& c, const std::string& v) { c.scene = v; });
    };
    auto ae_flag = [&](CLI::App* sub) {
        ov.add<std::string>(sub, "--autoencoder", "Autoencoder file (default <out>/autoencoder.laep)",
                            [](PipelineConfig& c, const std::string& v) { c.autoencoder = v; });
    };
    auto query_files = [&](CLI::App* sub) {
        ov.add<std::string>(sub, "--queries", "Query embedding file", [](PipelineConfig& c, const std::string& v) { c.queries = v; });
        ov.add<std::string>(sub, "--canonical", "Canonical phrase file",
                            [](PipelineConfig& c, const std::string& v) { c.canonical = v; });
        ov.add<bool>(sub, "--normalize", "Normalize vectors before dot products",
                     [](PipelineConfig& c, bool v) { c.query.normalize = v; });
    };
    auto view_flags = [&](CLI::App* sub) { sub->add_option("--view", opt.views, "Camera ids (default: all)"); };
    auto level_flags = [&](CLI::App* sub) { sub->add_option("--level", opt.levels, "Levels (default: all)"); };
    auto protocol_flags = [&](CLI::App* sub) {
        ov.add<std::uint32_t>(sub, "--smooth-size", "Mean filter size",
                              [](PipelineConfig& c, std::uint32_t v) { c.protocol.smooth_size = v; });
    };
    auto field_scene = "Trained scene (default <out>/scene_trained.lsplat)";

    CLI::App* validate = app.add_subcommand("validate", "Check every input file of a dataset");
    common(validate);
    scene_flag(validate, "Scene file (default <data>/scene.lsplat)");
    query_files(validate);
    ov.add<std::string>(validate, "--annotations", "Annotation file",
                        [](PipelineConfig& c, const std::string& v) { c.annotations = v; });

    CLI::App* synth = app.add_subcommand("synth", "Write the synthetic fixture dataset to --data");
    common(synth);
    ov.add<std::uint32_t>(synth, "--gaussians", "Gaussian count",
                          [](PipelineConfig& c, std::uint32_t v) { c.synth.scene.num_gaussians = v; });
    ov.add<std::uint32_t>(synth, "--objects", "Object count",
                          [](PipelineConfig& c, std::uint32_t v) { c.synth.scene.num_objects = v; });
    ov.add<std::uint32_t>(synth, "--views", "View count", [](PipelineConfig& c, std::uint32_t v) { c.synth.scene.num_views = v; });
    ov.add<std::uint32_t>(synth, "--width", "Image width", [](PipelineConfig& c, std::uint32_t v) { c.synth.scene.width = v; });
    ov.add<std::uint32_t>(synth, "--height", "Image height", [](PipelineConfig& c, std::uint32_t v) { c.synth.scene.height = v; });
    ov.add<std::uint32_t>(synth, "--embedding-dim", "Embedding dimension",
                          [](PipelineConfig& c, std::uint32_t v) { c.synth.embedding_dim = v; });
    ov.add<std::uint64_t>(synth, "--synth-seed", "Seed of the synthetic scene",
                          [](PipelineConfig& c, std::uint64_t v) { c.synth.scene.seed = v; });

    CLI::App* build_maps = app.add_subcommand("build-maps", "Filter raw masks into per-level label maps");
    common(build_maps);
    ov.add<double>(build_maps, "--min-iou", "Minimum predicted IoU",
                   [](PipelineConfig& c, double v) { c.masks.min_predicted_iou = v; });
    ov.add<double>(build_maps, "--min-stability", "Minimum stability score",
                   [](PipelineConfig& c, double v) { c.masks.min_stability = v; });
    ov.add<double>(build_maps, "--max-overlap", "Overlap IoU that marks a duplicate",
                   [](PipelineConfig& c, double v) { c.masks.max_overlap = v; });

    CLI::App* train_ae = app.add_subcommand("train-ae", "Train the embedding autoencoder");
    common(train_ae);
    ae_flag(train_ae);
    ov.add<std::uint32_t>(train_ae, "--epochs,--iterations", "Training epochs",
                          [](PipelineConfig& c, std::uint32_t v) { c.ae.epochs = v; });
    ov.add<std::uint32_t>(train_ae, "--batch-size", "Minibatch size",
                          [](PipelineConfig& c, std::uint32_t v) { c.ae.batch_size = v; });
    ov.add<double>(train_ae, "--lr", "Learning rate", [](PipelineConfig& c, double v) { c.ae.lr = v; });
    ov.add<std::uint32_t>(train_ae, "--latent-dim", "Latent dimension",
                          [](PipelineConfig& c, std::uint32_t v) { c.latent_dim = v; });

    CLI::App* encode = app.add_subcommand("encode-targets", "Encode per-pixel latent targets for every view");
    common(encode);
    ae_flag(encode);

    CLI::App* train_field_cmd = app.add_subcommand("train-field", "Optimize the per-Gaussian latent fields");
    common(train_field_cmd);
    scene_flag(train_field_cmd, "Input scene (default <data>/scene.lsplat)");
    ov.add<std::uint32_t>(train_field_cmd, "--iterations", "Optimizer steps",
                          [](PipelineConfig& c, std::uint32_t v) { c.field.iterations = v; });
    ov.add<double>(train_field_cmd, "--lr", "Learning rate", [](PipelineConfig& c, double v) { c.field.lr = v; });
    ov.add<std::string>(train_field_cmd, "--distance", "l1 or l2", [](PipelineConfig& c, const std::string& v) {
        if (v == "l1") {
            c.field.distance = LangDistance::l1;
        } else if (v == "l2") {
            c.field.distance = LangDistance::l2;
        } else {
            throw ConfigError("--distance must be l1 or l2");
        }
    });

    CLI::App* render = app.add_subcommand("render", "Render latent images (LFIM)");
    common(render);
    scene_flag(render, field_scene);
    view_flags(render);
    level_flags(render);

    CLI::App* query = app.add_subcommand("query", "Write relevancy maps for each query");
    common(query);
    scene_flag(query, field_scene);
    ae_flag(query);
    query_files(query);
    view_flags(query);
    query->add_option("--label", opt.label, "Query label (default: all)");

    CLI::App* localize_cmd = app.add_subcommand("localize", "Localize each query in each view");
    common(localize_cmd);
    scene_flag(localize_cmd, field_scene);
    ae_flag(localize_cmd);
    query_files(localize_cmd);
    view_flags(localize_cmd);
    protocol_flags(localize_cmd);
    localize_cmd->add_option("--label", opt.label, "Query label (default: all)");

    CLI::App* segment_cmd = app.add_subcommand("segment", "Segment each query in each view");
    common(segment_cmd);
    scene_flag(segment_cmd, field_scene);
    ae_flag(segment_cmd);
    query_files(segment_cmd);
    view_flags(segment_cmd);
    protocol_flags(segment_cmd);
    segment_cmd->add_option("--label", opt.label, "Query label (default: all)");
    ov.add<std::string>(segment_cmd, "--protocol", "ovs or lerf", [](PipelineConfig& c, const std::string& v) {
        if (v == "ovs") {
            c.protocol.protocol = SegmentProtocol::ovs;
        } else if (v == "lerf") {
            c.protocol.protocol = SegmentProtocol::lerf;
        } else {
            throw ConfigError("--protocol must be ovs or lerf");
        }
    });
    ov.add<double>(segment_cmd, "--threshold", "Threshold of the selected protocol", [](PipelineConfig& c, double v) {
        (c.protocol.protocol == SegmentProtocol::lerf ? c.protocol.lerf_threshold : c.protocol.ovs_threshold) = v;
    });

    CLI::App* eval = app.add_subcommand("eval", "Score localization and segmentation against annotations");
    common(eval);
    scene_flag(eval, field_scene);
    ae_flag(eval);
    query_files(eval);
    protocol_flags(eval);
    ov.add<std::string>(eval, "--annotations", "Annotation file",
                        [](PipelineConfig& c, const std::string& v) { c.annotations = v; });

    CLI::App* viz = app.add_subcommand("viz", "Write latent RGB and color renders as PNG");
    common(viz);
    scene_flag(viz, field_scene);
    view_flags(viz);
    level_flags(viz);

    CLI::App* bench = app.add_subcommand("bench", "Time the query path and channel scaling");
    common(bench);
    scene_flag(bench, field_scene);
    ae_flag(bench);
    query_files(bench);
    view_flags(bench);
    bench->add_option("--label", opt.label, "Query label (default: all)");
    ov.add<std::uint32_t>(bench, "--repeats", "Channel-scaling repeats",
                          [](PipelineConfig& c, std::uint32_t v) { c.bench.repeats = v; });

    handlers[validate] = [&](const PipelineConfig& c) { return cmd_validate(c, out); };
    handlers[synth] = [&](const PipelineConfig& c) { return cmd_synth(c, out); };
    handlers[build_maps] = [&](const PipelineConfig& c) { return cmd_build_maps(c, out); };
    handlers[train_ae] = [&](const PipelineConfig& c) { return cmd_train_ae(c, out); };
    handlers[encode] = [&](const PipelineConfig& c) { return cmd_encode_targets(c, out); };
    handlers[train_field_cmd] = [&](const PipelineConfig& c) { return cmd_train_field(c, out); };
    handlers[render] = [&](const PipelineConfig& c) { return cmd_render(c, opt, out); };
    handlers[query] = [&](const PipelineConfig& c) { return cmd_query(c, opt, out); };
    handlers[localize_cmd] = [&](const PipelineConfig& c) { return cmd_localize(c, opt, out); };
    handlers[segment_cmd] = [&](const PipelineConfig& c) { return cmd_segment(c, opt, out); };
    handlers[eval] = [&](const PipelineConfig& c) { return cmd_eval(c, out); };
    handlers[viz] = [&](const PipelineConfig& c) { return cmd_viz(c, opt, out); };
    handlers[bench] = [&](const PipelineConfig& c) { return cmd_bench(c, opt, out); };

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        PipelineConfig cfg = opt.config_path.empty() ? PipelineConfig{} : load_config(opt.config_path);
        ov.apply(cfg);
        cfg.sync();
        cfg.validate();
        if (cfg.threads > 0) {
            set_worker_count(cfg.threads);
        }
        for (const auto& [sub, fn] : handlers) {
            if (sub->parsed()) {
                return fn(cfg);
            }
        }
        return kExitUsage;
    } catch (const ConfigError& e) {
        report_error(err, "config", e.what());
        return kExitUsage;
    } catch (const NumericalError& e) {
        report_error(err, "numerical", e.what());
        return kExitNumerical;
    } catch (const FormatError& e) {
        report_error(err, "data", e.what());
        return kExitData;
    } catch (const ShapeError& e) {
        report_error(err, "data", e.what());
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        report_error(err, "data", e.what());
        return kExitData;
    } catch (const std::exception& e) {
        report_error(err, "internal", e.what());
        return kExitFailure;
    }
}

} // namespace langfield
