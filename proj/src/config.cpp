#include "langfield/config.hpp"

#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"
#include "langfield/errors.hpp"

namespace langfield {

namespace {

using nlohmann::json;

// One JSON object of the config; remembers which keys were consumed so leftovers can
// be reported as unknown.
class Section {
public:
    Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) {
            throw ConfigError("config section '" + name_ + "' must be an object");
        }
    }

    const json* find(const char* key) {
        auto it = j_.find(key);
        if (it == j_.end()) {
            return nullptr;
        }
        seen_.insert(key);
        return &*it;
    }

    template <typename T>
    void number(const char* key, T& out, double lo = -std::numeric_limits<double>::infinity(),
                double hi = std::numeric_limits<double>::infinity()) {
        const json* v = find(key);
        if (v == nullptr) {
            return;
        }
        if (!v->is_number()) {
            throw ConfigError(where(key) + " must be a number");
        }
        const double d = v->get<double>();
        if constexpr (std::is_integral_v<T>) {
            if (!v->is_number_integer()) {
                throw ConfigError(where(key) + " must be an integer");
            }
            lo = std::max(lo, static_cast<double>(std::numeric_limits<T>::min()));
            hi = std::min(hi, static_cast<double>(std::numeric_limits<T>::max()));
            if (d < lo || d > hi) {
                throw ConfigError(where(key) + " out of range");
            }
            out = v->is_number_unsigned() ? static_cast<T>(v->get<std::uint64_t>()) : static_cast<T>(v->get<std::int64_t>());
        } else {
            if (!(d >= lo && d <= hi)) {
                throw ConfigError(where(key) + " out of range");
            }
            out = static_cast<T>(d);
        }
    }

    void boolean(const char* key, bool& out) {
        if (const json* v = find(key)) {
            if (!v->is_boolean()) {
                throw ConfigError(where(key) + " must be true or false");
            }
            out = v->get<bool>();
        }
    }

    void string(const char* key, std::string& out) {
        if (const json* v = find(key)) {
            if (!v->is_string()) {
                throw ConfigError(where(key) + " must be a string");
            }
            out = v->get<std::string>();
        }
    }

    void path(const char* key, std::filesystem::path& out) {
        std::string s;
        if (find_string(key, s)) {
            out = s;
        }
    }

    void path(const char* key, std::optional<std::filesystem::path>& out) {
        std::string s;
        if (find_string(key, s)) {
            out = s;
        }
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.contains(key)) {
                throw ConfigError("unknown config key '" + where(key) + "'");
            }
        }
    }

    std::string where(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

private:
    bool find_string(const char* key, std::string& out) {
        if (find(key) == nullptr) {
            return false;
        }
        string(key, out);
        return true;
    }

    const json& j_;
    std::string name_;
    std::set<std::string> seen_;
};

std::string_view distance_name(LangDistance d) { return d == LangDistance::l1 ? "l1" : "l2"; }
std::string_view protocol_name(SegmentProtocol p) { return p == SegmentProtocol::ovs ? "ovs" : "lerf"; }

} // namespace

void PipelineConfig::sync() {
    ae.seed = seed;
    field.seed = seed;
    field.raster = query.raster;
    bench.query = query;
    bench.protocol = protocol;
    synth.scene.latent_dim = latent_dim;
}

void PipelineConfig::validate() const {
    if (latent_dim == 0) {
        throw ConfigError("latent_dim must be >= 1");
    }
    if (ae.batch_size == 0) {
        throw ConfigError("autoencoder.batch_size must be >= 1");
    }
    if (!(ae.lr >= 0.0) || !(field.lr >= 0.0)) {
        throw ConfigError("learning rates must be >= 0");
    }
    if (query.raster.tile_size == 0) {
        throw ConfigError("raster.tile_size must be >= 1");
    }
    if (protocol.smooth_size == 0) {
        throw ConfigError("query.smooth_size must be >= 1");
    }
    if (bench.repeats == 0) {
        throw ConfigError("bench.repeats must be >= 1");
    }
    if (synth.scene.num_gaussians == 0 || synth.scene.num_objects == 0 || synth.scene.num_views == 0 ||
        synth.scene.width == 0 || synth.scene.height == 0 || synth.embedding_dim == 0) {
        throw ConfigError("synth sizes must be >= 1");
    }
}

void apply_config_json(PipelineConfig& cfg, const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    Section top(doc, "");
    top.path("data", cfg.data);
    top.path("out", cfg.out);
    top.number("seed", cfg.seed);
    top.number("threads", cfg.threads);
    top.number("latent_dim", cfg.latent_dim, 1);

    if (const json* p = top.find("paths")) {
        Section s(*p, "paths");
        s.path("scene", cfg.scene);
        s.path("cameras", cfg.cameras);
        s.path("queries", cfg.queries);
        s.path("canonical", cfg.canonical);
        s.path("annotations", cfg.annotations);
        s.path("autoencoder", cfg.autoencoder);
        s.finish();
    }
    if (const json* p = top.find("synth")) {
        Section s(*p, "synth");
        SyntheticSceneSpec& sc = cfg.synth.scene;
        s.number("gaussians", sc.num_gaussians, 1);
        s.number("objects", sc.num_objects, 1);
        s.number("views", sc.num_views, 1);
        s.number("width", sc.width, 1);
        s.number("height", sc.height, 1);
        s.number("focal", sc.focal, 0.0);
        s.boolean("backdrop", sc.backdrop);
        s.number("seed", sc.seed);
        s.number("embedding_dim", cfg.synth.embedding_dim, 1);
        s.number("mask_noise", cfg.synth.mask_noise, 0.0);
        s.finish();
    }
    if (const json* p = top.find("masks")) {
        Section s(*p, "masks");
        s.number("min_predicted_iou", cfg.masks.min_predicted_iou);
        s.number("min_stability", cfg.masks.min_stability);
        s.number("max_overlap", cfg.masks.max_overlap);
        s.finish();
    }
    if (const json* p = top.find("autoencoder")) {
        Section s(*p, "autoencoder");
        s.number("epochs", cfg.ae.epochs);
        s.number("batch_size", cfg.ae.batch_size, 1);
        s.number("lr", cfg.ae.lr, 0.0);
        s.number("l1_weight", cfg.ae.weights.l1, 0.0);
        s.number("cosine_weight", cfg.ae.weights.cosine, 0.0);
        if (const json* h = s.find("hidden")) {
            if (!h->is_array()) {
                throw ConfigError("autoencoder.hidden must be an array of widths");
            }
            cfg.ae.arch.hidden.clear();
            for (const json& w : *h) {
                if (!w.is_number_unsigned() || w.get<std::uint64_t>() == 0 ||
                    w.get<std::uint64_t>() > std::numeric_limits<std::uint32_t>::max()) {
                    throw ConfigError("autoencoder.hidden widths must be positive integers");
                }
                cfg.ae.arch.hidden.push_back(w.get<std::uint32_t>());
            }
        }
        s.finish();
    }
    if (const json* p = top.find("field")) {
        Section s(*p, "field");
        s.number("iterations", cfg.field.iterations);
        s.number("lr", cfg.field.lr, 0.0);
        s.number("log_every", cfg.field.log_every, 1);
        std::string dist(distance_name(cfg.field.distance));
        s.string("distance", dist);
        if (dist == "l1") {
            cfg.field.distance = LangDistance::l1;
        } else if (dist == "l2") {
            cfg.field.distance = LangDistance::l2;
        } else {
            throw ConfigError("field.distance must be \"l1\" or \"l2\"");
        }
        s.finish();
    }
    if (const json* p = top.find("raster")) {
        Section s(*p, "raster");
        RasterConfig& r = cfg.query.raster;
        s.number("tile_size", r.tile_size, 1);
        s.number("blur", r.blur, 0.0);
        s.number("near_plane", r.near_plane);
        s.number("sigma_extent", r.sigma_extent, 0.0);
        s.number("alpha_clamp", r.alpha_clamp, 0.0, 1.0);
        s.number("min_transmittance", r.min_transmittance, 0.0, 1.0);
        s.finish();
    }
    if (const json* p = top.find("query")) {
        Section s(*p, "query");
        s.boolean("normalize", cfg.query.normalize);
        std::string proto(protocol_name(cfg.protocol.protocol));
        s.string("protocol", proto);
        if (proto == "ovs") {
            cfg.protocol.protocol = SegmentProtocol::ovs;
        } else if (proto == "lerf") {
            cfg.protocol.protocol = SegmentProtocol::lerf;
        } else {
            throw ConfigError("query.protocol must be \"ovs\" or \"lerf\"");
        }
        s.number("lerf_threshold", cfg.protocol.lerf_threshold);
        s.number("ovs_threshold", cfg.protocol.ovs_threshold);
        s.number("smooth_size", cfg.protocol.smooth_size, 1);
        s.finish();
    }
    if (const json* p = top.find("bench")) {
        Section s(*p, "bench");
        s.number("repeats", cfg.bench.repeats, 1);
        s.number("camera", cfg.bench.scaling_camera);
        s.finish();
    }
    top.finish();
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    PipelineConfig cfg;
    apply_config_json(cfg, buf.str());
    return cfg;
}

std::string config_to_json(const PipelineConfig& cfg) {
    json paths = json::object();
    auto put = [&](const char* key, const std::optional<std::filesystem::path>& p) {
        if (p) {
            paths[key] = p->string();
        }
    };
    put("scene", cfg.scene);
    put("cameras", cfg.cameras);
    put("queries", cfg.queries);
    put("canonical", cfg.canonical);
    put("annotations", cfg.annotations);
    put("autoencoder", cfg.autoencoder);
    const SyntheticSceneSpec& sc = cfg.synth.scene;
    const RasterConfig& r = cfg.query.raster;
    json doc = {
        {"data", cfg.data.string()},
        {"out", cfg.out.string()},
        {"paths", paths},
        {"seed", cfg.seed},
        {"threads", cfg.threads},
        {"latent_dim", cfg.latent_dim},
        {"synth",
         {{"gaussians", sc.num_gaussians},
          {"objects", sc.num_objects},
          {"views", sc.num_views},
          {"width", sc.width},
          {"height", sc.height},
          {"focal", sc.focal},
          {"backdrop", sc.backdrop},
          {"seed", sc.seed},
          {"embedding_dim", cfg.synth.embedding_dim},
          {"mask_noise", cfg.synth.mask_noise}}},
        {"masks",
         {{"min_predicted_iou", cfg.masks.min_predicted_iou},
          {"min_stability", cfg.masks.min_stability},
          {"max_overlap", cfg.masks.max_overlap}}},
        {"autoencoder",
         {{"epochs", cfg.ae.epochs},
          {"batch_size", cfg.ae.batch_size},
          {"lr", cfg.ae.lr},
          {"l1_weight", cfg.ae.weights.l1},
          {"cosine_weight", cfg.ae.weights.cosine},
          {"hidden", cfg.ae.arch.hidden}}},
        {"field",
         {{"iterations", cfg.field.iterations},
          {"lr", cfg.field.lr},
          {"log_every", cfg.field.log_every},
          {"distance", distance_name(cfg.field.distance)}}},
        {"raster",
         {{"tile_size", r.tile_size},
          {"blur", r.blur},
          {"near_plane", r.near_plane},
          {"sigma_extent", r.sigma_extent},
          {"alpha_clamp", r.alpha_clamp},
          {"min_transmittance", r.min_transmittance}}},
        {"query",
         {{"normalize", cfg.query.normalize},
          {"protocol", protocol_name(cfg.protocol.protocol)},
          {"lerf_threshold", cfg.protocol.lerf_threshold},
          {"ovs_threshold", cfg.protocol.ovs_threshold},
          {"smooth_size", cfg.protocol.smooth_size}}},
        {"bench", {{"repeats", cfg.bench.repeats}, {"camera", cfg.bench.scaling_camera}}},
    };
    return doc.dump(2);
}

} // namespace langfield
