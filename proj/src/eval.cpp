#include "langfield/eval.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "langfield/errors.hpp"
#include "langfield/png_io.hpp"

namespace langfield {

double eval_localization(std::span<const PixelPrediction> preds, std::span<const BBox> gts) {
    if (preds.size() != gts.size()) {
        throw ShapeError("prediction and annotation counts differ");
    }
    if (preds.empty()) {
        return 0.0;
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        hits += gts[i].contains(preds[i].x, preds[i].y) ? 1 : 0;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(preds.size());
}

double mask_iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    if (a.size() != b.size()) {
        throw ShapeError("mask sizes differ");
    }
    std::size_t inter = 0;
    std::size_t uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool ia = a[i] != 0;
        const bool ib = b[i] != 0;
        inter += static_cast<std::size_t>(ia && ib);
        uni += static_cast<std::size_t>(ia || ib);
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double eval_iou(std::span<const std::vector<std::uint8_t>> preds, std::span<const std::vector<std::uint8_t>> gts) {
    if (preds.size() != gts.size()) {
        throw ShapeError("prediction and annotation counts differ");
    }
    if (preds.empty()) {
        return 0.0;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        sum += mask_iou(preds[i], gts[i]);
    }
    return 100.0 * sum / static_cast<double>(preds.size());
}

ClassMetrics eval_miou_accuracy(std::span<const std::vector<std::uint16_t>> preds,
                                std::span<const std::vector<std::uint16_t>> gts, std::uint32_t num_classes) {
    if (preds.size() != gts.size()) {
        throw ShapeError("prediction and annotation counts differ");
    }
    // confusion[gt][pred], gt in 1..C, pred in 0..C
    const std::size_t c1 = std::size_t{num_classes} + 1;
    std::vector<std::uint64_t> confusion(c1 * c1, 0);
    for (std::size_t v = 0; v < preds.size(); ++v) {
        if (preds[v].size() != gts[v].size()) {
            throw ShapeError("label image sizes differ in view " + std::to_string(v));
        }
        for (std::size_t p = 0; p < preds[v].size(); ++p) {
            const std::uint16_t g = gts[v][p];
            const std::uint16_t q = preds[v][p];
            if (g > num_classes || q > num_classes) {
                throw FormatError("class id out of range in view " + std::to_string(v));
            }
            if (g != 0) {
                ++confusion[g * c1 + q];
            }
        }
    }
    ClassMetrics out;
    out.class_iou.resize(num_classes);
    std::uint64_t labeled = 0;
    std::uint64_t correct = 0;
    double iou_sum = 0.0;
    std::size_t iou_count = 0;
    for (std::size_t c = 1; c <= num_classes; ++c) {
        std::uint64_t tp = confusion[c * c1 + c];
        std::uint64_t fn = 0;
        std::uint64_t fp = 0;
        for (std::size_t o = 0; o <= num_classes; ++o) {
            labeled += confusion[c * c1 + o];
            if (o != c) {
                fn += confusion[c * c1 + o];
            }
            if (o != c && o != 0) {
                fp += confusion[o * c1 + c];
            }
        }
        correct += tp;
        const std::uint64_t denom = tp + fp + fn;
        if (denom > 0) {
            const double iou = static_cast<double>(tp) / static_cast<double>(denom);
            out.class_iou[c - 1] = iou;
            iou_sum += iou;
            ++iou_count;
        }
    }
    out.miou = iou_count == 0 ? 0.0 : 100.0 * iou_sum / static_cast<double>(iou_count);
    out.accuracy = labeled == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(labeled);
    return out;
}

std::vector<std::uint16_t> labels_from_masks(std::span<const std::vector<std::uint8_t>> class_masks) {
    if (class_masks.empty()) {
        return {};
    }
    std::vector<std::uint16_t> out(class_masks[0].size(), 0);
    for (std::size_t c = class_masks.size(); c-- > 0;) {
        if (class_masks[c].size() != out.size()) {
            throw ShapeError("class masks differ in size");
        }
        for (std::size_t p = 0; p < out.size(); ++p) {
            if (class_masks[c][p] != 0) {
                out[p] = static_cast<std::uint16_t>(c + 1);
            }
        }
    }
    return out;
}

namespace {

void check_pct(const std::optional<double>& v, const std::string& what) {
    if (v && !(*v >= 0.0 && *v <= 100.0)) {
        throw NumericalError(what + " outside [0, 100]");
    }
}

template <typename Get>
std::optional<double> mean_of(const std::vector<SceneMetrics>& scenes, Get get) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const SceneMetrics& s : scenes) {
        if (const auto v = get(s)) {
            sum += *v;
            ++n;
        }
    }
    if (n == 0) {
        return std::nullopt;
    }
    return sum / static_cast<double>(n);
}

nlohmann::json to_json(const SceneMetrics& s) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"scene", s.scene},
            {"localization_accuracy", opt(s.localization_accuracy)},
            {"mean_iou", opt(s.mean_iou)},
            {"miou", opt(s.miou)},
            {"accuracy", opt(s.accuracy)},
            {"seconds_per_query", opt(s.seconds_per_query)}};
}

} // namespace

void MetricsReport::validate() const {
    for (const SceneMetrics* s : {&overall}) {
        check_pct(s->localization_accuracy, "localization accuracy");
    }
    for (const auto& s : scenes) {
        check_pct(s.localization_accuracy, s.scene + " localization accuracy");
        check_pct(s.mean_iou, s.scene + " mean IoU");
        check_pct(s.miou, s.scene + " mIoU");
        check_pct(s.accuracy, s.scene + " accuracy");
    }
}

MetricsReport aggregate_metrics(std::vector<SceneMetrics> scenes) {
    MetricsReport r;
    r.scenes = std::move(scenes);
    r.overall.scene = "overall";
    r.overall.localization_accuracy = mean_of(r.scenes, [](const SceneMetrics& s) { return s.localization_accuracy; });
    r.overall.mean_iou = mean_of(r.scenes, [](const SceneMetrics& s) { return s.mean_iou; });
    r.overall.miou = mean_of(r.scenes, [](const SceneMetrics& s) { return s.miou; });
    r.overall.accuracy = mean_of(r.scenes, [](const SceneMetrics& s) { return s.accuracy; });
    r.overall.seconds_per_query = mean_of(r.scenes, [](const SceneMetrics& s) { return s.seconds_per_query; });
    r.validate();
    return r;
}

void write_metrics_json(const MetricsReport& report, const std::filesystem::path& path) {
    nlohmann::json doc;
    doc["scenes"] = nlohmann::json::array();
    for (const auto& s : report.scenes) {
        doc["scenes"].push_back(to_json(s));
    }
    doc["overall"] = to_json(report.overall);
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    out << doc.dump(2) << '\n';
}

void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    out << "scene,localization_accuracy,mean_iou,miou,accuracy,seconds_per_query\n";
    auto cell = [](const std::optional<double>& v) {
        std::ostringstream s;
        if (v) {
            s << std::setprecision(10) << *v;
        }
        return s.str();
    };
    auto row = [&](const SceneMetrics& s) {
        out << s.scene << ',' << cell(s.localization_accuracy) << ',' << cell(s.mean_iou) << ',' << cell(s.miou) << ','
            << cell(s.accuracy) << ',' << cell(s.seconds_per_query) << '\n';
    };
    for (const auto& s : report.scenes) {
        row(s);
    }
    row(report.overall);
}

SceneAnnotations load_annotations(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open annotations " + path.string());
    }
    SceneAnnotations ann;
    try {
        const auto doc = nlohmann::json::parse(in);
        ann.scene = doc.value("scene", std::string("scene"));
        for (const auto& v : doc.at("views")) {
            ViewAnnotation view;
            view.image_id = v.at("image_id").get<std::string>();
            for (const auto& q : v.at("queries")) {
                QueryAnnotation qa;
                qa.label = q.at("label").get<std::string>();
                if (q.contains("bbox")) {
                    const auto b = q.at("bbox").get<std::vector<std::int64_t>>();
                    if (b.size() != 4 || b[0] > b[2] || b[1] > b[3]) {
                        throw FormatError(path.string() + ": malformed bbox for \"" + qa.label + "\"");
                    }
                    qa.bbox = BBox{b[0], b[1], b[2], b[3]};
                }
                if (q.contains("mask")) {
                    qa.mask = path.parent_path() / q.at("mask").get<std::string>();
                }
                view.queries.push_back(std::move(qa));
            }
            ann.views.push_back(std::move(view));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return ann;
}

void save_annotations(const SceneAnnotations& ann, const std::filesystem::path& path) {
    nlohmann::json doc;
    doc["scene"] = ann.scene;
    doc["views"] = nlohmann::json::array();
    for (const auto& v : ann.views) {
        nlohmann::json jv{{"image_id", v.image_id}, {"queries", nlohmann::json::array()}};
        for (const auto& q : v.queries) {
            nlohmann::json jq{{"label", q.label}};
            if (q.bbox) {
                jq["bbox"] = {q.bbox->x0, q.bbox->y0, q.bbox->x1, q.bbox->y1};
            }
            if (q.mask) {
                jq["mask"] = q.mask->generic_string();
            }
            jv["queries"].push_back(std::move(jq));
        }
        doc["views"].push_back(std::move(jv));
    }
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    out << doc.dump(2) << '\n';
}

std::vector<std::uint8_t> read_binary_mask(const std::filesystem::path& path, std::uint32_t* width,
                                           std::uint32_t* height) {
    const png::Image img = png::read(path);
    if (img.channels != 1) {
        throw FormatError(path.string() + ": mask must be single-channel");
    }
    if (width != nullptr) {
        *width = img.width;
    }
    if (height != nullptr) {
        *height = img.height;
    }
    std::vector<std::uint8_t> out(img.samples.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = img.samples[i] != 0 ? 1 : 0;
    }
    return out;
}

} // namespace langfield
