#include "langfield/pipeline.hpp"

#include <algorithm>
#include <map>

#include "langfield/errors.hpp"
#include "langfield/parallel.hpp"

namespace langfield {

std::vector<ViewInputs> load_view_inputs(const DatasetLayout& layout, std::span<const Camera> cameras) {
    std::vector<ViewInputs> out(cameras.size());
    for (std::size_t v = 0; v < cameras.size(); ++v) {
        const Camera& cam = cameras[v];
        out[v].camera = cam;
        for (SemanticLevel l : kLevels) {
            const std::size_t li = level_index(l);
            out[v].segs[li] = read_segmentation_map(layout.seg_map(cam.id, l), cam.id, l);
            out[v].tables[li] = read_lemb(layout.embeddings(cam.id, l), cam.id, l);
            const auto& seg = out[v].segs[li];
            if (seg.width != cam.width || seg.height != cam.height) {
                throw FormatError(layout.seg_map(cam.id, l).string() + ": size does not match camera " + cam.id);
            }
            out[v].tables[li].validate();
            check_consistency(seg, out[v].tables[li]);
        }
        if (out[v].tables[0].dim != out[0].tables[0].dim || out[v].tables[1].dim != out[v].tables[0].dim ||
            out[v].tables[2].dim != out[v].tables[0].dim) {
            throw FormatError("embedding dimension differs between tables of " + cam.id);
        }
    }
    return out;
}

std::size_t build_label_maps(const DatasetLayout& layout, std::span<const Camera> cameras,
                             const MaskFilterConfig& cfg) {
    std::size_t written = 0;
    for (const Camera& cam : cameras) {
        for (SemanticLevel l : kLevels) {
            const RawMaskSet raw = read_raw_mask_set(layout.raw_masks(cam.id, l), cam.id, l);
            write_segmentation_map(build_segmentation_map(filter_masks(raw, cfg)).map, layout.seg_map(cam.id, l));
            ++written;
        }
    }
    return written;
}

Eigen::MatrixXd gather_embeddings(std::span<const ViewInputs> views) {
    std::size_t cols = 0;
    std::uint32_t dim = 0;
    for (const auto& v : views) {
        for (const auto& t : v.tables) {
            cols += t.mask_count();
            dim = t.dim;
        }
    }
    Eigen::MatrixXd out(dim, static_cast<Eigen::Index>(cols));
    Eigen::Index c = 0;
    for (const auto& v : views) {
        for (const auto& t : v.tables) {
            for (std::uint32_t id = 1; id <= t.mask_count(); ++id) {
                const auto row = t.row(id);
                for (std::uint32_t i = 0; i < dim; ++i) {
                    out(i, c) = row[i];
                }
                ++c;
            }
        }
    }
    return out;
}

std::vector<TrainingView> encode_targets(std::span<const ViewInputs> views, const AutoencoderParams& ae) {
    std::vector<TrainingView> out(views.size());
    parallel_for(views.size(), [&](std::size_t v) {
        out[v] = make_training_view(views[v].camera, views[v].segs, views[v].tables, ae);
    });
    return out;
}

EvaluationResult evaluate_scene(const GaussianScene& scene, std::span<const Camera> cameras,
                                const AutoencoderParams& ae, std::span<const QueryEmbedding> queries,
                                const CanonicalSet& canon, const SceneAnnotations& annotations,
                                const QueryConfig& cfg, const ProtocolConfig& protocol) {
    std::map<std::string, const Camera*> cam_by_id;
    for (const Camera& c : cameras) {
        cam_by_id[c.id] = &c;
    }
    std::map<std::string, std::size_t> query_by_label;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        query_by_label.emplace(queries[i].label, i);
    }

    EvaluationResult result;
    result.metrics.scene = annotations.scene;
    std::vector<PixelPrediction> preds;
    std::vector<BBox> boxes;
    std::vector<std::vector<std::uint8_t>> pred_masks;
    std::vector<std::vector<std::uint8_t>> gt_masks;
    std::vector<std::vector<std::uint16_t>> pred_labels;
    std::vector<std::vector<std::uint16_t>> gt_labels;

    for (const ViewAnnotation& view : annotations.views) {
        const auto cam_it = cam_by_id.find(view.image_id);
        if (cam_it == cam_by_id.end()) {
            throw FormatError("annotation references unknown camera " + view.image_id);
        }
        const Camera& cam = *cam_it->second;
        std::array<FeatureImage, 3> decoded;
        for (SemanticLevel l : kLevels) {
            decoded[level_index(l)] = decode_level(scene, cam, ae, l, cfg);
        }
        const std::size_t n_pixels = std::size_t{cam.width} * cam.height;
        std::vector<std::vector<std::uint8_t>> view_pred(queries.size(), std::vector<std::uint8_t>(n_pixels, 0));
        std::vector<std::vector<std::uint8_t>> view_gt(queries.size(), std::vector<std::uint8_t>(n_pixels, 0));
        bool view_has_mask = false;
        for (const QueryAnnotation& qa : view.queries) {
            const auto q_it = query_by_label.find(qa.label);
            if (q_it == query_by_label.end()) {
                throw FormatError("annotation references unknown query " + qa.label);
            }
            MapTriple maps;
            for (SemanticLevel l : kLevels) {
                maps[level_index(l)] = relevancy_map(decoded[level_index(l)], queries[q_it->second], canon, l, cfg);
            }
            QueryEvaluation qe;
            qe.image_id = view.image_id;
            qe.label = qa.label;
            if (qa.bbox) {
                qe.location = localize(maps, protocol.smooth_size);
                qe.has_bbox = true;
                qe.location_hit = qa.bbox->contains(qe.location.x, qe.location.y);
                preds.push_back({qe.location.x, qe.location.y});
                boxes.push_back(*qa.bbox);
            }
            if (qa.mask) {
                std::uint32_t w = 0;
                std::uint32_t h = 0;
                auto gt = read_binary_mask(*qa.mask, &w, &h);
                if (w != cam.width || h != cam.height) {
                    throw FormatError("ground-truth mask size does not match camera " + cam.id);
                }
                qe.segmentation = segment(maps, protocol);
                qe.has_mask = true;
                qe.iou = mask_iou(qe.segmentation.mask, gt);
                view_pred[q_it->second] = qe.segmentation.mask;
                view_gt[q_it->second] = gt;
                view_has_mask = true;
                pred_masks.push_back(qe.segmentation.mask);
                gt_masks.push_back(std::move(gt));
            }
            result.queries.push_back(std::move(qe));
        }
        if (view_has_mask) {
            pred_labels.push_back(labels_from_masks(view_pred));
            gt_labels.push_back(labels_from_masks(view_gt));
        }
    }
    if (!preds.empty()) {
        result.metrics.localization_accuracy = eval_localization(preds, boxes);
    }
    if (!pred_masks.empty()) {
        result.metrics.mean_iou = eval_iou(pred_masks, gt_masks);
        const ClassMetrics cm =
            eval_miou_accuracy(pred_labels, gt_labels, static_cast<std::uint32_t>(queries.size()));
        result.metrics.miou = cm.miou;
        result.metrics.accuracy = cm.accuracy;
    }
    return result;
}

} // namespace langfield
