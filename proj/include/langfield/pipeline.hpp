#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "langfield/autoencoder.hpp"
#include "langfield/dataset.hpp"
#include "langfield/eval.hpp"
#include "langfield/field_trainer.hpp"
#include "langfield/masks.hpp"
#include "langfield/query.hpp"

namespace langfield {

/// Filtered label maps and embedding tables of one view, indexed by level.
struct ViewInputs {
    Camera camera;
    std::array<SegmentationMap, 3> segs;
    std::array<MaskEmbeddingTable, 3> tables;
};

/// Reads masks/ and embeddings/ for every camera and checks referential integrity.
std::vector<ViewInputs> load_view_inputs(const DatasetLayout& layout, std::span<const Camera> cameras);

/// Filters raw_masks/ into masks/ label maps. Returns the number of maps written.
std::size_t build_label_maps(const DatasetLayout& layout, std::span<const Camera> cameras,
                             const MaskFilterConfig& cfg = {});

/// Every embedding row of every table, one column per row.
Eigen::MatrixXd gather_embeddings(std::span<const ViewInputs> views);

std::vector<TrainingView> encode_targets(std::span<const ViewInputs> views, const AutoencoderParams& ae);

struct QueryEvaluation {
    std::string image_id;
    std::string label;
    Localization location;
    bool location_hit = false;
    bool has_bbox = false;
    SegmentResult segmentation;
    double iou = 0.0;
    bool has_mask = false;
};

struct EvaluationResult {
    SceneMetrics metrics;
    std::vector<QueryEvaluation> queries;
};

/// Runs localize and the configured segmentation protocol for every annotated (view, query)
/// pair. Mask paths are used as stored, so pass annotations obtained from load_annotations.
///
/// mIoU and accuracy treat each query as a class (query file order); per view the predicted
/// and ground-truth masks of the annotated queries are merged with labels_from_masks.
EvaluationResult evaluate_scene(const GaussianScene& scene, std::span<const Camera> cameras,
                                const AutoencoderParams& ae, std::span<const QueryEmbedding> queries,
                                const CanonicalSet& canon, const SceneAnnotations& annotations,
                                const QueryConfig& cfg = {}, const ProtocolConfig& protocol = {});

} // namespace langfield
