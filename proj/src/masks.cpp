#include "langfield/masks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "binary_io.hpp"
#include "json.hpp"
#include "langfield/errors.hpp"
#include "langfield/png_io.hpp"

namespace langfield {

std::size_t RawMask::area() const {
    return static_cast<std::size_t>(std::count_if(bitmap.begin(), bitmap.end(), [](std::uint8_t v) { return v != 0; }));
}

void RawMaskSet::validate() const {
    const std::size_t n = std::size_t{width} * height;
    if (n == 0) {
        throw FormatError("raw mask set " + image_id + ": empty image size");
    }
    for (std::size_t i = 0; i < masks.size(); ++i) {
        if (masks[i].bitmap.size() != n) {
            throw FormatError("raw mask set " + image_id + ": mask " + std::to_string(i) +
                              " does not match image size");
        }
        if (!std::isfinite(masks[i].predicted_iou) || !std::isfinite(masks[i].stability)) {
            throw FormatError("raw mask set " + image_id + ": non-finite score on mask " + std::to_string(i));
        }
    }
}

double bitmap_iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    if (a.size() != b.size()) {
        throw ShapeError("bitmap sizes differ");
    }
    std::size_t inter = 0;
    std::size_t uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool ia = a[i] != 0;
        const bool ib = b[i] != 0;
        inter += static_cast<std::size_t>(ia && ib);
        uni += static_cast<std::size_t>(ia || ib);
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

RawMaskSet filter_masks(const RawMaskSet& raw, const MaskFilterConfig& cfg) {
    raw.validate();
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < raw.masks.size(); ++i) {
        const RawMask& m = raw.masks[i];
        if (m.predicted_iou >= cfg.min_predicted_iou && m.stability >= cfg.min_stability && m.area() > 0) {
            candidates.push_back(i);
        }
    }
    std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
        return raw.masks[a].predicted_iou > raw.masks[b].predicted_iou;
    });

    RawMaskSet out;
    out.image_id = raw.image_id;
    out.level = raw.level;
    out.width = raw.width;
    out.height = raw.height;
    for (std::size_t i : candidates) {
        const RawMask& m = raw.masks[i];
        const bool redundant = std::any_of(out.masks.begin(), out.masks.end(), [&](const RawMask& kept) {
            return bitmap_iou(kept.bitmap, m.bitmap) >= cfg.max_overlap;
        });
        if (!redundant) {
            out.masks.push_back(m);
        }
    }
    return out;
}

BuiltSegmentation build_segmentation_map(const RawMaskSet& filtered) {
    filtered.validate();
    if (filtered.masks.size() > 65535) {
        throw FormatError("too many masks for a 16-bit label map: " + std::to_string(filtered.masks.size()));
    }
    std::vector<std::size_t> areas(filtered.masks.size());
    for (std::size_t i = 0; i < areas.size(); ++i) {
        areas[i] = filtered.masks[i].area();
    }
    std::vector<std::size_t> order(filtered.masks.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return areas[a] > areas[b]; });

    BuiltSegmentation out;
    SegmentationMap& seg = out.map;
    seg.image_id = filtered.image_id;
    seg.level = filtered.level;
    seg.width = filtered.width;
    seg.height = filtered.height;
    seg.mask_count = static_cast<std::uint32_t>(order.size());
    seg.labels.assign(std::size_t{seg.width} * seg.height, 0);
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        const auto id = static_cast<std::uint16_t>(rank + 1);
        const auto& bitmap = filtered.masks[order[rank]].bitmap;
        for (std::size_t p = 0; p < bitmap.size(); ++p) {
            if (bitmap[p] != 0) {
                seg.labels[p] = id;
            }
        }
    }
    out.source_mask = std::move(order);
    return out;
}

void MaskEmbeddingTable::validate() const {
    if (dim == 0) {
        throw FormatError("embedding table " + image_id + ": dimension must be >= 1");
    }
    if (rows.size() % dim != 0) {
        throw FormatError("embedding table " + image_id + ": row storage is not a multiple of dim");
    }
    for (std::size_t k = 0; k < mask_count(); ++k) {
        double n2 = 0.0;
        for (std::size_t c = 0; c < dim; ++c) {
            const double v = rows[k * dim + c];
            if (!std::isfinite(v)) {
                throw FormatError("embedding table " + image_id + ": non-finite value in row " + std::to_string(k + 1));
            }
            n2 += v * v;
        }
        if (std::abs(std::sqrt(n2) - 1.0) > 1e-4) {
            throw FormatError("embedding table " + image_id + ": row " + std::to_string(k + 1) + " is not unit norm");
        }
    }
}

void check_consistency(const SegmentationMap& seg, const MaskEmbeddingTable& table) {
    if (seg.labels.size() != std::size_t{seg.width} * seg.height) {
        throw FormatError("segmentation map " + seg.image_id + ": label buffer does not match size");
    }
    const std::size_t k = table.mask_count();
    for (std::uint16_t id : seg.labels) {
        if (id > k) {
            throw FormatError("segmentation map " + seg.image_id + " (" + std::string(level_name(seg.level)) +
                              "): label " + std::to_string(id) + " has no embedding row (table has " +
                              std::to_string(k) + ")");
        }
    }
}

std::vector<std::optional<std::span<const float>>>
assign_pixel_embeddings(const SegmentationMap& seg, const MaskEmbeddingTable& table,
                        std::span<const Pixel> pixels) {
    std::vector<std::optional<std::span<const float>>> out;
    out.reserve(pixels.size());
    const std::size_t k = table.mask_count();
    for (const Pixel& p : pixels) {
        if (p.x >= seg.width || p.y >= seg.height) {
            throw ShapeError("pixel (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ") outside map");
        }
        const std::uint16_t id = seg.label(p.x, p.y);
        if (id == 0) {
            out.emplace_back(std::nullopt);
            continue;
        }
        if (id > k) {
            throw FormatError("segmentation map " + seg.image_id + ": label " + std::to_string(id) +
                              " has no embedding row");
        }
        out.emplace_back(table.row(id));
    }
    return out;
}

SegmentationMap read_segmentation_map(const std::filesystem::path& path, std::string image_id,
                                      SemanticLevel level) {
    const png::Image img = png::read(path);
    if (img.channels != 1) {
        throw FormatError(path.string() + ": label map must be single-channel grayscale");
    }
    SegmentationMap seg;
    seg.image_id = std::move(image_id);
    seg.level = level;
    seg.width = img.width;
    seg.height = img.height;
    seg.labels.assign(img.samples.begin(), img.samples.end());
    seg.mask_count = seg.labels.empty() ? 0 : *std::max_element(seg.labels.begin(), seg.labels.end());
    return seg;
}

void write_segmentation_map(const SegmentationMap& seg, const std::filesystem::path& path) {
    png::write_gray16(path, seg.width, seg.height, seg.labels);
}

MaskEmbeddingTable read_lemb(const std::filesystem::path& path, std::string image_id, SemanticLevel level) {
    detail::BinaryReader in(path);
    in.expect_magic("LEMB");
    MaskEmbeddingTable table;
    table.image_id = std::move(image_id);
    table.level = level;
    table.dim = in.get<std::uint32_t>();
    const auto k = in.get<std::uint32_t>();
    if (in.remaining() != std::size_t{k} * table.dim * sizeof(float)) {
        throw FormatError(in.name() + ": payload size does not match header");
    }
    table.rows.resize(std::size_t{k} * table.dim);
    in.get_all(std::span<float>(table.rows));
    try {
        table.validate();
    } catch (const FormatError& e) {
        throw FormatError(in.name() + ": " + e.what());
    }
    return table;
}

void write_lemb(const MaskEmbeddingTable& table, const std::filesystem::path& path) {
    table.validate();
    detail::BinaryWriter out;
    out.magic("LEMB");
    out.put<std::uint32_t>(table.dim);
    out.put<std::uint32_t>(static_cast<std::uint32_t>(table.mask_count()));
    out.put_all<float>(table.rows);
    out.write_file(path);
}

namespace {

std::string mask_stem(std::size_t i) {
    std::ostringstream s;
    s << "mask_" << std::setw(4) << std::setfill('0') << i;
    return s.str();
}

} // namespace

RawMaskSet read_raw_mask_set(const std::filesystem::path& dir, std::string image_id, SemanticLevel level) {
    if (!std::filesystem::is_directory(dir)) {
        throw FormatError("raw mask directory not found: " + dir.string());
    }
    std::vector<std::filesystem::path> pngs;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() == ".png") {
            pngs.push_back(entry.path());
        }
    }
    std::sort(pngs.begin(), pngs.end());

    RawMaskSet set;
    set.image_id = std::move(image_id);
    set.level = level;
    for (const auto& p : pngs) {
        const png::Image img = png::read(p);
        if (img.channels != 1) {
            throw FormatError(p.string() + ": mask must be single-channel");
        }
        if (set.masks.empty()) {
            set.width = img.width;
            set.height = img.height;
        } else if (img.width != set.width || img.height != set.height) {
            throw FormatError(p.string() + ": mask size differs from the rest of the set");
        }
        RawMask m;
        m.bitmap.resize(img.samples.size());
        std::transform(img.samples.begin(), img.samples.end(), m.bitmap.begin(),
                       [](std::uint16_t v) { return static_cast<std::uint8_t>(v != 0); });

        std::filesystem::path sidecar = p;
        sidecar.replace_extension(".json");
        std::ifstream in(sidecar);
        if (!in) {
            throw FormatError("missing score sidecar " + sidecar.string());
        }
        try {
            const auto j = nlohmann::json::parse(in);
            m.predicted_iou = j.at("predicted_iou").get<double>();
            m.stability = j.at("stability").get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(sidecar.string() + ": " + e.what());
        }
        set.masks.push_back(std::move(m));
    }
    if (!set.masks.empty()) {
        set.validate();
    }
    return set;
}

void write_raw_mask_set(const RawMaskSet& set, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < set.masks.size(); ++i) {
        const std::string stem = mask_stem(i);
        png::write_mask1(dir / (stem + ".png"), set.width, set.height, set.masks[i].bitmap);
        nlohmann::json j = {{"predicted_iou", set.masks[i].predicted_iou}, {"stability", set.masks[i].stability}};
        std::ofstream out(dir / (stem + ".json"));
        out << j.dump() << '\n';
    }
}

} // namespace langfield
