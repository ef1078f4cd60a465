#include <gtest/gtest.h>

#include <fstream>
#include <map>

#include "langfield/errors.hpp"
#include "langfield/masks.hpp"
#include "support.hpp"

using namespace langfield;

namespace {

constexpr std::uint32_t kW = 40;
constexpr std::uint32_t kH = 30;

RawMask rect_mask(std::uint32_t x0, std::uint32_t y0, std::uint32_t x1, std::uint32_t y1, double iou = 0.9,
                  double stab = 0.95) {
    RawMask m;
    m.bitmap.assign(kW * kH, 0);
    for (std::uint32_t y = y0; y < y1; ++y) {
        for (std::uint32_t x = x0; x < x1; ++x) {
            m.bitmap[y * kW + x] = 1;
        }
    }
    m.predicted_iou = iou;
    m.stability = stab;
    return m;
}

RawMaskSet make_set(std::vector<RawMask> masks) {
    RawMaskSet s;
    s.image_id = "img";
    s.level = SemanticLevel::part;
    s.width = kW;
    s.height = kH;
    s.masks = std::move(masks);
    return s;
}

RawMaskSet random_set(std::mt19937_64& rng, std::size_t n) {
    std::uniform_int_distribution<std::uint32_t> ux(0, kW - 1), uy(0, kH - 1);
    std::uniform_real_distribution<double> score(0.6, 1.0);
    std::vector<RawMask> masks;
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0 && i % 7 == 0) {
            // Near-duplicate of an earlier mask: same box grown by one column.
            RawMask m = masks[i / 2];
            for (std::uint32_t y = 0; y < kH; ++y) {
                for (std::uint32_t x = 1; x < kW; ++x) {
                    m.bitmap[y * kW + x - 1] |= m.bitmap[y * kW + x];
                }
            }
            m.predicted_iou = score(rng);
            masks.push_back(m);
            continue;
        }
        auto a = ux(rng), b = ux(rng), c = uy(rng), d = uy(rng);
        masks.push_back(rect_mask(std::min(a, b), std::min(c, d), std::max(a, b) + 1, std::max(c, d) + 1, score(rng),
                                  score(rng)));
    }
    return make_set(std::move(masks));
}

// Pairwise IoU from integer counts, then the greedy keep rule applied over the full matrix.
std::vector<std::size_t> nms_oracle(const RawMaskSet& s, const MaskFilterConfig& cfg) {
    const std::size_t n = s.masks.size();
    std::vector<std::vector<double>> iou(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            std::size_t inter = 0, uni = 0;
            for (std::size_t p = 0; p < s.masks[i].bitmap.size(); ++p) {
                const bool a = s.masks[i].bitmap[p] != 0, b = s.masks[j].bitmap[p] != 0;
                inter += a && b;
                uni += a || b;
            }
            iou[i][j] = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
        }
    }
    std::vector<std::size_t> cand;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& m = s.masks[i];
        const bool nonempty = std::count(m.bitmap.begin(), m.bitmap.end(), 1) > 0;
        if (m.predicted_iou >= cfg.min_predicted_iou && m.stability >= cfg.min_stability && nonempty) {
            cand.push_back(i);
        }
    }
    // Selection sort by descending score, lowest index first on ties.
    std::vector<std::size_t> sorted;
    while (!cand.empty()) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < cand.size(); ++c) {
            if (s.masks[cand[c]].predicted_iou > s.masks[cand[best]].predicted_iou) {
                best = c;
            }
        }
        sorted.push_back(cand[best]);
        cand.erase(cand.begin() + static_cast<std::ptrdiff_t>(best));
    }
    std::vector<std::size_t> kept;
    for (std::size_t i : sorted) {
        bool ok = true;
        for (std::size_t k : kept) {
            ok = ok && iou[k][i] < cfg.max_overlap;
        }
        if (ok) {
            kept.push_back(i);
        }
    }
    return kept;
}

} // namespace

TEST(FilterMasks, IdenticalBitmapsKeepHigherScore) {
    const auto out = filter_masks(make_set({rect_mask(2, 2, 10, 10, 0.8), rect_mask(2, 2, 10, 10, 0.9)}));
    ASSERT_EQ(out.masks.size(), 1u);
    EXPECT_DOUBLE_EQ(out.masks[0].predicted_iou, 0.9);
}

TEST(FilterMasks, DisjointMasksAllKept) {
    const auto out = filter_masks(make_set({rect_mask(0, 0, 5, 5), rect_mask(10, 10, 20, 20), rect_mask(30, 0, 40, 5)}));
    EXPECT_EQ(out.masks.size(), 3u);
}

TEST(FilterMasks, ScoreThresholdsAndEmptyMasks) {
    RawMask empty = rect_mask(0, 0, 0, 0);
    const auto out = filter_masks(make_set({rect_mask(0, 0, 5, 5, 0.69), rect_mask(10, 10, 20, 20, 0.9, 0.84),
                                            rect_mask(30, 0, 40, 5, 0.7, 0.85), empty}));
    ASSERT_EQ(out.masks.size(), 1u);
    EXPECT_DOUBLE_EQ(out.masks[0].predicted_iou, 0.7);
}

TEST(FilterMasks, MatchesExhaustiveNms) {
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        const RawMaskSet raw = random_set(rng, 50);
        MaskFilterConfig cfg;
        cfg.max_overlap = trial % 2 == 0 ? 0.8 : 0.5;
        const auto out = filter_masks(raw, cfg);
        const auto ref = nms_oracle(raw, cfg);
        ASSERT_EQ(out.masks.size(), ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) {
            EXPECT_EQ(out.masks[i].bitmap, raw.masks[ref[i]].bitmap);
            EXPECT_EQ(out.masks[i].predicted_iou, raw.masks[ref[i]].predicted_iou);
        }
    }
}

TEST(FilterMasks, IdempotentAndPairwiseBelowOverlap) {
    std::mt19937_64 rng(7);
    const MaskFilterConfig cfg;
    for (int trial = 0; trial < 10; ++trial) {
        const auto once = filter_masks(random_set(rng, 40), cfg);
        const auto twice = filter_masks(once, cfg);
        ASSERT_EQ(once.masks.size(), twice.masks.size());
        for (std::size_t i = 0; i < once.masks.size(); ++i) {
            EXPECT_EQ(once.masks[i].bitmap, twice.masks[i].bitmap);
            for (std::size_t j = i + 1; j < once.masks.size(); ++j) {
                EXPECT_LT(bitmap_iou(once.masks[i].bitmap, once.masks[j].bitmap), cfg.max_overlap);
            }
        }
    }
}

TEST(FilterMasks, RejectsMismatchedBitmaps) {
    RawMaskSet s = make_set({rect_mask(0, 0, 5, 5)});
    s.masks[0].bitmap.pop_back();
    EXPECT_THROW(filter_masks(s), FormatError);
    s = make_set({rect_mask(0, 0, 5, 5)});
    s.masks[0].stability = std::nan("");
    EXPECT_THROW(filter_masks(s), FormatError);
}

TEST(SegmentationMap, FullFrameMask) {
    const auto built = build_segmentation_map(make_set({rect_mask(0, 0, kW, kH)}));
    EXPECT_EQ(built.map.mask_count, 1u);
    for (auto l : built.map.labels) {
        EXPECT_EQ(l, 1);
    }
}

TEST(SegmentationMap, SmallMaskWinsInsideBig) {
    const auto built = build_segmentation_map(make_set({rect_mask(10, 10, 14, 14), rect_mask(0, 0, 30, 25)}));
    EXPECT_EQ(built.map.label(12, 12), 2);
    EXPECT_EQ(built.map.label(2, 2), 1);
    EXPECT_EQ(built.map.label(35, 28), 0);
    EXPECT_EQ(built.source_mask, (std::vector<std::size_t>{1, 0}));
}

TEST(SegmentationMap, MatchesContainmentOracle) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const RawMaskSet set = random_set(rng, 20);
        const auto built = build_segmentation_map(set);
        // Ids are dense 1..K.
        ASSERT_EQ(built.map.mask_count, set.masks.size());
        for (std::size_t p = 0; p < std::size_t{kW} * kH; ++p) {
            // Smallest containing mask; equal areas resolve to the later mask in input order.
            std::optional<std::size_t> best;
            for (std::size_t m = 0; m < set.masks.size(); ++m) {
                if (set.masks[m].bitmap[p] == 0) {
                    continue;
                }
                if (!best || set.masks[m].area() <= set.masks[*best].area()) {
                    best = m;
                }
            }
            const std::uint16_t got = built.map.labels[p];
            if (!best) {
                EXPECT_EQ(got, 0);
                continue;
            }
            ASSERT_GT(got, 0);
            EXPECT_EQ(built.source_mask[got - 1], *best) << "pixel " << p;
        }
    }
}

TEST(PixelEmbeddings, DictionaryLookup) {
    std::mt19937_64 rng(9);
    const auto built = build_segmentation_map(random_set(rng, 12));
    MaskEmbeddingTable table;
    table.dim = 8;
    std::map<std::uint16_t, std::vector<double>> dict;
    for (std::uint32_t id = 1; id <= built.map.mask_count; ++id) {
        const auto v = lft::unit_vector(rng, table.dim);
        dict[static_cast<std::uint16_t>(id)] = v;
        for (double x : v) {
            table.rows.push_back(static_cast<float>(x));
        }
    }
    EXPECT_NO_THROW(table.validate());
    std::vector<Pixel> pixels;
    for (std::uint32_t y = 0; y < kH; ++y) {
        for (std::uint32_t x = 0; x < kW; ++x) {
            pixels.push_back({x, y});
        }
    }
    const auto out = assign_pixel_embeddings(built.map, table, pixels);
    ASSERT_EQ(out.size(), pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const std::uint16_t l = built.map.label(pixels[i].x, pixels[i].y);
        if (l == 0) {
            EXPECT_FALSE(out[i].has_value());
            continue;
        }
        ASSERT_TRUE(out[i].has_value());
        double norm = 0;
        for (std::size_t c = 0; c < table.dim; ++c) {
            EXPECT_EQ((*out[i])[c], static_cast<float>(dict[l][c]));
            norm += (*out[i])[c] * double((*out[i])[c]);
        }
        EXPECT_NEAR(std::sqrt(norm), 1.0, 1e-4);
    }
}

TEST(PixelEmbeddings, MissingRowIsAnError) {
    const auto built = build_segmentation_map(make_set({rect_mask(0, 0, 5, 5), rect_mask(10, 10, 20, 20)}));
    MaskEmbeddingTable table;
    table.dim = 2;
    table.rows = {1.0f, 0.0f};
    EXPECT_THROW(check_consistency(built.map, table), FormatError);
    const std::vector<Pixel> px{{2, 2}}; // label 2, the smaller mask
    EXPECT_THROW(assign_pixel_embeddings(built.map, table, px), FormatError);
}

TEST(MaskFiles, LembRoundTripAndValidation) {
    lft::TempDir dir("lemb");
    MaskEmbeddingTable t;
    t.dim = 3;
    t.rows = {1, 0, 0, 0, 0.6f, 0.8f};
    write_lemb(t, dir / "a.lemb");
    EXPECT_EQ(std::filesystem::file_size(dir / "a.lemb"), 4u + 8u + 6u * 4u);
    const auto back = read_lemb(dir / "a.lemb", "x", SemanticLevel::whole);
    EXPECT_EQ(back.rows, t.rows);
    EXPECT_EQ(back.mask_count(), 2u);

    MaskEmbeddingTable bad = t;
    bad.rows[0] = 0.5f;
    EXPECT_THROW(bad.validate(), FormatError);
    EXPECT_THROW(write_lemb(bad, dir / "b.lemb"), FormatError);

    std::filesystem::resize_file(dir / "a.lemb", 20);
    EXPECT_THROW(read_lemb(dir / "a.lemb", "x", SemanticLevel::whole), FormatError);
}

TEST(MaskFiles, SegmentationPngRoundTrip) {
    std::mt19937_64 rng(1);
    const auto built = build_segmentation_map(random_set(rng, 30));
    lft::TempDir dir("seg");
    write_segmentation_map(built.map, dir / "s.png");
    const auto back = read_segmentation_map(dir / "s.png", "img", SemanticLevel::part);
    EXPECT_EQ(back.width, kW);
    EXPECT_EQ(back.height, kH);
    EXPECT_EQ(back.labels, built.map.labels);
}

TEST(MaskFiles, RawMaskDirectoryRoundTrip) {
    std::mt19937_64 rng(3);
    const RawMaskSet set = random_set(rng, 6);
    lft::TempDir dir("raw");
    write_raw_mask_set(set, dir.path());
    const auto back = read_raw_mask_set(dir.path(), "img", SemanticLevel::part);
    ASSERT_EQ(back.masks.size(), set.masks.size());
    for (std::size_t i = 0; i < set.masks.size(); ++i) {
        for (std::size_t p = 0; p < set.masks[i].bitmap.size(); ++p) {
            EXPECT_EQ(back.masks[i].bitmap[p] != 0, set.masks[i].bitmap[p] != 0);
        }
        EXPECT_DOUBLE_EQ(back.masks[i].predicted_iou, set.masks[i].predicted_iou);
        EXPECT_DOUBLE_EQ(back.masks[i].stability, set.masks[i].stability);
    }
}
