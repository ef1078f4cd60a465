#include <gtest/gtest.h>

#include "langfield/errors.hpp"
#include "langfield/query.hpp"
#include "langfield/synth.hpp"
#include "support.hpp"

using namespace langfield;

namespace {

// Image embedding and canonical phrases built so the dot products are prescribed exactly:
// img = e0, qry = q_dot * e0 + ..., canon_i = c_i * e0 + ...
struct DotSetup {
    std::vector<double> img;
    std::vector<double> qry;
    CanonicalSet canon;
};

DotSetup with_dots(double q, std::array<double, 4> c) {
    DotSetup s;
    s.img = {1, 0, 0, 0, 0, 0};
    s.qry = {q, 1, 0, 0, 0, 0};
    for (std::size_t i = 0; i < 4; ++i) {
        s.canon.phrases[i] = {c[i], 0, 0, 0, 0, 0};
        s.canon.phrases[i][i + 2] = 1;
    }
    return s;
}

CanonicalSet random_canon(std::mt19937_64& rng, std::size_t d) {
    CanonicalSet c;
    for (auto& p : c.phrases) {
        p = lft::unit_vector(rng, d);
    }
    return c;
}

MapTriple constant_triple(std::uint32_t w, std::uint32_t h, double v) {
    MapTriple t;
    for (std::size_t l = 0; l < 3; ++l) {
        t[l] = lft::make_map(w, h, std::vector<double>(std::size_t{w} * h, v), kLevels[l]);
    }
    return t;
}

} // namespace

TEST(Relevancy, EqualDotsGiveOneHalf) {
    const auto s = with_dots(0.3, {0.3, 0.3, 0.3, 0.3});
    EXPECT_NEAR(relevancy(s.img, s.qry, s.canon), 0.5, 1e-12);
}

TEST(Relevancy, HandValue) {
    const auto s = with_dots(2.0, {1.0, 0.0, 0.0, 0.0});
    const double expected = 1.0 / (1.0 + std::exp(-1.0));
    EXPECT_NEAR(relevancy(s.img, s.qry, s.canon), expected, 1e-12);
    EXPECT_NEAR(expected, 0.73106, 1e-5);
}

TEST(Relevancy, LimitAndMonotonicity) {
    double prev = 1.0;
    for (double q = 0.0; q >= -60.0; q -= 2.0) {
        const auto s = with_dots(q, {0.5, 0.1, -0.2, 0.4});
        const double r = relevancy(s.img, s.qry, s.canon);
        EXPECT_LE(r, prev);
        EXPECT_GE(r, 0.0);
        prev = r;
    }
    EXPECT_LT(prev, 1e-25);
}

TEST(Relevancy, ShiftInvariantAndBounded) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int i = 0; i < 200; ++i) {
        const double q = u(rng);
        const std::array<double, 4> c{u(rng), u(rng), u(rng), u(rng)};
        const double shift = u(rng);
        const auto a = with_dots(q, c);
        const auto b = with_dots(q + shift, {c[0] + shift, c[1] + shift, c[2] + shift, c[3] + shift});
        const double ra = relevancy(a.img, a.qry, a.canon);
        EXPECT_NEAR(ra, relevancy(b.img, b.qry, b.canon), 1e-12);
        EXPECT_GT(ra, 0.0);
        EXPECT_LT(ra, 1.0);
    }
}

TEST(Relevancy, MatchesHighPrecisionOracle) {
    std::mt19937_64 rng(2);
    for (int i = 0; i < 200; ++i) {
        const std::size_t d = 2 + i % 30;
        const auto img = lft::unit_vector(rng, d);
        const auto qry = lft::unit_vector(rng, d);
        const auto canon = random_canon(rng, d);
        EXPECT_NEAR(relevancy(img, qry, canon), static_cast<double>(lft::relevancy_oracle(img, qry, canon)), 1e-9);
    }
}

TEST(RelevancyMaps, DecodedEqualsQueryEverywhere) {
    const std::size_t big_d = 6;
    QueryEmbedding q{"thing", {0, 0, 1, 0, 0, 0}};
    CanonicalSet canon;
    for (std::size_t i = 0; i < 4; ++i) {
        canon.phrases[i].assign(big_d, 0.0);
        canon.phrases[i][i < 2 ? i : i + 1] = 1.0;
    }
    AutoencoderArch arch;
    arch.hidden = {4};
    auto ae = init_autoencoder(big_d, 3, arch, 1);
    ae.decoder.back().weight.setZero();
    ae.decoder.back().bias = Eigen::Map<const Eigen::VectorXd>(q.vector.data(), big_d) * 2.5;
    std::mt19937_64 rng(3);
    const auto scene = lft::random_scene(rng, 100, 3);
    const auto maps = relevancy_maps(scene, lft::simple_camera(20, 16, 40.0), ae, q, canon);
    const double expected = std::exp(1.0) / (std::exp(1.0) + std::exp(0.0));
    for (std::size_t l = 0; l < 3; ++l) {
        EXPECT_EQ(maps[l].level, kLevels[l]);
        for (double v : maps[l].values) {
            EXPECT_NEAR(v, expected, 1e-12);
        }
    }
}

TEST(RelevancyMaps, MatchPerPixelLoop) {
    std::mt19937_64 rng(4);
    const std::size_t big_d = 24;
    AutoencoderArch arch;
    arch.hidden = {12, 6};
    const auto ae = init_autoencoder(big_d, 3, arch, 8);
    auto scene = lft::random_scene(rng, 300, 3, 2.0, 6.0, 0.6);
    const Camera cam = lft::simple_camera(32, 24, 40.0);
    const QueryEmbedding q{"q", lft::unit_vector(rng, big_d)};
    const auto canon = random_canon(rng, big_d);
    for (bool normalize : {true, false}) {
        QueryConfig cfg;
        cfg.normalize = normalize;
        const auto maps = relevancy_maps(scene, cam, ae, q, canon, cfg);
        std::size_t background = 0;
        for (std::size_t l = 0; l < 3; ++l) {
            const auto img = render_level(scene, cam, kLevels[l]);
            for (std::size_t p = 0; p < cam.pixel_count(); ++p) {
                const auto lat = img.pixel(p);
                auto dec = decode(ae, std::vector<double>(lat.begin(), lat.end()));
                if (normalize) {
                    double n = 0;
                    for (double v : dec) {
                        n += v * v;
                    }
                    for (double& v : dec) {
                        v = n > 0 ? v / std::sqrt(n) : 0.0; // a zero vector stays zero
                    }
                }
                const double ref = static_cast<double>(lft::relevancy_oracle(dec, q.vector, canon));
                EXPECT_NEAR(maps[l].values[p], ref, 1e-6);
                EXPECT_GT(maps[l].values[p], 0.0);
                EXPECT_LT(maps[l].values[p], 1.0);
                background += img.alpha[p] == 0.0;
            }
        }
        EXPECT_GT(background, 0u); // empty pixels decode the zero latent and stay finite
    }
}

TEST(Smooth, SizeOneIsIdentityAndConstantIsFixed) {
    std::mt19937_64 rng(5);
    const auto t = lft::random_triple(rng, 13, 9);
    EXPECT_EQ(smooth(t[0], 1).values, t[0].values);
    const auto c = constant_triple(17, 11, 0.37);
    for (double v : smooth(c[0], 20).values) {
        EXPECT_NEAR(v, 0.37, 1e-15);
    }
    EXPECT_THROW(smooth(c[0], 0), ConfigError);
}

TEST(Smooth, MatchesNaiveBoxFilter) {
    std::mt19937_64 rng(6);
    for (std::uint32_t size : {2u, 3u, 7u, 20u, 33u}) {
        const auto t = lft::random_triple(rng, 64, 64);
        for (const auto& m : t) {
            EXPECT_LE(lft::max_abs_diff(smooth(m, size).values, lft::naive_smooth(m, size)), 1e-6) << size;
        }
    }
    // Maps smaller than the window.
    const auto t = lft::random_triple(rng, 5, 3);
    EXPECT_LE(lft::max_abs_diff(smooth(t[1], 20).values, lft::naive_smooth(t[1], 20)), 1e-6);
}

TEST(Localize, SpikeInPartMap) {
    auto t = constant_triple(30, 30, 0.2);
    t[1].values[12 * 30 + 7] = 50.0;
    const auto loc = localize(t, 1);
    EXPECT_EQ(loc.level, SemanticLevel::part);
    EXPECT_EQ(loc.x, 7u);
    EXPECT_EQ(loc.y, 12u);
    EXPECT_DOUBLE_EQ(loc.score, 50.0);
    // With the default window the spike still wins, somewhere around it.
    const auto wide = localize(t);
    EXPECT_EQ(wide.level, SemanticLevel::part);
    EXPECT_LE(std::abs(static_cast<int>(wide.x) - 7), 10);
    EXPECT_LE(std::abs(static_cast<int>(wide.y) - 12), 10);
}

TEST(Localize, AllEqualPicksSubpartOrigin) {
    const auto loc = localize(constant_triple(20, 10, 0.5));
    EXPECT_EQ(loc.level, SemanticLevel::subpart);
    EXPECT_EQ(loc.x, 0u);
    EXPECT_EQ(loc.y, 0u);
}

TEST(Localize, MatchesExhaustiveOracleAndIsArgmaxConsistent) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        const auto t = lft::random_triple(rng, 24 + trial, 20);
        const std::uint32_t size = trial % 3 == 0 ? 20 : 1 + trial % 7;
        const auto loc = localize(t, size);
        const auto ref = lft::localize_oracle(t, size);
        EXPECT_EQ(loc.x, ref.x);
        EXPECT_EQ(loc.y, ref.y);
        EXPECT_EQ(level_index(loc.level), ref.level);
        const auto sm = smooth(t[level_index(loc.level)], size);
        EXPECT_EQ(loc.score, sm.at(loc.x, loc.y));
        for (const auto& m : t) {
            for (double v : smooth(m, size).values) {
                EXPECT_LE(v, loc.score);
            }
        }
    }
}

TEST(SegmentLerf, TopHalfMap) {
    const std::uint32_t w = 40, h = 40;
    std::vector<double> v(w * h, 0.0);
    std::fill(v.begin(), v.begin() + w * h / 2, 1.0);
    MapTriple t = constant_triple(w, h, 0.0);
    t[2] = lft::make_map(w, h, v, SemanticLevel::whole);
    const auto seg = segment_lerf(t, 0.5);
    EXPECT_EQ(seg.mask, lft::segment_lerf_oracle(t, 0.5, kSmoothSize));
    EXPECT_EQ(seg.level, SemanticLevel::whole);
    // Far from the boundary the mask is exactly the top half.
    for (std::uint32_t y = 0; y < h; ++y) {
        for (std::uint32_t x = 0; x < w; ++x) {
            if (y + 10 < h / 2) {
                EXPECT_EQ(seg.mask[y * w + x], 1);
            } else if (y > h / 2 + 10) {
                EXPECT_EQ(seg.mask[y * w + x], 0);
            }
        }
    }
}

TEST(SegmentLerf, ThresholdMustBeInsideUnitInterval) {
    const auto t = constant_triple(8, 8, 0.3);
    EXPECT_THROW(segment_lerf(t, 1.0), ConfigError);
    EXPECT_THROW(segment_lerf(t, 0.0), ConfigError);
    EXPECT_NO_THROW(segment_lerf(t, 0.99));
}

TEST(SegmentLerf, AllEqualMapsGiveEmptyMask) {
    const auto seg = segment_lerf(constant_triple(16, 16, 0.6));
    EXPECT_EQ(std::count(seg.mask.begin(), seg.mask.end(), 1), 0);
}

TEST(SegmentLerf, MatchesReferenceAndSubsetProperty) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 30; ++trial) {
        const auto t = lft::random_triple(rng, 30, 26);
        const double thr = 0.1 + 0.8 * (trial / 30.0);
        const auto seg = segment_lerf(t, thr);
        ASSERT_EQ(seg.mask, lft::segment_lerf_oracle(t, thr, kSmoothSize)) << trial;
        ASSERT_TRUE(seg.level.has_value());
        const auto sm = smooth(t[level_index(*seg.level)]);
        const double mn = *std::min_element(sm.values.begin(), sm.values.end());
        const double mx = *std::max_element(sm.values.begin(), sm.values.end());
        for (std::size_t p = 0; p < seg.mask.size(); ++p) {
            EXPECT_EQ(seg.mask[p] != 0, (sm.values[p] - mn) / (mx - mn) >= thr);
        }
    }
}

TEST(SegmentOvs, OnlyWholeAboveThreshold) {
    auto t = constant_triple(10, 10, 0.1);
    t[2].values[55] = 0.9;
    t[2].values[56] = 0.4; // threshold is inclusive
    const auto seg = segment_ovs(t);
    EXPECT_EQ(seg.level, SemanticLevel::whole);
    EXPECT_EQ(std::count(seg.mask.begin(), seg.mask.end(), 1), 2);
    EXPECT_EQ(seg.mask[55], 1);
    EXPECT_EQ(seg.mask[56], 1);
}

TEST(SegmentOvs, HigherMeanWins) {
    auto t = constant_triple(10, 10, 0.0);
    // subpart: many pixels at 0.5 (mean 0.5); part: a few pixels at 0.8 and 0.6 (mean 0.7).
    for (std::size_t p = 0; p < 50; ++p) {
        t[0].values[p] = 0.5;
    }
    t[1].values[3] = 0.8;
    t[1].values[4] = 0.6;
    const auto seg = segment_ovs(t);
    int level = -2;
    const auto ref = lft::segment_ovs_oracle(t, 0.4, &level);
    EXPECT_EQ(level, 1);
    EXPECT_EQ(seg.level, SemanticLevel::part);
    EXPECT_EQ(seg.mask, ref);
}

TEST(SegmentOvs, AllBelowThresholdGivesEmptyMask) {
    const auto seg = segment_ovs(constant_triple(12, 12, 0.39));
    EXPECT_FALSE(seg.level.has_value());
    EXPECT_EQ(std::count(seg.mask.begin(), seg.mask.end(), 1), 0);
}

TEST(SegmentOvs, MatchesReference) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 40; ++trial) {
        const auto t = lft::random_triple(rng, 28, 22);
        int level = -2;
        const auto ref = lft::segment_ovs_oracle(t, 0.4, &level);
        const auto seg = segment_ovs(t);
        EXPECT_EQ(seg.mask, ref);
        EXPECT_EQ(seg.level ? static_cast<int>(level_index(*seg.level)) : -1, level);
    }
}

TEST(SegmentDispatch, ProtocolConfigSelectsImplementation) {
    std::mt19937_64 rng(10);
    const auto t = lft::random_triple(rng, 30, 30);
    ProtocolConfig cfg;
    EXPECT_EQ(segment(t, cfg).mask, segment_ovs(t, 0.4).mask);
    cfg.protocol = SegmentProtocol::lerf;
    cfg.lerf_threshold = 0.6;
    cfg.smooth_size = 5;
    EXPECT_EQ(segment(t, cfg).mask, segment_lerf(t, 0.6, 5).mask);
}

TEST(VizLatent, ConstantImageIsGray) {
    FeatureImage img(6, 4, 3);
    std::fill(img.data.begin(), img.data.end(), 0.7);
    const auto rgb = latent_to_rgb(img);
    ASSERT_EQ(rgb.size(), 72u);
    for (auto v : rgb) {
        EXPECT_EQ(v, rgb[0]);
    }
    EXPECT_NEAR(rgb[0], 127.5, 0.5);
}

TEST(VizLatent, RequiresThreeChannels) {
    std::mt19937_64 rng(11);
    const auto scene = lft::random_scene(rng, 10, 2);
    EXPECT_THROW(viz_latent(scene, lft::simple_camera(8, 8), SemanticLevel::whole), ConfigError);
}

TEST(VizLatent, TwoPlantedObjectsGetDistinctColors) {
    SyntheticSceneSpec spec;
    spec.num_objects = 2;
    spec.num_views = 1;
    spec.plant_latents = true;
    spec.seed = 4;
    const auto synth = synth_scene(spec);
    const Camera& cam = synth.cameras[0];
    const auto rgb = viz_latent(synth.scene, cam, SemanticLevel::whole);
    const auto labels = planted_label_image(synth, cam, SemanticLevel::whole);
    ASSERT_EQ(rgb.size(), cam.pixel_count() * 3);
    // Mean color per planted object region (labels 2 and 3; 1 is the backdrop).
    std::array<std::array<double, 3>, 2> mean{};
    std::array<std::size_t, 2> count{};
    for (std::size_t p = 0; p < labels.size(); ++p) {
        if (labels[p] >= 2) {
            const std::size_t o = labels[p] - 2;
            for (std::size_t c = 0; c < 3; ++c) {
                mean[o][c] += rgb[p * 3 + c];
            }
            ++count[o];
        }
    }
    ASSERT_GT(count[0], 0u);
    ASSERT_GT(count[1], 0u);
    double dist2 = 0;
    for (std::size_t c = 0; c < 3; ++c) {
        mean[0][c] /= count[0];
        mean[1][c] /= count[1];
        dist2 += (mean[0][c] - mean[1][c]) * (mean[0][c] - mean[1][c]);
    }
    EXPECT_GT(std::sqrt(dist2), 40.0);
    // Most object pixels sit nearer their own object's mean color.
    std::size_t own = 0;
    for (std::size_t p = 0; p < labels.size(); ++p) {
        if (labels[p] < 2) {
            continue;
        }
        const std::size_t o = labels[p] - 2;
        double d_own = 0, d_other = 0;
        for (std::size_t c = 0; c < 3; ++c) {
            d_own += std::pow(rgb[p * 3 + c] - mean[o][c], 2);
            d_other += std::pow(rgb[p * 3 + c] - mean[1 - o][c], 2);
        }
        own += d_own < d_other;
    }
    EXPECT_GE(static_cast<double>(own) / static_cast<double>(count[0] + count[1]), 0.9);
}

TEST(QueryFiles, RoundTripAndUnitNormCheck) {
    std::mt19937_64 rng(12);
    std::vector<QueryEmbedding> qs{{"mug", lft::unit_vector(rng, 16)}, {"plant", lft::unit_vector(rng, 16)}};
    lft::TempDir dir("queries");
    save_queries(qs, dir / "q.json");
    const auto back = load_queries(dir / "q.json");
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[1].label, "plant");
    for (std::size_t i = 0; i < 16; ++i) {
        EXPECT_NEAR(back[0].vector[i], qs[0].vector[i], 1e-7);
    }
    const auto canon = random_canon(rng, 16);
    save_canonical(canon, dir / "c.json");
    const auto cb = load_canonical(dir / "c.json");
    EXPECT_NEAR(cb.phrases[3][5], canon.phrases[3][5], 1e-7);
    EXPECT_THROW(load_canonical(dir / "q.json"), FormatError); // only two entries

    qs[0].vector[0] += 0.1;
    EXPECT_THROW(save_queries(qs, dir / "bad.json"), FormatError);
}
