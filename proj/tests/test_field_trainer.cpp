#include <gtest/gtest.h>

#include "langfield/errors.hpp"
#include "langfield/field_trainer.hpp"
#include "langfield/log.hpp"
#include "support.hpp"

using namespace langfield;

namespace {

LevelTarget random_target(std::mt19937_64& rng, std::uint32_t w, std::uint32_t h, std::uint32_t d,
                          double valid_fraction = 0.7) {
    LevelTarget t;
    t.latent = FeatureImage(w, h, d);
    t.valid.assign(std::size_t{w} * h, 0);
    std::uniform_real_distribution<double> u(-1.0, 1.0), coin(0.0, 1.0);
    for (std::size_t p = 0; p < t.valid.size(); ++p) {
        t.valid[p] = coin(rng) < valid_fraction;
        for (std::uint32_t c = 0; c < d; ++c) {
            t.latent.data[p * d + c] = t.valid[p] ? u(rng) : 0.0;
        }
    }
    t.latent.alpha.assign(t.valid.size(), 1.0);
    return t;
}

FeatureImage random_image(std::mt19937_64& rng, std::uint32_t w, std::uint32_t h, std::uint32_t d) {
    FeatureImage img(w, h, d);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double& v : img.data) {
        v = u(rng);
    }
    return img;
}

TrainingView random_view(std::mt19937_64& rng, const Camera& cam, std::uint32_t d) {
    TrainingView v;
    v.camera = cam;
    for (auto& l : v.levels) {
        l = random_target(rng, cam.width, cam.height, d);
    }
    return v;
}

double lang_loss_ref(const FeatureImage& r, const LevelTarget& t, LangDistance dist) {
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < t.valid.size(); ++p) {
        if (!t.valid[p]) {
            continue;
        }
        ++n;
        for (std::uint32_t c = 0; c < r.channels; ++c) {
            const double e = r.data[p * r.channels + c] - t.latent.data[p * r.channels + c];
            sum += dist == LangDistance::l1 ? std::abs(e) : e * e;
        }
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

} // namespace

TEST(LangLossTest, ZeroWhenRenderedEqualsTarget) {
    std::mt19937_64 rng(1);
    const auto t = random_target(rng, 12, 9, 3);
    for (LangDistance d : {LangDistance::l1, LangDistance::l2}) {
        const auto l = lang_loss(t.latent, t, d);
        EXPECT_EQ(l.value, 0.0);
        EXPECT_EQ(l.valid_pixels,
                  static_cast<std::size_t>(std::count(t.valid.begin(), t.valid.end(), std::uint8_t{1})));
    }
}

TEST(LangLossTest, AllInvalidIsZeroWithWarning) {
    std::mt19937_64 rng(2);
    const auto t = random_target(rng, 8, 8, 2, 0.0);
    std::vector<std::string> warnings;
    log::set_sink([&](log::Level l, const std::string& m) {
        if (l == log::Level::warning) {
            warnings.push_back(m);
        }
    });
    const auto l = lang_loss(random_image(rng, 8, 8, 2), t);
    log::set_sink({});
    EXPECT_EQ(l.value, 0.0);
    EXPECT_EQ(l.valid_pixels, 0u);
    EXPECT_EQ(warnings.size(), 1u);
}

TEST(LangLossTest, MatchesScalarOracle) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const std::uint32_t d = 1 + trial % 4;
        const auto t = random_target(rng, 17, 11, d);
        const auto r = random_image(rng, 17, 11, d);
        for (LangDistance dist : {LangDistance::l1, LangDistance::l2}) {
            const double got = lang_loss(r, t, dist).value;
            EXPECT_NEAR(got, lang_loss_ref(r, t, dist), 1e-6);
            EXPECT_GE(got, 0.0);
        }
    }
    const auto t = random_target(rng, 4, 4, 2);
    EXPECT_THROW(lang_loss(random_image(rng, 4, 5, 2), t), ShapeError);
}

TEST(FieldObjectiveTest, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(4);
    const double h = 1e-6;
    for (int trial = 0; trial < 4; ++trial) {
        const std::uint32_t d = 1 + trial % 3;
        const auto scene = lft::random_scene(rng, 40, d);
        const Camera cam = lft::simple_camera(20, 16, 30.0);
        const TrainingView view = random_view(rng, cam, d);
        FieldTrainConfig cfg;
        cfg.distance = trial % 2 == 0 ? LangDistance::l1 : LangDistance::l2;
        const RasterPlan plan = make_plan(scene, cam, cfg.raster);
        const auto params = stack_latents(scene);
        const auto obj = field_objective(plan, params, d, view, cfg);
        Eigen::VectorXd analytic(static_cast<Eigen::Index>(params.size())),
            numeric(static_cast<Eigen::Index>(params.size()));
        for (std::size_t j = 0; j < params.size(); ++j) {
            auto pp = params, pm = params;
            pp[j] += h;
            pm[j] -= h;
            numeric[static_cast<Eigen::Index>(j)] = (field_objective(plan, pp, d, view, cfg).total -
                                                     field_objective(plan, pm, d, view, cfg).total) /
                                                    (2 * h);
            analytic[static_cast<Eigen::Index>(j)] = obj.grad[j];
        }
        EXPECT_LE((analytic - numeric).norm() / numeric.norm(), 1e-3) << "trial " << trial;
        double sum = 0;
        for (const auto& l : obj.levels) {
            sum += l.value;
        }
        EXPECT_DOUBLE_EQ(obj.total, sum);
    }
}

TEST(TrainField, ZeroIterationsLeaveSceneUnchanged) {
    std::mt19937_64 rng(5);
    auto scene = lft::random_scene(rng, 60, 3);
    const auto before = scene;
    const Camera cam = lft::simple_camera(16, 16, 30.0);
    const std::vector<TrainingView> views{random_view(rng, cam, 3)};
    FieldTrainConfig cfg;
    cfg.iterations = 0;
    const auto report = train_field(scene, views, cfg);
    EXPECT_TRUE(scene == before);
    EXPECT_EQ(report.initial_loss, report.final_loss);
}

TEST(TrainField, SingleOpaqueGaussianConvergesToTarget) {
    // One huge Gaussian in front of the camera; with the clamp lifted it is fully opaque
    // at every pixel, so the rendered latent equals the Gaussian's own latent.
    Gaussian g;
    g.mean = {0, 0, 2};
    g.scale = {1000.0f, 1000.0f, 1.0f};
    g.opacity = 1.0f;
    GaussianScene scene({g}, 3);
    const Camera cam = lft::simple_camera(16, 16, 20.0);
    const std::array<double, 3> t{0.3, -0.7, 0.55};
    TrainingView view;
    view.camera = cam;
    for (auto& lv : view.levels) {
        lv.latent = FeatureImage(16, 16, 3);
        lv.valid.assign(256, 1);
        for (std::size_t p = 0; p < 256; ++p) {
            for (std::size_t c = 0; c < 3; ++c) {
                lv.latent.data[p * 3 + c] = t[c];
            }
        }
    }
    FieldTrainConfig cfg;
    cfg.iterations = 2000;
    cfg.raster.alpha_clamp = 1.0;
    const std::vector<TrainingView> views{view};
    const auto report = train_field(scene, views, cfg);
    for (SemanticLevel l : kLevels) {
        for (std::size_t c = 0; c < 3; ++c) {
            EXPECT_NEAR(scene.latent(l, 0)[c], t[c], 1e-3) << level_name(l) << " " << c;
        }
    }
    EXPECT_LT(report.final_loss, report.initial_loss);
}

TEST(TrainField, GeometryFrozenAndLossDecreases) {
    std::mt19937_64 rng(6);
    auto scene = lft::random_scene(rng, 300, 3);
    const auto before = scene;
    std::vector<TrainingView> views;
    for (int i = 0; i < 3; ++i) {
        views.push_back(random_view(rng, lft::simple_camera(24, 24, 40.0), 3));
    }
    FieldTrainConfig cfg;
    cfg.iterations = 60;
    cfg.log_every = 20;
    const auto report = train_field(scene, views, cfg);
    ASSERT_EQ(scene.size(), before.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        EXPECT_EQ(std::memcmp(&scene.gaussian(i), &before.gaussian(i), sizeof(Gaussian)), 0);
    }
    EXPECT_FALSE(scene == before);
    EXPECT_LE(report.final_loss, report.initial_loss);
    ASSERT_EQ(report.log.size(), 3u);
    EXPECT_EQ(report.log[0].iteration, 20u);
    EXPECT_EQ(report.log[2].iteration, 60u);
}

TEST(TrainField, DeterministicForFixedSeed) {
    std::mt19937_64 rng(7);
    const auto scene = lft::random_scene(rng, 200, 2);
    std::vector<TrainingView> views;
    for (int i = 0; i < 4; ++i) {
        views.push_back(random_view(rng, lft::simple_camera(20, 20, 35.0), 2));
    }
    FieldTrainConfig cfg;
    cfg.iterations = 40;
    cfg.seed = 11;
    auto a = scene, b = scene;
    train_field(a, views, cfg);
    train_field(b, views, cfg);
    EXPECT_TRUE(a == b);
}

TEST(TrainField, RejectsMismatchedViews) {
    std::mt19937_64 rng(8);
    auto scene = lft::random_scene(rng, 20, 3);
    FieldTrainConfig cfg;
    cfg.iterations = 1;
    EXPECT_THROW(train_field(scene, std::vector<TrainingView>{}, cfg), ShapeError);
    const std::vector<TrainingView> wrong_dim{random_view(rng, lft::simple_camera(8, 8), 2)};
    EXPECT_THROW(train_field(scene, wrong_dim, cfg), ShapeError);
    TrainingView v = random_view(rng, lft::simple_camera(8, 8), 3);
    v.camera.width = 9;
    EXPECT_THROW(train_field(scene, std::vector<TrainingView>{v}, cfg), ShapeError);
}

TEST(TrainingViews, EncodedTargetsFollowLabelMaps) {
    std::mt19937_64 rng(9);
    const Camera cam = lft::simple_camera(10, 8);
    AutoencoderArch arch;
    arch.hidden = {6};
    const auto ae = init_autoencoder(5, 2, arch, 3);
    std::array<SegmentationMap, 3> segs;
    std::array<MaskEmbeddingTable, 3> tables;
    std::uniform_int_distribution<int> lab(0, 3);
    for (std::size_t l = 0; l < 3; ++l) {
        segs[l].width = 10;
        segs[l].height = 8;
        segs[l].level = kLevels[l];
        segs[l].mask_count = 3;
        segs[l].labels.resize(80);
        for (auto& v : segs[l].labels) {
            v = static_cast<std::uint16_t>(lab(rng));
        }
        tables[l].dim = 5;
        tables[l].level = kLevels[l];
        for (int k = 0; k < 3; ++k) {
            for (double x : lft::unit_vector(rng, 5)) {
                tables[l].rows.push_back(static_cast<float>(x));
            }
        }
    }
    const TrainingView view = make_training_view(cam, segs, tables, ae);
    for (std::size_t l = 0; l < 3; ++l) {
        const auto& t = view.levels[l];
        for (std::size_t p = 0; p < 80; ++p) {
            const std::uint16_t id = segs[l].labels[p];
            EXPECT_EQ(t.valid[p], id != 0 ? 1 : 0);
            if (id == 0) {
                EXPECT_EQ(t.latent.data[p * 2], 0.0);
                continue;
            }
            const auto row = tables[l].row(id);
            const auto h = encode(ae, std::vector<double>(row.begin(), row.end()));
            EXPECT_NEAR(t.latent.data[p * 2], h[0], 1e-12);
            EXPECT_NEAR(t.latent.data[p * 2 + 1], h[1], 1e-12);
        }
    }

    lft::TempDir dir("targets");
    write_training_view(view, dir.path());
    const TrainingView back = read_training_view(cam, dir.path());
    for (std::size_t l = 0; l < 3; ++l) {
        EXPECT_EQ(back.levels[l].valid, view.levels[l].valid);
        for (std::size_t i = 0; i < view.levels[l].latent.data.size(); ++i) {
            EXPECT_EQ(back.levels[l].latent.data[i], static_cast<double>(static_cast<float>(view.levels[l].latent.data[i])));
        }
    }

    segs[1].labels[0] = 4; // no row 4
    EXPECT_THROW(make_training_view(cam, segs, tables, ae), FormatError);
}
