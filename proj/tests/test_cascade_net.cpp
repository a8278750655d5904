#include <cmath>

#include "doctest.h"
#include "mangalm/cascade_net.hpp"
#include "mangalm/evalmetrics.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mangalm;

namespace {

CascadeModel tiny_model(int stages, std::uint64_t seed = 3) {
    CascadeConfig cfg = CascadeConfig::tiny();
    cfg.stages = stages;
    return init_model(cfg, testing::mean_shape_for(cfg.canvas), seed);
}

Image random_image(int canvas, Rng& rng) {
    Image img(canvas, canvas);
    for (auto& v : img.pixels()) v = rng.uniform();
    return img;
}

std::vector<TrainingSample> samples(const MeanShape& ms, int n, std::uint64_t seed, double jitter = 0.4) {
    Rng rng(seed);
    std::vector<TrainingSample> out;
    for (int i = 0; i < n; ++i) out.push_back(testing::random_sample(ms, rng, jitter));
    return out;
}

}  // namespace

TEST_SUITE("cascade_net") {
    TEST_CASE("config validation") {
        CHECK_NOTHROW(CascadeConfig{}.validate());
        CHECK_NOTHROW(CascadeConfig::desk().validate());
        CHECK_NOTHROW(CascadeConfig::tiny().validate());
        CascadeConfig c = CascadeConfig::tiny();
        c.stages = 0;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c.stages = 4;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = CascadeConfig::tiny();
        c.canvas = 10;
        c.conv_widths = {2, 2};
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = CascadeConfig::tiny();
        c.feature_grid = 3;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = CascadeConfig::tiny();
        c.mean_shape_margin = 0.5;
        CHECK_THROWS_AS(c.validate(), ConfigError);

        CascadeConfig z = CascadeConfig::tiny();
        z.stages = 0;
        CHECK_THROWS_AS(init_model(z, testing::mean_shape_for(z.canvas), 1), ConfigError);
        CHECK_THROWS_AS(init_model(CascadeConfig::tiny(), testing::mean_shape_for(16), 1), ConfigError);
    }

    TEST_CASE("config JSON round trip and strict keys") {
        const CascadeConfig d = CascadeConfig::desk();
        CHECK(config_from_json(config_to_json(d)) == d);
        auto j = config_to_json(d);
        j["dropout"] = 0.5;
        CHECK_THROWS_AS(config_from_json(j), ConfigError);
    }

    TEST_CASE("initialization is seeded and the regression layer starts at zero") {
        const CascadeModel a = tiny_model(2, 5);
        const CascadeModel b = tiny_model(2, 5);
        const CascadeModel c = tiny_model(2, 6);
        CHECK(save_checkpoint(a) == save_checkpoint(b));
        CHECK(save_checkpoint(a) != save_checkpoint(c));
        for (const auto& s : a.stages) {
            CHECK(s.regression.weight.isZero(0.0));
            CHECK(s.regression.bias.isZero(0.0));
            CHECK_FALSE(s.convs[0].weight.isZero(0.0));
        }
        CHECK(a.stages[0].convs[0].in_channels() == 1);
        CHECK(a.stages[1].convs[0].in_channels() == 3);
        CHECK(a.stages[0].regression.outputs() == kRegressionOutputs);
    }

    TEST_CASE("untrained forward returns the mean shape exactly") {
        Rng rng(1);
        for (int stages = 1; stages <= 3; ++stages) {
            const CascadeModel m = tiny_model(stages);
            for (int k = 0; k < 3; ++k) {
                const LandmarkSet out = forward(m, random_image(m.config.canvas, rng));
                CHECK(out == m.mean_shape.as_set());
            }
        }
    }

    TEST_CASE("appending a zero-init stage changes nothing") {
        Rng rng(2);
        CascadeModel m = tiny_model(1);
        testing::randomize_trainable(m, 0, rng, 0.05);
        const Image img = random_image(m.config.canvas, rng);
        const LandmarkSet one = forward(m, img);
        CHECK(one != m.mean_shape.as_set());
        append_stage(m, 17);
        CHECK(m.config.stages == 2);
        CHECK(m.stages.size() == 2);
        const auto shapes = forward_stages(m, img);
        REQUIRE(shapes.size() == 2);
        CHECK(shapes[0] == one);
        CHECK(shapes[1] == one);
        append_stage(m, 18);
        CHECK_THROWS_AS(append_stage(m, 19), ConfigError);
    }

    TEST_CASE("connection at the mean shape is an identity warp") {
        Rng rng(3);
        const CascadeModel m = tiny_model(2);
        const Image img = random_image(m.config.canvas, rng);
        const StageInput first = first_stage_input(m, img);
        const StageOutput out = stage_forward(m, 0, first);
        const StageInput in = connection(m, 1, img, m.mean_shape.as_set(), out.hidden);
        CHECK(std::abs(in.to_canonical.scale - 1.0) < 1e-12);
        CHECK(std::abs(in.to_canonical.theta) < 1e-12);
        CHECK(std::abs(in.to_canonical.tx) < 1e-9);
        CHECK(std::abs(in.to_canonical.ty) < 1e-9);
        for (int y = 0; y < m.config.canvas; ++y) {
            for (int x = 0; x < m.config.canvas; ++x) CHECK(in.image.at(x, y) == doctest::Approx(img.at(x, y)).epsilon(1e-9));
        }
        REQUIRE(in.heatmap.has_value());
        REQUIRE(in.features.has_value());
        CHECK(in.features->width() == m.config.canvas);
        for (double v : in.features->pixels()) CHECK(v >= 0.0);

        LandmarkSet collapsed;
        for (std::size_t i = 0; i < kNumLandmarks; ++i) collapsed.set(i, {3, 3});
        CHECK_THROWS(connection(m, 1, img, collapsed, out.hidden));
    }

    TEST_CASE("stage_forward is pure and checks its inputs") {
        Rng rng(4);
        CascadeModel m = tiny_model(1);
        testing::randomize_trainable(m, 0, rng, 0.05);
        const StageInput in = first_stage_input(m, random_image(m.config.canvas, rng));
        const StageOutput a = stage_forward(m, 0, in);
        const StageOutput b = stage_forward(m, 0, in);
        CHECK(a.shape == b.shape);
        CHECK(a.hidden == b.hidden);
        CHECK_THROWS(first_stage_input(m, Image(m.config.canvas + 1, m.config.canvas)));
        CHECK_THROWS(stage_forward(m, 1, in));
    }

    TEST_CASE("loss examples") {
        Rng rng(5);
        LandmarkSet truth = testing::face_shape(rng);
        truth.set(0, {0, 0});
        truth.set(16, {100, 0});
        CHECK(loss(truth, truth) == 0.0);
        LandmarkSet pred = truth;
        for (std::size_t i = 0; i < kNumLandmarks; ++i) pred.set(i, truth.point(i) + Point2{3, 4});
        CHECK(loss(pred, truth) == 0.05);
        truth.set(16, {0, 0});
        CHECK_THROWS(loss(pred, truth));
    }

    TEST_CASE("loss_and_gradient agrees with forward") {
        Rng rng(6);
        CascadeModel m = tiny_model(2);
        testing::randomize_trainable(m, 0, rng, 0.05);
        testing::randomize_trainable(m, 1, rng, 0.05);
        const auto data = samples(m.mean_shape, 3, 7);
        for (const auto& s : data) {
            const auto shapes = forward_stages(m, s.image);
            CHECK(loss_and_gradient(m, 0, s, nullptr) == doctest::Approx(loss(shapes[0], s.landmarks)).epsilon(1e-12));
            CHECK(loss_and_gradient(m, 1, s, nullptr) == doctest::Approx(loss(shapes[1], s.landmarks)).epsilon(1e-12));
        }
    }

    TEST_CASE("analytic gradients match finite differences") {
        Rng rng(7);
        CascadeModel m = tiny_model(2);
        testing::randomize_trainable(m, 0, rng, 0.1);
        testing::randomize_trainable(m, 1, rng, 0.1);
        const auto data = samples(m.mean_shape, 2, 8);
        for (int stage = 0; stage < 2; ++stage) {
            CAPTURE(stage);
            const auto check = testing::gradient_check(m, stage, data);
            CAPTURE(check.worst_tensor);
            CAPTURE(check.worst_tensor_error);
            CHECK(check.parameters > 0);
            CHECK(check.relative_error < 1e-4);
        }
        StageGradient g0 = zero_gradient(m, 0);
        CHECK_FALSE(g0.previous_connection.has_value());
        StageGradient g1 = zero_gradient(m, 1);
        CHECK(g1.previous_connection.has_value());
    }

    TEST_CASE("checkpoint round trip") {
        Rng rng(8);
        CascadeModel m = tiny_model(2);
        testing::randomize_trainable(m, 0, rng, 0.1);
        const std::string bytes = save_checkpoint(m);
        const CascadeModel back = load_checkpoint(bytes);
        CHECK(back.config == m.config);
        CHECK(save_checkpoint(back) == bytes);
        const Image img = random_image(m.config.canvas, rng);
        CHECK(testing::max_point_error(forward(back, img), forward(m, img)) < 1e-4);

        CHECK_THROWS_AS(load_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
        CHECK_THROWS_AS(load_checkpoint(bytes + "x"), CheckpointError);
        std::string bad = bytes;
        bad[0] = 'X';
        CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
        CHECK_THROWS_AS(load_checkpoint(""), CheckpointError);
    }

    TEST_CASE("schedule validation") {
        TrainingSchedule s;
        CHECK_NOTHROW(s.validate());
        s.patience = s.max_epochs;
        CHECK_THROWS_AS(s.validate(), ConfigError);
        s = {};
        s.learning_rate = 0;
        CHECK_THROWS_AS(s.validate(), ConfigError);
        s = {};
        s.batch_size = 0;
        CHECK_THROWS_AS(s.validate(), ConfigError);
    }

    TEST_CASE("training lowers the loss, is deterministic and keeps the best epoch") {
        const CascadeModel m = tiny_model(2);
        const auto train_set = samples(m.mean_shape, 12, 9);
        const auto val_set = samples(m.mean_shape, 4, 10);
        TrainingSchedule sched;
        sched.max_epochs = 8;
        sched.patience = 3;
        sched.batch_size = 4;
        sched.learning_rate = 3e-3;
        sched.seed = 21;
        int callbacks = 0;
        const TrainResult a = train(m, train_set, val_set, sched, [&](const EpochLoss&) { ++callbacks; });
        const TrainResult b = train(m, train_set, val_set, sched);
        CHECK(save_checkpoint(a.model) == save_checkpoint(b.model));
        CHECK(loss_curve_to_text(a.curve) == loss_curve_to_text(b.curve));
        CHECK(callbacks == static_cast<int>(a.curve.size()));
        REQUIRE(a.stage_validation_loss.size() == 2);
        REQUIRE(a.best_epoch.size() == 2);

        const double before = mean_loss(m, train_set);
        CHECK(mean_loss(a.model, train_set) < before);

        double best0 = INFINITY;
        for (const auto& e : a.curve) {
            CHECK(std::isfinite(e.train_loss));
            if (e.stage == 1) best0 = std::min(best0, e.val_loss);
        }
        CHECK(mean_loss(a.model, val_set, 0) == doctest::Approx(best0).epsilon(1e-12));
        CHECK(a.stage_validation_loss[1] == doctest::Approx(mean_loss(a.model, val_set)).epsilon(1e-12));

        const std::string text = loss_curve_to_text(a.curve);
        CHECK(text.rfind("stage\tepoch\ttrain_loss\tval_loss\n", 0) == 0);

        CHECK_THROWS(train(m, {}, val_set, sched));
    }

    TEST_CASE("divergence is reported") {
        const CascadeModel m = tiny_model(1);
        auto train_set = samples(m.mean_shape, 4, 11);
        const auto val_set = samples(m.mean_shape, 2, 12);
        TrainingSchedule sched;
        sched.max_epochs = 3;
        sched.patience = 1;
        sched.batch_size = 2;
        sched.learning_rate = 1e300;
        CHECK_THROWS_AS(train(m, train_set, val_set, sched), TrainingDiverged);
    }
}
