#include <cmath>

#include "doctest.h"
#include "mangalm/augment.hpp"
#include "support.hpp"

using namespace mangalm;

namespace {

constexpr int kCanvas = 64;

MeanShape test_mean_shape() {
    Rng rng(9);
    std::vector<LandmarkSet> shapes;
    for (int i = 0; i < 20; ++i) shapes.push_back(testing::face_shape(rng));
    return compute_mean_shape(shapes, kCanvas, 0.1);
}

TrainingSample test_sample(const std::string& id, Rng& rng) {
    TrainingSample s;
    s.record_id = id;
    s.image = Image(kCanvas, kCanvas, 1.0);
    for (int y = 20; y < 44; ++y) {
        for (int x = 20; x < 44; ++x) s.image.at(x, y) = rng.uniform();
    }
    s.landmarks = testing::face_shape(rng, 40, {32, 32});
    return s;
}

std::vector<TrainingSample> test_samples(int n) {
    Rng rng(10);
    std::vector<TrainingSample> out;
    for (int i = 0; i < n; ++i) out.push_back(test_sample("s" + std::to_string(i), rng));
    return out;
}

}  // namespace

TEST_SUITE("augment") {
    TEST_CASE("zero sigma gives identity parameters") {
        AugmentationSpec spec;
        spec.rotation_deg.sigma = spec.scale.sigma = spec.translation_x.sigma = spec.translation_y.sigma = 0.0;
        Rng rng(1);
        const auto p = sample_params(spec, test_mean_shape(), rng);
        CHECK(p.rotation_deg == 0.0);
        CHECK(p.scale == 1.0);
        CHECK(p.tx == 0.0);
        CHECK(p.ty == 0.0);
    }

    TEST_CASE("sampling is deterministic and translation tracks the mean-shape extent") {
        const MeanShape ms = test_mean_shape();
        AugmentationSpec spec;
        Rng a(5), b(5);
        for (int i = 0; i < 100; ++i) {
            const auto pa = sample_params(spec, ms, a);
            const auto pb = sample_params(spec, ms, b);
            CHECK(pa.rotation_deg == pb.rotation_deg);
            CHECK(pa.scale == pb.scale);
            CHECK(pa.tx == pb.tx);
            CHECK(pa.tx == pa.tx_factor * ms.extent().width());
            CHECK(pa.ty == pa.ty_factor * ms.extent().height());
        }
    }

    TEST_CASE("identity params leave the sample unchanged") {
        Rng rng(2);
        const TrainingSample s = test_sample("x", rng);
        const TrainingSample out = augment_sample(s, AugmentationParams{});
        CHECK(out.landmarks == s.landmarks);
        for (int y = 0; y < kCanvas; ++y) {
            for (int x = 0; x < kCanvas; ++x) CHECK(out.image.at(x, y) == doctest::Approx(s.image.at(x, y)).epsilon(1e-12));
        }
    }

    TEST_CASE("pure translation moves every landmark exactly") {
        Rng rng(3);
        const TrainingSample s = test_sample("x", rng);
        AugmentationParams p;
        p.tx = 10.0;
        const TrainingSample out = augment_sample(s, p);
        for (std::size_t i = 0; i < kNumLandmarks; ++i) {
            CHECK(out.landmarks.point(i).x == s.landmarks.point(i).x + 10.0);
            CHECK(out.landmarks.point(i).y == s.landmarks.point(i).y);
        }
        CHECK(out.image.at(40, 30) == doctest::Approx(s.image.at(30, 30)).epsilon(1e-12));
        CHECK(out.image.at(3, 30) == kAugmentFill);
    }

    TEST_CASE("rotation and scale act about the canvas center") {
        AugmentationParams p;
        p.rotation_deg = 90.0;
        p.scale = 2.0;
        const auto t = augmentation_transform(p, kCanvas);
        const Point2 c = t({32, 32});
        CHECK(c.x == doctest::Approx(32.0));
        CHECK(c.y == doctest::Approx(32.0));
        const Point2 q = t({33, 32});
        CHECK(q.x == doctest::Approx(32.0));
        CHECK(q.y == doctest::Approx(34.0));
    }

    TEST_CASE("dataset sizes") {
        const MeanShape ms = test_mean_shape();
        const auto samples = test_samples(100);
        AugmentationSpec spec;
        CHECK(augment_dataset(samples, spec, ms, 1).size() == 500);
        spec.keep_originals = true;
        CHECK(augment_dataset(samples, spec, ms, 1).size() == 600);
        spec.copies = 0;
        const auto originals = augment_dataset(samples, spec, ms, 1);
        REQUIRE(originals.size() == 100);
        CHECK(originals[7].landmarks == samples[7].landmarks);
        CHECK(originals[7].augmentation_id == -1);
    }

    TEST_CASE("augmentation is deterministic and plans round trip") {
        const MeanShape ms = test_mean_shape();
        const auto samples = test_samples(6);
        AugmentationSpec spec;
        const auto a = augment_dataset(samples, spec, ms, 11);
        const auto b = augment_dataset(samples, spec, ms, 11);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].landmarks == b[i].landmarks);
            CHECK(a[i].image == b[i].image);
            CHECK(a[i].augmentation_id == b[i].augmentation_id);
        }

        std::vector<std::string> idlist;
        for (const auto& s : samples) idlist.push_back(s.record_id);
        const auto plan = plan_augmentation(idlist, spec, ms, 11);
        const auto text = plan_to_json(plan, spec, 11);
        const auto back = plan_from_json(text);
        CHECK(plan_to_json(back, spec, 11) == text);

        // A record's copies do not depend on which other records are present.
        const auto solo = plan_augmentation({idlist[3]}, spec, ms, 11);
        CHECK(solo[2].params.rotation_deg == plan[3 * 5 + 2].params.rotation_deg);
    }

    TEST_CASE("invalid specs") {
        AugmentationSpec spec;
        spec.copies = -1;
        CHECK_THROWS(spec.validate());
        spec = {};
        spec.scale.sigma = -0.1;
        CHECK_THROWS(spec.validate());
        Rng rng(4);
        TrainingSample s = test_sample("x", rng);
        AugmentationParams p;
        p.scale = 0.0;
        CHECK_THROWS(augment_sample(s, p));
    }
}
