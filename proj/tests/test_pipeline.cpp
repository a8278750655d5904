#include <sstream>

#include "doctest.h"
#include "mangalm/io_util.hpp"
#include "mangalm/pipeline.hpp"
#include "mangalm/synthetic.hpp"
#include "support.hpp"

using namespace mangalm;

namespace {

CascadeConfig small_network() {
    CascadeConfig c = CascadeConfig::tiny();
    c.canvas = 16;
    c.feature_grid = 8;
    c.heatmap_radius = 4;
    return c;
}

PipelineConfig small_config(const fs::path& dir, int faces = 24) {
    SyntheticOptions opts;
    opts.count = faces;
    opts.seed = 5;
    opts.double_label_fraction = 0.3;
    opts.label_noise_px = 0.3;
    opts.omit_optional_fraction = 0.3;
    opts.excluded_fraction = 0.1;
    generate_synthetic_dataset(dir, opts);
    PipelineConfig cfg;
    cfg.seed = 7;
    cfg.paths.manifest = dir / "manifest.jsonl";
    cfg.paths.image_root = dir;
    cfg.paths.work_dir = dir / "work";
    cfg.network = small_network();
    cfg.augmentation.copies = 2;
    cfg.training.max_epochs = 2;
    cfg.training.patience = 1;
    cfg.training.batch_size = 8;
    return cfg;
}

std::string missing_code(const std::function<void()>& f) {
    try {
        f();
    } catch (const PipelineError& e) {
        return e.code() + ": " + e.what();
    }
    return "no error";
}

}  // namespace

TEST_SUITE("pipeline") {
    TEST_CASE("config JSON round trip") {
        PipelineConfig cfg;
        cfg.paths.manifest = "m.jsonl";
        cfg.paths.work_dir = "work";
        cfg.network = small_network();
        const auto j = pipeline_config_to_json(cfg);
        const PipelineConfig back = pipeline_config_from_json(j);
        CHECK(pipeline_config_to_json(back) == j);
        CHECK(back.network == cfg.network);
        CHECK(back.experiments == cfg.experiments);
    }

    TEST_CASE("config rejects unknown keys and resolves relative paths") {
        testing::TempDir dir("config");
        PipelineConfig cfg;
        cfg.paths.manifest = "m.jsonl";
        cfg.paths.image_root = ".";
        cfg.paths.work_dir = "work";
        auto j = pipeline_config_to_json(cfg);
        write_file_atomic(dir / "config.json", j.dump());
        const PipelineConfig loaded = load_config(dir / "config.json");
        CHECK(loaded.paths.manifest == dir.path() / "m.jsonl");
        CHECK(loaded.paths.work_dir == dir.path() / "work");

        auto bad = j;
        bad["learning_rate"] = 1;
        CHECK_THROWS_AS(pipeline_config_from_json(bad), PipelineError);
        bad = j;
        bad["training"]["momentum"] = 0.9;
        CHECK_THROWS_AS(pipeline_config_from_json(bad), PipelineError);
        bad = j;
        bad["experiments"][0]["stages"] = 4;
        CHECK_THROWS_AS(pipeline_config_from_json(bad), PipelineError);
        CHECK(missing_code([&] { load_config(dir / "nope.json"); }).rfind("config:", 0) == 0);
    }

    TEST_CASE("default experiment grid") {
        const auto grid = default_experiment_grid();
        REQUIRE(grid.size() == 4);
        int with_aug = 0;
        for (const auto& e : grid) with_aug += e.augmentation;
        CHECK(with_aug == 2);
    }

    TEST_CASE("resolve_truth precedence") {
        Rng rng(1);
        const LandmarkSet a = testing::face_shape(rng);
        FaceRecord r;
        r.id = "x";
        CHECK_FALSE(resolve_truth(r, 2).landmarks.has_value());
        r.annotations.push_back({"p", a});
        CHECK(resolve_truth(r, 2).landmarks == a);
        LandmarkSet far = a;
        far.set(3, a.point(3) + Point2{10, 0});
        r.annotations.push_back({"q", far});
        CHECK_FALSE(resolve_truth(r, 2).landmarks.has_value());
        CHECK_FALSE(resolve_truth(r, 2).problem.empty());
        r.merged = a;
        CHECK(resolve_truth(r, 2).landmarks == a);
        r.completed = far;
        CHECK(resolve_truth(r, 2).landmarks == far);
    }

    TEST_CASE("steps name their missing prerequisites") {
        testing::TempDir dir("prereq");
        PipelineConfig cfg;
        cfg.paths.manifest = dir / "manifest.jsonl";
        cfg.paths.work_dir = dir / "work";
        Pipeline p(cfg);
        CHECK(missing_code([&] { p.ingest(); }).rfind("missing-input", 0) == 0);
        CHECK(missing_code([&] { p.filter(); }).find("mangalm ingest") != std::string::npos);
        CHECK(missing_code([&] { p.merge(); }).find("mangalm filter") != std::string::npos);
        CHECK(missing_code([&] { p.split(); }).find("mangalm filter") != std::string::npos);
        CHECK(missing_code([&] { p.augment(); }).find("mangalm split") != std::string::npos);
        CHECK(missing_code([&] { p.train(); }).find("mangalm split") != std::string::npos);
        CHECK(missing_code([&] { p.eval(); }).rfind("missing-artifact", 0) == 0);
    }

    TEST_CASE("end-to-end run on a small synthetic set") {
        testing::TempDir dir("e2e");
        const PipelineConfig cfg = small_config(dir.path());
        std::ostringstream log;
        Pipeline p(cfg, &log);
        p.ingest();
        p.filter();
        p.merge();
        p.complete();
        p.split();
        const std::string first_split = read_file(p.work().split());
        p.split();
        CHECK(read_file(p.work().split()) == first_split);
        p.augment();
        p.train();
        p.eval();

        for (const auto& e : cfg.experiments) {
            CHECK(fs::exists(p.work().checkpoint(e.name)));
            CHECK(fs::exists(p.work().loss_curve(e.name)));
            CHECK(fs::exists(p.work().report(e.name)));
            CHECK(fs::exists(p.work().ced(e.name)));
            const EvalReport r = report_from_json(read_file(p.work().report(e.name)));
            CHECK(r.faces.size() == p.load_subset(Subset::Test).size());
        }
        const std::string summary = read_file(p.work().summary());
        CHECK(summary.rfind("experiment\tstages\taugmentation\tmean_error\tauc\tfailure_rate_percent\tfaces\n", 0) == 0);
        std::size_t lines = 0;
        for (char c : summary) lines += c == '\n';
        CHECK(lines == 1 + cfg.experiments.size());

        const auto records = parse_manifest(read_file(cfg.paths.manifest));
        const fs::path image = dir.path() / records[0].image;
        const LandmarkSet pred = p.predict(image, records[0].bbox);
        CHECK(pred.complete());
        const auto predictions = read_file(p.work().predictions());
        const auto j = nlohmann::json::parse(predictions.substr(0, predictions.find('\n')));
        CHECK(j.at("landmarks").size() == kNumLandmarks);

        CHECK(missing_code([&] { p.train(std::string("nope")); }).rfind("usage", 0) == 0);
        CHECK(missing_code([&] { p.predict(dir / "nope.pgm", std::nullopt); }).rfind("missing-input", 0) == 0);
    }

    TEST_CASE("identical seeds give identical artifacts") {
        testing::TempDir a("det-a"), b("det-b");
        PipelineConfig ca = small_config(a.path(), 16);
        PipelineConfig cb = small_config(b.path(), 16);
        ca.experiments = cb.experiments = {{"two", 2, true}};
        for (const auto* cfg : {&ca, &cb}) {
            Pipeline p(*cfg);
            p.ingest();
            p.filter();
            p.merge();
            p.complete();
            p.split();
            p.augment();
            p.train();
            p.eval();
        }
        const WorkLayout wa{ca.paths.work_dir}, wb{cb.paths.work_dir};
        CHECK(read_file(wa.checkpoint("two")) == read_file(wb.checkpoint("two")));
        CHECK(read_file(wa.report("two")) == read_file(wb.report("two")));
        CHECK(read_file(wa.loss_curve("two")) == read_file(wb.loss_curve("two")));
        CHECK(read_file(wa.augment_plan()) == read_file(wb.augment_plan()));
    }
}
