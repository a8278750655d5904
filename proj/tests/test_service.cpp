#include <thread>

#include "doctest.h"
#include "mangalm/annotation_qc.hpp"
#include "mangalm/io_util.hpp"
#include "mangalm/service.hpp"
#include "oracles.hpp"
#include "support.hpp"

// Included last: must follow the Eigen headers.
#include "httplib.h"

using namespace mangalm;
using nlohmann::json;

namespace {

struct Fixture {
    testing::TempDir dir{"service"};
    LandmarkSet face;

    Fixture() {
        Rng rng(1);
        face = testing::face_shape(rng, 100, {100, 100});
        Image page(200, 200, 1.0);
        page.at(50, 40) = 0.0;
        write_pgm(dir / "page.pgm", page);
        std::vector<FaceRecord> recs;
        for (const char* id : {"t1", "t2", "t3"}) {
            FaceRecord r;
            r.id = id;
            r.image = "page.pgm";
            r.bbox = {50.5, 40.2, 99.0, 110.0};
            recs.push_back(r);
        }
        write_manifest(dir / "manifest.jsonl", recs);
    }

    AnnotationService service(std::optional<CascadeModel> model = std::nullopt) const {
        return AnnotationService(dir / "manifest.jsonl", dir.path(), std::move(model), 2.0);
    }

    static std::string annotation(std::uint64_t version, const LandmarkSet& set) {
        return json{{"version", version}, {"landmarks", landmarks_to_json(set)}}.dump();
    }
};

LandmarkSet moved(const LandmarkSet& s, std::size_t index, Point2 d) {
    LandmarkSet out = s;
    out.set(index, s.point(index) + d);
    return out;
}

std::string status_of(const Reply& r) { return r.body.at("status").get<std::string>(); }
std::uint64_t version_of(const Reply& r) { return r.body.at("version").get<std::uint64_t>(); }

}  // namespace

TEST_SUITE("service") {
    TEST_CASE("status names round trip") {
        for (auto s : {TaskStatus::Unlabeled, TaskStatus::SingleLabeled, TaskStatus::DoubleLabeled,
                       TaskStatus::Flagged, TaskStatus::Merged, TaskStatus::Completed}) {
            CHECK(task_status_from_string(to_string(s)) == s);
        }
        CHECK_FALSE(task_status_from_string("archived").has_value());
    }

    TEST_CASE("annotation lifecycle") {
        Fixture fx;
        AnnotationService svc = fx.service();
        CHECK(status_of(svc.get_task("t1")) == "unlabeled");
        CHECK(version_of(svc.get_task("t1")) == 1);

        Reply r = svc.put_annotation("t1", "alice", Fixture::annotation(1, fx.face));
        REQUIRE(r.status == 200);
        CHECK(status_of(r) == "single-labeled");
        CHECK(version_of(r) == 2);

        r = svc.put_annotation("t1", "bob", Fixture::annotation(2, moved(fx.face, 27, {0, 2.0})));
        CHECK(status_of(r) == "double-labeled");

        r = svc.put_annotation("t1", "bob", Fixture::annotation(3, moved(fx.face, 27, {1.5, 2.0})));
        CHECK(status_of(r) == "flagged");
        CHECK(version_of(r) == 4);

        const Reply d = svc.disagreements("t1", std::nullopt);
        REQUIRE(d.status == 200);
        REQUIRE(d.body["flagged"].size() == 1);
        CHECK(d.body["flagged"][0]["index"] == 27);
        CHECK(d.body["flagged"][0]["distance"].get<double>() == doctest::Approx(2.5));
        CHECK(d.body["flagged"][0].contains("alice"));
        CHECK(d.body["flagged"][0].contains("bob"));
        CHECK(svc.disagreements("t1", 3.0).body["flagged"].empty());

        CHECK(svc.merge("t1", R"({"version":4})").status == 409);
        CHECK(svc.complete("t1", R"({"version":4})").status == 409);

        r = svc.put_annotation("t1", "bob", Fixture::annotation(4, moved(fx.face, 27, {1.0, 1.0})));
        CHECK(status_of(r) == "double-labeled");
        r = svc.merge("t1", R"({"version":5})");
        REQUIRE(r.status == 200);
        CHECK(status_of(r) == "merged");
        const LandmarkSet merged = landmarks_from_json(r.body["merged"]);
        CHECK(merged.point(27).x == doctest::Approx(fx.face.point(27).x + 0.5));

        r = svc.complete("t1", R"({"version":6})");
        REQUIRE(r.status == 200);
        CHECK(status_of(r) == "completed");
        CHECK(r.body["committed"] == true);
        CHECK(r.body["synthesized"].empty());
        CHECK(svc.merge("t1", R"({"version":7})").status == 409);

        // A new annotation reopens the task.
        r = svc.put_annotation("t1", "alice", Fixture::annotation(7, fx.face));
        CHECK(status_of(r) == "double-labeled");
        CHECK(svc.get_task("t1").body["completed"].is_null());
    }

    TEST_CASE("stale versions conflict without changing state") {
        Fixture fx;
        AnnotationService svc = fx.service();
        REQUIRE(svc.put_annotation("t2", "alice", Fixture::annotation(1, fx.face)).status == 200);
        const std::string before = read_file(fx.dir / "manifest.jsonl");
        const Reply r = svc.put_annotation("t2", "bob", Fixture::annotation(1, fx.face));
        CHECK(r.status == 409);
        CHECK(r.body["error"] == "version-conflict");
        CHECK(r.body["version"] == 2);
        CHECK(read_file(fx.dir / "manifest.jsonl") == before);
        CHECK(status_of(svc.get_task("t2")) == "single-labeled");
        CHECK(svc.merge("t2", R"({"version":1})").status == 409);
    }

    TEST_CASE("request validation") {
        Fixture fx;
        AnnotationService svc = fx.service();
        CHECK(svc.get_task("nope").status == 404);
        CHECK(svc.put_annotation("nope", "a", Fixture::annotation(1, fx.face)).status == 404);
        CHECK(svc.put_annotation("t1", "a", "{").status == 400);
        CHECK(svc.put_annotation("t1", "a", R"({"landmarks":[]})").status == 400);
        CHECK(svc.put_annotation("t1", "a", R"({"version":1,"landmarks":[1,2]})").status == 400);
        CHECK(svc.list_tasks(std::string("bogus")).status == 400);
        CHECK(svc.disagreements("t1", std::nullopt).status == 409);
        CHECK(svc.merge("t1", R"({"version":1})").status == 409);

        REQUIRE(svc.put_annotation("t1", "a", Fixture::annotation(1, fx.face)).status == 200);
        REQUIRE(svc.put_annotation("t1", "b", Fixture::annotation(2, fx.face)).status == 200);
        const Reply third = svc.put_annotation("t1", "c", Fixture::annotation(3, fx.face));
        CHECK(third.status == 422);
    }

    TEST_CASE("list filters by status") {
        Fixture fx;
        AnnotationService svc = fx.service();
        REQUIRE(svc.put_annotation("t2", "a", Fixture::annotation(1, fx.face)).status == 200);
        CHECK(svc.list_tasks(std::nullopt).body.size() == 3);
        const Reply single = svc.list_tasks(std::string("single-labeled"));
        REQUIRE(single.body.size() == 1);
        CHECK(single.body[0]["id"] == "t2");
        CHECK(svc.list_tasks(std::string("unlabeled")).body.size() == 2);
    }

    TEST_CASE("completion preview and commit") {
        Fixture fx;
        AnnotationService svc = fx.service();
        LandmarkSet partial = fx.face;
        partial.clear(27);
        REQUIRE(svc.put_annotation("t3", "a", Fixture::annotation(1, partial)).status == 200);

        Reply r = svc.complete("t3", R"({"commit":false})");
        REQUIRE(r.status == 200);
        CHECK(r.body["committed"] == false);
        CHECK(r.body["synthesized"] == json::array({27}));
        const LandmarkSet preview = landmarks_from_json(r.body["landmarks"]);
        CHECK(preview.point(27) == complete_nose(partial).point(27));
        CHECK(version_of(svc.get_task("t3")) == 2);
        CHECK(status_of(svc.get_task("t3")) == "single-labeled");

        r = svc.complete("t3", R"({"version":2,"commit":true})");
        REQUIRE(r.status == 200);
        CHECK(status_of(r) == "completed");
        CHECK(version_of(r) == 3);

        // Persistence: a fresh service over the same manifest sees the result.
        AnnotationService again = fx.service();
        CHECK(status_of(again.get_task("t3")) == "completed");
        const LandmarkSet stored = landmarks_from_json(again.get_task("t3").body["completed"]);
        CHECK(stored.complete());
        CHECK(stored.point(27) == preview.point(27));
    }

    TEST_CASE("completion reports missing prerequisites") {
        Fixture fx;
        AnnotationService svc = fx.service();
        LandmarkSet no_mouth = fx.face;
        for (std::size_t k = 0; k < 10; ++k) no_mouth.clear(layout::kMouth[k]);
        REQUIRE(svc.put_annotation("t1", "a", Fixture::annotation(1, no_mouth)).status == 200);
        const Reply r = svc.complete("t1", R"({"commit":false})");
        CHECK(r.status == 422);
        CHECK(r.body["missing"] == json::array({"mouth"}));
    }

    TEST_CASE("image crops and predictions") {
        Fixture fx;
        AnnotationService svc = fx.service();
        const Reply img = svc.get_image("t1");
        REQUIRE(img.status == 200);
        CHECK(img.content_type == "image/x-portable-graymap");
        CHECK(img.headers.at("X-Crop-Origin") == "50,40");
        const Image crop = decode_pgm(img.bytes);
        CHECK(crop.width() == 100);
        CHECK(crop.height() == 111);
        CHECK(crop.at(0, 0) == 0.0);
        CHECK(crop.at(1, 1) == 1.0);

        CHECK(svc.predictions("t1").status == 404);
        CascadeConfig cfg = CascadeConfig::tiny();
        cfg.stages = 1;
        AnnotationService with_model = fx.service(init_model(cfg, testing::mean_shape_for(cfg.canvas), 1));
        const Reply p = with_model.predictions("t1");
        REQUIRE(p.status == 200);
        CHECK(p.body["landmarks"].size() == kNumLandmarks);
        CHECK(with_model.predictions("nope").status == 404);
    }

    TEST_CASE("HTTP round trip") {
        Fixture fx;
        AnnotationService svc = fx.service();
        httplib::Server server;
        mount_routes(server, svc);
        const int port = server.bind_to_any_port("127.0.0.1");
        REQUIRE(port > 0);
        std::thread thread([&] { server.listen_after_bind(); });
        server.wait_until_ready();

        httplib::Client client("127.0.0.1", port);
        auto res = client.Get("/api/tasks");
        REQUIRE(res);
        CHECK(res->status == 200);
        CHECK(json::parse(res->body).size() == 3);

        res = client.Put("/api/tasks/t1/annotations/alice", Fixture::annotation(1, fx.face), "application/json");
        REQUIRE(res);
        CHECK(res->status == 200);
        CHECK(json::parse(res->body)["status"] == "single-labeled");

        res = client.Put("/api/tasks/t1/annotations/bob", Fixture::annotation(1, fx.face), "application/json");
        REQUIRE(res);
        CHECK(res->status == 409);
        CHECK(json::parse(res->body)["version"] == 2);

        res = client.Get("/api/tasks?status=single-labeled");
        REQUIRE(res);
        CHECK(json::parse(res->body).size() == 1);

        res = client.Get("/api/tasks/t1/disagreements");
        REQUIRE(res);
        CHECK(res->status == 409);

        res = client.Post("/api/tasks/t1/merge", R"({"version":2})", "application/json");
        REQUIRE(res);
        CHECK(res->status == 200);
        res = client.Post("/api/tasks/t1/complete", R"({"version":3})", "application/json");
        REQUIRE(res);
        CHECK(res->status == 200);
        CHECK(json::parse(res->body)["status"] == "completed");

        res = client.Get("/api/images/t1");
        REQUIRE(res);
        CHECK(res->status == 200);
        CHECK(res->get_header_value("Content-Type") == "image/x-portable-graymap");
        CHECK(res->get_header_value("X-Crop-Origin") == "50,40");

        res = client.Get("/api/tasks/zzz");
        REQUIRE(res);
        CHECK(res->status == 404);
        res = client.Get("/api/tasks/t1/predictions");
        REQUIRE(res);
        CHECK(res->status == 404);
        CHECK(json::parse(res->body)["error"] == "no-model");

        server.stop();
        thread.join();
    }
}
