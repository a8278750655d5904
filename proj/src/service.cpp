#include "mangalm/service.hpp"

#include <algorithm>
#include <cmath>

#include "mangalm/annotation_qc.hpp"
#include "mangalm/io_util.hpp"
#include "mangalm/pipeline.hpp"

// Included last: must follow the Eigen headers.
#include "httplib.h"

namespace mangalm {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string to_string(TaskStatus s) {
    switch (s) {
        case TaskStatus::Unlabeled: return "unlabeled";
        case TaskStatus::SingleLabeled: return "single-labeled";
        case TaskStatus::DoubleLabeled: return "double-labeled";
        case TaskStatus::Flagged: return "flagged";
        case TaskStatus::Merged: return "merged";
        case TaskStatus::Completed: return "completed";
    }
    return "unknown";
}

std::optional<TaskStatus> task_status_from_string(const std::string& text) {
    for (auto s : {TaskStatus::Unlabeled, TaskStatus::SingleLabeled, TaskStatus::DoubleLabeled, TaskStatus::Flagged,
                   TaskStatus::Merged, TaskStatus::Completed}) {
        if (to_string(s) == text) return s;
    }
    return std::nullopt;
}

TaskStatus task_status(const FaceRecord& r, double tolerance) {
    if (r.completed) return TaskStatus::Completed;
    if (r.merged) return TaskStatus::Merged;
    if (r.annotations.empty()) return TaskStatus::Unlabeled;
    if (r.annotations.size() == 1) return TaskStatus::SingleLabeled;
    return compare_labels(r.annotations[0].landmarks, r.annotations[1].landmarks, tolerance).clean()
               ? TaskStatus::DoubleLabeled
               : TaskStatus::Flagged;
}

namespace {

Reply error_reply(int status, const std::string& code, const std::string& message) {
    Reply r;
    r.status = status;
    r.body = {{"error", code}, {"message", message}};
    return r;
}

Reply not_found(const std::string& id) { return error_reply(404, "not-found", "unknown task " + id); }

Reply conflict(std::uint64_t current, const std::string& message) {
    Reply r = error_reply(409, "version-conflict", message);
    r.body["version"] = current;
    return r;
}

std::optional<json> parse_body(const std::string& body, Reply& err) {
    try {
        json j = body.empty() ? json::object() : json::parse(body);
        if (!j.is_object()) {
            err = error_reply(400, "bad-request", "request body must be a JSON object");
            return std::nullopt;
        }
        return j;
    } catch (const json::exception& e) {
        err = error_reply(400, "bad-request", std::string("malformed JSON: ") + e.what());
        return std::nullopt;
    }
}

std::optional<std::uint64_t> body_version(const json& j, Reply& err) {
    if (!j.contains("version") || !j["version"].is_number_unsigned()) {
        err = error_reply(400, "bad-request", "body needs an unsigned integer \"version\"");
        return std::nullopt;
    }
    return j["version"].get<std::uint64_t>();
}

json point_json(Point2 p) { return json::array({p.x, p.y}); }

}  // namespace

AnnotationService::AnnotationService(std::filesystem::path manifest, std::filesystem::path image_root,
                                     std::optional<CascadeModel> model, double tolerance)
    : manifest_(std::move(manifest)), image_root_(std::move(image_root)), model_(std::move(model)),
      tolerance_(tolerance) {
    for (auto& r : parse_manifest(read_file(manifest_))) {
        if (!index_.emplace(r.id, tasks_.size()).second) {
            throw std::invalid_argument("duplicate record id " + r.id + " in manifest");
        }
        tasks_.push_back({std::move(r), 1});
    }
}

const AnnotationService::Task* AnnotationService::find(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &tasks_[it->second];
}

AnnotationService::Task* AnnotationService::find(const std::string& id) {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &tasks_[it->second];
}

void AnnotationService::persist() const {
    std::vector<FaceRecord> records;
    records.reserve(tasks_.size());
    for (const auto& t : tasks_) records.push_back(t.record);
    write_manifest(manifest_, records);
}

std::vector<FaceRecord> AnnotationService::records() const {
    std::lock_guard lock(mutex_);
    std::vector<FaceRecord> out;
    for (const auto& t : tasks_) out.push_back(t.record);
    return out;
}

ordered_json AnnotationService::summary(const Task& t) const {
    auto labelers = json::array();
    for (const auto& a : t.record.annotations) labelers.push_back(a.labeler);
    return {{"id", t.record.id},
            {"status", to_string(task_status(t.record, tolerance_))},
            {"version", t.version},
            {"labelers", labelers}};
}

Reply AnnotationService::list_tasks(const std::optional<std::string>& status) const {
    std::optional<TaskStatus> want;
    if (status) {
        want = task_status_from_string(*status);
        if (!want) return error_reply(400, "bad-request", "unknown status " + *status);
    }
    std::lock_guard lock(mutex_);
    Reply r;
    r.body = ordered_json::array();
    for (const auto& t : tasks_) {
        if (want && task_status(t.record, tolerance_) != *want) continue;
        r.body.push_back(summary(t));
    }
    return r;
}

Reply AnnotationService::get_task(const std::string& id) const {
    std::lock_guard lock(mutex_);
    const Task* t = find(id);
    if (!t) return not_found(id);
    Reply r;
    r.body = summary(*t);
    const auto& rec = t->record;
    r.body["image"] = rec.image;
    r.body["bbox"] = {rec.bbox.x, rec.bbox.y, rec.bbox.w, rec.bbox.h};
    auto flags = json::array();
    for (auto f : rec.flags) flags.push_back(to_string(f));
    r.body["flags"] = flags;
    ordered_json ann = ordered_json::object();
    for (const auto& a : rec.annotations) ann[a.labeler] = landmarks_to_json(a.landmarks);
    r.body["annotations"] = ann;
    r.body["merged"] = rec.merged ? landmarks_to_json(*rec.merged) : json(nullptr);
    r.body["completed"] = rec.completed ? landmarks_to_json(*rec.completed) : json(nullptr);
    return r;
}

Reply AnnotationService::get_image(const std::string& id) const {
    FaceRecord rec;
    {
        std::lock_guard lock(mutex_);
        const Task* t = find(id);
        if (!t) return not_found(id);
        rec = t->record;
    }
    Image page;
    try {
        page = read_pgm(resolve_image(rec, image_root_));
    } catch (const std::exception& e) {
        return error_reply(500, "image", e.what());
    }
    const int x0 = std::clamp(static_cast<int>(std::floor(rec.bbox.x)), 0, page.width());
    const int y0 = std::clamp(static_cast<int>(std::floor(rec.bbox.y)), 0, page.height());
    const int x1 = std::clamp(static_cast<int>(std::ceil(rec.bbox.x + rec.bbox.w)), x0, page.width());
    const int y1 = std::clamp(static_cast<int>(std::ceil(rec.bbox.y + rec.bbox.h)), y0, page.height());
    if (x1 == x0 || y1 == y0) return error_reply(422, "empty-crop", "bounding box does not overlap the image");
    Image crop(x1 - x0, y1 - y0);
    for (int r = y0; r < y1; ++r) {
        for (int c = x0; c < x1; ++c) crop.at(c - x0, r - y0) = page.at(c, r);
    }
    Reply reply;
    reply.bytes = encode_pgm(crop);
    reply.content_type = "image/x-portable-graymap";
    reply.headers["X-Crop-Origin"] = std::to_string(x0) + "," + std::to_string(y0);
    return reply;
}

Reply AnnotationService::put_annotation(const std::string& id, const std::string& labeler, const std::string& body) {
    Reply err;
    const auto j = parse_body(body, err);
    if (!j) return err;
    const auto version = body_version(*j, err);
    if (!version) return err;
    if (labeler.empty()) return error_reply(400, "bad-request", "labeler id is required");
    if (!j->contains("landmarks")) return error_reply(400, "bad-request", "body needs \"landmarks\"");
    LandmarkSet set;
    try {
        set = landmarks_from_json((*j)["landmarks"]);
    } catch (const std::exception& e) {
        return error_reply(400, "bad-request", e.what());
    }

    std::lock_guard lock(mutex_);
    Task* t = find(id);
    if (!t) return not_found(id);
    if (*version != t->version) return conflict(t->version, "stale version " + std::to_string(*version));
    auto& anns = t->record.annotations;
    auto it = std::find_if(anns.begin(), anns.end(), [&](const Annotation& a) { return a.labeler == labeler; });
    if (it == anns.end() && anns.size() >= kMaxLabelers) {
        return error_reply(422, "too-many-labelers", "task already has " + std::to_string(kMaxLabelers) + " labelers");
    }
    if (it == anns.end()) anns.push_back({labeler, set});
    else it->landmarks = set;
    t->record.merged.reset();
    t->record.completed.reset();
    ++t->version;
    persist();
    Reply r;
    r.body = summary(*t);
    return r;
}

Reply AnnotationService::disagreements(const std::string& id, std::optional<double> tolerance) const {
    const double tol = tolerance.value_or(tolerance_);
    if (!(tol >= 0) || !std::isfinite(tol)) return error_reply(400, "bad-request", "tolerance must be non-negative");
    std::lock_guard lock(mutex_);
    const Task* t = find(id);
    if (!t) return not_found(id);
    const auto& anns = t->record.annotations;
    if (anns.size() < 2) return error_reply(409, "not-double-labeled", "task has fewer than two labelings");
    const auto& a = anns[0].landmarks;
    const auto& b = anns[1].landmarks;
    const DisagreementReport rep = compare_labels(a, b, tol);
    Reply r;
    r.body = summary(*t);
    r.body["tolerance"] = tol;
    auto flagged = json::array();
    for (auto i : rep.flagged) {
        flagged.push_back({{"index", i},
                           {"distance", rep.distances[i]},
                           {anns[0].labeler, point_json(a.point(i))},
                           {anns[1].labeler, point_json(b.point(i))}});
    }
    r.body["flagged"] = flagged;
    r.body["presence_mismatches"] = rep.presence_mismatches;
    auto distances = json::array();
    for (double d : rep.distances) distances.push_back(std::isnan(d) ? json(nullptr) : json(d));
    r.body["distances"] = distances;
    return r;
}

Reply AnnotationService::merge(const std::string& id, const std::string& body) {
    Reply err;
    const auto j = parse_body(body, err);
    if (!j) return err;
    const auto version = body_version(*j, err);
    if (!version) return err;
    std::lock_guard lock(mutex_);
    Task* t = find(id);
    if (!t) return not_found(id);
    if (*version != t->version) return conflict(t->version, "stale version " + std::to_string(*version));
    auto& rec = t->record;
    switch (task_status(rec, tolerance_)) {
        case TaskStatus::Unlabeled: return error_reply(409, "invalid-transition", "task has no annotations");
        case TaskStatus::Flagged: return error_reply(409, "flagged", "labelings disagree; correct them first");
        case TaskStatus::Completed: return error_reply(409, "invalid-transition", "task is already completed");
        default: break;
    }
    rec.merged = rec.annotations.size() == 1 ? rec.annotations[0].landmarks
                                             : merge_labels(rec.annotations[0].landmarks, rec.annotations[1].landmarks);
    ++t->version;
    persist();
    Reply r;
    r.body = summary(*t);
    r.body["merged"] = landmarks_to_json(*rec.merged);
    return r;
}

Reply AnnotationService::complete(const std::string& id, const std::string& body) {
    Reply err;
    const auto j = parse_body(body, err);
    if (!j) return err;
    const bool commit = j->value("commit", true);
    std::optional<std::uint64_t> version;
    if (commit) {
        version = body_version(*j, err);
        if (!version) return err;
    }
    std::lock_guard lock(mutex_);
    Task* t = find(id);
    if (!t) return not_found(id);
    if (commit && *version != t->version) return conflict(t->version, "stale version " + std::to_string(*version));
    auto& rec = t->record;
    LandmarkSet base;
    switch (task_status(rec, tolerance_)) {
        case TaskStatus::Unlabeled: return error_reply(409, "invalid-transition", "task has no annotations");
        case TaskStatus::Flagged: return error_reply(409, "flagged", "labelings disagree; correct them first");
        case TaskStatus::SingleLabeled: base = rec.annotations[0].landmarks; break;
        case TaskStatus::DoubleLabeled:
            base = merge_labels(rec.annotations[0].landmarks, rec.annotations[1].landmarks);
            break;
        case TaskStatus::Merged: base = *rec.merged; break;
        case TaskStatus::Completed: base = *rec.completed; break;
    }
    LandmarkSet done;
    try {
        done = complete_all(base);
    } catch (const CompletionError& e) {
        Reply r = error_reply(422, "missing-prerequisites", e.what());
        auto groups = json::array();
        for (auto g : e.missing()) groups.push_back(group_name(g));
        r.body["missing"] = groups;
        return r;
    }
    auto synthesized = json::array();
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
        if (!base.present(i)) synthesized.push_back(i);
    }
    if (commit) {
        if (!rec.merged) rec.merged = base;
        rec.completed = done;
        ++t->version;
        persist();
    }
    Reply r;
    r.body = summary(*t);
    r.body["committed"] = commit;
    r.body["landmarks"] = landmarks_to_json(done);
    r.body["synthesized"] = synthesized;
    return r;
}

Reply AnnotationService::predictions(const std::string& id) const {
    FaceRecord rec;
    {
        std::lock_guard lock(mutex_);
        const Task* t = find(id);
        if (!t) return not_found(id);
        rec = t->record;
    }
    if (!model_) return error_reply(404, "no-model", "no checkpoint is loaded");
    try {
        const Image page = read_pgm(resolve_image(rec, image_root_));
        Reply r;
        r.body = {{"id", id}, {"landmarks", landmarks_to_json(predict_landmarks(*model_, page, rec.bbox))}};
        return r;
    } catch (const std::exception& e) {
        return error_reply(500, "prediction", e.what());
    }
}

namespace {

void send(httplib::Response& res, const Reply& reply) {
    res.status = reply.status;
    for (const auto& [k, v] : reply.headers) res.set_header(k, v);
    res.set_content(reply.payload(), reply.content_type);
}

std::optional<std::string> query(const httplib::Request& req, const std::string& key) {
    if (!req.has_param(key)) return std::nullopt;
    return req.get_param_value(key);
}

}  // namespace

void mount_routes(httplib::Server& server, AnnotationService& service) {
    server.Get("/api/tasks", [&service](const httplib::Request& req, httplib::Response& res) {
        send(res, service.list_tasks(query(req, "status")));
    });
    server.Get(R"(/api/tasks/([^/]+))", [&service](const httplib::Request& req, httplib::Response& res) {
        send(res, service.get_task(req.matches[1]));
    });
    server.Get(R"(/api/images/([^/]+))", [&service](const httplib::Request& req, httplib::Response& res) {
        send(res, service.get_image(req.matches[1]));
    });
    server.Put(R"(/api/tasks/([^/]+)/annotations/([^/]+))",
               [&service](const httplib::Request& req, httplib::Response& res) {
        send(res, service.put_annotation(req.matches[1], req.matches[2], req.body));
    });
    server.Get(R"(/api/tasks/([^/]+)/disagreements)", [&service](const httplib::Request& req, httplib::Response& res) {
        std::optional<double> tol;
        if (auto t = query(req, "tolerance")) {
            try {
                tol = std::stod(*t);
            } catch (const std::exception&) {
                send(res, error_reply(400, "bad-request", "tolerance must be a number"));
                return;
            }
        }
        send(res, service.disagreements(req.matches[1], tol));
    });
    server.Post(R"(/api/tasks/([^/]+)/merge)", [&service](const httplib::Request& req, httplib::Response& res) {
        send(res, service.merge(req.matches[1], req.body));
    });
    server.Post(R"(/api/tasks/([^/]+)/complete)", [&service](const httplib::Request& req, httplib::Response& res) {
        send(res, service.complete(req.matches[1], req.body));
    });
    server.Get(R"(/api/tasks/([^/]+)/predictions)", [&service](const httplib::Request& req, httplib::Response& res) {
        send(res, service.predictions(req.matches[1]));
    });
}

}  // namespace mangalm
