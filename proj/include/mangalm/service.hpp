#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mangalm/cascade_net.hpp"
#include "mangalm/dataset.hpp"

namespace httplib {
class Server;
}

namespace mangalm {

enum class TaskStatus { Unlabeled, SingleLabeled, DoubleLabeled, Flagged, Merged, Completed };

std::string to_string(TaskStatus s);
std::optional<TaskStatus> task_status_from_string(const std::string& text);

/// Status implied by a record's annotation fields. Flagged means the first two
/// labelings disagree beyond `tolerance` somewhere.
TaskStatus task_status(const FaceRecord& record, double tolerance);

struct Reply {
    int status = 200;
    nlohmann::ordered_json body;
    std::string bytes;  // non-JSON payload when nonempty
    std::string content_type = "application/json";
    std::map<std::string, std::string> headers;

    std::string payload() const { return bytes.empty() ? body.dump() : bytes; }
};

/// Annotation tasks over one manifest file. Every mutation bumps the task's
/// version and rewrites the manifest atomically; writes carrying a stale
/// version are rejected with 409.
class AnnotationService {
public:
    static constexpr std::size_t kMaxLabelers = 2;

    AnnotationService(std::filesystem::path manifest, std::filesystem::path image_root,
                      std::optional<CascadeModel> model = std::nullopt, double tolerance = 2.0);

    Reply list_tasks(const std::optional<std::string>& status) const;
    Reply get_task(const std::string& id) const;
    Reply get_image(const std::string& id) const;
    /// Body: {"version": n, "landmarks": [60 x ([x, y] | null)]}.
    Reply put_annotation(const std::string& id, const std::string& labeler, const std::string& body);
    Reply disagreements(const std::string& id, std::optional<double> tolerance) const;
    /// Body: {"version": n}.
    Reply merge(const std::string& id, const std::string& body);
    /// Body: {"version": n, "commit": bool}. Without commit only a preview is returned.
    Reply complete(const std::string& id, const std::string& body);
    Reply predictions(const std::string& id) const;

    std::vector<FaceRecord> records() const;

private:
    struct Task {
        FaceRecord record;
        std::uint64_t version = 1;
    };

    const Task* find(const std::string& id) const;
    Task* find(const std::string& id);
    nlohmann::ordered_json summary(const Task& task) const;
    void persist() const;

    std::filesystem::path manifest_;
    std::filesystem::path image_root_;
    std::optional<CascadeModel> model_;
    double tolerance_;
    mutable std::mutex mutex_;
    std::vector<Task> tasks_;
    std::map<std::string, std::size_t> index_;
};

/// Routes the HTTP API under /api onto `service`.
void mount_routes(httplib::Server& server, AnnotationService& service);

}  // namespace mangalm
