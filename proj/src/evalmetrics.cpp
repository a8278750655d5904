#include "mangalm/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"

namespace mangalm {

double chin_distance(const LandmarkSet& truth) {
    if (!truth.present(layout::kChinFirst) || !truth.present(layout::kChinLast)) {
        throw MetricError("chin endpoints (indices 0 and 16) must be present");
    }
    return distance(truth.point(layout::kChinFirst), truth.point(layout::kChinLast));
}

PerFaceError normalized_error(const LandmarkSet& pred, const LandmarkSet& truth, std::string record_id) {
    if (!pred.complete() || !truth.complete()) {
        throw MetricError("normalized error needs complete prediction and ground truth");
    }
    PerFaceError e;
    e.record_id = std::move(record_id);
    e.chin_distance = chin_distance(truth);
    if (!(e.chin_distance > 0.0)) throw MetricError("ground-truth chin distance is zero");
    double sum = 0.0;
    for (std::size_t i = 0; i < kNumLandmarks; ++i) sum += distance(pred.point(i), truth.point(i));
    e.mean_distance = sum / static_cast<double>(kNumLandmarks);
    e.normalized = e.mean_distance / e.chin_distance;
    return e;
}

double ced_at(std::span<const double> errors, double t) {
    if (errors.empty()) throw MetricError("CED of an empty error list");
    const auto hits = std::count_if(errors.begin(), errors.end(), [t](double s) { return s <= t; });
    return static_cast<double>(hits) / static_cast<double>(errors.size());
}

double failure_rate(std::span<const double> errors, double threshold) {
    if (errors.empty()) throw MetricError("failure rate of an empty error list");
    return 1.0 - ced_at(errors, threshold);
}

std::vector<CedPoint> ced_curve(std::span<const double> errors, double alpha) {
    if (errors.empty()) throw MetricError("CED of an empty error list");
    std::vector<double> ts(errors.begin(), errors.end());
    ts.push_back(0.0);
    ts.push_back(alpha);
    std::sort(ts.begin(), ts.end());
    ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
    std::vector<double> sorted(errors.begin(), errors.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<CedPoint> out;
    out.reserve(ts.size());
    for (double t : ts) {
        const auto k = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
        out.push_back({t, static_cast<double>(k) / static_cast<double>(sorted.size())});
    }
    return out;
}

double auc_ced(std::span<const double> errors, double alpha) {
    if (errors.empty()) throw MetricError("A_alpha of an empty error list");
    if (!(alpha > 0.0)) throw MetricError("alpha must be positive");
    // Each face with S <= alpha contributes a unit-height step from S to alpha.
    std::vector<double> sorted(errors.begin(), errors.end());
    std::sort(sorted.begin(), sorted.end());
    double area = 0.0;
    for (double s : sorted) {
        if (s <= alpha) area += alpha - std::max(s, 0.0);
    }
    return area / (alpha * static_cast<double>(sorted.size()));
}

double interannotator_distance(const LandmarkSet& a, const LandmarkSet& b) {
    return normalized_error(a, b).normalized;
}

EvalReport summarize(std::vector<PerFaceError> faces, double threshold) {
    if (faces.empty()) throw MetricError("cannot summarize an empty evaluation");
    EvalReport r;
    r.threshold = threshold;
    std::vector<double> s;
    s.reserve(faces.size());
    for (const auto& f : faces) s.push_back(f.normalized);
    std::vector<double> sorted = s;
    std::sort(sorted.begin(), sorted.end());
    double sum = 0.0;
    for (double v : sorted) sum += v;
    r.mean_error = sum / static_cast<double>(sorted.size());
    r.failure_rate = failure_rate(s, threshold);
    r.auc = auc_ced(s, threshold);
    r.ced = ced_curve(s, threshold);
    r.faces = std::move(faces);
    return r;
}

std::string report_to_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    j["mean_error"] = report.mean_error;
    j["auc"] = report.auc;
    j["failure_rate"] = report.failure_rate;
    j["threshold"] = report.threshold;
    j["num_faces"] = report.faces.size();
    auto rows = nlohmann::ordered_json::array();
    for (const auto& f : report.faces) {
        rows.push_back({{"id", f.record_id},
                        {"mean_distance", f.mean_distance},
                        {"chin_distance", f.chin_distance},
                        {"normalized_error", f.normalized}});
    }
    j["faces"] = std::move(rows);
    return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    std::vector<PerFaceError> faces;
    for (const auto& row : j.at("faces")) {
        faces.push_back({row.at("id").get<std::string>(), row.at("mean_distance").get<double>(),
                         row.at("chin_distance").get<double>(), row.at("normalized_error").get<double>()});
    }
    return summarize(std::move(faces), j.at("threshold").get<double>());
}

std::string ced_to_csv(const std::vector<CedPoint>& ced) {
    std::ostringstream out;
    out.precision(17);
    out << "threshold,fraction\n";
    for (const auto& p : ced) out << p.threshold << ',' << p.fraction << '\n';
    return out.str();
}

}  // namespace mangalm
