#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mangalm/landmark_schema.hpp"

namespace mangalm {

/// Largest inter-annotator disagreement observed when the dataset was double labeled.
inline constexpr double kFailureThreshold = 0.0333;

class MetricError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PerFaceError {
    std::string record_id;
    double mean_distance = 0.0;  // pixels
    double chin_distance = 0.0;  // pixels
    double normalized = 0.0;     // mean_distance / chin_distance
};

struct CedPoint {
    double threshold;
    double fraction;
    friend bool operator==(const CedPoint&, const CedPoint&) = default;
};

struct EvalReport {
    std::vector<PerFaceError> faces;
    double mean_error = 0.0;
    double failure_rate = 0.0;
    double auc = 0.0;
    double threshold = kFailureThreshold;
    std::vector<CedPoint> ced;
};

/// Distance between chin landmarks 0 and 16.
double chin_distance(const LandmarkSet& truth);

/// Mean point-to-point distance over all 60 landmarks, normalized by the
/// ground-truth chin distance.
PerFaceError normalized_error(const LandmarkSet& pred, const LandmarkSet& truth,
                              std::string record_id = {});

/// Fraction of errors strictly greater than `threshold`.
double failure_rate(std::span<const double> errors, double threshold = kFailureThreshold);

/// Fraction of errors <= t.
double ced_at(std::span<const double> errors, double t);

/// Step-function samples at every distinct error value plus t = 0 and t = alpha,
/// sorted by threshold.
std::vector<CedPoint> ced_curve(std::span<const double> errors, double alpha = kFailureThreshold);

/// Integral of the CED over [0, alpha] divided by alpha, computed exactly.
double auc_ced(std::span<const double> errors, double alpha = kFailureThreshold);

/// Normalized error of `a` against `b`, using `b`'s chin distance.
double interannotator_distance(const LandmarkSet& a, const LandmarkSet& b);

/// Assembles the aggregate statistics from per-face errors.
EvalReport summarize(std::vector<PerFaceError> faces, double threshold = kFailureThreshold);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
std::string ced_to_csv(const std::vector<CedPoint>& ced);

// Reference values (stages, augmentation, mean error, A_0.0333, failure rate %)
// reported for the original hand-labeled dataset. Not reproducible here.
struct ReferenceRow {
    int stages;
    bool augmentation;
    double mean_error;
    double auc;
    double failure_rate_percent;
};

inline constexpr ReferenceRow kReferenceResults[] = {
    {1, true, 0.03933, 0.10338, 48.28},
    {1, false, 0.04355, 0.08964, 52.41},
    {2, true, 0.02935, 0.24295, 19.31},
    {2, false, 0.03467, 0.16357, 37.93},
};

}  // namespace mangalm
