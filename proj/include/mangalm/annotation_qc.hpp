#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "mangalm/landmark_schema.hpp"

namespace mangalm {

inline constexpr double kDefaultLabelTolerance = 2.0;

struct DisagreementReport {
    std::array<double, kNumLandmarks> distances{};  // NaN unless both labelings have the point
    std::vector<std::size_t> flagged;                // both present, distance > tolerance
    std::vector<std::size_t> presence_mismatches;    // present in exactly one labeling
    double tolerance = kDefaultLabelTolerance;

    bool clean() const { return flagged.empty(); }
};

/// Flags are strict: a distance equal to the tolerance is not flagged.
DisagreementReport compare_labels(const LandmarkSet& a, const LandmarkSet& b,
                                  double tolerance = kDefaultLabelTolerance);

/// Spatial average where both labelings have a point, the single point where
/// only one does, absent otherwise.
LandmarkSet merge_labels(const LandmarkSet& a, const LandmarkSet& b);

class CompletionError : public std::runtime_error {
public:
    CompletionError(const std::string& what, std::vector<LandmarkGroup> missing = {})
        : std::runtime_error(what), missing_(std::move(missing)) {}
    const std::vector<LandmarkGroup>& missing() const { return missing_; }

private:
    std::vector<LandmarkGroup> missing_;
};

enum class EyebrowSide { Left, Right };

// Eyelid-derived eyebrow synthesis constants.
inline constexpr double kEyelidBrowScale = 1.25;
inline constexpr double kEyelidBrowLift = 0.6;  // fraction of eye bounding-box height

/// Nose = mean of the left-eye, right-eye and mouth centroids. No-op when the
/// nose is already present.
LandmarkSet complete_nose(const LandmarkSet& set);

/// Each absent pupil = centroid of its eye's 10 contour points.
LandmarkSet complete_pupils(const LandmarkSet& set);

/// Synthesizes the `missing` eyebrow by fitting an affine map from the present
/// side's eye contour to the missing side's and applying it to the present
/// eyebrow.
LandmarkSet complete_eyebrow_from_other(const LandmarkSet& set, EyebrowSide missing);

/// Both eyebrows absent: each is the eye's upper eyelid scaled by 1.25 about
/// the eye centroid and lifted by 0.6 x eye height.
LandmarkSet complete_eyebrows_from_eyelids(const LandmarkSet& set);

/// Eyebrows, then nose, then pupils. Requires chin, mouth and both eyes.
LandmarkSet complete_all(const LandmarkSet& set);

/// Groups complete_all needs that are not complete in `set`.
std::vector<LandmarkGroup> missing_prerequisites(const LandmarkSet& set);

}  // namespace mangalm
