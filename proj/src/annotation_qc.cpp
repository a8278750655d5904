#include "mangalm/annotation_qc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mangalm/geometry.hpp"

namespace mangalm {

DisagreementReport compare_labels(const LandmarkSet& a, const LandmarkSet& b, double tolerance) {
    DisagreementReport r;
    r.tolerance = tolerance;
    r.distances.fill(std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
        if (a.present(i) && b.present(i)) {
            r.distances[i] = distance(a.point(i), b.point(i));
            if (r.distances[i] > tolerance) r.flagged.push_back(i);
        } else if (a.present(i) != b.present(i)) {
            r.presence_mismatches.push_back(i);
        }
    }
    return r;
}

LandmarkSet merge_labels(const LandmarkSet& a, const LandmarkSet& b) {
    LandmarkSet out;
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
        const bool pa = a.present(i);
        const bool pb = b.present(i);
        if (pa && pb) {
            const Point2 p = a.point(i);
            const Point2 q = b.point(i);
            out.set(i, {0.5 * (p.x + q.x), 0.5 * (p.y + q.y)});
        } else if (pa) {
            out.set(i, a.point(i));
        } else if (pb) {
            out.set(i, b.point(i));
        }
    }
    return out;
}

namespace {

void require(const LandmarkSet& set, std::initializer_list<LandmarkGroup> groups, const char* op) {
    std::vector<LandmarkGroup> missing;
    for (auto g : groups) {
        if (!set.group_complete(g)) missing.push_back(g);
    }
    if (!missing.empty()) {
        std::string msg = std::string(op) + ": incomplete prerequisite groups:";
        for (auto g : missing) msg += " " + std::string(group_name(g));
        throw CompletionError(msg, std::move(missing));
    }
}

}  // namespace

LandmarkSet complete_nose(const LandmarkSet& set) {
    if (set.present(layout::kNose.first)) return set;
    require(set, {LandmarkGroup::LeftEye, LandmarkGroup::RightEye, LandmarkGroup::Mouth},
            "complete_nose");
    const Point2 l = group_centroid(set, LandmarkGroup::LeftEye);
    const Point2 r = group_centroid(set, LandmarkGroup::RightEye);
    const Point2 m = group_centroid(set, LandmarkGroup::Mouth);
    LandmarkSet out = set;
    out.set(layout::kNose.first, {(l.x + r.x + m.x) / 3.0, (l.y + r.y + m.y) / 3.0});
    return out;
}

LandmarkSet complete_pupils(const LandmarkSet& set) {
    LandmarkSet out = set;
    const std::pair<LandmarkGroup, std::size_t> sides[] = {
        {LandmarkGroup::LeftEye, layout::kLeftPupil.first},
        {LandmarkGroup::RightEye, layout::kRightPupil.first},
    };
    for (const auto& [eye, pupil] : sides) {
        if (set.present(pupil)) continue;
        require(set, {eye}, "complete_pupils");
        out.set(pupil, group_centroid(set, eye));
    }
    return out;
}

LandmarkSet complete_eyebrow_from_other(const LandmarkSet& set, EyebrowSide missing) {
    const bool left_absent = set.group_absent(LandmarkGroup::LeftEyebrow);
    const bool right_absent = set.group_absent(LandmarkGroup::RightEyebrow);
    const bool left_full = set.group_complete(LandmarkGroup::LeftEyebrow);
    const bool right_full = set.group_complete(LandmarkGroup::RightEyebrow);
    const bool ok = missing == EyebrowSide::Left ? (left_absent && right_full)
                                                 : (right_absent && left_full);
    if (!ok) {
        throw CompletionError(
            "complete_eyebrow_from_other: exactly one eyebrow must be present and the other absent");
    }
    require(set, {LandmarkGroup::LeftEye, LandmarkGroup::RightEye}, "complete_eyebrow_from_other");

    const auto from_eye = missing == EyebrowSide::Left ? LandmarkGroup::RightEye : LandmarkGroup::LeftEye;
    const auto to_eye = missing == EyebrowSide::Left ? LandmarkGroup::LeftEye : LandmarkGroup::RightEye;
    const auto from_brow =
        missing == EyebrowSide::Left ? LandmarkGroup::RightEyebrow : LandmarkGroup::LeftEyebrow;
    const auto to_brow = index_range(missing == EyebrowSide::Left ? LandmarkGroup::LeftEyebrow
                                                                  : LandmarkGroup::RightEyebrow);

    const auto src = set.group_points(from_eye);
    const auto dst = set.group_points(to_eye);
    const AffineTransform map = estimate_affine(src, dst);
    const auto brow = set.group_points(from_brow);
    LandmarkSet out = set;
    for (std::size_t k = 0; k < brow.size(); ++k) out.set(to_brow[k], map(brow[k]));
    return out;
}

LandmarkSet complete_eyebrows_from_eyelids(const LandmarkSet& set) {
    if (!set.group_absent(LandmarkGroup::LeftEyebrow) || !set.group_absent(LandmarkGroup::RightEyebrow)) {
        throw CompletionError("complete_eyebrows_from_eyelids: both eyebrows must be absent");
    }
    require(set, {LandmarkGroup::LeftEye, LandmarkGroup::RightEye}, "complete_eyebrows_from_eyelids");
    // "Up" and eye height are measured in the face frame: perpendicular to the
    // line through the eye centroids. For level eyes this is image -y and the
    // bounding-box height.
    const Point2 lc = group_centroid(set, LandmarkGroup::LeftEye);
    const Point2 rc = group_centroid(set, LandmarkGroup::RightEye);
    const double axis_len = distance(lc, rc);
    if (!(axis_len > 0.0)) throw CompletionError("complete_eyebrows_from_eyelids: coincident eye centroids");
    const Point2 down{-(rc.y - lc.y) / axis_len, (rc.x - lc.x) / axis_len};

    LandmarkSet out = set;
    const std::pair<LandmarkGroup, IndexRange> sides[] = {
        {LandmarkGroup::LeftEye, layout::kLeftEyebrow},
        {LandmarkGroup::RightEye, layout::kRightEyebrow},
    };
    for (const auto& [eye, brow] : sides) {
        const auto pts = set.group_points(eye);
        const Point2 c = group_centroid(set, eye);
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (const auto& p : pts) {
            const double d = p.x * down.x + p.y * down.y;
            lo = std::min(lo, d);
            hi = std::max(hi, d);
        }
        const double lift = kEyelidBrowLift * (hi - lo);
        for (std::size_t k = 0; k < layout::kUpperEyelidCount; ++k) {
            const Point2 p = pts[k];
            out.set(brow[k], {c.x + kEyelidBrowScale * (p.x - c.x) - lift * down.x,
                              c.y + kEyelidBrowScale * (p.y - c.y) - lift * down.y});
        }
    }
    return out;
}

std::vector<LandmarkGroup> missing_prerequisites(const LandmarkSet& set) {
    std::vector<LandmarkGroup> missing;
    for (auto g : {LandmarkGroup::ChinContour, LandmarkGroup::Mouth, LandmarkGroup::LeftEye,
                   LandmarkGroup::RightEye}) {
        if (!set.group_complete(g)) missing.push_back(g);
    }
    return missing;
}

LandmarkSet complete_all(const LandmarkSet& set) {
    auto missing = missing_prerequisites(set);
    if (!missing.empty()) {
        std::string msg = "uncompletable landmark set; missing prerequisite groups:";
        for (auto g : missing) msg += " " + std::string(group_name(g));
        throw CompletionError(msg, std::move(missing));
    }
    LandmarkSet out = set;
    const bool left_absent = out.group_absent(LandmarkGroup::LeftEyebrow);
    const bool right_absent = out.group_absent(LandmarkGroup::RightEyebrow);
    const bool left_full = out.group_complete(LandmarkGroup::LeftEyebrow);
    const bool right_full = out.group_complete(LandmarkGroup::RightEyebrow);
    if (left_absent && right_absent) {
        out = complete_eyebrows_from_eyelids(out);
    } else if (left_absent && right_full) {
        out = complete_eyebrow_from_other(out, EyebrowSide::Left);
    } else if (right_absent && left_full) {
        out = complete_eyebrow_from_other(out, EyebrowSide::Right);
    } else if (!left_full || !right_full) {
        std::vector<LandmarkGroup> partial;
        if (!left_full) partial.push_back(LandmarkGroup::LeftEyebrow);
        if (!right_full) partial.push_back(LandmarkGroup::RightEyebrow);
        throw CompletionError("uncompletable landmark set: partially labeled eyebrow", partial);
    }
    out = complete_nose(out);
    out = complete_pupils(out);
    return out;
}

}  // namespace mangalm
