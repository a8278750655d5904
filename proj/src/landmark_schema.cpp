#include "mangalm/landmark_schema.hpp"

#include <cmath>

namespace mangalm {

double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

IndexRange index_range(LandmarkGroup group) {
    switch (group) {
        case LandmarkGroup::ChinContour: return layout::kChin;
        case LandmarkGroup::LeftEyebrow: return layout::kLeftEyebrow;
        case LandmarkGroup::RightEyebrow: return layout::kRightEyebrow;
        case LandmarkGroup::Nose: return layout::kNose;
        case LandmarkGroup::LeftEye: return layout::kLeftEye;
        case LandmarkGroup::LeftPupil: return layout::kLeftPupil;
        case LandmarkGroup::RightEye: return layout::kRightEye;
        case LandmarkGroup::RightPupil: return layout::kRightPupil;
        case LandmarkGroup::Mouth: return layout::kMouth;
    }
    throw SchemaError("unknown landmark group");
}

std::string_view group_name(LandmarkGroup group) {
    switch (group) {
        case LandmarkGroup::ChinContour: return "chin";
        case LandmarkGroup::LeftEyebrow: return "left_eyebrow";
        case LandmarkGroup::RightEyebrow: return "right_eyebrow";
        case LandmarkGroup::Nose: return "nose";
        case LandmarkGroup::LeftEye: return "left_eye";
        case LandmarkGroup::LeftPupil: return "left_pupil";
        case LandmarkGroup::RightEye: return "right_eye";
        case LandmarkGroup::RightPupil: return "right_pupil";
        case LandmarkGroup::Mouth: return "mouth";
    }
    return "unknown";
}

LandmarkGroup group_from_name(std::string_view name) {
    for (auto g : kAllGroups) {
        if (group_name(g) == name) return g;
    }
    throw SchemaError("unknown landmark group name: " + std::string(name));
}

LandmarkGroup group_of(std::size_t index) {
    if (index >= kNumLandmarks) {
        throw SchemaError("landmark index out of range: " + std::to_string(index));
    }
    for (auto g : kAllGroups) {
        if (index_range(g).contains(index)) return g;
    }
    throw SchemaError("index not covered by layout: " + std::to_string(index));
}

LandmarkSet LandmarkSet::from_points(const std::array<Point2, kNumLandmarks>& points) {
    LandmarkSet s;
    s.points_ = points;
    s.present_.fill(true);
    return s;
}

void LandmarkSet::set(std::size_t i, Point2 p) {
    points_.at(i) = p;
    present_[i] = true;
}

void LandmarkSet::clear(std::size_t i) {
    points_.at(i) = {};
    present_[i] = false;
}

bool LandmarkSet::complete() const { return present_count() == kNumLandmarks; }

bool LandmarkSet::group_complete(LandmarkGroup group) const {
    const auto r = index_range(group);
    for (std::size_t i = r.first; i < r.end(); ++i) {
        if (!present_[i]) return false;
    }
    return true;
}

bool LandmarkSet::group_absent(LandmarkGroup group) const {
    const auto r = index_range(group);
    for (std::size_t i = r.first; i < r.end(); ++i) {
        if (present_[i]) return false;
    }
    return true;
}

std::size_t LandmarkSet::present_count() const {
    std::size_t n = 0;
    for (bool p : present_) n += p ? 1 : 0;
    return n;
}

std::vector<Point2> LandmarkSet::group_points(LandmarkGroup group) const {
    if (!group_complete(group)) throw IncompleteGroupError(group);
    const auto r = index_range(group);
    return {points_.begin() + static_cast<std::ptrdiff_t>(r.first),
            points_.begin() + static_cast<std::ptrdiff_t>(r.end())};
}

bool operator==(const LandmarkSet& a, const LandmarkSet& b) {
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
        if (a.present_[i] != b.present_[i]) return false;
        if (a.present_[i] && !(a.points_[i] == b.points_[i])) return false;
    }
    return true;
}

IncompleteGroupError::IncompleteGroupError(LandmarkGroup group)
    : std::runtime_error("landmark group incomplete: " + std::string(group_name(group))),
      group_(group) {}

Point2 group_centroid(const LandmarkSet& set, LandmarkGroup group) {
    const auto pts = set.group_points(group);
    Point2 sum;
    for (const auto& p : pts) sum = sum + p;
    return (1.0 / static_cast<double>(pts.size())) * sum;
}

ValidationReport validate(const LandmarkSet& set, double width, double height) {
    ValidationReport report;
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
        if (!set.present(i)) continue;
        const auto p = set.point(i);
        if (!(p.x >= 0.0 && p.x <= width && p.y >= 0.0 && p.y <= height)) {
            report.out_of_bounds.push_back(i);
        }
    }
    for (auto g : kAllGroups) {
        if (!set.group_complete(g)) report.incomplete_groups.push_back(g);
    }
    return report;
}

}  // namespace mangalm
