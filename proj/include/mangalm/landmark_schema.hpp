#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mangalm {

inline constexpr std::size_t kNumLandmarks = 60;

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
    friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
    friend Point2 operator*(double s, Point2 a) { return {s * a.x, s * a.y}; }
    friend bool operator==(Point2 a, Point2 b) = default;
};

double distance(Point2 a, Point2 b);

enum class LandmarkGroup {
    ChinContour,
    LeftEyebrow,
    RightEyebrow,
    Nose,
    LeftEye,
    LeftPupil,
    RightEye,
    RightPupil,
    Mouth,
};

inline constexpr std::array<LandmarkGroup, 9> kAllGroups = {
    LandmarkGroup::ChinContour, LandmarkGroup::LeftEyebrow, LandmarkGroup::RightEyebrow,
    LandmarkGroup::Nose,        LandmarkGroup::LeftEye,     LandmarkGroup::LeftPupil,
    LandmarkGroup::RightEye,    LandmarkGroup::RightPupil,  LandmarkGroup::Mouth,
};

/// Half-open range [first, first + count) of canonical indices.
struct IndexRange {
    std::size_t first;
    std::size_t count;

    constexpr std::size_t end() const { return first + count; }
    constexpr bool contains(std::size_t i) const { return i >= first && i < end(); }
    constexpr std::size_t operator[](std::size_t k) const { return first + k; }
};

// Canonical layout. Chin runs from the image-left temple (0) to the image-right
// temple (16). Eye contours go clockwise in image coordinates from the leftmost
// point, so relative indices 0-4 trace the upper eyelid.
namespace layout {
inline constexpr IndexRange kChin{0, 17};
inline constexpr IndexRange kLeftEyebrow{17, 5};
inline constexpr IndexRange kRightEyebrow{22, 5};
inline constexpr IndexRange kNose{27, 1};
inline constexpr IndexRange kLeftEye{28, 10};
inline constexpr IndexRange kLeftPupil{38, 1};
inline constexpr IndexRange kRightEye{39, 10};
inline constexpr IndexRange kRightPupil{49, 1};
inline constexpr IndexRange kMouth{50, 10};

inline constexpr std::size_t kChinFirst = 0;
inline constexpr std::size_t kChinLast = 16;
inline constexpr std::size_t kUpperEyelidCount = 5;
}  // namespace layout

class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

IndexRange index_range(LandmarkGroup group);
std::string_view group_name(LandmarkGroup group);
LandmarkGroup group_from_name(std::string_view name);

/// Throws SchemaError for indices outside 0..59.
LandmarkGroup group_of(std::size_t index);

/// 60 slots with presence flags. Coordinates of absent slots are meaningless.
class LandmarkSet {
public:
    LandmarkSet() = default;

    static LandmarkSet from_points(const std::array<Point2, kNumLandmarks>& points);

    bool present(std::size_t i) const { return present_.at(i); }
    Point2 point(std::size_t i) const { return points_.at(i); }
    const std::array<Point2, kNumLandmarks>& points() const { return points_; }
    const std::array<bool, kNumLandmarks>& presence() const { return present_; }

    void set(std::size_t i, Point2 p);
    void clear(std::size_t i);

    bool complete() const;
    bool group_complete(LandmarkGroup group) const;
    bool group_absent(LandmarkGroup group) const;
    std::size_t present_count() const;

    /// Points of a group, in canonical order. Throws if any is absent.
    std::vector<Point2> group_points(LandmarkGroup group) const;

    friend bool operator==(const LandmarkSet& a, const LandmarkSet& b);

private:
    std::array<Point2, kNumLandmarks> points_{};
    std::array<bool, kNumLandmarks> present_{};
};

class IncompleteGroupError : public std::runtime_error {
public:
    IncompleteGroupError(LandmarkGroup group);
    LandmarkGroup group() const { return group_; }

private:
    LandmarkGroup group_;
};

/// Arithmetic mean of the group's points; throws IncompleteGroupError.
Point2 group_centroid(const LandmarkSet& set, LandmarkGroup group);

struct ValidationReport {
    std::vector<std::size_t> out_of_bounds;
    std::vector<LandmarkGroup> incomplete_groups;

    bool valid() const { return out_of_bounds.empty(); }
    bool complete() const { return incomplete_groups.empty(); }
    friend bool operator==(const ValidationReport&, const ValidationReport&) = default;
};

/// Image frame is [0, width] x [0, height]; bounds are inclusive.
ValidationReport validate(const LandmarkSet& set, double width, double height);

}  // namespace mangalm
