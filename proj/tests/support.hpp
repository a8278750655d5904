#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <numbers>

#include <unistd.h>

#include "mangalm/geometry.hpp"
#include "mangalm/landmark_schema.hpp"
#include "mangalm/random.hpp"
#include "mangalm/synthetic.hpp"

namespace mangalm::testing {

/// A plausible face shape in pixel units, roughly `width` wide, centered at `center`.
inline LandmarkSet face_shape(Rng& rng, double width = 100.0, Point2 center = {60.0, 60.0}) {
    const LandmarkSet local = synthetic_face_shape(rng);
    LandmarkSet out;
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
        const Point2 p = local.point(i);
        out.set(i, {center.x + 0.5 * width * p.x, center.y + 0.5 * width * p.y});
    }
    return out;
}

inline SimilarityTransform random_similarity(Rng& rng) {
    SimilarityTransform t;
    t.scale = rng.uniform(0.3, 3.0);
    t.theta = rng.uniform(-std::numbers::pi, std::numbers::pi);
    t.tx = rng.uniform(-200.0, 200.0);
    t.ty = rng.uniform(-200.0, 200.0);
    return t;
}

inline std::vector<Point2> random_points(Rng& rng, std::size_t n, double lo = -50.0, double hi = 50.0) {
    std::vector<Point2> pts(n);
    for (auto& p : pts) p = {rng.uniform(lo, hi), rng.uniform(lo, hi)};
    return pts;
}

inline double max_point_error(const LandmarkSet& a, const LandmarkSet& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
        if (a.present(i) != b.present(i)) return INFINITY;
        if (a.present(i)) worst = std::max(worst, distance(a.point(i), b.point(i)));
    }
    return worst;
}

/// Eye contour: clockwise in image coordinates from the leftmost point.
inline std::array<Point2, 10> ellipse_eye(Point2 c, double rx, double ry) {
    std::array<Point2, 10> pts{};
    for (int k = 0; k < 10; ++k) {
        const double a = std::numbers::pi + 2.0 * std::numbers::pi * k / 10.0;
        pts[static_cast<std::size_t>(k)] = {c.x + rx * std::cos(a), c.y + ry * std::sin(a)};
    }
    return pts;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("mangalm-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace mangalm::testing
