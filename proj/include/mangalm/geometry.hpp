#pragma once

#include <Eigen/Core>
#include <array>
#include <span>
#include <stdexcept>
#include <vector>

#include "mangalm/image.hpp"
#include "mangalm/landmark_schema.hpp"

namespace mangalm {

class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// p -> scale * R(theta) * p + translation, with R the usual
/// [[cos, -sin], [sin, cos]] acting on image coordinates (y down).
struct SimilarityTransform {
    double scale = 1.0;
    double theta = 0.0;
    double tx = 0.0;
    double ty = 0.0;

    static SimilarityTransform identity() { return {}; }

    Eigen::Matrix2d linear() const;
    Point2 operator()(Point2 p) const;
    SimilarityTransform inverse() const;
    /// (*this) after `first`.
    SimilarityTransform compose(const SimilarityTransform& first) const;
};

/// p -> A p + t. Reflections are representable (det A < 0).
struct AffineTransform {
    Eigen::Matrix2d A = Eigen::Matrix2d::Identity();
    Eigen::Vector2d t = Eigen::Vector2d::Zero();

    static AffineTransform identity() { return {}; }
    static AffineTransform from(const SimilarityTransform& s);

    Point2 operator()(Point2 p) const;
    AffineTransform inverse() const;
};

/// Least-squares similarity fit (closed form, 2-D Umeyama without reflection).
SimilarityTransform estimate_similarity(std::span<const Point2> src, std::span<const Point2> dst);

/// Least-squares 6-parameter affine fit. Throws FitError for collinear input.
AffineTransform estimate_affine(std::span<const Point2> src, std::span<const Point2> dst);

std::vector<Point2> apply(const SimilarityTransform& t, std::span<const Point2> points);
std::vector<Point2> apply(const AffineTransform& t, std::span<const Point2> points);
LandmarkSet apply(const SimilarityTransform& t, const LandmarkSet& set);
LandmarkSet apply(const AffineTransform& t, const LandmarkSet& set);

struct BoundingBox {
    double min_x, min_y, max_x, max_y;
    double width() const { return max_x - min_x; }
    double height() const { return max_y - min_y; }
};

BoundingBox bounding_box(std::span<const Point2> points);

/// Average training shape, scaled and centered into a square canvas inset by
/// `margin * canvas` on every side.
struct MeanShape {
    std::array<Point2, kNumLandmarks> points{};
    int canvas = 0;
    double margin = 0.0;

    LandmarkSet as_set() const { return LandmarkSet::from_points(points); }
    BoundingBox extent() const { return bounding_box(points); }
};

MeanShape compute_mean_shape(std::span<const LandmarkSet> shapes, int canvas, double margin);

/// Pointwise average without the canvas fit.
std::array<Point2, kNumLandmarks> average_shape(std::span<const LandmarkSet> shapes);

/// H(p) = 1 / (1 + d(p)) where d(p) is the distance from pixel p's unit square to
/// the nearest landmark; 0 where d(p) > radius. A pixel containing a landmark
/// therefore reads exactly 1.
Image render_heatmap(std::span<const Point2> shape, int canvas, double radius);
Image render_heatmap(const LandmarkSet& shape, int canvas, double radius);

}  // namespace mangalm
