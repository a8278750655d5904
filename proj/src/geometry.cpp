#include "mangalm/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace mangalm {

Eigen::Matrix2d SimilarityTransform::linear() const {
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    Eigen::Matrix2d m;
    m << scale * c, -scale * s, scale * s, scale * c;
    return m;
}

Point2 SimilarityTransform::operator()(Point2 p) const {
    const double c = scale * std::cos(theta);
    const double s = scale * std::sin(theta);
    return {c * p.x - s * p.y + tx, s * p.x + c * p.y + ty};
}

SimilarityTransform SimilarityTransform::inverse() const {
    SimilarityTransform inv;
    inv.scale = 1.0 / scale;
    inv.theta = -theta;
    const Point2 t = inv({tx, ty});
    inv.tx = -t.x;
    inv.ty = -t.y;
    return inv;
}

SimilarityTransform SimilarityTransform::compose(const SimilarityTransform& first) const {
    SimilarityTransform out;
    out.scale = scale * first.scale;
    out.theta = theta + first.theta;
    const Point2 t = (*this)({first.tx, first.ty});
    out.tx = t.x;
    out.ty = t.y;
    return out;
}

AffineTransform AffineTransform::from(const SimilarityTransform& s) {
    AffineTransform a;
    a.A = s.linear();
    a.t = {s.tx, s.ty};
    return a;
}

Point2 AffineTransform::operator()(Point2 p) const {
    return {A(0, 0) * p.x + A(0, 1) * p.y + t(0), A(1, 0) * p.x + A(1, 1) * p.y + t(1)};
}

AffineTransform AffineTransform::inverse() const {
    if (std::abs(A.determinant()) < 1e-300) throw FitError("singular affine transform");
    AffineTransform inv;
    inv.A = A.inverse();
    inv.t = -inv.A * t;
    return inv;
}

namespace {

Point2 mean_of(std::span<const Point2> pts) {
    Point2 m;
    for (const auto& p : pts) m = m + p;
    return (1.0 / static_cast<double>(pts.size())) * m;
}

void check_pair(std::span<const Point2> src, std::span<const Point2> dst, std::size_t min_n) {
    if (src.size() != dst.size()) throw FitError("point lists differ in length");
    if (src.size() < min_n) {
        throw FitError("need at least " + std::to_string(min_n) + " point pairs");
    }
}

}  // namespace

SimilarityTransform estimate_similarity(std::span<const Point2> src, std::span<const Point2> dst) {
    check_pair(src, dst, 2);
    const Point2 ms = mean_of(src);
    const Point2 md = mean_of(dst);
    double dot = 0.0, cross = 0.0, norm = 0.0, spread = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        const Point2 a = src[i] - ms;
        const Point2 b = dst[i] - md;
        dot += a.x * b.x + a.y * b.y;
        cross += a.x * b.y - a.y * b.x;
        norm += a.x * a.x + a.y * a.y;
        spread = std::max({spread, std::abs(src[i].x), std::abs(src[i].y)});
    }
    if (!(norm > 1e-24 * std::max(1.0, spread * spread) * static_cast<double>(src.size()))) {
        throw FitError("degenerate source points (all coincident)");
    }
    const double a = dot / norm;
    const double b = cross / norm;
    SimilarityTransform t;
    t.scale = std::hypot(a, b);
    if (!(t.scale > 0.0)) throw FitError("degenerate similarity fit (zero scale)");
    t.theta = std::atan2(b, a);
    t.tx = md.x - (a * ms.x - b * ms.y);
    t.ty = md.y - (b * ms.x + a * ms.y);
    return t;
}

AffineTransform estimate_affine(std::span<const Point2> src, std::span<const Point2> dst) {
    check_pair(src, dst, 3);
    const Point2 ms = mean_of(src);
    const Point2 md = mean_of(dst);
    // Centered normal equations: the x-row and y-row of A are two independent
    // 2-parameter systems sharing the source covariance; the translation
    // follows from the centroids.
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    Eigen::Matrix2d cross = Eigen::Matrix2d::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
        const Eigen::Vector2d a(src[i].x - ms.x, src[i].y - ms.y);
        const Eigen::Vector2d b(dst[i].x - md.x, dst[i].y - md.y);
        cov += a * a.transpose();
        cross += a * b.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
    const double lo = eig.eigenvalues()(0);
    const double hi = eig.eigenvalues()(1);
    if (!(hi > 0.0) || lo <= 1e-14 * hi) throw FitError("collinear or degenerate source points");

    Eigen::Matrix2d rows_t;  // columns are the x-row and y-row coefficients
    if (lo > 1e-10 * hi) {
        rows_t = cov.ldlt().solve(cross);
    } else {
        rows_t = cov.completeOrthogonalDecomposition().pseudoInverse() * cross;
    }
    AffineTransform t;
    t.A = rows_t.transpose();
    t.t = Eigen::Vector2d(md.x, md.y) - t.A * Eigen::Vector2d(ms.x, ms.y);
    return t;
}

std::vector<Point2> apply(const SimilarityTransform& t, std::span<const Point2> points) {
    std::vector<Point2> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(t(p));
    return out;
}

std::vector<Point2> apply(const AffineTransform& t, std::span<const Point2> points) {
    std::vector<Point2> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(t(p));
    return out;
}

namespace {
template <typename Transform>
LandmarkSet apply_set(const Transform& t, const LandmarkSet& set) {
    LandmarkSet out;
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
        if (set.present(i)) out.set(i, t(set.point(i)));
    }
    return out;
}
}  // namespace

LandmarkSet apply(const SimilarityTransform& t, const LandmarkSet& set) { return apply_set(t, set); }
LandmarkSet apply(const AffineTransform& t, const LandmarkSet& set) { return apply_set(t, set); }

BoundingBox bounding_box(std::span<const Point2> points) {
    BoundingBox b{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                  -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& p : points) {
        b.min_x = std::min(b.min_x, p.x);
        b.min_y = std::min(b.min_y, p.y);
        b.max_x = std::max(b.max_x, p.x);
        b.max_y = std::max(b.max_y, p.y);
    }
    return b;
}

std::array<Point2, kNumLandmarks> average_shape(std::span<const LandmarkSet> shapes) {
    if (shapes.empty()) throw FitError("mean shape needs at least one training shape");
    // Each slot is summed in sorted order.
    std::array<Point2, kNumLandmarks> mean{};
    std::vector<double> xs(shapes.size()), ys(shapes.size());
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
        for (std::size_t k = 0; k < shapes.size(); ++k) {
            if (!shapes[k].present(i)) {
                throw FitError("mean shape requires complete training shapes");
            }
            xs[k] = shapes[k].point(i).x;
            ys[k] = shapes[k].point(i).y;
        }
        std::sort(xs.begin(), xs.end());
        std::sort(ys.begin(), ys.end());
        double sx = 0.0, sy = 0.0;
        for (std::size_t k = 0; k < shapes.size(); ++k) {
            sx += xs[k];
            sy += ys[k];
        }
        mean[i] = {sx / static_cast<double>(shapes.size()), sy / static_cast<double>(shapes.size())};
    }
    return mean;
}

MeanShape compute_mean_shape(std::span<const LandmarkSet> shapes, int canvas, double margin) {
    if (canvas <= 0) throw FitError("canvas must be positive");
    if (!(margin >= 0.0 && margin < 0.5)) throw FitError("margin must lie in [0, 0.5)");
    const auto avg = average_shape(shapes);
    const auto box = bounding_box(avg);
    if (!(box.width() > 0.0) || !(box.height() > 0.0)) {
        throw FitError("mean shape has a degenerate bounding box");
    }
    const double inner = canvas * (1.0 - 2.0 * margin);
    const double s = std::min(inner / box.width(), inner / box.height());
    const double cx = 0.5 * (box.min_x + box.max_x);
    const double cy = 0.5 * (box.min_y + box.max_y);
    MeanShape out;
    out.canvas = canvas;
    out.margin = margin;
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
        out.points[i] = {(avg[i].x - cx) * s + 0.5 * canvas, (avg[i].y - cy) * s + 0.5 * canvas};
    }
    return out;
}

Image render_heatmap(std::span<const Point2> shape, int canvas, double radius) {
    Image h(canvas, canvas, 0.0);
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> best(h.pixels().size(), inf);
    for (const auto& p : shape) {
        const int c0 = std::max(0, static_cast<int>(std::floor(p.x - radius)) - 1);
        const int c1 = std::min(canvas - 1, static_cast<int>(std::floor(p.x + radius)) + 1);
        const int r0 = std::max(0, static_cast<int>(std::floor(p.y - radius)) - 1);
        const int r1 = std::min(canvas - 1, static_cast<int>(std::floor(p.y + radius)) + 1);
        for (int r = r0; r <= r1; ++r) {
            const double dy = std::max({0.0, r - p.y, p.y - (r + 1.0)});
            for (int c = c0; c <= c1; ++c) {
                const double dx = std::max({0.0, c - p.x, p.x - (c + 1.0)});
                const double d = std::hypot(dx, dy);
                auto& b = best[static_cast<std::size_t>(r) * canvas + c];
                b = std::min(b, d);
            }
        }
    }
    for (std::size_t i = 0; i < best.size(); ++i) {
        if (best[i] <= radius) h.pixels()[i] = 1.0 / (1.0 + best[i]);
    }
    return h;
}

Image render_heatmap(const LandmarkSet& shape, int canvas, double radius) {
    if (!shape.complete()) throw FitError("heatmap needs a complete shape");
    return render_heatmap(std::span<const Point2>(shape.points()), canvas, radius);
}

}  // namespace mangalm
