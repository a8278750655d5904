#include "mangalm/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "mangalm/geometry.hpp"

namespace mangalm {

namespace {

struct Stroke {
    Point2 a, b;
    double half_width;
    double darkness;
};

struct Disk {
    Point2 center;
    double radius;
    double darkness;
};

double segment_distance(Point2 p, Point2 a, Point2 b) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(p.x - (a.x + t * vx), p.y - (a.y + t * vy));
}

class Canvas {
public:
    Canvas(int w, int h) : ink_(static_cast<std::size_t>(w) * h, 0.0), w_(w), h_(h) {}

    void stroke(const Stroke& s) {
        const double pad = s.half_width + 1.0;
        for_box(std::min(s.a.x, s.b.x) - pad, std::min(s.a.y, s.b.y) - pad, std::max(s.a.x, s.b.x) + pad,
                std::max(s.a.y, s.b.y) + pad, [&](Point2 c) {
                    const double d = segment_distance(c, s.a, s.b);
                    return s.darkness * std::clamp(s.half_width + 0.5 - d, 0.0, 1.0);
                });
    }

    void polyline(const std::vector<Point2>& pts, double half_width, double darkness, bool closed) {
        for (std::size_t i = 0; i + 1 < pts.size(); ++i) stroke({pts[i], pts[i + 1], half_width, darkness});
        if (closed && pts.size() > 2) stroke({pts.back(), pts.front(), half_width, darkness});
    }

    void disk(const Disk& d) {
        const double pad = d.radius + 1.0;
        for_box(d.center.x - pad, d.center.y - pad, d.center.x + pad, d.center.y + pad, [&](Point2 c) {
            const double dist = distance(c, d.center);
            return d.darkness * std::clamp(d.radius + 0.5 - dist, 0.0, 1.0);
        });
    }

    void highlight(const Disk& d) {
        const double pad = d.radius + 1.0;
        const int c0 = std::max(0, static_cast<int>(std::floor(d.center.x - pad)));
        const int c1 = std::min(w_ - 1, static_cast<int>(std::ceil(d.center.x + pad)));
        const int r0 = std::max(0, static_cast<int>(std::floor(d.center.y - pad)));
        const int r1 = std::min(h_ - 1, static_cast<int>(std::ceil(d.center.y + pad)));
        for (int r = r0; r <= r1; ++r) {
            for (int c = c0; c <= c1; ++c) {
                const double cover = std::clamp(d.radius + 0.5 - distance({c + 0.5, r + 0.5}, d.center), 0.0, 1.0);
                auto& ink = ink_[static_cast<std::size_t>(r) * w_ + c];
                ink *= 1.0 - d.darkness * cover;
            }
        }
    }

    Image to_image(Rng& rng, double noise_sigma) const {
        Image img(w_, h_);
        for (std::size_t i = 0; i < ink_.size(); ++i) {
            const double v = 1.0 - ink_[i] + noise_sigma * rng.normal();
            img.pixels()[i] = std::clamp(v, 0.0, 1.0);
        }
        return img;
    }

private:
    template <typename F>
    void for_box(double x0, double y0, double x1, double y1, F coverage) {
        const int c0 = std::max(0, static_cast<int>(std::floor(x0)));
        const int c1 = std::min(w_ - 1, static_cast<int>(std::ceil(x1)));
        const int r0 = std::max(0, static_cast<int>(std::floor(y0)));
        const int r1 = std::min(h_ - 1, static_cast<int>(std::ceil(y1)));
        for (int r = r0; r <= r1; ++r) {
            for (int c = c0; c <= c1; ++c) {
                auto& ink = ink_[static_cast<std::size_t>(r) * w_ + c];
                ink = std::max(ink, coverage(Point2{c + 0.5, r + 0.5}));
            }
        }
    }

    std::vector<double> ink_;
    int w_, h_;
};

std::vector<Point2> range_points(const LandmarkSet& s, IndexRange r) {
    std::vector<Point2> out;
    for (std::size_t i = r.first; i < r.end(); ++i) out.push_back(s.point(i));
    return out;
}

// Extra, non-landmark geometry drawn alongside the face, in the local frame.
struct FaceDecor {
    double head_top = -1.3;
    double bangs_bottom = -0.5;
    int bangs = 5;
    double eye_rx[2]{};
    double eye_ry[2]{};
    double pupil_radius = 0.05;
};

LandmarkSet build_shape(Rng& rng, FaceDecor* decor) {
    LandmarkSet s;
    // Chin contour: temple to temple through the chin tip.
    const double jaw_top = rng.uniform(-0.2, -0.05);
    const double jaw_depth = rng.uniform(1.0, 1.3);
    const double fullness = rng.uniform(0.75, 1.25);
    const double pinch = rng.uniform(0.85, 1.15);
    for (std::size_t k = 0; k < layout::kChin.count; ++k) {
        const double th = std::numbers::pi * (1.0 - static_cast<double>(k) / 16.0);
        const double c = std::cos(th);
        const double sn = std::max(0.0, std::sin(th));
        const double x = (c < 0 ? -1.0 : 1.0) * std::pow(std::abs(c), pinch);
        s.set(layout::kChin[k], {x, jaw_top + jaw_depth * std::pow(sn, fullness)});
    }

    const double eye_dx = rng.uniform(0.36, 0.46);
    const double eye_y = rng.uniform(0.0, 0.12);
    const double rx = rng.uniform(0.15, 0.22);
    const double ry = rng.uniform(0.13, 0.28);
    const double gaze_x = rng.uniform(-0.25, 0.25);
    const double gaze_y = rng.uniform(-0.15, 0.15);
    const double brow_gap = rng.uniform(0.08, 0.18);
    const double brow_arch = rng.uniform(0.0, 0.08);
    const double brow_tilt = rng.uniform(-0.08, 0.08);

    double brow_top = 0.0;
    for (int side = 0; side < 2; ++side) {
        const double sign = side == 0 ? -1.0 : 1.0;
        const Point2 c{sign * eye_dx, eye_y + rng.uniform(-0.015, 0.015)};
        const double erx = rx * rng.uniform(0.95, 1.05);
        const double ery = ry * rng.uniform(0.95, 1.05);
        const auto eye = side == 0 ? layout::kLeftEye : layout::kRightEye;
        for (std::size_t k = 0; k < 10; ++k) {
            const double phi = 2.0 * std::numbers::pi * static_cast<double>(k) / 10.0;
            s.set(eye[k], {c.x - erx * std::cos(phi), c.y - ery * std::sin(phi)});
        }
        const auto pupil = side == 0 ? layout::kLeftPupil : layout::kRightPupil;
        s.set(pupil.first, {c.x + gaze_x * erx, c.y + gaze_y * ery});

        const auto brow = side == 0 ? layout::kLeftEyebrow : layout::kRightEyebrow;
        for (std::size_t k = 0; k < 5; ++k) {
            const double t = -1.0 + 0.5 * static_cast<double>(k);
            const double x = c.x + 1.1 * erx * t;
            const double y = c.y - ery - brow_gap - brow_arch * (1.0 - t * t) + sign * brow_tilt * t;
            s.set(brow[k], {x, y});
            brow_top = std::min(brow_top, y);
        }
        if (decor) {
            decor->eye_rx[side] = erx;
            decor->eye_ry[side] = ery;
        }
    }

    const double nose_y = rng.uniform(0.33, 0.48) + eye_y * 0.5;
    s.set(layout::kNose.first, {rng.uniform(-0.04, 0.04), nose_y});

    const double chin_bottom = jaw_top + jaw_depth;
    const double mouth_y = std::min(nose_y + rng.uniform(0.2, 0.35), chin_bottom - 0.25);
    const double mouth_w = rng.uniform(0.12, 0.28);
    const double curve = rng.uniform(-0.04, 0.08);
    const double mouth_x = rng.uniform(-0.04, 0.04);
    for (std::size_t k = 0; k < 10; ++k) {
        const double t = -1.0 + 2.0 * static_cast<double>(k) / 9.0;
        s.set(layout::kMouth[k], {mouth_x + mouth_w * t, mouth_y + curve * (1.0 - t * t)});
    }

    if (decor) {
        decor->head_top = rng.uniform(-1.45, -1.2);
        decor->bangs_bottom = brow_top - rng.uniform(0.06, 0.15);
        decor->bangs = static_cast<int>(rng.below(5)) + 3;
        decor->pupil_radius = rng.uniform(0.35, 0.5) * std::min(rx, ry);
    }
    return s;
}

}  // namespace

LandmarkSet synthetic_face_shape(Rng& rng) { return build_shape(rng, nullptr); }

SyntheticFace render_synthetic_face(Rng& rng, const SyntheticOptions& options) {
    FaceDecor decor;
    const LandmarkSet local = build_shape(rng, &decor);

    const double half_width = 0.5 * rng.uniform(options.min_face_width, options.max_face_width);
    SimilarityTransform place;
    place.scale = half_width;
    place.theta = rng.uniform(-options.max_rotation_deg, options.max_rotation_deg) * std::numbers::pi / 180.0;

    // Face box in local units, then the page with random padding around it.
    const auto pts = local.points();
    auto box = bounding_box(pts);
    const double pad_x = rng.uniform(0.05, 0.15) * box.width();
    const double top = box.min_y - rng.uniform(0.15, 0.3) * box.height();
    const double bottom = box.max_y + rng.uniform(0.02, 0.08) * box.height();
    std::vector<Point2> corners = {{box.min_x - pad_x, top}, {box.max_x + pad_x, top},
                                   {box.max_x + pad_x, bottom}, {box.min_x - pad_x, bottom}};
    const auto rotated = mangalm::apply(place, corners);
    const auto rbox = bounding_box(rotated);
    const double margin_l = rng.uniform(8, 30), margin_t = rng.uniform(8, 30);
    const double margin_r = rng.uniform(8, 30), margin_b = rng.uniform(8, 30);
    place.tx = margin_l - rbox.min_x;
    place.ty = margin_t - rbox.min_y;
    const int width = static_cast<int>(std::ceil(rbox.width() + margin_l + margin_r));
    const int height = static_cast<int>(std::ceil(rbox.height() + margin_t + margin_b));

    SyntheticFace face;
    face.truth = mangalm::apply(place, local);
    face.bbox = {margin_l, margin_t, rbox.width(), rbox.height()};

    const double px = half_width;  // pixels per local unit
    const double line = std::max(0.8, 0.012 * px);
    Canvas canvas(width, height);
    auto to_page = [&](Point2 p) { return place(p); };
    auto map_all = [&](const std::vector<Point2>& v) { return mangalm::apply(place, v); };

    // Head outline and hair.
    const Point2 lt = local.point(layout::kChinFirst);
    const Point2 rt = local.point(layout::kChinLast);
    std::vector<Point2> skull;
    for (int k = 0; k <= 16; ++k) {
        const double th = std::numbers::pi * static_cast<double>(k) / 16.0;
        const double x = -std::cos(th) * 1.08;
        const double y = lt.y + (decor.head_top - lt.y) * std::sin(th);
        skull.push_back({x, y});
    }
    canvas.polyline(map_all(skull), line * 1.2, 0.95, false);
    for (int b = 0; b < decor.bangs; ++b) {
        const double x0 = rng.uniform(-0.9, 0.9);
        const double x1 = x0 + rng.uniform(-0.25, 0.25);
        const double y0 = decor.head_top * rng.uniform(0.6, 0.9);
        canvas.stroke({to_page({x0, y0}), to_page({x1, decor.bangs_bottom}), line, 0.9});
    }
    canvas.stroke({to_page({-1.08, lt.y}), to_page(lt), line, 0.95});
    canvas.stroke({to_page({1.08, rt.y}), to_page(rt), line, 0.95});

    canvas.polyline(mangalm::apply(place, range_points(local, layout::kChin)), line * 1.3, 1.0, false);
    canvas.polyline(map_all(range_points(local, layout::kLeftEyebrow)), line * 1.6, 0.95, false);
    canvas.polyline(map_all(range_points(local, layout::kRightEyebrow)), line * 1.6, 0.95, false);

    for (int side = 0; side < 2; ++side) {
        const auto eye = range_points(local, side == 0 ? layout::kLeftEye : layout::kRightEye);
        const auto page_eye = map_all(eye);
        canvas.polyline(page_eye, line, 0.95, true);
        // Heavier upper lid, as inked in manga.
        std::vector<Point2> lid(page_eye.begin(), page_eye.begin() + 6);
        canvas.polyline(lid, line * 2.0, 1.0, false);
        const Point2 pupil = local.point(side == 0 ? layout::kLeftPupil.first : layout::kRightPupil.first);
        canvas.disk({to_page(pupil), decor.pupil_radius * px, 0.9});
        canvas.highlight({to_page(pupil + Point2{-0.35 * decor.pupil_radius, -0.35 * decor.pupil_radius}),
                          0.3 * decor.pupil_radius * px, 1.0});
    }

    const Point2 nose = local.point(layout::kNose.first);
    canvas.stroke({to_page(nose + Point2{-0.03, -0.09}), to_page(nose), line * 0.9, 0.9});
    canvas.stroke({to_page(nose), to_page(nose + Point2{0.04, -0.01}), line * 0.9, 0.9});
    canvas.polyline(map_all(range_points(local, layout::kMouth)), line * 1.2, 0.95, false);

    face.page = canvas.to_image(rng, options.noise_sigma);
    return face;
}

namespace {

LandmarkSet noisy_label(const LandmarkSet& truth, double sigma, Rng& rng) {
    LandmarkSet out;
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
        const Point2 p = truth.point(i);
        out.set(i, sigma > 0 ? Point2{p.x + rng.normal(0, sigma), p.y + rng.normal(0, sigma)} : p);
    }
    return out;
}

void omit(LandmarkSet& set, IndexRange r) {
    for (std::size_t i = r.first; i < r.end(); ++i) set.clear(i);
}

}  // namespace

std::vector<FaceRecord> generate_synthetic_dataset(const std::filesystem::path& dir,
                                                   const SyntheticOptions& options) {
    std::filesystem::create_directories(dir / "images");
    Rng rng(options.seed);
    std::vector<FaceRecord> records;
    for (int n = 0; n < options.count; ++n) {
        char id[32];
        std::snprintf(id, sizeof id, "synth-%05d", n);
        FaceRecord rec;
        rec.id = id;
        rec.image = std::string("images/") + id + ".pgm";

        SyntheticOptions face_opts = options;
        const bool excluded = rng.uniform() < options.excluded_fraction;
        const bool tiny = excluded && rng.uniform() < 0.5;
        if (tiny) {
            face_opts.min_face_width = 40.0;
            face_opts.max_face_width = 55.0;
        }
        const SyntheticFace face = render_synthetic_face(rng, face_opts);
        rec.bbox = face.bbox;
        if (excluded && !tiny) {
            const ExclusionFlag flags[] = {ExclusionFlag::Profile, ExclusionFlag::InhumanFeatures,
                                           ExclusionFlag::OccludedEyes};
            rec.flags.push_back(flags[rng.below(3)]);
        }

        const bool omit_optional = rng.uniform() < options.omit_optional_fraction;
        const bool drop_left_brow = omit_optional && rng.uniform() < 0.5;
        const bool drop_right_brow = omit_optional && rng.uniform() < 0.5;
        const bool drop_nose = omit_optional && rng.uniform() < 0.5;
        const bool drop_pupils = omit_optional && rng.uniform() < 0.5;
        const int labelers = rng.uniform() < options.double_label_fraction ? 2 : 1;
        for (int l = 0; l < labelers; ++l) {
            LandmarkSet label = noisy_label(face.truth, options.label_noise_px, rng);
            if (drop_left_brow) omit(label, layout::kLeftEyebrow);
            if (drop_right_brow) omit(label, layout::kRightEyebrow);
            if (drop_nose) omit(label, layout::kNose);
            if (drop_pupils) {
                omit(label, layout::kLeftPupil);
                omit(label, layout::kRightPupil);
            }
            rec.annotations.push_back({l == 0 ? "synth-a" : "synth-b", label});
        }
        write_pgm(dir / rec.image, face.page);
        records.push_back(std::move(rec));
    }
    write_manifest(dir / "manifest.jsonl", records);
    return records;
}

}  // namespace mangalm
