#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mangalm/cascade_net.hpp"
#include "mangalm/geometry.hpp"
#include "mangalm/random.hpp"
#include "support.hpp"

namespace mangalm::testing {

/// Midpoint Riemann sum of the CED over [0, alpha], divided by alpha.
inline double riemann_auc(const std::vector<double>& errors, double alpha, int steps) {
    std::vector<double> sorted = errors;
    std::sort(sorted.begin(), sorted.end());
    double acc = 0.0;
    for (int i = 0; i < steps; ++i) {
        const double t = alpha * (i + 0.5) / steps;
        acc += static_cast<double>(std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin());
    }
    return acc / (static_cast<double>(steps) * static_cast<double>(sorted.size()));
}

inline MeanShape mean_shape_for(int canvas, double margin = 0.1, std::uint64_t seed = 9) {
    Rng rng(seed);
    std::vector<LandmarkSet> shapes;
    for (int i = 0; i < 20; ++i) shapes.push_back(face_shape(rng));
    return compute_mean_shape(shapes, canvas, margin);
}

/// Random image and a jittered mean-shape target on the model canvas.
inline TrainingSample random_sample(const MeanShape& ms, Rng& rng, double jitter) {
    TrainingSample s;
    s.record_id = "r" + std::to_string(rng.below(1u << 30));
    s.image = Image(ms.canvas, ms.canvas);
    for (auto& v : s.image.pixels()) v = rng.uniform();
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
        s.landmarks.set(i, ms.points[i] + Point2{rng.normal(0, jitter), rng.normal(0, jitter)});
    }
    return s;
}

/// Replaces every trainable tensor of `stage` with small random values so no
/// gradient path is blocked by the zero-initialized regression layer.
inline void randomize_trainable(CascadeModel& model, int stage, Rng& rng, double sigma) {
    for_each_trainable(model, stage, [&](const std::string&, double* data, std::size_t n, const std::vector<int>&) {
        for (std::size_t i = 0; i < n; ++i) data[i] = rng.normal(0.0, sigma);
    });
}

struct GradientCheck {
    double relative_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
    double worst_tensor_error = 0.0;
    std::string worst_tensor;
    std::size_t parameters = 0;
};

/// Central finite differences on every trainable parameter of `stage`.
inline GradientCheck gradient_check(CascadeModel model, int stage, const std::vector<TrainingSample>& samples,
                                    double h = 1e-6) {
    StageGradient grad = zero_gradient(model, stage);
    for (const auto& s : samples) loss_and_gradient(model, stage, s, &grad);

    std::vector<std::vector<double>> analytic;
    for_each_tensor(grad, [&](const std::string&, double* data, std::size_t n, const std::vector<int>&) {
        analytic.emplace_back(data, data + n);
    });

    auto total = [&]() {
        double sum = 0.0;
        for (const auto& s : samples) sum += loss_and_gradient(model, stage, s, nullptr);
        return sum;
    };

    GradientCheck out;
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    std::size_t tensor = 0;
    for_each_trainable(model, stage, [&](const std::string& name, double* data, std::size_t n, const std::vector<int>&) {
        double td = 0.0, ta = 0.0, tn = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double saved = data[i];
            data[i] = saved + h;
            const double up = total();
            data[i] = saved - h;
            const double down = total();
            data[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[tensor][i];
            td += (a - numeric) * (a - numeric);
            ta += a * a;
            tn += numeric * numeric;
        }
        const double scale = std::sqrt(std::max(ta, tn));
        const double rel = scale > 0.0 ? std::sqrt(td) / scale : 0.0;
        if (rel > out.worst_tensor_error) {
            out.worst_tensor_error = rel;
            out.worst_tensor = name;
        }
        diff2 += td;
        a2 += ta;
        n2 += tn;
        out.parameters += n;
        ++tensor;
    });
    const double scale = std::sqrt(std::max(a2, n2));
    out.relative_error = scale > 0.0 ? std::sqrt(diff2) / scale : 0.0;
    return out;
}

}  // namespace mangalm::testing
