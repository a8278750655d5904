#include "mangalm/augment.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>

#include "json.hpp"
#include "mangalm/io_util.hpp"

namespace mangalm {

void AugmentationSpec::validate() const {
    for (const auto* g : {&rotation_deg, &scale, &translation_x, &translation_y}) {
        if (!(g->sigma >= 0.0)) throw std::invalid_argument("augmentation sigma must be nonnegative");
    }
    if (copies < 0) throw std::invalid_argument("augmentation copies must be nonnegative");
}

AugmentationParams sample_params(const AugmentationSpec& spec, const MeanShape& mean_shape, Rng& rng) {
    const auto box = mean_shape.extent();
    AugmentationParams p;
    p.rotation_deg = rng.normal(spec.rotation_deg.mean, spec.rotation_deg.sigma);
    p.scale = rng.normal(spec.scale.mean, spec.scale.sigma);
    p.tx_factor = rng.normal(spec.translation_x.mean, spec.translation_x.sigma);
    p.ty_factor = rng.normal(spec.translation_y.mean, spec.translation_y.sigma);
    p.tx = p.tx_factor * box.width();
    p.ty = p.ty_factor * box.height();
    return p;
}

SimilarityTransform augmentation_transform(const AugmentationParams& params, int canvas) {
    const double c = 0.5 * canvas;
    SimilarityTransform about_center;
    about_center.scale = params.scale;
    about_center.theta = params.rotation_deg * std::numbers::pi / 180.0;
    // p' = L (p - c) + c + t, written as L p + (c - L c + t).
    const Point2 lc = about_center({c, c});
    about_center.tx = c - lc.x + params.tx;
    about_center.ty = c - lc.y + params.ty;
    return about_center;
}

TrainingSample augment_sample(const TrainingSample& sample, const AugmentationParams& params) {
    if (!sample.landmarks.complete()) throw std::invalid_argument("augment_sample needs complete landmarks");
    if (!(params.scale > 0.0)) throw std::invalid_argument("augmentation scale must be positive");
    const int canvas = sample.image.width();
    const SimilarityTransform t = augmentation_transform(params, canvas);
    const SimilarityTransform inv = t.inverse();
    TrainingSample out;
    out.record_id = sample.record_id;
    out.frame = sample.frame;
    out.augmentation_id = sample.augmentation_id;
    out.image = warp_image(sample.image, canvas, sample.image.height(), [&inv](Point2 q) { return inv(q); },
                           kAugmentFill);
    out.landmarks = apply(t, sample.landmarks);
    return out;
}

std::uint64_t copy_seed(std::uint64_t seed, const std::string& record_id, int copy) {
    return mix_seed(mix_seed(seed, fnv1a64(record_id)), static_cast<std::uint64_t>(copy));
}

std::vector<PlannedCopy> plan_augmentation(const std::vector<std::string>& record_ids,
                                           const AugmentationSpec& spec, const MeanShape& mean_shape,
                                           std::uint64_t seed) {
    spec.validate();
    std::vector<PlannedCopy> plan;
    plan.reserve(record_ids.size() * static_cast<std::size_t>(spec.copies));
    for (const auto& id : record_ids) {
        for (int k = 0; k < spec.copies; ++k) {
            Rng rng(copy_seed(seed, id, k));
            plan.push_back({id, k, sample_params(spec, mean_shape, rng)});
        }
    }
    return plan;
}

std::vector<TrainingSample> apply_plan(const std::vector<TrainingSample>& samples,
                                       const std::vector<PlannedCopy>& plan, const AugmentationSpec& spec) {
    std::multimap<std::string, const PlannedCopy*> by_id;
    for (const auto& p : plan) by_id.emplace(p.record_id, &p);
    std::vector<TrainingSample> out;
    for (const auto& s : samples) {
        if (spec.keep_originals || spec.copies == 0) out.push_back(s);
        auto [lo, hi] = by_id.equal_range(s.record_id);
        for (auto it = lo; it != hi; ++it) {
            TrainingSample a = augment_sample(s, it->second->params);
            a.augmentation_id = it->second->copy;
            out.push_back(std::move(a));
        }
    }
    return out;
}

std::vector<TrainingSample> augment_dataset(const std::vector<TrainingSample>& train,
                                            const AugmentationSpec& spec, const MeanShape& mean_shape,
                                            std::uint64_t seed) {
    std::vector<std::string> ids;
    ids.reserve(train.size());
    for (const auto& s : train) ids.push_back(s.record_id);
    return apply_plan(train, plan_augmentation(ids, spec, mean_shape, seed), spec);
}

std::string plan_to_json(const std::vector<PlannedCopy>& plan, const AugmentationSpec& spec,
                         std::uint64_t seed) {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["copies"] = spec.copies;
    j["keep_originals"] = spec.keep_originals;
    auto arr = nlohmann::ordered_json::array();
    for (const auto& p : plan) {
        arr.push_back({{"id", p.record_id},
                       {"copy", p.copy},
                       {"rotation_deg", p.params.rotation_deg},
                       {"scale", p.params.scale},
                       {"tx_factor", p.params.tx_factor},
                       {"ty_factor", p.params.ty_factor},
                       {"tx", p.params.tx},
                       {"ty", p.params.ty}});
    }
    j["plan"] = std::move(arr);
    return j.dump(1) + "\n";
}

std::vector<PlannedCopy> plan_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    std::vector<PlannedCopy> plan;
    for (const auto& e : j.at("plan")) {
        PlannedCopy p;
        p.record_id = e.at("id").get<std::string>();
        p.copy = e.at("copy").get<int>();
        p.params.rotation_deg = e.at("rotation_deg").get<double>();
        p.params.scale = e.at("scale").get<double>();
        p.params.tx_factor = e.at("tx_factor").get<double>();
        p.params.ty_factor = e.at("ty_factor").get<double>();
        p.params.tx = e.at("tx").get<double>();
        p.params.ty = e.at("ty").get<double>();
        plan.push_back(p);
    }
    return plan;
}

}  // namespace mangalm
