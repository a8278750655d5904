#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mangalm/dataset.hpp"
#include "mangalm/geometry.hpp"
#include "mangalm/random.hpp"

namespace mangalm {

struct Gaussian {
    double mean = 0.0;
    double sigma = 1.0;
};

struct AugmentationSpec {
    Gaussian rotation_deg{0.0, 20.0};
    Gaussian scale{1.0, 0.1};
    Gaussian translation_x{0.0, 0.1};  // fraction of scaled-mean-shape width
    Gaussian translation_y{0.0, 0.1};  // fraction of scaled-mean-shape height
    int copies = 5;
    bool keep_originals = false;

    void validate() const;
};

struct AugmentationParams {
    double rotation_deg = 0.0;
    double scale = 1.0;
    double tx = 0.0;  // pixels
    double ty = 0.0;  // pixels
    double tx_factor = 0.0;
    double ty_factor = 0.0;
};

/// Draws rotation, scale, x and y translation factors, in that order, each
/// from its own Gaussian; translation factors are scaled by the mean shape's
/// bounding-box width and height.
AugmentationParams sample_params(const AugmentationSpec& spec, const MeanShape& mean_shape, Rng& rng);

/// Rotation and scale about the canvas center, followed by translation.
SimilarityTransform augmentation_transform(const AugmentationParams& params, int canvas);

inline constexpr double kAugmentFill = 1.0;

TrainingSample augment_sample(const TrainingSample& sample, const AugmentationParams& params);

struct PlannedCopy {
    std::string record_id;
    int copy = 0;
    AugmentationParams params;
};

/// Per-copy generator seed, derived from (seed, record id, copy index).
std::uint64_t copy_seed(std::uint64_t seed, const std::string& record_id, int copy);

std::vector<PlannedCopy> plan_augmentation(const std::vector<std::string>& record_ids,
                                           const AugmentationSpec& spec, const MeanShape& mean_shape,
                                           std::uint64_t seed);

/// Applies a plan. Samples without planned copies pass through only when the
/// spec keeps originals or plans zero copies.
std::vector<TrainingSample> apply_plan(const std::vector<TrainingSample>& samples,
                                       const std::vector<PlannedCopy>& plan, const AugmentationSpec& spec);

std::vector<TrainingSample> augment_dataset(const std::vector<TrainingSample>& train,
                                            const AugmentationSpec& spec, const MeanShape& mean_shape,
                                            std::uint64_t seed);

std::string plan_to_json(const std::vector<PlannedCopy>& plan, const AugmentationSpec& spec,
                         std::uint64_t seed);
std::vector<PlannedCopy> plan_from_json(const std::string& text);

}  // namespace mangalm
