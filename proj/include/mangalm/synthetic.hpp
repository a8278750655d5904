#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mangalm/dataset.hpp"
#include "mangalm/image.hpp"
#include "mangalm/random.hpp"

namespace mangalm {

/// Procedural line-art faces with exact 60-point ground truth.
struct SyntheticOptions {
    int count = 300;
    std::uint64_t seed = 1;
    double min_face_width = 90.0;   // pixels, temple to temple
    double max_face_width = 130.0;
    double max_rotation_deg = 12.0;
    double noise_sigma = 0.03;
    double double_label_fraction = 0.0;  // second labeler on this share of faces
    double label_noise_px = 0.0;         // per-coordinate Gaussian noise on labels
    double omit_optional_fraction = 0.0; // annotations drop eyebrows/nose/pupils
    double excluded_fraction = 0.0;      // faces that carry a manual exclusion flag or a tiny box
};

struct SyntheticFace {
    Image page;
    BoxXYWH bbox;
    LandmarkSet truth;
};

/// Ground-truth shape in a face-local frame (temple-to-temple width 2, y down).
LandmarkSet synthetic_face_shape(Rng& rng);

/// Draws a face into a fresh page image.
SyntheticFace render_synthetic_face(Rng& rng, const SyntheticOptions& options);

/// Writes images/<id>.pgm and manifest.jsonl under `dir`; returns the records.
std::vector<FaceRecord> generate_synthetic_dataset(const std::filesystem::path& dir,
                                                   const SyntheticOptions& options);

}  // namespace mangalm
