#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mangalm/geometry.hpp"
#include "mangalm/image.hpp"
#include "mangalm/landmark_schema.hpp"

namespace mangalm {

inline constexpr double kMinFaceSide = 80.0;

enum class ExclusionFlag { Profile, TooSmall, InhumanFeatures, OccludedEyes };

std::string to_string(ExclusionFlag flag);
ExclusionFlag exclusion_flag_from_string(const std::string& text);

struct BoxXYWH {
    double x = 0, y = 0, w = 0, h = 0;
    friend bool operator==(const BoxXYWH&, const BoxXYWH&) = default;
};

struct Annotation {
    std::string labeler;
    LandmarkSet landmarks;
};

struct FaceRecord {
    std::string id;
    std::string image;  // relative to the manifest's image root
    BoxXYWH bbox;
    std::vector<ExclusionFlag> flags;
    std::vector<Annotation> annotations;
    std::optional<LandmarkSet> merged;
    std::optional<LandmarkSet> completed;
};

class ManifestParseError : public std::runtime_error {
public:
    ManifestParseError(std::size_t line, const std::string& what)
        : std::runtime_error("manifest line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

// Landmark arrays are 60 entries of [x, y] or null.
nlohmann::json landmarks_to_json(const LandmarkSet& set);
LandmarkSet landmarks_from_json(const nlohmann::json& j);

nlohmann::ordered_json record_to_json(const FaceRecord& record);
FaceRecord record_from_json(const nlohmann::json& j);

/// One compact JSON object per line; blank lines are skipped.
std::vector<FaceRecord> parse_manifest(const std::string& text);
std::string serialize_manifest(const std::vector<FaceRecord>& records);
void write_manifest(const std::filesystem::path& path, const std::vector<FaceRecord>& records);

struct RecordError {
    std::string record_id;
    std::string message;
};

struct IngestResult {
    std::vector<FaceRecord> records;
    std::vector<RecordError> errors;
};

/// Parses the manifest and checks every referenced image exists and contains
/// its bounding box. Records failing those checks are reported, not loaded.
IngestResult ingest_manifest(const std::filesystem::path& path,
                             const std::filesystem::path& image_root = {});

struct Exclusion {
    FaceRecord record;
    std::vector<ExclusionFlag> reasons;
};

struct FilterResult {
    std::vector<FaceRecord> kept;
    std::vector<Exclusion> excluded;
};

/// Drops boxes narrower or shorter than 80 px and records carrying manual
/// exclusion flags.
FilterResult apply_selection_filters(const std::vector<FaceRecord>& records);

enum class Subset { Train, Validation, Test };
std::string to_string(Subset s);
Subset subset_from_string(const std::string& text);

struct SplitRatios {
    double train = 0.8;
    double validation = 0.1;
    double test = 0.1;
};

struct SplitAssignment {
    std::uint64_t seed = 0;
    SplitRatios ratios;
    std::vector<std::pair<std::string, Subset>> assignment;  // manifest order

    std::vector<std::string> ids(Subset s) const;
    std::size_t count(Subset s) const;
};

/// Seeded shuffle; test and validation receive floor(ratio * N), train the rest.
SplitAssignment split(const std::vector<std::string>& record_ids, std::uint64_t seed,
                      SplitRatios ratios = {});

std::string split_to_json(const SplitAssignment& s);
SplitAssignment split_from_json(const std::string& text);

/// Maps image coordinates into a square crop resampled onto the canvas.
struct CropFrame {
    double origin_x = 0.0;
    double origin_y = 0.0;
    double scale = 1.0;  // canvas pixels per image pixel

    Point2 to_canvas(Point2 p) const { return {(p.x - origin_x) * scale, (p.y - origin_y) * scale}; }
    Point2 to_image(Point2 q) const { return {q.x / scale + origin_x, q.y / scale + origin_y}; }
};

struct TrainingSample {
    Image image;  // canvas x canvas, [0, 1]
    LandmarkSet landmarks;
    std::string record_id;
    int augmentation_id = -1;  // -1 for the unaugmented crop
    CropFrame frame;
    std::vector<std::string> warnings;
};

/// Square crop of side max(w, h) centered on the box, resampled to the canvas.
CropFrame crop_frame(const BoxXYWH& box, int canvas);

TrainingSample crop_and_normalize(const FaceRecord& record, const Image& page, int canvas);
TrainingSample crop_and_normalize(const FaceRecord& record, const Image& page, int canvas,
                                  const LandmarkSet& landmarks);

std::filesystem::path resolve_image(const FaceRecord& record, const std::filesystem::path& root);

}  // namespace mangalm
