#include "mangalm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mangalm/io_util.hpp"
#include "mangalm/random.hpp"

namespace mangalm {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(ExclusionFlag flag) {
    switch (flag) {
        case ExclusionFlag::Profile: return "profile";
        case ExclusionFlag::TooSmall: return "too-small";
        case ExclusionFlag::InhumanFeatures: return "inhuman-features";
        case ExclusionFlag::OccludedEyes: return "occluded-eyes";
    }
    return "unknown";
}

ExclusionFlag exclusion_flag_from_string(const std::string& text) {
    for (auto f : {ExclusionFlag::Profile, ExclusionFlag::TooSmall, ExclusionFlag::InhumanFeatures,
                   ExclusionFlag::OccludedEyes}) {
        if (to_string(f) == text) return f;
    }
    throw std::invalid_argument("unknown exclusion flag: " + text);
}

json landmarks_to_json(const LandmarkSet& set) {
    json arr = json::array();
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
        if (set.present(i)) {
            arr.push_back(json::array({set.point(i).x, set.point(i).y}));
        } else {
            arr.push_back(nullptr);
        }
    }
    return arr;
}

LandmarkSet landmarks_from_json(const json& j) {
    if (!j.is_array() || j.size() != kNumLandmarks) {
        throw std::invalid_argument("landmark array must have exactly 60 entries");
    }
    LandmarkSet set;
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
        const auto& e = j[i];
        if (e.is_null()) continue;
        if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number()) {
            throw std::invalid_argument("landmark " + std::to_string(i) + " must be [x, y] or null");
        }
        const double x = e[0].get<double>();
        const double y = e[1].get<double>();
        if (!std::isfinite(x) || !std::isfinite(y)) {
            throw std::invalid_argument("landmark " + std::to_string(i) + " is not finite");
        }
        set.set(i, {x, y});
    }
    return set;
}

ordered_json record_to_json(const FaceRecord& r) {
    ordered_json j;
    j["id"] = r.id;
    j["image"] = r.image;
    j["bbox"] = {r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h};
    auto flags = ordered_json::array();
    for (auto f : r.flags) flags.push_back(to_string(f));
    j["flags"] = std::move(flags);
    auto anns = ordered_json::array();
    for (const auto& a : r.annotations) {
        ordered_json aj;
        aj["labeler"] = a.labeler;
        aj["points"] = landmarks_to_json(a.landmarks);
        anns.push_back(std::move(aj));
    }
    j["annotations"] = std::move(anns);
    j["merged"] = r.merged ? ordered_json(landmarks_to_json(*r.merged)) : ordered_json(nullptr);
    j["completed"] = r.completed ? ordered_json(landmarks_to_json(*r.completed)) : ordered_json(nullptr);
    return j;
}

FaceRecord record_from_json(const json& j) {
    if (!j.is_object()) throw std::invalid_argument("record must be an object");
    static const char* kKeys[] = {"id", "image", "bbox", "flags", "annotations", "merged", "completed"};
    for (const auto& [key, _] : j.items()) {
        if (std::find_if(std::begin(kKeys), std::end(kKeys), [&](const char* k) { return key == k; }) ==
            std::end(kKeys)) {
            throw std::invalid_argument("unknown record field: " + key);
        }
    }
    FaceRecord r;
    r.id = j.at("id").get<std::string>();
    if (r.id.empty()) throw std::invalid_argument("record id must not be empty");
    r.image = j.at("image").get<std::string>();
    const auto& box = j.at("bbox");
    if (!box.is_array() || box.size() != 4) throw std::invalid_argument("bbox must be [x, y, w, h]");
    r.bbox = {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(), box[3].get<double>()};
    if (!(r.bbox.w > 0 && r.bbox.h > 0)) throw std::invalid_argument("bbox must have positive size");
    if (j.contains("flags")) {
        for (const auto& f : j.at("flags")) r.flags.push_back(exclusion_flag_from_string(f.get<std::string>()));
    }
    if (j.contains("annotations")) {
        for (const auto& a : j.at("annotations")) {
            if (a.size() > 2 || !a.contains("labeler") || !a.contains("points")) {
                throw std::invalid_argument("annotation must be {labeler, points}");
            }
            r.annotations.push_back({a.at("labeler").get<std::string>(), landmarks_from_json(a.at("points"))});
        }
    }
    if (j.contains("merged") && !j.at("merged").is_null()) r.merged = landmarks_from_json(j.at("merged"));
    if (j.contains("completed") && !j.at("completed").is_null()) {
        r.completed = landmarks_from_json(j.at("completed"));
    }
    return r;
}

std::vector<FaceRecord> parse_manifest(const std::string& text) {
    std::vector<FaceRecord> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
        try {
            out.push_back(record_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw ManifestParseError(lineno, e.what());
        }
    }
    return out;
}

std::string serialize_manifest(const std::vector<FaceRecord>& records) {
    std::string out;
    for (const auto& r : records) out += record_to_json(r).dump() + "\n";
    return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<FaceRecord>& records) {
    write_file_atomic(path, serialize_manifest(records));
}

std::filesystem::path resolve_image(const FaceRecord& record, const std::filesystem::path& root) {
    const std::filesystem::path p(record.image);
    if (p.is_absolute() || root.empty()) return p;
    return root / p;
}

IngestResult ingest_manifest(const std::filesystem::path& path, const std::filesystem::path& image_root) {
    const auto root = image_root.empty() ? path.parent_path() : image_root;
    IngestResult result;
    for (auto& rec : parse_manifest(read_file(path))) {
        const auto img_path = resolve_image(rec, root);
        if (!std::filesystem::exists(img_path)) {
            result.errors.push_back({rec.id, "missing image file: " + img_path.string()});
            continue;
        }
        try {
            const Image img = read_pgm(img_path);
            const auto& b = rec.bbox;
            if (b.x < 0 || b.y < 0 || b.x + b.w > img.width() || b.y + b.h > img.height()) {
                result.errors.push_back({rec.id, "bounding box exceeds image bounds"});
                continue;
            }
        } catch (const std::exception& e) {
            result.errors.push_back({rec.id, e.what()});
            continue;
        }
        result.records.push_back(std::move(rec));
    }
    return result;
}

FilterResult apply_selection_filters(const std::vector<FaceRecord>& records) {
    FilterResult out;
    for (const auto& r : records) {
        std::vector<ExclusionFlag> reasons;
        if (r.bbox.w < kMinFaceSide || r.bbox.h < kMinFaceSide) reasons.push_back(ExclusionFlag::TooSmall);
        for (auto f : r.flags) {
            if (std::find(reasons.begin(), reasons.end(), f) == reasons.end()) reasons.push_back(f);
        }
        if (reasons.empty()) {
            out.kept.push_back(r);
        } else {
            out.excluded.push_back({r, std::move(reasons)});
        }
    }
    return out;
}

std::string to_string(Subset s) {
    switch (s) {
        case Subset::Train: return "train";
        case Subset::Validation: return "validation";
        case Subset::Test: return "test";
    }
    return "unknown";
}

Subset subset_from_string(const std::string& text) {
    if (text == "train") return Subset::Train;
    if (text == "validation") return Subset::Validation;
    if (text == "test") return Subset::Test;
    throw std::invalid_argument("unknown subset: " + text);
}

std::vector<std::string> SplitAssignment::ids(Subset s) const {
    std::vector<std::string> out;
    for (const auto& [id, sub] : assignment) {
        if (sub == s) out.push_back(id);
    }
    return out;
}

std::size_t SplitAssignment::count(Subset s) const {
    return static_cast<std::size_t>(
        std::count_if(assignment.begin(), assignment.end(), [s](const auto& a) { return a.second == s; }));
}

SplitAssignment split(const std::vector<std::string>& record_ids, std::uint64_t seed, SplitRatios ratios) {
    const std::size_t n = record_ids.size();
    if (n < 3) throw std::invalid_argument("split needs at least 3 records");
    if (ratios.train < 0 || ratios.validation < 0 || ratios.test < 0 ||
        std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9) {
        throw std::invalid_argument("split ratios must be nonnegative and sum to 1");
    }
    // floor(ratio * n) with a 1e-9 guard against representation error.
    const auto n_test = static_cast<std::size_t>(std::floor(ratios.test * static_cast<double>(n) + 1e-9));
    const auto n_val = static_cast<std::size_t>(std::floor(ratios.validation * static_cast<double>(n) + 1e-9));

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    std::vector<Subset> label(n, Subset::Train);
    for (std::size_t k = 0; k < n_test; ++k) label[order[k]] = Subset::Test;
    for (std::size_t k = n_test; k < n_test + n_val; ++k) label[order[k]] = Subset::Validation;

    SplitAssignment s;
    s.seed = seed;
    s.ratios = ratios;
    for (std::size_t i = 0; i < n; ++i) s.assignment.emplace_back(record_ids[i], label[i]);
    return s;
}

std::string split_to_json(const SplitAssignment& s) {
    ordered_json j;
    j["seed"] = s.seed;
    j["ratios"] = {s.ratios.train, s.ratios.validation, s.ratios.test};
    j["counts"] = {{"train", s.count(Subset::Train)},
                   {"validation", s.count(Subset::Validation)},
                   {"test", s.count(Subset::Test)}};
    auto arr = ordered_json::array();
    for (const auto& [id, sub] : s.assignment) arr.push_back({id, to_string(sub)});
    j["assignment"] = std::move(arr);
    return j.dump(2) + "\n";
}

SplitAssignment split_from_json(const std::string& text) {
    const auto j = json::parse(text);
    SplitAssignment s;
    s.seed = j.at("seed").get<std::uint64_t>();
    const auto& r = j.at("ratios");
    s.ratios = {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>()};
    for (const auto& a : j.at("assignment")) {
        s.assignment.emplace_back(a.at(0).get<std::string>(), subset_from_string(a.at(1).get<std::string>()));
    }
    return s;
}

CropFrame crop_frame(const BoxXYWH& box, int canvas) {
    const double side = std::max(box.w, box.h);
    CropFrame f;
    f.origin_x = box.x + 0.5 * box.w - 0.5 * side;
    f.origin_y = box.y + 0.5 * box.h - 0.5 * side;
    f.scale = canvas / side;
    return f;
}

TrainingSample crop_and_normalize(const FaceRecord& record, const Image& page, int canvas) {
    if (!record.completed) {
        throw std::invalid_argument("record " + record.id + " has no completed landmarks");
    }
    return crop_and_normalize(record, page, canvas, *record.completed);
}

TrainingSample crop_and_normalize(const FaceRecord& record, const Image& page, int canvas,
                                  const LandmarkSet& landmarks) {
    TrainingSample s;
    s.record_id = record.id;
    s.frame = crop_frame(record.bbox, canvas);
    const CropFrame f = s.frame;
    const int supersample = std::clamp(static_cast<int>(std::ceil(1.0 / f.scale)), 1, 4);
    s.image = warp_image(page, canvas, canvas, [&f](Point2 q) { return f.to_image(q); }, 1.0, supersample);
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
        if (!landmarks.present(i)) continue;
        const Point2 q = f.to_canvas(landmarks.point(i));
        if (q.x < 0 || q.y < 0 || q.x > canvas || q.y > canvas) {
            s.warnings.push_back("landmark " + std::to_string(i) + " lies outside the crop");
        }
        s.landmarks.set(i, q);
    }
    return s;
}

}  // namespace mangalm
