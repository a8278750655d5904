#include "mangalm/pipeline.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "mangalm/annotation_qc.hpp"
#include "mangalm/io_util.hpp"

namespace mangalm {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

// Seed streams derived from the single pipeline seed.
constexpr std::uint64_t kSplitStream = 1;
constexpr std::uint64_t kAugmentStream = 2;
constexpr std::uint64_t kInitStream = 3;
constexpr std::uint64_t kShuffleStream = 4;

PipelineError missing(const fs::path& artifact, const std::string& producer) {
    return PipelineError("missing-artifact", "missing " + artifact.string() + "; run `mangalm " + producer + "` first");
}

void require(const fs::path& artifact, const std::string& producer) {
    if (!fs::exists(artifact)) throw missing(artifact, producer);
}

std::vector<FaceRecord> read_manifest(const fs::path& path) { return parse_manifest(read_file(path)); }

template <typename F>
void for_keys(const json& j, const std::string& where, const std::set<std::string>& allowed, F&& on_key) {
    if (!j.is_object()) throw PipelineError("config", where + " must be an object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) throw PipelineError("config", "unknown key '" + key + "' in " + where);
        on_key(key, value);
    }
}

ordered_json gaussian_json(const Gaussian& g) { return {{"mean", g.mean}, {"sigma", g.sigma}}; }

Gaussian gaussian_from(const json& j, const std::string& where) {
    Gaussian g;
    for_keys(j, where, {"mean", "sigma"}, [&](const std::string& k, const json& v) {
        (k == "mean" ? g.mean : g.sigma) = v.get<double>();
    });
    return g;
}

fs::path resolve_path(const json& v, const fs::path& base) {
    fs::path p = v.get<std::string>();
    if (p.empty() || p.is_absolute() || base.empty()) return p;
    return base / p;
}

}  // namespace

std::vector<ExperimentSpec> default_experiment_grid() {
    return {{"stages1-aug", 1, true}, {"stages1-noaug", 1, false}, {"stages2-aug", 2, true}, {"stages2-noaug", 2, false}};
}

void PipelineConfig::validate() const {
    if (paths.work_dir.empty()) throw PipelineError("config", "paths.work_dir is required");
    if (split.train < 0 || split.validation < 0 || split.test < 0 ||
        std::abs(split.train + split.validation + split.test - 1.0) > 1e-9) {
        throw PipelineError("config", "split ratios must be non-negative and sum to 1");
    }
    if (!(label_tolerance > 0)) throw PipelineError("config", "label_tolerance must be positive");
    if (!(eval_threshold > 0)) throw PipelineError("config", "evaluation threshold must be positive");
    if (experiments.empty()) throw PipelineError("config", "at least one experiment is required");
    std::set<std::string> names;
    for (const auto& e : experiments) {
        if (e.name.empty() || e.name.find_first_of("/\\") != std::string::npos) {
            throw PipelineError("config", "experiment names must be nonempty and contain no path separators");
        }
        if (!names.insert(e.name).second) throw PipelineError("config", "duplicate experiment " + e.name);
        if (e.stages < 1 || e.stages > kMaxStages) throw PipelineError("config", "experiment " + e.name + ": bad stage count");
    }
    try {
        augmentation.validate();
        network.validate();
        training.validate();
    } catch (const std::exception& e) {
        throw PipelineError("config", e.what());
    }
}

ordered_json pipeline_config_to_json(const PipelineConfig& c) {
    ordered_json j;
    j["seed"] = c.seed;
    j["paths"] = {{"manifest", c.paths.manifest.string()},
                  {"image_root", c.paths.image_root.string()},
                  {"work_dir", c.paths.work_dir.string()},
                  {"checkpoint", c.paths.checkpoint.string()}};
    j["split"] = {{"train", c.split.train}, {"validation", c.split.validation}, {"test", c.split.test}};
    j["label_tolerance"] = c.label_tolerance;
    j["augmentation"] = {{"rotation_deg", gaussian_json(c.augmentation.rotation_deg)},
                         {"scale", gaussian_json(c.augmentation.scale)},
                         {"translation_x", gaussian_json(c.augmentation.translation_x)},
                         {"translation_y", gaussian_json(c.augmentation.translation_y)},
                         {"copies", c.augmentation.copies},
                         {"keep_originals", c.augmentation.keep_originals}};
    j["network"] = config_to_json(c.network);
    j["training"] = {{"max_epochs", c.training.max_epochs},       {"patience", c.training.patience},
                     {"learning_rate", c.training.learning_rate}, {"beta1", c.training.beta1},
                     {"beta2", c.training.beta2},                 {"epsilon", c.training.epsilon},
                     {"batch_size", c.training.batch_size}};
    j["evaluation"] = {{"threshold", c.eval_threshold}};
    auto ex = ordered_json::array();
    for (const auto& e : c.experiments) {
        ex.push_back({{"name", e.name}, {"stages", e.stages}, {"augmentation", e.augmentation}});
    }
    j["experiments"] = std::move(ex);
    return j;
}

PipelineConfig pipeline_config_from_json(const json& j, const fs::path& base_dir) {
    PipelineConfig c;
    try {
        for_keys(j, "config", {"seed", "paths", "split", "label_tolerance", "augmentation", "network", "training",
                               "evaluation", "experiments"},
                 [&](const std::string& key, const json& v) {
            if (key == "seed") {
                c.seed = v.get<std::uint64_t>();
            } else if (key == "paths") {
                for_keys(v, "paths", {"manifest", "image_root", "work_dir", "checkpoint"},
                         [&](const std::string& k, const json& p) {
                    if (k == "manifest") c.paths.manifest = resolve_path(p, base_dir);
                    else if (k == "image_root") c.paths.image_root = resolve_path(p, base_dir);
                    else if (k == "work_dir") c.paths.work_dir = resolve_path(p, base_dir);
                    else c.paths.checkpoint = resolve_path(p, base_dir);
                });
            } else if (key == "split") {
                for_keys(v, "split", {"train", "validation", "test"}, [&](const std::string& k, const json& r) {
                    if (k == "train") c.split.train = r.get<double>();
                    else if (k == "validation") c.split.validation = r.get<double>();
                    else c.split.test = r.get<double>();
                });
            } else if (key == "label_tolerance") {
                c.label_tolerance = v.get<double>();
            } else if (key == "augmentation") {
                auto& a = c.augmentation;
                for_keys(v, "augmentation",
                         {"rotation_deg", "scale", "translation_x", "translation_y", "copies", "keep_originals"},
                         [&](const std::string& k, const json& x) {
                    if (k == "rotation_deg") a.rotation_deg = gaussian_from(x, "augmentation.rotation_deg");
                    else if (k == "scale") a.scale = gaussian_from(x, "augmentation.scale");
                    else if (k == "translation_x") a.translation_x = gaussian_from(x, "augmentation.translation_x");
                    else if (k == "translation_y") a.translation_y = gaussian_from(x, "augmentation.translation_y");
                    else if (k == "copies") a.copies = x.get<int>();
                    else a.keep_originals = x.get<bool>();
                });
            } else if (key == "network") {
                c.network = config_from_json(v);
            } else if (key == "training") {
                auto& t = c.training;
                for_keys(v, "training",
                         {"max_epochs", "patience", "learning_rate", "beta1", "beta2", "epsilon", "batch_size"},
                         [&](const std::string& k, const json& x) {
                    if (k == "max_epochs") t.max_epochs = x.get<int>();
                    else if (k == "patience") t.patience = x.get<int>();
                    else if (k == "learning_rate") t.learning_rate = x.get<double>();
                    else if (k == "beta1") t.beta1 = x.get<double>();
                    else if (k == "beta2") t.beta2 = x.get<double>();
                    else if (k == "epsilon") t.epsilon = x.get<double>();
                    else t.batch_size = x.get<int>();
                });
            } else if (key == "evaluation") {
                for_keys(v, "evaluation", {"threshold"},
                         [&](const std::string&, const json& x) { c.eval_threshold = x.get<double>(); });
            } else {
                c.experiments.clear();
                for (const auto& e : v) {
                    ExperimentSpec spec;
                    for_keys(e, "experiments[]", {"name", "stages", "augmentation"},
                             [&](const std::string& k, const json& x) {
                        if (k == "name") spec.name = x.get<std::string>();
                        else if (k == "stages") spec.stages = x.get<int>();
                        else spec.augmentation = x.get<bool>();
                    });
                    c.experiments.push_back(spec);
                }
            }
        });
    } catch (const json::exception& e) {
        throw PipelineError("config", std::string("malformed config: ") + e.what());
    } catch (const ConfigError& e) {
        throw PipelineError("config", e.what());
    }
    c.validate();
    return c;
}

PipelineConfig load_config(const fs::path& path) {
    if (!fs::exists(path)) throw PipelineError("config", "config file not found: " + path.string());
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw PipelineError("config", path.string() + ": " + e.what());
    }
    return pipeline_config_from_json(j, path.parent_path());
}

ResolvedTruth resolve_truth(const FaceRecord& record, double tolerance) {
    ResolvedTruth r;
    if (record.completed) {
        r.landmarks = *record.completed;
    } else if (record.merged) {
        r.landmarks = *record.merged;
    } else if (record.annotations.size() == 1) {
        r.landmarks = record.annotations.front().landmarks;
    } else if (record.annotations.empty()) {
        r.problem = "no annotations";
        return r;
    } else {
        const auto& a = record.annotations[0].landmarks;
        const auto& b = record.annotations[1].landmarks;
        const auto report = compare_labels(a, b, tolerance);
        if (!report.clean()) {
            r.problem = std::to_string(report.flagged.size()) + " landmarks disagree beyond tolerance";
            return r;
        }
        r.landmarks = merge_labels(a, b);
    }
    if (!r.landmarks->complete()) {
        r.problem = "incomplete landmarks; run `mangalm complete`";
        r.landmarks.reset();
    }
    return r;
}

std::vector<FaceRecord> current_records(const WorkLayout& work) {
    for (const auto& p : {work.completed(), work.merged(), work.filtered()}) {
        if (fs::exists(p)) return read_manifest(p);
    }
    throw missing(work.filtered(), "filter");
}

std::string summary_table(const std::vector<std::pair<ExperimentSpec, EvalReport>>& rows) {
    std::ostringstream out;
    out.precision(5);
    out << std::fixed;
    out << "experiment\tstages\taugmentation\tmean_error\tauc\tfailure_rate_percent\tfaces\n";
    for (const auto& [spec, report] : rows) {
        out << spec.name << '\t' << spec.stages << '\t' << (spec.augmentation ? "yes" : "no") << '\t'
            << report.mean_error << '\t' << report.auc << '\t';
        out.precision(2);
        out << 100.0 * report.failure_rate;
        out.precision(5);
        out << '\t' << report.faces.size() << '\n';
    }
    return out.str();
}

LandmarkSet predict_landmarks(const CascadeModel& model, const Image& page, const BoxXYWH& box) {
    FaceRecord r;
    r.bbox = box;
    const TrainingSample s = crop_and_normalize(r, page, model.config.canvas, LandmarkSet{});
    const LandmarkSet canvas_shape = forward(model, s.image);
    LandmarkSet out;
    for (std::size_t i = 0; i < kNumLandmarks; ++i) out.set(i, s.frame.to_image(canvas_shape.point(i)));
    return out;
}

CascadeModel read_checkpoint(const fs::path& path) {
    if (!fs::exists(path)) throw missing(path, "train");
    try {
        return load_checkpoint(read_file(path));
    } catch (const CheckpointError& e) {
        throw PipelineError("checkpoint", path.string() + ": " + e.what());
    }
}

Pipeline::Pipeline(PipelineConfig config, std::ostream* log, bool verbose)
    : config_(std::move(config)), work_{config_.paths.work_dir}, log_(log), verbose_(verbose) {
    config_.validate();
}

void Pipeline::note(const std::string& line) const {
    if (log_) *log_ << line << '\n';
}

void Pipeline::detail(const std::string& line) const {
    if (verbose_) note(line);
}

const ExperimentSpec& Pipeline::experiment(const std::string& name) const {
    for (const auto& e : config_.experiments) {
        if (e.name == name) return e;
    }
    throw PipelineError("usage", "unknown experiment " + name);
}

void Pipeline::ingest() {
    if (config_.paths.manifest.empty()) throw PipelineError("config", "paths.manifest is required for ingest");
    if (!fs::exists(config_.paths.manifest)) {
        throw PipelineError("missing-input", "manifest not found: " + config_.paths.manifest.string());
    }
    IngestResult result;
    try {
        result = ingest_manifest(config_.paths.manifest, config_.paths.image_root);
    } catch (const ManifestParseError& e) {
        throw PipelineError("manifest", e.what());
    }
    fs::create_directories(work_.root);
    write_manifest(work_.ingested(), result.records);
    auto errs = ordered_json::array();
    for (const auto& e : result.errors) {
        errs.push_back({{"id", e.record_id}, {"error", e.message}});
        detail("skipped " + e.record_id + ": " + e.message);
    }
    write_file_atomic(work_.ingest_errors(), errs.dump(1) + "\n");
    note("ingest: " + std::to_string(result.records.size()) + " records, " + std::to_string(result.errors.size()) +
         " rejected");
}

void Pipeline::filter() {
    require(work_.ingested(), "ingest");
    const FilterResult result = apply_selection_filters(read_manifest(work_.ingested()));
    write_manifest(work_.filtered(), result.kept);
    auto ex = ordered_json::array();
    for (const auto& e : result.excluded) {
        auto reasons = ordered_json::array();
        for (auto f : e.reasons) reasons.push_back(to_string(f));
        ex.push_back({{"id", e.record.id}, {"reasons", reasons}});
    }
    write_file_atomic(work_.excluded(), ex.dump(1) + "\n");
    note("filter: kept " + std::to_string(result.kept.size()) + ", excluded " + std::to_string(result.excluded.size()));
}

void Pipeline::merge() {
    require(work_.filtered(), "filter");
    auto records = read_manifest(work_.filtered());
    std::size_t merged = 0, single = 0;
    auto flagged = ordered_json::array();
    for (auto& r : records) {
        r.merged.reset();
        r.completed.reset();
        if (r.annotations.size() == 1) {
            r.merged = r.annotations.front().landmarks;
            ++single;
        } else if (r.annotations.size() >= 2) {
            const auto report = compare_labels(r.annotations[0].landmarks, r.annotations[1].landmarks,
                                               config_.label_tolerance);
            if (report.clean()) {
                r.merged = merge_labels(r.annotations[0].landmarks, r.annotations[1].landmarks);
                ++merged;
            } else {
                flagged.push_back({{"id", r.id}, {"indices", report.flagged}});
                detail("flagged " + r.id + ": " + std::to_string(report.flagged.size()) + " landmarks");
            }
        }
    }
    write_manifest(work_.merged(), records);
    ordered_json rep;
    rep["tolerance"] = config_.label_tolerance;
    rep["single_labeled"] = single;
    rep["merged"] = merged;
    rep["flagged"] = std::move(flagged);
    write_file_atomic(work_.merge_report(), rep.dump(1) + "\n");
    note("merge: " + std::to_string(merged) + " merged, " + std::to_string(single) + " single-labeled, " +
         std::to_string(rep["flagged"].size()) + " flagged");
}

void Pipeline::complete() {
    const fs::path input = fs::exists(work_.merged()) ? work_.merged() : work_.filtered();
    require(input, "filter");
    auto records = read_manifest(input);
    std::size_t done = 0;
    auto failures = ordered_json::array();
    for (auto& r : records) {
        r.completed.reset();
        ResolvedTruth base;
        if (r.merged) {
            base.landmarks = *r.merged;
        } else if (r.annotations.size() == 1) {
            base.landmarks = r.annotations.front().landmarks;
        } else if (r.annotations.size() >= 2) {
            const auto& a = r.annotations[0].landmarks;
            const auto& b = r.annotations[1].landmarks;
            if (compare_labels(a, b, config_.label_tolerance).clean()) base.landmarks = merge_labels(a, b);
            else base.problem = "unresolved labeler disagreement";
        } else {
            base.problem = "no annotations";
        }
        if (base.landmarks) {
            try {
                r.completed = complete_all(*base.landmarks);
                ++done;
                continue;
            } catch (const CompletionError& e) {
                base.problem = e.what();
            }
        }
        failures.push_back({{"id", r.id}, {"error", base.problem}});
        detail("not completed " + r.id + ": " + base.problem);
    }
    write_manifest(work_.completed(), records);
    ordered_json rep;
    rep["completed"] = done;
    rep["failed"] = std::move(failures);
    write_file_atomic(work_.completion_report(), rep.dump(1) + "\n");
    note("complete: " + std::to_string(done) + " completed, " + std::to_string(rep["failed"].size()) + " failed");
}

void Pipeline::split() {
    const auto records = current_records(work_);
    std::vector<std::string> ids;
    ids.reserve(records.size());
    for (const auto& r : records) ids.push_back(r.id);
    const SplitAssignment s = mangalm::split(ids, mix_seed(config_.seed, kSplitStream), config_.split);
    write_file_atomic(work_.split(), split_to_json(s));
    note("split: train " + std::to_string(s.count(Subset::Train)) + ", validation " +
         std::to_string(s.count(Subset::Validation)) + ", test " + std::to_string(s.count(Subset::Test)));
}

std::vector<TrainingSample> Pipeline::load_subset(Subset subset) const {
    require(work_.split(), "split");
    const SplitAssignment assignment = split_from_json(read_file(work_.split()));
    const auto wanted_ids = assignment.ids(subset);
    const std::set<std::string> wanted(wanted_ids.begin(), wanted_ids.end());
    std::vector<TrainingSample> out;
    std::map<fs::path, Image> pages;
    for (const auto& r : current_records(work_)) {
        if (!wanted.count(r.id)) continue;
        const ResolvedTruth truth = resolve_truth(r, config_.label_tolerance);
        if (!truth.landmarks) {
            detail("skipping " + r.id + ": " + truth.problem);
            continue;
        }
        const fs::path image = resolve_image(r, config_.paths.image_root);
        auto it = pages.find(image);
        if (it == pages.end()) it = pages.emplace(image, read_pgm(image)).first;
        out.push_back(crop_and_normalize(r, it->second, config_.network.canvas, *truth.landmarks));
    }
    if (out.empty()) {
        throw PipelineError("empty-subset", "no usable " + to_string(subset) + " records with complete landmarks");
    }
    return out;
}

namespace {

MeanShape training_mean_shape(const std::vector<TrainingSample>& train, const CascadeConfig& net) {
    std::vector<LandmarkSet> shapes;
    shapes.reserve(train.size());
    for (const auto& s : train) shapes.push_back(s.landmarks);
    return compute_mean_shape(shapes, net.canvas, net.mean_shape_margin);
}

}  // namespace

void Pipeline::augment() {
    const auto train_samples = load_subset(Subset::Train);
    const MeanShape mean = training_mean_shape(train_samples, config_.network);
    std::vector<std::string> ids;
    for (const auto& s : train_samples) ids.push_back(s.record_id);
    const std::uint64_t seed = mix_seed(config_.seed, kAugmentStream);
    const auto plan = plan_augmentation(ids, config_.augmentation, mean, seed);
    write_file_atomic(work_.augment_plan(), plan_to_json(plan, config_.augmentation, seed));
    note("augment: planned " + std::to_string(plan.size()) + " copies of " + std::to_string(ids.size()) + " faces");
}

void Pipeline::train(const std::optional<std::string>& only) {
    if (only) experiment(*only);
    const auto train_samples = load_subset(Subset::Train);
    const auto val_samples = load_subset(Subset::Validation);
    const MeanShape mean = training_mean_shape(train_samples, config_.network);
    for (const auto& spec : config_.experiments) {
        if (only && spec.name != *only) continue;
        std::vector<TrainingSample> augmented;
        if (spec.augmentation) {
            require(work_.augment_plan(), "augment");
            augmented = apply_plan(train_samples, plan_from_json(read_file(work_.augment_plan())),
                                   config_.augmentation);
        }
        const auto& train_set = spec.augmentation ? augmented : train_samples;
        CascadeConfig net = config_.network;
        net.stages = spec.stages;
        CascadeModel model = init_model(net, mean, mix_seed(config_.seed, kInitStream));
        TrainingSchedule schedule = config_.training;
        schedule.seed = mix_seed(config_.seed, kShuffleStream);
        note("train " + spec.name + ": " + std::to_string(train_set.size()) + " training samples, " +
             std::to_string(val_samples.size()) + " validation");
        TrainResult result;
        try {
            result = mangalm::train(std::move(model), train_set, val_samples, schedule, [this](const EpochLoss& e) {
                detail("  stage " + std::to_string(e.stage) + " epoch " + std::to_string(e.epoch) + " train " +
                       std::to_string(e.train_loss) + " val " + std::to_string(e.val_loss));
            });
        } catch (const TrainingDiverged& e) {
            throw PipelineError("diverged", spec.name + ": " + e.what());
        }
        fs::create_directories(work_.experiment_dir(spec.name));
        write_file_atomic(work_.checkpoint(spec.name), save_checkpoint(result.model));
        write_file_atomic(work_.loss_curve(spec.name), loss_curve_to_text(result.curve));
        ordered_json summary;
        summary["experiment"] = spec.name;
        summary["train_samples"] = train_set.size();
        summary["validation_samples"] = val_samples.size();
        summary["stage_validation_loss"] = result.stage_validation_loss;
        summary["best_epoch"] = result.best_epoch;
        write_file_atomic(work_.train_summary(spec.name), summary.dump(1) + "\n");
        note("train " + spec.name + ": validation loss " + std::to_string(result.stage_validation_loss.back()));
    }
}

void Pipeline::eval(const std::optional<std::string>& only) {
    if (only) experiment(*only);
    const auto test_samples = load_subset(Subset::Test);
    std::vector<std::pair<ExperimentSpec, EvalReport>> rows;
    for (const auto& spec : config_.experiments) {
        if (only && spec.name != *only) continue;
        const CascadeModel model = read_checkpoint(work_.checkpoint(spec.name));
        std::vector<PerFaceError> faces;
        for (const auto& s : test_samples) faces.push_back(normalized_error(forward(model, s.image), s.landmarks, s.record_id));
        EvalReport report = summarize(std::move(faces), config_.eval_threshold);
        write_file_atomic(work_.report(spec.name), report_to_json(report));
        write_file_atomic(work_.ced(spec.name), ced_to_csv(report.ced));
        rows.emplace_back(spec, std::move(report));
    }
    const std::string table = summary_table(rows);
    write_file_atomic(work_.summary(), table);
    note(table);
}

fs::path Pipeline::default_checkpoint() const {
    if (!config_.paths.checkpoint.empty()) return config_.paths.checkpoint;
    return work_.checkpoint(config_.experiments.back().name);
}

LandmarkSet Pipeline::predict(const fs::path& image, const std::optional<BoxXYWH>& box,
                              const std::optional<std::string>& experiment_name, const std::optional<fs::path>& out) {
    const fs::path ckpt = experiment_name ? work_.checkpoint(experiment(*experiment_name).name) : default_checkpoint();
    const CascadeModel model = read_checkpoint(ckpt);
    if (!fs::exists(image)) throw PipelineError("missing-input", "image not found: " + image.string());
    const Image page = read_pgm(image);
    const BoxXYWH b = box.value_or(BoxXYWH{0, 0, static_cast<double>(page.width()), static_cast<double>(page.height())});
    if (!(b.w > 0 && b.h > 0)) throw PipelineError("usage", "bounding box must have positive size");
    const LandmarkSet shape = predict_landmarks(model, page, b);
    ordered_json rec;
    rec["image"] = image.string();
    rec["bbox"] = {b.x, b.y, b.w, b.h};
    rec["landmarks"] = landmarks_to_json(shape);
    const fs::path target = out.value_or(work_.predictions());
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    write_file_atomic(target, rec.dump() + "\n");
    note("predict: wrote " + target.string());
    return shape;
}

}  // namespace mangalm
