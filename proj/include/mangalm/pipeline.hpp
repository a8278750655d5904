#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mangalm/augment.hpp"
#include "mangalm/cascade_net.hpp"
#include "mangalm/dataset.hpp"
#include "mangalm/evalmetrics.hpp"

namespace mangalm {

namespace fs = std::filesystem;

/// Failure with a stable machine-readable code ("missing-artifact", "config", ...).
class PipelineError : public std::runtime_error {
public:
    PipelineError(std::string code, const std::string& what) : std::runtime_error(what), code_(std::move(code)) {}
    const std::string& code() const { return code_; }

private:
    std::string code_;
};

/// One cell of the experiment grid: stage count crossed with augmentation.
struct ExperimentSpec {
    std::string name;
    int stages = 1;
    bool augmentation = false;

    friend bool operator==(const ExperimentSpec&, const ExperimentSpec&) = default;
};

std::vector<ExperimentSpec> default_experiment_grid();

struct PipelinePaths {
    fs::path manifest;
    fs::path image_root;
    fs::path work_dir;
    fs::path checkpoint;  // optional; predictions and the service fall back to the last experiment
};

struct PipelineConfig {
    std::uint64_t seed = 1;
    PipelinePaths paths;
    SplitRatios split;
    double label_tolerance = 2.0;  // pixels
    AugmentationSpec augmentation;
    CascadeConfig network = CascadeConfig::desk();
    TrainingSchedule training;
    double eval_threshold = kFailureThreshold;
    std::vector<ExperimentSpec> experiments = default_experiment_grid();

    void validate() const;
};

/// Relative paths are written as given; load_config resolves them against the
/// config file's directory.
nlohmann::ordered_json pipeline_config_to_json(const PipelineConfig& config);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const fs::path& base_dir = {});
PipelineConfig load_config(const fs::path& path);

/// Artifact locations under the work directory.
struct WorkLayout {
    fs::path root;

    fs::path ingested() const { return root / "ingested.jsonl"; }
    fs::path ingest_errors() const { return root / "ingest_errors.json"; }
    fs::path filtered() const { return root / "filtered.jsonl"; }
    fs::path excluded() const { return root / "excluded.json"; }
    fs::path merged() const { return root / "merged.jsonl"; }
    fs::path merge_report() const { return root / "merge_report.json"; }
    fs::path completed() const { return root / "completed.jsonl"; }
    fs::path completion_report() const { return root / "completion_report.json"; }
    fs::path split() const { return root / "split.json"; }
    fs::path augment_plan() const { return root / "augment_plan.json"; }
    fs::path experiment_dir(const std::string& name) const { return root / "experiments" / name; }
    fs::path checkpoint(const std::string& name) const { return experiment_dir(name) / "model.ckpt"; }
    fs::path loss_curve(const std::string& name) const { return experiment_dir(name) / "loss_curve.tsv"; }
    fs::path train_summary(const std::string& name) const { return experiment_dir(name) / "train_summary.json"; }
    fs::path report(const std::string& name) const { return experiment_dir(name) / "report.json"; }
    fs::path ced(const std::string& name) const { return experiment_dir(name) / "ced.csv"; }
    fs::path summary() const { return root / "summary.tsv"; }
    fs::path predictions() const { return root / "predictions.jsonl"; }
};

/// Ground truth for a record: completed, else merged, else the single
/// annotation, else a clean merge of the first two annotations.
struct ResolvedTruth {
    std::optional<LandmarkSet> landmarks;
    std::string problem;
};
ResolvedTruth resolve_truth(const FaceRecord& record, double tolerance);

/// Records as of the latest completed stage (completed > merged > filtered).
std::vector<FaceRecord> current_records(const WorkLayout& work);

class Pipeline {
public:
    explicit Pipeline(PipelineConfig config, std::ostream* log = nullptr, bool verbose = false);

    const PipelineConfig& config() const { return config_; }
    const WorkLayout& work() const { return work_; }

    void ingest();
    void filter();
    void merge();
    void complete();
    void split();
    void augment();
    /// Trains every experiment, or only `only` when given.
    void train(const std::optional<std::string>& only = std::nullopt);
    /// Evaluates trained experiments on the test subset and writes the summary table.
    void eval(const std::optional<std::string>& only = std::nullopt);
    /// Predicts landmarks for one image (bounding box defaults to the whole image).
    LandmarkSet predict(const fs::path& image, const std::optional<BoxXYWH>& box,
                        const std::optional<std::string>& experiment = std::nullopt,
                        const std::optional<fs::path>& out = std::nullopt);

    /// Checkpoint used by predict and the service.
    fs::path default_checkpoint() const;

    /// Crops of one subset with resolved ground truth, in manifest order.
    std::vector<TrainingSample> load_subset(Subset subset) const;

private:
    void note(const std::string& line) const;
    void detail(const std::string& line) const;
    const ExperimentSpec& experiment(const std::string& name) const;

    PipelineConfig config_;
    WorkLayout work_;
    std::ostream* log_;
    bool verbose_;
};

/// Rows of the stages x augmentation summary table, tab-separated.
std::string summary_table(const std::vector<std::pair<ExperimentSpec, EvalReport>>& rows);

/// Landmark prediction in original-image coordinates for a page and face box.
LandmarkSet predict_landmarks(const CascadeModel& model, const Image& page, const BoxXYWH& box);

CascadeModel read_checkpoint(const fs::path& path);

}  // namespace mangalm
