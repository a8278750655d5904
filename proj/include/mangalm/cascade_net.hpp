#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mangalm/dataset.hpp"
#include "mangalm/geometry.hpp"
#include "mangalm/image.hpp"
#include "mangalm/nn.hpp"

namespace mangalm {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kMaxStages = 3;
inline constexpr int kRegressionOutputs = 2 * static_cast<int>(kNumLandmarks);

/// Geometry and widths of every stage. The defaults are the full-size network;
/// desk() and tiny() shrink it for CPU runs and gradient checks.
struct CascadeConfig {
    int canvas = 112;
    std::vector<int> conv_widths{32, 64, 128, 256};  // one entry per block; 2x2 max-pool after each
    int convs_per_block = 2;
    int dense_units = 256;
    int feature_grid = 56;  // feature image is feature_grid^2 before upsampling
    double heatmap_radius = 16.0;
    int stages = 2;
    double mean_shape_margin = 0.1;

    void validate() const;
    int blocks() const { return static_cast<int>(conv_widths.size()); }
    int final_side() const { return canvas >> blocks(); }
    int flat_size() const { return conv_widths.back() * final_side() * final_side(); }

    static CascadeConfig desk();
    static CascadeConfig tiny();

    friend bool operator==(const CascadeConfig&, const CascadeConfig&) = default;
};

nlohmann::ordered_json config_to_json(const CascadeConfig& c);
CascadeConfig config_from_json(const nlohmann::json& j);

struct StageWeights {
    std::vector<nn::Conv3x3> convs;
    nn::Dense hidden;      // flat -> dense_units, ReLU
    nn::Dense regression;  // dense_units -> 120 shape deltas
    nn::Dense connection;  // dense_units -> feature_grid^2, ReLU; feeds the next stage
};

struct CascadeModel {
    CascadeConfig config;
    MeanShape mean_shape;
    std::vector<StageWeights> stages;
};

/// He-normal conv/dense weights, zero biases, zero regression layer.
CascadeModel init_model(const CascadeConfig& config, const MeanShape& mean_shape, std::uint64_t seed);
StageWeights init_stage(const CascadeConfig& config, int stage_index, std::uint64_t seed);

/// Appends a freshly initialized stage (zero regression layer). Throws past kMaxStages.
void append_stage(CascadeModel& model, std::uint64_t seed);

/// Everything a stage consumes. Stage 0 uses the raw image and identity
/// normalization; later stages see the canonical-frame warp, the heatmap of the
/// normalized current shape, and the previous stage's feature image.
struct StageInput {
    Image image;
    std::optional<Image> heatmap;
    std::optional<Image> features;
    SimilarityTransform to_canonical;  // current shape -> mean shape
    LandmarkSet current;               // image frame
};

StageInput first_stage_input(const CascadeModel& model, const Image& image);

/// Connection layers between stage `stage - 1` and `stage`.
StageInput connection(const CascadeModel& model, int stage, const Image& image, const LandmarkSet& current,
                      const nn::Vector& previous_hidden);

/// Feature image of stage `stage` from its dense activation, upsampled to the canvas.
Image feature_image(const CascadeModel& model, int stage, const nn::Vector& hidden);

struct StageOutput {
    std::array<Point2, kNumLandmarks> delta{};  // canonical frame
    nn::Vector hidden;
    LandmarkSet shape;  // image frame
};

StageOutput stage_forward(const CascadeModel& model, int stage, const StageInput& input);

/// All stages in sequence; the final shape in image (canvas) coordinates.
LandmarkSet forward(const CascadeModel& model, const Image& image);

/// Shapes after each stage, up to and including `last_stage` (default all).
std::vector<LandmarkSet> forward_stages(const CascadeModel& model, const Image& image, int last_stage = -1);

/// Mean landmark distance divided by the ground-truth chin distance.
double loss(const LandmarkSet& predicted, const LandmarkSet& truth);

/// Parameters updated while training `stage`: that stage's convs, hidden and
/// regression layers plus the previous stage's connection layer.
struct StageGradient {
    StageWeights stage;
    std::optional<nn::Dense> previous_connection;
};

StageGradient zero_gradient(const CascadeModel& model, int stage);

/// Loss of the prediction after `stage` on one sample; accumulates the
/// gradient into `grad` when non-null.
double loss_and_gradient(const CascadeModel& model, int stage, const TrainingSample& sample,
                         StageGradient* grad);

/// Visits every tensor of a stage as (name, data, size, shape).
using TensorVisitor = std::function<void(const std::string&, double*, std::size_t, const std::vector<int>&)>;
void for_each_tensor(StageWeights& stage, const TensorVisitor& visit);
void for_each_tensor(StageGradient& grad, const TensorVisitor& visit);
/// Trainable tensors of `stage` inside the model, in StageGradient order.
void for_each_trainable(CascadeModel& model, int stage, const TensorVisitor& visit);

struct TrainingSchedule {
    int max_epochs = 150;  // per stage
    int patience = 15;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int batch_size = 64;
    std::uint64_t seed = 0;

    void validate() const;
};

struct EpochLoss {
    int stage;
    int epoch;
    double train_loss;
    double val_loss;
};

struct TrainResult {
    CascadeModel model;
    std::vector<EpochLoss> curve;
    std::vector<double> stage_validation_loss;  // per stage, for the restored best weights
    std::vector<int> best_epoch;
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using EpochCallback = std::function<void(const EpochLoss&)>;

/// Stage-wise training: each stage trains with earlier stages frozen until the
/// validation loss has not improved for `patience` epochs or `max_epochs`
/// passes; the best-validation weights are kept.
TrainResult train(CascadeModel model, const std::vector<TrainingSample>& train_set,
                  const std::vector<TrainingSample>& validation_set, const TrainingSchedule& schedule,
                  const EpochCallback& on_epoch = {});

/// Mean loss over samples with the full cascade (or up to `last_stage`).
double mean_loss(const CascadeModel& model, const std::vector<TrainingSample>& samples, int last_stage = -1);

std::string loss_curve_to_text(const std::vector<EpochLoss>& curve);

inline constexpr char kCheckpointMagic[8] = {'M', 'N', 'G', 'A', 'L', 'M', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Layout (all integers little-endian u32, tensors little-endian f32):
///   magic[8] version config_len config_json[config_len]
///   tensor(mean_shape)   stage_count
///   per stage: tensor_count, tensors...
///   tensor := name_len name rank dims[rank] values[prod(dims)]
std::string save_checkpoint(const CascadeModel& model);
CascadeModel load_checkpoint(const std::string& bytes);

}  // namespace mangalm
