#include "mangalm/cascade_net.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "mangalm/evalmetrics.hpp"
#include "mangalm/io_util.hpp"
#include "mangalm/random.hpp"

namespace mangalm {

using nn::Matrix;
using nn::Vector;

// ---------------------------------------------------------------------------
// Configuration

void CascadeConfig::validate() const {
    if (stages < 1 || stages > kMaxStages) {
        throw ConfigError("stage count must be between 1 and " + std::to_string(kMaxStages));
    }
    if (conv_widths.empty()) throw ConfigError("at least one conv block is required");
    for (int w : conv_widths) {
        if (w <= 0) throw ConfigError("conv widths must be positive");
    }
    if (convs_per_block < 1) throw ConfigError("convs_per_block must be >= 1");
    if (canvas <= 0 || canvas % (1 << blocks()) != 0) {
        throw ConfigError("canvas must be divisible by 2^blocks");
    }
    if (dense_units <= 0) throw ConfigError("dense_units must be positive");
    if (feature_grid <= 0 || canvas % feature_grid != 0) {
        throw ConfigError("feature_grid must divide the canvas");
    }
    if (!(heatmap_radius > 0)) throw ConfigError("heatmap_radius must be positive");
    if (!(mean_shape_margin >= 0 && mean_shape_margin < 0.5)) {
        throw ConfigError("mean_shape_margin must lie in [0, 0.5)");
    }
}

CascadeConfig CascadeConfig::desk() {
    CascadeConfig c;
    c.canvas = 64;
    c.conv_widths = {8, 16, 32, 64};
    c.dense_units = 128;
    c.feature_grid = 32;
    c.heatmap_radius = 9.0;
    return c;
}

CascadeConfig CascadeConfig::tiny() {
    CascadeConfig c;
    c.canvas = 8;
    c.conv_widths = {2};
    c.convs_per_block = 1;
    c.dense_units = 8;
    c.feature_grid = 4;
    c.heatmap_radius = 3.0;
    return c;
}

nlohmann::ordered_json config_to_json(const CascadeConfig& c) {
    nlohmann::ordered_json j;
    j["canvas"] = c.canvas;
    j["conv_widths"] = c.conv_widths;
    j["convs_per_block"] = c.convs_per_block;
    j["dense_units"] = c.dense_units;
    j["feature_grid"] = c.feature_grid;
    j["heatmap_radius"] = c.heatmap_radius;
    j["stages"] = c.stages;
    j["mean_shape_margin"] = c.mean_shape_margin;
    return j;
}

CascadeConfig config_from_json(const nlohmann::json& j) {
    CascadeConfig c;
    for (const auto& [key, value] : j.items()) {
        if (key == "canvas") c.canvas = value.get<int>();
        else if (key == "conv_widths") c.conv_widths = value.get<std::vector<int>>();
        else if (key == "convs_per_block") c.convs_per_block = value.get<int>();
        else if (key == "dense_units") c.dense_units = value.get<int>();
        else if (key == "feature_grid") c.feature_grid = value.get<int>();
        else if (key == "heatmap_radius") c.heatmap_radius = value.get<double>();
        else if (key == "stages") c.stages = value.get<int>();
        else if (key == "mean_shape_margin") c.mean_shape_margin = value.get<double>();
        else throw ConfigError("unknown network config key: " + key);
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

void fill_normal(Matrix& m, double sigma, Rng& rng) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sigma * rng.normal();
}

int stage_in_channels(int stage) { return stage == 0 ? 1 : 3; }

}  // namespace

StageWeights init_stage(const CascadeConfig& config, int stage_index, std::uint64_t seed) {
    config.validate();
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(stage_index)));
    StageWeights w;
    int in = stage_in_channels(stage_index);
    for (int width : config.conv_widths) {
        for (int k = 0; k < config.convs_per_block; ++k) {
            nn::Conv3x3 conv{Matrix(width, in * 9), Vector::Zero(width)};
            fill_normal(conv.weight, std::sqrt(2.0 / (in * 9)), rng);
            w.convs.push_back(std::move(conv));
            in = width;
        }
    }
    w.hidden = {Matrix(config.dense_units, config.flat_size()), Vector::Zero(config.dense_units)};
    fill_normal(w.hidden.weight, std::sqrt(2.0 / config.flat_size()), rng);
    w.regression = {Matrix::Zero(kRegressionOutputs, config.dense_units), Vector::Zero(kRegressionOutputs)};
    const int grid = config.feature_grid * config.feature_grid;
    w.connection = {Matrix(grid, config.dense_units), Vector::Zero(grid)};
    fill_normal(w.connection.weight, std::sqrt(2.0 / config.dense_units), rng);
    return w;
}

CascadeModel init_model(const CascadeConfig& config, const MeanShape& mean_shape, std::uint64_t seed) {
    config.validate();
    if (mean_shape.canvas != config.canvas) throw ConfigError("mean shape canvas differs from network canvas");
    CascadeModel m;
    m.config = config;
    m.mean_shape = mean_shape;
    for (int s = 0; s < config.stages; ++s) m.stages.push_back(init_stage(config, s, seed));
    return m;
}

void append_stage(CascadeModel& model, std::uint64_t seed) {
    if (model.config.stages >= kMaxStages) throw ConfigError("cannot exceed " + std::to_string(kMaxStages) + " stages");
    model.config.stages += 1;
    model.stages.push_back(init_stage(model.config, model.config.stages - 1, seed));
}

// ---------------------------------------------------------------------------
// Stage computation

namespace {

struct Trace {
    std::vector<Matrix> cols;
    std::vector<Matrix> acts;  // post-ReLU conv outputs
    std::vector<std::vector<int>> argmax;
    Vector flat;
    Vector hidden;
};

Vector plane_of(const Image& img) {
    return Eigen::Map<const Vector>(img.pixels().data(), static_cast<Eigen::Index>(img.pixels().size()));
}

Vector standardized(const Image& img) {
    Vector v = plane_of(img);
    const double mean = v.mean();
    const double var = (v.array() - mean).square().mean();
    return (v.array() - mean) / std::sqrt(var + 1e-6);
}

/// Runs the conv trunk and dense head; returns the 120 regression outputs.
Vector run_stage(const StageWeights& w, const CascadeConfig& cfg, Matrix planes, Trace* trace, Vector& hidden) {
    int side = cfg.canvas;
    std::size_t layer = 0;
    Matrix x = std::move(planes);
    for (int b = 0; b < cfg.blocks(); ++b) {
        for (int k = 0; k < cfg.convs_per_block; ++k, ++layer) {
            Matrix cols;
            Matrix y = nn::conv_forward(w.convs[layer], x, side, cols);
            nn::relu_inplace(y);
            if (trace) {
                trace->cols.push_back(std::move(cols));
                trace->acts.push_back(y);
            }
            x = std::move(y);
        }
        std::vector<int> argmax;
        x = nn::maxpool_forward(x, side, argmax);
        if (trace) trace->argmax.push_back(std::move(argmax));
        side /= 2;
    }
    Vector flat = Eigen::Map<const Vector>(x.data(), x.size());
    hidden = w.hidden.weight * flat + w.hidden.bias;
    nn::relu_inplace(hidden);
    if (trace) {
        trace->flat = std::move(flat);
        trace->hidden = hidden;
    }
    return w.regression.weight * hidden + w.regression.bias;
}

/// Backpropagates d(loss)/d(regression output). Returns the input-plane
/// gradient when `need_input_grad`.
Matrix backprop_stage(const StageWeights& w, const CascadeConfig& cfg, const Trace& t, const Vector& grad_out,
                      StageWeights& g, bool need_input_grad) {
    g.regression.weight.noalias() += grad_out * t.hidden.transpose();
    g.regression.bias += grad_out;
    Vector dh = w.regression.weight.transpose() * grad_out;
    nn::relu_backward_inplace(dh, t.hidden);
    g.hidden.weight.noalias() += dh * t.flat.transpose();
    g.hidden.bias += dh;
    const Vector dflat = w.hidden.weight.transpose() * dh;

    const int last_side = cfg.final_side();
    Matrix dx = Eigen::Map<const Matrix>(dflat.data(), cfg.conv_widths.back(), last_side * last_side);
    int side = last_side;
    int layer = static_cast<int>(w.convs.size()) - 1;
    for (int b = cfg.blocks() - 1; b >= 0; --b) {
        side *= 2;
        dx = nn::maxpool_backward(dx, t.argmax[static_cast<std::size_t>(b)], side);
        for (int k = 0; k < cfg.convs_per_block; ++k, --layer) {
            const auto li = static_cast<std::size_t>(layer);
            nn::relu_backward_inplace(dx, t.acts[li]);
            Matrix din;
            const bool want = layer > 0 || need_input_grad;
            nn::conv_backward(w.convs[li], t.cols[li], dx, side, g.convs[li], want ? &din : nullptr);
            dx = std::move(din);
        }
    }
    return dx;
}

/// Connection-layer output before ReLU, as a feature_grid^2 vector.
Vector connection_preactivation(const StageWeights& w, const Vector& hidden) {
    return w.connection.weight * hidden + w.connection.bias;
}

Image upsample_grid(const Vector& grid_values, int grid, int canvas) {
    Image img(canvas, canvas);
    const int f = canvas / grid;
    for (int r = 0; r < canvas; ++r) {
        for (int c = 0; c < canvas; ++c) img.at(c, r) = grid_values((r / f) * grid + (c / f));
    }
    return img;
}

Vector downsample_grid_grad(const double* plane_grad, int grid, int canvas) {
    Vector g = Vector::Zero(grid * grid);
    const int f = canvas / grid;
    for (int r = 0; r < canvas; ++r) {
        for (int c = 0; c < canvas; ++c) g((r / f) * grid + (c / f)) += plane_grad[r * canvas + c];
    }
    return g;
}

Eigen::Matrix2d inverse_linear(const SimilarityTransform& t) {
    if (t.scale == 1.0 && t.theta == 0.0) return Eigen::Matrix2d::Identity();
    return t.inverse().linear();
}

LandmarkSet apply_delta(const LandmarkSet& current, const Eigen::Matrix2d& inv, const Vector& out,
                        std::array<Point2, kNumLandmarks>* delta) {
    LandmarkSet shape;
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
        const double dx = out(static_cast<Eigen::Index>(2 * i));
        const double dy = out(static_cast<Eigen::Index>(2 * i + 1));
        if (delta) (*delta)[i] = {dx, dy};
        const Point2 c = current.point(i);
        shape.set(i, {c.x + (inv(0, 0) * dx + inv(0, 1) * dy), c.y + (inv(1, 0) * dx + inv(1, 1) * dy)});
    }
    return shape;
}

Matrix assemble_planes(const CascadeConfig& cfg, const StageInput& in) {
    const int pixels = cfg.canvas * cfg.canvas;
    const bool later = in.heatmap.has_value();
    Matrix planes(later ? 3 : 1, pixels);
    planes.row(0) = standardized(in.image).transpose();
    if (later) {
        if (!in.features) throw std::invalid_argument("stage input has a heatmap but no feature image");
        planes.row(1) = plane_of(*in.heatmap).transpose();
        planes.row(2) = plane_of(*in.features).transpose();
    }
    return planes;
}

void check_image(const CascadeConfig& cfg, const Image& image) {
    if (image.width() != cfg.canvas || image.height() != cfg.canvas) {
        throw std::invalid_argument("image size " + std::to_string(image.width()) + "x" +
                                    std::to_string(image.height()) + " does not match canvas " +
                                    std::to_string(cfg.canvas));
    }
}

}  // namespace

StageInput first_stage_input(const CascadeModel& model, const Image& image) {
    check_image(model.config, image);
    StageInput in;
    in.image = image;
    in.to_canonical = SimilarityTransform::identity();
    in.current = model.mean_shape.as_set();
    return in;
}

Image feature_image(const CascadeModel& model, int stage, const Vector& hidden) {
    Vector z = connection_preactivation(model.stages.at(static_cast<std::size_t>(stage)), hidden);
    nn::relu_inplace(z);
    return upsample_grid(z, model.config.feature_grid, model.config.canvas);
}

StageInput connection(const CascadeModel& model, int stage, const Image& image, const LandmarkSet& current,
                      const Vector& previous_hidden) {
    if (stage < 1) throw std::invalid_argument("connection feeds stages >= 1");
    check_image(model.config, image);
    if (!current.complete()) throw std::invalid_argument("connection needs a complete current shape");
    const int canvas = model.config.canvas;
    StageInput in;
    in.current = current;
    in.to_canonical = estimate_similarity(current.points(), model.mean_shape.points);
    const SimilarityTransform back = in.to_canonical.inverse();
    in.image = warp_image(image, canvas, canvas, [&back](Point2 q) { return back(q); }, 1.0);
    in.heatmap = render_heatmap(apply(in.to_canonical, current), canvas, model.config.heatmap_radius);
    in.features = feature_image(model, stage - 1, previous_hidden);
    return in;
}

StageOutput stage_forward(const CascadeModel& model, int stage, const StageInput& input) {
    if (stage < 0 || stage >= static_cast<int>(model.stages.size())) {
        throw std::out_of_range("stage index " + std::to_string(stage) + " out of range");
    }
    check_image(model.config, input.image);
    if ((stage == 0) == input.heatmap.has_value()) {
        throw std::invalid_argument("stage input planes do not match the stage index");
    }
    StageOutput out;
    const Vector reg = run_stage(model.stages[static_cast<std::size_t>(stage)], model.config,
                                 assemble_planes(model.config, input), nullptr, out.hidden);
    out.shape = apply_delta(input.current, inverse_linear(input.to_canonical), reg, &out.delta);
    return out;
}

std::vector<LandmarkSet> forward_stages(const CascadeModel& model, const Image& image, int last_stage) {
    const int n = static_cast<int>(model.stages.size());
    const int last = last_stage < 0 ? n - 1 : std::min(last_stage, n - 1);
    std::vector<LandmarkSet> shapes;
    StageInput in = first_stage_input(model, image);
    for (int s = 0; s <= last; ++s) {
        StageOutput out = stage_forward(model, s, in);
        shapes.push_back(out.shape);
        if (s < last) in = connection(model, s + 1, image, out.shape, out.hidden);
    }
    return shapes;
}

LandmarkSet forward(const CascadeModel& model, const Image& image) { return forward_stages(model, image).back(); }

double loss(const LandmarkSet& predicted, const LandmarkSet& truth) {
    return normalized_error(predicted, truth).normalized;
}

// ---------------------------------------------------------------------------
// Gradients

StageGradient zero_gradient(const CascadeModel& model, int stage) {
    const auto& w = model.stages.at(static_cast<std::size_t>(stage));
    StageGradient g;
    for (const auto& c : w.convs) g.stage.convs.push_back(nn::zeros_like(c));
    g.stage.hidden = nn::zeros_like(w.hidden);
    g.stage.regression = nn::zeros_like(w.regression);
    g.stage.connection = nn::zeros_like(w.connection);
    if (stage > 0) g.previous_connection = nn::zeros_like(model.stages[static_cast<std::size_t>(stage - 1)].connection);
    return g;
}

namespace {

/// Frozen-prefix state for one sample at one stage.
struct Prepared {
    Matrix planes;  // feature-image row (stage > 0) is filled per evaluation
    Vector previous_hidden;
    LandmarkSet current;
    Eigen::Matrix2d inv = Eigen::Matrix2d::Identity();
    const LandmarkSet* truth = nullptr;
};

Prepared prepare(const CascadeModel& model, int stage, const TrainingSample& sample) {
    Prepared p;
    p.truth = &sample.landmarks;
    StageInput in = first_stage_input(model, sample.image);
    Vector hidden;
    for (int s = 0; s < stage; ++s) {
        StageOutput out = stage_forward(model, s, in);
        hidden = out.hidden;
        in = connection(model, s + 1, sample.image, out.shape, out.hidden);
    }
    p.planes = assemble_planes(model.config, in);
    p.previous_hidden = std::move(hidden);
    p.current = in.current;
    p.inv = inverse_linear(in.to_canonical);
    return p;
}

double evaluate_prepared(const CascadeModel& model, int stage, Prepared& p, StageGradient* grad) {
    const auto& cfg = model.config;
    const auto& w = model.stages[static_cast<std::size_t>(stage)];
    Vector conn_pre;
    if (stage > 0) {
        conn_pre = connection_preactivation(model.stages[static_cast<std::size_t>(stage - 1)], p.previous_hidden);
        Vector z = conn_pre.cwiseMax(0.0);
        p.planes.row(2) = plane_of(upsample_grid(z, cfg.feature_grid, cfg.canvas)).transpose();
    }
    Trace trace;
    Vector hidden;
    const Vector reg = run_stage(w, cfg, p.planes, grad ? &trace : nullptr, hidden);
    const LandmarkSet shape = apply_delta(p.current, p.inv, reg, nullptr);
    const LandmarkSet& truth = *p.truth;
    const double chin = chin_distance(truth);
    if (!(chin > 0.0)) throw MetricError("ground-truth chin distance is zero");
    double sum = 0.0;
    Vector dreg = Vector::Zero(kRegressionOutputs);
    const double norm = 1.0 / (static_cast<double>(kNumLandmarks) * chin);
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
        const Point2 r = shape.point(i) - truth.point(i);
        const double d = std::hypot(r.x, r.y);
        sum += d;
        if (grad && d > 0.0) {
            const double gx = norm * r.x / d;
            const double gy = norm * r.y / d;
            // d(shape)/d(delta) = inv, so the delta gradient is inv^T g.
            dreg(static_cast<Eigen::Index>(2 * i)) = p.inv(0, 0) * gx + p.inv(1, 0) * gy;
            dreg(static_cast<Eigen::Index>(2 * i + 1)) = p.inv(0, 1) * gx + p.inv(1, 1) * gy;
        }
    }
    const double value = sum / static_cast<double>(kNumLandmarks) / chin;
    if (grad) {
        const bool need_input = stage > 0 && grad->previous_connection.has_value();
        Matrix dplanes = backprop_stage(w, cfg, trace, dreg, grad->stage, need_input);
        if (need_input) {
            Vector dz = downsample_grid_grad(dplanes.row(2).data(), cfg.feature_grid, cfg.canvas);
            dz = (conn_pre.array() > 0.0).select(dz, 0.0);
            grad->previous_connection->weight.noalias() += dz * p.previous_hidden.transpose();
            grad->previous_connection->bias += dz;
        }
    }
    return value;
}

}  // namespace

double loss_and_gradient(const CascadeModel& model, int stage, const TrainingSample& sample, StageGradient* grad) {
    if (stage < 0 || stage >= static_cast<int>(model.stages.size())) throw std::out_of_range("stage out of range");
    if (!sample.landmarks.complete()) throw std::invalid_argument("training sample landmarks incomplete");
    Prepared p = prepare(model, stage, sample);
    return evaluate_prepared(model, stage, p, grad);
}

namespace {

void visit_conv(const std::string& prefix, nn::Conv3x3& c, const TensorVisitor& visit) {
    visit(prefix + ".weight", c.weight.data(), static_cast<std::size_t>(c.weight.size()),
          {c.out_channels(), c.in_channels(), 3, 3});
    visit(prefix + ".bias", c.bias.data(), static_cast<std::size_t>(c.bias.size()), {c.out_channels()});
}

void visit_dense(const std::string& prefix, nn::Dense& d, const TensorVisitor& visit) {
    visit(prefix + ".weight", d.weight.data(), static_cast<std::size_t>(d.weight.size()),
          {d.outputs(), d.inputs()});
    visit(prefix + ".bias", d.bias.data(), static_cast<std::size_t>(d.bias.size()), {d.outputs()});
}

void visit_trainable_stage(StageWeights& s, const TensorVisitor& visit) {
    for (std::size_t i = 0; i < s.convs.size(); ++i) visit_conv("conv" + std::to_string(i), s.convs[i], visit);
    visit_dense("hidden", s.hidden, visit);
    visit_dense("regression", s.regression, visit);
}

}  // namespace

void for_each_tensor(StageWeights& stage, const TensorVisitor& visit) {
    visit_trainable_stage(stage, visit);
    visit_dense("connection", stage.connection, visit);
}

void for_each_tensor(StageGradient& grad, const TensorVisitor& visit) {
    visit_trainable_stage(grad.stage, visit);
    if (grad.previous_connection) visit_dense("previous.connection", *grad.previous_connection, visit);
}

void for_each_trainable(CascadeModel& model, int stage, const TensorVisitor& visit) {
    visit_trainable_stage(model.stages.at(static_cast<std::size_t>(stage)), visit);
    if (stage > 0) visit_dense("previous.connection", model.stages[static_cast<std::size_t>(stage - 1)].connection, visit);
}

// ---------------------------------------------------------------------------
// Training

void TrainingSchedule::validate() const {
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (patience < 1 || patience >= max_epochs) throw ConfigError("patience must satisfy 1 <= patience < max_epochs");
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && epsilon > 0)) {
        throw ConfigError("invalid optimizer moments");
    }
}

namespace {

struct TensorRef {
    double* data;
    std::size_t size;
};

std::vector<TensorRef> collect(const std::function<void(const TensorVisitor&)>& walker) {
    std::vector<TensorRef> refs;
    walker([&refs](const std::string&, double* d, std::size_t n, const std::vector<int>&) { refs.push_back({d, n}); });
    return refs;
}

}  // namespace

double mean_loss(const CascadeModel& model, const std::vector<TrainingSample>& samples, int last_stage) {
    if (samples.empty()) throw std::invalid_argument("mean_loss of an empty sample set");
    double sum = 0.0;
    for (const auto& s : samples) sum += loss(forward_stages(model, s.image, last_stage).back(), s.landmarks);
    return sum / static_cast<double>(samples.size());
}

TrainResult train(CascadeModel model, const std::vector<TrainingSample>& train_set,
                  const std::vector<TrainingSample>& validation_set, const TrainingSchedule& schedule,
                  const EpochCallback& on_epoch) {
    schedule.validate();
    model.config.validate();
    if (train_set.empty() || validation_set.empty()) {
        throw std::invalid_argument("training needs nonempty train and validation sets");
    }
    TrainResult result;
    const int n_stages = static_cast<int>(model.stages.size());
    for (int stage = 0; stage < n_stages; ++stage) {
        std::vector<Prepared> train_cache, val_cache;
        train_cache.reserve(train_set.size());
        val_cache.reserve(validation_set.size());
        for (const auto& s : train_set) train_cache.push_back(prepare(model, stage, s));
        for (const auto& s : validation_set) val_cache.push_back(prepare(model, stage, s));

        const auto params = collect([&](const TensorVisitor& v) { for_each_trainable(model, stage, v); });
        std::vector<std::vector<double>> m1, m2, best;
        for (const auto& p : params) {
            m1.emplace_back(p.size, 0.0);
            m2.emplace_back(p.size, 0.0);
            best.emplace_back(p.data, p.data + p.size);
        }

        Rng rng(mix_seed(schedule.seed, static_cast<std::uint64_t>(stage)));
        std::vector<std::size_t> order(train_cache.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

        double best_val = std::numeric_limits<double>::infinity();
        int best_epoch = 0;
        int since_best = 0;
        long step = 0;
        for (int epoch = 1; epoch <= schedule.max_epochs; ++epoch) {
            rng.shuffle(order);
            double train_sum = 0.0;
            for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(schedule.batch_size)) {
                const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(schedule.batch_size));
                StageGradient grad = zero_gradient(model, stage);
                for (std::size_t k = start; k < end; ++k) {
                    const double l = evaluate_prepared(model, stage, train_cache[order[k]], &grad);
                    if (!std::isfinite(l)) {
                        throw TrainingDiverged("non-finite training loss at stage " + std::to_string(stage + 1) +
                                               ", epoch " + std::to_string(epoch));
                    }
                    train_sum += l;
                }
                const auto grads = collect([&](const TensorVisitor& v) { for_each_tensor(grad, v); });
                ++step;
                const double inv_batch = 1.0 / static_cast<double>(end - start);
                const double c1 = 1.0 - std::pow(schedule.beta1, static_cast<double>(step));
                const double c2 = 1.0 - std::pow(schedule.beta2, static_cast<double>(step));
                for (std::size_t t = 0; t < params.size(); ++t) {
                    double* w = params[t].data;
                    const double* g = grads[t].data;
                    auto& a = m1[t];
                    auto& b = m2[t];
                    for (std::size_t i = 0; i < params[t].size; ++i) {
                        const double gi = g[i] * inv_batch;
                        a[i] = schedule.beta1 * a[i] + (1.0 - schedule.beta1) * gi;
                        b[i] = schedule.beta2 * b[i] + (1.0 - schedule.beta2) * gi * gi;
                        w[i] -= schedule.learning_rate * (a[i] / c1) / (std::sqrt(b[i] / c2) + schedule.epsilon);
                    }
                }
            }
            double val_sum = 0.0;
            for (auto& p : val_cache) val_sum += evaluate_prepared(model, stage, p, nullptr);
            const EpochLoss rec{stage + 1, epoch, train_sum / static_cast<double>(order.size()),
                                val_sum / static_cast<double>(val_cache.size())};
            if (!std::isfinite(rec.val_loss)) {
                throw TrainingDiverged("non-finite validation loss at stage " + std::to_string(stage + 1));
            }
            result.curve.push_back(rec);
            if (on_epoch) on_epoch(rec);
            if (rec.val_loss < best_val) {
                best_val = rec.val_loss;
                best_epoch = epoch;
                since_best = 0;
                for (std::size_t t = 0; t < params.size(); ++t) {
                    std::copy(params[t].data, params[t].data + params[t].size, best[t].begin());
                }
            } else if (++since_best >= schedule.patience) {
                break;
            }
        }
        for (std::size_t t = 0; t < params.size(); ++t) std::copy(best[t].begin(), best[t].end(), params[t].data);
        result.best_epoch.push_back(best_epoch);
        result.stage_validation_loss.push_back(mean_loss(model, validation_set, stage));
    }
    result.model = std::move(model);
    return result;
}

std::string loss_curve_to_text(const std::vector<EpochLoss>& curve) {
    std::ostringstream out;
    out.precision(17);
    out << "stage\tepoch\ttrain_loss\tval_loss\n";
    for (const auto& e : curve) out << e.stage << '\t' << e.epoch << '\t' << e.train_loss << '\t' << e.val_loss << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_tensor(std::string& out, const std::string& name, const double* data, std::size_t n,
                const std::vector<int>& shape) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    std::size_t expect = 1;
    for (int d : shape) {
        put_u32(out, static_cast<std::uint32_t>(d));
        expect *= static_cast<std::size_t>(d);
    }
    if (expect != n) throw CheckpointError("tensor " + name + " size does not match its shape");
    for (std::size_t i = 0; i < n; ++i) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(data[i])));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::string raw(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    void tensor(const std::string& name, double* data, std::size_t n, const std::vector<int>& shape) {
        const std::string got = raw(u32());
        if (got != name) throw CheckpointError("expected tensor " + name + ", found " + got);
        const std::uint32_t rank = u32();
        if (rank != shape.size()) throw CheckpointError("rank mismatch for " + name);
        for (int d : shape) {
            if (u32() != static_cast<std::uint32_t>(d)) throw CheckpointError("shape mismatch for " + name);
        }
        for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<double>(std::bit_cast<float>(u32()));
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw CheckpointError("truncated checkpoint");
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string save_checkpoint(const CascadeModel& model) {
    std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
    put_u32(out, kCheckpointVersion);
    const std::string cfg = config_to_json(model.config).dump();
    put_u32(out, static_cast<std::uint32_t>(cfg.size()));
    out += cfg;
    std::vector<double> ms;
    for (const auto& p : model.mean_shape.points) {
        ms.push_back(p.x);
        ms.push_back(p.y);
    }
    put_tensor(out, "mean_shape", ms.data(), ms.size(), {static_cast<int>(kNumLandmarks), 2});
    put_u32(out, static_cast<std::uint32_t>(model.stages.size()));
    for (const auto& stage : model.stages) {
        StageWeights copy = stage;
        std::uint32_t count = 0;
        for_each_tensor(copy, [&count](const std::string&, double*, std::size_t, const std::vector<int>&) { ++count; });
        put_u32(out, count);
        for_each_tensor(copy, [&out](const std::string& name, double* d, std::size_t n, const std::vector<int>& shape) {
            put_tensor(out, name, d, n, shape);
        });
    }
    return out;
}

CascadeModel load_checkpoint(const std::string& bytes) {
    if (bytes.size() < sizeof kCheckpointMagic || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
        throw CheckpointError("not a checkpoint file (bad magic)");
    }
    Reader r(bytes);
    r.raw(sizeof kCheckpointMagic);
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    CascadeModel model;
    try {
        model.config = config_from_json(nlohmann::json::parse(r.raw(r.u32())));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("bad checkpoint config: ") + e.what());
    }
    std::vector<double> ms(2 * kNumLandmarks);
    r.tensor("mean_shape", ms.data(), ms.size(), {static_cast<int>(kNumLandmarks), 2});
    model.mean_shape.canvas = model.config.canvas;
    model.mean_shape.margin = model.config.mean_shape_margin;
    for (std::size_t i = 0; i < kNumLandmarks; ++i) model.mean_shape.points[i] = {ms[2 * i], ms[2 * i + 1]};
    const std::uint32_t n_stages = r.u32();
    if (static_cast<int>(n_stages) != model.config.stages) throw CheckpointError("stage count disagrees with config");
    for (std::uint32_t s = 0; s < n_stages; ++s) {
        StageWeights w = init_stage(model.config, static_cast<int>(s), 0);
        std::uint32_t count = 0;
        for_each_tensor(w, [&count](const std::string&, double*, std::size_t, const std::vector<int>&) { ++count; });
        if (r.u32() != count) throw CheckpointError("tensor count mismatch in stage " + std::to_string(s));
        for_each_tensor(w, [&r](const std::string& name, double* d, std::size_t n, const std::vector<int>& shape) {
            r.tensor(name, d, n, shape);
        });
        model.stages.push_back(std::move(w));
    }
    if (!r.done()) throw CheckpointError("trailing bytes after checkpoint");
    return model;
}

}  // namespace mangalm
