#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "exprfuse/data.hpp"
#include "exprfuse/metrics.hpp"
#include "exprfuse/model.hpp"

namespace exprfuse {

// ---- focal loss ----------------------------------------------------------

struct FocalLossConfig {
    double gamma = 2.0;
    std::array<double, kLabelCount> class_weights{1, 1, 1, 1, 1, 1, 1, 1};
    int ignore_index = kIgnoreLabel;
};

void validate(const FocalLossConfig& cfg);

// Mean over non-ignored positions of -w_y·(1 - p_y)^γ·log p_y, p = softmax of
// the logits, evaluated through log-softmax. `logits` is [..., 8] and
// `labels` has one entry per row. Throws InputError for a label outside
// 0..7 and DataError when every position is ignored.
Var focal_loss(Var logits, std::span<const int> labels, const FocalLossConfig& cfg);

enum class ClassWeighting { uniform, inverse_frequency };

std::string_view to_string(ClassWeighting w);
ClassWeighting parse_class_weighting(std::string_view text);

// total / (8·count_c) over annotated frames; 0 for a class that never occurs.
std::array<double, kLabelCount> inverse_frequency_weights(const Dataset& data);

// ---- Adam ------------------------------------------------------------------

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

void validate(const AdamConfig& cfg);

struct AdamState {
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

class Adam {
   public:
    explicit Adam(AdamConfig cfg);

    // One bias-corrected update of every tensor in `params` from its
    // gradient, then clears the gradients. Moment buffers are created on
    // the first step. Throws ContractError when a gradient is missing and
    // NumericError naming the block when one is not finite; in both cases
    // no parameter is modified.
    void step(const ParameterList& params);

    const AdamConfig& config() const { return cfg_; }
    void set_learning_rate(double lr);
    const AdamState& state() const { return state_; }
    void set_state(AdamState state) { state_ = std::move(state); }

   private:
    AdamConfig cfg_;
    AdamState state_;
};

// ---- learning-rate range test ---------------------------------------------

struct LrFinderConfig {
    double min_lr = 1e-7;
    double max_lr = 1.0;
    std::size_t num_steps = 100;
    double smoothing = 0.05;  // weight of the newest loss in the moving average
    double divergence = 4.0;  // stop once smoothed loss > divergence × best
    // Reshuffle and continue when one pass over the data has fewer batches
    // than num_steps. When false that case is a DataError.
    bool cycle_data = true;
};

void validate(const LrFinderConfig& cfg);

// lr_i = min_lr·(max_lr/min_lr)^(i/(num_steps-1))
std::vector<double> lr_schedule(const LrFinderConfig& cfg);

struct LrPoint {
    double lr = 0.0;
    double loss = 0.0;
    double smoothed = 0.0;  // bias-corrected exponential moving average
};

struct LrFinderResult {
    double suggested_lr = 0.0;
    std::vector<LrPoint> curve;
    bool diverged = false;
};

// The lr where the smoothed loss falls fastest against log(lr), divided by
// 10. Slopes are central differences, one-sided at the two ends. A curve
// that never descends falls back to the lr of its lowest smoothed loss.
double suggest_lr(const std::vector<LrPoint>& curve);

// ---- training loop ---------------------------------------------------------

struct TrainConfig {
    std::size_t batch_size = 16;
    std::size_t epochs = 30;
    std::uint64_t seed = 0;
    FocalLossConfig loss;
    ClassWeighting weighting = ClassWeighting::uniform;
    AdamConfig adam;
    LrFinderConfig lr_finder;
    // Run the range test before training and train at its suggestion.
    bool auto_lr = true;
    // Stop once validation macro-F1 reaches this value; 0 disables.
    double target_macro_f1 = 0.0;
};

void validate(const TrainConfig& cfg);

// Loss settings with class weights resolved against the training data.
FocalLossConfig resolve_loss(const TrainConfig& cfg, const Dataset& train);

// Sweeps the schedule one mini-batch per rate with a fresh optimizer, then
// restores every model parameter bitwise. Throws NumericError if the loss is
// not finite at the first rate; later non-finite losses end the sweep.
LrFinderResult lr_range_test(FusionModel& model, const Dataset& data, const std::vector<Window>& windows,
                             const TrainConfig& cfg, Rng& rng);

struct EvalResult {
    double loss = 0.0;  // mean focal loss over scored frames, 0 when none
    ConfusionMatrix confusion;
    MacroF1 scores;
    std::vector<std::vector<int>> predictions;  // per video, one per frame
};

// Evaluation-mode pass over all windows in order.
EvalResult evaluate(FusionModel& model, const Dataset& data, const std::vector<Window>& windows,
                    const FocalLossConfig& loss, std::size_t batch_size);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_macro_f1 = 0.0;  // from the training-mode forward passes
    double val_loss = 0.0;
    double val_macro_f1 = 0.0;
    double lr = 0.0;
};

struct FitResult {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;  // 0 when no epoch ran
    double best_val_macro_f1 = 0.0;
    ParameterSnapshot best_parameters;  // initial weights when no epoch ran
    double learning_rate = 0.0;
    std::optional<LrFinderResult> lr_search;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Shuffled mini-batch Adam training. The best epoch is the first one with
// the highest validation macro-F1. The model is left at the final weights.
// Non-finite losses raise NumericError naming the epoch and batch.
FitResult fit(FusionModel& model, const Dataset& train, const Dataset& val, const TrainConfig& cfg,
              const EpochCallback& on_epoch = {});

}  // namespace exprfuse
