#include "exprfuse/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "exprfuse/errors.hpp"

namespace exprfuse {

void validate(const FocalLossConfig& cfg) {
    if (!std::isfinite(cfg.gamma) || cfg.gamma < 0.0) throw ConfigError("loss.gamma must be finite and nonnegative");
    for (double w : cfg.class_weights) {
        if (!std::isfinite(w) || w < 0.0) throw ConfigError("loss.class_weights must be finite and nonnegative");
    }
    if (is_class_code(cfg.ignore_index)) throw ConfigError("loss.ignore_index must not be a class code");
}

Var focal_loss(Var logits, std::span<const int> labels, const FocalLossConfig& cfg) {
    const Shape& s = logits.shape();
    if (s.empty() || s.back() != kLabelCount) {
        throw DimensionError("focal loss expects [..., " + std::to_string(kLabelCount) + "] logits, got " + to_string(s));
    }
    const std::size_t rows = logits.size() / kLabelCount;
    if (labels.size() != rows) {
        throw DimensionError("focal loss got " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) +
                             " rows");
    }
    std::size_t scored = 0;
    for (std::size_t i = 0; i < rows; ++i) {
        if (labels[i] == cfg.ignore_index) continue;
        if (!is_class_code(labels[i])) {
            throw InputError("label " + std::to_string(labels[i]) + " at position " + std::to_string(i) +
                             " is neither a class code nor the ignore index");
        }
        ++scored;
    }
    if (scored == 0) throw DataError("focal loss: every position is ignored");

    const auto z = logits.value();
    const double gamma = cfg.gamma;
    // Row-wise probabilities and the scalar factor c_i with dL_i/dz_j = c_i·(δ_jy - p_j).
    std::vector<double> probs(rows * kLabelCount);
    std::vector<double> coef(rows, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        const double* zi = z.data() + i * kLabelCount;
        double* pi = probs.data() + i * kLabelCount;
        const double m = *std::max_element(zi, zi + kLabelCount);
        double sum_exp = 0.0;
        for (int j = 0; j < kLabelCount; ++j) sum_exp += std::exp(zi[j] - m);
        const double log_norm = m + std::log(sum_exp);
        for (int j = 0; j < kLabelCount; ++j) pi[j] = std::exp(zi[j] - log_norm);
        const int y = labels[i];
        if (y == cfg.ignore_index) continue;
        const double w = cfg.class_weights[y];
        const double logp = zi[y] - log_norm;
        const double p = std::exp(logp);
        const double q = -std::expm1(logp);  // 1 - p without cancellation
        const double mod = std::pow(q, gamma);
        total += -w * mod * logp;
        const double extra = (gamma == 0.0 || q == 0.0) ? 0.0 : gamma * std::pow(q, gamma - 1.0) * p * logp;
        coef[i] = -w * (mod - extra);
    }
    const double inv = 1.0 / static_cast<double>(scored);
    std::vector<int> y(labels.begin(), labels.end());
    const int ignore = cfg.ignore_index;
    return logits.tape().record(
        "focal_loss", {1}, {total * inv}, {logits},
        [logits, probs = std::move(probs), coef = std::move(coef), y = std::move(y), ignore, inv, rows](
            Tape& t, std::span<const double> g, std::span<const double>) {
            auto gz = t.grad_of(logits);
            const double scale = g[0] * inv;
            for (std::size_t i = 0; i < rows; ++i) {
                if (y[i] == ignore) continue;
                const double c = coef[i] * scale;
                const double* pi = probs.data() + i * kLabelCount;
                double* gi = gz.data() + i * kLabelCount;
                for (int j = 0; j < kLabelCount; ++j) gi[j] += c * ((j == y[i] ? 1.0 : 0.0) - pi[j]);
            }
        });
}

std::string_view to_string(ClassWeighting w) {
    return w == ClassWeighting::uniform ? "uniform" : "inverse_frequency";
}

ClassWeighting parse_class_weighting(std::string_view text) {
    if (text == "uniform") return ClassWeighting::uniform;
    if (text == "inverse_frequency") return ClassWeighting::inverse_frequency;
    throw ConfigError("unknown class weighting '" + std::string(text) + "'");
}

std::array<double, kLabelCount> inverse_frequency_weights(const Dataset& data) {
    std::array<std::size_t, kLabelCount> counts{};
    std::size_t total = 0;
    for (const auto& v : data.videos)
        for (int l : v.labels)
            if (is_class_code(l)) {
                ++counts[l];
                ++total;
            }
    std::array<double, kLabelCount> w{};
    for (int c = 0; c < kLabelCount; ++c) {
        w[c] = counts[c] == 0 ? 0.0 : static_cast<double>(total) / (kLabelCount * static_cast<double>(counts[c]));
    }
    return w;
}

void validate(const AdamConfig& cfg) {
    if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate)) {
        throw ConfigError("adam.learning_rate must be finite and nonnegative");
    }
    if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0)) throw ConfigError("adam.beta1 must lie in [0, 1)");
    if (!(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) throw ConfigError("adam.beta2 must lie in [0, 1)");
    if (!(cfg.epsilon > 0.0)) throw ConfigError("adam.epsilon must be positive");
}

Adam::Adam(AdamConfig cfg) : cfg_(cfg) { validate(cfg_); }

void Adam::set_learning_rate(double lr) {
    AdamConfig next = cfg_;
    next.learning_rate = lr;
    validate(next);
    cfg_ = next;
}

void Adam::step(const ParameterList& params) {
    for (const auto& p : params) {
        if (!p.tensor->has_grad()) throw ContractError("adam: parameter " + p.name + " has no gradient");
        if (!all_finite(p.tensor->grad())) throw NumericError("adam: non-finite gradient in " + p.name);
    }
    if (state_.m.empty()) {
        for (const auto& p : params) {
            state_.m.emplace_back(p.tensor->size(), 0.0);
            state_.v.emplace_back(p.tensor->size(), 0.0);
        }
    }
    if (state_.m.size() != params.size()) throw ContractError("adam: parameter list changed between steps");
    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const double c1 = 1.0 - std::pow(cfg_.beta1, t);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k].tensor;
        auto& m = state_.m[k];
        auto& v = state_.v[k];
        if (m.size() != p.size()) throw ContractError("adam: shape of " + params[k].name + " changed");
        const auto g = p.grad();
        auto x = p.mutable_values();
        for (std::size_t i = 0; i < x.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            x[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
        }
        p.clear_grad();
    }
}

void validate(const LrFinderConfig& cfg) {
    if (!(cfg.min_lr > 0.0) || !(cfg.max_lr > cfg.min_lr) || !std::isfinite(cfg.max_lr)) {
        throw ConfigError("lr_finder requires 0 < min_lr < max_lr");
    }
    if (cfg.num_steps < 10) throw ConfigError("lr_finder.num_steps must be at least 10");
    if (!(cfg.smoothing > 0.0 && cfg.smoothing <= 1.0)) throw ConfigError("lr_finder.smoothing must lie in (0, 1]");
    if (!(cfg.divergence > 1.0)) throw ConfigError("lr_finder.divergence must exceed 1");
}

std::vector<double> lr_schedule(const LrFinderConfig& cfg) {
    validate(cfg);
    std::vector<double> out(cfg.num_steps);
    const double ratio = cfg.max_lr / cfg.min_lr;
    const double last = static_cast<double>(cfg.num_steps - 1);
    for (std::size_t i = 0; i < cfg.num_steps; ++i) out[i] = cfg.min_lr * std::pow(ratio, static_cast<double>(i) / last);
    return out;
}

double suggest_lr(const std::vector<LrPoint>& curve) {
    if (curve.empty()) throw ContractError("cannot suggest a learning rate from an empty curve");
    const std::size_t n = curve.size();
    std::size_t best = n;
    double steepest = 0.0;
    for (std::size_t i = 0; n > 1 && i < n; ++i) {
        const std::size_t lo = i == 0 ? 0 : i - 1;
        const std::size_t hi = i + 1 == n ? i : i + 1;
        const double slope =
            (curve[hi].smoothed - curve[lo].smoothed) / (std::log(curve[hi].lr) - std::log(curve[lo].lr));
        if (slope < steepest) {
            steepest = slope;
            best = i;
        }
    }
    if (best == n) {
        best = static_cast<std::size_t>(
            std::min_element(curve.begin(), curve.end(),
                             [](const LrPoint& a, const LrPoint& b) { return a.smoothed < b.smoothed; }) -
            curve.begin());
    }
    return curve[best].lr / 10.0;
}

void validate(const TrainConfig& cfg) {
    if (cfg.batch_size == 0) throw ConfigError("train.batch_size must be positive");
    validate(cfg.loss);
    validate(cfg.adam);
    validate(cfg.lr_finder);
    if (!(cfg.target_macro_f1 >= 0.0 && cfg.target_macro_f1 <= 1.0)) {
        throw ConfigError("train.target_macro_f1 must lie in [0, 1]");
    }
}

FocalLossConfig resolve_loss(const TrainConfig& cfg, const Dataset& train) {
    FocalLossConfig loss = cfg.loss;
    if (cfg.weighting == ClassWeighting::inverse_frequency) loss.class_weights = inverse_frequency_weights(train);
    return loss;
}

namespace {

struct BatchOutcome {
    double loss = 0.0;
    std::size_t scored = 0;
    std::vector<int> predicted;  // per position, argmax
};

std::size_t count_scored(const std::vector<int>& labels, int ignore) {
    return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [ignore](int l) { return l != ignore; }));
}

// Forward pass over one batch; with `update`, also backward and an Adam step.
BatchOutcome run_batch(FusionModel& model, const SequenceBatch& batch, const FocalLossConfig& loss_cfg, bool training,
                       Rng& rng, Adam* update) {
    Tape tape;
    const Var logits = fuse_forward(tape.constant(batch.features), model, training, rng);
    BatchOutcome out;
    out.predicted = predict_from_logits(logits.value(), kLabelCount).labels;
    out.scored = count_scored(batch.labels, loss_cfg.ignore_index);
    if (out.scored == 0) return out;
    const Var loss = focal_loss(logits, batch.labels, loss_cfg);
    out.loss = loss.value()[0];
    if (!std::isfinite(out.loss)) throw NumericError("loss is not finite");
    if (update != nullptr) {
        tape.backward(loss);
        update->step(model.parameters());
    }
    return out;
}

void require_precomputed(const FusionModel& model) {
    if (model.config().backbone.variant != BackboneVariant::precomputed) {
        throw ConfigError("training runs on precomputed features; set backbone.variant = precomputed");
    }
}

}  // namespace

LrFinderResult lr_range_test(FusionModel& model, const Dataset& data, const std::vector<Window>& windows,
                             const TrainConfig& cfg, Rng& rng) {
    validate(cfg);
    require_precomputed(model);
    const auto& fc = cfg.lr_finder;
    if (windows.empty()) throw DataError("lr finder: no training windows");
    const std::size_t per_pass = (windows.size() + cfg.batch_size - 1) / cfg.batch_size;
    if (per_pass < fc.num_steps && !fc.cycle_data) {
        throw DataError("lr finder needs " + std::to_string(fc.num_steps) + " batches but the data gives " +
                        std::to_string(per_pass));
    }
    const FocalLossConfig loss_cfg = resolve_loss(cfg, data);
    const ParameterList params = model.parameters();
    const ParameterSnapshot saved = snapshot(params);
    const auto schedule = lr_schedule(fc);

    AdamConfig acfg = cfg.adam;
    acfg.learning_rate = schedule[0];
    Adam opt(acfg);
    Rng shuffle_rng = rng.fork(1);
    Rng dropout_rng = rng.fork(2);
    std::vector<std::vector<std::size_t>> order;
    std::size_t cursor = 0;

    LrFinderResult result;
    double avg = 0.0;
    double best = std::numeric_limits<double>::infinity();
    try {
        for (std::size_t i = 0; i < schedule.size(); ++i) {
            if (cursor == order.size()) {
                order = batch_order(windows.size(), cfg.batch_size, shuffle_rng);
                cursor = 0;
            }
            const SequenceBatch batch = assemble_batch(data, windows, order[cursor++]);
            if (count_scored(batch.labels, loss_cfg.ignore_index) == 0) continue;
            opt.set_learning_rate(schedule[i]);
            double loss = 0.0;
            try {
                loss = run_batch(model, batch, loss_cfg, true, dropout_rng, &opt).loss;
            } catch (const NumericError& e) {
                if (result.curve.empty()) throw NumericError(std::string("lr finder: loss not finite at min_lr: ") + e.what());
                result.diverged = true;
                break;
            }
            avg = (1.0 - fc.smoothing) * avg + fc.smoothing * loss;
            const double smoothed = avg / (1.0 - std::pow(1.0 - fc.smoothing, static_cast<double>(result.curve.size() + 1)));
            result.curve.push_back({schedule[i], loss, smoothed});
            if (result.curve.size() > 1 && smoothed > fc.divergence * best) {
                result.diverged = true;
                break;
            }
            best = std::min(best, smoothed);
        }
    } catch (...) {
        restore(params, saved);
        model.zero_grad();
        throw;
    }
    restore(params, saved);
    model.zero_grad();
    if (result.curve.empty()) throw DataError("lr finder: no batch had a scored frame");
    result.suggested_lr = suggest_lr(result.curve);
    return result;
}

EvalResult evaluate(FusionModel& model, const Dataset& data, const std::vector<Window>& windows,
                    const FocalLossConfig& loss, std::size_t batch_size) {
    EvalResult out;
    for (const auto& v : data.videos) out.predictions.emplace_back(v.frames, kIgnoreLabel);
    Rng unused(0);
    double weighted = 0.0;
    std::size_t scored = 0;
    for (const auto& group : sequential_order(windows.size(), batch_size)) {
        const SequenceBatch batch = assemble_batch(data, windows, group);
        const BatchOutcome r = run_batch(model, batch, loss, false, unused, nullptr);
        weighted += r.loss * static_cast<double>(r.scored);
        scored += r.scored;
        std::vector<int> truth;
        std::vector<int> pred;
        for (std::size_t row = 0; row < batch.batch; ++row) {
            const Window& w = windows[batch.windows[row]];
            for (std::size_t t = 0; t < w.real; ++t) {
                const std::size_t at = row * batch.length + t;
                out.predictions[w.video][w.start + t] = r.predicted[at];
                truth.push_back(batch.labels[at]);
                pred.push_back(r.predicted[at]);
            }
        }
        update_confusion(out.confusion, truth, pred, loss.ignore_index);
    }
    out.loss = scored == 0 ? 0.0 : weighted / static_cast<double>(scored);
    out.scores = macro_f1(out.confusion);
    return out;
}

FitResult fit(FusionModel& model, const Dataset& train, const Dataset& val, const TrainConfig& cfg,
              const EpochCallback& on_epoch) {
    validate(cfg);
    require_precomputed(model);
    if (train.empty()) throw DataError("training set is empty");
    if (val.empty()) throw DataError("validation set is empty");
    const auto train_windows = window_sequences(train);
    const auto val_windows = window_sequences(val);
    const FocalLossConfig loss_cfg = resolve_loss(cfg, train);
    const ParameterList params = model.parameters();

    FitResult result;
    result.best_parameters = snapshot(params);
    result.best_val_macro_f1 = 0.0;
    const Rng root(cfg.seed);
    Rng shuffle_rng = root.fork(2);
    Rng dropout_rng = root.fork(3);

    result.learning_rate = cfg.adam.learning_rate;
    if (cfg.auto_lr && cfg.epochs > 0) {
        Rng finder_rng = root.fork(4);
        result.lr_search = lr_range_test(model, train, train_windows, cfg, finder_rng);
        result.learning_rate = result.lr_search->suggested_lr;
    }
    AdamConfig acfg = cfg.adam;
    acfg.learning_rate = result.learning_rate;
    Adam opt(acfg);

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double weighted = 0.0;
        std::size_t scored = 0;
        ConfusionMatrix train_cm;
        const auto order = batch_order(train_windows.size(), cfg.batch_size, shuffle_rng);
        for (std::size_t b = 0; b < order.size(); ++b) {
            const SequenceBatch batch = assemble_batch(train, train_windows, order[b]);
            BatchOutcome r;
            try {
                r = run_batch(model, batch, loss_cfg, true, dropout_rng, &opt);
            } catch (const NumericError& e) {
                throw NumericError("diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1) +
                                   ": " + e.what());
            }
            weighted += r.loss * static_cast<double>(r.scored);
            scored += r.scored;
            update_confusion(train_cm, batch.labels, r.predicted, loss_cfg.ignore_index);
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = scored == 0 ? 0.0 : weighted / static_cast<double>(scored);
        rec.train_macro_f1 = macro_f1(train_cm).macro;
        EvalResult ev;
        try {
            ev = evaluate(model, val, val_windows, loss_cfg, cfg.batch_size);
        } catch (const NumericError& e) {
            throw NumericError("diverged at epoch " + std::to_string(epoch) + ", validation: " + e.what());
        }
        rec.val_loss = ev.loss;
        rec.val_macro_f1 = ev.scores.macro;
        rec.lr = opt.config().learning_rate;
        result.history.push_back(rec);
        if (result.best_epoch == 0 || rec.val_macro_f1 > result.best_val_macro_f1) {
            result.best_epoch = epoch;
            result.best_val_macro_f1 = rec.val_macro_f1;
            result.best_parameters = snapshot(params);
        }
        if (on_epoch) on_epoch(rec);
        if (cfg.target_macro_f1 > 0.0 && rec.val_macro_f1 >= cfg.target_macro_f1) break;
    }
    return result;
}

}  // namespace exprfuse
