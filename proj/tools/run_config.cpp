#include "run_config.hpp"

#include "exprfuse/errors.hpp"
#include "exprfuse/io.hpp"

namespace exprfuse::cli {

namespace {

std::string weights_text(const std::array<double, kLabelCount>& w) {
    return format_double_list(std::vector<double>(w.begin(), w.end()));
}

std::array<double, kLabelCount> parse_weights(const std::string& key, const std::string& value) {
    const auto list = parse_double_list(key, value);
    if (list.size() != kLabelCount) {
        throw ConfigError("key " + key + ": expected " + std::to_string(kLabelCount) + " values, got " +
                          std::to_string(list.size()));
    }
    std::array<double, kLabelCount> out{};
    std::copy(list.begin(), list.end(), out.begin());
    return out;
}

}  // namespace

KeyValues run_config_keys(const RunConfig& cfg) {
    KeyValues kv = model_config_keys(cfg.model);
    const auto& t = cfg.train;
    kv["train.batch_size"] = std::to_string(t.batch_size);
    kv["train.epochs"] = std::to_string(t.epochs);
    kv["train.seed"] = std::to_string(t.seed);
    kv["train.class_weighting"] = std::string(to_string(t.weighting));
    kv["train.auto_lr"] = t.auto_lr ? "true" : "false";
    kv["train.target_macro_f1"] = format_double(t.target_macro_f1);
    kv["loss.gamma"] = format_double(t.loss.gamma);
    kv["loss.class_weights"] = weights_text(t.loss.class_weights);
    kv["loss.ignore_index"] = std::to_string(t.loss.ignore_index);
    kv["adam.learning_rate"] = format_double(t.adam.learning_rate);
    kv["adam.beta1"] = format_double(t.adam.beta1);
    kv["adam.beta2"] = format_double(t.adam.beta2);
    kv["adam.epsilon"] = format_double(t.adam.epsilon);
    kv["lr_finder.min_lr"] = format_double(t.lr_finder.min_lr);
    kv["lr_finder.max_lr"] = format_double(t.lr_finder.max_lr);
    kv["lr_finder.num_steps"] = std::to_string(t.lr_finder.num_steps);
    kv["lr_finder.smoothing"] = format_double(t.lr_finder.smoothing);
    kv["lr_finder.divergence"] = format_double(t.lr_finder.divergence);
    kv["lr_finder.cycle_data"] = t.lr_finder.cycle_data ? "true" : "false";
    kv["data.train_manifest"] = cfg.train_manifest;
    kv["data.val_manifest"] = cfg.val_manifest;
    kv["output.dir"] = cfg.out_dir;
    const auto& f = cfg.fixture;
    kv["fixture.videos"] = std::to_string(f.videos);
    kv["fixture.val_videos"] = std::to_string(cfg.fixture_val_videos);
    kv["fixture.frames_per_video"] = std::to_string(f.frames_per_video);
    kv["fixture.class_distribution"] = weights_text(f.class_distribution);
    kv["fixture.noise"] = format_double(f.noise);
    kv["fixture.feature_dim"] = std::to_string(f.feature_dim);
    kv["fixture.min_segment"] = std::to_string(f.min_segment);
    kv["fixture.max_segment"] = std::to_string(f.max_segment);
    kv["fixture.seed"] = std::to_string(f.seed);
    return kv;
}

void apply_run_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (apply_model_key(cfg.model, key, value)) return;
    auto& t = cfg.train;
    auto& f = cfg.fixture;
    if (key == "train.batch_size") t.batch_size = parse_size(key, value);
    else if (key == "train.epochs") t.epochs = parse_size(key, value);
    else if (key == "train.seed") t.seed = parse_u64(key, value);
    else if (key == "train.class_weighting") t.weighting = parse_class_weighting(value);
    else if (key == "train.auto_lr") t.auto_lr = parse_bool(key, value);
    else if (key == "train.target_macro_f1") t.target_macro_f1 = parse_double(key, value);
    else if (key == "loss.gamma") t.loss.gamma = parse_double(key, value);
    else if (key == "loss.class_weights") t.loss.class_weights = parse_weights(key, value);
    else if (key == "loss.ignore_index") t.loss.ignore_index = static_cast<int>(parse_int(key, value));
    else if (key == "adam.learning_rate") t.adam.learning_rate = parse_double(key, value);
    else if (key == "adam.beta1") t.adam.beta1 = parse_double(key, value);
    else if (key == "adam.beta2") t.adam.beta2 = parse_double(key, value);
    else if (key == "adam.epsilon") t.adam.epsilon = parse_double(key, value);
    else if (key == "lr_finder.min_lr") t.lr_finder.min_lr = parse_double(key, value);
    else if (key == "lr_finder.max_lr") t.lr_finder.max_lr = parse_double(key, value);
    else if (key == "lr_finder.num_steps") t.lr_finder.num_steps = parse_size(key, value);
    else if (key == "lr_finder.smoothing") t.lr_finder.smoothing = parse_double(key, value);
    else if (key == "lr_finder.divergence") t.lr_finder.divergence = parse_double(key, value);
    else if (key == "lr_finder.cycle_data") t.lr_finder.cycle_data = parse_bool(key, value);
    else if (key == "data.train_manifest") cfg.train_manifest = value;
    else if (key == "data.val_manifest") cfg.val_manifest = value;
    else if (key == "output.dir") cfg.out_dir = value;
    else if (key == "fixture.videos") f.videos = parse_size(key, value);
    else if (key == "fixture.val_videos") cfg.fixture_val_videos = parse_size(key, value);
    else if (key == "fixture.frames_per_video") f.frames_per_video = parse_size(key, value);
    else if (key == "fixture.class_distribution") f.class_distribution = parse_weights(key, value);
    else if (key == "fixture.noise") f.noise = parse_double(key, value);
    else if (key == "fixture.feature_dim") f.feature_dim = parse_size(key, value);
    else if (key == "fixture.min_segment") f.min_segment = parse_size(key, value);
    else if (key == "fixture.max_segment") f.max_segment = parse_size(key, value);
    else if (key == "fixture.seed") f.seed = parse_u64(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
}

std::string serialize_run_config(const RunConfig& cfg) { return format_key_values(run_config_keys(cfg)); }

void validate(const RunConfig& cfg) {
    exprfuse::validate(cfg.model);
    exprfuse::validate(cfg.train);
    exprfuse::validate(cfg.fixture);
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides) {
    RunConfig cfg;
    if (file) {
        std::string text;
        try {
            text = read_file_text(*file);
        } catch (const DataError&) {
            throw ConfigError("cannot read config file " + file->string());
        }
        for (const auto& [k, v] : parse_key_values(text, file->string())) apply_run_key(cfg, k, v);
    }
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
        const std::string key = trim(std::string_view(o).substr(0, eq));
        if (key.empty()) throw ConfigError("override '" + o + "' has an empty key");
        apply_run_key(cfg, key, trim(std::string_view(o).substr(eq + 1)));
    }
    validate(cfg);
    return cfg;
}

}  // namespace exprfuse::cli
