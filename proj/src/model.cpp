#include "exprfuse/model.hpp"

#include <algorithm>

#include "exprfuse/errors.hpp"
#include "exprfuse/kernels.hpp"

namespace exprfuse {

std::string_view to_string(BackboneVariant v) {
    switch (v) {
        case BackboneVariant::precomputed:
            return "precomputed";
        case BackboneVariant::conv_stub:
            return "conv_stub";
    }
    return "unknown";
}

BackboneVariant parse_backbone_variant(std::string_view text) {
    if (text == "precomputed") return BackboneVariant::precomputed;
    if (text == "conv_stub") return BackboneVariant::conv_stub;
    throw ConfigError("unknown backbone variant '" + std::string(text) + "'");
}

std::size_t BackboneSpec::flattened_dim() const {
    std::size_t side = image_size;
    for (std::size_t p : pool_sizes) side /= p;
    const std::size_t channels = conv_channels.empty() ? image_channels : conv_channels.back();
    return side * side * channels;
}

void validate(const ModelConfig& cfg) {
    const auto& b = cfg.backbone;
    if (b.feature_dim == 0) throw ConfigError("backbone.feature_dim must be positive");
    if (b.variant == BackboneVariant::conv_stub) {
        if (b.conv_channels.empty() || b.conv_channels.size() != b.pool_sizes.size()) {
            throw ConfigError("backbone.conv_channels and backbone.pool_sizes must be nonempty and equally long");
        }
        if (b.kernel % 2 == 0) throw ConfigError("backbone.kernel must be odd");
        std::size_t side = b.image_size;
        for (std::size_t p : b.pool_sizes) {
            if (p == 0 || side % p != 0) throw ConfigError("backbone.pool_sizes do not tile the image size");
            side /= p;
        }
        for (std::size_t c : b.conv_channels) {
            if (c == 0) throw ConfigError("backbone.conv_channels must be positive");
        }
    }
    validate(cfg.attention);
    validate(cfg.encoder);
    if (cfg.attention.model_dim != b.feature_dim || cfg.encoder.model_dim != b.feature_dim) {
        throw ConfigError("attention and encoder model_dim must equal the backbone feature width " +
                          std::to_string(b.feature_dim));
    }
    if (cfg.head.num_classes != kNumClasses) {
        throw ConfigError("head.num_classes is fixed at " + std::to_string(kNumClasses));
    }
    if (!(cfg.head.dropout_rate >= 0.0 && cfg.head.dropout_rate < 1.0)) {
        throw ConfigError("head.dropout must lie in [0, 1)");
    }
}

KeyValues model_config_keys(const ModelConfig& cfg) {
    const auto& b = cfg.backbone;
    const auto& a = cfg.attention;
    const auto& e = cfg.encoder;
    return {
        {"backbone.variant", std::string(to_string(b.variant))},
        {"backbone.feature_dim", std::to_string(b.feature_dim)},
        {"backbone.image_size", std::to_string(b.image_size)},
        {"backbone.image_channels", std::to_string(b.image_channels)},
        {"backbone.kernel", std::to_string(b.kernel)},
        {"backbone.conv_channels", format_size_list(b.conv_channels)},
        {"backbone.pool_sizes", format_size_list(b.pool_sizes)},
        {"attention.depth", std::to_string(a.depth)},
        {"attention.num_heads", std::to_string(a.num_heads)},
        {"attention.head_dim", std::to_string(a.head_dim)},
        {"attention.dropout", format_double(a.dropout)},
        {"attention.model_dim", std::to_string(a.model_dim)},
        {"attention.positional_encoding", a.positional_encoding ? "true" : "false"},
        {"encoder.depth", std::to_string(e.depth)},
        {"encoder.num_heads", std::to_string(e.num_heads)},
        {"encoder.head_dim", std::to_string(e.head_dim)},
        {"encoder.ff_dim", std::to_string(e.ff_dim)},
        {"encoder.dropout", format_double(e.dropout)},
        {"encoder.model_dim", std::to_string(e.model_dim)},
        {"encoder.layer_norm_eps", format_double(e.layer_norm_eps)},
        {"encoder.positional_encoding", e.positional_encoding ? "true" : "false"},
        {"head.dropout", format_double(cfg.head.dropout_rate)},
        {"head.num_classes", std::to_string(cfg.head.num_classes)},
    };
}

bool apply_model_key(ModelConfig& cfg, const std::string& key, const std::string& value) {
    auto& b = cfg.backbone;
    auto& a = cfg.attention;
    auto& e = cfg.encoder;
    if (key == "backbone.variant") b.variant = parse_backbone_variant(value);
    else if (key == "backbone.feature_dim") b.feature_dim = parse_size(key, value);
    else if (key == "backbone.image_size") b.image_size = parse_size(key, value);
    else if (key == "backbone.image_channels") b.image_channels = parse_size(key, value);
    else if (key == "backbone.kernel") b.kernel = parse_size(key, value);
    else if (key == "backbone.conv_channels") b.conv_channels = parse_size_list(key, value);
    else if (key == "backbone.pool_sizes") b.pool_sizes = parse_size_list(key, value);
    else if (key == "attention.depth") a.depth = parse_size(key, value);
    else if (key == "attention.num_heads") a.num_heads = parse_size(key, value);
    else if (key == "attention.head_dim") a.head_dim = parse_size(key, value);
    else if (key == "attention.dropout") a.dropout = parse_double(key, value);
    else if (key == "attention.model_dim") a.model_dim = parse_size(key, value);
    else if (key == "attention.positional_encoding") a.positional_encoding = parse_bool(key, value);
    else if (key == "encoder.depth") e.depth = parse_size(key, value);
    else if (key == "encoder.num_heads") e.num_heads = parse_size(key, value);
    else if (key == "encoder.head_dim") e.head_dim = parse_size(key, value);
    else if (key == "encoder.ff_dim") e.ff_dim = parse_size(key, value);
    else if (key == "encoder.dropout") e.dropout = parse_double(key, value);
    else if (key == "encoder.model_dim") e.model_dim = parse_size(key, value);
    else if (key == "encoder.layer_norm_eps") e.layer_norm_eps = parse_double(key, value);
    else if (key == "encoder.positional_encoding") e.positional_encoding = parse_bool(key, value);
    else if (key == "head.dropout") cfg.head.dropout_rate = parse_double(key, value);
    else if (key == "head.num_classes") cfg.head.num_classes = parse_size(key, value);
    else return false;
    return true;
}

std::string serialize_model_config(const ModelConfig& cfg) { return format_key_values(model_config_keys(cfg)); }

ModelConfig parse_model_config(std::string_view text) {
    ModelConfig cfg;
    for (const auto& [k, v] : parse_key_values(text, "model config")) {
        if (!apply_model_key(cfg, k, v)) throw ConfigError("unknown model config key " + k);
    }
    validate(cfg);
    return cfg;
}

std::size_t backbone_parameter_count(const BackboneSpec& spec) {
    if (spec.variant == BackboneVariant::precomputed) return 0;
    std::size_t total = 0;
    std::size_t in = spec.image_channels;
    for (std::size_t out : spec.conv_channels) {
        total += spec.kernel * spec.kernel * in * out + out;
        in = out;
    }
    return total + spec.flattened_dim() * spec.feature_dim + spec.feature_dim;
}

std::size_t classifier_parameter_count(const ModelConfig& cfg) {
    return cfg.fused_dim() * cfg.head.num_classes + cfg.head.num_classes;
}

std::size_t model_parameter_count(const ModelConfig& cfg) {
    return backbone_parameter_count(cfg.backbone) + attention_parameter_count(cfg.attention) +
           encoder_parameter_count(cfg.encoder) + classifier_parameter_count(cfg);
}

FusionModel::FusionModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    Rng rng(seed);
    init(rng);
}

FusionModel::FusionModel(ModelConfig cfg, Rng& rng) : cfg_(std::move(cfg)) { init(rng); }

void FusionModel::init(Rng& rng) {
    validate(cfg_);
    const auto& b = cfg_.backbone;
    if (b.variant == BackboneVariant::conv_stub) {
        std::size_t in = b.image_channels;
        for (std::size_t out : b.conv_channels) {
            backbone_.conv_w.push_back(glorot_uniform(b.kernel * b.kernel * in, out, rng));
            backbone_.conv_b.push_back(zeros_parameter({out}));
            in = out;
        }
        backbone_.dense_w = glorot_uniform(b.flattened_dim(), b.feature_dim, rng);
        backbone_.dense_b = zeros_parameter({b.feature_dim});
    }
    attention_ = init_attention(cfg_.attention, rng);
    encoder_ = init_encoder(cfg_.encoder, rng);
    classifier_w_ = glorot_uniform(cfg_.fused_dim(), cfg_.head.num_classes, rng);
    classifier_b_ = zeros_parameter({cfg_.head.num_classes});
}

ParameterList FusionModel::parameters() {
    ParameterList out;
    for (std::size_t i = 0; i < backbone_.conv_w.size(); ++i) {
        out.push_back({"backbone.conv" + std::to_string(i) + ".w", &backbone_.conv_w[i]});
        out.push_back({"backbone.conv" + std::to_string(i) + ".b", &backbone_.conv_b[i]});
    }
    if (cfg_.backbone.variant == BackboneVariant::conv_stub) {
        out.push_back({"backbone.dense.w", &backbone_.dense_w});
        out.push_back({"backbone.dense.b", &backbone_.dense_b});
    }
    append_parameters(attention_, "attention.", out);
    append_parameters(encoder_, "encoder.", out);
    out.push_back({"classifier.w", &classifier_w_});
    out.push_back({"classifier.b", &classifier_b_});
    return out;
}

std::size_t FusionModel::parameter_count() { return count_parameters(parameters()); }

void FusionModel::zero_grad() {
    for (auto& p : parameters()) p.tensor->clear_grad();
}

std::size_t model_parameter_count(FusionModel& model) { return model.parameter_count(); }

Var backbone_extract(Var input, FusionModel& model) {
    const auto& spec = model.config().backbone;
    const Shape& s = input.shape();
    if (spec.variant == BackboneVariant::precomputed) {
        if (s.size() != 2) {
            throw ConfigError("precomputed backbone expects an [n×" + std::to_string(spec.feature_dim) +
                              "] feature batch, got " + to_string(s));
        }
        if (s[1] != spec.feature_dim) {
            throw InputError("feature width " + std::to_string(s[1]) + " != " + std::to_string(spec.feature_dim));
        }
        return input;
    }
    if (s.size() != 4) throw ConfigError("conv_stub backbone expects an image batch, got " + to_string(s));
    if (s[1] != spec.image_size || s[2] != spec.image_size || s[3] != spec.image_channels) {
        throw InputError("images must be " + std::to_string(spec.image_size) + "x" + std::to_string(spec.image_size) +
                         "x" + std::to_string(spec.image_channels) + ", got " + to_string(s));
    }
    for (double px : input.value()) {
        if (!(px >= 0.0 && px <= 1.0)) throw InputError("pixel values must be normalized to [0, 1]");
    }
    Tape& t = input.tape();
    auto& w = model.backbone();
    Var h = input;
    for (std::size_t i = 0; i < w.conv_w.size(); ++i) {
        h = max_pool(relu(conv2d_same(h, t.bind(w.conv_w[i]), t.bind(w.conv_b[i]), spec.kernel)), spec.pool_sizes[i]);
    }
    h = reshape(h, {s[0], spec.flattened_dim()});
    return linear(h, t.bind(w.dense_w), t.bind(w.dense_b));
}

Var fuse_forward(Var features, FusionModel& model, bool training, Rng& rng) {
    const auto& cfg = model.config();
    const Shape& s = features.shape();
    if ((s.size() != 2 && s.size() != 3) || s.back() != cfg.feature_dim()) {
        throw InputError("features must be [s×" + std::to_string(cfg.feature_dim()) + "] or [B×s×" +
                         std::to_string(cfg.feature_dim()) + "], got " + to_string(s));
    }
    if (!all_finite(features.value())) throw InputError("features contain NaN or Inf");
    Tape& t = features.tape();
    const Var attn = attention_branch(features, model.attention(), cfg.attention, training, rng);
    const Var enc = encoder_forward(features, model.encoder(), cfg.encoder, training, rng);
    const std::vector<Var> parts{features, attn, enc};
    const Var fused = dropout(concat_last(parts), cfg.head.dropout_rate, training, rng);
    return linear(fused, t.bind(model.classifier_weight()), t.bind(model.classifier_bias()));
}

Prediction predict_from_logits(std::span<const double> logits, std::size_t classes) {
    const std::size_t rows = logits.size() / classes;
    Prediction out;
    out.probabilities = Tensor({rows, classes});
    auto probs = out.probabilities.mutable_values();
    kernels::softmax_rows(rows, classes, logits, probs);
    out.labels.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = logits.data() + r * classes;
        // max_element returns the first maximum, so ties go to the lowest class.
        out.labels[r] = static_cast<int>(std::max_element(row, row + classes) - row);
    }
    return out;
}

Prediction predict(const Tensor& features, FusionModel& model) {
    Tape tape;
    Rng unused(0);
    const Var logits = fuse_forward(tape.constant(features), model, false, unused);
    return predict_from_logits(logits.value(), model.config().head.num_classes);
}

}  // namespace exprfuse
