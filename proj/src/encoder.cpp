#include "exprfuse/encoder.hpp"

#include "exprfuse/errors.hpp"

namespace exprfuse {

void validate(const EncoderConfig& cfg) {
    if (cfg.depth == 0) throw ConfigError("encoder.depth must be positive");
    if (cfg.ff_dim == 0) throw ConfigError("encoder.ff_dim must be positive");
    if (!(cfg.layer_norm_eps > 0.0)) throw ConfigError("encoder layer-norm epsilon must be positive");
    try {
        validate(cfg.attention());
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("encoder: ") + e.what());
    }
}

EncoderWeights init_encoder(const EncoderConfig& cfg, Rng& rng) {
    validate(cfg);
    const std::size_t d = cfg.model_dim;
    EncoderWeights w;
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        EncoderLayerWeights layer;
        layer.attention = init_attention_layer(cfg.attention(), rng);
        layer.ff.w1 = glorot_uniform(d, cfg.ff_dim, rng);
        layer.ff.b1 = zeros_parameter({cfg.ff_dim});
        layer.ff.w2 = glorot_uniform(cfg.ff_dim, d, rng);
        layer.ff.b2 = zeros_parameter({d});
        layer.ln1_gain = ones_parameter({d});
        layer.ln1_bias = zeros_parameter({d});
        layer.ln2_gain = ones_parameter({d});
        layer.ln2_bias = zeros_parameter({d});
        w.layers.push_back(std::move(layer));
    }
    return w;
}

void append_parameters(EncoderWeights& w, const std::string& prefix, ParameterList& out) {
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        auto& layer = w.layers[l];
        const std::string p = prefix + "layer" + std::to_string(l) + ".";
        append_parameters(layer.attention, p + "attn.", out);
        out.push_back({p + "ff.w1", &layer.ff.w1});
        out.push_back({p + "ff.b1", &layer.ff.b1});
        out.push_back({p + "ff.w2", &layer.ff.w2});
        out.push_back({p + "ff.b2", &layer.ff.b2});
        out.push_back({p + "ln1.gain", &layer.ln1_gain});
        out.push_back({p + "ln1.bias", &layer.ln1_bias});
        out.push_back({p + "ln2.gain", &layer.ln2_gain});
        out.push_back({p + "ln2.bias", &layer.ln2_bias});
    }
}

void check_weights(const EncoderWeights& w, const EncoderConfig& cfg) {
    validate(cfg);
    if (w.layers.size() != cfg.depth) {
        throw ConfigError("encoder weights have " + std::to_string(w.layers.size()) + " layers, config depth is " +
                          std::to_string(cfg.depth));
    }
    const std::size_t d = cfg.model_dim;
    for (const auto& layer : w.layers) {
        check_weights(layer.attention, cfg.attention());
        const auto expect = [](const Tensor& t, const Shape& s, const char* what) {
            if (t.shape() != s) {
                throw ConfigError(std::string("encoder ") + what + " has shape " + to_string(t.shape()) +
                                  ", config expects " + to_string(s));
            }
        };
        expect(layer.ff.w1, {d, cfg.ff_dim}, "ff.w1");
        expect(layer.ff.b1, {cfg.ff_dim}, "ff.b1");
        expect(layer.ff.w2, {cfg.ff_dim, d}, "ff.w2");
        expect(layer.ff.b2, {d}, "ff.b2");
        expect(layer.ln1_gain, {d}, "ln1.gain");
        expect(layer.ln1_bias, {d}, "ln1.bias");
        expect(layer.ln2_gain, {d}, "ln2.gain");
        expect(layer.ln2_bias, {d}, "ln2.bias");
    }
}

std::size_t encoder_parameter_count(const EncoderConfig& cfg) {
    const std::size_t d = cfg.model_dim;
    AttentionConfig attn = cfg.attention();
    attn.depth = cfg.depth;
    return attention_parameter_count(attn) + cfg.depth * (d * cfg.ff_dim + cfg.ff_dim + cfg.ff_dim * d + d + 2 * (2 * d));
}

Var feed_forward(Var x, FeedForwardWeights& w) {
    Tape& t = x.tape();
    return linear(relu(linear(x, t.bind(w.w1), t.bind(w.b1))), t.bind(w.w2), t.bind(w.b2));
}

Var encoder_forward(Var x, EncoderWeights& w, const EncoderConfig& cfg, bool training, Rng& rng) {
    check_weights(w, cfg);
    if (x.shape().empty() || x.shape().back() != cfg.model_dim) {
        throw ConfigError("encoder input " + to_string(x.shape()) + " does not end in model_dim " +
                          std::to_string(cfg.model_dim));
    }
    Tape& t = x.tape();
    const AttentionConfig attn = cfg.attention();
    Var h = cfg.positional_encoding ? add_positional_encoding(x) : x;
    for (auto& layer : w.layers) {
        Var a = dropout(multi_head_self_attention(h, layer.attention, attn, training, rng), cfg.dropout, training, rng);
        Var mid = layer_norm(add(h, a), t.bind(layer.ln1_gain), t.bind(layer.ln1_bias), cfg.layer_norm_eps);
        Var f = dropout(feed_forward(mid, layer.ff), cfg.dropout, training, rng);
        h = layer_norm(add(mid, f), t.bind(layer.ln2_gain), t.bind(layer.ln2_bias), cfg.layer_norm_eps);
    }
    return h;
}

}  // namespace exprfuse
