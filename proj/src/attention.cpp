#include "exprfuse/attention.hpp"

#include <cmath>

#include "exprfuse/errors.hpp"

namespace exprfuse {

namespace {

void expect_shape(const Tensor& t, const Shape& want, const std::string& what) {
    if (t.shape() != want) {
        throw ConfigError(what + " has shape " + to_string(t.shape()) + ", config expects " + to_string(want));
    }
}

// Views x as [B×s×D], remembering whether it was unbatched.
Var as_batched(Var x, bool& unbatched) {
    unbatched = x.shape().size() == 2;
    if (unbatched) return reshape(x, {1, x.shape()[0], x.shape()[1]});
    if (x.shape().size() != 3) throw DimensionError("expected [s×d] or [B×s×d], got " + to_string(x.shape()));
    return x;
}

Var restore_rank(Var x, bool unbatched) {
    if (!unbatched) return x;
    return reshape(x, {x.shape()[1], x.shape()[2]});
}

}  // namespace

void validate(const AttentionConfig& cfg) {
    if (cfg.depth == 0) throw ConfigError("attention.depth must be positive");
    if (cfg.num_heads == 0) throw ConfigError("attention.num_heads must be positive");
    if (cfg.head_dim == 0) throw ConfigError("attention.head_dim must be positive");
    if (cfg.model_dim == 0) throw ConfigError("attention.model_dim must be positive");
    if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) throw ConfigError("attention.dropout must lie in [0, 1)");
}

AttentionLayerWeights init_attention_layer(const AttentionConfig& cfg, Rng& rng) {
    const std::size_t d = cfg.model_dim;
    const std::size_t inner = cfg.inner_dim();
    AttentionLayerWeights w;
    w.wq = glorot_uniform(d, inner, rng);
    w.bq = zeros_parameter({inner});
    w.wk = glorot_uniform(d, inner, rng);
    w.bk = zeros_parameter({inner});
    w.wv = glorot_uniform(d, inner, rng);
    w.bv = zeros_parameter({inner});
    w.wo = glorot_uniform(inner, d, rng);
    w.bo = zeros_parameter({d});
    return w;
}

AttentionWeights init_attention(const AttentionConfig& cfg, Rng& rng) {
    validate(cfg);
    AttentionWeights w;
    for (std::size_t l = 0; l < cfg.depth; ++l) w.layers.push_back(init_attention_layer(cfg, rng));
    return w;
}

void append_parameters(AttentionLayerWeights& w, const std::string& prefix, ParameterList& out) {
    out.push_back({prefix + "wq", &w.wq});
    out.push_back({prefix + "bq", &w.bq});
    out.push_back({prefix + "wk", &w.wk});
    out.push_back({prefix + "bk", &w.bk});
    out.push_back({prefix + "wv", &w.wv});
    out.push_back({prefix + "bv", &w.bv});
    out.push_back({prefix + "wo", &w.wo});
    out.push_back({prefix + "bo", &w.bo});
}

void append_parameters(AttentionWeights& w, const std::string& prefix, ParameterList& out) {
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        append_parameters(w.layers[l], prefix + "layer" + std::to_string(l) + ".", out);
    }
}

void check_weights(const AttentionLayerWeights& l, const AttentionConfig& cfg) {
    const std::size_t d = cfg.model_dim;
    const std::size_t inner = cfg.inner_dim();
    expect_shape(l.wq, {d, inner}, "attention wq");
    expect_shape(l.bq, {inner}, "attention bq");
    expect_shape(l.wk, {d, inner}, "attention wk");
    expect_shape(l.bk, {inner}, "attention bk");
    expect_shape(l.wv, {d, inner}, "attention wv");
    expect_shape(l.bv, {inner}, "attention bv");
    expect_shape(l.wo, {inner, d}, "attention wo");
    expect_shape(l.bo, {d}, "attention bo");
}

void check_weights(const AttentionWeights& w, const AttentionConfig& cfg) {
    validate(cfg);
    if (w.layers.size() != cfg.depth) {
        throw ConfigError("attention weights have " + std::to_string(w.layers.size()) + " layers, config depth is " +
                          std::to_string(cfg.depth));
    }
    for (const auto& l : w.layers) check_weights(l, cfg);
}

std::size_t attention_parameter_count(const AttentionConfig& cfg) {
    const std::size_t d = cfg.model_dim;
    const std::size_t inner = cfg.inner_dim();
    return cfg.depth * (3 * (d * inner + inner) + (inner * d + d));
}

AttentionResult scaled_dot_product(Var q, Var k, Var v) {
    const Shape& qs = q.shape();
    const Shape& ks = k.shape();
    const Shape& vs = v.shape();
    if (qs.size() != ks.size() || qs.size() != vs.size() || (qs.size() != 2 && qs.size() != 3)) {
        throw DimensionError("scaled_dot_product: ranks of " + to_string(qs) + ", " + to_string(ks) + ", " +
                             to_string(vs) + " disagree");
    }
    const std::size_t r = qs.size();
    if (qs.back() == 0 || qs.back() != ks.back()) {
        throw DimensionError("scaled_dot_product: query " + to_string(qs) + " and key " + to_string(ks) +
                             " need the same nonzero width");
    }
    if (ks[r - 2] != vs[r - 2] || qs[r - 2] != ks[r - 2] || (r == 3 && (qs[0] != ks[0] || ks[0] != vs[0]))) {
        throw DimensionError("scaled_dot_product: sequence lengths of " + to_string(qs) + ", " + to_string(ks) + ", " +
                             to_string(vs) + " disagree");
    }
    bool unbatched = false;
    Var qb = as_batched(q, unbatched);
    Var kb = as_batched(k, unbatched);
    Var vb = as_batched(v, unbatched);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(qs.back()));
    Var logits = scale(batched_matmul(qb, kb, true), inv_sqrt_d);
    Var weights = softmax(logits, -1);
    Var out = batched_matmul(weights, vb);
    return {restore_rank(out, unbatched), restore_rank(weights, unbatched)};
}

Var multi_head_self_attention(Var x, AttentionLayerWeights& w, const AttentionConfig& cfg, bool training, Rng& rng,
                              std::vector<Var>* attention_weights) {
    if (x.shape().empty() || x.shape().back() != cfg.model_dim) {
        throw ConfigError("attention input " + to_string(x.shape()) + " does not end in model_dim " +
                          std::to_string(cfg.model_dim));
    }
    check_weights(w, cfg);
    Tape& tape = x.tape();
    const Var q = linear(x, tape.bind(w.wq), tape.bind(w.bq));
    const Var k = linear(x, tape.bind(w.wk), tape.bind(w.bk));
    const Var v = linear(x, tape.bind(w.wv), tape.bind(w.bv));

    std::vector<Var> heads;
    heads.reserve(cfg.num_heads);
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
        const std::size_t offset = h * cfg.head_dim;
        const Var qh = slice_last(q, offset, cfg.head_dim);
        const Var kh = slice_last(k, offset, cfg.head_dim);
        const Var vh = slice_last(v, offset, cfg.head_dim);
        auto [out, weights] = scaled_dot_product(qh, kh, vh);
        if (attention_weights) attention_weights->push_back(weights);
        if (training && cfg.dropout > 0.0) {
            // Dropout on the attention distribution, then re-apply to values.
            const Var dropped = dropout(weights, cfg.dropout, training, rng);
            bool unbatched = false;
            Var vb = as_batched(vh, unbatched);
            Var wb = as_batched(dropped, unbatched);
            out = restore_rank(batched_matmul(wb, vb), unbatched);
        }
        heads.push_back(out);
    }
    const Var merged = heads.size() == 1 ? heads[0] : concat_last(heads);
    return linear(merged, tape.bind(w.wo), tape.bind(w.bo));
}

Var attention_branch(Var x, AttentionWeights& w, const AttentionConfig& cfg, bool training, Rng& rng) {
    check_weights(w, cfg);
    Var h = cfg.positional_encoding ? add_positional_encoding(x) : x;
    for (auto& layer : w.layers) h = multi_head_self_attention(h, layer, cfg, training, rng);
    return h;
}

Tensor sinusoidal_encoding(std::size_t seq_len, std::size_t dim) {
    Tensor pe({seq_len, dim});
    auto v = pe.mutable_values();
    for (std::size_t pos = 0; pos < seq_len; ++pos) {
        for (std::size_t i = 0; i < dim; ++i) {
            const double exponent = static_cast<double>(i - i % 2) / static_cast<double>(dim);
            const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
            v[pos * dim + i] = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

Var add_positional_encoding(Var x) {
    const Shape& s = x.shape();
    if (s.size() != 2 && s.size() != 3) throw DimensionError("positional encoding needs [s×D] or [B×s×D]");
    const std::size_t seq = s[s.size() - 2];
    const std::size_t dim = s.back();
    const Tensor table = sinusoidal_encoding(seq, dim);
    const std::size_t copies = x.size() / table.size();
    std::vector<double> tiled;
    tiled.reserve(x.size());
    for (std::size_t c = 0; c < copies; ++c) tiled.insert(tiled.end(), table.values().begin(), table.values().end());
    return add(x, x.tape().constant(s, std::move(tiled)));
}

}  // namespace exprfuse
