#pragma once

// Scalar-loop forward passes of the attention and encoder layers, built only
// from the reference_math helpers.

#include <cmath>

#include "exprfuse/encoder.hpp"
#include "support/reference_math.hpp"

namespace exprfuse::testing::ref {

inline Matrix reference_attention(const Matrix& x, const AttentionLayerWeights& w, const AttentionConfig& cfg) {
    const std::size_t d = cfg.model_dim;
    const std::size_t inner = cfg.inner_dim();
    const auto q = affine(x, from_flat(w.wq.values(), d, inner), w.bq.values());
    const auto k = affine(x, from_flat(w.wk.values(), d, inner), w.bk.values());
    const auto v = affine(x, from_flat(w.wv.values(), d, inner), w.bv.values());
    Matrix heads;
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
        const auto qh = columns(q, h * cfg.head_dim, cfg.head_dim);
        const auto kh = columns(k, h * cfg.head_dim, cfg.head_dim);
        const auto vh = columns(v, h * cfg.head_dim, cfg.head_dim);
        auto logits = matmul(qh, transpose(kh));
        for (auto& row : logits) {
            for (double& l : row) l /= std::sqrt(static_cast<double>(cfg.head_dim));
            row = softmax(row);
        }
        const auto out = matmul(logits, vh);
        if (heads.empty()) heads = out;
        else
            for (std::size_t i = 0; i < out.size(); ++i) heads[i].insert(heads[i].end(), out[i].begin(), out[i].end());
    }
    return affine(heads, from_flat(w.wo.values(), inner, d), w.bo.values());
}

inline Matrix reference_layer(const Matrix& x, const EncoderLayerWeights& w, const EncoderConfig& cfg) {
    const std::size_t d = cfg.model_dim;
    const auto h = layer_norm(add(x, reference_attention(x, w.attention, cfg.attention())),
                                   w.ln1_gain.values(), w.ln1_bias.values(), cfg.layer_norm_eps);
    const auto hidden = relu(affine(h, from_flat(w.ff.w1.values(), d, cfg.ff_dim), w.ff.b1.values()));
    const auto ff = affine(hidden, from_flat(w.ff.w2.values(), cfg.ff_dim, d), w.ff.b2.values());
    return layer_norm(add(h, ff), w.ln2_gain.values(), w.ln2_bias.values(), cfg.layer_norm_eps);
}

}  // namespace exprfuse::testing::ref
