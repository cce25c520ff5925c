#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "exprfuse/attention.hpp"

namespace exprfuse {

// Transformer encoder branch. Each layer is post-norm:
//   h   = LN(x + MHSA(x))
//   out = LN(h + FF(h)),  FF(h) = relu(h·W1 + b1)·W2 + b2
struct EncoderConfig {
    std::size_t depth = 1;
    std::size_t num_heads = 2;
    std::size_t head_dim = 64;
    std::size_t ff_dim = 512;
    double dropout = 0.0;
    std::size_t model_dim = 888;
    double layer_norm_eps = 1e-5;
    bool positional_encoding = false;

    // The self-attention sublayer of one encoder layer.
    AttentionConfig attention() const { return {1, num_heads, head_dim, dropout, model_dim, false}; }
};

void validate(const EncoderConfig& cfg);

struct FeedForwardWeights {
    Tensor w1, b1;  // [model × ff], [ff]
    Tensor w2, b2;  // [ff × model], [model]
};

struct EncoderLayerWeights {
    AttentionLayerWeights attention;
    FeedForwardWeights ff;
    Tensor ln1_gain, ln1_bias;
    Tensor ln2_gain, ln2_bias;
};

struct EncoderWeights {
    std::vector<EncoderLayerWeights> layers;
};

EncoderWeights init_encoder(const EncoderConfig& cfg, Rng& rng);
void append_parameters(EncoderWeights& w, const std::string& prefix, ParameterList& out);
void check_weights(const EncoderWeights& w, const EncoderConfig& cfg);

// attention_parameter_count + depth × [2·model·ff + ff + model + 4·model]
std::size_t encoder_parameter_count(const EncoderConfig& cfg);

// Position-wise ReLU network over the last axis.
Var feed_forward(Var x, FeedForwardWeights& w);

Var encoder_forward(Var x, EncoderWeights& w, const EncoderConfig& cfg, bool training, Rng& rng);

}  // namespace exprfuse
