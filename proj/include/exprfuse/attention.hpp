#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "exprfuse/ops.hpp"
#include "exprfuse/parameters.hpp"

namespace exprfuse {

// Multi-head self-attention branch. Defaults reproduce the reference
// architecture: one layer, two heads of width 64, no dropout, over 888-dim
// backbone features.
struct AttentionConfig {
    std::size_t depth = 1;
    std::size_t num_heads = 2;
    std::size_t head_dim = 64;
    double dropout = 0.0;
    std::size_t model_dim = 888;
    // Adds sinusoidal position encodings to the branch input. Off by default,
    // which keeps the branch permutation-equivariant over positions.
    bool positional_encoding = false;

    std::size_t inner_dim() const { return num_heads * head_dim; }
};

void validate(const AttentionConfig& cfg);

// Projections of one attention layer. Weight matrices are stored input-major
// ([in × out]) so that projecting is x·W + b.
struct AttentionLayerWeights {
    Tensor wq, bq;
    Tensor wk, bk;
    Tensor wv, bv;
    Tensor wo, bo;
};

struct AttentionWeights {
    std::vector<AttentionLayerWeights> layers;
};

// Glorot-uniform projections, zero biases.
AttentionLayerWeights init_attention_layer(const AttentionConfig& cfg, Rng& rng);
AttentionWeights init_attention(const AttentionConfig& cfg, Rng& rng);

void append_parameters(AttentionLayerWeights& w, const std::string& prefix, ParameterList& out);
void append_parameters(AttentionWeights& w, const std::string& prefix, ParameterList& out);

// Throws ConfigError when any weight shape disagrees with `cfg`.
void check_weights(const AttentionLayerWeights& w, const AttentionConfig& cfg);
void check_weights(const AttentionWeights& w, const AttentionConfig& cfg);

// depth × [3·(model·inner + inner) + (inner·model + model)]
std::size_t attention_parameter_count(const AttentionConfig& cfg);

struct AttentionResult {
    Var output;   // [s×dv] or [B×s×dv]
    Var weights;  // [s×s] or [B×s×s]
};

// softmax(q·kᵀ/√d)·v with the softmax taken over key positions. Accepts
// unbatched [s×d] operands or batched [B×s×d] ones.
AttentionResult scaled_dot_product(Var q, Var k, Var v);

// One attention layer: per-head projections, independent scaled dot-product
// attention per head, head concatenation, output projection.
// `attention_weights`, when non-null, receives each head's weight matrix.
Var multi_head_self_attention(Var x, AttentionLayerWeights& w, const AttentionConfig& cfg, bool training, Rng& rng,
                              std::vector<Var>* attention_weights = nullptr);

// The full branch: `depth` attention layers applied in sequence.
// Input and output are [s×model_dim] or [B×s×model_dim].
Var attention_branch(Var x, AttentionWeights& w, const AttentionConfig& cfg, bool training, Rng& rng);

// [s×dim] table of sin/cos position encodings.
Tensor sinusoidal_encoding(std::size_t seq_len, std::size_t dim);
// Adds the sinusoidal table to every sequence of x ([s×D] or [B×s×D]).
Var add_positional_encoding(Var x);

}  // namespace exprfuse
