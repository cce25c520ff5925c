#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "exprfuse/attention.hpp"
#include "exprfuse/encoder.hpp"
#include "exprfuse/keyvalue.hpp"

namespace exprfuse {

inline constexpr std::size_t kFeatureDim = 888;
inline constexpr std::size_t kNumClasses = 8;
inline constexpr std::size_t kImageSize = 112;
inline constexpr std::size_t kImageChannels = 3;

enum class BackboneVariant {
    precomputed,  // features arrive already extracted; identity pass-through
    conv_stub,    // small trainable CNN from 112×112×3 images
};

std::string_view to_string(BackboneVariant v);
BackboneVariant parse_backbone_variant(std::string_view text);

// The conv stub is `conv_channels.size()` stages of 3×3 conv + ReLU + max
// pool, flattened into a dense layer producing `feature_dim` features.
struct BackboneSpec {
    BackboneVariant variant = BackboneVariant::precomputed;
    std::size_t feature_dim = kFeatureDim;
    std::size_t image_size = kImageSize;
    std::size_t image_channels = kImageChannels;
    std::size_t kernel = 3;
    std::vector<std::size_t> conv_channels{8, 16, 16};
    std::vector<std::size_t> pool_sizes{2, 2, 4};

    std::size_t flattened_dim() const;
};

struct FusionHeadConfig {
    double dropout_rate = 0.5;
    std::size_t num_classes = kNumClasses;
};

struct ModelConfig {
    BackboneSpec backbone;
    AttentionConfig attention;
    EncoderConfig encoder;
    FusionHeadConfig head;

    // backbone + attention branch + encoder branch widths
    std::size_t fused_dim() const { return backbone.feature_dim + attention.model_dim + encoder.model_dim; }
    std::size_t feature_dim() const { return backbone.feature_dim; }
};

void validate(const ModelConfig& cfg);

// Stable key=value text form; also the config block of checkpoints.
std::string serialize_model_config(const ModelConfig& cfg);
ModelConfig parse_model_config(std::string_view text);

// Key-level access shared with the run-config file. `apply_model_key`
// returns false when `key` is not a model key.
KeyValues model_config_keys(const ModelConfig& cfg);
bool apply_model_key(ModelConfig& cfg, const std::string& key, const std::string& value);

struct ConvStubWeights {
    std::vector<Tensor> conv_w;
    std::vector<Tensor> conv_b;
    Tensor dense_w;
    Tensor dense_b;
};

std::size_t backbone_parameter_count(const BackboneSpec& spec);
std::size_t classifier_parameter_count(const ModelConfig& cfg);
// backbone + attention + encoder + classifier, from the config alone.
std::size_t model_parameter_count(const ModelConfig& cfg);

class FusionModel {
   public:
    FusionModel(ModelConfig cfg, Rng& rng);
    FusionModel(ModelConfig cfg, std::uint64_t seed);

    FusionModel(const FusionModel&) = delete;
    FusionModel& operator=(const FusionModel&) = delete;
    FusionModel(FusionModel&&) = default;
    FusionModel& operator=(FusionModel&&) = default;

    const ModelConfig& config() const { return cfg_; }

    // Every learnable tensor, in checkpoint order. Pointers stay valid for
    // the model's lifetime.
    ParameterList parameters();
    std::size_t parameter_count();
    void zero_grad();

    ConvStubWeights& backbone() { return backbone_; }
    AttentionWeights& attention() { return attention_; }
    EncoderWeights& encoder() { return encoder_; }
    Tensor& classifier_weight() { return classifier_w_; }
    Tensor& classifier_bias() { return classifier_b_; }

   private:
    void init(Rng& rng);

    ModelConfig cfg_;
    ConvStubWeights backbone_;
    AttentionWeights attention_;
    EncoderWeights encoder_;
    Tensor classifier_w_;  // [fused × classes]
    Tensor classifier_b_;  // [classes]
};

std::size_t model_parameter_count(FusionModel& model);

// Precomputed: `input` is [n×feature_dim] and is returned unchanged.
// Conv stub: `input` is [n×112×112×3] with pixels in [0, 1].
Var backbone_extract(Var input, FusionModel& model);

// Per-position logits for features [s×D] or [B×s×D]:
//   classifier(dropout(concat(features, attention(features), encoder(features))))
// No softmax is applied.
Var fuse_forward(Var features, FusionModel& model, bool training, Rng& rng);

struct Prediction {
    std::vector<int> labels;  // argmax, lowest class index on ties
    Tensor probabilities;     // [positions × classes]
};

// Evaluation-mode forward, softmax, argmax. `features` is [s×D] or [B×s×D];
// outputs are flattened over positions.
Prediction predict(const Tensor& features, FusionModel& model);
Prediction predict_from_logits(std::span<const double> logits, std::size_t classes);

}  // namespace exprfuse
