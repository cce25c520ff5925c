#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace exprfuse {

// Expression classes and their integer codes. This is the only place the
// code order is defined.
enum class ExpressionLabel : int {
    Neutral = 0,
    Anger = 1,
    Disgust = 2,
    Fear = 3,
    Happiness = 4,
    Sadness = 5,
    Surprise = 6,
    Other = 7,
};

inline constexpr int kLabelCount = 8;
// Marks padded or unannotated frames. Excluded from loss and metrics.
inline constexpr int kIgnoreLabel = -1;

inline constexpr std::array<std::string_view, kLabelCount> kLabelNames{
    "Neutral", "Anger", "Disgust", "Fear", "Happiness", "Sadness", "Surprise", "Other"};

inline constexpr bool is_class_code(int code) { return code >= 0 && code < kLabelCount; }

inline std::string_view label_name(ExpressionLabel label) { return kLabelNames[static_cast<int>(label)]; }

inline std::optional<ExpressionLabel> parse_label_name(std::string_view name) {
    for (int c = 0; c < kLabelCount; ++c)
        if (kLabelNames[c] == name) return static_cast<ExpressionLabel>(c);
    return std::nullopt;
}

}  // namespace exprfuse
