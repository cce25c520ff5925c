#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "exprfuse/labels.hpp"

namespace exprfuse {

// counts[true][predicted] over scored frames.
struct ConfusionMatrix {
    std::array<std::array<std::uint64_t, kLabelCount>, kLabelCount> counts{};

    std::uint64_t total() const;
    // Cell-wise addition, for merging matrices accumulated separately.
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
    bool operator==(const ConfusionMatrix&) const = default;
};

// Adds one count per pair whose true label is not `ignore_label`. Throws
// InputError on a length mismatch, an out-of-range true label, or an
// out-of-range prediction at a scored position.
void update_confusion(ConfusionMatrix& cm, std::span<const int> true_labels, std::span<const int> predicted,
                      int ignore_label = kIgnoreLabel);

struct ClassScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::uint64_t support = 0;  // frames whose true label is this class
};

struct MacroF1 {
    double macro = 0.0;
    std::array<ClassScores, kLabelCount> per_class{};
};

// One-vs-rest scores per class. Ratios with a zero denominator are 0. F1 is
// evaluated as 2·tp / (2·tp + fp + fn), which equals 2·p·r / (p + r) without
// the intermediate rounding. The macro value sums the eight F1 scores in
// class order and divides by 8, absent classes included.
MacroF1 macro_f1(const ConfusionMatrix& cm);

}  // namespace exprfuse
