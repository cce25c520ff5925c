#include "exprfuse/metrics.hpp"

#include <string>

#include "exprfuse/errors.hpp"

namespace exprfuse {

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t n = 0;
    for (const auto& row : counts)
        for (auto c : row) n += c;
    return n;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    for (int t = 0; t < kLabelCount; ++t)
        for (int p = 0; p < kLabelCount; ++p) counts[t][p] += other.counts[t][p];
    return *this;
}

void update_confusion(ConfusionMatrix& cm, std::span<const int> true_labels, std::span<const int> predicted,
                      int ignore_label) {
    if (true_labels.size() != predicted.size()) {
        throw InputError("label arrays differ in length: " + std::to_string(true_labels.size()) + " vs " +
                         std::to_string(predicted.size()));
    }
    // Validate first so a bad input leaves the matrix untouched.
    for (std::size_t i = 0; i < true_labels.size(); ++i) {
        if (true_labels[i] == ignore_label) continue;
        if (!is_class_code(true_labels[i]))
            throw InputError("true label " + std::to_string(true_labels[i]) + " at position " + std::to_string(i));
        if (!is_class_code(predicted[i]))
            throw InputError("predicted label " + std::to_string(predicted[i]) + " at position " + std::to_string(i));
    }
    for (std::size_t i = 0; i < true_labels.size(); ++i) {
        if (true_labels[i] == ignore_label) continue;
        ++cm.counts[true_labels[i]][predicted[i]];
    }
}

namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MacroF1 macro_f1(const ConfusionMatrix& cm) {
    MacroF1 out;
    double total = 0.0;
    for (int c = 0; c < kLabelCount; ++c) {
        const std::uint64_t tp = cm.counts[c][c];
        std::uint64_t fp = 0;
        std::uint64_t fn = 0;
        for (int o = 0; o < kLabelCount; ++o) {
            if (o == c) continue;
            fp += cm.counts[o][c];
            fn += cm.counts[c][o];
        }
        auto& s = out.per_class[c];
        s.support = tp + fn;
        s.precision = ratio(tp, tp + fp);
        s.recall = ratio(tp, tp + fn);
        s.f1 = ratio(2 * tp, 2 * tp + fp + fn);
        total += s.f1;
    }
    out.macro = total / kLabelCount;
    return out;
}

}  // namespace exprfuse
