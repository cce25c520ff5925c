#pragma once

// One-vs-rest F1 counted directly from label streams. Shares nothing with
// the library's confusion-matrix code beyond the ConfusionMatrix type used to
// generate streams.

#include <utility>
#include <vector>

#include "exprfuse/metrics.hpp"

namespace exprfuse::testing {

inline std::pair<std::vector<int>, std::vector<int>> expand_confusion(const ConfusionMatrix& cm) {
    std::vector<int> truth;
    std::vector<int> pred;
    for (int t = 0; t < 8; ++t)
        for (int p = 0; p < 8; ++p)
            for (std::uint64_t k = 0; k < cm.counts[t][p]; ++k) {
                truth.push_back(t);
                pred.push_back(p);
            }
    return {truth, pred};
}

// F1 per class as 2·tp / (2·tp + fp + fn), 0 when the denominator is 0;
// summed in class order and divided by 8.
inline double brute_force_macro_f1(const std::vector<int>& truth, const std::vector<int>& pred) {
    double total = 0.0;
    for (int c = 0; c < 8; ++c) {
        long long tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            if (truth[i] < 0) continue;
            const bool is_true = truth[i] == c;
            const bool is_pred = pred[i] == c;
            tp += is_true && is_pred;
            fp += !is_true && is_pred;
            fn += is_true && !is_pred;
        }
        const long long den = 2 * tp + fp + fn;
        total += den == 0 ? 0.0 : static_cast<double>(2 * tp) / static_cast<double>(den);
    }
    return total / 8.0;
}

}  // namespace exprfuse::testing
