#pragma once

// Coverage, efficiency and predictive-quality metrics over prediction bands
// and sets.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "conformal/calibrate.hpp"
#include "conformal/core.hpp"

namespace conformal {

struct WidthReport {
    double value = 0.0;  // +inf when any band is infinite
    std::size_t infinite_count = 0;
};

struct EvalReport {
    double coverage = 0.0;
    WidthReport width;
    std::map<int, double> per_class_coverage;
    std::map<int, double> per_class_width;
    std::vector<int> empty_classes;
    std::map<std::string, double> extras;  // r2, accuracy, bacc, f1w, relative_width, ...
};

// Fraction of truths inside their band; endpoints inclusive.
inline double coverage(const std::vector<ConformalBand>& bands, const std::vector<double>& truths) {
    if (bands.size() != truths.size()) throw DataError("coverage: length mismatch");
    if (bands.empty()) throw DataError("coverage: empty input");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < bands.size(); ++i)
        if (bands[i].contains(truths[i])) ++hit;
    return static_cast<double>(hit) / static_cast<double>(bands.size());
}

inline double coverage(const std::vector<PredictionSet>& sets, const std::vector<int>& truths) {
    if (sets.size() != truths.size()) throw DataError("coverage: length mismatch");
    if (sets.empty()) throw DataError("coverage: empty input");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < sets.size(); ++i)
        if (sets[i].contains(truths[i])) ++hit;
    return static_cast<double>(hit) / static_cast<double>(sets.size());
}

// Coverage restricted to each class; classes without rows are omitted and
// flagged.
template <typename Region, typename Truth>
std::map<int, double> conditional_coverage(const std::vector<Region>& regions,
                                           const std::vector<Truth>& truths,
                                           const std::vector<int>& classes,
                                           std::vector<int>* empty_classes = nullptr) {
    if (regions.size() != truths.size() || regions.size() != classes.size())
        throw DataError("conditional_coverage: length mismatch");
    std::map<int, std::pair<std::size_t, std::size_t>> tally;  // class -> (hits, total)
    for (std::size_t i = 0; i < regions.size(); ++i) {
        auto& t = tally[classes[i]];
        if (regions[i].contains(truths[i])) ++t.first;
        ++t.second;
    }
    std::map<int, double> out;
    for (const auto& [cls, t] : tally)
        out[cls] = static_cast<double>(t.first) / static_cast<double>(t.second);
    if (empty_classes) {
        empty_classes->clear();
        int max_class = 0;
        for (int c : classes) max_class = std::max(max_class, c);
        for (int c = 1; c <= max_class; ++c)
            if (!tally.count(c)) empty_classes->push_back(c);
    }
    return out;
}

// Mean band width; any infinite band makes the mean infinite and is counted.
inline WidthReport avg_width(const std::vector<ConformalBand>& bands) {
    WidthReport report;
    if (bands.empty()) return report;
    double sum = 0.0;
    for (const auto& b : bands) {
        if (b.infinite()) {
            ++report.infinite_count;
        } else {
            sum += b.width();
        }
    }
    report.value = report.infinite_count > 0 ? kInf
                                             : sum / static_cast<double>(bands.size());
    return report;
}

inline double avg_set_size(const std::vector<PredictionSet>& sets) {
    if (sets.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& s : sets) sum += static_cast<double>(s.size());
    return sum / static_cast<double>(sets.size());
}

// Average width divided by the central quantile gap of the truth sample; 1
// is the featureless baseline.
inline double relative_width(const std::vector<ConformalBand>& bands,
                             const std::vector<double>& truths, double alpha) {
    double gap = empirical_quantile(truths, 1.0 - alpha / 2.0) -
                 empirical_quantile(truths, std::max(alpha / 2.0, 1e-12));
    if (gap == 0.0) throw NumericError("relative_width: zero quantile gap");
    return avg_width(bands).value / gap;
}

inline double r_squared(const std::vector<double>& preds, const std::vector<double>& truths) {
    if (preds.size() != truths.size() || preds.empty()) throw DataError("r_squared: length mismatch");
    double mean = 0.0;
    for (double y : truths) mean += y;
    mean /= static_cast<double>(truths.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < truths.size(); ++i) {
        ss_res += (truths[i] - preds[i]) * (truths[i] - preds[i]);
        ss_tot += (truths[i] - mean) * (truths[i] - mean);
    }
    if (ss_tot == 0.0) throw NumericError("r_squared: constant truths");
    return 1.0 - ss_res / ss_tot;
}

struct ClassificationMetrics {
    double accuracy = 0.0;
    double balanced_accuracy = 0.0;  // macro-averaged recall
    double weighted_f1 = 0.0;        // support-weighted per-class F1
};

inline ClassificationMetrics classification_metrics(const std::vector<int>& preds,
                                                    const std::vector<int>& truths, int k) {
    if (preds.size() != truths.size() || preds.empty())
        throw DataError("classification_metrics: length mismatch");
    std::vector<std::size_t> tp(static_cast<std::size_t>(k), 0), fp(static_cast<std::size_t>(k), 0),
        fn(static_cast<std::size_t>(k), 0), support(static_cast<std::size_t>(k), 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        int p = preds[i], t = truths[i];
        if (p < 1 || p > k || t < 1 || t > k) throw DataError("classification_metrics: label out of range");
        ++support[static_cast<std::size_t>(t - 1)];
        if (p == t) {
            ++correct;
            ++tp[static_cast<std::size_t>(t - 1)];
        } else {
            ++fp[static_cast<std::size_t>(p - 1)];
            ++fn[static_cast<std::size_t>(t - 1)];
        }
    }

    ClassificationMetrics metrics;
    metrics.accuracy = static_cast<double>(correct) / static_cast<double>(preds.size());

    double recall_sum = 0.0;
    std::size_t observed = 0;
    double f1_weighted = 0.0;
    for (int c = 0; c < k; ++c) {
        auto ci = static_cast<std::size_t>(c);
        if (support[ci] == 0) continue;
        ++observed;
        double recall = static_cast<double>(tp[ci]) / static_cast<double>(tp[ci] + fn[ci]);
        recall_sum += recall;
        double denom_p = static_cast<double>(tp[ci] + fp[ci]);
        double precision = denom_p > 0.0 ? static_cast<double>(tp[ci]) / denom_p : 0.0;
        double f1 = (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        f1_weighted += f1 * static_cast<double>(support[ci]);
    }
    metrics.balanced_accuracy = observed > 0 ? recall_sum / static_cast<double>(observed) : 0.0;
    metrics.weighted_f1 = f1_weighted / static_cast<double>(preds.size());
    return metrics;
}

}  // namespace conformal
