#pragma once

// Inductive conformal calibration: critical scores, p-values, interval and
// set construction, the signed-residual predictive system and online
// appending.

#include <algorithm>
#include <cmath>
#include <vector>

#include "conformal/core.hpp"

namespace conformal {

struct ConformalBand {
    double lo = -kInf;
    double hi = kInf;
    double alpha = 0.0;
    // Set when a negative interval correction crossed the midpoint; the band
    // collapses to the midpoint and should be read as empty.
    bool degenerate = false;

    bool contains(double y) const { return !degenerate && y >= lo && y <= hi; }
    double width() const { return degenerate ? 0.0 : hi - lo; }
    bool infinite() const { return std::isinf(lo) || std::isinf(hi); }
};

struct PredictionSet {
    std::vector<int> labels;  // ascending subset of {1..k}
    double alpha = 0.0;

    bool contains(int y) const { return std::binary_search(labels.begin(), labels.end(), y); }
    std::size_t size() const { return labels.size(); }
};

// Immutable calibration-score container. Scores are sorted once; the
// critical score is then an order-statistic lookup for any alpha.
class Calibration {
  public:
    Calibration(std::vector<double> scores, double alpha, bool strict_mode = true)
        : sorted_(std::move(scores)), alpha_(alpha), strict_(strict_mode) {
        if (alpha_ < 0.0 || alpha_ > 1.0) throw ConfigError("calibration: alpha must lie in [0, 1]");
        std::sort(sorted_.begin(), sorted_.end());
    }

    std::size_t size() const { return sorted_.size(); }
    double alpha() const { return alpha_; }
    bool strict_mode() const { return strict_; }
    const std::vector<double>& sorted_scores() const { return sorted_; }

    // Inflated-quantile critical score a*. When the inflated level exceeds 1
    // the strict mode returns +inf (prediction set = all of Y); otherwise the
    // level is clamped to 1, matching the reference-code behaviour.
    double critical_score() const { return critical_score(alpha_); }

    double critical_score(double alpha) const {
        if (sorted_.empty()) throw DataError("critical_score: empty calibration");
        std::size_t n = sorted_.size();
        std::size_t rank = detail::rank_ceil((1.0 - alpha) * static_cast<double>(n + 1));
        if (rank > n) {
            if (strict_) return kInf;
            rank = n;
        }
        if (rank < 1) rank = 1;
        return sorted_[rank - 1];
    }

    Calibration online_append(double new_score) const {
        std::vector<double> scores = sorted_;
        scores.insert(std::upper_bound(scores.begin(), scores.end(), new_score), new_score);
        return Calibration(std::move(scores), alpha_, strict_);
    }

    std::size_t count_geq(double s) const {
        return sorted_.end() - std::lower_bound(sorted_.begin(), sorted_.end(), s);
    }
    std::size_t count_gt(double s) const {
        return sorted_.end() - std::upper_bound(sorted_.begin(), sorted_.end(), s);
    }
    std::size_t count_eq(double s) const { return count_geq(s) - count_gt(s); }
    std::size_t count_lt(double s) const { return sorted_.size() - count_geq(s); }

  private:
    std::vector<double> sorted_;
    double alpha_;
    bool strict_;
};

// (#{cal >= test} + 1) / (n + 1).
inline double p_value(const Calibration& cal, double test_score) {
    if (cal.size() == 0) throw DataError("p_value: empty calibration");
    return static_cast<double>(cal.count_geq(test_score) + 1) / static_cast<double>(cal.size() + 1);
}

inline double p_value(std::vector<double> cal_scores, double test_score) {
    return p_value(Calibration(std::move(cal_scores), 0.0), test_score);
}

// Smoothed variant with the tie mass broken by tau ~ U(0, 1); exactly
// uniform for exchangeable data.
inline double smoothed_p_value_with_tau(const Calibration& cal, double test_score, double tau) {
    if (cal.size() == 0) throw DataError("smoothed_p_value: empty calibration");
    double gt = static_cast<double>(cal.count_gt(test_score));
    double eq = static_cast<double>(cal.count_eq(test_score));
    return (gt + tau * (eq + 1.0)) / static_cast<double>(cal.size() + 1);
}

inline double smoothed_p_value(const Calibration& cal, double test_score, SeededRng& rng) {
    return smoothed_p_value_with_tau(cal, test_score, rng.uniform());
}

inline double smoothed_p_value(std::vector<double> cal_scores, double test_score, SeededRng& rng) {
    return smoothed_p_value(Calibration(std::move(cal_scores), 0.0), test_score, rng);
}

inline ConformalBand band_point(double point, double a_star, double alpha = 0.0) {
    return {point - a_star, point + a_star, alpha, false};
}

inline ConformalBand band_normalized(double point, double spread, double a_star, double alpha = 0.0) {
    if (spread <= 0.0) throw DataError("band_normalized: nonpositive difficulty");
    return {point - a_star * spread, point + a_star * spread, alpha, false};
}

// Interval correction. A negative a* shrinks the baseline interval; if the
// shrink crosses, the band collapses to the midpoint and is flagged.
inline ConformalBand band_interval(double lower, double upper, double a_star, double alpha = 0.0) {
    if (lower > upper) throw DataError("band_interval: lower above upper");
    double lo = lower - a_star;
    double hi = upper + a_star;
    if (lo > hi) {
        double mid = 0.5 * (lower + upper);
        return {mid, mid, alpha, true};
    }
    return {lo, hi, alpha, false};
}

// Labels whose score is at most a*. per_label_scores[c-1] is the score of
// label c.
inline PredictionSet predict_set(const std::vector<double>& per_label_scores, double a_star,
                                 double alpha = 0.0) {
    PredictionSet set;
    set.alpha = alpha;
    for (std::size_t i = 0; i < per_label_scores.size(); ++i) {
        if (per_label_scores[i] <= a_star) set.labels.push_back(static_cast<int>(i + 1));
    }
    return set;
}

// Conformal predictive distribution for the signed-residual measure:
// Q(y) = (#{cal < y - point} + tau (#{cal = y - point} + 1)) / (n + 1).
inline double cps_cdf(const Calibration& cal_signed_residuals, double point, double y, double tau) {
    if (cal_signed_residuals.size() == 0) throw DataError("cps_cdf: empty calibration");
    if (tau < 0.0 || tau > 1.0) throw NumericError("cps_cdf: tau must lie in [0, 1]");
    double r = y - point;
    double lt = static_cast<double>(cal_signed_residuals.count_lt(r));
    double eq = static_cast<double>(cal_signed_residuals.count_eq(r));
    return (lt + tau * (eq + 1.0)) / static_cast<double>(cal_signed_residuals.size() + 1);
}

}  // namespace conformal
