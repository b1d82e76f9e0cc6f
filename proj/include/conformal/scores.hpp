#pragma once

// Nonconformity measures. All of them are pure functions of a model's
// outputs and a candidate response.

#include <cmath>
#include <optional>
#include <vector>

#include "conformal/core.hpp"

namespace conformal {

// Outputs of a regression model for one instance: a point estimate, an
// optional difficulty (spread) value and an optional baseline interval.
struct RegressionOutputs {
    std::optional<double> point;
    std::optional<double> spread;
    std::optional<double> lower;
    std::optional<double> upper;

    static RegressionOutputs from_point(double p) { return {p, std::nullopt, std::nullopt, std::nullopt}; }
    static RegressionOutputs from_mean_spread(double mu, double sigma) {
        return {mu, sigma, std::nullopt, std::nullopt};
    }
    static RegressionOutputs from_interval(double lo, double hi) {
        return {std::nullopt, std::nullopt, lo, hi};
    }
};

// Probability vector over the classes {1..k}.
struct ClassProbs {
    std::vector<double> probs;

    explicit ClassProbs(std::vector<double> p) : probs(std::move(p)) {
        double sum = 0.0;
        for (double v : probs) {
            if (v < 0.0) throw DataError("class probabilities must be nonnegative");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw DataError("class probabilities must sum to 1");
    }

    int k() const { return static_cast<int>(probs.size()); }
    double of(int label) const {
        if (label < 1 || label > k()) throw DataError("class label out of range");
        return probs[static_cast<std::size_t>(label - 1)];
    }
};

struct RapsConfig {
    double lambda = 0.0;
    int k_reg = 0;
    bool randomized = false;
    // The penalty rank is descending (1 = most probable) by default; the
    // ascending alternative is kept selectable.
    bool ascending_rank = false;
};

namespace detail {

inline double require_point(const RegressionOutputs& out) {
    if (!out.point) throw DataError("score: point prediction missing");
    return *out.point;
}

inline double require_spread(const RegressionOutputs& out) {
    if (!out.spread) throw DataError("score: difficulty value missing");
    if (*out.spread <= 0.0) throw DataError("score: nonpositive difficulty");
    return *out.spread;
}

}  // namespace detail

inline double residual_score(const RegressionOutputs& out, double y) {
    return std::abs(detail::require_point(out) - y);
}

inline double signed_residual_score(const RegressionOutputs& out, double y) {
    return y - detail::require_point(out);
}

inline double normalized_score(const RegressionOutputs& out, double y) {
    return std::abs(detail::require_point(out) - y) / detail::require_spread(out);
}

inline double standardized_score(const RegressionOutputs& out, double y) {
    return (y - detail::require_point(out)) / detail::require_spread(out);
}

// max(lower - y, y - upper); negative inside the baseline interval.
inline double interval_score(const RegressionOutputs& out, double y) {
    if (!out.lower || !out.upper) throw DataError("interval_score: interval missing");
    if (*out.lower > *out.upper) throw DataError("interval_score: lower above upper");
    return std::max(*out.lower - y, y - *out.upper);
}

// 1 on mismatch. The measure must grow with disagreement, so the mismatch
// case is the nonconforming one.
inline double zero_one_score(int predicted_class, int y) {
    return predicted_class == y ? 0.0 : 1.0;
}

inline double softmax_score(const ClassProbs& probs, int y) { return 1.0 - probs.of(y); }

// Binary convenience form: rho is the predicted probability of class 1.
inline double softmax_score_binary(double rho, int y) {
    return y == 1 ? 1.0 - rho : rho;
}

namespace detail {

// Mass strictly ahead of label y in the (probability desc, index asc) order.
inline double aps_leading_mass(const ClassProbs& probs, int y) {
    double py = probs.of(y);
    double mass = 0.0;
    for (int c = 1; c <= probs.k(); ++c) {
        double pc = probs.of(c);
        if (pc > py || (pc == py && c < y)) mass += pc;
    }
    return mass;
}

inline int descending_rank(const ClassProbs& probs, int y) {
    double py = probs.of(y);
    int ahead = 0;
    for (int c = 1; c <= probs.k(); ++c) {
        double pc = probs.of(c);
        if (pc > py || (pc == py && c < y)) ++ahead;
    }
    return ahead + 1;
}

}  // namespace detail

// Adaptive-prediction-set score: the cumulative probability mass down to and
// including the candidate label. The deterministic variant adds the whole
// mass of y; the randomized one adds a uniform fraction of it.
inline double aps_score(const ClassProbs& probs, int y, SeededRng& rng, bool randomized) {
    double mass = detail::aps_leading_mass(probs, y);
    double py = probs.of(y);
    return randomized ? mass + rng.uniform() * py : mass + py;
}

inline double aps_score_deterministic(const ClassProbs& probs, int y) {
    return detail::aps_leading_mass(probs, y) + probs.of(y);
}

// APS plus a rank penalty against tail classes.
inline double raps_score(const ClassProbs& probs, int y, const RapsConfig& cfg, SeededRng& rng) {
    double base = aps_score(probs, y, rng, cfg.randomized);
    int rank = detail::descending_rank(probs, y);
    if (cfg.ascending_rank) rank = probs.k() - rank + 1;
    return base + cfg.lambda * std::max(0, rank - cfg.k_reg);
}

}  // namespace conformal
