#pragma once

// Synthetic data generators for the validity experiments, misspecification
// injectors and the CDF / bootstrap diagnostics.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "conformal/core.hpp"
#include "conformal/models.hpp"
#include "conformal/scores.hpp"

namespace conformal {

enum class Family { Type1, Type2, Type3, Type4, NavalLike, Example47, Triangular };
enum class NoiseFamily { Normal, Laplace, Uniform, Exponential, Triangular };

// Location-scale generator specification. Type 2 uses variance
// (cv * mean)^2 of the rowwise feature mean; Type 3 draws its spread from
// the first feature coordinate only; Type 4 is the two-branch mixture around
// mean 2; NavalLike pairs fixed Gaussian features with an exponential
// response; Example47 is the two-feature law N(x1 + x2, (1 + |x2 - 0.5|)^2);
// Triangular has density 2y / lambda(x)^2 on [0, lambda(x)].
struct GeneratorSpec {
    Family family = Family::Type2;
    std::size_t dimension = 1;
    NoiseFamily noise = NoiseFamily::Normal;

    double feature_lo = 0.0;
    double feature_hi = 1.0;

    double mu_const = 0.0;     // Type 1 mean
    double sigma_const = 1.0;  // Type 1 spread
    double cv = 0.1;           // Type 2 coefficient of variation
    double sigma_base = 0.5;   // Type 3 spread intercept
    double sigma_slope = 1.0;  // Type 3 spread slope in the first coordinate
    double lambda_base = 5.0;  // Triangular width intercept
    double lambda_slope = 0.0; // Triangular width slope in the feature mean

    static constexpr double sigma_floor = 1e-6;
};

struct SynthData {
    Dataset dataset;
    std::vector<double> mu;     // hidden true conditional mean per row
    std::vector<double> sigma;  // hidden true conditional spread per row
};

namespace detail {

inline double row_mean(const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v;
    return s / static_cast<double>(x.size());
}

// Standardized noise draw (mean 0, variance 1) for the location-scale
// families. The exponential pivot is Exp(1) - 1; the triangular pivot has
// density z/9 + 2 sqrt(2)/9 on [-2 sqrt(2), sqrt(2)].
inline double standardized_noise(NoiseFamily family, SeededRng& rng) {
    switch (family) {
        case NoiseFamily::Normal:
            return rng.normal();
        case NoiseFamily::Laplace:
            return rng.laplace_unit();
        case NoiseFamily::Uniform:
            return rng.uniform(-std::sqrt(3.0), std::sqrt(3.0));
        case NoiseFamily::Exponential:
            return rng.exponential() - 1.0;
        case NoiseFamily::Triangular: {
            // y = lambda sqrt(U) standardized with mu = 2 lambda / 3 and
            // sigma = lambda / (3 sqrt(2)).
            double y = std::sqrt(rng.uniform());
            return (y - 2.0 / 3.0) * 3.0 * std::sqrt(2.0);
        }
    }
    throw ConfigError("unknown noise family");
}

}  // namespace detail

// True mean and spread functions for a generator specification.
inline OracleModel oracle_model(const GeneratorSpec& spec) {
    OracleModel model;
    switch (spec.family) {
        case Family::Type1:
            model.mu = [spec](const std::vector<double>&) { return spec.mu_const; };
            model.sigma = [spec](const std::vector<double>&) { return spec.sigma_const; };
            break;
        case Family::Type2:
        case Family::Type4:
            model.mu = [](const std::vector<double>& x) { return detail::row_mean(x); };
            model.sigma = [spec](const std::vector<double>& x) {
                return std::max(spec.cv * std::abs(detail::row_mean(x)), GeneratorSpec::sigma_floor);
            };
            break;
        case Family::Type3:
            model.mu = [](const std::vector<double>& x) { return detail::row_mean(x); };
            model.sigma = [spec](const std::vector<double>& x) {
                return std::max(spec.sigma_base + spec.sigma_slope * x[0], GeneratorSpec::sigma_floor);
            };
            break;
        case Family::NavalLike:
            model.mu = [](const std::vector<double>& x) { return std::abs(detail::row_mean(x)); };
            model.sigma = [](const std::vector<double>& x) {
                return std::max(std::abs(detail::row_mean(x)), GeneratorSpec::sigma_floor);
            };
            break;
        case Family::Example47:
            model.mu = [](const std::vector<double>& x) {
                if (x.size() < 2) throw DataError("example47 oracle: needs two features");
                return x[0] + x[1];
            };
            model.sigma = [](const std::vector<double>& x) { return 1.0 + std::abs(x[1] - 0.5); };
            break;
        case Family::Triangular:
            model.mu = [spec](const std::vector<double>& x) {
                double lambda = spec.lambda_base + spec.lambda_slope * detail::row_mean(x);
                return 2.0 * lambda / 3.0;
            };
            model.sigma = [spec](const std::vector<double>& x) {
                double lambda = spec.lambda_base + spec.lambda_slope * detail::row_mean(x);
                return std::max(lambda / (3.0 * std::sqrt(2.0)), GeneratorSpec::sigma_floor);
            };
            break;
    }
    return model;
}

// Samples n rows: features from the family's feature law, responses from
// the conditional law, with the true mean and spread attached per row.
inline SynthData generate(const GeneratorSpec& spec, std::size_t n, SeededRng& rng) {
    if (n < 1) throw ConfigError("generate: n must be at least 1");
    if (spec.dimension < 1) throw ConfigError("generate: dimension must be at least 1");
    if (spec.family == Family::Example47 && spec.dimension < 2)
        throw ConfigError("generate: example47 needs two feature dimensions");
    if (spec.cv <= 0.0 && spec.family == Family::Type2)
        throw ConfigError("generate: cv must be positive");

    OracleModel oracle = oracle_model(spec);
    std::size_t d = spec.dimension;
    std::vector<double> features;
    features.reserve(n * d);
    std::vector<double> responses(n);
    std::vector<double> mu(n), sigma(n);

    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> x(d);
        if (spec.family == Family::NavalLike) {
            // Fixed Gaussian feature law with per-coordinate means 2j and
            // standard deviations j + 2.
            for (std::size_t j = 0; j < d; ++j)
                x[j] = 2.0 * static_cast<double>(j) + (static_cast<double>(j) + 2.0) * rng.normal();
        } else {
            for (std::size_t j = 0; j < d; ++j) x[j] = rng.uniform(spec.feature_lo, spec.feature_hi);
        }

        double m = oracle.mu(x);
        double s = oracle.sigma(x);
        double y;
        switch (spec.family) {
            case Family::NavalLike:
                // Exponential response with mean |mean(x)|; mu = sigma.
                y = m * rng.exponential();
                break;
            case Family::Type4:
                // Bimodal mixture: the branch mean shifts down below 2 and
                // up above it.
                y = (m <= 2.0 ? m - 1.0 : m + 1.0) + s * rng.normal();
                break;
            case Family::Triangular: {
                double lambda = 3.0 * std::sqrt(2.0) * s;
                y = lambda * std::sqrt(rng.uniform());
                break;
            }
            default:
                y = m + s * detail::standardized_noise(spec.noise, rng);
                break;
        }
        features.insert(features.end(), x.begin(), x.end());
        responses[i] = y;
        mu[i] = m;
        sigma[i] = s;
    }
    return {Dataset(std::move(features), d, std::move(responses)), std::move(mu), std::move(sigma)};
}

// ---------------------------------------------------------------------------
// Misspecification
// ---------------------------------------------------------------------------

enum class MisspecMode { SigmaShift, SigmaScale, MuShiftConst, MuShiftProp, ExplicitQuadratic };

struct MisspecSpec {
    MisspecMode mode = MisspecMode::SigmaShift;
    double lambda = 0.0;
};

// Perturbs oracle outputs; the spread stays clipped strictly positive so
// normalized scores remain finite.
inline RegressionOutputs misspecify(const RegressionOutputs& out, const MisspecSpec& spec,
                                    SeededRng& rng) {
    if (!out.point || !out.spread) throw DataError("misspecify: needs mean and spread");
    double mu = *out.point;
    double sigma = *out.spread;
    switch (spec.mode) {
        case MisspecMode::SigmaShift:
            sigma += spec.lambda * rng.normal();
            break;
        case MisspecMode::SigmaScale:
            sigma *= spec.lambda;
            break;
        case MisspecMode::MuShiftConst:
            mu += spec.lambda * rng.normal();
            break;
        case MisspecMode::MuShiftProp:
            mu += spec.lambda * sigma * rng.normal();
            break;
        case MisspecMode::ExplicitQuadratic: {
            double var = sigma * sigma;
            sigma = std::sqrt(5.0 * (var - 0.5) * (var - 0.5) + 0.5);
            break;
        }
    }
    sigma = std::max(sigma, 1e-6);
    return RegressionOutputs::from_mean_spread(mu, sigma);
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

struct CdfCurvePoint {
    std::string group;
    double score = 0.0;
    double cdf = 0.0;
};

// Step-function points (both corners of every jump) of each empirical CDF on
// the merged support grid; CSV-ready. Empty classes are skipped.
inline std::vector<CdfCurvePoint> cdf_curves(const std::map<std::string, std::vector<double>>& groups,
                                             std::vector<std::string>* warnings = nullptr) {
    std::vector<double> grid;
    for (const auto& [name, scores] : groups)
        grid.insert(grid.end(), scores.begin(), scores.end());
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

    std::vector<CdfCurvePoint> points;
    for (const auto& [name, scores] : groups) {
        if (scores.empty()) {
            if (warnings) warnings->push_back("empty group skipped: " + name);
            continue;
        }
        std::vector<double> sorted = scores;
        std::sort(sorted.begin(), sorted.end());
        double n = static_cast<double>(sorted.size());
        for (double x : grid) {
            double below = static_cast<double>(std::lower_bound(sorted.begin(), sorted.end(), x) -
                                               sorted.begin());
            double at_or_below = static_cast<double>(std::upper_bound(sorted.begin(), sorted.end(), x) -
                                                     sorted.begin());
            if (below != at_or_below) points.push_back({name, x, below / n});  // pre-jump corner
            points.push_back({name, x, at_or_below / n});
        }
    }
    return points;
}

// Harrell-Davis quantile estimator: a Beta(a, b)-weighted average of the
// order statistics with a = (n+1)q and b = (n+1)(1-q).
inline double hd_quantile(std::vector<double> values, double q) {
    if (values.empty()) throw DataError("hd_quantile: empty sample");
    if (q <= 0.0 || q >= 1.0) throw NumericError("hd_quantile: q must lie in (0, 1)");
    std::sort(values.begin(), values.end());
    double n = static_cast<double>(values.size());
    double a = (n + 1.0) * q;
    double b = (n + 1.0) * (1.0 - q);
    double result = 0.0;
    double prev = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        double next = reg_inc_beta(static_cast<double>(i + 1) / n, a, b);
        result += (next - prev) * values[i];
        prev = next;
    }
    return result;
}

struct BootstrapQuantileResult {
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    bool excludes_zero = false;
};

// Bootstrap test for equality of the inflated critical quantiles of two
// score classes: B resamples at the original sizes, Harrell-Davis quantile
// difference per resample, order-statistic confidence interval at level
// beta.
inline BootstrapQuantileResult bootstrap_quantile_test(const std::vector<double>& scores_c1,
                                                       const std::vector<double>& scores_c2,
                                                       double alpha, std::size_t B, double beta,
                                                       SeededRng& rng) {
    if (scores_c1.empty() || scores_c2.empty()) throw DataError("bootstrap_quantile_test: empty class");
    if (B < 100) throw ConfigError("bootstrap_quantile_test: B must be at least 100");
    if (beta <= 0.0 || beta >= 1.0) throw ConfigError("bootstrap_quantile_test: beta must lie in (0, 1)");

    auto inflated_level = [alpha](std::size_t n) {
        double level = (1.0 - alpha) * (1.0 + 1.0 / static_cast<double>(n));
        return std::min(level, 1.0 - 1e-9);
    };
    double q1 = inflated_level(scores_c1.size());
    double q2 = inflated_level(scores_c2.size());

    auto resample = [&rng](const std::vector<double>& src) {
        std::vector<double> out(src.size());
        for (double& v : out) v = src[rng.uniform_index(src.size())];
        return out;
    };

    std::vector<double> diffs(B);
    for (std::size_t i = 0; i < B; ++i)
        diffs[i] = hd_quantile(resample(scores_c1), q1) - hd_quantile(resample(scores_c2), q2);
    std::sort(diffs.begin(), diffs.end());

    double bd = static_cast<double>(B);
    std::size_t lo_rank = std::max<std::size_t>(1, detail::rank_ceil(bd * beta / 2.0));
    std::size_t hi_rank = std::min<std::size_t>(B, detail::rank_ceil(bd - bd * beta / 2.0));
    BootstrapQuantileResult result;
    result.ci_lo = diffs[lo_rank - 1];
    result.ci_hi = diffs[hi_rank - 1];
    result.excludes_zero = (result.ci_lo > 0.0) || (result.ci_hi < 0.0);
    return result;
}

// Two-sided Beta band for the coverage law of a conformal predictor with
// n_cal calibration points: Beta(k, n+1-k) with k = ceil((1-alpha)(n+1)).
// alpha = 0 degenerates to the point band (1, 1).
inline std::pair<double, double> beta_coverage_band(std::size_t n_cal, double alpha,
                                                    double band_level) {
    double k = static_cast<double>(detail::rank_ceil((1.0 - alpha) * (static_cast<double>(n_cal) + 1.0)));
    double b = static_cast<double>(n_cal) + 1.0 - k;
    if (b <= 0.0) return {1.0, 1.0};
    double lo = beta_quantile(band_level / 2.0, k, b);
    double hi = beta_quantile(1.0 - band_level / 2.0, k, b);
    return {lo, hi};
}

}  // namespace conformal
