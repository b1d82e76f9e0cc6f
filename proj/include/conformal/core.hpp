#pragma once

// Core utilities shared by every other module: datasets, deterministic
// counter-based randomness, empirical quantiles and the beta special
// functions backing coverage diagnostics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace conformal {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Error taxonomy mirrored by the CLI exit codes (config 2, data 3, numeric 4).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Deterministic randomness
// ---------------------------------------------------------------------------

// Counter-based generator: the stream is a pure function of (key, counter),
// so replicate substreams can be derived without sharing state. The output
// function is the splitmix64 finalizer.
class SeededRng {
  public:
    explicit SeededRng(std::uint64_t seed) : key_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = key_ + counter_ * 0x9E3779B97F4A7C15ULL;
        ++counter_;
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in (0, 1); never returns an exact endpoint.
    double uniform_open() {
        double u = uniform();
        return u > 0.0 ? u : 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::size_t uniform_index(std::size_t n) {
        if (n == 0) throw NumericError("uniform_index: empty range");
        // Rejection-free modulo bias is negligible for n << 2^64; use
        // multiply-shift for uniformity.
        return static_cast<std::size_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform_open();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double exponential() { return -std::log(uniform_open()); }

    // Unit-variance Laplace (scale 1/sqrt(2)).
    double laplace_unit() {
        double u = uniform() - 0.5;
        double b = 1.0 / std::sqrt(2.0);
        return u >= 0 ? -b * std::log(1.0 - 2.0 * u) : b * std::log(1.0 + 2.0 * u);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[uniform_index(i)]);
        }
    }

    // Substream for a replicate index: seed XOR a hash of the index.
    SeededRng substream(std::uint64_t index) const {
        return SeededRng(key_ ^ mix_(index + 0x632BE59BD9B4E019ULL));
    }

    // Named substream (e.g. "split", "smoothing", "bootstrap", "mc:3").
    SeededRng substream(std::string_view name) const {
        std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
        for (char c : name) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001B3ULL;
        }
        return SeededRng(key_ ^ mix_(h));
    }

    std::uint64_t seed() const { return key_; }

  private:
    static std::uint64_t mix_(std::uint64_t z) {
        z = (z ^ (z >> 33)) * 0xFF51AFD7ED558CCDULL;
        z = (z ^ (z >> 33)) * 0xC4CEB9FE1A85EC53ULL;
        return z ^ (z >> 33);
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

enum class TaskKind { Regression, Classification };

// Row-major feature matrix plus responses. Classification responses are
// class labels in {1..k}; NaN/Inf are rejected at ingestion because
// downstream order statistics have no defined ordering for them.
class Dataset {
  public:
    Dataset() = default;

    Dataset(std::vector<double> features, std::size_t n_cols, std::vector<double> responses,
            TaskKind kind = TaskKind::Regression)
        : features_(std::move(features)), responses_(std::move(responses)), n_cols_(n_cols), kind_(kind) {
        if (n_cols_ == 0) throw DataError("dataset: zero feature columns");
        if (features_.size() % n_cols_ != 0) throw DataError("dataset: ragged feature matrix");
        if (features_.size() / n_cols_ != responses_.size())
            throw DataError("dataset: row count of features must equal length of responses");
        for (double v : features_)
            if (!std::isfinite(v)) throw DataError("dataset: non-finite feature value");
        for (double v : responses_) {
            if (!std::isfinite(v)) throw DataError("dataset: non-finite response value");
            if (kind_ == TaskKind::Classification && (v < 1.0 || v != std::floor(v)))
                throw DataError("dataset: classification responses must be integers >= 1");
        }
    }

    std::size_t n_rows() const { return responses_.size(); }
    std::size_t n_cols() const { return n_cols_; }
    TaskKind kind() const { return kind_; }

    const double* row(std::size_t i) const { return features_.data() + i * n_cols_; }
    std::vector<double> row_vec(std::size_t i) const {
        return std::vector<double>(row(i), row(i) + n_cols_);
    }
    double response(std::size_t i) const { return responses_[i]; }
    int label(std::size_t i) const { return static_cast<int>(responses_[i]); }
    const std::vector<double>& responses() const { return responses_; }

    // Number of classes = largest label seen.
    int n_classes() const {
        int k = 0;
        for (double v : responses_) k = std::max(k, static_cast<int>(v));
        return k;
    }

    Dataset subset(const std::vector<std::size_t>& rows) const {
        std::vector<double> f;
        f.reserve(rows.size() * n_cols_);
        std::vector<double> r;
        r.reserve(rows.size());
        for (std::size_t i : rows) {
            f.insert(f.end(), row(i), row(i) + n_cols_);
            r.push_back(responses_[i]);
        }
        return Dataset(std::move(f), n_cols_, std::move(r), kind_);
    }

  private:
    std::vector<double> features_;
    std::vector<double> responses_;
    std::size_t n_cols_ = 1;
    TaskKind kind_ = TaskKind::Regression;
};

struct SignificanceLevel {
    double alpha;
    explicit SignificanceLevel(double a) : alpha(a) {
        if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("significance level must lie in [0, 1]");
    }
};

// ---------------------------------------------------------------------------
// Empirical quantiles
// ---------------------------------------------------------------------------

namespace detail {

// Rounds t up to an integer rank, snapping values within 1e-9 of an integer.
// Levels like (1 - alpha)(1 + 1/n) are products of decimal fractions whose
// floating-point images may land epsilon above the exact integer rank.
inline std::size_t rank_ceil(double t) {
    double nearest = std::round(t);
    if (std::abs(t - nearest) < 1e-9) return static_cast<std::size_t>(nearest);
    return static_cast<std::size_t>(std::ceil(t));
}

inline std::size_t rank_floor(double t) {
    double nearest = std::round(t);
    if (std::abs(t - nearest) < 1e-9) return static_cast<std::size_t>(nearest);
    return static_cast<std::size_t>(std::floor(t));
}

}  // namespace detail

// Ascending order statistic at rank ceil(n * level). The sample is taken by
// value since it must be sorted.
inline double empirical_quantile(std::vector<double> values, double level) {
    if (values.empty()) throw DataError("empirical_quantile: empty sample");
    if (level <= 0.0) throw NumericError("empirical_quantile: level must be positive");
    if (level > 1.0 + 1e-12) throw NumericError("empirical_quantile: level above 1");
    std::sort(values.begin(), values.end());
    std::size_t k = detail::rank_ceil(static_cast<double>(values.size()) * level);
    if (k < 1) k = 1;
    if (k > values.size()) k = values.size();
    return values[k - 1];
}

// Quantile of an already ascending-sorted sample.
inline double sorted_quantile(const std::vector<double>& sorted, double level) {
    if (sorted.empty()) throw DataError("sorted_quantile: empty sample");
    if (level <= 0.0) throw NumericError("sorted_quantile: level must be positive");
    std::size_t k = detail::rank_ceil(static_cast<double>(sorted.size()) * level);
    if (k < 1) k = 1;
    if (k > sorted.size()) k = sorted.size();
    return sorted[k - 1];
}

// Lower empirical quantile: order statistic at rank floor(n * level), floored
// at rank 1. Equals -empirical_quantile(negated values, 1 - level) whenever
// n * level is not an integer; at integer ranks the floor form is kept so
// that lower_quantile(S, a) <= empirical_quantile(S, a) holds for every a.
inline double lower_quantile(std::vector<double> values, double level) {
    if (values.empty()) throw DataError("lower_quantile: empty sample");
    level = std::clamp(level, 0.0, 1.0);
    std::sort(values.begin(), values.end());
    std::size_t k = detail::rank_floor(static_cast<double>(values.size()) * level);
    if (k < 1) k = 1;
    if (k > values.size()) k = values.size();
    return values[k - 1];
}

// ---------------------------------------------------------------------------
// Beta special functions
// ---------------------------------------------------------------------------

namespace detail {

// Continued fraction for the regularized incomplete beta (Lentz's algorithm).
inline double beta_cf(double a, double b, double x) {
    constexpr double tiny = 1e-300;
    constexpr double eps = 1e-15;
    double qab = a + b;
    double qap = a + 1.0;
    double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 500; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) break;
    }
    return h;
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b), absolute error below 1e-10.
inline double reg_inc_beta(double x, double a, double b) {
    if (!(a > 0.0) || !(b > 0.0)) throw NumericError("reg_inc_beta: parameters must be positive");
    if (x < 0.0 || x > 1.0) throw NumericError("reg_inc_beta: x must lie in [0, 1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    double lbt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                 b * std::log1p(-x);
    double bt = std::exp(lbt);
    // Symmetry keeps the continued fraction in its fast-converging regime.
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * detail::beta_cf(a, b, x) / a;
    return 1.0 - bt * detail::beta_cf(b, a, 1.0 - x) / b;
}

// Inverse of I_x(a, b) in x, by bisection to 1e-10.
inline double beta_quantile(double p, double a, double b) {
    if (p < 0.0 || p > 1.0) throw NumericError("beta_quantile: p must lie in [0, 1]");
    if (!(a > 0.0) || !(b > 0.0)) throw NumericError("beta_quantile: parameters must be positive");
    if (p == 0.0) return 0.0;
    if (p == 1.0) return 1.0;
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 100 && hi - lo > 1e-12; ++it) {
        double mid = 0.5 * (lo + hi);
        (reg_inc_beta(mid, a, b) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// Standard normal CDF and quantile (bisection on erf; plumbing for the
// Gaussian interval baseline and oracle cross-checks).
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw NumericError("normal_quantile: p must lie in (0, 1)");
    double lo = -40.0, hi = 40.0;
    for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
        double mid = 0.5 * (lo + hi);
        (normal_cdf(mid) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> calibration;
    std::vector<std::size_t> test;
};

// Disjoint exhaustive row partition. Sizes are floor allocations of the
// fractions; remainder rows go to the training partition.
inline Split split(const Dataset& data, double train_frac, double cal_frac, double test_frac,
                   SeededRng& rng) {
    if (train_frac < 0 || cal_frac < 0 || test_frac < 0)
        throw ConfigError("split: fractions must be nonnegative");
    if (std::abs(train_frac + cal_frac + test_frac - 1.0) > 1e-9)
        throw ConfigError("split: fractions must sum to 1");
    std::size_t n = data.n_rows();
    std::size_t parts = (train_frac > 0) + (cal_frac > 0) + (test_frac > 0);
    if (n < parts) throw DataError("split: fewer rows than nonzero parts");

    std::size_t n_train = static_cast<std::size_t>(std::floor(n * train_frac));
    std::size_t n_cal = static_cast<std::size_t>(std::floor(n * cal_frac));
    std::size_t n_test = static_cast<std::size_t>(std::floor(n * test_frac));
    n_train += n - (n_train + n_cal + n_test);

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    rng.shuffle(idx);

    Split s;
    s.train.assign(idx.begin(), idx.begin() + n_train);
    s.calibration.assign(idx.begin() + n_train, idx.begin() + n_train + n_cal);
    s.test.assign(idx.begin() + n_train + n_cal, idx.end());
    return s;
}

// ---------------------------------------------------------------------------
// Parallel replicate helper
// ---------------------------------------------------------------------------

// Caps the worker count at the CONFORMAL_KIT_THREADS environment variable.
inline unsigned effective_threads() {
    unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("CONFORMAL_KIT_THREADS")) {
        long cap = std::atol(env);
        if (cap >= 1) hw = std::min<unsigned>(hw, static_cast<unsigned>(cap));
    }
    return hw;
}

// Runs fn(i) for i in [0, n). Each index writes only to its own slot, so the
// result is bitwise independent of the thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    unsigned workers = std::min<std::size_t>(effective_threads(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace conformal
