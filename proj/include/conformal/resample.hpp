#pragma once

// Transductive, cross-conformal, jackknife-family and out-of-bag conformal
// prediction. Refitters must be permutation-invariant in their training
// multiset; the built-in k-NN and ridge refitters are.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <vector>

#include "conformal/calibrate.hpp"
#include "conformal/core.hpp"
#include "conformal/models.hpp"

namespace conformal {

// Nonconformity scorer produced by a refit on some training multiset.
using Scorer = std::function<double(const std::vector<double>& x, double y)>;
using Refitter = std::function<Scorer(const Dataset& train)>;

// Point predictor produced by a refit; used by the jackknife family with
// absolute residuals.
using Predictor = std::function<double(const std::vector<double>& x)>;
using PointRefitter = std::function<Predictor(const Dataset& train)>;

struct FoldPlan {
    std::vector<int> fold_of;  // row index -> fold id in [0, f)
    int f = 1;

    static FoldPlan uniform(std::size_t n, int f, SeededRng& rng) {
        if (f < 1) throw ConfigError("fold plan: need at least one fold");
        if (static_cast<std::size_t>(f) > n) throw DataError("fold plan: more folds than rows");
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        rng.shuffle(idx);
        FoldPlan plan;
        plan.f = f;
        plan.fold_of.assign(n, 0);
        for (std::size_t i = 0; i < n; ++i) plan.fold_of[idx[i]] = static_cast<int>(i % static_cast<std::size_t>(f));
        return plan;
    }

    static FoldPlan leave_one_out(std::size_t n) {
        FoldPlan plan;
        plan.f = static_cast<int>(n);
        plan.fold_of.resize(n);
        std::iota(plan.fold_of.begin(), plan.fold_of.end(), 0);
        return plan;
    }

    std::vector<std::size_t> rows_of(int fold) const {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < fold_of.size(); ++i)
            if (fold_of[i] == fold) rows.push_back(i);
        return rows;
    }
};

namespace detail {

inline Dataset drop_row(const Dataset& data, std::size_t skip) {
    std::vector<std::size_t> rows;
    rows.reserve(data.n_rows() - 1);
    for (std::size_t i = 0; i < data.n_rows(); ++i)
        if (i != skip) rows.push_back(i);
    return data.subset(rows);
}

inline Dataset append_row(const Dataset& data, const std::vector<double>& x, double y) {
    std::vector<double> f;
    f.reserve((data.n_rows() + 1) * data.n_cols());
    std::vector<double> r;
    r.reserve(data.n_rows() + 1);
    for (std::size_t i = 0; i < data.n_rows(); ++i) {
        f.insert(f.end(), data.row(i), data.row(i) + data.n_cols());
        r.push_back(data.response(i));
    }
    f.insert(f.end(), x.begin(), x.end());
    r.push_back(y);
    return Dataset(std::move(f), data.n_cols(), std::move(r), data.kind());
}

}  // namespace detail

// Full transductive conformal prediction over a finite label space. For
// each candidate label the enhanced data set is rescored leave-one-out and
// the candidate is kept when its p-value reaches alpha.
inline PredictionSet tcp_predict_set(const Dataset& data, const std::vector<double>& x,
                                     const std::vector<int>& label_space, const Refitter& refit,
                                     double alpha, bool smoothed, SeededRng& rng) {
    if (label_space.empty()) throw DataError("tcp_predict_set: empty label space");
    PredictionSet set;
    set.alpha = alpha;
    for (int y : label_space) {
        Dataset enhanced = detail::append_row(data, x, static_cast<double>(y));
        std::size_t m = enhanced.n_rows();
        std::vector<double> scores(m);
        for (std::size_t i = 0; i < m; ++i) {
            Scorer scorer = refit(detail::drop_row(enhanced, i));
            scores[i] = scorer(enhanced.row_vec(i), enhanced.response(i));
        }
        double test = scores[m - 1];
        double p;
        if (smoothed) {
            double gt = 0.0, eq = 0.0;
            for (double s : scores) {
                if (s > test) gt += 1.0;
                if (s == test) eq += 1.0;  // includes the test point itself
            }
            p = (gt + rng.uniform() * eq) / static_cast<double>(m);
        } else {
            double geq = 0.0;
            for (double s : scores)
                if (s >= test) geq += 1.0;
            p = geq / static_cast<double>(m);
        }
        if (p >= alpha) set.labels.push_back(y);
    }
    std::sort(set.labels.begin(), set.labels.end());
    return set;
}

// Per-fold out-of-fold scorers for cross-conformal prediction.
struct CrossConformal {
    FoldPlan folds;
    std::vector<Scorer> fold_scorers;  // scorer trained on the complement of each fold
    std::vector<std::vector<double>> fold_scores;  // out-of-fold calibration scores
    std::size_t n_rows = 0;

    CrossConformal(const Dataset& data, const FoldPlan& plan, const Refitter& refit)
        : folds(plan), n_rows(data.n_rows()) {
        if (plan.fold_of.size() != data.n_rows()) throw DataError("cross conformal: fold plan mismatch");
        for (int s = 0; s < plan.f; ++s) {
            auto held = plan.rows_of(s);
            if (held.empty()) throw DataError("cross conformal: empty fold");
            std::vector<std::size_t> train_rows;
            for (std::size_t i = 0; i < data.n_rows(); ++i)
                if (plan.fold_of[i] != s) train_rows.push_back(i);
            if (train_rows.empty()) throw DataError("cross conformal: no out-of-fold data");
            Scorer scorer = refit(data.subset(train_rows));
            std::vector<double> scores;
            scores.reserve(held.size());
            for (std::size_t i : held) scores.push_back(scorer(data.row_vec(i), data.response(i)));
            fold_scorers.push_back(std::move(scorer));
            fold_scores.push_back(std::move(scores));
        }
    }

    // [sum_s #{fold s scores >= own score of (x, y)} + 1] / (n + 1).
    double p_value(const std::vector<double>& x, double y) const {
        std::size_t count = 0;
        for (int s = 0; s < folds.f; ++s) {
            double test = fold_scorers[static_cast<std::size_t>(s)](x, y);
            for (double v : fold_scores[static_cast<std::size_t>(s)])
                if (v >= test) ++count;
        }
        return static_cast<double>(count + 1) / static_cast<double>(n_rows + 1);
    }

    // Sum of per-fold strict-count fractions; conservatively valid at the
    // 2-alpha level and may exceed 1 for many folds.
    double avg_p_value(const std::vector<double>& x, double y) const {
        double total = 0.0;
        for (int s = 0; s < folds.f; ++s) {
            double test = fold_scorers[static_cast<std::size_t>(s)](x, y);
            std::size_t gt = 0;
            for (double v : fold_scores[static_cast<std::size_t>(s)])
                if (v > test) ++gt;
            total += static_cast<double>(gt + 1) /
                     static_cast<double>(fold_scores[static_cast<std::size_t>(s)].size() + 1);
        }
        return total;
    }

    PredictionSet predict_grid(const std::vector<double>& x, const std::vector<double>& grid,
                               double alpha, std::vector<double>* accepted = nullptr) const {
        PredictionSet set;
        set.alpha = alpha;
        if (accepted) accepted->clear();
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (p_value(x, grid[i]) >= alpha) {
                set.labels.push_back(static_cast<int>(i + 1));
                if (accepted) accepted->push_back(grid[i]);
            }
        }
        return set;
    }
};

// Leave-one-out machinery shared by the jackknife variants.
struct LooFits {
    std::vector<double> loo_residuals;                 // |y_i - yhat_(i)(x_i)|
    std::vector<Predictor> loo_predictors;             // yhat_(i)

    LooFits(const Dataset& data, const PointRefitter& refit) {
        std::size_t n = data.n_rows();
        if (n < 2) throw DataError("jackknife: need at least two rows");
        loo_residuals.resize(n);
        loo_predictors.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            loo_predictors[i] = refit(detail::drop_row(data, i));
            loo_residuals[i] = std::abs(data.response(i) - loo_predictors[i](data.row_vec(i)));
        }
    }
};

// yhat(x) +/- inflated quantile of the leave-one-out residuals.
inline ConformalBand jackknife_band(const Dataset& data, const PointRefitter& refit,
                                    const std::vector<double>& x, double alpha) {
    LooFits fits(data, refit);
    double n = static_cast<double>(data.n_rows());
    Predictor full = refit(data);
    double level = std::min(1.0, (1.0 + 1.0 / n) * (1.0 - alpha));
    double a_star = empirical_quantile(fits.loo_residuals, level);
    return band_point(full(x), a_star, alpha);
}

// Quantiles and subtraction/addition interchanged: the band is built from
// the leave-one-out predictions at x shifted by the residuals.
inline ConformalBand jackknife_plus_band(const Dataset& data, const PointRefitter& refit,
                                         const std::vector<double>& x, double alpha) {
    LooFits fits(data, refit);
    std::size_t n = data.n_rows();
    std::vector<double> lo_set(n), hi_set(n);
    for (std::size_t i = 0; i < n; ++i) {
        double pred = fits.loo_predictors[i](x);
        lo_set[i] = pred - fits.loo_residuals[i];
        hi_set[i] = pred + fits.loo_residuals[i];
    }
    double inflate = 1.0 + 1.0 / static_cast<double>(n);
    double lo = lower_quantile(lo_set, std::min(1.0, inflate * alpha));
    double hi = empirical_quantile(hi_set, std::min(1.0, inflate * (1.0 - alpha)));
    return {lo, hi, alpha, false};
}

// Jackknife+ with out-of-fold predictions substituted for the leave-one-out
// fits; f = n reduces to jackknife_plus_band.
inline ConformalBand cv_plus_band(const Dataset& data, const FoldPlan& plan,
                                  const PointRefitter& refit, const std::vector<double>& x,
                                  double alpha) {
    std::size_t n = data.n_rows();
    if (n < 2) throw DataError("cv+: need at least two rows");
    if (plan.f < 2) throw DataError("cv+: need at least two folds");
    if (plan.fold_of.size() != n) throw DataError("cv+: fold plan mismatch");
    std::vector<Predictor> fold_models(static_cast<std::size_t>(plan.f));
    for (int s = 0; s < plan.f; ++s) {
        std::vector<std::size_t> train_rows;
        for (std::size_t i = 0; i < n; ++i)
            if (plan.fold_of[i] != s) train_rows.push_back(i);
        if (train_rows.empty()) throw DataError("cv+: no out-of-fold data");
        fold_models[static_cast<std::size_t>(s)] = refit(data.subset(train_rows));
    }
    std::vector<double> lo_set(n), hi_set(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Predictor& model = fold_models[static_cast<std::size_t>(plan.fold_of[i])];
        double res = std::abs(data.response(i) - model(data.row_vec(i)));
        double pred = model(x);
        lo_set[i] = pred - res;
        hi_set[i] = pred + res;
    }
    double inflate = 1.0 + 1.0 / static_cast<double>(n);
    double lo = lower_quantile(lo_set, std::min(1.0, inflate * alpha));
    double hi = empirical_quantile(hi_set, std::min(1.0, inflate * (1.0 - alpha)));
    return {lo, hi, alpha, false};
}

// Out-of-bag conformal band from signed OOB errors and asymmetric quantiles.
inline ConformalBand oob_conformal_band(const BaggedKnn& model, const std::vector<double>& x,
                                        double alpha, std::size_t* skipped = nullptr) {
    std::vector<double> errors = model.oob_errors(skipped);
    if (errors.empty()) throw DataError("oob band: no out-of-bag errors");
    double point = model.predict(x);
    double lo = point + empirical_quantile(errors, std::max(alpha / 2.0, 1e-12));
    double hi = point + empirical_quantile(errors, std::min(1.0, 1.0 - alpha / 2.0));
    return {lo, hi, alpha, false};
}

inline ConformalBand oob_conformal_band(double point, const std::vector<double>& oob_errors,
                                        double alpha) {
    if (oob_errors.empty()) throw DataError("oob band: no out-of-bag errors");
    double lo = point + empirical_quantile(oob_errors, std::max(alpha / 2.0, 1e-12));
    double hi = point + empirical_quantile(oob_errors, std::min(1.0, 1.0 - alpha / 2.0));
    return {lo, hi, alpha, false};
}

// Built-in permutation-invariant refitters.
inline PointRefitter knn_refitter(std::size_t k) {
    return [k](const Dataset& train) -> Predictor {
        auto model = std::make_shared<KnnModel>(train, std::min(k, train.n_rows()));
        return [model](const std::vector<double>& x) { return knn_point(*model, x); };
    };
}

inline PointRefitter ridge_refitter(double penalty) {
    return [penalty](const Dataset& train) -> Predictor {
        auto model = std::make_shared<RidgeModel>(ridge_fit(train, penalty));
        return [model](const std::vector<double>& x) { return model->predict(x); };
    };
}

inline Refitter residual_refitter(const PointRefitter& refit) {
    return [refit](const Dataset& train) -> Scorer {
        Predictor predict = refit(train);
        return [predict](const std::vector<double>& x, double y) { return std::abs(y - predict(x)); };
    };
}

}  // namespace conformal
