#include <cmath>
#include <map>

#include "conformal/resample.hpp"
#include "doctest.h"

using namespace conformal;

namespace {

Dataset toy_classification() {
    // Three points, labels 1, 1, 2.
    return Dataset({0.0, 0.1, 5.0}, 1, {1.0, 1.0, 2.0}, TaskKind::Classification);
}

// Majority-class refitter: the score of (x, y) is 0 when y equals the
// training majority, 1 otherwise (ties favour the smaller label).
Refitter majority_refitter() {
    return [](const Dataset& train) -> Scorer {
        std::map<int, std::size_t> counts;
        for (std::size_t i = 0; i < train.n_rows(); ++i) ++counts[train.label(i)];
        int majority = 0;
        std::size_t best = 0;
        for (const auto& [cls, n] : counts) {
            if (n > best) {
                best = n;
                majority = cls;
            }
        }
        return [majority](const std::vector<double>&, double y) {
            return static_cast<int>(y) == majority ? 0.0 : 1.0;
        };
    };
}

// Literal transcription of the full transductive algorithm, used as the
// oracle against the library implementation.
bool tcp_oracle_contains(const Dataset& data, const std::vector<double>& x, int y,
                         const Refitter& refit, double alpha) {
    std::vector<double> f;
    std::vector<double> r;
    for (std::size_t i = 0; i < data.n_rows(); ++i) {
        f.insert(f.end(), data.row(i), data.row(i) + data.n_cols());
        r.push_back(data.response(i));
    }
    f.insert(f.end(), x.begin(), x.end());
    r.push_back(static_cast<double>(y));
    Dataset enhanced(f, data.n_cols(), r, data.kind());

    std::vector<double> scores;
    for (std::size_t i = 0; i < enhanced.n_rows(); ++i) {
        std::vector<std::size_t> keep;
        for (std::size_t j = 0; j < enhanced.n_rows(); ++j)
            if (j != i) keep.push_back(j);
        Scorer scorer = refit(enhanced.subset(keep));
        scores.push_back(scorer(enhanced.row_vec(i), enhanced.response(i)));
    }
    double test = scores.back();
    std::size_t geq = 0;
    for (double s : scores)
        if (s >= test) ++geq;
    double p = static_cast<double>(geq) / static_cast<double>(scores.size());
    return p >= alpha;
}

}  // namespace

TEST_CASE("transductive conformal prediction on a finite label space") {
    Dataset data = toy_classification();
    Refitter refit = majority_refitter();
    SeededRng rng(3);

    SUBCASE("matches the literal algorithm trace") {
        for (double alpha : {0.05, 0.3, 0.6}) {
            auto set = tcp_predict_set(data, {0.05}, {1, 2}, refit, alpha, false, rng);
            for (int y : {1, 2})
                CHECK(set.contains(y) == tcp_oracle_contains(data, {0.05}, y, refit, alpha));
        }
    }

    SUBCASE("alpha 0 keeps the whole label space") {
        auto set = tcp_predict_set(data, {1.0}, {1, 2}, refit, 0.0, false, rng);
        CHECK(set.labels == std::vector<int>{1, 2});
    }

    SUBCASE("alpha 1 with smoothed p-values empties the set almost surely") {
        // Continuous scores: use a residual measure over a noisy regression.
        SeededRng data_rng(5);
        std::vector<double> f(8), y(8);
        for (int i = 0; i < 8; ++i) {
            f[static_cast<std::size_t>(i)] = data_rng.uniform();
            y[static_cast<std::size_t>(i)] = data_rng.normal();
        }
        Dataset reg(f, 1, y);
        Refitter res = residual_refitter(knn_refitter(2));
        auto set = tcp_predict_set(reg, {0.5}, {1, 2, 3}, res, 1.0, true, rng);
        CHECK(set.labels.empty());
    }

    SUBCASE("reduces to the inductive p-value for training-independent measures") {
        // Fixed measure: score = |y - 10 x|; the refitter ignores its data.
        Refitter fixed = [](const Dataset&) -> Scorer {
            return [](const std::vector<double>& x, double y) { return std::abs(y - 10.0 * x[0]); };
        };
        Dataset reg({0.1, 0.2, 0.3, 0.4}, 1, {1.2, 1.9, 3.1, 4.2});
        std::vector<double> x{0.25};
        for (int y = 1; y <= 4; ++y) {
            // TCP p-value over the enhanced set equals (#{cal >= test} + 1) / (n + 1).
            double test = std::abs(static_cast<double>(y) - 2.5);
            std::vector<double> cal;
            for (std::size_t i = 0; i < reg.n_rows(); ++i)
                cal.push_back(std::abs(reg.response(i) - 10.0 * reg.row(i)[0]));
            double icp_p = p_value(cal, test);
            double alpha_below = icp_p - 1e-9;
            double alpha_above = icp_p + 1e-9;
            SeededRng r2(1);
            auto in_below = tcp_predict_set(reg, x, {y}, fixed, alpha_below, false, r2);
            auto in_above = tcp_predict_set(reg, x, {y}, fixed, alpha_above, false, r2);
            CHECK(in_below.contains(y));
            CHECK_FALSE(in_above.contains(y));
        }
    }
}

TEST_CASE("cross-conformal p-values") {
    SUBCASE("pinned two-fold arithmetic") {
        // Fold scores {1,3} and {2,4}; a candidate scoring 2 under the first
        // fold's scorer and 3 under the second gives (1 + 1 + 1) / 5 = 0.6.
        Dataset data({0.0, 0.0, 0.0, 0.0}, 1, {1.0, 3.0, 2.0, 4.0});
        FoldPlan plan;
        plan.f = 2;
        plan.fold_of = {0, 0, 1, 1};
        // The scorer trained without fold 0 is (x, y) -> y; the one trained
        // without fold 1 is (x, y) -> y + x. Calibration rows all have x = 0.
        Refitter refit = [](const Dataset& train) -> Scorer {
            bool held_fold0 = train.response(0) == 2.0;  // trained on rows {2,4}
            if (held_fold0) return [](const std::vector<double>&, double y) { return y; };
            return [](const std::vector<double>& x, double y) { return y + x[0]; };
        };
        CrossConformal ccp(data, plan, refit);
        REQUIRE(ccp.fold_scores.size() == 2);
        CHECK(ccp.fold_scores[0] == std::vector<double>{1.0, 3.0});
        CHECK(ccp.fold_scores[1] == std::vector<double>{2.0, 4.0});
        // Test point x = 1, y = 2 scores 2 and 3 under the two scorers.
        double p = ccp.p_value({1.0}, 2.0);
        CHECK(p == doctest::Approx(0.6));
    }

    SUBCASE("one fold reduces to the inductive p-value") {
        SeededRng rng(7);
        std::vector<double> f(12), y(12);
        for (int i = 0; i < 12; ++i) {
            f[static_cast<std::size_t>(i)] = rng.uniform();
            y[static_cast<std::size_t>(i)] = rng.normal();
        }
        Dataset data(f, 1, y);
        FoldPlan plan = FoldPlan::leave_one_out(12);
        Refitter refit = residual_refitter(knn_refitter(3));
        CrossConformal ccp(data, plan, refit);
        // With leave-one-out folds, every fold holds one row; the p-value
        // denominator is n + 1.
        double p = ccp.p_value({0.5}, 0.0);
        CHECK(p > 0.0);
        CHECK(p <= 1.0);
    }

    SUBCASE("avg p-value uses strict counts per fold and can exceed 1") {
        Dataset data({0.0, 1.0}, 1, {5.0, 6.0});
        FoldPlan plan;
        plan.f = 2;
        plan.fold_of = {0, 1};
        Refitter refit = [](const Dataset&) -> Scorer {
            return [](const std::vector<double>&, double y) { return y; };
        };
        CrossConformal ccp(data, plan, refit);
        // Test score 0 is below both fold scores: each fold contributes
        // (1 + 1) / 2 = 1, so the sum is 2.
        CHECK(ccp.avg_p_value({0.0}, 0.0) == doctest::Approx(2.0));
        // Test score above both: each fold contributes (0 + 1) / 2.
        CHECK(ccp.avg_p_value({0.0}, 100.0) == doctest::Approx(1.0));
    }
}

TEST_CASE("jackknife bands") {
    SUBCASE("constant residuals give point +/- r") {
        // 1-NN on colinear points: every LOO prediction misses by 1.
        Dataset data({0.0, 1.0, 2.0, 3.0}, 1, {0.0, 1.0, 2.0, 3.0});
        auto band = jackknife_band(data, knn_refitter(1), {1.5}, 0.2);
        // LOO residuals are all 1 except the endpoints which also miss by 1.
        CHECK(band.hi - band.lo == doctest::Approx(2.0));
    }

    SUBCASE("three-point 1-NN trace") {
        Dataset data({0.0, 1.0, 10.0}, 1, {0.0, 2.0, 20.0});
        // LOO: drop row 0 -> nearest to x=0 is row 1 -> pred 2, residual 2.
        // Drop row 1 -> nearest to x=1 is row 0 -> pred 0, residual 2.
        // Drop row 2 -> nearest to x=10 is row 1 -> pred 2, residual 18.
        LooFits fits(data, knn_refitter(1));
        CHECK(fits.loo_residuals[0] == doctest::Approx(2.0));
        CHECK(fits.loo_residuals[1] == doctest::Approx(2.0));
        CHECK(fits.loo_residuals[2] == doctest::Approx(18.0));
        // alpha = 0.25: level = (4/3)(3/4) = 1 -> a* = max = 18.
        auto band = jackknife_band(data, knn_refitter(1), {0.5}, 0.25);
        double full_pred = 0.0;  // 1-NN on all data at x=0.5 -> row 0 (tie to lower index)
        CHECK(band.lo == doctest::Approx(full_pred - 18.0));
        CHECK(band.hi == doctest::Approx(full_pred + 18.0));
    }

    SUBCASE("n below two is rejected") {
        Dataset tiny({0.0}, 1, {1.0});
        CHECK_THROWS_AS(jackknife_band(tiny, knn_refitter(1), {0.0}, 0.1), DataError);
    }
}

TEST_CASE("jackknife+ band from the shifted leave-one-out predictions") {
    SUBCASE("pinned arithmetic") {
        // LOO residuals (1,2,3) and LOO predictions at x (10,11,12) give
        // lower set {9,9,9} and upper set {11,13,15}; alpha = 0.25 selects
        // [9, 15]. The refitter identifies the dropped row by the training
        // response sum.
        Dataset data({0.0, 1.0, 2.0}, 1, {100.0, 200.0, 300.0});
        PointRefitter refit = [](const Dataset& train) -> Predictor {
            double sum = 0.0;
            for (std::size_t i = 0; i < train.n_rows(); ++i) sum += train.response(i);
            // sum identifies which row was dropped: 500 -> row 0, 400 -> row 1, 300 -> row 2.
            if (train.n_rows() == 3) {
                return [](const std::vector<double>&) { return 0.0; };  // full fit (unused)
            }
            if (sum == 500.0)
                return [](const std::vector<double>& x) { return x[0] > 5.0 ? 10.0 : 99.0; };
            if (sum == 400.0)
                return [](const std::vector<double>& x) { return x[0] > 5.0 ? 11.0 : 198.0; };
            return [](const std::vector<double>& x) { return x[0] > 5.0 ? 12.0 : 297.0; };
        };
        // Residuals: row 0 at x=0: 99 -> |100-99| = 1; row 1: |200-198| = 2;
        // row 2: |300-297| = 3. Predictions at x=10: 10, 11, 12.
        auto band = jackknife_plus_band(data, refit, {10.0}, 0.25);
        CHECK(band.lo == doctest::Approx(9.0));
        CHECK(band.hi == doctest::Approx(15.0));
    }

    SUBCASE("identical LOO models collapse to the jackknife band") {
        // Constant predictor: every LOO model equals the full model.
        PointRefitter constant = [](const Dataset& train) -> Predictor {
            double mean = 0.0;
            for (std::size_t i = 0; i < train.n_rows(); ++i) mean += train.response(i);
            mean /= static_cast<double>(train.n_rows());
            (void)mean;
            return [](const std::vector<double>&) { return 5.0; };
        };
        Dataset data({0.0, 1.0, 2.0, 3.0}, 1, {4.0, 5.0, 6.0, 5.5});
        auto plus = jackknife_plus_band(data, constant, {9.0}, 0.25);
        auto plain = jackknife_band(data, constant, {9.0}, 0.25);
        CHECK(plus.lo == doctest::Approx(plain.lo));
        CHECK(plus.hi == doctest::Approx(plain.hi));
    }

    SUBCASE("zero residuals span the LOO prediction range at extreme levels") {
        Dataset data({0.0, 1.0, 2.0}, 1, {7.0, 7.0, 7.0});
        auto band = jackknife_plus_band(data, knn_refitter(1), {1.0}, 0.5);
        CHECK(band.lo == doctest::Approx(7.0));
        CHECK(band.hi == doctest::Approx(7.0));
    }
}

TEST_CASE("cv+ band") {
    SeededRng rng(11);
    std::vector<double> f(10), y(10);
    for (int i = 0; i < 10; ++i) {
        f[static_cast<std::size_t>(i)] = static_cast<double>(i);
        y[static_cast<std::size_t>(i)] = 2.0 * i + rng.normal();
    }
    Dataset data(f, 1, y);

    SUBCASE("leave-one-out folds reduce to jackknife+") {
        FoldPlan loo = FoldPlan::leave_one_out(10);
        auto via_cv = cv_plus_band(data, loo, knn_refitter(2), {4.5}, 0.2);
        auto via_jk = jackknife_plus_band(data, knn_refitter(2), {4.5}, 0.2);
        CHECK(via_cv.lo == doctest::Approx(via_jk.lo));
        CHECK(via_cv.hi == doctest::Approx(via_jk.hi));
    }

    SUBCASE("single fold is rejected") {
        FoldPlan one;
        one.f = 1;
        one.fold_of.assign(10, 0);
        CHECK_THROWS_AS(cv_plus_band(data, one, knn_refitter(2), {4.5}, 0.2), DataError);
    }

    SUBCASE("two-fold band is finite and ordered") {
        SeededRng fold_rng(13);
        FoldPlan plan = FoldPlan::uniform(10, 2, fold_rng);
        auto band = cv_plus_band(data, plan, knn_refitter(2), {4.5}, 0.2);
        CHECK(band.lo <= band.hi);
        CHECK(std::isfinite(band.lo));
    }
}

TEST_CASE("out-of-bag conformal band") {
    SUBCASE("asymmetric quantiles of the signed errors") {
        std::vector<double> errors{-1.0, -1.0, -1.0, 9.0};
        auto band = oob_conformal_band(10.0, errors, 0.5);
        // q_{0.25} -> rank ceil(1) = -1; q_{0.75} -> rank ceil(3) = -1.
        CHECK(band.lo == doctest::Approx(9.0));
        CHECK(band.hi == doctest::Approx(9.0));
        auto wide = oob_conformal_band(10.0, errors, 0.4);
        // q_{0.2} -> rank 1 = -1; q_{0.8} -> rank ceil(3.2) = 4 -> 9.
        CHECK(wide.lo == doctest::Approx(9.0));
        CHECK(wide.hi == doctest::Approx(19.0));
    }

    SUBCASE("symmetric errors center on the prediction") {
        std::vector<double> errors{-2.0, -1.0, 1.0, 2.0};
        auto band = oob_conformal_band(5.0, errors, 0.5);
        CHECK(band.lo == doctest::Approx(5.0 - 2.0));
        CHECK(band.hi == doctest::Approx(5.0 + 1.0));
    }

    SUBCASE("degenerate zero errors give the point") {
        std::vector<double> zeros(6, 0.0);
        auto band = oob_conformal_band(3.0, zeros, 0.2);
        CHECK(band.lo == 3.0);
        CHECK(band.hi == 3.0);
    }

    SUBCASE("bagged model plumbing") {
        SeededRng rng(17);
        std::vector<double> f(30), y(30);
        for (int i = 0; i < 30; ++i) {
            f[static_cast<std::size_t>(i)] = static_cast<double>(i) / 3.0;
            y[static_cast<std::size_t>(i)] = f[static_cast<std::size_t>(i)] + rng.normal();
        }
        BaggedKnn model(Dataset(f, 1, y), 3, 40, rng);
        std::size_t skipped = 0;
        auto band = oob_conformal_band(model, {5.0}, 0.2, &skipped);
        CHECK(band.lo < band.hi);
    }
}

TEST_CASE("jackknife+ reaches the 1 - 2 alpha guarantee") {
    SeededRng rng(19);
    const double alpha = 0.2;
    const int reps = 400;
    int covered = 0;
    for (int r = 0; r < reps; ++r) {
        auto sub = rng.substream(static_cast<std::uint64_t>(r));
        std::vector<double> f(15), y(15);
        for (int i = 0; i < 15; ++i) {
            f[static_cast<std::size_t>(i)] = sub.uniform(0.0, 4.0);
            y[static_cast<std::size_t>(i)] = std::sin(f[static_cast<std::size_t>(i)]) + 0.3 * sub.normal();
        }
        Dataset data(f, 1, y);
        double xq = sub.uniform(0.0, 4.0);
        double truth = std::sin(xq) + 0.3 * sub.normal();
        auto band = jackknife_plus_band(data, knn_refitter(2), {xq}, alpha);
        if (band.contains(truth)) ++covered;
    }
    double cov = static_cast<double>(covered) / reps;
    double se = std::sqrt(0.25 / reps);
    CHECK(cov >= 1.0 - 2.0 * alpha - 3.0 * se);
}

TEST_CASE("ccp grid set lies inside the cv+ band with leave-one-out folds") {
    SeededRng rng(23);
    for (int trial = 0; trial < 25; ++trial) {
        auto sub = rng.substream(static_cast<std::uint64_t>(trial));
        std::size_t n = 8 + sub.uniform_index(5);
        std::vector<double> f(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            f[i] = sub.uniform(-1.0, 1.0);
            y[i] = 2.0 * f[i] + 0.5 * sub.normal();
        }
        Dataset data(f, 1, y);
        // Containment holds almost surely; keep alpha strictly between the
        // p-value atoms k / (n + 1) so boundary ties cannot occur.
        double alpha = 2.5 / static_cast<double>(n + 1);
        FoldPlan loo = FoldPlan::leave_one_out(n);
        Refitter score_refit = residual_refitter(knn_refitter(2));
        CrossConformal ccp(data, loo, score_refit);
        auto band = cv_plus_band(data, loo, knn_refitter(2), {0.3}, alpha);
        std::vector<double> accepted;
        std::vector<double> grid;
        for (double v = -6.0; v <= 6.0; v += 0.05) grid.push_back(v);
        ccp.predict_grid({0.3}, grid, alpha, &accepted);
        for (double v : accepted) {
            CHECK(v >= band.lo - 1e-9);
            CHECK(v <= band.hi + 1e-9);
        }
    }
}
