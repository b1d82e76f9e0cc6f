#include <array>
#include <cmath>

#include "conformal/conditional.hpp"
#include "doctest.h"

using namespace conformal;

TEST_CASE("equal-frequency bins") {
    SUBCASE("six evenly ranked values into three bins") {
        std::vector<double> v{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
        BinRule rule = equal_frequency_bins(v, 3);
        REQUIRE(rule.edges.size() == 2);
        CHECK(rule.edges[0] == doctest::Approx(0.2));
        CHECK(rule.edges[1] == doctest::Approx(0.4));
        CHECK(rule.assign(0.1) == 1);
        CHECK(rule.assign(0.2) == 1);
        CHECK(rule.assign(0.3) == 2);
        CHECK(rule.assign(0.4) == 2);
        CHECK(rule.assign(0.5) == 3);
        CHECK(rule.assign(0.6) == 3);
    }

    SUBCASE("single bin has no edges") {
        BinRule rule = equal_frequency_bins({3.0, 1.0, 2.0}, 1);
        CHECK(rule.edges.empty());
        CHECK(rule.assign(-100.0) == 1);
        CHECK(rule.assign(100.0) == 1);
    }

    SUBCASE("ties occupy the smallest matching bin") {
        BinRule rule = equal_frequency_bins({1.0, 1.0, 1.0, 2.0}, 2);
        REQUIRE(rule.edges.size() == 1);
        CHECK(rule.edges[0] == 1.0);
        CHECK(rule.assign(1.0) == 1);
        CHECK(rule.assign(2.0) == 2);
    }

    SUBCASE("more bins than points") {
        CHECK_THROWS_AS(equal_frequency_bins({1.0, 2.0}, 3), DataError);
    }

    SUBCASE("bin sizes are balanced for distinct values when k divides n") {
        SeededRng rng(17);
        std::vector<double> v(120);
        for (double& x : v) x = rng.normal();
        BinRule rule = equal_frequency_bins(v, 4);
        std::vector<int> counts(5, 0);
        for (double x : v) ++counts[static_cast<std::size_t>(rule.assign(x))];
        for (int b = 1; b <= 4; ++b) CHECK(counts[static_cast<std::size_t>(b)] == 30);
    }
}

TEST_CASE("mondrian fit produces per-stratum critical scores") {
    SUBCASE("two classes with equal-level strata") {
        std::vector<double> scores;
        std::vector<int> classes;
        for (int i = 1; i <= 9; ++i) {
            scores.push_back(static_cast<double>(i));
            classes.push_back(1);
        }
        for (int i = 1; i <= 9; ++i) {
            scores.push_back(10.0 * i);
            classes.push_back(2);
        }
        auto mcal = mondrian_fit(scores, classes, 0.1);
        CHECK(mcal.critical_score(1) == 9.0);
        CHECK(mcal.critical_score(2) == 90.0);
    }

    SUBCASE("single class reduces to the marginal critical score") {
        std::vector<double> scores{1.0, 2.0, 3.0, 4.0, 5.0};
        std::vector<int> classes(5, 1);
        auto mcal = mondrian_fit(scores, classes, 0.3);
        Calibration plain(scores, 0.3);
        CHECK(mcal.critical_score(1) == plain.critical_score());
    }

    SUBCASE("one score at alpha 0.5 gives that score") {
        auto mcal = mondrian_fit({7.5}, {1}, 0.5);
        CHECK(mcal.critical_score(1) == 7.5);
    }

    SUBCASE("empty strata are flagged and answer with infinity") {
        auto mcal = mondrian_fit({1.0, 2.0}, {1, 1}, 0.1, 3);
        CHECK(mcal.empty_strata() == std::vector<int>{2, 3});
        CHECK(std::isinf(mcal.critical_score(2)));
    }

    SUBCASE("length mismatch") {
        CHECK_THROWS_AS(mondrian_fit({1.0}, {1, 2}, 0.1), DataError);
    }
}

TEST_CASE("mondrian band prediction per class") {
    std::vector<double> scores;
    std::vector<int> classes;
    for (int i = 1; i <= 9; ++i) {
        scores.push_back(static_cast<double>(i));
        classes.push_back(1);
        scores.push_back(10.0 * i);
        classes.push_back(2);
    }
    auto mcal = mondrian_fit(scores, classes, 0.1);
    auto out = RegressionOutputs::from_point(0.0);
    auto band_a = mondrian_predict_band(out, 1, mcal, BandKind::Point);
    CHECK(band_a.lo == -9.0);
    CHECK(band_a.hi == 9.0);
    auto band_b = mondrian_predict_band(out, 2, mcal, BandKind::Point);
    CHECK(band_b.lo == -90.0);
    CHECK(band_b.hi == 90.0);
    CHECK(band_b.width() > band_a.width());
    CHECK_THROWS_AS(mondrian_predict_band(out, 5, mcal, BandKind::Point), DataError);
}

TEST_CASE("conditional validity of the mondrian predictor") {
    // Two classes with very different score scales; per-class coverage must
    // reach 1 - alpha within Monte Carlo error.
    SeededRng rng(55);
    const double alpha = 0.2;
    const int reps = 2500;
    int covered[2] = {0, 0};
    int totals[2] = {0, 0};
    for (int r = 0; r < reps; ++r) {
        auto sub = rng.substream(static_cast<std::uint64_t>(r));
        std::vector<double> scores;
        std::vector<int> classes;
        for (int i = 0; i < 40; ++i) {
            int c = (sub.uniform() < 0.5) ? 1 : 2;
            scores.push_back(std::abs(sub.normal()) * (c == 1 ? 1.0 : 25.0));
            classes.push_back(c);
        }
        auto mcal = mondrian_fit(scores, classes, alpha);
        int c = (sub.uniform() < 0.5) ? 1 : 2;
        double test = std::abs(sub.normal()) * (c == 1 ? 1.0 : 25.0);
        ++totals[c - 1];
        if (test <= mcal.critical_score(c)) ++covered[c - 1];
    }
    for (int c = 0; c < 2; ++c) {
        double cov = static_cast<double>(covered[c]) / totals[c];
        double se = std::sqrt(0.25 / totals[c]);
        CHECK(cov >= 1.0 - alpha - 3.0 * se);
    }
}

TEST_CASE("marginal predictor is conditionally valid for pivotal scores") {
    // Location-scale data with the spread-normalized score: the score law
    // is identical across spread bins, so the plain marginal predictor
    // already covers at the nominal rate in every bin.
    SeededRng rng(77);
    const double alpha = 0.1;
    const std::size_t n_cal = 4000, n_test = 20000;

    auto draw = [](SeededRng& r, double& sigma_out) {
        double x = r.uniform();
        double sigma = 0.5 + 2.0 * x;
        sigma_out = sigma;
        return sigma * r.normal();  // centred response; score = |y| / sigma
    };

    std::vector<double> cal_scores(n_cal), cal_sigma(n_cal);
    for (std::size_t i = 0; i < n_cal; ++i) {
        double sigma;
        double y = draw(rng, sigma);
        cal_scores[i] = std::abs(y) / sigma;
        cal_sigma[i] = sigma;
    }
    double a_star = Calibration(cal_scores, alpha).critical_score();
    BinRule bins = equal_frequency_bins(cal_sigma, 3);

    std::array<std::size_t, 4> hits{0, 0, 0, 0}, counts{0, 0, 0, 0};
    for (std::size_t i = 0; i < n_test; ++i) {
        double sigma;
        double y = draw(rng, sigma);
        int bin = bins.assign(sigma);
        ++counts[static_cast<std::size_t>(bin)];
        if (std::abs(y) / sigma <= a_star) ++hits[static_cast<std::size_t>(bin)];
    }
    for (int b = 1; b <= 3; ++b) {
        double cov = static_cast<double>(hits[static_cast<std::size_t>(b)]) /
                     static_cast<double>(counts[static_cast<std::size_t>(b)]);
        double se = std::sqrt(0.09 / static_cast<double>(counts[static_cast<std::size_t>(b)]));
        CHECK(std::abs(cov - (1.0 - alpha)) <= 3.0 * se + 0.01);
    }
}

TEST_CASE("taxonomies assign classes") {
    SUBCASE("by label") {
        Taxonomy tax = Taxonomy::by_label(3);
        CHECK(tax.assign({0.0}, 2.0) == 2);
        CHECK_THROWS_AS(tax.assign({0.0}, 9.0), DataError);
    }

    SUBCASE("by feature column") {
        BinRule rule = equal_frequency_bins({0.0, 1.0, 2.0, 3.0}, 2);
        Taxonomy tax = Taxonomy::by_feature_column(1, rule);
        CHECK(tax.assign({99.0, 0.5}, 0.0) == 1);
        CHECK(tax.assign({99.0, 2.5}, 0.0) == 2);
    }

    SUBCASE("by binned difficulty") {
        BinRule rule = equal_frequency_bins({1.0, 2.0, 3.0, 4.0}, 2);
        Taxonomy tax = Taxonomy::by_binned_difficulty(
            [](const std::vector<double>& x) { return x[0] * 2.0; }, rule);
        CHECK(tax.assign({0.5}, 0.0) == 1);
        CHECK(tax.assign({2.0}, 0.0) == 2);
    }
}
