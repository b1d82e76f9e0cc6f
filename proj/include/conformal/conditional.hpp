#pragma once

// Taxonomy functions and class-conditional (Mondrian) conformal prediction.

#include <map>
#include <vector>

#include "conformal/calibrate.hpp"
#include "conformal/core.hpp"
#include "conformal/scores.hpp"

namespace conformal {

// Equal-frequency binning rule over a scalar difficulty value. Edges sit at
// the j/k empirical quantiles; bin(v) is the smallest j with v <= edge_j,
// else k.
struct BinRule {
    std::vector<double> edges;  // strictly ascending, length k - 1
    int k = 1;

    int assign(double v) const {
        for (std::size_t j = 0; j < edges.size(); ++j) {
            if (v <= edges[j]) return static_cast<int>(j + 1);
        }
        return k;
    }
};

inline BinRule equal_frequency_bins(const std::vector<double>& values, int k) {
    if (values.empty()) throw DataError("equal_frequency_bins: empty sample");
    if (k < 1) throw ConfigError("equal_frequency_bins: k must be at least 1");
    if (static_cast<std::size_t>(k) > values.size())
        throw DataError("equal_frequency_bins: more bins than points");
    BinRule rule;
    rule.k = k;
    for (int j = 1; j < k; ++j) {
        double e = empirical_quantile(values, static_cast<double>(j) / k);
        // Duplicate quantiles collapse; the rule stays well defined because
        // assignment takes the smallest matching bin.
        if (rule.edges.empty() || e > rule.edges.back()) rule.edges.push_back(e);
    }
    return rule;
}

enum class TaxonomyKind { ByLabel, ByFeatureColumn, ByBinnedDifficulty };

// Feature- or label-based class assignment over instances. Difficulty-based
// taxonomies freeze a BinRule fit on calibration difficulties.
class Taxonomy {
  public:
    static Taxonomy by_label(int k) {
        Taxonomy t;
        t.kind_ = TaxonomyKind::ByLabel;
        t.k_ = k;
        return t;
    }

    static Taxonomy by_feature_column(std::size_t column, BinRule rule) {
        Taxonomy t;
        t.kind_ = TaxonomyKind::ByFeatureColumn;
        t.column_ = column;
        t.k_ = rule.k;
        t.rule_ = std::move(rule);
        return t;
    }

    static Taxonomy by_binned_difficulty(std::function<double(const std::vector<double>&)> difficulty,
                                         BinRule rule) {
        Taxonomy t;
        t.kind_ = TaxonomyKind::ByBinnedDifficulty;
        t.k_ = rule.k;
        t.rule_ = std::move(rule);
        t.difficulty_ = std::move(difficulty);
        return t;
    }

    TaxonomyKind kind() const { return kind_; }
    int k() const { return k_; }

    int assign(const std::vector<double>& features, double response) const {
        switch (kind_) {
            case TaxonomyKind::ByLabel: {
                int c = static_cast<int>(response);
                if (c < 1 || c > k_) throw DataError("taxonomy: label out of range");
                return c;
            }
            case TaxonomyKind::ByFeatureColumn:
                if (column_ >= features.size()) throw DataError("taxonomy: feature column out of range");
                return rule_.assign(features[column_]);
            case TaxonomyKind::ByBinnedDifficulty:
                return rule_.assign(difficulty_(features));
        }
        throw ConfigError("taxonomy: unknown kind");
    }

  private:
    TaxonomyKind kind_ = TaxonomyKind::ByLabel;
    int k_ = 1;
    std::size_t column_ = 0;
    BinRule rule_;
    std::function<double(const std::vector<double>&)> difficulty_;
};

// Per-class calibrations. Classes without calibration data are flagged and
// answer with an infinite critical score, which keeps the predictor valid
// under class imbalance.
class MondrianCalibration {
  public:
    MondrianCalibration(std::map<int, Calibration> strata, double alpha, std::vector<int> empty)
        : strata_(std::move(strata)), alpha_(alpha), empty_(std::move(empty)) {}

    double alpha() const { return alpha_; }
    const std::vector<int>& empty_strata() const { return empty_; }
    const std::map<int, Calibration>& strata() const { return strata_; }

    double critical_score(int cls) const {
        auto it = strata_.find(cls);
        if (it == strata_.end()) return kInf;
        return it->second.critical_score();
    }

    bool known(int cls) const { return strata_.count(cls) > 0; }

  private:
    std::map<int, Calibration> strata_;
    double alpha_;
    std::vector<int> empty_;
};

// Per-stratum critical scores. When n_classes > 0, classes in {1..n_classes}
// that have no scores are reported as empty strata.
inline MondrianCalibration mondrian_fit(const std::vector<double>& scores,
                                        const std::vector<int>& classes, double alpha,
                                        int n_classes = 0, bool strict_mode = true) {
    if (scores.size() != classes.size()) throw DataError("mondrian_fit: scores/classes length mismatch");
    std::map<int, std::vector<double>> buckets;
    for (std::size_t i = 0; i < scores.size(); ++i) buckets[classes[i]].push_back(scores[i]);
    std::map<int, Calibration> strata;
    for (auto& [cls, vals] : buckets) strata.emplace(cls, Calibration(std::move(vals), alpha, strict_mode));
    std::vector<int> empty;
    for (int c = 1; c <= n_classes; ++c)
        if (!strata.count(c)) empty.push_back(c);
    return MondrianCalibration(std::move(strata), alpha, std::move(empty));
}

enum class BandKind { Point, Normalized, Interval };

// Band construction for feature-dependent taxonomies: the class is known
// from x alone, so one stratum's critical score applies.
inline ConformalBand mondrian_predict_band(const RegressionOutputs& out, int cls,
                                           const MondrianCalibration& mcal, BandKind kind) {
    if (!mcal.known(cls) &&
        std::find(mcal.empty_strata().begin(), mcal.empty_strata().end(), cls) ==
            mcal.empty_strata().end())
        throw DataError("mondrian_predict_band: unknown class " + std::to_string(cls));
    double a_star = mcal.critical_score(cls);
    switch (kind) {
        case BandKind::Point:
            return band_point(*out.point, a_star, mcal.alpha());
        case BandKind::Normalized:
            return band_normalized(*out.point, *out.spread, a_star, mcal.alpha());
        case BandKind::Interval:
            return band_interval(*out.lower, *out.upper, a_star, mcal.alpha());
    }
    throw ConfigError("mondrian_predict_band: unknown band kind");
}

}  // namespace conformal
