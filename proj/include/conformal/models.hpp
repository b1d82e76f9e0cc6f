#pragma once

// Deterministic baseline predictors feeding the scorers: k-nearest
// neighbours (point, quantile, mean-variance, class probabilities), ridge
// regression, a synthetic oracle and a bagged k-NN ensemble with out-of-bag
// bookkeeping.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "conformal/core.hpp"
#include "conformal/scores.hpp"

namespace conformal {

// Stored-rows k-NN with Euclidean distance; ties in distance are broken by
// ascending row index. Features are assumed pre-standardized by the caller.
class KnnModel {
  public:
    KnnModel(Dataset data, std::size_t k) : data_(std::move(data)), k_(k) {
        if (k_ < 1 || k_ > data_.n_rows()) throw ConfigError("knn: k must lie in [1, n]");
    }

    std::size_t k() const { return k_; }
    const Dataset& data() const { return data_; }

    std::vector<std::size_t> neighbors(const std::vector<double>& x) const {
        if (x.size() != data_.n_cols()) throw DataError("knn: query dimension mismatch");
        std::vector<std::pair<double, std::size_t>> dist;
        dist.reserve(data_.n_rows());
        for (std::size_t i = 0; i < data_.n_rows(); ++i) {
            const double* row = data_.row(i);
            double d2 = 0.0;
            for (std::size_t j = 0; j < x.size(); ++j) {
                double diff = row[j] - x[j];
                d2 += diff * diff;
            }
            dist.emplace_back(d2, i);
        }
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k_), dist.end());
        std::vector<std::size_t> out(k_);
        for (std::size_t i = 0; i < k_; ++i) out[i] = dist[i].second;
        return out;
    }

    std::vector<double> neighbor_responses(const std::vector<double>& x) const {
        std::vector<double> ys;
        ys.reserve(k_);
        for (std::size_t i : neighbors(x)) ys.push_back(data_.response(i));
        return ys;
    }

  private:
    Dataset data_;
    std::size_t k_;
};

inline double knn_point(const KnnModel& model, const std::vector<double>& x) {
    auto ys = model.neighbor_responses(x);
    return std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(ys.size());
}

inline double knn_quantile(const KnnModel& model, const std::vector<double>& x, double level) {
    return empirical_quantile(model.neighbor_responses(x), level);
}

// Neighbor mean and population standard deviation, floored at sigma_floor.
inline std::pair<double, double> knn_meanvar(const KnnModel& model, const std::vector<double>& x,
                                             double sigma_floor = 1e-6) {
    if (model.k() < 2) throw ConfigError("knn_meanvar: needs k >= 2");
    auto ys = model.neighbor_responses(x);
    double mu = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(ys.size());
    double ss = 0.0;
    for (double y : ys) ss += (y - mu) * (y - mu);
    double sigma = std::sqrt(ss / static_cast<double>(ys.size()));
    return {mu, std::max(sigma, sigma_floor)};
}

inline ClassProbs knn_class_probs(const KnnModel& model, const std::vector<double>& x, int k_classes,
                                  double laplace = 0.0) {
    if (laplace < 0.0) throw ConfigError("knn_class_probs: laplace must be nonnegative");
    std::vector<double> counts(static_cast<std::size_t>(k_classes), 0.0);
    for (double y : model.neighbor_responses(x)) {
        int c = static_cast<int>(y);
        if (c < 1 || c > k_classes) throw DataError("knn_class_probs: label out of range");
        counts[static_cast<std::size_t>(c - 1)] += 1.0;
    }
    double denom = static_cast<double>(model.k()) + laplace * k_classes;
    for (double& v : counts) v = (v + laplace) / denom;
    return ClassProbs(std::move(counts));
}

// Ridge regression on centered data; the intercept is unpenalized.
class RidgeModel {
  public:
    RidgeModel(double intercept, std::vector<double> weights, double penalty)
        : intercept_(intercept), weights_(std::move(weights)), penalty_(penalty) {}

    double predict(const std::vector<double>& x) const {
        if (x.size() != weights_.size()) throw DataError("ridge: query dimension mismatch");
        double v = intercept_;
        for (std::size_t j = 0; j < x.size(); ++j) v += weights_[j] * x[j];
        return v;
    }

    double intercept() const { return intercept_; }
    const std::vector<double>& weights() const { return weights_; }
    double penalty() const { return penalty_; }

  private:
    double intercept_;
    std::vector<double> weights_;
    double penalty_;
};

inline RidgeModel ridge_fit(const Dataset& data, double penalty) {
    if (penalty < 0.0) throw ConfigError("ridge_fit: penalty must be nonnegative");
    std::size_t n = data.n_rows();
    std::size_t d = data.n_cols();
    if (n == 0) throw DataError("ridge_fit: empty dataset");

    std::vector<double> xbar(d, 0.0);
    double ybar = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = data.row(i);
        for (std::size_t j = 0; j < d; ++j) xbar[j] += row[j];
        ybar += data.response(i);
    }
    for (double& v : xbar) v /= static_cast<double>(n);
    ybar /= static_cast<double>(n);

    // Normal equations (X'X + penalty I) w = X'y on centered data.
    std::vector<double> gram(d * d, 0.0);
    std::vector<double> rhs(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = data.row(i);
        double yc = data.response(i) - ybar;
        for (std::size_t a = 0; a < d; ++a) {
            double xa = row[a] - xbar[a];
            rhs[a] += xa * yc;
            for (std::size_t b = a; b < d; ++b) gram[a * d + b] += xa * (row[b] - xbar[b]);
        }
    }
    for (std::size_t a = 0; a < d; ++a) {
        gram[a * d + a] += penalty;
        for (std::size_t b = 0; b < a; ++b) gram[a * d + b] = gram[b * d + a];
    }

    // Gaussian elimination with partial pivoting.
    std::vector<double> w = rhs;
    std::vector<double> m = gram;
    for (std::size_t col = 0; col < d; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < d; ++r)
            if (std::abs(m[r * d + col]) > std::abs(m[piv * d + col])) piv = r;
        if (std::abs(m[piv * d + col]) < 1e-12)
            throw NumericError("ridge_fit: singular system; use a penalty > 0");
        if (piv != col) {
            for (std::size_t j = 0; j < d; ++j) std::swap(m[piv * d + j], m[col * d + j]);
            std::swap(w[piv], w[col]);
        }
        for (std::size_t r = col + 1; r < d; ++r) {
            double f = m[r * d + col] / m[col * d + col];
            for (std::size_t j = col; j < d; ++j) m[r * d + j] -= f * m[col * d + j];
            w[r] -= f * w[col];
        }
    }
    for (std::size_t col = d; col-- > 0;) {
        for (std::size_t j = col + 1; j < d; ++j) w[col] -= m[col * d + j] * w[j];
        w[col] /= m[col * d + col];
    }

    double intercept = ybar;
    for (std::size_t j = 0; j < d; ++j) intercept -= w[j] * xbar[j];
    return RidgeModel(intercept, std::move(w), penalty);
}

inline double ridge_predict(const RidgeModel& model, const std::vector<double>& x) {
    return model.predict(x);
}

// True mean and spread functions of a synthetic generator.
struct OracleModel {
    std::function<double(const std::vector<double>&)> mu;
    std::function<double(const std::vector<double>&)> sigma;
};

inline RegressionOutputs oracle_outputs(const OracleModel& model, const std::vector<double>& x) {
    double s = model.sigma(x);
    if (s <= 0.0) throw DataError("oracle_outputs: nonpositive spread");
    return RegressionOutputs::from_mean_spread(model.mu(x), s);
}

// Bootstrap-bagged k-NN tracking per-row out-of-bag membership, for OOB
// conformal calibration.
class BaggedKnn {
  public:
    BaggedKnn(const Dataset& data, std::size_t k, std::size_t n_bags, SeededRng& rng)
        : data_(data), k_(k) {
        if (n_bags < 1) throw ConfigError("bagged knn: need at least one bag");
        std::size_t n = data_.n_rows();
        bags_.reserve(n_bags);
        in_bag_.assign(n_bags, std::vector<bool>(n, false));
        for (std::size_t b = 0; b < n_bags; ++b) {
            std::vector<std::size_t> rows(n);
            for (std::size_t i = 0; i < n; ++i) {
                std::size_t r = rng.uniform_index(n);
                rows[i] = r;
                in_bag_[b][r] = true;
            }
            Dataset sub = data_.subset(rows);
            bags_.emplace_back(std::move(sub), std::min(k_, rows.size()));
        }
    }

    double predict(const std::vector<double>& x) const {
        double sum = 0.0;
        for (const auto& m : bags_) sum += knn_point(m, x);
        return sum / static_cast<double>(bags_.size());
    }

    // Mean prediction of the bags that did not train on row i. Returns false
    // when every bag contains the row.
    bool oob_predict(std::size_t i, double& out) const {
        double sum = 0.0;
        std::size_t cnt = 0;
        for (std::size_t b = 0; b < bags_.size(); ++b) {
            if (in_bag_[b][i]) continue;
            sum += knn_point(bags_[b], data_.row_vec(i));
            ++cnt;
        }
        if (cnt == 0) return false;
        out = sum / static_cast<double>(cnt);
        return true;
    }

    // Signed OOB errors y_i - oob_prediction_i; rows with no OOB bag are
    // skipped and counted.
    std::vector<double> oob_errors(std::size_t* skipped = nullptr) const {
        std::vector<double> errors;
        std::size_t no_oob = 0;
        for (std::size_t i = 0; i < data_.n_rows(); ++i) {
            double pred;
            if (oob_predict(i, pred)) {
                errors.push_back(data_.response(i) - pred);
            } else {
                ++no_oob;
            }
        }
        if (skipped) *skipped = no_oob;
        return errors;
    }

    const Dataset& data() const { return data_; }

  private:
    Dataset data_;
    std::size_t k_;
    std::vector<KnnModel> bags_;
    std::vector<std::vector<bool>> in_bag_;
};

}  // namespace conformal
