#pragma once

// Conformal test martingales for online exchangeability monitoring. Wealth
// is tracked in log space; the mixture martingale needs only the p-value
// count and the sum of log p-values, since the integrand factorizes as
// eps^n exp((eps - 1) sum log p).

#include <cmath>
#include <vector>

#include "conformal/calibrate.hpp"
#include "conformal/core.hpp"

namespace conformal {

// One betting step of the eps-power martingale: wealth * eps * p^(eps - 1).
inline double power_step(double wealth, double p, double epsilon) {
    if (p <= 0.0) throw NumericError("power_step: p must be positive");
    if (epsilon <= 0.0 || epsilon > 1.0) throw ConfigError("power_step: epsilon must lie in (0, 1]");
    return wealth * epsilon * std::pow(p, epsilon - 1.0);
}

namespace detail {

// log integrand of the mixture at eps, given n steps with S = sum log p.
inline double mixture_log_integrand(double eps, double n, double sum_log_p) {
    if (eps <= 0.0) return -kInf;
    return n * std::log(eps) + (eps - 1.0) * sum_log_p;
}

// Composite Simpson of exp(log_f) over [0, 1] on n_intervals panels,
// stabilized by the running maximum of the log integrand.
inline double mixture_simpson(double n, double sum_log_p, std::size_t n_intervals) {
    double h = 1.0 / static_cast<double>(n_intervals);
    double log_max = -kInf;
    for (std::size_t i = 0; i <= n_intervals; ++i) {
        double lf = mixture_log_integrand(static_cast<double>(i) * h, n, sum_log_p);
        if (lf > log_max) log_max = lf;
    }
    if (log_max == -kInf) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i <= n_intervals; ++i) {
        double lf = mixture_log_integrand(static_cast<double>(i) * h, n, sum_log_p);
        double w = (i == 0 || i == n_intervals) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
        sum += w * std::exp(lf - log_max);
    }
    return std::exp(log_max) * sum * h / 3.0;
}

inline double mixture_wealth_from_stats(double n, double sum_log_p) {
    if (n == 0.0) return 1.0;
    std::size_t grid = 1000;  // 1001 points
    double value = mixture_simpson(n, sum_log_p, grid);
    for (int i = 0; i < 8; ++i) {
        grid *= 2;
        double refined = mixture_simpson(n, sum_log_p, grid);
        double denom = std::max(std::abs(refined), 1e-300);
        if (std::abs(refined - value) / denom < 1e-6) return refined;
        value = refined;
    }
    return value;
}

}  // namespace detail

// Mixture-of-power-martingales wealth int_0^1 prod eps p_i^(eps-1) d eps.
inline double mixture_wealth(const std::vector<double>& p_history) {
    double sum_log_p = 0.0;
    for (double p : p_history) {
        if (p <= 0.0) throw NumericError("mixture_wealth: p must be positive");
        sum_log_p += std::log(p);
    }
    return detail::mixture_wealth_from_stats(static_cast<double>(p_history.size()), sum_log_p);
}

enum class Betting { Power, Mixture };

struct BettingConfig {
    Betting kind = Betting::Mixture;
    double epsilon = 0.5;  // power martingale only
};

// Running wealth state. Mixture wealth is recomputed from (n, sum log p);
// power wealth accumulates in log space.
class MartingaleState {
  public:
    MartingaleState(BettingConfig betting, double threshold)
        : betting_(betting), threshold_(threshold) {
        if (threshold_ <= 0.0) throw ConfigError("martingale: threshold must be positive");
    }

    void update(double p) {
        if (p <= 0.0) throw NumericError("martingale: p must be positive");
        ++history_len_;
        sum_log_p_ += std::log(p);
        if (betting_.kind == Betting::Power)
            log_wealth_ += std::log(betting_.epsilon) + (betting_.epsilon - 1.0) * std::log(p);
        if (wealth() >= threshold_) alerted_ = true;
    }

    double wealth() const {
        if (betting_.kind == Betting::Power) return std::exp(log_wealth_);
        return detail::mixture_wealth_from_stats(static_cast<double>(history_len_), sum_log_p_);
    }

    // Cheap upper bound: the integrand maximum dominates the mixture
    // integral over [0, 1]; exact wealth is only needed when this crosses
    // the threshold.
    double wealth_upper_bound() const {
        if (betting_.kind == Betting::Power) return std::exp(log_wealth_);
        if (history_len_ == 0) return 1.0;
        double n = static_cast<double>(history_len_);
        double eps_star = sum_log_p_ < 0.0 ? std::min(1.0, -n / sum_log_p_) : 1.0;
        return std::exp(detail::mixture_log_integrand(eps_star, n, sum_log_p_));
    }

    bool crossed(double threshold) const {
        if (wealth_upper_bound() < threshold) return false;
        return wealth() >= threshold;
    }

    std::size_t history_len() const { return history_len_; }
    double threshold() const { return threshold_; }
    bool alerted() const { return alerted_; }

  private:
    BettingConfig betting_;
    double threshold_;
    std::size_t history_len_ = 0;
    double sum_log_p_ = 0.0;
    double log_wealth_ = 0.0;  // power betting only
    bool alerted_ = false;
};

struct MonitorEvent {
    double p = 0.0;
    double wealth = 0.0;
    bool alert = false;
};

struct MonitorConfig {
    BettingConfig betting;
    double threshold = 20.0;
    // Appending processed scores dilutes detection, so the calibration set
    // stays fixed by default.
    bool online_append = false;
};

// Processes a stream of nonconformity scores against a calibration set:
// smoothed p-value, betting update, latched alert once wealth reaches the
// threshold. Monitoring continues after an alert.
inline std::vector<MonitorEvent> monitor(const std::vector<double>& stream_scores,
                                         std::vector<double> cal_scores, const MonitorConfig& config,
                                         SeededRng& rng) {
    if (cal_scores.empty()) throw DataError("monitor: empty calibration");
    Calibration cal(std::move(cal_scores), 0.0);
    MartingaleState state(config.betting, config.threshold);
    std::vector<MonitorEvent> events;
    events.reserve(stream_scores.size());
    bool latched = state.wealth() >= config.threshold;  // threshold <= 1 alerts immediately
    for (double score : stream_scores) {
        double p = smoothed_p_value(cal, score, rng);
        state.update(p);
        double w = state.wealth();
        if (w >= config.threshold) latched = true;
        events.push_back({p, w, latched});
        if (config.online_append) cal = cal.online_append(score);
    }
    return events;
}

}  // namespace conformal
