#pragma once

// Conditional log-normal inter-arrival model: r_i = t_i - t_{i-1} (t_0 = 0) is
// log-normal with parameters selected by the previous mark u_{i-1}; the first
// gap of a sequence uses the global pair.

#include <cmath>
#include <vector>

#include "dmtpp/error.hpp"
#include "dmtpp/events.hpp"
#include "dmtpp/special.hpp"

namespace dmtpp {

inline constexpr double kVarianceFloor = 1e-6;

struct TimeParams {
    std::vector<double> mu;  ///< per previous mark, log-gap mean
    std::vector<double> var; ///< per previous mark, log-gap variance
    double mu0 = 0.0;
    double var0 = 1.0;
    bool survival_enabled = true;

    [[nodiscard]] int U() const noexcept { return static_cast<int>(mu.size()); }
    [[nodiscard]] double mu_for(int prev_mark) const { return prev_mark < 0 ? mu0 : mu.at(prev_mark); }
    [[nodiscard]] double var_for(int prev_mark) const { return prev_mark < 0 ? var0 : var.at(prev_mark); }
};

/// Group-wise Gaussian MLE on log gaps, population variance, floored.
/// Zero gaps (an event exactly at the origin) carry no information and are skipped.
inline TimeParams fit_time_params(const Dataset& train) {
    const auto U = static_cast<std::size_t>(train.U);
    std::vector<double> sum(U, 0.0), sum_sq(U, 0.0);
    std::vector<std::size_t> count(U, 0);
    double gsum = 0.0, gsum_sq = 0.0;
    std::size_t gcount = 0;

    // Two-pass means keep the variance exact for near-constant groups.
    auto for_each_gap = [&](auto&& fn) {
        for (const auto& s : train.sequences) {
            double prev_t = 0.0;
            int prev_u = -1;
            for (const auto& e : s.events) {
                const double r = e.t - prev_t;
                if (r > 0.0) fn(prev_u, std::log(r));
                prev_t = e.t;
                prev_u = e.u;
            }
        }
    };
    for_each_gap([&](int u, double lr) {
        if (u >= 0) {
            sum[u] += lr;
            ++count[u];
        }
        gsum += lr;
        ++gcount;
    });
    if (gcount == 0) throw DataError("training data has no positive inter-arrival gaps");

    TimeParams tp;
    tp.mu.assign(U, 0.0);
    tp.var.assign(U, 0.0);
    tp.mu0 = gsum / static_cast<double>(gcount);
    for (std::size_t u = 0; u < U; ++u) {
        if (count[u] > 0) tp.mu[u] = sum[u] / static_cast<double>(count[u]);
    }
    for_each_gap([&](int u, double lr) {
        if (u >= 0) {
            const double d = lr - tp.mu[u];
            sum_sq[u] += d * d;
        }
        const double d0 = lr - tp.mu0;
        gsum_sq += d0 * d0;
    });
    tp.var0 = std::max(gsum_sq / static_cast<double>(gcount), kVarianceFloor);
    for (std::size_t u = 0; u < U; ++u) {
        if (count[u] > 0) {
            tp.var[u] = std::max(sum_sq[u] / static_cast<double>(count[u]), kVarianceFloor);
        } else {
            tp.mu[u] = tp.mu0;
            tp.var[u] = tp.var0;
        }
    }
    return tp;
}

/// log g over every gap, plus the log-survival term past the last event when enabled.
inline double time_loglik(const TimeParams& tp, const EventSequence& seq) {
    double ll = 0.0;
    double prev_t = 0.0;
    int prev_u = -1;
    for (std::size_t i = 0; i < seq.events.size(); ++i) {
        const auto& e = seq.events[i];
        const double r = e.t - prev_t;
        if (i == 0 && r == 0.0) {
            // event at the origin: no gap to score
        } else {
            if (!(r > 0.0)) throw NumericError("non-positive gap at event " + std::to_string(i + 1));
            ll += special::lognormal_log_pdf(r, tp.mu_for(prev_u), tp.var_for(prev_u));
        }
        prev_t = e.t;
        prev_u = e.u;
    }
    if (tp.survival_enabled) {
        ll += special::lognormal_log_sf(seq.T - prev_t, tp.mu_for(prev_u), tp.var_for(prev_u));
    }
    return ll;
}

/// Mode of the log-normal gap added to the last event time.
inline double predict_next_time(const TimeParams& tp, int last_mark, double last_time) {
    return last_time + std::exp(tp.mu_for(last_mark) - tp.var_for(last_mark));
}

} // namespace dmtpp
