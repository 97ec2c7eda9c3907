#pragma once

// Predictive metrics: mean log-likelihood (mark-only and joint), RMSE of
// relative next-gap errors, support-weighted F1, and Spearman rank correlation.
// Per-event predictions condition on the true history (teacher forcing).

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmtpp/error.hpp"
#include "dmtpp/events.hpp"
#include "dmtpp/markmodel.hpp"
#include "dmtpp/timemodel.hpp"

namespace dmtpp {

// ---------------------------------------------------------------------------
// RMSE

/// epsilon = (t* - t_i) / (t_{i+1} - t_i) - 1, or nullopt for a zero actual gap.
inline std::optional<double> relative_gap_error(double t_pred, double t_prev, double t_next) {
    const double gap = t_next - t_prev;
    if (gap == 0.0) return std::nullopt;
    return (t_pred - t_prev) / gap - 1.0;
}

inline double rmse_from_errors(std::span<const double> eps) {
    if (eps.empty()) throw DataError("rmse: no evaluable events");
    double ss = 0.0;
    for (double e : eps) ss += e * e;
    return std::sqrt(ss / static_cast<double>(eps.size()));
}

struct RmseResult {
    double rmse = 0.0;
    std::size_t used = 0;
    std::size_t excluded = 0; ///< events whose actual next gap is zero
};

/// predicted[s][i] is the predicted time of event i + 1 of sequence s.
inline RmseResult rmse(const std::vector<std::vector<double>>& predicted, const Dataset& actual) {
    if (predicted.size() != actual.sequences.size()) throw DataError("rmse: prediction/sequence count mismatch");
    std::vector<double> eps;
    RmseResult r;
    for (std::size_t s = 0; s < predicted.size(); ++s) {
        const auto& ev = actual.sequences[s].events;
        const std::size_t n = ev.empty() ? 0 : ev.size() - 1;
        if (predicted[s].size() != n) throw DataError("rmse: predictions not aligned with sequence " + std::to_string(s + 1));
        for (std::size_t i = 0; i < n; ++i) {
            if (const auto e = relative_gap_error(predicted[s][i], ev[i].t, ev[i + 1].t)) {
                eps.push_back(*e);
            } else {
                ++r.excluded;
            }
        }
    }
    r.used = eps.size();
    r.rmse = rmse_from_errors(eps);
    return r;
}

// ---------------------------------------------------------------------------
// F1

namespace detail {

inline std::vector<double> per_class_f1(std::span<const int> predicted, std::span<const int> actual, int U,
                                        std::vector<std::size_t>& support) {
    if (predicted.size() != actual.size()) throw DataError("f1: label lists differ in length");
    if (actual.empty()) throw DataError("f1: empty input");
    const auto n = static_cast<std::size_t>(U);
    std::vector<std::size_t> tp(n, 0), fp(n, 0), fn(n, 0);
    support.assign(n, 0);
    for (std::size_t i = 0; i < actual.size(); ++i) {
        const int a = actual[i], p = predicted[i];
        if (a < 0 || a >= U || p < 0 || p >= U) throw DataError("f1: label outside the mark space");
        ++support[static_cast<std::size_t>(a)];
        if (a == p) {
            ++tp[static_cast<std::size_t>(a)];
        } else {
            ++fp[static_cast<std::size_t>(p)];
            ++fn[static_cast<std::size_t>(a)];
        }
    }
    std::vector<double> f1(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        const double denom = 2.0 * static_cast<double>(tp[k]) + static_cast<double>(fp[k] + fn[k]);
        if (denom > 0.0) f1[k] = 2.0 * static_cast<double>(tp[k]) / denom;
    }
    return f1;
}

} // namespace detail

/// Per-class F1 averaged with weights class support / total, in percent.
inline double f1_weighted(std::span<const int> predicted, std::span<const int> actual, int U) {
    std::vector<std::size_t> support;
    const auto f1 = detail::per_class_f1(predicted, actual, U, support);
    double acc = 0.0;
    for (std::size_t k = 0; k < f1.size(); ++k) acc += f1[k] * static_cast<double>(support[k]);
    return 100.0 * acc / static_cast<double>(actual.size());
}

/// Unweighted mean over classes that occur in either list, in percent.
inline double f1_macro(std::span<const int> predicted, std::span<const int> actual, int U) {
    std::vector<std::size_t> support;
    const auto f1 = detail::per_class_f1(predicted, actual, U, support);
    std::vector<char> present(f1.size(), 0);
    for (int a : actual) present[static_cast<std::size_t>(a)] = 1;
    for (int p : predicted) present[static_cast<std::size_t>(p)] = 1;
    double acc = 0.0;
    int classes = 0;
    for (std::size_t k = 0; k < f1.size(); ++k) {
        if (!present[k]) continue;
        acc += f1[k];
        ++classes;
    }
    return 100.0 * acc / classes;
}

// ---------------------------------------------------------------------------
// Spearman

/// 1-based ranks; ties share the mean of the ranks they span.
inline std::vector<double> average_ranks(std::span<const double> x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
        const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = rank;
        i = j + 1;
    }
    return r;
}

/// Pearson correlation of average ranks; nullopt when either vector is constant.
inline std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw DataError("spearman: vectors differ in length");
    if (x.size() < 2) throw DataError("spearman: need at least two points");
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    const double m = 0.5 * static_cast<double>(x.size() + 1);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - m) * (ry[i] - m);
        sxx += (rx[i] - m) * (rx[i] - m);
        syy += (ry[i] - m) * (ry[i] - m);
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
    double llkl_mark = 0.0;   ///< mean per-event mark log-likelihood
    double llkl_joint = 0.0;  ///< mean per-event mark + time log-likelihood
    double rmse = 0.0;
    double f1 = 0.0;          ///< weighted F1, percent
    double f1_macro = 0.0;
    std::size_t sequences = 0;
    std::size_t events = 0;
    std::size_t predictions = 0;  ///< events with a predecessor
    std::size_t zero_gaps = 0;    ///< excluded from RMSE
};

struct EventPrediction {
    std::size_t sequence = 0;  ///< 0-based
    std::size_t event = 0;     ///< 0-based index of the predicted event
    double t_star = 0.0;
    int u_star = 0;
};

using ParamsForSequence = std::function<MarkParams(const EventSequence&)>;

/// Next-event predictions for every event with a predecessor: the time from
/// the log-normal mode after the previous event, the mark as the PMF argmax
/// at the actual time given the true (truncated) history.
inline std::vector<EventPrediction> predict_events(const ParamsForSequence& params_for, const TimeParams& tp,
                                                   const Dataset& d, TruncationConfig trunc, bool normalize = true) {
    std::vector<EventPrediction> out;
    for (std::size_t s = 0; s < d.sequences.size(); ++s) {
        const auto& seq = d.sequences[s];
        if (seq.events.size() < 2) continue;
        const MarkParams p = params_for(seq);
        const std::span<const Event> ev(seq.events);
        for (std::size_t i = 1; i < ev.size(); ++i) {
            const std::size_t from = i > static_cast<std::size_t>(trunc.Q) ? i - static_cast<std::size_t>(trunc.Q) : 0;
            EventPrediction pr;
            pr.sequence = s;
            pr.event = i;
            pr.t_star = predict_next_time(tp, ev[i - 1].u, ev[i - 1].t);
            pr.u_star = predict_mark(p, ev.subspan(from, i - from), ev[i].t, ev[i].z, normalize);
            out.push_back(pr);
        }
    }
    return out;
}

inline EvalReport evaluate(const ParamsForSequence& params_for, const TimeParams& tp, const Dataset& test,
                           TruncationConfig trunc, bool normalize = true) {
    if (test.sequences.empty() || test.num_events() == 0) throw DataError("evaluate: empty test set");
    EvalReport r;
    r.sequences = test.sequences.size();
    double mark_ll = 0.0, time_ll = 0.0;
    for (const auto& seq : test.sequences) {
        if (seq.events.empty()) continue;
        mark_ll += sequence_mark_loglik(params_for(seq), seq, trunc, normalize);
        time_ll += time_loglik(tp, seq);
        r.events += seq.events.size();
    }
    r.llkl_mark = mark_ll / static_cast<double>(r.events);
    r.llkl_joint = (mark_ll + time_ll) / static_cast<double>(r.events);

    const auto preds = predict_events(params_for, tp, test, trunc, normalize);
    if (preds.empty()) throw DataError("evaluate: no event has a predecessor");
    std::vector<double> eps;
    std::vector<int> predicted, actual;
    for (const auto& pr : preds) {
        const auto& ev = test.sequences[pr.sequence].events;
        if (const auto e = relative_gap_error(pr.t_star, ev[pr.event - 1].t, ev[pr.event].t)) {
            eps.push_back(*e);
        } else {
            ++r.zero_gaps;
        }
        predicted.push_back(pr.u_star);
        actual.push_back(ev[pr.event].u);
    }
    r.predictions = preds.size();
    r.rmse = eps.empty() ? std::numeric_limits<double>::quiet_NaN() : rmse_from_errors(eps);
    r.f1 = f1_weighted(predicted, actual, test.U);
    r.f1_macro = f1_macro(predicted, actual, test.U);
    return r;
}

inline EvalReport evaluate(const MarkParams& p, const TimeParams& tp, const Dataset& test, TruncationConfig trunc,
                           bool normalize = true) {
    return evaluate([&](const EventSequence&) { return p; }, tp, test, trunc, normalize);
}

inline nlohmann::ordered_json report_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["llkl_mark"] = r.llkl_mark;
    j["llkl_joint"] = r.llkl_joint;
    j["rmse"] = r.rmse;
    j["f1"] = r.f1;
    j["f1_macro"] = r.f1_macro;
    j["sequences"] = r.sequences;
    j["events"] = r.events;
    j["predictions"] = r.predictions;
    j["zero_gaps"] = r.zero_gaps;
    return j;
}

inline void write_report(std::ostream& out, const EvalReport& r) {
    const auto j = report_json(r);
    out.precision(10);
    for (const auto& [k, v] : j.items()) {
        out << k << '=';
        if (v.is_number_float()) out << v.get<double>(); else out << v.dump();
        out << '\n';
    }
    out << j.dump() << '\n';
}

} // namespace dmtpp
