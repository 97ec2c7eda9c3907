#pragma once

// Decoupled mark model. For an event at time t in zone z with history H,
//
//   h(u)   = delta^z_u + eta * sum_{j in H} gamma^z_{u_j,u} exp(-beta^z_{u_j,u} (t - t_j))
//   den(u) = 1 + eta * sum_{j in H} exp(-beta^z_{u_j,u} (t - t_j))
//
// The literal PMF is h(u) / den(u); the normalised PMF (default) is h(u) / sum_v h(v).
// Everything here is templated on the scalar so the same code runs on doubles
// and on autodiff variables.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "dmtpp/autodiff.hpp"
#include "dmtpp/error.hpp"
#include "dmtpp/events.hpp"
#include "dmtpp/stochastics.hpp"
#include "dmtpp/timemodel.hpp"

namespace dmtpp {

template <class S>
struct MarkParamsT {
    int U = 0;
    int Z = 1; ///< parameter zones (1 when unzoned)
    std::vector<S> delta; ///< [z][u]
    std::vector<S> gamma; ///< [z][from][to]
    std::vector<S> beta;  ///< [z][from][to]
    S eta{};

    [[nodiscard]] const S& d(int z, int u) const { return delta[static_cast<std::size_t>(z * U + u)]; }
    [[nodiscard]] const S& g(int z, int from, int to) const {
        return gamma[static_cast<std::size_t>((z * U + from) * U + to)];
    }
    [[nodiscard]] const S& b(int z, int from, int to) const {
        return beta[static_cast<std::size_t>((z * U + from) * U + to)];
    }
    [[nodiscard]] S& d(int z, int u) { return delta[static_cast<std::size_t>(z * U + u)]; }
    [[nodiscard]] S& g(int z, int from, int to) { return gamma[static_cast<std::size_t>((z * U + from) * U + to)]; }
    [[nodiscard]] S& b(int z, int from, int to) { return beta[static_cast<std::size_t>((z * U + from) * U + to)]; }
};

using MarkParams = MarkParamsT<double>;

inline MarkParams make_mark_params(int U, int Z = 1) {
    MarkParams p;
    p.U = U;
    p.Z = Z;
    p.delta.assign(static_cast<std::size_t>(Z * U), 1.0 / U);
    p.gamma.assign(static_cast<std::size_t>(Z * U * U), 1.0 / U);
    p.beta.assign(static_cast<std::size_t>(Z * U * U), 1.0);
    p.eta = 1.0;
    return p;
}

inline void validate(const MarkParams& p) {
    auto bad = [](const std::string& what) { throw DataError("invalid mark parameters: " + what); };
    if (p.U < 1 || p.Z < 1) bad("U and Z must be positive");
    const auto nu = static_cast<std::size_t>(p.U);
    const auto nz = static_cast<std::size_t>(p.Z);
    if (p.delta.size() != nz * nu || p.gamma.size() != nz * nu * nu || p.beta.size() != nz * nu * nu) bad("shape mismatch");
    if (!(p.eta > 0.0)) bad("eta must be positive");
    for (int z = 0; z < p.Z; ++z) {
        double s = 0.0;
        for (int u = 0; u < p.U; ++u) {
            if (p.d(z, u) < 0.0) bad("negative background probability");
            s += p.d(z, u);
        }
        if (std::abs(s - 1.0) > 1e-9) bad("delta does not sum to 1");
        for (int a = 0; a < p.U; ++a) {
            double r = 0.0;
            for (int u = 0; u < p.U; ++u) {
                if (p.g(z, a, u) < 0.0) bad("negative conversion rate");
                if (!(p.b(z, a, u) > 0.0)) bad("decay rates must be positive");
                r += p.g(z, a, u);
            }
            if (std::abs(r - 1.0) > 1e-9) bad("Gamma row does not sum to 1");
        }
    }
}

struct TruncationConfig {
    int Q = 1;
};

namespace detail {

inline void check_history(std::span<const Event> history, double t) {
    for (const auto& e : history) {
        if (!(e.t < t)) throw DataError("history event at or after the query time");
    }
}

// h(u) for one target mark.
template <class S>
S excitation_numerator(const MarkParamsT<S>& p, std::span<const Event> history, double t, int z, int u) {
    using std::exp;
    if (history.empty()) return p.d(z, u);
    S acc = p.g(z, history[0].u, u) * exp(p.b(z, history[0].u, u) * -(t - history[0].t));
    for (std::size_t j = 1; j < history.size(); ++j) {
        const auto& e = history[j];
        acc = acc + p.g(z, e.u, u) * exp(p.b(z, e.u, u) * -(t - e.t));
    }
    return p.d(z, u) + p.eta * acc;
}

template <class S>
S literal_denominator(const MarkParamsT<S>& p, std::span<const Event> history, double t, int z, int u) {
    using std::exp;
    S acc = exp(p.b(z, history[0].u, u) * -(t - history[0].t));
    for (std::size_t j = 1; j < history.size(); ++j) {
        const auto& e = history[j];
        acc = acc + exp(p.b(z, e.u, u) * -(t - e.t));
    }
    return 1.0 + p.eta * acc;
}

} // namespace detail

/// PMF over the U marks at time t. `history` holds the retained past events
/// (the caller applies truncation).
template <class S>
std::vector<S> mark_pmf(const MarkParamsT<S>& p, std::span<const Event> history, double t, int z = 0,
                        bool normalize = true) {
    using std::exp;
    detail::check_history(history, t);
    std::vector<S> out;
    out.reserve(static_cast<std::size_t>(p.U));
    for (int u = 0; u < p.U; ++u) out.push_back(detail::excitation_numerator(p, history, t, z, u));
    if (normalize) {
        S total = out[0];
        for (int u = 1; u < p.U; ++u) total = total + out[static_cast<std::size_t>(u)];
        if (!(value_of(total) > 0.0)) throw NumericError("mark_pmf: empty simplex (all numerators are zero)");
        for (auto& x : out) x = x / total;
    } else if (!history.empty()) {
        for (int u = 0; u < p.U; ++u) {
            out[static_cast<std::size_t>(u)] = out[static_cast<std::size_t>(u)] /
                                               detail::literal_denominator(p, history, t, z, u);
        }
    }
    return out;
}

/// log f(u_i | t_i, history) for a single event.
template <class S>
S event_mark_loglik(const MarkParamsT<S>& p, std::span<const Event> history, const Event& ev, bool normalize) {
    using std::exp;
    using std::log;
    const S num = detail::excitation_numerator(p, history, ev.t, ev.z, ev.u);
    if (!(value_of(num) > 0.0)) throw NumericError("zero probability");
    if (normalize) {
        S total = ev.u == 0 ? num : detail::excitation_numerator(p, history, ev.t, ev.z, 0);
        for (int u = 1; u < p.U; ++u) {
            total = total + (u == ev.u ? num : detail::excitation_numerator(p, history, ev.t, ev.z, u));
        }
        return log(num) - log(total);
    }
    if (history.empty()) return log(num);
    return log(num) - log(detail::literal_denominator(p, history, ev.t, ev.z, ev.u));
}

/// Sum of per-event mark log-probabilities, each conditioned on at most the
/// last Q events.
template <class S>
S sequence_mark_loglik(const MarkParamsT<S>& p, const EventSequence& seq, TruncationConfig trunc,
                       bool normalize = true) {
    if (trunc.Q < 1) throw DataError("truncation Q must be >= 1");
    const std::span<const Event> events(seq.events);
    S ll{};
    for (std::size_t i = 0; i < events.size(); ++i) {
        const std::size_t from = i > static_cast<std::size_t>(trunc.Q) ? i - static_cast<std::size_t>(trunc.Q) : 0;
        try {
            const S term = event_mark_loglik(p, events.subspan(from, i - from), events[i], normalize);
            ll = (i == 0) ? term : ll + term;
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " at event " + std::to_string(i + 1));
        }
    }
    return ll;
}

inline double dataset_mark_loglik(const MarkParams& p, const Dataset& d, TruncationConfig trunc,
                                  bool normalize = true) {
    double total = 0.0;
    for (const auto& s : d.sequences) total += sequence_mark_loglik(p, s, trunc, normalize);
    return total;
}

/// Argmax of the PMF; ties go to the smallest mark.
inline int predict_mark(const MarkParams& p, std::span<const Event> history, double t, int z = 0,
                        bool normalize = true) {
    const auto pmf = mark_pmf(p, history, t, z, normalize);
    return static_cast<int>(std::max_element(pmf.begin(), pmf.end()) - pmf.begin());
}

/// Draws one sequence from the generative model: log-normal gaps keyed on the
/// previous mark, marks from the normalised PMF over the last Q events, zones
/// uniform when Z > 1.
inline EventSequence simulate_sequence(const MarkParams& p, const TimeParams& tp, double T, TruncationConfig trunc,
                                       Rng& rng, bool zoned = false) {
    EventSequence seq;
    seq.T = T;
    double t = 0.0;
    int prev_u = -1;
    for (;;) {
        t += std::exp(tp.mu_for(prev_u) + std::sqrt(tp.var_for(prev_u)) * rng.normal());
        if (!(t < T)) break;
        if (!seq.events.empty() && !(t > seq.events.back().t)) continue; // gap below double resolution
        const int z = zoned ? static_cast<int>(rng.below(static_cast<std::uint64_t>(p.Z))) : 0;
        const std::size_t n = seq.events.size();
        const std::size_t from = n > static_cast<std::size_t>(trunc.Q) ? n - static_cast<std::size_t>(trunc.Q) : 0;
        const auto pmf = mark_pmf(p, std::span<const Event>(seq.events).subspan(from), t, z, true);
        const int u = static_cast<int>(rng.categorical(pmf));
        seq.events.push_back({t, u, z});
        prev_u = u;
    }
    return seq;
}

/// S sequences, sequence s drawn from stream s of the seed.
inline Dataset simulate_dataset(const MarkParams& p, const TimeParams& tp, std::size_t S, double T,
                                TruncationConfig trunc, std::uint64_t seed, bool zoned = false) {
    Dataset d;
    d.U = p.U;
    d.Z = zoned ? p.Z : 0;
    d.sequences.reserve(S);
    for (std::size_t s = 0; s < S; ++s) {
        Rng rng(seed, s);
        d.sequences.push_back(simulate_sequence(p, tp, T, trunc, rng, zoned));
    }
    return d;
}

} // namespace dmtpp
