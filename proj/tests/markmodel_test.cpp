#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "dmtpp/markmodel.hpp"

using namespace dmtpp;

namespace {

// Direct transcription of the PMF over an explicit history, independent of the library.
std::vector<double> oracle_pmf(const MarkParams& p, const std::vector<Event>& hist, double t, int z, bool normalize) {
    std::vector<double> num(static_cast<std::size_t>(p.U)), den(static_cast<std::size_t>(p.U), 1.0);
    for (int u = 0; u < p.U; ++u) {
        double excite = 0.0, decay = 0.0;
        for (const auto& e : hist) {
            const double k = std::exp(-p.beta[static_cast<std::size_t>((z * p.U + e.u) * p.U + u)] * (t - e.t));
            excite += p.gamma[static_cast<std::size_t>((z * p.U + e.u) * p.U + u)] * k;
            decay += k;
        }
        num[static_cast<std::size_t>(u)] = p.delta[static_cast<std::size_t>(z * p.U + u)] + p.eta * excite;
        den[static_cast<std::size_t>(u)] = 1.0 + p.eta * decay;
    }
    if (normalize) {
        const double s = std::accumulate(num.begin(), num.end(), 0.0);
        for (auto& x : num) x /= s;
    } else {
        for (std::size_t u = 0; u < num.size(); ++u) num[u] /= den[u];
    }
    return num;
}

MarkParams random_params(int U, int Z, Rng& rng) {
    MarkParams p = make_mark_params(U, Z);
    auto simplex = [&](double* out) {
        double s = 0.0;
        for (int u = 0; u < U; ++u) s += (out[u] = 0.05 + rng.uniform());
        for (int u = 0; u < U; ++u) out[u] /= s;
    };
    for (int z = 0; z < Z; ++z) {
        simplex(&p.d(z, 0));
        for (int a = 0; a < U; ++a) simplex(&p.g(z, a, 0));
    }
    for (auto& b : p.beta) b = 0.1 + 3.0 * rng.uniform();
    p.eta = 0.05 + 2.0 * rng.uniform();
    return p;
}

EventSequence random_sequence(int U, int Z, std::size_t n, Rng& rng) {
    EventSequence s;
    double t = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        t += 0.05 + rng.uniform();
        s.events.push_back({t, static_cast<int>(rng.below(static_cast<std::uint64_t>(U))),
                            static_cast<int>(rng.below(static_cast<std::uint64_t>(Z)))});
    }
    s.T = t + 1.0;
    return s;
}

} // namespace

TEST(MarkModel, HandExample) {
    // U=2, one past event of mark 0 at gap 1.
    MarkParams p = make_mark_params(2);
    p.delta = {0.5, 0.5};
    p.gamma = {0.4, 0.6, 0.5, 0.5};
    p.beta = {1.0, 2.0, 1.0, 1.0};
    p.eta = 1.0;
    const std::vector<Event> hist{{1.0, 0, 0}};
    const double h0 = 0.5 + 0.4 * std::exp(-1.0);
    const double h1 = 0.5 + 0.6 * std::exp(-2.0);
    const auto norm = mark_pmf(p, std::span<const Event>(hist), 2.0);
    EXPECT_NEAR(norm[0], h0 / (h0 + h1), 1e-15);
    const auto lit = mark_pmf(p, std::span<const Event>(hist), 2.0, 0, false);
    EXPECT_NEAR(lit[0], h0 / (1.0 + std::exp(-1.0)), 1e-15);
    EXPECT_NEAR(lit[1], h1 / (1.0 + std::exp(-2.0)), 1e-15);

    const auto empty = mark_pmf(p, std::span<const Event>{}, 0.5);
    EXPECT_EQ(empty, p.delta);
}

TEST(MarkModel, MatchesOracleAndSumsToOne) {
    Rng rng(3);
    for (int trial = 0; trial < 300; ++trial) {
        const int U = 1 + static_cast<int>(rng.below(6));
        const int Z = 1 + static_cast<int>(rng.below(3));
        const MarkParams p = random_params(U, Z, rng);
        const auto seq = random_sequence(U, Z, 1 + rng.below(8), rng);
        const double t = seq.events.back().t + 0.3;
        const int z = static_cast<int>(rng.below(static_cast<std::uint64_t>(Z)));
        for (bool normalize : {true, false}) {
            const auto got = mark_pmf(p, std::span<const Event>(seq.events), t, z, normalize);
            const auto want = oracle_pmf(p, seq.events, t, z, normalize);
            for (int u = 0; u < U; ++u) EXPECT_NEAR(got[static_cast<std::size_t>(u)], want[static_cast<std::size_t>(u)], 1e-14);
            if (normalize) {
                EXPECT_NEAR(std::accumulate(got.begin(), got.end(), 0.0), 1.0, 1e-12);
            }
        }
    }
}

TEST(MarkModel, LiteralSumsToOneWhenDecayIsTargetConstant) {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        MarkParams p = random_params(4, 1, rng);
        for (int a = 0; a < 4; ++a) {
            for (int u = 0; u < 4; ++u) p.b(0, a, u) = p.b(0, a, 0);
        }
        const auto seq = random_sequence(4, 1, 6, rng);
        const auto pmf = mark_pmf(p, std::span<const Event>(seq.events), seq.events.back().t + 0.1, 0, false);
        EXPECT_NEAR(std::accumulate(pmf.begin(), pmf.end(), 0.0), 1.0, 1e-12);
    }
}

TEST(MarkModel, TruncationUsesLastQEvents) {
    Rng rng(5);
    const MarkParams p = random_params(3, 1, rng);
    const auto seq = random_sequence(3, 1, 12, rng);
    for (int Q : {1, 3, 20}) {
        double oracle = 0.0;
        for (std::size_t i = 0; i < seq.events.size(); ++i) {
            const std::size_t from = i > static_cast<std::size_t>(Q) ? i - static_cast<std::size_t>(Q) : 0;
            const std::vector<Event> hist(seq.events.begin() + static_cast<std::ptrdiff_t>(from),
                                          seq.events.begin() + static_cast<std::ptrdiff_t>(i));
            oracle += std::log(oracle_pmf(p, hist, seq.events[i].t, 0, true)[static_cast<std::size_t>(seq.events[i].u)]);
        }
        EXPECT_NEAR(sequence_mark_loglik(p, seq, {Q}), oracle, 1e-11) << "Q=" << Q;
    }
    EXPECT_THROW(sequence_mark_loglik(p, seq, {0}), DataError);
}

TEST(MarkModel, PredictAndValidate) {
    MarkParams p = make_mark_params(3);
    p.delta = {0.2, 0.4, 0.4};
    EXPECT_EQ(predict_mark(p, std::span<const Event>{}, 1.0), 1); // tie goes to the smaller mark
    p.eta = -1.0;
    EXPECT_THROW(validate(p), DataError);
    p.eta = 1.0;
    p.gamma[0] = 0.9;
    EXPECT_THROW(validate(p), DataError);
}

TEST(MarkModel, ZeroMassIsNumericError) {
    MarkParams p = make_mark_params(2);
    p.delta = {1.0, 0.0};
    p.gamma = {1.0, 0.0, 1.0, 0.0};
    EventSequence s;
    s.T = 3;
    s.events = {{0.5, 0, 0}, {1.0, 1, 0}};
    try {
        sequence_mark_loglik(p, s, {1});
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("event 2"), std::string::npos);
    }
}

TEST(MarkModel, SimulatorIsDeterministicAndValid) {
    MarkParams p = make_mark_params(4, 2);
    TimeParams tp;
    tp.mu.assign(4, 0.0);
    tp.var.assign(4, 0.5);
    const auto a = simulate_dataset(p, tp, 20, 30.0, {3}, 9, true);
    const auto b = simulate_dataset(p, tp, 20, 30.0, {3}, 9, true);
    validate(a);
    for (std::size_t s = 0; s < 20; ++s) {
        ASSERT_EQ(a.sequences[s].events.size(), b.sequences[s].events.size());
        for (std::size_t i = 0; i < a.sequences[s].events.size(); ++i) {
            EXPECT_EQ(a.sequences[s].events[i].t, b.sequences[s].events[i].t);
            EXPECT_EQ(a.sequences[s].events[i].u, b.sequences[s].events[i].u);
        }
    }
}

TEST(MarkModel, SimulatedMarksFollowThePmf) {
    // With eta tiny, marks are draws from delta: chi-square style check on counts.
    MarkParams p = make_mark_params(3);
    p.delta = {0.2, 0.3, 0.5};
    p.eta = 1e-12;
    TimeParams tp;
    tp.mu.assign(3, -2.0);
    tp.var.assign(3, 0.1);
    const auto d = simulate_dataset(p, tp, 50, 100.0, {1}, 11);
    std::vector<double> count(3, 0.0);
    double n = 0.0;
    for (const auto& s : d.sequences) {
        for (const auto& e : s.events) {
            count[static_cast<std::size_t>(e.u)] += 1.0;
            n += 1.0;
        }
    }
    for (int u = 0; u < 3; ++u) {
        const double q = p.delta[static_cast<std::size_t>(u)];
        EXPECT_LT(std::abs(count[static_cast<std::size_t>(u)] / n - q), 4.0 * std::sqrt(q * (1 - q) / n));
    }
}
