#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "dmtpp/arlatent.hpp"

using namespace dmtpp;

namespace {

// log N(x; m, C) with C = v rho^|s-t|, via a plain Cholesky factorisation.
double dense_ar_density(const std::vector<double>& x, double mu, double sigma, double rho) {
    const std::size_t n = x.size();
    const double v = sigma * sigma / (1 - rho * rho);
    std::vector<double> m(n), C(n * n), L(n * n, 0.0);
    for (std::size_t s = 0; s < n; ++s) m[s] = s == 0 ? mu : mu + rho * m[s - 1];
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t t = 0; t < n; ++t) {
            C[s * n + t] = v * std::pow(rho, std::abs(static_cast<double>(s) - static_cast<double>(t)));
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double acc = C[i * n + j];
            for (std::size_t k = 0; k < j; ++k) acc -= L[i * n + k] * L[j * n + k];
            L[i * n + j] = i == j ? std::sqrt(acc) : acc / L[j * n + j];
        }
    }
    std::vector<double> y(n);
    double logdet = 0.0, quad = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double acc = x[i] - m[i];
        for (std::size_t k = 0; k < i; ++k) acc -= L[i * n + k] * y[k];
        y[i] = acc / L[i * n + i];
        quad += y[i] * y[i];
        logdet += 2 * std::log(L[i * n + i]);
    }
    return -0.5 * (static_cast<double>(n) * std::log(2 * std::numbers::pi) + logdet + quad);
}

// Ordered data with two covariates, five order slots.
Dataset ordered_data(std::size_t n, std::uint64_t seed, int U = 3) {
    MarkParams p = make_mark_params(U);
    p.eta = 1.5;
    TimeParams tp;
    tp.mu.assign(static_cast<std::size_t>(U), -0.3);
    tp.var.assign(static_cast<std::size_t>(U), 0.3);
    tp.mu0 = -0.3;
    tp.var0 = 0.3;
    Dataset d = simulate_dataset(p, tp, n, 5.0, {2}, seed);
    Rng rng(seed, 99);
    d.p = 2;
    for (std::size_t s = 0; s < n; ++s) {
        d.sequences[s].order_index = static_cast<std::int64_t>(10 + s % 5);
        d.sequences[s].covariates = {rng.normal(), s % 3 == 0 ? 0.0 : 1.0};
    }
    return d;
}

ARLatentParams randomised(const LinkConfig& link, std::uint64_t seed) {
    auto lp = init_latent(link);
    Rng rng(seed);
    for (auto& w : lp.omega) w = 0.5 * rng.normal();
    for (auto& m : lp.mu) m = 0.2 * rng.normal();
    for (auto& r : lp.sigma_raw) r += 0.3 * rng.normal();
    for (auto& r : lp.rho_raw) r += 0.3 * rng.normal();
    return lp;
}

} // namespace

TEST(ARPrior, MatchesDenseGaussian) {
    Rng rng(1);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t S = 1 + rng.below(6);
        std::vector<double> path(S);
        for (auto& w : path) w = rng.normal();
        const double mu = 0.5 * rng.normal(), sigma = 0.2 + rng.uniform(), rho = 1.8 * rng.uniform() - 0.9;
        const double got = ar_log_prior<double>(path, mu, sigma, rho);
        EXPECT_NEAR(got, dense_ar_density(path, mu, sigma, rho), 1e-10) << "S=" << S;
    }
}

TEST(ARPrior, SingleStateHandValue) {
    const std::vector<double> path{0.7};
    EXPECT_NEAR(ar_log_prior<double>(path, 0.7, 1.0, 0.5), -0.5 * std::log(2 * std::numbers::pi * 4.0 / 3.0), 1e-15);
}

TEST(ARPrior, DomainChecks) {
    const std::vector<double> path{0.1, 0.2};
    EXPECT_THROW(ar_log_prior<double>(path, 0.0, 1.0, 1.0), DomainError);
    EXPECT_THROW(ar_log_prior<double>(path, 0.0, 0.0, 0.5), DomainError);
    EXPECT_THROW(ar_log_prior<double>(std::span<const double>{}, 0.0, 1.0, 0.5), DataError);
}

TEST(ARPrior, LatentPriorGradient) {
    const Dataset d = ordered_data(20, 2, 4);
    auto link = make_link(LinkMode::covariate, {&d});
    link.groups = {0, 1, 0};
    const auto lp = randomised(link, 3);
    const auto pg = latent_log_prior(lp, link.groups);
    const auto x0 = lp.flatten();
    for (std::size_t k = 0; k < x0.size(); ++k) {
        auto at = [&](double dx) {
            auto x = x0;
            x[k] += dx;
            auto q = lp;
            q.assign(x);
            return latent_log_prior(q, link.groups).value;
        };
        EXPECT_NEAR(pg.d_latent[k], (at(1e-6) - at(-1e-6)) / 2e-6, 1e-5 * std::max(1.0, std::abs(pg.d_latent[k])));
    }
}

TEST(ARLink, GroupMaps) {
    const auto g = football_group_map(31);
    ASSERT_EQ(g.size(), 30u);
    EXPECT_EQ(g[0], 0);   // u'=1
    EXPECT_EQ(g[14], 14); // u'=15
    EXPECT_EQ(g[15], 0);  // u'=16 -> max(1, 0)
    EXPECT_EQ(g[16], 0);  // u'=17
    EXPECT_EQ(g[17], 1);  // u'=18
    EXPECT_EQ(g[29], 13); // u'=30
    EXPECT_EQ(identity_group_map(4), (std::vector<int>{0, 1, 2}));
}

TEST(ARLink, TeamWeek) {
    Dataset d;
    d.U = 4;
    d.p = 2;
    EventSequence s;
    s.T = 1;
    s.order_index = 3;
    s.covariates = {2, 5};
    d.sequences = {s};
    s.order_index = 7;
    s.covariates = {1, 3};
    d.sequences.push_back(s);
    const auto link = make_link(LinkMode::team_week, {&d});
    EXPECT_EQ(link.E, 5);
    EXPECT_EQ(link.home_marks, 2);
    EXPECT_EQ(link.order_base, 3);
    EXPECT_EQ(link.num_orders, 5);
    EXPECT_EQ(link.team_for(d.sequences[0], 0), 1);
    EXPECT_EQ(link.team_for(d.sequences[0], 2), 4);
    d.sequences[0].covariates = {2.5, 1};
    EXPECT_THROW((void)link.team_for(d.sequences[0], 0), DataError);
    EXPECT_THROW(parse_link_mode("teams"), DataError);
}

TEST(ARParams, ZeroOmegaKeepsBaseAndCovariateShiftsLogits) {
    const Dataset d = ordered_data(10, 4);
    const auto link = make_link(LinkMode::covariate, {&d});
    auto lp = init_latent(link);
    Rng rng(5);
    MarkParams base = make_mark_params(3);
    for (auto& g : base.gamma) g = 0.2 + rng.uniform();
    for (int a = 0; a < 3; ++a) {
        const double s = base.g(0, a, 0) + base.g(0, a, 1) + base.g(0, a, 2);
        for (int u = 0; u < 3; ++u) base.g(0, a, u) /= s;
    }
    const auto& seq = d.sequences[1]; // covariates {x, 1}
    ASSERT_FALSE(seq.events.empty());
    auto same = sequence_params(base, lp, link, seq);
    for (std::size_t k = 0; k < base.gamma.size(); ++k) EXPECT_NEAR(same.gamma[k], base.gamma[k], 1e-15);

    const int w = link.slot(seq);
    lp.omega[lp.omega_index(0, 1, w)] = 0.4;
    lp.omega[lp.omega_index(1, 1, w)] = -0.3;
    const auto p = sequence_params(base, lp, link, seq);
    const int a = seq.events[0].u;
    const double before = std::log(base.g(0, a, 1) / base.g(0, a, 2));
    const double after = std::log(p.g(0, a, 1) / p.g(0, a, 2));
    EXPECT_NEAR(after - before, 0.4 * seq.covariates[0] - 0.3, 1e-12);
    EXPECT_NEAR(std::log(p.g(0, a, 0) / p.g(0, a, 2)), std::log(base.g(0, a, 0) / base.g(0, a, 2)), 1e-12);
    EXPECT_NEAR(p.g(0, a, 0) + p.g(0, a, 1) + p.g(0, a, 2), 1.0, 1e-15);
}

TEST(ARParams, LogitsRoundTripAndRejectNonFinite) {
    const std::vector<double> row{0.2, 0.5, 0.3};
    const std::vector<double> phi{std::log(0.2 / 0.3), std::log(0.5 / 0.3)}, zero{0.0, 0.0};
    const auto back = gamma_row_from_logits<double>(phi, zero);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(back[k], row[k], 1e-15);
    const std::vector<double> big{800.0, 0.0};
    const auto sat = softmax_with_baseline<double>(big);
    EXPECT_NEAR(sat[0], 1.0, 1e-15);
    const std::vector<double> bad{std::nan(""), 0.0};
    EXPECT_THROW(gamma_row_from_logits<double>(bad, zero), NumericError);
}

TEST(ARParams, OmegaExtrapolation) {
    const Dataset d = ordered_data(10, 6);
    const auto link = make_link(LinkMode::covariate, {&d});
    const auto lp = randomised(link, 7);
    const int g = link.groups[1];
    const double r = lp.rho(0, g);
    const double last = lp.omega[lp.omega_index(0, 1, lp.S - 1)];
    EXPECT_DOUBLE_EQ(lp.omega_at(0, 1, lp.S, link.groups), lp.mean(0, 1) + r * last);
    EXPECT_DOUBLE_EQ(lp.omega_at(0, 1, lp.S + 1, link.groups), lp.mean(0, 1) + r * (lp.mean(0, 1) + r * last));
    EXPECT_DOUBLE_EQ(lp.omega_at(0, 1, -2, link.groups), lp.mean(0, 1));
    EXPECT_GT(lp.sigma(0, g), lp.sigma_floor);
}

TEST(ARObjective, GradientMatchesCommonRandomNumberDifferences) {
    const Dataset d = ordered_data(8, 8);
    const auto link = make_link(LinkMode::covariate, {&d});
    const auto lp0 = randomised(link, 9);
    VariationalParams xi0 = init_variational(3, 1);
    TrainConfig cfg;
    cfg.Q = 2;
    WorkerPool pool(1);
    const auto batch = all_sequences(d);
    Rng rng(10);
    ThetaNoise noise;
    const auto s0 = sample_theta(xi0, rng, &noise);
    const ARConfig arcfg;
    const auto est = lower_bound_objective(xi0, lp0, link, {s0}, batch, d, cfg, {}, arcfg, pool);

    auto x0 = xi0.flatten();
    const auto l0 = lp0.flatten();
    x0.insert(x0.end(), l0.begin(), l0.end());
    auto f = [&](const std::vector<double>& x) {
        VariationalParams xi = xi0;
        xi.assign(x);
        ARLatentParams lp = lp0;
        lp.assign(std::span<const double>(x).subspan(xi.dim()));
        return lower_bound_objective(xi, lp, link, {theta_from_noise(xi, noise)}, batch, d, cfg, {}, arcfg, pool).value;
    };
    ASSERT_EQ(est.gradient.size(), x0.size());
    for (std::size_t k = 0; k < x0.size(); ++k) {
        const double h = 1e-5;
        auto xp = x0, xm = x0;
        xp[k] += h;
        xm[k] -= h;
        const double fd = (f(xp) - f(xm)) / (2 * h);
        EXPECT_NEAR(est.gradient[k], fd, 1e-4 * std::max(1.0, std::abs(fd))) << "k=" << k;
    }
}

TEST(ARObjective, FrozenFixedReducesToExchangeable) {
    const Dataset train = ordered_data(30, 11);
    const Dataset val = ordered_data(10, 12);
    const auto link = make_link(LinkMode::covariate, {&train, &val});
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.batch_size = 8;
    cfg.Q = 2;
    cfg.seed = 5;
    cfg.threads = 1;
    ARConfig arcfg;
    arcfg.freeze_omega = true;
    arcfg.learn_hyper = false;
    const auto ar = fit_nonexchangeable(train, val, cfg, link, arcfg);
    const auto ex = fit(train, val, cfg);
    EXPECT_EQ(ar.xi.flatten(), ex.xi.flatten());
    EXPECT_EQ(ar.log.best_epoch, ex.log.best_epoch);
    for (double w : ar.latent.omega) EXPECT_EQ(w, 0.0);
}

TEST(ARObjective, FitIsThreadInvariant) {
    const Dataset train = ordered_data(24, 13);
    const Dataset val = ordered_data(8, 14);
    const auto link = make_link(LinkMode::covariate, {&train, &val});
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 6;
    cfg.Q = 2;
    cfg.threads = 1;
    const auto a = fit_nonexchangeable(train, val, cfg, link);
    cfg.threads = 2;
    const auto b = fit_nonexchangeable(train, val, cfg, link);
    EXPECT_EQ(a.xi.flatten(), b.xi.flatten());
    EXPECT_EQ(a.latent.flatten(), b.latent.flatten());
}

TEST(ARObjective, AbilitiesCsv) {
    const Dataset d = ordered_data(5, 15);
    const auto link = make_link(LinkMode::covariate, {&d});
    auto lp = init_latent(link);
    lp.omega[lp.omega_index(1, 0, 2)] = 0.25;
    std::ostringstream out;
    write_abilities(out, lp, link);
    const std::string text = out.str();
    EXPECT_EQ(text.substr(0, text.find('\n')), "effect,target_mark,order_index,value");
    EXPECT_NE(text.find("\n2,1,12,0.25\n"), std::string::npos);
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 2 * 2 * 5);
}
