#pragma once

// Non-exchangeable extension: AR(1) latent effects on conversion-rate logits.
//
// For a sequence with order slot w the Gamma rows become
//
//   log(gamma_{a,u'} / gamma_{a,U}) = phi_{a,u'} + c_{u'}(w),   u' < U,
//
// where phi are the baseline-category logits of the exchangeable Gamma draw and
// c collects the omega effects selected by the link (covariate sums, or the
// ability of the team that would produce mark u'). Every (effect, mark) path
// of omega carries the prior
//
//   omega^(1) ~ N(mu, sigma^2 / (1 - rho^2)),  omega^(s) | omega^(s-1) ~ N(mu + rho omega^(s-1), sigma^2)
//
// and is estimated at its mode jointly with the variational parameters.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dmtpp/autodiff.hpp"
#include "dmtpp/error.hpp"
#include "dmtpp/events.hpp"
#include "dmtpp/markmodel.hpp"
#include "dmtpp/parallel.hpp"
#include "dmtpp/stochastics.hpp"
#include "dmtpp/timemodel.hpp"
#include "dmtpp/vi.hpp"

namespace dmtpp {

// ---------------------------------------------------------------------------
// Link between sequences and omega

enum class LinkMode { covariate, team_week };

inline const char* link_mode_name(LinkMode m) { return m == LinkMode::covariate ? "covariate" : "team-week"; }

inline LinkMode parse_link_mode(const std::string& s) {
    if (s == "covariate") return LinkMode::covariate;
    if (s == "team-week") return LinkMode::team_week;
    throw DataError("unknown link mode '" + s + "' (expected covariate or team-week)");
}

struct LinkConfig {
    LinkMode mode = LinkMode::covariate;
    int U = 0;
    int E = 0;                  ///< effect rows: covariates, or teams
    int home_marks = 0;         ///< team-week: marks below this use covariates[0], the rest covariates[1]
    std::vector<int> groups;    ///< group of each target mark u' < U - 1 (sigma and rho are shared per group)
    std::int64_t order_base = 0;
    int num_orders = 0;         ///< omega slots cover order indices [order_base, order_base + num_orders)

    [[nodiscard]] int targets() const noexcept { return U - 1; }
    [[nodiscard]] int num_groups() const {
        return groups.empty() ? 0 : *std::max_element(groups.begin(), groups.end()) + 1;
    }
    [[nodiscard]] int slot(const EventSequence& s) const {
        if (!s.order_index) throw DataError("the latent model needs order_index on every sequence");
        return static_cast<int>(*s.order_index - order_base);
    }
    /// Effect row producing target mark u (team-week mode).
    [[nodiscard]] int team_for(const EventSequence& s, int u) const {
        const std::size_t side = (home_marks > 0 && u >= home_marks) ? 1 : 0;
        if (s.covariates.size() <= side) throw DataError("team-week link needs team ids in covariates");
        const double id = s.covariates[side];
        const int e = static_cast<int>(id) - 1;
        if (id != std::floor(id) || e < 0 || e >= E) {
            throw DataError("team id " + std::to_string(id) + " outside 1.." + std::to_string(E));
        }
        return e;
    }
};

/// b(u') = max(1, u' mod 16) on 1-based target marks, returned 0-based.
inline std::vector<int> football_group_map(int U) {
    std::vector<int> g(static_cast<std::size_t>(std::max(U - 1, 0)));
    for (int u = 1; u < U; ++u) g[static_cast<std::size_t>(u - 1)] = std::max(1, u % 16) - 1;
    return g;
}

inline std::vector<int> identity_group_map(int U) {
    std::vector<int> g(static_cast<std::size_t>(std::max(U - 1, 0)));
    for (int u = 0; u + 1 < U; ++u) g[static_cast<std::size_t>(u)] = u;
    return g;
}

/// Builds a link covering the order indices and effect rows seen in `data`.
/// home_marks < 0 picks U/2 for two-team data and 0 otherwise.
inline LinkConfig make_link(LinkMode mode, const std::vector<const Dataset*>& data, bool football_groups = false,
                            int home_marks = -1) {
    if (data.empty() || data.front() == nullptr) throw DataError("make_link needs at least one dataset");
    const Dataset& first = *data.front();
    LinkConfig link;
    link.mode = mode;
    link.U = first.U;
    if (link.U < 2) throw DataError("the latent model needs U >= 2");
    link.groups = football_groups ? football_group_map(link.U) : identity_group_map(link.U);

    std::int64_t lo = std::numeric_limits<std::int64_t>::max(), hi = std::numeric_limits<std::int64_t>::min();
    double max_team = 0.0;
    for (const Dataset* d : data) {
        if (d->U != link.U) throw DataError("datasets differ in U");
        if (!d->ordered()) throw DataError("the latent model needs order_index on every sequence");
        for (const auto& s : d->sequences) {
            lo = std::min(lo, *s.order_index);
            hi = std::max(hi, *s.order_index);
            for (double x : s.covariates) max_team = std::max(max_team, x);
        }
    }
    link.order_base = lo;
    link.num_orders = static_cast<int>(hi - lo + 1);
    if (mode == LinkMode::covariate) {
        link.E = first.p;
        if (link.E < 1) throw DataError("covariate link needs covariates (p >= 1)");
    } else {
        if (first.p < 1) throw DataError("team-week link needs team ids in covariates");
        link.E = static_cast<int>(max_team);
        link.home_marks = home_marks >= 0 ? home_marks : (first.p >= 2 ? link.U / 2 : 0);
    }
    return link;
}

// ---------------------------------------------------------------------------
// Latent parameters

struct ARConfig {
    bool freeze_omega = false;  ///< keep omega at its value and use the exchangeable Gamma rows
    bool learn_hyper = true;    ///< ascend on (mu, sigma, rho) as well
    double sigma_floor = 1e-2;  ///< sigma = floor + softplus(raw)
    double init_sigma = 0.5;
    double init_rho = 0.5;
};

struct ARLatentParams {
    int E = 0, T = 0, S = 0, G = 0; ///< effects, target marks (U - 1), order slots, groups
    double sigma_floor = 1e-2;
    std::vector<double> omega;      ///< [e][u'][s]
    std::vector<double> mu;         ///< [e][u']
    std::vector<double> sigma_raw;  ///< [e][g]
    std::vector<double> rho_raw;    ///< [e][g]

    [[nodiscard]] std::size_t omega_index(int e, int u, int s) const {
        return (static_cast<std::size_t>(e) * static_cast<std::size_t>(T) + static_cast<std::size_t>(u)) *
                   static_cast<std::size_t>(S) + static_cast<std::size_t>(s);
    }
    [[nodiscard]] std::size_t hyper_index(int e, int g) const {
        return static_cast<std::size_t>(e) * static_cast<std::size_t>(G) + static_cast<std::size_t>(g);
    }
    [[nodiscard]] double sigma(int e, int g) const { return sigma_floor + ad::softplus(sigma_raw[hyper_index(e, g)]); }
    [[nodiscard]] double rho(int e, int g) const { return std::tanh(rho_raw[hyper_index(e, g)]); }
    [[nodiscard]] double mean(int e, int u) const {
        return mu[static_cast<std::size_t>(e) * static_cast<std::size_t>(T) + static_cast<std::size_t>(u)];
    }

    [[nodiscard]] std::size_t dim() const noexcept {
        return omega.size() + mu.size() + sigma_raw.size() + rho_raw.size();
    }
    [[nodiscard]] std::vector<double> flatten() const {
        std::vector<double> x(omega);
        x.insert(x.end(), mu.begin(), mu.end());
        x.insert(x.end(), sigma_raw.begin(), sigma_raw.end());
        x.insert(x.end(), rho_raw.begin(), rho_raw.end());
        return x;
    }
    void assign(std::span<const double> x) {
        if (x.size() < dim()) throw DataError("latent parameter vector too short");
        auto at = x.begin();
        for (auto* v : {&omega, &mu, &sigma_raw, &rho_raw}) {
            std::copy(at, at + static_cast<std::ptrdiff_t>(v->size()), v->begin());
            at += static_cast<std::ptrdiff_t>(v->size());
        }
    }

    /// omega for any slot; slots past the fitted range follow the AR mean
    /// recursion, slots before it take the first-state mean.
    [[nodiscard]] double omega_at(int e, int u, int s, const std::vector<int>& groups) const {
        if (s < 0) return mean(e, u);
        if (s < S) return omega[omega_index(e, u, s)];
        const double r = rho(e, groups[static_cast<std::size_t>(u)]);
        double w = omega[omega_index(e, u, S - 1)];
        for (int k = S; k <= s; ++k) w = mean(e, u) + r * w;
        return w;
    }
};

inline ARLatentParams init_latent(const LinkConfig& link, const ARConfig& cfg = {}) {
    if (link.num_orders < 1 || link.E < 1) throw DataError("link has no order slots or effects");
    ARLatentParams p;
    p.E = link.E;
    p.T = link.targets();
    p.S = link.num_orders;
    p.G = link.num_groups();
    p.sigma_floor = cfg.sigma_floor;
    if (!(cfg.init_sigma > cfg.sigma_floor)) throw DataError("initial sigma must exceed the sigma floor");
    if (!(std::abs(cfg.init_rho) < 1.0)) throw DataError("initial rho must lie in (-1, 1)");
    p.omega.assign(static_cast<std::size_t>(p.E) * static_cast<std::size_t>(p.T) * static_cast<std::size_t>(p.S), 0.0);
    p.mu.assign(static_cast<std::size_t>(p.E) * static_cast<std::size_t>(p.T), 0.0);
    p.sigma_raw.assign(static_cast<std::size_t>(p.E) * static_cast<std::size_t>(p.G),
                       softplus_inverse(cfg.init_sigma - cfg.sigma_floor));
    p.rho_raw.assign(p.sigma_raw.size(), std::atanh(cfg.init_rho));
    return p;
}

// ---------------------------------------------------------------------------
// Gamma rows from logits

/// Softmax over (logits, 0): the last mark is the baseline with logit 0.
template <class S>
std::vector<S> softmax_with_baseline(std::span<const S> logits) {
    using std::exp;
    double shift = 0.0;
    for (const S& l : logits) shift = std::max(shift, value_of(l));
    const double base = std::exp(-shift);
    std::vector<S> e;
    e.reserve(logits.size() + 1);
    for (const S& l : logits) e.push_back(exp(l - shift));
    S total = base + e.front();
    for (std::size_t k = 1; k < e.size(); ++k) total = total + e[k];
    std::vector<S> row;
    row.reserve(logits.size() + 1);
    for (const S& x : e) row.push_back(x / total);
    row.push_back(base / total);
    return row;
}

template <class S>
std::vector<S> gamma_row_from_logits(std::span<const S> phi, std::span<const S> contribution) {
    if (phi.size() != contribution.size() || phi.empty()) throw DataError("logit vectors must have equal non-zero length");
    for (std::size_t k = 0; k < phi.size(); ++k) {
        if (!std::isfinite(value_of(phi[k])) || !std::isfinite(value_of(contribution[k]))) {
            throw NumericError("gamma_row_from_logits: non-finite logit");
        }
    }
    std::vector<S> logits;
    logits.reserve(phi.size());
    for (std::size_t k = 0; k < phi.size(); ++k) logits.push_back(phi[k] + contribution[k]);
    return softmax_with_baseline<S>(logits);
}

/// Baseline-category logits of every Gamma row, [z][a][u'].
inline std::vector<double> base_logits(const MarkParams& p) {
    std::vector<double> phi;
    phi.reserve(static_cast<std::size_t>(p.Z * p.U * (p.U - 1)));
    for (int z = 0; z < p.Z; ++z) {
        for (int a = 0; a < p.U; ++a) {
            for (int u = 0; u + 1 < p.U; ++u) phi.push_back(std::log(p.g(z, a, u)) - std::log(p.g(z, a, p.U - 1)));
        }
    }
    return phi;
}

// ---------------------------------------------------------------------------
// AR(1) prior

template <class S>
S ar_log_prior(std::span<const S> path, const S& mu, const S& sigma, const S& rho) {
    using std::log;
    if (!(std::abs(value_of(rho)) < 1.0)) throw DomainError("ar_log_prior", "|rho| must be < 1");
    if (!(value_of(sigma) > 0.0)) throw DomainError("ar_log_prior", "sigma must be positive");
    if (path.empty()) throw DataError("empty omega path");
    const double c = 0.5 * std::log(2.0 * std::numbers::pi);
    const S var0 = sigma * sigma / (1.0 - rho * rho);
    const S d0 = path[0] - mu;
    S lp = -0.5 * log(var0) - 0.5 * d0 * d0 / var0 - c;
    if (path.size() > 1) {
        const S log_sigma = log(sigma);
        const S var = sigma * sigma;
        for (std::size_t s = 1; s < path.size(); ++s) {
            const S d = path[s] - mu - rho * path[s - 1];
            lp = lp - log_sigma - 0.5 * d * d / var - c;
        }
    }
    return lp;
}

struct PriorGradient {
    double value = 0.0;
    std::vector<double> d_latent; ///< flat ARLatentParams layout
};

/// Sum of ar_log_prior over every (effect, target mark) path, with gradients.
inline PriorGradient latent_log_prior(const ARLatentParams& lp, const std::vector<int>& groups) {
    ad::Tape tape;
    std::vector<ad::Var> omega, mu, sigma_raw, rho_raw;
    omega.reserve(lp.omega.size());
    for (double v : lp.omega) omega.push_back(tape.variable(v));
    for (double v : lp.mu) mu.push_back(tape.variable(v));
    for (double v : lp.sigma_raw) sigma_raw.push_back(tape.variable(v));
    for (double v : lp.rho_raw) rho_raw.push_back(tape.variable(v));
    std::vector<ad::Var> sigma, rho;
    for (const auto& r : sigma_raw) sigma.push_back(softplus(r) + lp.sigma_floor);
    for (const auto& r : rho_raw) rho.push_back(tanh(r));

    std::vector<ad::Var> terms;
    for (int e = 0; e < lp.E; ++e) {
        for (int u = 0; u < lp.T; ++u) {
            const std::size_t h = lp.hyper_index(e, groups[static_cast<std::size_t>(u)]);
            const std::span<const ad::Var> path(omega.data() + lp.omega_index(e, u, 0), static_cast<std::size_t>(lp.S));
            terms.push_back(ar_log_prior<ad::Var>(path, mu[static_cast<std::size_t>(e * lp.T + u)], sigma[h], rho[h]));
        }
    }
    const ad::Var total = tape.sum(terms);
    std::vector<double> adj;
    tape.backward(total, adj);
    PriorGradient out;
    out.value = total.value();
    out.d_latent.reserve(lp.dim());
    for (const auto* block : {&omega, &mu, &sigma_raw, &rho_raw}) {
        for (const auto& v : *block) out.d_latent.push_back(adj[v.index()]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Per-sequence parameters

namespace detail {

/// Contribution c_{u'} for one sequence, built from `omega(e, u')`. Entries
/// are empty when no effect touches the mark.
template <class S, class OmegaFn>
std::vector<std::optional<S>> contributions(const LinkConfig& link, const EventSequence& seq, OmegaFn&& omega) {
    std::vector<std::optional<S>> c(static_cast<std::size_t>(link.targets()));
    for (int u = 0; u < link.targets(); ++u) {
        auto& cu = c[static_cast<std::size_t>(u)];
        if (link.mode == LinkMode::team_week) {
            cu = omega(link.team_for(seq, u), u);
            continue;
        }
        for (int j = 0; j < link.E; ++j) {
            const double x = seq.covariates.at(static_cast<std::size_t>(j));
            if (x == 0.0) continue;
            const S term = omega(j, u) * x;
            cu = cu ? *cu + term : term;
        }
    }
    return c;
}

/// Replaces the Gamma rows of `p` that the sequence can reach.
template <class S>
void apply_contributions(MarkParamsT<S>& p, const EventSequence& seq, const std::vector<std::optional<S>>& c) {
    using std::log;
    std::vector<char> zone_used(static_cast<std::size_t>(p.Z), 0), mark_used(static_cast<std::size_t>(p.U), 0);
    for (const auto& e : seq.events) {
        zone_used[static_cast<std::size_t>(e.z)] = 1;
        mark_used[static_cast<std::size_t>(e.u)] = 1;
    }
    const int last = p.U - 1;
    for (int z = 0; z < p.Z; ++z) {
        if (!zone_used[static_cast<std::size_t>(z)]) continue;
        for (int a = 0; a < p.U; ++a) {
            if (!mark_used[static_cast<std::size_t>(a)]) continue;
            const S log_base = log(p.g(z, a, last));
            std::vector<S> logits;
            logits.reserve(static_cast<std::size_t>(last));
            for (int u = 0; u < last; ++u) {
                const S phi = log(p.g(z, a, u)) - log_base;
                const auto& cu = c[static_cast<std::size_t>(u)];
                logits.push_back(cu ? phi + *cu : phi);
            }
            const auto row = softmax_with_baseline<S>(logits);
            for (int u = 0; u < p.U; ++u) p.g(z, a, u) = row[static_cast<std::size_t>(u)];
        }
    }
}

} // namespace detail

/// Mark parameters seen by one sequence: `base` supplies delta, B, eta and
/// the base logits; omega shifts the Gamma logits.
inline MarkParams sequence_params(const MarkParams& base, const ARLatentParams& lp, const LinkConfig& link,
                                  const EventSequence& seq) {
    MarkParams p = base;
    const int w = link.slot(seq);
    const auto c = detail::contributions<double>(link, seq, [&](int e, int u) { return lp.omega_at(e, u, w, link.groups); });
    detail::apply_contributions(p, seq, c);
    return p;
}

inline double dataset_mark_loglik(const MarkParams& base, const ARLatentParams& lp, const LinkConfig& link,
                                  const Dataset& d, TruncationConfig trunc, bool normalize = true) {
    double total = 0.0;
    for (const auto& s : d.sequences) total += sequence_mark_loglik(sequence_params(base, lp, link, s), s, trunc, normalize);
    return total;
}

// ---------------------------------------------------------------------------
// Lower-bound objective

/// batch_gradient model: omega entries are extra leaves, Gamma rows are
/// rebuilt per sequence from the sampled rows' logits.
struct ARModel {
    TruncationConfig trunc;
    bool normalize = true;
    const LinkConfig* link = nullptr;
    const ARLatentParams* latent = nullptr;
    bool frozen = false;

    [[nodiscard]] std::size_t extra_dim() const noexcept { return frozen ? 0 : latent->omega.size(); }

    ad::Var sequence_loglik(ad::Tape& tape, const MarkParamsT<ad::Var>& theta, const Dataset& d, std::size_t s,
                            std::size_t /*sample*/, ExtraLeaves& extra) const {
        const EventSequence& seq = d.sequences[s];
        if (frozen || seq.events.empty()) return sequence_mark_loglik(theta, seq, trunc, normalize);
        const int w = link->slot(seq);
        if (w < 0 || w >= latent->S) throw DataError("training sequence order_index outside the latent range");
        std::vector<std::optional<ad::Var>> leaf(static_cast<std::size_t>(latent->E * latent->T));
        auto omega = [&](int e, int u) {
            auto& slot = leaf[static_cast<std::size_t>(e * latent->T + u)];
            if (!slot) {
                const std::size_t idx = latent->omega_index(e, u, w);
                slot = tape.variable(latent->omega[idx]);
                extra.leaves.emplace_back(idx, *slot);
            }
            return *slot;
        };
        const auto c = detail::contributions<ad::Var>(*link, seq, omega);
        MarkParamsT<ad::Var> p = theta;
        detail::apply_contributions(p, seq, c);
        return sequence_mark_loglik(p, seq, trunc, normalize);
    }
};

/// Objective over the flat layout [xi, omega, mu, sigma_raw, rho_raw] from
/// given theta draws: the mini-batch likelihood estimate plus the AR log-prior.
inline ObjectiveEstimate lower_bound_objective(const VariationalParams& xi, const ARLatentParams& lp,
                                               const LinkConfig& link, const std::vector<ThetaSample>& samples,
                                               std::span<const std::size_t> batch, const Dataset& d,
                                               const TrainConfig& cfg, const PriorParams& prior,
                                               const ARConfig& arcfg, WorkerPool& pool) {
    if (!d.ordered()) throw DataError("the latent model needs order_index on every sequence");
    const ARModel model{{cfg.Q}, cfg.normalize, &link, &lp, arcfg.freeze_omega};
    std::vector<MarkParams> thetas;
    thetas.reserve(samples.size());
    for (const auto& s : samples) thetas.push_back(s.theta);
    const BatchGradient bg = batch_gradient(thetas, batch, d, model, pool);

    ObjectiveEstimate est;
    est.value = bg.value;
    est.gradient.assign(xi.dim() + lp.dim(), 0.0);
    for (std::size_t l = 0; l < samples.size(); ++l) {
        const auto g = pullback(xi, samples[l], bg.d_theta[l]);
        for (std::size_t k = 0; k < g.size(); ++k) est.gradient[k] += g[k];
    }
    if (cfg.include_kl) {
        est.kl = lognormal_kl(xi, prior, est.gradient);
        est.value -= est.kl;
    }
    const std::size_t at = xi.dim();
    for (std::size_t k = 0; k < bg.d_extra.size(); ++k) est.gradient[at + k] += bg.d_extra[k];
    if (!arcfg.freeze_omega || arcfg.learn_hyper) {
        const PriorGradient pg = latent_log_prior(lp, link.groups);
        est.value += pg.value;
        const std::size_t n_omega = lp.omega.size();
        for (std::size_t k = 0; k < pg.d_latent.size(); ++k) {
            const bool is_omega = k < n_omega;
            if (is_omega ? arcfg.freeze_omega : !arcfg.learn_hyper) continue;
            est.gradient[at + k] += pg.d_latent[k];
        }
    }
    return est;
}

// ---------------------------------------------------------------------------
// Fitting

class ARProblem {
public:
    ARProblem(const Dataset& train, const Dataset& val, const TrainConfig& cfg, const PriorParams& prior,
              const ARConfig& arcfg, const LinkConfig& link, WorkerPool& pool)
        : train_(train), val_(val), cfg_(cfg), prior_(prior), arcfg_(arcfg), link_(link), pool_(pool),
          xi_(init_variational(train.U, train.zones(), cfg)), latent_(init_latent(link, arcfg)) {}

    std::vector<double> initial() const {
        auto x = xi_.flatten();
        const auto l = latent_.flatten();
        x.insert(x.end(), l.begin(), l.end());
        return x;
    }
    std::size_t num_sequences() const { return train_.sequences.size(); }

    ObjectiveEstimate estimate(const std::vector<double>& x, std::span<const std::size_t> batch, Rng& rng) {
        assign(x);
        std::vector<ThetaSample> samples;
        for (int l = 0; l < cfg_.L; ++l) samples.push_back(sample_theta(xi_, rng));
        return lower_bound_objective(xi_, latent_, link_, samples, batch, train_, cfg_, prior_, arcfg_, pool_);
    }

    double validation(const std::vector<double>& x) {
        assign(x);
        const MarkParams base = plugin_estimate(xi_);
        if (arcfg_.freeze_omega) return dmtpp::dataset_mark_loglik(base, val_, {cfg_.Q}, cfg_.normalize);
        return dmtpp::dataset_mark_loglik(base, latent_, link_, val_, {cfg_.Q}, cfg_.normalize);
    }

    void assign(std::span<const double> x) {
        xi_.assign(x);
        latent_.assign(x.subspan(xi_.dim()));
    }
    const VariationalParams& xi() const { return xi_; }
    const ARLatentParams& latent() const { return latent_; }

private:
    const Dataset& train_;
    const Dataset& val_;
    TrainConfig cfg_;
    PriorParams prior_;
    ARConfig arcfg_;
    LinkConfig link_;
    WorkerPool& pool_;
    VariationalParams xi_;
    ARLatentParams latent_;
};

struct ARFitResult {
    VariationalParams xi;
    TimeParams time;
    LinkConfig link;
    ARLatentParams latent;
    TrainingLog log;
};

inline ARFitResult fit_nonexchangeable(const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                                       const LinkConfig& link, const ARConfig& arcfg = {},
                                       const PriorParams& prior = {}) {
    cfg.validate();
    check_compatible(train, val);
    if (!train.ordered() || !val.ordered()) throw DataError("the latent model needs order_index on every sequence");
    WorkerPool pool(cfg.threads);
    ARFitResult out;
    out.time = fit_time_params(train);
    out.link = link;
    ARProblem problem(train, val, cfg, prior, arcfg, link, pool);
    auto res = run_training(problem, cfg);
    problem.assign(res.best);
    out.xi = problem.xi();
    out.latent = problem.latent();
    out.log = std::move(res.log);
    return out;
}

/// CSV rows: effect, target_mark, order_index, value (1-based effect and mark).
inline void write_abilities(std::ostream& out, const ARLatentParams& lp, const LinkConfig& link) {
    out << "effect,target_mark,order_index,value\n";
    out.precision(17);
    for (int e = 0; e < lp.E; ++e) {
        for (int u = 0; u < lp.T; ++u) {
            for (int s = 0; s < lp.S; ++s) {
                out << e + 1 << ',' << u + 1 << ',' << link.order_base + s << ',' << lp.omega[lp.omega_index(e, u, s)]
                    << '\n';
            }
        }
    }
}

} // namespace dmtpp
