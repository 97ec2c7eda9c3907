#pragma once

// Black-box variational inference for the mark model.
//
// q(delta^z) = Dir(alpha_0^z), q(Gamma^z_u) = Dir(alpha_u^z), and independent
// log-normals over every decay rate and the excitation factor. The default
// objective is the Monte Carlo expected log-likelihood (no KL term); gradients
// reach the Dirichlet concentrations through implicit reparameterisation and
// the log-normal factors through the usual location-scale path.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "dmtpp/autodiff.hpp"
#include "dmtpp/error.hpp"
#include "dmtpp/events.hpp"
#include "dmtpp/markmodel.hpp"
#include "dmtpp/parallel.hpp"
#include "dmtpp/stochastics.hpp"
#include "dmtpp/timemodel.hpp"

namespace dmtpp {

struct TrainConfig {
    int L = 1;                  ///< Monte Carlo samples per step
    int batch_size = 32;
    int epochs = 2000;
    double learning_rate = 0.03;
    double beta1 = 0.5;         ///< Adam momentum
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int Q = 1;
    bool normalize = true;      ///< renormalised PMF (true) or the literal form
    bool include_kl = false;
    int patience = 100;
    std::uint64_t seed = 0;
    std::size_t threads = 0;    ///< 0 = hardware concurrency
    double init_concentration = 2.0;
    double init_log_scale = -1.0;

    void validate() const {
        if (L < 1) throw DataError("L must be >= 1");
        if (batch_size < 1) throw DataError("batch size must be >= 1");
        if (patience < 1) throw DataError("patience must be >= 1");
        if (Q < 1) throw DataError("Q must be >= 1");
        if (epochs < 0) throw DataError("epochs must be >= 0");
        if (!(init_concentration > 0.0)) throw DataError("initial concentration must be positive");
    }
};

struct PriorParams {
    double log_scale_sd = 1.0; ///< sd of the zero-mean Gaussian prior on log B entries and log eta
};

/// Unconstrained variational parameters. Concentrations are softplus(raw),
/// log-normal scales are exp(log_scale).
struct VariationalParams {
    int U = 0;
    int Z = 1;
    std::vector<double> delta_raw;     ///< [z][u]
    std::vector<double> gamma_raw;     ///< [z][from][to]
    std::vector<double> beta_loc;      ///< [z][from][to]
    std::vector<double> beta_log_scale;
    double eta_loc = 0.0;
    double eta_log_scale = 0.0;

    [[nodiscard]] std::size_t dim() const noexcept {
        return delta_raw.size() + gamma_raw.size() + 2 * beta_loc.size() + 2;
    }

    [[nodiscard]] std::vector<double> flatten() const {
        std::vector<double> x;
        x.reserve(dim());
        x.insert(x.end(), delta_raw.begin(), delta_raw.end());
        x.insert(x.end(), gamma_raw.begin(), gamma_raw.end());
        x.insert(x.end(), beta_loc.begin(), beta_loc.end());
        x.insert(x.end(), beta_log_scale.begin(), beta_log_scale.end());
        x.push_back(eta_loc);
        x.push_back(eta_log_scale);
        return x;
    }

    void assign(std::span<const double> x) {
        if (x.size() < dim()) throw DataError("variational parameter vector too short");
        auto at = x.begin();
        auto take = [&](std::vector<double>& v) {
            std::copy(at, at + static_cast<std::ptrdiff_t>(v.size()), v.begin());
            at += static_cast<std::ptrdiff_t>(v.size());
        };
        take(delta_raw);
        take(gamma_raw);
        take(beta_loc);
        take(beta_log_scale);
        eta_loc = *at++;
        eta_log_scale = *at++;
    }

    [[nodiscard]] std::vector<double> delta_concentration(int z) const {
        std::vector<double> a(static_cast<std::size_t>(U));
        for (int u = 0; u < U; ++u) a[static_cast<std::size_t>(u)] = ad::softplus(delta_raw[static_cast<std::size_t>(z * U + u)]);
        return a;
    }
    [[nodiscard]] std::vector<double> gamma_concentration(int z, int from) const {
        std::vector<double> a(static_cast<std::size_t>(U));
        for (int u = 0; u < U; ++u) {
            a[static_cast<std::size_t>(u)] = ad::softplus(gamma_raw[static_cast<std::size_t>((z * U + from) * U + u)]);
        }
        return a;
    }
};

inline double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

inline VariationalParams init_variational(int U, int Z, const TrainConfig& cfg = {}) {
    VariationalParams xi;
    xi.U = U;
    xi.Z = Z;
    const double raw = softplus_inverse(cfg.init_concentration);
    const auto nu = static_cast<std::size_t>(U);
    const auto nz = static_cast<std::size_t>(Z);
    xi.delta_raw.assign(nz * nu, raw);
    xi.gamma_raw.assign(nz * nu * nu, raw);
    xi.beta_loc.assign(nz * nu * nu, 0.0);
    xi.beta_log_scale.assign(nz * nu * nu, cfg.init_log_scale);
    xi.eta_loc = 0.0;
    xi.eta_log_scale = cfg.init_log_scale;
    return xi;
}

/// Dirichlet means and log-normal modes.
inline MarkParams plugin_estimate(const VariationalParams& xi) {
    MarkParams p = make_mark_params(xi.U, xi.Z);
    for (int z = 0; z < xi.Z; ++z) {
        auto set_simplex = [&](const std::vector<double>& a, auto&& out) {
            const double total = std::accumulate(a.begin(), a.end(), 0.0);
            for (int u = 0; u < xi.U; ++u) out(u) = a[static_cast<std::size_t>(u)] / total;
        };
        set_simplex(xi.delta_concentration(z), [&](int u) -> double& { return p.d(z, u); });
        for (int a = 0; a < xi.U; ++a) {
            set_simplex(xi.gamma_concentration(z, a), [&](int u) -> double& { return p.g(z, a, u); });
        }
    }
    for (std::size_t k = 0; k < p.beta.size(); ++k) {
        const double s = std::exp(xi.beta_log_scale[k]);
        p.beta[k] = std::exp(xi.beta_loc[k] - s * s);
    }
    const double s = std::exp(xi.eta_log_scale);
    p.eta = std::exp(xi.eta_loc - s * s);
    return p;
}

// ---------------------------------------------------------------------------
// Sampling theta with pathwise partials

struct ThetaSample {
    MarkParams theta;
    std::vector<DirichletSample> delta_draws; ///< one per zone
    std::vector<DirichletSample> gamma_draws; ///< one per (zone, source mark)
    std::vector<double> beta_eps;
    double eta_eps = 0.0;
};

/// Driving noise of one theta draw: CDF levels of every Gamma variate and the
/// standard normals of the log-normal factors. Replaying it at perturbed
/// parameters gives the common-random-numbers objective.
struct ThetaNoise {
    std::vector<GammaLevel> levels;
    std::vector<double> normals;
};

namespace detail {

inline ThetaSample assemble_theta(const VariationalParams& xi, std::vector<DirichletSample> delta_draws,
                                  std::vector<DirichletSample> gamma_draws, std::vector<double> beta_eps,
                                  double eta_eps) {
    ThetaSample s;
    s.theta = make_mark_params(xi.U, xi.Z);
    for (int z = 0; z < xi.Z; ++z) {
        for (int u = 0; u < xi.U; ++u) {
            s.theta.d(z, u) = delta_draws[static_cast<std::size_t>(z)].value[static_cast<std::size_t>(u)];
        }
        for (int a = 0; a < xi.U; ++a) {
            const auto& row = gamma_draws[static_cast<std::size_t>(z * xi.U + a)];
            for (int u = 0; u < xi.U; ++u) s.theta.g(z, a, u) = row.value[static_cast<std::size_t>(u)];
        }
    }
    for (std::size_t k = 0; k < beta_eps.size(); ++k) {
        s.theta.beta[k] = lognormal_from_noise(xi.beta_loc[k], std::exp(xi.beta_log_scale[k]), beta_eps[k]).value;
    }
    s.theta.eta = lognormal_from_noise(xi.eta_loc, std::exp(xi.eta_log_scale), eta_eps).value;
    s.delta_draws = std::move(delta_draws);
    s.gamma_draws = std::move(gamma_draws);
    s.beta_eps = std::move(beta_eps);
    s.eta_eps = eta_eps;
    return s;
}

} // namespace detail

/// One draw of theta from q_xi. Draw order: delta per zone, Gamma rows per
/// (zone, source), then the normals for B entries and eta.
inline ThetaSample sample_theta(const VariationalParams& xi, Rng& rng, ThetaNoise* noise = nullptr) {
    std::vector<DirichletSample> dd, gd;
    auto draw = [&](const std::vector<double>& alpha) {
        auto s = sample_dirichlet_implicit(alpha, rng);
        if (noise && alpha.size() > 1) {
            for (std::size_t k = 0; k < alpha.size(); ++k) noise->levels.push_back(gamma_level(s.gammas[k], alpha[k]));
        }
        return s;
    };
    for (int z = 0; z < xi.Z; ++z) dd.push_back(draw(xi.delta_concentration(z)));
    for (int z = 0; z < xi.Z; ++z) {
        for (int a = 0; a < xi.U; ++a) gd.push_back(draw(xi.gamma_concentration(z, a)));
    }
    std::vector<double> eps(xi.beta_loc.size());
    for (auto& e : eps) e = rng.normal();
    const double eta_eps = rng.normal();
    if (noise) {
        noise->normals = eps;
        noise->normals.push_back(eta_eps);
    }
    return detail::assemble_theta(xi, std::move(dd), std::move(gd), std::move(eps), eta_eps);
}

/// Deterministic theta from recorded noise: Gamma variates are recovered by
/// inverting their CDF at the stored levels under the current concentrations.
inline ThetaSample theta_from_noise(const VariationalParams& xi, const ThetaNoise& noise) {
    std::size_t next_level = 0;
    auto draw = [&](const std::vector<double>& alpha) {
        if (alpha.size() == 1) return dirichlet_from_gammas(alpha, {1.0});
        std::vector<double> x(alpha.size());
        for (std::size_t k = 0; k < alpha.size(); ++k) x[k] = gamma_quantile(noise.levels.at(next_level++), alpha[k]);
        return dirichlet_from_gammas(alpha, std::move(x));
    };
    std::vector<DirichletSample> dd, gd;
    for (int z = 0; z < xi.Z; ++z) dd.push_back(draw(xi.delta_concentration(z)));
    for (int z = 0; z < xi.Z; ++z) {
        for (int a = 0; a < xi.U; ++a) gd.push_back(draw(xi.gamma_concentration(z, a)));
    }
    std::vector<double> eps(noise.normals.begin(), noise.normals.end() - 1);
    return detail::assemble_theta(xi, std::move(dd), std::move(gd), std::move(eps), noise.normals.back());
}

// Theta layout used for gradients: delta, gamma, beta, eta (matching MarkParams).
inline std::size_t theta_dim(int U, int Z) {
    const auto nu = static_cast<std::size_t>(U);
    return static_cast<std::size_t>(Z) * (nu + 2 * nu * nu) + 1;
}

/// Chain rule from d objective / d theta to d objective / d xi (flat layout).
inline std::vector<double> pullback(const VariationalParams& xi, const ThetaSample& s, std::span<const double> g_theta) {
    const std::size_t U = static_cast<std::size_t>(xi.U);
    const std::size_t Z = static_cast<std::size_t>(xi.Z);
    const std::size_t n_delta = Z * U;
    const std::size_t n_gamma = Z * U * U;
    const std::size_t n_beta = n_gamma;
    std::vector<double> g(xi.dim(), 0.0);

    auto simplex_block = [&](const DirichletSample& draw, std::span<const double> g_z, std::span<const double> raw,
                             std::span<double> out) {
        for (std::size_t m = 0; m < U; ++m) {
            double acc = 0.0;
            for (std::size_t k = 0; k < U; ++k) acc += g_z[k] * draw.partial(k, m);
            out[m] = acc * ad::sigmoid(raw[m]);
        }
    };
    for (std::size_t z = 0; z < Z; ++z) {
        simplex_block(s.delta_draws[z], g_theta.subspan(z * U, U), std::span(xi.delta_raw).subspan(z * U, U),
                      std::span(g).subspan(z * U, U));
        for (std::size_t a = 0; a < U; ++a) {
            const std::size_t row = (z * U + a) * U;
            simplex_block(s.gamma_draws[z * U + a], g_theta.subspan(n_delta + row, U),
                          std::span(xi.gamma_raw).subspan(row, U), std::span(g).subspan(n_delta + row, U));
        }
    }
    const std::size_t beta_at = n_delta + n_gamma;
    for (std::size_t k = 0; k < n_beta; ++k) {
        const double gb = g_theta[n_delta + n_gamma + k];
        const double v = s.theta.beta[k];
        const double scale = std::exp(xi.beta_log_scale[k]);
        g[beta_at + k] = gb * v;
        g[beta_at + n_beta + k] = gb * s.beta_eps[k] * v * scale;
    }
    const double ge = g_theta[n_delta + n_gamma + n_beta];
    const double scale = std::exp(xi.eta_log_scale);
    g[beta_at + 2 * n_beta] = ge * s.theta.eta;
    g[beta_at + 2 * n_beta + 1] = ge * s.eta_eps * s.theta.eta * scale;
    return g;
}

/// Tape leaves for a theta value, in theta layout order.
inline MarkParamsT<ad::Var> theta_leaves(ad::Tape& tape, const MarkParams& theta) {
    MarkParamsT<ad::Var> p;
    p.U = theta.U;
    p.Z = theta.Z;
    p.delta.reserve(theta.delta.size());
    for (double v : theta.delta) p.delta.push_back(tape.variable(v));
    for (double v : theta.gamma) p.gamma.push_back(tape.variable(v));
    for (double v : theta.beta) p.beta.push_back(tape.variable(v));
    p.eta = tape.variable(theta.eta);
    return p;
}

// ---------------------------------------------------------------------------
// Mini-batch likelihood gradients

/// Per-sequence likelihood on the tape. Models may append leaves for extra
/// (non-theta) parameters as (extra index, leaf) pairs.
struct ExtraLeaves {
    std::vector<std::pair<std::size_t, ad::Var>> leaves;
};

/// The exchangeable model: every sequence shares theta.
struct ExchangeableModel {
    TruncationConfig trunc;
    bool normalize = true;

    [[nodiscard]] std::size_t extra_dim() const noexcept { return 0; }

    ad::Var sequence_loglik(ad::Tape&, const MarkParamsT<ad::Var>& theta, const Dataset& d, std::size_t s,
                            std::size_t /*sample*/, ExtraLeaves&) const {
        return sequence_mark_loglik(theta, d.sequences[s], trunc, normalize);
    }
};

struct BatchGradient {
    double value = 0.0;                         ///< (1/L) sum_l (S/|B|) sum_{s in B} l_s(theta_l)
    std::vector<std::vector<double>> d_theta;   ///< per sample, already scaled
    std::vector<double> d_extra;                ///< already scaled
};

/// Parallel over (sample, sequence) pairs with one tape per worker; partial
/// results are reduced in (sample, batch position) order.
template <class Model>
BatchGradient batch_gradient(const std::vector<MarkParams>& thetas, std::span<const std::size_t> batch,
                             const Dataset& d, const Model& model, WorkerPool& pool) {
    if (batch.empty()) throw DataError("empty mini-batch");
    const std::size_t L = thetas.size();
    const std::size_t B = batch.size();
    const std::size_t tdim = theta_dim(thetas.front().U, thetas.front().Z);

    struct Slot {
        double value = 0.0;
        std::vector<double> d_theta;
        std::vector<std::pair<std::size_t, double>> d_extra;
        bool active = false;
    };
    std::vector<Slot> slots(L * B);
    std::vector<ad::Tape> tapes(pool.size());
    std::vector<std::vector<double>> adjoints(pool.size());

    pool.parallel_for(L * B, [&](std::size_t task, std::size_t worker) {
        const std::size_t l = task / B;
        const std::size_t s = batch[task % B];
        ad::Tape& tape = tapes[worker];
        tape.clear();
        Slot& slot = slots[task];
        const auto leaves = theta_leaves(tape, thetas[l]);
        ExtraLeaves extra;
        const ad::Var ll = model.sequence_loglik(tape, leaves, d, s, l, extra);
        if (ll.tape() == nullptr) return; // sequence without events
        slot.active = true;
        slot.value = ll.value();
        auto& adj = adjoints[worker];
        tape.backward(ll, adj);
        // Leaves occupy nodes [0, tdim) in theta layout order.
        slot.d_theta.assign(adj.begin(), adj.begin() + static_cast<std::ptrdiff_t>(tdim));
        for (const auto& [idx, leaf] : extra.leaves) slot.d_extra.emplace_back(idx, adj[leaf.index()]);
    });

    BatchGradient out;
    out.d_theta.assign(L, std::vector<double>(tdim, 0.0));
    out.d_extra.assign(model.extra_dim(), 0.0);
    const double scale = static_cast<double>(d.sequences.size()) / static_cast<double>(B);
    double total = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
        double batch_sum = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            const Slot& slot = slots[l * B + b];
            if (!slot.active) continue;
            batch_sum += slot.value;
            for (std::size_t k = 0; k < tdim; ++k) out.d_theta[l][k] += slot.d_theta[k];
            for (const auto& [idx, g] : slot.d_extra) out.d_extra[idx] += g;
        }
        total += scale * batch_sum;
    }
    const double per_sample = scale / static_cast<double>(L);
    for (auto& g : out.d_theta) {
        for (auto& x : g) x *= per_sample;
    }
    for (auto& x : out.d_extra) x *= per_sample;
    out.value = total / static_cast<double>(L);
    return out;
}

// ---------------------------------------------------------------------------
// Objective

struct ObjectiveEstimate {
    double value = 0.0;
    std::vector<double> gradient; ///< w.r.t. the flat unconstrained xi
    double kl = 0.0;
};

/// KL between the log-normal factors and the zero-mean Gaussian prior on the
/// log scale, with its gradient added (negated) into `grad`.
inline double lognormal_kl(const VariationalParams& xi, const PriorParams& prior, std::span<double> grad) {
    const double tau2 = prior.log_scale_sd * prior.log_scale_sd;
    const std::size_t n_beta = xi.beta_loc.size();
    const std::size_t at = xi.delta_raw.size() + xi.gamma_raw.size();
    double kl = 0.0;
    auto factor = [&](double m, double log_s, double& g_m, double& g_log_s) {
        const double s2 = std::exp(2.0 * log_s);
        kl += std::log(prior.log_scale_sd) - log_s + (s2 + m * m) / (2.0 * tau2) - 0.5;
        g_m -= m / tau2;
        g_log_s -= -1.0 + s2 / tau2;
    };
    for (std::size_t k = 0; k < n_beta; ++k) {
        factor(xi.beta_loc[k], xi.beta_log_scale[k], grad[at + k], grad[at + n_beta + k]);
    }
    factor(xi.eta_loc, xi.eta_log_scale, grad[at + 2 * n_beta], grad[at + 2 * n_beta + 1]);
    return kl;
}

/// Objective from given theta draws (the caller fixes the randomness).
template <class Model = ExchangeableModel>
ObjectiveEstimate objective_from_samples(const VariationalParams& xi, const std::vector<ThetaSample>& samples,
                                         std::span<const std::size_t> batch, const Dataset& d,
                                         const TrainConfig& cfg, const PriorParams& prior, WorkerPool& pool,
                                         const Model& model = {}) {
    std::vector<MarkParams> thetas;
    thetas.reserve(samples.size());
    for (const auto& s : samples) thetas.push_back(s.theta);
    const BatchGradient bg = batch_gradient(thetas, batch, d, model, pool);
    ObjectiveEstimate est;
    est.value = bg.value;
    est.gradient.assign(xi.dim(), 0.0);
    for (std::size_t l = 0; l < samples.size(); ++l) {
        const auto g = pullback(xi, samples[l], bg.d_theta[l]);
        for (std::size_t k = 0; k < g.size(); ++k) est.gradient[k] += g[k];
    }
    if (cfg.include_kl) {
        est.kl = lognormal_kl(xi, prior, est.gradient);
        est.value -= est.kl;
    }
    return est;
}

inline std::vector<std::size_t> all_sequences(const Dataset& d) {
    std::vector<std::size_t> idx(d.sequences.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

/// Mini-batch Monte Carlo objective with L fresh draws from rng.
inline ObjectiveEstimate objective_estimate(const VariationalParams& xi, std::span<const std::size_t> batch,
                                            const Dataset& d, const TrainConfig& cfg, const PriorParams& prior,
                                            Rng& rng, WorkerPool& pool) {
    std::vector<ThetaSample> samples;
    for (int l = 0; l < cfg.L; ++l) samples.push_back(sample_theta(xi, rng));
    ExchangeableModel model{{cfg.Q}, cfg.normalize};
    return objective_from_samples(xi, samples, batch, d, cfg, prior, pool, model);
}

// ---------------------------------------------------------------------------
// Adam (ascent)

class Adam {
public:
    Adam(std::size_t dim, double lr, double beta1, double beta2, double eps)
        : m_(dim, 0.0), v_(dim, 0.0), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void ascend(std::vector<double>& x, std::span<const double> g) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t k = 0; k < x.size(); ++k) {
            m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * g[k];
            v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * g[k] * g[k];
            x[k] += lr_ * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + eps_);
        }
    }

private:
    std::vector<double> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
    int epoch = 0;
    double objective = 0.0;  ///< mean mini-batch objective over the epoch
    double validation = 0.0; ///< plug-in validation mark log-likelihood
    int skipped_steps = 0;
};

struct TrainingLog {
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    bool stopped_early = false;
};

/// What the generic loop needs from a model: an initial parameter vector, a
/// stochastic objective with gradient, and a deterministic validation score.
template <class P>
concept TrainingProblem = requires(P& p, const std::vector<double>& x, std::span<const std::size_t> batch, Rng& rng) {
    { p.initial() } -> std::convertible_to<std::vector<double>>;
    { p.estimate(x, batch, rng) } -> std::convertible_to<ObjectiveEstimate>;
    { p.validation(x) } -> std::convertible_to<double>;
    { p.num_sequences() } -> std::convertible_to<std::size_t>;
};

struct TrainingResult {
    std::vector<double> best;
    TrainingLog log;
};

/// Adam ascent with shuffled mini-batches and early stopping on the
/// validation score. Returns the parameters of the best validation epoch.
template <TrainingProblem P>
TrainingResult run_training(P& problem, const TrainConfig& cfg) {
    cfg.validate();
    std::vector<double> x = problem.initial();
    Adam adam(x.size(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
    Rng shuffle_rng(cfg.seed, 1);
    Rng theta_rng(cfg.seed, 2);

    TrainingResult result;
    result.best = x;
    double best = -std::numeric_limits<double>::infinity();
    int stale = 0;
    int consecutive_bad = 0;
    std::vector<std::size_t> order(problem.num_sequences());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        EpochRecord rec;
        rec.epoch = epoch;
        double obj_sum = 0.0;
        int obj_count = 0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t len = std::min(order.size() - at, static_cast<std::size_t>(cfg.batch_size));
            const std::span<const std::size_t> batch(order.data() + at, len);
            std::optional<ObjectiveEstimate> est;
            try {
                est = problem.estimate(x, batch, theta_rng);
            } catch (const NumericError&) {
                est.reset();
            }
            bool finite = est.has_value() && std::isfinite(est->value);
            if (finite) {
                for (double g : est->gradient) {
                    if (!std::isfinite(g)) {
                        finite = false;
                        break;
                    }
                }
            }
            if (!finite) {
                ++rec.skipped_steps;
                if (++consecutive_bad >= 50) {
                    throw NumericError("50 consecutive non-finite gradient steps (epoch " + std::to_string(epoch) + ")");
                }
                continue;
            }
            consecutive_bad = 0;
            obj_sum += est->value;
            ++obj_count;
            adam.ascend(x, est->gradient);
        }
        rec.objective = obj_count > 0 ? obj_sum / obj_count : std::numeric_limits<double>::quiet_NaN();
        try {
            rec.validation = problem.validation(x);
        } catch (const NumericError&) {
            rec.validation = -std::numeric_limits<double>::infinity();
        }
        result.log.epochs.push_back(rec);
        if (rec.validation > best) {
            best = rec.validation;
            result.best = x;
            result.log.best_epoch = epoch;
            stale = 0;
        } else if (++stale >= cfg.patience) {
            result.log.stopped_early = true;
            break;
        }
    }
    return result;
}

/// Exchangeable training problem over a fixed dataset pair.
class ExchangeableProblem {
public:
    ExchangeableProblem(const Dataset& train, const Dataset& val, const TrainConfig& cfg, const PriorParams& prior,
                        WorkerPool& pool)
        : train_(train), val_(val), cfg_(cfg), prior_(prior), pool_(pool),
          xi_(init_variational(train.U, train.zones(), cfg)) {}

    std::vector<double> initial() const { return xi_.flatten(); }
    std::size_t num_sequences() const { return train_.sequences.size(); }

    ObjectiveEstimate estimate(const std::vector<double>& x, std::span<const std::size_t> batch, Rng& rng) {
        xi_.assign(x);
        return objective_estimate(xi_, batch, train_, cfg_, prior_, rng, pool_);
    }

    double validation(const std::vector<double>& x) {
        xi_.assign(x);
        return dataset_mark_loglik(plugin_estimate(xi_), val_, {cfg_.Q}, cfg_.normalize);
    }

    VariationalParams params(const std::vector<double>& x) const {
        VariationalParams xi = xi_;
        xi.assign(x);
        return xi;
    }

private:
    const Dataset& train_;
    const Dataset& val_;
    TrainConfig cfg_;
    PriorParams prior_;
    WorkerPool& pool_;
    VariationalParams xi_;
};

struct FitResult {
    VariationalParams xi;
    TimeParams time;
    TrainingLog log;
};

inline void check_compatible(const Dataset& a, const Dataset& b) {
    if (a.U != b.U || a.zones() != b.zones()) throw DataError("training and validation data differ in U or Z");
}

/// Fits the time model in closed form, then the variational parameters by Adam.
inline FitResult fit(const Dataset& train, const Dataset& val, const TrainConfig& cfg, const PriorParams& prior = {}) {
    cfg.validate();
    check_compatible(train, val);
    WorkerPool pool(cfg.threads);
    FitResult out;
    out.time = fit_time_params(train);
    ExchangeableProblem problem(train, val, cfg, prior, pool);
    auto res = run_training(problem, cfg);
    out.xi = problem.params(res.best);
    out.log = std::move(res.log);
    return out;
}

} // namespace dmtpp
