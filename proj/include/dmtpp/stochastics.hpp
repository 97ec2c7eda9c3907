#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "dmtpp/error.hpp"
#include "dmtpp/special.hpp"

namespace dmtpp {

// ---------------------------------------------------------------------------
// Counter-based RNG. Output n of stream s under seed k is a pure function of
// (k, s, n), so worker streams reproduce regardless of scheduling.

class Rng {
public:
    Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
        : key_(splitmix(seed ^ splitmix(stream + 0x632BE59BD9B4E019ULL))) {}

    std::uint64_t next_u64() noexcept { return splitmix(key_ ^ splitmix(counter_++ * 0xD1B54A32D192ED03ULL)); }

    /// Uniform on the open interval (0, 1).
    double uniform() noexcept { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    /// Standard normal by Box-Muller (one variate per call).
    double normal() noexcept {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept {
        // Lemire's multiply-shift; bias is < n / 2^64 and irrelevant here.
        __extension__ using u128 = unsigned __int128;
        return static_cast<std::uint64_t>((static_cast<u128>(next_u64()) * n) >> 64);
    }

    /// Index drawn from a discrete distribution with non-negative weights.
    std::size_t categorical(std::span<const double> weights) noexcept {
        double total = 0.0;
        for (double w : weights) total += w;
        double target = uniform() * total;
        for (std::size_t k = 0; k < weights.size(); ++k) {
            target -= weights[k];
            if (target < 0.0) return k;
        }
        for (std::size_t k = weights.size(); k-- > 0;) {
            if (weights[k] > 0.0) return k;
        }
        return 0;
    }

    template <class T>
    void shuffle(std::vector<T>& v) noexcept {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

    [[nodiscard]] std::uint64_t counter() const noexcept { return counter_; }

private:
    static constexpr std::uint64_t splitmix(std::uint64_t z) noexcept {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

// ---------------------------------------------------------------------------
// Log-normal reparameterisation

struct ReparamScalar {
    double value = 0.0;
    double d_mu = 0.0;    ///< d value / d mu
    double d_sigma = 0.0; ///< d value / d sigma
};

/// value = exp(mu + sigma * eps) for a given standard-normal eps.
inline ReparamScalar lognormal_from_noise(double mu, double sigma, double eps) {
    const double v = std::exp(mu + sigma * eps);
    return {v, v, eps * v};
}

inline ReparamScalar sample_lognormal_reparam(double mu, double sigma, Rng& rng) {
    if (!(sigma > 0.0)) throw DomainError("sample_lognormal_reparam", "sigma must be positive");
    return lognormal_from_noise(mu, sigma, rng.normal());
}

// ---------------------------------------------------------------------------
// Gamma

/// Marsaglia-Tsang squeeze; shapes below one use the x * U^(1/a) boost.
inline double sample_gamma(double shape, Rng& rng) {
    if (!(shape > 0.0)) throw DomainError("sample_gamma", "shape must be positive");
    if (shape < 1.0) {
        const double x = sample_gamma(shape + 1.0, rng);
        return std::max(x * std::pow(rng.uniform(), 1.0 / shape), std::numeric_limits<double>::min());
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = 0.0;
        double v = 0.0;
        do {
            x = rng.normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = rng.uniform();
        const double x2 = x * x;
        if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
        if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
    }
}

/// Implicit shape derivative of a Gamma(shape, 1) draw x:
/// dx/da = -(dF/da) / (dF/dx), dF/da by central differences of P(a, x).
inline double gamma_shape_derivative(double x, double shape) {
    const double h = std::min(1e-4 * std::max(1.0, shape), 0.5 * shape);
    const double dF_da = (special::reg_lower_incomplete_gamma(shape + h, x) -
                          special::reg_lower_incomplete_gamma(shape - h, x)) /
                         (2.0 * h);
    const double pdf = special::gamma_pdf(shape, x);
    if (!(pdf > 0.0)) return 0.0;
    return -dF_da / pdf;
}

/// CDF level of a Gamma draw stored as both tails, so the quantile can be
/// recovered accurately on either side.
struct GammaLevel {
    double lower = 0.5; ///< P(a, x)
    double upper = 0.5; ///< Q(a, x)
};

inline GammaLevel gamma_level(double x, double shape) {
    return {special::reg_lower_incomplete_gamma(shape, x), special::reg_upper_incomplete_gamma(shape, x)};
}

/// Inverse of the Gamma(shape, 1) CDF by safeguarded Newton iteration.
inline double gamma_quantile(GammaLevel level, double shape) {
    if (!(shape > 0.0)) throw DomainError("gamma_quantile", "shape must be positive");
    const bool use_upper = level.upper < level.lower;
    auto residual = [&](double x) {
        // Increasing in x in both branches.
        return use_upper ? level.upper - special::reg_upper_incomplete_gamma(shape, x)
                         : special::reg_lower_incomplete_gamma(shape, x) - level.lower;
    };
    double lo = 0.0;
    double hi = std::max(1.0, shape);
    while (residual(hi) < 0.0) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e300) break;
    }
    double x = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
        const double f = residual(x);
        if (f == 0.0) break;
        if (f < 0.0) lo = x; else hi = x;
        const double pdf = special::gamma_pdf(shape, x);
        double next = pdf > 0.0 ? x - f / pdf : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - x) <= 4.0 * special::kEps * x || hi - lo <= 4.0 * special::kEps * hi) {
            x = next;
            break;
        }
        x = next;
    }
    return std::max(x, std::numeric_limits<double>::min());
}

// ---------------------------------------------------------------------------
// Dirichlet via normalised Gammas with implicit pathwise partials

struct DirichletSample {
    std::vector<double> value;     ///< point on the simplex
    std::vector<double> partials;  ///< row-major K x K, entry (k, m) = dz_k / dalpha_m
    std::vector<double> gammas;    ///< underlying Gamma draws

    [[nodiscard]] double partial(std::size_t k, std::size_t m) const { return partials[k * value.size() + m]; }
};

/// Builds the sample and its partials from Gamma draws x_k ~ Gamma(alpha_k).
inline DirichletSample dirichlet_from_gammas(std::span<const double> alpha, std::vector<double> x) {
    const std::size_t K = alpha.size();
    DirichletSample s;
    s.value.assign(K, 0.0);
    s.partials.assign(K * K, 0.0);
    if (K == 1) {
        s.value[0] = 1.0;
        s.gammas = std::move(x);
        return s;
    }
    double total = 0.0;
    for (double xi : x) total += xi;
    for (std::size_t k = 0; k < K; ++k) s.value[k] = x[k] / total;
    // z_k = x_k / S  =>  dz_k/dalpha_m = (1[k==m] - z_k) (dx_m/dalpha_m) / S
    for (std::size_t m = 0; m < K; ++m) {
        const double dx = gamma_shape_derivative(x[m], alpha[m]) / total;
        for (std::size_t k = 0; k < K; ++k) {
            s.partials[k * K + m] = ((k == m ? 1.0 : 0.0) - s.value[k]) * dx;
        }
    }
    s.gammas = std::move(x);
    return s;
}

inline void check_concentrations(std::span<const double> alpha) {
    if (alpha.empty()) throw DomainError("sample_dirichlet", "empty concentration vector");
    for (double a : alpha) {
        if (!(a > 0.0) || !std::isfinite(a)) {
            throw DomainError("sample_dirichlet", "concentration must be positive and finite");
        }
    }
}

inline DirichletSample sample_dirichlet_implicit(std::span<const double> alpha, Rng& rng) {
    check_concentrations(alpha);
    if (alpha.size() == 1) return dirichlet_from_gammas(alpha, {1.0});
    std::vector<double> x(alpha.size());
    for (std::size_t k = 0; k < alpha.size(); ++k) x[k] = sample_gamma(alpha[k], rng);
    return dirichlet_from_gammas(alpha, std::move(x));
}

} // namespace dmtpp
