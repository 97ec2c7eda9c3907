#pragma once

// Special functions used by the samplers, the time model and the tape.

#include <array>
#include <cmath>
#include <limits>
#include <numbers>

#include "dmtpp/error.hpp"

namespace dmtpp::special {

inline constexpr double kEps = std::numeric_limits<double>::epsilon();

/// Lanczos approximation (g = 7, n = 9) with reflection for x < 0.5.
inline double log_gamma(double x) {
    static constexpr std::array<double, 9> c{
        0.99999999999980993,     676.5203681218851,     -1259.1392167224028,
        771.32342877765313,      -176.61502916214059,   12.507343278686905,
        -0.13857109526572012,    9.9843695780195716e-6, 1.5056327351493116e-7};
    if (!(x > 0.0) && x == std::floor(x)) {
        throw DomainError("log_gamma", "pole at non-positive integer");
    }
    if (x < 0.5) {
        return std::log(std::numbers::pi / std::abs(std::sin(std::numbers::pi * x))) -
               log_gamma(1.0 - x);
    }
    x -= 1.0;
    double a = c[0];
    const double t = x + 7.5;
    for (int i = 1; i < 9; ++i) {
        a += c[i] / (x + i);
    }
    return 0.5 * std::log(2.0 * std::numbers::pi) + (x + 0.5) * std::log(t) - t + std::log(a);
}

namespace detail {

// Series for P(a, x), valid (and fast) for x < a + 1.
inline double gamma_p_series(double a, double x) {
    double ap = a;
    double del = 1.0 / a;
    double sum = del;
    for (int n = 0; n < 10000; ++n) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::abs(del) < std::abs(sum) * kEps) {
            break;
        }
    }
    return sum * std::exp(-x + a * std::log(x) - log_gamma(a));
}

// Modified Lentz continued fraction for Q(a, x), valid for x >= a + 1.
inline double gamma_q_fraction(double a, double x) {
    constexpr double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 10000; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) {
            break;
        }
    }
    return std::exp(-x + a * std::log(x) - log_gamma(a)) * h;
}

} // namespace detail

/// Regularised lower incomplete gamma P(a, x).
inline double reg_lower_incomplete_gamma(double a, double x) {
    if (!(a > 0.0) || x < 0.0) {
        throw DomainError("reg_lower_incomplete_gamma", "requires a > 0 and x >= 0");
    }
    if (x == 0.0) return 0.0;
    if (std::isinf(x)) return 1.0;
    if (x < a + 1.0) return detail::gamma_p_series(a, x);
    return 1.0 - detail::gamma_q_fraction(a, x);
}

/// Regularised upper incomplete gamma Q(a, x) = 1 - P(a, x), accurate in the upper tail.
inline double reg_upper_incomplete_gamma(double a, double x) {
    if (!(a > 0.0) || x < 0.0) {
        throw DomainError("reg_upper_incomplete_gamma", "requires a > 0 and x >= 0");
    }
    if (x == 0.0) return 1.0;
    if (std::isinf(x)) return 0.0;
    if (x < a + 1.0) return 1.0 - detail::gamma_p_series(a, x);
    return detail::gamma_q_fraction(a, x);
}

/// Density of Gamma(a, 1) at x.
inline double gamma_pdf(double a, double x) {
    if (x <= 0.0) return 0.0;
    return std::exp((a - 1.0) * std::log(x) - x - log_gamma(a));
}

/// erf(x) = sign(x) P(1/2, x^2); accurate to a few ulps over the real line.
inline double erf(double x) {
    if (x == 0.0) return 0.0;
    const double p = reg_lower_incomplete_gamma(0.5, x * x);
    return x < 0.0 ? -p : p;
}

inline double erfc(double x) {
    if (x < 0.0) return 1.0 + reg_lower_incomplete_gamma(0.5, x * x);
    return reg_upper_incomplete_gamma(0.5, x * x);
}

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * erfc(-x / std::numbers::sqrt2); }

/// log of the standard normal upper tail, log(1 - Phi(x)), stable for large x.
inline double normal_log_sf(double x) {
    const double sf = 0.5 * erfc(x / std::numbers::sqrt2);
    if (sf > 0.0) return std::log(sf);
    // Mills-ratio asymptotic series once erfc underflows (x > 37 here).
    const double r = 1.0 / (x * x);
    const double series = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r)));
    return -0.5 * x * x - std::log(x) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(series);
}

inline double lognormal_log_pdf(double r, double mu, double var) {
    if (!(r > 0.0)) return -std::numeric_limits<double>::infinity();
    const double lr = std::log(r);
    const double d = lr - mu;
    return -lr - 0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * d * d / var;
}

inline double lognormal_pdf(double r, double mu, double var) {
    return std::exp(lognormal_log_pdf(r, mu, var));
}

inline double lognormal_cdf(double r, double mu, double var) {
    if (!(r > 0.0)) return 0.0;
    return normal_cdf((std::log(r) - mu) / std::sqrt(var));
}

/// log(1 - LognormalCdf(r)); 0 for r <= 0.
inline double lognormal_log_sf(double r, double mu, double var) {
    if (!(r > 0.0)) return 0.0;
    return normal_log_sf((std::log(r) - mu) / std::sqrt(var));
}

} // namespace dmtpp::special
