#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

namespace ccorbit {

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double normal_pdf(double x) {
    static const double inv_sqrt_2pi = 0.3989422804014326779;
    return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

/// Standard normal quantile (inverse CDF), accurate to full double precision.
/// Rational tail seed (Abramowitz & Stegun 26.2.23) polished by Newton iterations
/// on erfc, which keeps relative accuracy in both tails.
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_quantile: p must be in (0,1)");
    const bool upper = p > 0.5;
    const double pt = upper ? 1.0 - p : p;  // lower-tail probability <= 0.5
    // Seed: x0 such that Phi(-x0) ~ pt.
    const double t = std::sqrt(-2.0 * std::log(pt));
    double x = t - (2.30753 + 0.27061 * t) / (1.0 + 0.99229 * t + 0.04481 * t * t);
    // Newton on f(x) = Phi(-x) - pt (well-conditioned in the tail).
    for (int i = 0; i < 4; ++i) {
        const double f = 0.5 * std::erfc(x / std::sqrt(2.0)) - pt;
        const double df = -normal_pdf(x);
        const double dx = f / df;
        x -= dx;
        if (std::abs(dx) < 1e-15 * std::max(1.0, std::abs(x))) break;
    }
    return upper ? x : -x;
}

namespace detail {

/// Regularized lower incomplete gamma P(a,x) by series (x < a+1) or
/// continued fraction (otherwise). Standard Lentz/Temme construction.
inline double gamma_p(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw std::domain_error("gamma_p: invalid arguments");
    if (x == 0.0) return 0.0;
    const double lgam = std::lgamma(a);
    if (x < a + 1.0) {
        // series
        double ap = a;
        double sum = 1.0 / a;
        double del = sum;
        for (int n = 0; n < 500; ++n) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::abs(del) < std::abs(sum) * 1e-16) break;
        }
        return sum * std::exp(-x + a * std::log(x) - lgam);
    }
    // continued fraction for Q(a,x), modified Lentz
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-16) break;
    }
    const double q = std::exp(-x + a * std::log(x) - lgam) * h;
    return 1.0 - q;
}

}  // namespace detail

/// Chi-squared CDF with n degrees of freedom.
inline double chi2_cdf(double x, double n) {
    if (x <= 0.0) return 0.0;
    return detail::gamma_p(0.5 * n, 0.5 * x);
}

inline double chi2_pdf(double x, double n) {
    if (x <= 0.0) return 0.0;
    const double ha = 0.5 * n;
    return std::exp((ha - 1.0) * std::log(x) - 0.5 * x - ha * std::log(2.0) - std::lgamma(ha));
}

/// Chi-squared quantile: smallest x with F(x) >= p. Wilson-Hilferty seed,
/// safeguarded Newton on the CDF.
inline double chi2_quantile(double p, double n) {
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("chi2_quantile: p must be in (0,1)");
    if (!(n >= 1.0)) throw std::domain_error("chi2_quantile: n must be >= 1");
    // Wilson-Hilferty approximation as the seed
    const double z = normal_quantile(p);
    const double f = 1.0 - 2.0 / (9.0 * n) + z * std::sqrt(2.0 / (9.0 * n));
    double x = n * f * f * f;
    if (!(x > 0.0)) x = 1e-8;
    // bracket
    double lo = 0.0, hi = std::max(4.0 * x, n + 40.0 * std::sqrt(2.0 * n) + 40.0);
    while (chi2_cdf(hi, n) < p) hi *= 2.0;
    for (int i = 0; i < 200; ++i) {
        const double fx = chi2_cdf(x, n) - p;
        if (fx > 0.0) hi = x; else lo = x;
        const double dfx = chi2_pdf(x, n);
        double step = (dfx > 0.0) ? fx / dfx : 0.0;
        double xn = x - step;
        if (!(xn > lo && xn < hi)) xn = 0.5 * (lo + hi);  // bisect fallback
        if (std::abs(xn - x) < 1e-15 * std::max(1.0, x)) { x = xn; break; }
        x = xn;
    }
    return x;
}

}  // namespace ccorbit
