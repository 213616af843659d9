#pragma once

#include <cmath>
#include <utility>

#include "grmoe/errors.hpp"
#include "grmoe/manifold.hpp"
#include "grmoe/matrix.hpp"
#include "grmoe/rng.hpp"

namespace grmoe {

// Normalizing constant Z(κ) of the scalar-concentration Bingham density
// exp(κ‖Uᵀx‖²) on the unit sphere S^{d−1}, U a d×k frame. By rotation
// invariance Z depends only on (κ, d, k):
//   Z = E_{x~Unif}[exp(κ·B)],  B = ‖Uᵀx‖² ~ Beta(k/2, (d−k)/2),
// which is the confluent hypergeometric value ₁F₁(k/2; d/2; κ).
struct ZQuery {
    double kappa = 0.0;
    int d = 0;
    int k = 0;

    void validate() const {
        if (k < 1 || k > d) throw InvalidArgument("ZQuery requires 1 <= k <= d");
        if (!std::isfinite(kappa) || kappa < 0.0)
            throw InvalidArgument("ZQuery requires finite kappa >= 0");
    }
};

namespace detail {

// Kummer series ₁F₁(a; b; x) for a, b, x > 0: monotone terms, no
// cancellation. Terminates when the term falls below 1e-15 of the sum.
inline double kummer(double a, double b, double x) {
    double term = 1.0;
    double sum = 1.0;
    for (int m = 0; m < 10000; ++m) {
        term *= (a + m) / (b + m) * x / (m + 1);
        sum += term;
        if (term < 1e-15 * sum) return sum;
    }
    throw ConvergenceFailure("kummer series did not converge in 10000 terms");
}

}  // namespace detail

// Exact series reference. Restricted to κ ≤ 200 where the series is the
// right tool; larger κ would need asymptotic handling this library does not
// claim.
inline double z_series(const ZQuery& q) {
    q.validate();
    if (q.kappa > 200.0) throw OutOfDomain("z_series: kappa > 200 outside series regime");
    if (q.kappa == 0.0) return 1.0;
    return detail::kummer(0.5 * q.k, 0.5 * q.d, q.kappa);
}

// Analytic derivative d log Z / dκ = E-weighted mean affinity, via
// d/dx ₁F₁(a;b;x) = (a/b)·₁F₁(a+1;b+1;x).
inline double z_series_dlog(const ZQuery& q) {
    q.validate();
    if (q.kappa > 200.0) throw OutOfDomain("z_series_dlog: kappa > 200");
    const double a = 0.5 * q.k, b = 0.5 * q.d;
    const double num = (a / b) * detail::kummer(a + 1.0, b + 1.0, q.kappa);
    const double den = detail::kummer(a, b, q.kappa);
    return num / den;
}

namespace detail {

// Saddle point t̂ of the two-eigenvalue spectrum {κ·1_k, 0·1_{d−k}}: the
// root of K'(t) = k/(2(t−κ)) + (d−k)/(2t) = 1 on (κ, κ+d). K' decreases
// monotonically from +∞ to below 1 on that interval, so bisection always
// brackets; a Newton polish then drives the residual to 1e-12.
inline double saddle_root(double kappa, int d, int k) {
    const double dk = static_cast<double>(d - k);
    auto kprime = [&](double t) { return 0.5 * k / (t - kappa) + 0.5 * dk / t; };

    double lo = kappa + 1e-12 * (1.0 + kappa);
    double hi = kappa + static_cast<double>(d);
    int iters = 0;
    // Bisection to a loose bracket.
    for (; iters < 150; ++iters) {
        const double mid = 0.5 * (lo + hi);
        if (kprime(mid) > 1.0)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < 1e-9 * (1.0 + hi)) break;
    }
    // Newton polish on f(t) = K'(t) − 1.
    double t = 0.5 * (lo + hi);
    for (; iters < 200; ++iters) {
        const double f = kprime(t) - 1.0;
        if (std::abs(f) <= 1e-12) return t;
        const double fp = -0.5 * k / ((t - kappa) * (t - kappa)) - 0.5 * dk / (t * t);
        double step = f / fp;
        double tn = t - step;
        if (!(tn > kappa) || !std::isfinite(tn)) tn = 0.5 * (t + lo);
        t = tn;
    }
    if (std::abs(kprime(t) - 1.0) <= 1e-12) return t;
    throw ConvergenceFailure("z_saddlepoint: root-finder exceeded 200 iterations");
}

// log of the raw (uncalibrated) first-order saddle-point value.
inline double log_z_saddle_raw(double kappa, int d, int k) {
    const double t = saddle_root(kappa, d, k);
    const double dk = static_cast<double>(d - k);
    const double kpp = 0.5 * k / ((t - kappa) * (t - kappa)) + 0.5 * dk / (t * t);
    return std::lgamma(0.5 * d) + t - 0.5 * k * std::log(t - kappa) -
           0.5 * dk * std::log(t) - 0.5 * std::log(2.0 * M_PI * kpp);
}

}  // namespace detail

// First-order saddle-point approximation, calibrated so Ẑ(0) = 1 exactly
// (the raw first-order value carries a κ-independent multiplicative bias;
// dividing by the κ=0 evaluation removes it). Exact for k = d.
inline double z_saddlepoint(const ZQuery& q) {
    q.validate();
    if (q.kappa > 200.0) throw OutOfDomain("z_saddlepoint: kappa > 200 outside regime");
    const double raw = detail::log_z_saddle_raw(q.kappa, q.d, q.k);
    const double at0 = detail::log_z_saddle_raw(0.0, q.d, q.k);
    return std::exp(raw - at0);
}

struct MonteCarloZ {
    double estimate = 0.0;
    double stderr_ = 0.0;
};

// Monte-Carlo estimate of Z: mean of exp(κ·affinity(F, x)) over sphere-
// uniform x. The law of the affinity is frame-independent, so the default
// frame is the first-k-coordinates block; pass `frame` to exercise another.
inline MonteCarloZ z_montecarlo(const ZQuery& q, long samples, Rng& rng,
                                const Frame* frame = nullptr) {
    q.validate();
    if (samples < 1000) throw InvalidArgument("z_montecarlo needs >= 1000 samples");
    if (frame && (frame->d != q.d || frame->k != q.k))
        throw DimensionMismatch("z_montecarlo frame shape");

    double sum = 0.0, sumsq = 0.0;
    std::vector<double> x;
    for (long s = 0; s < samples; ++s) {
        x = sphere_uniform(q.d, rng);
        double aff;
        if (frame) {
            aff = affinity(*frame, x);
        } else {
            aff = 0.0;
            for (int i = 0; i < q.k; ++i) aff += x[i] * x[i];
        }
        const double v = std::exp(q.kappa * aff);
        sum += v;
        sumsq += v * v;
    }
    MonteCarloZ out;
    const double n = static_cast<double>(samples);
    out.estimate = sum / n;
    const double var = std::max(0.0, sumsq / n - out.estimate * out.estimate);
    out.stderr_ = std::sqrt(var / n);
    return out;
}

}  // namespace grmoe
