#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "grmoe/errors.hpp"
#include "grmoe/gating.hpp"

namespace grmoe {

// Per-token concentration statistics over κ̃_e = κ_e·a_e(x): the quantities
// the entropy/top-k bounds are phrased in.
struct ConcentrationStats {
    std::vector<double> tilde_kappa;  // κ_e·a_e, expert order
    double delta_kappa = 0.0;         // Δ = max − mean
    double gamma_kappa = 0.0;         // Γ = population variance
    double delta_range = 0.0;         // δ = max − min
    std::vector<double> gaps;         // descending-sorted consecutive gaps (N−1 of them)
};

inline ConcentrationStats concentration_stats_from(const std::vector<double>& tilde) {
    if (tilde.size() < 2) throw InvalidArgument("concentration stats need N >= 2");
    ConcentrationStats s;
    s.tilde_kappa = tilde;
    const int n = static_cast<int>(tilde.size());
    double mx = tilde[0], mn = tilde[0], mean = 0.0;
    for (double v : tilde) {
        mx = std::max(mx, v);
        mn = std::min(mn, v);
        mean += v;
    }
    mean /= n;
    double var = 0.0;
    for (double v : tilde) var += (v - mean) * (v - mean);
    var /= n;
    s.delta_kappa = mx - mean;
    s.gamma_kappa = var;
    s.delta_range = mx - mn;

    std::vector<double> sorted = tilde;
    std::stable_sort(sorted.begin(), sorted.end(), std::greater<double>());
    s.gaps.resize(n - 1);
    for (int i = 0; i + 1 < n; ++i) s.gaps[i] = sorted[i] - sorted[i + 1];
    return s;
}

inline ConcentrationStats concentration_stats(const ExpertBank& bank,
                                              const std::vector<double>& x) {
    bank.validate();
    std::vector<double> tilde = affinities(bank, x);
    for (int e = 0; e < bank.size(); ++e) tilde[e] *= bank.kappas[e];
    return concentration_stats_from(tilde);
}

// Entropy bounds at dial α (natural log):
//   log N − α·Δ  ≤  H(g^{(α)})  ≤  log N − (α²/2)·Γ·e^{−α·δ}.
// The lower bound may go negative at large α; it stays a valid bound.
inline std::pair<double, double> entropy_bounds(const ConcentrationStats& s, double alpha,
                                                int n) {
    if (!(alpha >= 0.0)) throw InvalidArgument("entropy_bounds: alpha must be >= 0");
    const double logn = std::log(static_cast<double>(n));
    const double lower = logn - alpha * s.delta_kappa;
    const double upper =
        logn - 0.5 * alpha * alpha * s.gamma_kappa * std::exp(-alpha * s.delta_range);
    return {lower, upper};
}

struct TopkBound {
    double raw = 0.0;      // 1 − (N−k)·e^{−α·δ_k}, may be far below 0
    double clamped = 0.0;  // raw clamped into [0, 1] for reporting
};

// Guaranteed top-k mass: G_k ≥ 1 − (N−k)·e^{−α·δ_k}, δ_k the k-th gap of the
// descending κ̃ order.
inline TopkBound topk_mass_bound(const ConcentrationStats& s, double alpha, int k, int n) {
    if (k < 1 || k >= n) throw InvalidArgument("topk_mass_bound: need 1 <= k < N");
    if (static_cast<int>(s.gaps.size()) != n - 1)
        throw DimensionMismatch("topk_mass_bound: stats/N mismatch");
    TopkBound b;
    b.raw = 1.0 - static_cast<double>(n - k) * std::exp(-alpha * s.gaps[k - 1]);
    b.clamped = std::min(1.0, std::max(0.0, b.raw));
    return b;
}

// Load-balance bound for bounded-overlap mixtures:
//   CV ≤ (N−1)·exp(−α·γ·(κ_min − ρ·κ_max)).
// The hypothesis requires a positive margin γ(κ_min − ρκ_max).
inline double cv_bound(int n, double alpha, double gamma, double rho, double kappa_min,
                       double kappa_max) {
    if (n < 2) throw InvalidArgument("cv_bound: N >= 2");
    if (!(alpha >= 0.0) || !(gamma > 0.0) || !(rho >= 0.0))
        throw InvalidArgument("cv_bound: bad parameters");
    const double margin = gamma * (kappa_min - rho * kappa_max);
    if (!(margin > 0.0))
        throw AssumptionViolated("cv_bound: kappa_min <= rho * kappa_max (hypothesis fails)");
    return static_cast<double>(n - 1) * std::exp(-alpha * margin);
}

struct BoundReport {
    double alpha = 0.0;
    double observed_entropy = 0.0;
    double entropy_lower = 0.0;
    double entropy_upper = 0.0;
    std::vector<double> observed_topk;  // G_1 .. G_kmax
    std::vector<double> topk_lower;     // raw top-k mass guarantees
    bool entropy_ok = false;
    std::vector<bool> topk_ok;
    bool all_ok = false;
};

// Slack for bound checks: float64 noise ceiling on log-scale quantities.
inline constexpr double kBoundSlack = 1e-9;

// Evaluate one instance: route, measure entropy and top-k masses, compare
// against the three bound families with 1e-9 slack.
inline BoundReport check_instance(const ExpertBank& bank, const std::vector<double>& x,
                                  double alpha, int kmax) {
    if (kmax < 1 || kmax >= bank.size()) throw InvalidArgument("check_instance: bad kmax");
    BoundReport r;
    r.alpha = alpha;
    const ConcentrationStats stats = concentration_stats(bank, x);
    const RoutingDistribution rd = route(bank, x, alpha);
    r.observed_entropy = entropy(rd);
    std::tie(r.entropy_lower, r.entropy_upper) = entropy_bounds(stats, alpha, bank.size());
    r.entropy_ok = (r.observed_entropy >= r.entropy_lower - kBoundSlack) &&
                   (r.observed_entropy <= r.entropy_upper + kBoundSlack);
    r.all_ok = r.entropy_ok;
    for (int k = 1; k <= kmax; ++k) {
        const double g = topk_mass(rd, k);
        const double b = topk_mass_bound(stats, alpha, k, bank.size()).raw;
        r.observed_topk.push_back(g);
        r.topk_lower.push_back(b);
        const bool ok = g >= b - kBoundSlack;
        r.topk_ok.push_back(ok);
        r.all_ok = r.all_ok && ok;
    }
    return r;
}

}  // namespace grmoe
