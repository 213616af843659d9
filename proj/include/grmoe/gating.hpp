#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <vector>

#include "grmoe/errors.hpp"
#include "grmoe/manifold.hpp"
#include "grmoe/matrix.hpp"

namespace grmoe {

// Routing output for one token: logits ℓ_e = α·h_e·κ_e·a_e(x) and their
// softmax. probs sum to 1 by construction (max-subtracted softmax).
struct RoutingDistribution {
    std::vector<double> logits;
    std::vector<double> probs;
};

using ExpertFn = std::function<std::vector<double>(const std::vector<double>&)>;

// A bank of subspace experts: shared (d, k) frames, per-expert concentration
// κ_e > 0, and (optionally) the expert maps used by the forward pass.
struct ExpertBank {
    std::vector<Frame> frames;
    std::vector<double> kappas;
    std::vector<ExpertFn> experts;  // may be empty when only routing is needed

    int size() const { return static_cast<int>(frames.size()); }
    int dim() const { return frames.empty() ? 0 : frames.front().d; }
    int rank() const { return frames.empty() ? 0 : frames.front().k; }

    void validate() const {
        if (size() < 2) throw InvalidArgument("expert bank needs N >= 2");
        if (kappas.size() != frames.size())
            throw DimensionMismatch("expert bank: kappa count != frame count");
        const int d = frames.front().d;
        const int k = frames.front().k;
        for (const Frame& f : frames)
            if (f.d != d || f.k != k) throw DimensionMismatch("expert bank: mixed frame shapes");
        for (double kap : kappas)
            if (!(kap > 0.0) || !std::isfinite(kap))
                throw InvalidArgument("expert bank: kappas must be positive finite");
    }
};

// Two-layer amortizer MLP: d → H (tanh) → N, with per-layer biases. The
// network's softmax output is rescaled by N so the concentration multipliers
// satisfy Σ_e h_e = N and h_e > 0.
struct Amortizer {
    Matrix w1;               // H×d
    std::vector<double> b1;  // H
    Matrix w2;               // N×H
    std::vector<double> b2;  // N

    int input_dim() const { return w1.cols; }
    int hidden_dim() const { return w1.rows; }
    int output_dim() const { return w2.rows; }

    static Amortizer init(int d, int n_experts, Rng& rng, int hidden = 32) {
        Amortizer a;
        a.w1 = 0.01 * gaussian_matrix(hidden, d, rng);
        a.b1.assign(hidden, 0.0);
        a.w2 = 0.01 * gaussian_matrix(n_experts, hidden, rng);
        a.b2.assign(n_experts, 0.0);
        return a;
    }

    std::vector<double> hidden(const std::vector<double>& x) const {
        std::vector<double> h = matvec(w1, x);
        for (int i = 0; i < hidden_dim(); ++i) h[i] = std::tanh(h[i] + b1[i]);
        return h;
    }

    // h(x) = softmax(MLP(x))·N: positive multipliers summing to N.
    std::vector<double> multipliers(const std::vector<double>& x) const {
        if (static_cast<int>(x.size()) != input_dim())
            throw DimensionMismatch("amortizer input length");
        std::vector<double> t = matvec(w2, hidden(x));
        for (int e = 0; e < output_dim(); ++e) t[e] += b2[e];
        const double mx = *std::max_element(t.begin(), t.end());
        double z = 0.0;
        for (double& v : t) {
            v = std::exp(v - mx);
            z += v;
        }
        const double n = static_cast<double>(output_dim());
        for (double& v : t) v = v / z * n;
        return t;
    }
};

namespace detail {

inline std::vector<double> softmax(const std::vector<double>& logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        z += p[i];
    }
    for (double& v : p) v /= z;
    return p;
}

inline void check_token(const std::vector<double>& x, int d, double alpha) {
    if (static_cast<int>(x.size()) != d) throw DimensionMismatch("token dimension");
    if (!(alpha >= 0.0)) throw InvalidArgument("alpha must be nonnegative");
    for (double v : x)
        if (!std::isfinite(v)) throw NumericalError("non-finite token");
}

}  // namespace detail

inline std::vector<double> affinities(const ExpertBank& bank, const std::vector<double>& x) {
    std::vector<double> a(bank.size());
    for (int e = 0; e < bank.size(); ++e) a[e] = affinity(bank.frames[e], x);
    return a;
}

// Scalar Bingham gating with the global sparsity dial α:
//   g_e ∝ exp(α·κ_e·a_e(x)).
// α = 0 routes uniformly; α → ∞ approaches hard top-1 on argmax κ_e·a_e.
inline RoutingDistribution route(const ExpertBank& bank, const std::vector<double>& x,
                                 double alpha) {
    bank.validate();
    detail::check_token(x, bank.dim(), alpha);
    RoutingDistribution rd;
    rd.logits.resize(bank.size());
    const std::vector<double> a = affinities(bank, x);
    for (int e = 0; e < bank.size(); ++e) rd.logits[e] = alpha * bank.kappas[e] * a[e];
    rd.probs = detail::softmax(rd.logits);
    return rd;
}

// Amortized gating: per-token concentration multipliers h(x) scale each κ_e,
//   g_e ∝ exp(α·h_e·κ_e·a_e(x)).
// With h ≡ 1 (e.g. a zeroed output layer) this reduces exactly to route().
inline RoutingDistribution route_amortized(const ExpertBank& bank, const Amortizer& amortizer,
                                           const std::vector<double>& x, double alpha) {
    bank.validate();
    detail::check_token(x, bank.dim(), alpha);
    if (amortizer.input_dim() != bank.dim() || amortizer.output_dim() != bank.size())
        throw DimensionMismatch("amortizer shape does not match bank");
    RoutingDistribution rd;
    rd.logits.resize(bank.size());
    const std::vector<double> a = affinities(bank, x);
    const std::vector<double> h = amortizer.multipliers(x);
    for (int e = 0; e < bank.size(); ++e) rd.logits[e] = alpha * h[e] * bank.kappas[e] * a[e];
    rd.probs = detail::softmax(rd.logits);
    return rd;
}

// Shannon entropy in nats, with 0·log 0 := 0.
inline double entropy(const RoutingDistribution& rd) {
    double h = 0.0;
    for (double p : rd.probs)
        if (p > 0.0) h -= p * std::log(p);
    return h;
}

// Mass of the k most probable experts; ties broken toward the lower index.
inline double topk_mass(const RoutingDistribution& rd, int k) {
    const int n = static_cast<int>(rd.probs.size());
    if (k < 1 || k > n) throw InvalidArgument("topk_mass: k out of range");
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int i, int j) { return rd.probs[i] > rd.probs[j]; });
    double s = 0.0;
    for (int i = 0; i < k; ++i) s += rd.probs[idx[i]];
    return s;
}

// Participation ratio 1/Σp²: N for uniform routing, 1 for one-hot.
inline double effective_experts(const RoutingDistribution& rd) {
    double s = 0.0;
    for (double p : rd.probs) s += p * p;
    return 1.0 / s;
}

// Forward pass: affinities → concentrations → logits → softmax → weighted sum
// of expert outputs. Pass amortizer = nullptr for plain gating (h ≡ 1).
inline std::vector<double> moe_forward(const ExpertBank& bank, const Amortizer* amortizer,
                                       const std::vector<double>& x, double alpha) {
    if (bank.experts.size() != bank.frames.size())
        throw InvalidArgument("moe_forward requires one expert function per frame");
    RoutingDistribution rd =
        amortizer ? route_amortized(bank, *amortizer, x, alpha) : route(bank, x, alpha);
    std::vector<double> y(bank.dim(), 0.0);
    for (int e = 0; e < bank.size(); ++e) {
        const std::vector<double> fe = bank.experts[e](x);
        if (fe.size() != y.size()) throw DimensionMismatch("expert output length");
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += rd.probs[e] * fe[i];
    }
    return y;
}

// Desk-scale expert map: y = W2·tanh(W1·x), hidden width 4d.
inline ExpertFn make_ffn_expert(int d, Rng& rng) {
    const int hidden = 4 * d;
    auto w1 = std::make_shared<Matrix>((1.0 / std::sqrt(static_cast<double>(d))) *
                                       gaussian_matrix(hidden, d, rng));
    auto w2 = std::make_shared<Matrix>((1.0 / std::sqrt(static_cast<double>(hidden))) *
                                       gaussian_matrix(d, hidden, rng));
    return [w1, w2](const std::vector<double>& x) {
        std::vector<double> h = matvec(*w1, x);
        for (double& v : h) v = std::tanh(v);
        return matvec(*w2, h);
    };
}

}  // namespace grmoe
