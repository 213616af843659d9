#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "grmoe/errors.hpp"
#include "grmoe/gating.hpp"
#include "grmoe/manifold.hpp"
#include "grmoe/optim.hpp"

namespace grmoe {

// Controlled routing benchmark: N ground-truth subspaces with calibrated
// mean pairwise overlap ρ*, a Gaussian mixture sampler over them, evaluation
// metrics, and the baseline routers used for comparison runs.
struct SyntheticTask {
    int n_experts = 0;
    int d = 0;
    int k = 0;
    double rho_star = 0.0;
    double sigma2 = 0.0;
    std::uint64_t seed = 0;
    double blend_t = 0.0;        // calibrated blend parameter
    std::vector<Frame> truth;    // N ground-truth frames (uniform mixture weights)
};

namespace detail {

inline Frame coordinate_block_frame(int d, int k, int block) {
    Matrix b(d, k);
    for (int j = 0; j < k; ++j) b(block * k + j, j) = 1.0;
    return Frame(d, k, b);
}

inline std::vector<Frame> blended_truth(int n, int d, int k, double t, const Frame& shared) {
    std::vector<Frame> frames;
    frames.reserve(n);
    const double wb = std::sqrt(1.0 - t);
    const double wc = std::sqrt(t);
    for (int e = 0; e < n; ++e) {
        Matrix m(d, k);
        for (int j = 0; j < k; ++j) m(e * k + j, j) = wb;
        add_scaled(m, shared.basis, wc);
        frames.emplace_back(d, k, qr_positive(m).q);
    }
    return frames;
}

inline double mean_pairwise_overlap(const std::vector<Frame>& frames) {
    const int n = static_cast<int>(frames.size());
    double acc = 0.0;
    for (int e = 0; e < n; ++e)
        for (int f = e + 1; f < n; ++f) acc += overlap(frames[e], frames[f]);
    return acc / (0.5 * n * (n - 1));
}

}  // namespace detail

// Ground-truth construction: disjoint coordinate-block frames B_e blended
// with one shared Haar frame C, U_e = qr(√(1−t)·B_e + √t·C), with t bisected
// until the mean pairwise overlap/k lands within ±0.02 of ρ*.
inline SyntheticTask make_task(int n, int d, int k, double rho_star, double sigma2,
                               std::uint64_t seed) {
    if (n < 2) throw InvalidArgument("make_task: need N >= 2");
    if (n * k > d) throw InvalidArgument("make_task: need N*k <= d for disjoint base frames");
    if (!(rho_star >= 0.0 && rho_star < 1.0)) throw InvalidArgument("make_task: rho_star in [0,1)");
    if (!(sigma2 >= 0.0)) throw InvalidArgument("make_task: sigma2 >= 0");

    SyntheticTask task;
    task.n_experts = n;
    task.d = d;
    task.k = k;
    task.rho_star = rho_star;
    task.sigma2 = sigma2;
    task.seed = seed;

    if (rho_star == 0.0) {
        task.blend_t = 0.0;
        for (int e = 0; e < n; ++e) task.truth.push_back(detail::coordinate_block_frame(d, k, e));
        return task;
    }

    Rng rng = Rng(seed).substream("task-shared-frame");
    const Frame shared = haar_frame(d, k, rng);

    double lo = 0.0, hi = 1.0;
    double m_lo = 0.0;  // measured overlap/k at t=0 (disjoint blocks)
    double m_hi = 1.0;  // at t=1 every frame equals C
    double t = 0.0, measured = 0.0;
    bool done = false;
    for (int iter = 0; iter < 60; ++iter) {
        t = 0.5 * (lo + hi);
        std::vector<Frame> frames = detail::blended_truth(n, d, k, t, shared);
        measured = detail::mean_pairwise_overlap(frames) / k;
        if (std::abs(measured - rho_star) <= 0.005) {
            task.truth = std::move(frames);
            done = true;
            break;
        }
        if (measured < rho_star) {
            lo = t;
            m_lo = measured;
        } else {
            hi = t;
            m_hi = measured;
        }
        // The measured overlap must stay monotone in t for bisection to be
        // meaningful; a crossed bracket means the construction broke.
        if (m_lo > rho_star || m_hi < rho_star || m_lo > m_hi)
            throw CalibrationFailure("make_task: overlap not monotone in blend parameter");
    }
    if (!done) {
        std::vector<Frame> frames = detail::blended_truth(n, d, k, t, shared);
        measured = detail::mean_pairwise_overlap(frames) / k;
        if (std::abs(measured - rho_star) > 0.02)
            throw CalibrationFailure("make_task: calibration missed rho* after 60 bisections");
        task.truth = std::move(frames);
    }
    task.blend_t = t;
    return task;
}

struct Sample {
    std::vector<double> x;
    int z = 0;  // ground-truth component
};

// Mixture sampler: z uniform, x = U_z·w + σ·(I − P_z)·v with w ~ N(0, I_k),
// v ~ N(0, I_d); conditional covariance P_z + σ²(I − P_z).
inline std::vector<Sample> sample_batch(const SyntheticTask& task, int n, Rng& rng) {
    if (n < 1) throw InvalidArgument("sample_batch: n >= 1");
    const double sigma = std::sqrt(task.sigma2);
    std::vector<Sample> out(n);
    for (int i = 0; i < n; ++i) {
        int z = static_cast<int>(rng.uniform() * task.n_experts);
        if (z >= task.n_experts) z = task.n_experts - 1;
        const Frame& u = task.truth[z];
        std::vector<double> w = gaussian_vector(task.k, rng);
        std::vector<double> v = gaussian_vector(task.d, rng);
        // Remove the in-subspace part of v, then scale by σ.
        std::vector<double> utv = matvec_t(u.basis, v);
        std::vector<double> uv = matvec(u.basis, utv);
        std::vector<double> x = matvec(u.basis, w);
        for (int j = 0; j < task.d; ++j) x[j] += sigma * (v[j] - uv[j]);
        out[i].x = std::move(x);
        out[i].z = z;
    }
    return out;
}

// A router maps (stable sample index, token) to a routing distribution.
// The index exists for the hash baseline; learned routers ignore it.
using Router = std::function<RoutingDistribution(long, const std::vector<double>&)>;

struct EvalMetrics {
    double assignment_accuracy = 0.0;
    double load_cv = 0.0;
    double mean_entropy = 0.0;
    bool collapsed = false;
    std::vector<double> soft_loads;   // mean gate values (sum to 1)
    std::vector<double> hard_shares;  // argmax assignment shares (sum to 1)
};

// Evaluation protocol: accuracy = fraction with argmax g = z*; CV over soft
// loads; collapse if any expert's hard share drops below 1%.
inline EvalMetrics evaluate(const Router& router, const SyntheticTask& task, int n_eval,
                            Rng& rng) {
    if (n_eval < 100 * task.n_experts)
        throw InvalidArgument("evaluate: n_eval must be >= 100*N for the 1% collapse threshold");
    const int n_exp = task.n_experts;
    EvalMetrics m;
    m.soft_loads.assign(n_exp, 0.0);
    m.hard_shares.assign(n_exp, 0.0);
    long correct = 0;
    double entropy_acc = 0.0;

    std::vector<Sample> samples = sample_batch(task, n_eval, rng);
    for (long i = 0; i < n_eval; ++i) {
        const RoutingDistribution rd = router(i, samples[i].x);
        if (static_cast<int>(rd.probs.size()) != n_exp)
            throw DimensionMismatch("evaluate: router output size");
        int arg = 0;
        for (int e = 1; e < n_exp; ++e)
            if (rd.probs[e] > rd.probs[arg]) arg = e;
        if (arg == samples[i].z) ++correct;
        m.hard_shares[arg] += 1.0;
        for (int e = 0; e < n_exp; ++e) m.soft_loads[e] += rd.probs[e];
        entropy_acc += entropy(rd);
    }
    for (int e = 0; e < n_exp; ++e) {
        m.soft_loads[e] /= n_eval;
        m.hard_shares[e] /= n_eval;
    }
    m.assignment_accuracy = static_cast<double>(correct) / n_eval;
    m.mean_entropy = entropy_acc / n_eval;

    double mean = 0.0;
    for (double l : m.soft_loads) mean += l;
    mean /= n_exp;
    double var = 0.0;
    for (double l : m.soft_loads) var += (l - mean) * (l - mean);
    var /= n_exp;
    m.load_cv = std::sqrt(var) / mean;

    const double min_share = *std::min_element(m.hard_shares.begin(), m.hard_shares.end());
    m.collapsed = min_share < 0.01;
    return m;
}

// --- baseline routers --------------------------------------------------------

enum class BaselineKind { softmax_dense, softmax_top1, vmf_gate, hash };

inline BaselineKind baseline_kind_from_string(const std::string& s) {
    if (s == "softmax_dense") return BaselineKind::softmax_dense;
    if (s == "softmax_top1") return BaselineKind::softmax_top1;
    if (s == "vmf_gate") return BaselineKind::vmf_gate;
    if (s == "hash") return BaselineKind::hash;
    throw InvalidArgument("unknown baseline kind: " + s);
}

struct BaselineConfig {
    int steps = 2000;
    int batch = 256;
    AdamConfig adam{};  // lr 1e-2, the shared training default
};

namespace detail {

inline std::vector<double> softmax_vec(std::vector<double> logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double& v : logits) {
        v = std::exp(v - mx);
        z += v;
    }
    for (double& v : logits) v /= z;
    return logits;
}

inline RoutingDistribution distribution_from_logits(const std::vector<double>& logits) {
    RoutingDistribution rd;
    rd.logits = logits;
    rd.probs = softmax_vec(logits);
    return rd;
}

inline RoutingDistribution one_hot_distribution(int n, int idx) {
    RoutingDistribution rd;
    rd.logits.assign(n, 0.0);
    rd.probs.assign(n, 0.0);
    rd.probs[idx] = 1.0;
    return rd;
}

// Cross-entropy training of a linear router g = softmax(Wx) (no bias).
inline Matrix train_linear_router(const SyntheticTask& task, const BaselineConfig& cfg,
                                  Rng& rng) {
    const int n = task.n_experts, d = task.d;
    Rng init_rng = rng.substream("baseline-init");
    Rng data_rng = rng.substream("baseline-data");
    Matrix w = 0.01 * gaussian_matrix(n, d, init_rng);
    Adam adam(static_cast<std::size_t>(n) * d, cfg.adam);
    std::vector<double> grad(static_cast<std::size_t>(n) * d);
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<Sample> batch = sample_batch(task, cfg.batch, data_rng);
        std::fill(grad.begin(), grad.end(), 0.0);
        for (const Sample& s : batch) {
            std::vector<double> p = softmax_vec(matvec(w, s.x));
            for (int e = 0; e < n; ++e) {
                const double coef = (p[e] - (e == s.z ? 1.0 : 0.0)) / cfg.batch;
                if (coef == 0.0) continue;
                for (int j = 0; j < d; ++j)
                    grad[static_cast<std::size_t>(e) * d + j] += coef * s.x[j];
            }
        }
        std::vector<double> dir = adam.direction(grad);
        for (std::size_t i = 0; i < w.a.size(); ++i) w.a[i] -= dir[i];
    }
    return w;
}

}  // namespace detail

// vMF-style gate: logits τ·(u_eᵀx) with unit rows u_e (renormalized every
// step) and a learned scalar scale τ.
struct VmfGate {
    Matrix u;  // N×d, unit rows
    double tau = 1.0;

    RoutingDistribution operator()(const std::vector<double>& x) const {
        std::vector<double> logits = matvec(u, x);
        for (double& v : logits) v *= tau;
        return detail::distribution_from_logits(logits);
    }
};

inline VmfGate train_vmf_gate(const SyntheticTask& task, const BaselineConfig& cfg, Rng& rng) {
    const int n = task.n_experts, d = task.d;
    Rng init_rng = rng.substream("baseline-init");
    Rng data_rng = rng.substream("baseline-data");
    VmfGate gate;
    gate.u = gaussian_matrix(n, d, init_rng);
    for (int e = 0; e < n; ++e) {
        double nrm = 0.0;
        for (int j = 0; j < d; ++j) nrm += gate.u(e, j) * gate.u(e, j);
        nrm = std::sqrt(nrm);
        for (int j = 0; j < d; ++j) gate.u(e, j) /= nrm;
    }
    gate.tau = 1.0;
    Adam adam_u(static_cast<std::size_t>(n) * d, cfg.adam);
    Adam adam_tau(1, cfg.adam);
    std::vector<double> grad_u(static_cast<std::size_t>(n) * d);
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<Sample> batch = sample_batch(task, cfg.batch, data_rng);
        std::fill(grad_u.begin(), grad_u.end(), 0.0);
        double grad_tau = 0.0;
        for (const Sample& s : batch) {
            std::vector<double> dots = matvec(gate.u, s.x);
            std::vector<double> logits = dots;
            for (double& v : logits) v *= gate.tau;
            std::vector<double> p = detail::softmax_vec(logits);
            for (int e = 0; e < n; ++e) {
                const double coef = (p[e] - (e == s.z ? 1.0 : 0.0)) / cfg.batch;
                grad_tau += coef * dots[e];
                const double cu = coef * gate.tau;
                if (cu == 0.0) continue;
                for (int j = 0; j < d; ++j)
                    grad_u[static_cast<std::size_t>(e) * d + j] += cu * s.x[j];
            }
        }
        std::vector<double> dir = adam_u.direction(grad_u);
        for (std::size_t i = 0; i < gate.u.a.size(); ++i) gate.u.a[i] -= dir[i];
        gate.tau -= adam_tau.direction({grad_tau})[0];
        for (int e = 0; e < n; ++e) {
            double nrm = 0.0;
            for (int j = 0; j < d; ++j) nrm += gate.u(e, j) * gate.u(e, j);
            nrm = std::sqrt(nrm);
            for (int j = 0; j < d; ++j) gate.u(e, j) /= nrm;
        }
    }
    return gate;
}

// Builds (training where needed) one of the baseline routers.
inline Router baseline_router(BaselineKind kind, const SyntheticTask& task,
                              const BaselineConfig& cfg, Rng& rng) {
    const int n = task.n_experts;
    switch (kind) {
        case BaselineKind::softmax_dense: {
            auto w = std::make_shared<Matrix>(detail::train_linear_router(task, cfg, rng));
            return [w](long, const std::vector<double>& x) {
                return detail::distribution_from_logits(matvec(*w, x));
            };
        }
        case BaselineKind::softmax_top1: {
            auto w = std::make_shared<Matrix>(detail::train_linear_router(task, cfg, rng));
            const int n_exp = w->rows;
            return [w, n_exp](long, const std::vector<double>& x) {
                std::vector<double> logits = matvec(*w, x);
                int arg = 0;
                for (int e = 1; e < n_exp; ++e)
                    if (logits[e] > logits[arg]) arg = e;
                return detail::one_hot_distribution(n_exp, arg);
            };
        }
        case BaselineKind::vmf_gate: {
            auto gate = std::make_shared<VmfGate>(train_vmf_gate(task, cfg, rng));
            return [gate](long, const std::vector<double>& x) { return (*gate)(x); };
        }
        case BaselineKind::hash: {
            // Fixed pseudo-random assignment keyed by the stable sample
            // index; labels are independent of the key, so accuracy sits at
            // chance while loads stay near-balanced.
            const std::uint64_t salt = rng.substream("hash-salt").next();
            return [salt, n](long index, const std::vector<double>&) {
                std::uint64_t key = salt ^ static_cast<std::uint64_t>(index);
                const int e = static_cast<int>(splitmix64(key) % static_cast<std::uint64_t>(n));
                return detail::one_hot_distribution(n, e);
            };
        }
    }
    throw InvalidArgument("unsupported baseline kind");
}

// Tasks are fully determined by their scalar parameters plus the seed, so the
// serialized form records only those and reconstruction replays make_task.
inline nlohmann::json task_to_json(const SyntheticTask& task) {
    return nlohmann::json{{"n_experts", task.n_experts}, {"d", task.d},
                          {"k", task.k},                 {"rho_star", task.rho_star},
                          {"sigma2", task.sigma2},       {"seed", task.seed}};
}

inline SyntheticTask task_from_json(const nlohmann::json& j) {
    return make_task(j.at("n_experts").get<int>(), j.at("d").get<int>(), j.at("k").get<int>(),
                     j.at("rho_star").get<double>(), j.at("sigma2").get<double>(),
                     j.at("seed").get<std::uint64_t>());
}

// Rejection-filtered sample set for bound harnesses: keeps tokens whose home
// affinity is at least `accept_home` and whose largest off-home affinity is
// at most `accept_off` under the ground-truth frames, then reports the
// measured margin parameters (γ, ρ) of the accepted set.
struct BoundedOverlapSet {
    std::vector<Sample> samples;
    double gamma = 0.0;  // min home affinity among accepted samples
    double rho = 0.0;    // max off-affinity / gamma
};

inline BoundedOverlapSet bounded_overlap_filter(const SyntheticTask& task, int want,
                                                double accept_home, double accept_off,
                                                Rng& rng, int max_draws = 1000000) {
    BoundedOverlapSet out;
    out.gamma = std::numeric_limits<double>::infinity();
    double worst_off = 0.0;
    int draws = 0;
    while (static_cast<int>(out.samples.size()) < want && draws < max_draws) {
        std::vector<Sample> cand = sample_batch(task, 256, rng);
        draws += 256;
        for (Sample& s : cand) {
            const double home = affinity(task.truth[s.z], s.x);
            if (home < accept_home) continue;
            double off = 0.0;
            for (int e = 0; e < task.n_experts; ++e) {
                if (e == s.z) continue;
                off = std::max(off, affinity(task.truth[e], s.x));
            }
            if (off > accept_off) continue;
            out.gamma = std::min(out.gamma, home);
            worst_off = std::max(worst_off, off);
            out.samples.push_back(std::move(s));
            if (static_cast<int>(out.samples.size()) == want) break;
        }
    }
    if (static_cast<int>(out.samples.size()) < want)
        throw ConvergenceFailure("bounded_overlap_filter: acceptance rate too low");
    out.rho = worst_off / out.gamma;
    return out;
}

}  // namespace grmoe
