#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "grmoe/errors.hpp"
#include "grmoe/gating.hpp"
#include "grmoe/manifold.hpp"
#include "grmoe/optim.hpp"
#include "grmoe/synthetic.hpp"

namespace grmoe {

// Routing trainer: cross-entropy of the gate against the ground-truth mixture
// component, plus a hinged subspace-separation penalty, optimized with Adam
// (Riemannian for the frames: ambient moments, tangent projection, QR
// retraction; log-space for the concentrations).
struct TrainConfig {
    double beta = 0.01;        // weight of the subspace-separation penalty
    double rho0 = 0.3;         // hinge threshold as a fraction of k
    double alpha_train = 1.0;  // sparsity dial used in the training gate
    int sampled_pairs = -1;    // -1 = exact sum over all pairs; else M-pair estimator
    int steps = 2000;
    int batch = 256;
    int eval_interval = 200;
    int n_eval = 4000;
    bool amortized = true;
    int amortizer_hidden = 32;
    int router_rank = -1;  // -1 adopts the task's subspace rank
    AdamConfig adam{};  // one shared setting for frames, concentrations, amortizer
    std::uint64_t seed = 0;
};

struct LossBreakdown {
    double total = 0.0;
    double task_ce = 0.0;
    double reg = 0.0;  // penalty value before the β weight
};

struct ModelGrads {
    std::vector<Matrix> frames;     // ambient Euclidean gradients, d×k each
    std::vector<double> log_kappa;  // gradients w.r.t. θ_e = log κ_e
    bool has_amortizer = false;
    Matrix aw1;
    std::vector<double> ab1;
    Matrix aw2;
    std::vector<double> ab2;

    static ModelGrads zeros(const ExpertBank& bank, const Amortizer* am) {
        ModelGrads g;
        g.frames.assign(bank.frames.size(), Matrix(bank.dim(), bank.rank()));
        g.log_kappa.assign(bank.frames.size(), 0.0);
        if (am != nullptr) {
            g.has_amortizer = true;
            g.aw1 = Matrix(am->w1.rows, am->w1.cols);
            g.ab1.assign(am->b1.size(), 0.0);
            g.aw2 = Matrix(am->w2.rows, am->w2.cols);
            g.ab2.assign(am->b2.size(), 0.0);
        }
        return g;
    }
};

// Hinged mean-overlap penalty, each unordered pair counted once:
//   R(U) = Σ_{e<e'} max(0, ‖U_eᵀU_{e'}‖_F² − ρ₀·k).
inline double subspace_reg(const ExpertBank& bank, double rho0) {
    const int n = bank.size();
    const double thr = rho0 * bank.rank();
    double acc = 0.0;
    for (int e = 0; e < n; ++e)
        for (int f = e + 1; f < n; ++f)
            acc += std::max(0.0, overlap(bank.frames[e], bank.frames[f]) - thr);
    return acc;
}

// Pair subset used by one optimization step. With m < 0 or m >= N(N−1)/2 the
// exact sum over all pairs is used (scale 1); otherwise m distinct pairs are
// drawn without replacement and the sum is rescaled by P/m, which keeps the
// estimator unbiased.
struct PairSet {
    std::vector<std::pair<int, int>> pairs;
    double scale = 1.0;
};

inline PairSet select_pairs(int n, int m, Rng* rng) {
    PairSet ps;
    const int total = n * (n - 1) / 2;
    ps.pairs.reserve(total);
    for (int e = 0; e < n; ++e)
        for (int f = e + 1; f < n; ++f) ps.pairs.emplace_back(e, f);
    if (m < 0 || m >= total) return ps;
    if (m == 0) throw InvalidArgument("select_pairs: sampled pair count must be >= 1");
    if (rng == nullptr) throw InvalidArgument("select_pairs: sampling requires an rng");
    // Partial Fisher–Yates: the first m slots become a uniform m-subset.
    for (int i = 0; i < m; ++i) {
        const int j = i + static_cast<int>(rng->uniform() * (total - i));
        std::swap(ps.pairs[i], ps.pairs[std::min(j, total - 1)]);
    }
    ps.pairs.resize(m);
    ps.scale = static_cast<double>(total) / m;
    return ps;
}

inline double subspace_reg_sampled(const ExpertBank& bank, double rho0, int m, Rng& rng) {
    const PairSet ps = select_pairs(bank.size(), m, &rng);
    const double thr = rho0 * bank.rank();
    double acc = 0.0;
    for (const auto& [e, f] : ps.pairs)
        acc += std::max(0.0, overlap(bank.frames[e], bank.frames[f]) - thr);
    return ps.scale * acc;
}

namespace detail {

// Shared loss/gradient pass. Gradients are accumulated into `out` when it is
// non-null; the loss breakdown is always returned. CE terms average over the
// batch; the penalty enters once with weight β and the pair-set scale.
inline LossBreakdown grad_loss_core(const ExpertBank& bank, const Amortizer* am,
                                    const std::vector<Sample>& batch, double alpha, double beta,
                                    double rho0, const PairSet& pairs, ModelGrads* out) {
    if (batch.empty()) throw InvalidArgument("loss: empty batch");
    bank.validate();
    const int n = bank.size(), d = bank.dim(), k = bank.rank();
    if (am != nullptr && (am->input_dim() != d || am->output_dim() != n))
        throw DimensionMismatch("loss: amortizer shape does not match bank");

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double ce = 0.0;
    std::vector<std::vector<double>> c(n);
    std::vector<double> a(n), h(n, 1.0), logits(n);
    for (const Sample& s : batch) {
        if (static_cast<int>(s.x.size()) != d) throw DimensionMismatch("loss: token dimension");
        if (s.z < 0 || s.z >= n) throw InvalidArgument("loss: label out of range");
        for (int e = 0; e < n; ++e) {
            c[e] = matvec_t(bank.frames[e].basis, s.x);
            a[e] = 0.0;
            for (double v : c[e]) a[e] += v * v;
        }
        std::vector<double> th;
        if (am != nullptr) {
            th = am->hidden(s.x);
            std::vector<double> o = matvec(am->w2, th);
            for (int e = 0; e < n; ++e) o[e] += am->b2[e];
            h = softmax(o);
            for (double& v : h) v *= n;
        }
        for (int e = 0; e < n; ++e) logits[e] = alpha * h[e] * bank.kappas[e] * a[e];
        const std::vector<double> g = softmax(logits);
        ce -= std::log(g[s.z]);
        if (out == nullptr) continue;

        for (int e = 0; e < n; ++e) {
            const double r = g[e] - (e == s.z ? 1.0 : 0.0);
            const double coef = inv_b * r * alpha * h[e] * bank.kappas[e];
            // ∂a_e/∂U_e = 2·x·(U_eᵀx)ᵀ
            add_outer(out->frames[e], s.x, c[e], 2.0 * coef);
            // θ_e = log κ_e enters the logit multiplicatively.
            out->log_kappa[e] += inv_b * r * alpha * h[e] * a[e] * bank.kappas[e];
        }
        if (am != nullptr) {
            // h = N·softmax(o): dL/do_j = N·s_j·(q_j − Σ_e q_e·s_e) with
            // q_e = dL/dh_e and s = softmax(o) = h/N.
            std::vector<double> q(n);
            double qs = 0.0;
            for (int e = 0; e < n; ++e) {
                const double r = g[e] - (e == s.z ? 1.0 : 0.0);
                q[e] = r * alpha * bank.kappas[e] * a[e];
                qs += q[e] * (h[e] / n);
            }
            std::vector<double> dout(n);
            for (int j = 0; j < n; ++j) dout[j] = inv_b * n * (h[j] / n) * (q[j] - qs);
            const int hid = am->hidden_dim();
            std::vector<double> dt(hid, 0.0);
            for (int j = 0; j < n; ++j) {
                if (dout[j] == 0.0) continue;
                out->ab2[j] += dout[j];
                for (int i = 0; i < hid; ++i) {
                    out->aw2(j, i) += dout[j] * th[i];
                    dt[i] += am->w2(j, i) * dout[j];
                }
            }
            for (int i = 0; i < hid; ++i) {
                dt[i] *= 1.0 - th[i] * th[i];
                out->ab1[i] += dt[i];
            }
            add_outer(out->aw1, dt, s.x, 1.0);
        }
    }
    ce *= inv_b;

    const double thr = rho0 * k;
    double reg = 0.0;
    for (const auto& [e, f] : pairs.pairs) {
        const Matrix cross = matmul_tn(bank.frames[e].basis, bank.frames[f].basis);
        const double ov = frob2(cross);
        if (ov <= thr) continue;
        reg += ov - thr;
        if (out != nullptr) {
            const double w = beta * pairs.scale;
            // ∂‖U_eᵀU_f‖²/∂U_e = 2·U_f·(U_fᵀU_e) and symmetrically for U_f.
            add_scaled(out->frames[e], matmul(bank.frames[f].basis, transpose(cross)), 2.0 * w);
            add_scaled(out->frames[f], matmul(bank.frames[e].basis, cross), 2.0 * w);
        }
    }
    reg *= pairs.scale;

    LossBreakdown lb;
    lb.task_ce = ce;
    lb.reg = reg;
    lb.total = ce + beta * reg;
    return lb;
}

}  // namespace detail

inline LossBreakdown loss(const ExpertBank& bank, const Amortizer* am,
                          const std::vector<Sample>& batch, const TrainConfig& cfg,
                          Rng* pair_rng = nullptr) {
    const PairSet ps = select_pairs(bank.size(), cfg.sampled_pairs, pair_rng);
    return detail::grad_loss_core(bank, am, batch, cfg.alpha_train, cfg.beta, cfg.rho0, ps,
                                  nullptr);
}

inline LossBreakdown gradients(const ExpertBank& bank, const Amortizer* am,
                               const std::vector<Sample>& batch, const TrainConfig& cfg,
                               ModelGrads& out, Rng* pair_rng = nullptr) {
    const PairSet ps = select_pairs(bank.size(), cfg.sampled_pairs, pair_rng);
    out = ModelGrads::zeros(bank, am);
    return detail::grad_loss_core(bank, am, batch, cfg.alpha_train, cfg.beta, cfg.rho0, ps, &out);
}

// Optimizer state for all three parameter groups. Frames keep Adam moments in
// the ambient d×k coordinates; the update direction is projected to the
// tangent space at the current frame and applied through the QR retraction.
// A rank-deficient retraction is retried once at half length, then skipped.
class ModelOptimizer {
  public:
    ModelOptimizer(const ExpertBank& bank, const Amortizer* am, AdamConfig cfg) {
        const std::size_t dk = static_cast<std::size_t>(bank.dim()) * bank.rank();
        for (int e = 0; e < bank.size(); ++e) frame_adams_.emplace_back(dk, cfg);
        kappa_adam_ = Adam(bank.frames.size(), cfg);
        theta_.resize(bank.kappas.size());
        for (std::size_t e = 0; e < bank.kappas.size(); ++e)
            theta_[e] = std::log(bank.kappas[e]);
        if (am != nullptr) {
            aw1_ = Adam(am->w1.a.size(), cfg);
            ab1_ = Adam(am->b1.size(), cfg);
            aw2_ = Adam(am->w2.a.size(), cfg);
            ab2_ = Adam(am->b2.size(), cfg);
        }
    }

    void step(ExpertBank& bank, Amortizer* am, const ModelGrads& g) {
        for (int e = 0; e < bank.size(); ++e) {
            const std::vector<double> dir = frame_adams_[e].direction(g.frames[e].a);
            Matrix d(bank.dim(), bank.rank());
            d.a = dir;
            Tangent t = tangent_project(bank.frames[e], d);
            for (double& v : t.direction.a) v = -v;
            try {
                bank.frames[e] = retract(t);
            } catch (const RankDeficient&) {
                for (double& v : t.direction.a) v *= 0.5;
                try {
                    bank.frames[e] = retract(t);
                } catch (const RankDeficient&) {
                    ++skipped_;  // keep the current frame for this step
                }
            }
        }
        const std::vector<double> kdir = kappa_adam_.direction(g.log_kappa);
        for (std::size_t e = 0; e < theta_.size(); ++e) {
            if (kdir[e] == 0.0) continue;  // exact no-op on zero gradient
            theta_[e] -= kdir[e];
            bank.kappas[e] = std::exp(theta_[e]);
        }
        if (am != nullptr && g.has_amortizer) {
            apply(aw1_, am->w1.a, g.aw1.a);
            apply(ab1_, am->b1, g.ab1);
            apply(aw2_, am->w2.a, g.aw2.a);
            apply(ab2_, am->b2, g.ab2);
        }
    }

    int skipped_retractions() const { return skipped_; }

  private:
    static void apply(Adam& adam, std::vector<double>& param, const std::vector<double>& grad) {
        const std::vector<double> dir = adam.direction(grad);
        for (std::size_t i = 0; i < param.size(); ++i) param[i] -= dir[i];
    }

    std::vector<Adam> frame_adams_;
    Adam kappa_adam_;
    std::vector<double> theta_;
    Adam aw1_, ab1_, aw2_, ab2_;
    int skipped_ = 0;
};

struct MetricsRow {
    int step = 0;
    double acc = 0.0;
    double cv = 0.0;
    double entropy = 0.0;
    double max_overlap = 0.0;
    bool collapsed = false;
};

struct TrainResult {
    ExpertBank bank;
    Amortizer amortizer;  // meaningful only when `amortized` is true
    bool amortized = false;
    std::vector<MetricsRow> metrics;
    EvalMetrics final_eval;
    std::array<std::uint64_t, 5> data_rng_state{};
    std::array<std::uint64_t, 5> pair_rng_state{};
};

inline Router bank_router(const ExpertBank& bank, const Amortizer* am, double alpha) {
    if (am != nullptr) {
        const Amortizer a = *am;
        const ExpertBank b = bank;
        return [b, a, alpha](long, const std::vector<double>& x) {
            return route_amortized(b, a, x, alpha);
        };
    }
    const ExpertBank b = bank;
    return [b, alpha](long, const std::vector<double>& x) { return route(b, x, alpha); };
}

inline double max_pairwise_overlap(const ExpertBank& bank) {
    double mx = 0.0;
    for (int e = 0; e < bank.size(); ++e)
        for (int f = e + 1; f < bank.size(); ++f)
            mx = std::max(mx, overlap(bank.frames[e], bank.frames[f]));
    return mx;
}

inline TrainResult train(const SyntheticTask& task, const TrainConfig& cfg) {
    if (cfg.steps < 1) throw InvalidArgument("train: steps >= 1");
    if (cfg.batch < 1) throw InvalidArgument("train: batch >= 1");
    if (cfg.eval_interval < 1) throw InvalidArgument("train: eval_interval >= 1");

    const Rng root(cfg.seed);
    Rng init_rng = root.substream("train-init-frames");
    Rng am_rng = root.substream("train-init-amortizer");
    Rng data_rng = root.substream("train-data");
    Rng pair_rng = root.substream("train-pairs");
    const Rng eval_rng = root.substream("train-eval");

    const int rank = cfg.router_rank > 0 ? cfg.router_rank : task.k;
    if (rank > task.d) throw InvalidArgument("train: router rank exceeds the ambient dimension");

    TrainResult res;
    res.amortized = cfg.amortized;
    res.bank.frames.reserve(task.n_experts);
    for (int e = 0; e < task.n_experts; ++e)
        res.bank.frames.push_back(haar_frame(task.d, rank, init_rng));
    res.bank.kappas.assign(task.n_experts, 1.0);
    if (cfg.amortized)
        res.amortizer = Amortizer::init(task.d, task.n_experts, am_rng, cfg.amortizer_hidden);
    Amortizer* am = cfg.amortized ? &res.amortizer : nullptr;

    ModelOptimizer opt(res.bank, am, cfg.adam);
    ModelGrads grads;
    for (int step = 1; step <= cfg.steps; ++step) {
        const std::vector<Sample> batch = sample_batch(task, cfg.batch, data_rng);
        const PairSet ps = select_pairs(task.n_experts, cfg.sampled_pairs, &pair_rng);
        grads = ModelGrads::zeros(res.bank, am);
        const LossBreakdown lb = detail::grad_loss_core(res.bank, am, batch, cfg.alpha_train,
                                                        cfg.beta, cfg.rho0, ps, &grads);
        if (!std::isfinite(lb.total))
            throw Diverged("train: non-finite loss at step " + std::to_string(step));
        opt.step(res.bank, am, grads);

        if (step % cfg.eval_interval == 0 || step == cfg.steps) {
            for (const Frame& f : res.bank.frames)
                if (ortho_defect(f.basis) > 1e-8)
                    throw NumericalError("train: frame drifted off the manifold");
            Rng er = eval_rng;  // identical eval stream at every interval
            res.final_eval =
                evaluate(bank_router(res.bank, am, cfg.alpha_train), task, cfg.n_eval, er);
            MetricsRow row;
            row.step = step;
            row.acc = res.final_eval.assignment_accuracy;
            row.cv = res.final_eval.load_cv;
            row.entropy = res.final_eval.mean_entropy;
            row.max_overlap = max_pairwise_overlap(res.bank);
            row.collapsed = res.final_eval.collapsed;
            res.metrics.push_back(row);
        }
    }
    res.data_rng_state = data_rng.words();
    res.pair_rng_state = pair_rng.words();
    return res;
}

// --- serialization -----------------------------------------------------------

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
    return nlohmann::json{{"beta", cfg.beta},
                          {"rho0", cfg.rho0},
                          {"alpha_train", cfg.alpha_train},
                          {"sampled_pairs", cfg.sampled_pairs},
                          {"steps", cfg.steps},
                          {"batch", cfg.batch},
                          {"eval_interval", cfg.eval_interval},
                          {"n_eval", cfg.n_eval},
                          {"amortized", cfg.amortized},
                          {"amortizer_hidden", cfg.amortizer_hidden},
                          {"router_rank", cfg.router_rank},
                          {"lr", cfg.adam.lr},
                          {"adam_beta1", cfg.adam.beta1},
                          {"adam_beta2", cfg.adam.beta2},
                          {"adam_eps", cfg.adam.eps},
                          {"seed", cfg.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    cfg.beta = j.value("beta", cfg.beta);
    cfg.rho0 = j.value("rho0", cfg.rho0);
    cfg.alpha_train = j.value("alpha_train", cfg.alpha_train);
    cfg.sampled_pairs = j.value("sampled_pairs", cfg.sampled_pairs);
    cfg.steps = j.value("steps", cfg.steps);
    cfg.batch = j.value("batch", cfg.batch);
    cfg.eval_interval = j.value("eval_interval", cfg.eval_interval);
    cfg.n_eval = j.value("n_eval", cfg.n_eval);
    cfg.amortized = j.value("amortized", cfg.amortized);
    cfg.amortizer_hidden = j.value("amortizer_hidden", cfg.amortizer_hidden);
    cfg.router_rank = j.value("router_rank", cfg.router_rank);
    cfg.adam.lr = j.value("lr", cfg.adam.lr);
    cfg.adam.beta1 = j.value("adam_beta1", cfg.adam.beta1);
    cfg.adam.beta2 = j.value("adam_beta2", cfg.adam.beta2);
    cfg.adam.eps = j.value("adam_eps", cfg.adam.eps);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

inline nlohmann::json amortizer_to_json(const Amortizer& am) {
    return nlohmann::json{{"w1", am.w1.a}, {"b1", am.b1},     {"w2", am.w2.a},
                          {"b2", am.b2},   {"d", am.w1.cols}, {"hidden", am.w1.rows},
                          {"n", am.w2.rows}};
}

inline Amortizer amortizer_from_json(const nlohmann::json& j) {
    Amortizer am;
    const int d = j.at("d").get<int>();
    const int hidden = j.at("hidden").get<int>();
    const int n = j.at("n").get<int>();
    am.w1 = Matrix(hidden, d);
    am.w1.a = j.at("w1").get<std::vector<double>>();
    am.b1 = j.at("b1").get<std::vector<double>>();
    am.w2 = Matrix(n, hidden);
    am.w2.a = j.at("w2").get<std::vector<double>>();
    am.b2 = j.at("b2").get<std::vector<double>>();
    if (am.w1.a.size() != static_cast<std::size_t>(hidden) * d ||
        am.w2.a.size() != static_cast<std::size_t>(n) * hidden ||
        am.b1.size() != static_cast<std::size_t>(hidden) ||
        am.b2.size() != static_cast<std::size_t>(n))
        throw DimensionMismatch("amortizer_from_json: weight sizes");
    return am;
}

inline nlohmann::json checkpoint_to_json(const TrainConfig& cfg, const ExpertBank& bank,
                                         const Amortizer* am,
                                         const std::array<std::uint64_t, 5>& data_rng_state,
                                         int step) {
    nlohmann::json frames = nlohmann::json::array();
    for (const Frame& f : bank.frames) frames.push_back(frame_to_json(f));
    nlohmann::json j{{"config", train_config_to_json(cfg)},
                     {"frames", frames},
                     {"kappas", bank.kappas},
                     {"rng_state", data_rng_state},
                     {"step", step}};
    if (am != nullptr) j["amortizer"] = amortizer_to_json(*am);
    return j;
}

struct Checkpoint {
    TrainConfig config;
    ExpertBank bank;
    bool amortized = false;
    Amortizer amortizer;
    std::array<std::uint64_t, 5> rng_state{};
    int step = 0;
};

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    Checkpoint c;
    c.config = train_config_from_json(j.at("config"));
    for (const nlohmann::json& jf : j.at("frames")) c.bank.frames.push_back(frame_from_json(jf));
    c.bank.kappas = j.at("kappas").get<std::vector<double>>();
    const auto words = j.at("rng_state").get<std::vector<std::uint64_t>>();
    if (words.size() != 5) throw InvalidArgument("checkpoint rng state needs 5 words");
    std::copy(words.begin(), words.end(), c.rng_state.begin());
    c.step = j.at("step").get<int>();
    if (j.contains("amortizer")) {
        c.amortized = true;
        c.amortizer = amortizer_from_json(j.at("amortizer"));
    }
    return c;
}

}  // namespace grmoe
