#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "grmoe/errors.hpp"

namespace grmoe {

struct AdamConfig {
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Elementwise Adam over a flat parameter buffer. The frame optimizer reuses
// this for its ambient moments and then projects/retracts the resulting
// direction, so the moment bookkeeping lives in exactly one place.
class Adam {
public:
    Adam() = default;
    Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

    // Returns the update direction (lr·m̂/(√v̂+ε)); callers subtract it or
    // feed it through the manifold machinery.
    std::vector<double> direction(const std::vector<double>& grad) {
        if (grad.size() != m_.size()) throw DimensionMismatch("adam gradient size");
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
        std::vector<double> dir(grad.size());
        for (std::size_t i = 0; i < grad.size(); ++i) {
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
            const double mhat = m_[i] / c1;
            const double vhat = v_[i] / c2;
            dir[i] = cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
        return dir;
    }

    long step_count() const { return t_; }

private:
    AdamConfig cfg_;
    std::vector<double> m_, v_;
    long t_ = 0;
};

}  // namespace grmoe
