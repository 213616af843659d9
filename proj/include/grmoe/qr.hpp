#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "grmoe/errors.hpp"
#include "grmoe/matrix.hpp"

namespace grmoe {

struct QrResult {
    Matrix q;  // d×k, orthonormal columns
    Matrix r;  // k×k, upper triangular, nonnegative diagonal
};

// Thin Householder QR of a d×k matrix (k ≤ d) with a final sign correction
// so that diag(R) ≥ 0. The sign fix makes the factorization unique for
// full-rank input, which in turn makes the QR retraction a well-defined
// function — reproducibility tests depend on that.
//
// Throws RankDeficient when a pivot column's remaining norm falls below
// 1e-12, and DimensionMismatch for k > d.
inline QrResult qr_positive(const Matrix& m) {
    const int d = m.rows;
    const int k = m.cols;
    if (k > d) throw DimensionMismatch("qr_positive requires cols <= rows");
    if (k == 0 || d == 0) throw InvalidArgument("qr_positive on empty matrix");

    // Factor a working copy in place; column j of `vs` stores the Householder
    // reflector for step j (v normalized so v[j] carries the leading entry).
    Matrix w = m;
    std::vector<std::vector<double>> vs(k);

    for (int j = 0; j < k; ++j) {
        double sigma = 0.0;
        for (int i = j; i < d; ++i) sigma += w(i, j) * w(i, j);
        const double colnorm = std::sqrt(sigma);
        if (colnorm < 1e-12) throw RankDeficient("qr_positive: column norm below 1e-12");

        // v = x + sign(x1)·‖x‖·e1, standard stable choice (Trefethen & Bau).
        std::vector<double> v(d - j);
        for (int i = j; i < d; ++i) v[i - j] = w(i, j);
        const double alpha = (v[0] >= 0.0 ? colnorm : -colnorm);
        v[0] += alpha;
        double vnorm2 = 0.0;
        for (double x : v) vnorm2 += x * x;
        if (vnorm2 < 1e-300) {
            // x was already ±‖x‖·e1 with x1 = -‖x‖ < 0 cancelled exactly;
            // cannot happen with the sign choice above, but keep the guard.
            vnorm2 = 1.0;
            v.assign(v.size(), 0.0);
        }

        // Apply I − 2vvᵀ/‖v‖² to the trailing block.
        for (int c = j; c < k; ++c) {
            double s = 0.0;
            for (int i = j; i < d; ++i) s += v[i - j] * w(i, c);
            const double f = 2.0 * s / vnorm2;
            for (int i = j; i < d; ++i) w(i, c) -= f * v[i - j];
        }
        vs[j] = std::move(v);
    }

    QrResult out;
    out.r = Matrix(k, k);
    for (int i = 0; i < k; ++i)
        for (int j = i; j < k; ++j) out.r(i, j) = w(i, j);

    // Q = H_0 H_1 … H_{k−1} · [I_k; 0], built by applying reflectors in
    // reverse to the k leading columns of the identity.
    out.q = Matrix(d, k);
    for (int j = 0; j < k; ++j) out.q(j, j) = 1.0;
    for (int j = k - 1; j >= 0; --j) {
        const std::vector<double>& v = vs[j];
        double vnorm2 = 0.0;
        for (double x : v) vnorm2 += x * x;
        if (vnorm2 == 0.0) continue;
        for (int c = 0; c < k; ++c) {
            double s = 0.0;
            for (int i = j; i < d; ++i) s += v[i - j] * out.q(i, c);
            const double f = 2.0 * s / vnorm2;
            for (int i = j; i < d; ++i) out.q(i, c) -= f * v[i - j];
        }
    }

    // Sign fix: flip columns of Q (and rows of R) so diag(R) ≥ 0.
    for (int j = 0; j < k; ++j) {
        if (out.r(j, j) < 0.0) {
            for (int c = j; c < k; ++c) out.r(j, c) = -out.r(j, c);
            for (int i = 0; i < d; ++i) out.q(i, j) = -out.q(i, j);
        }
    }
    return out;
}

}  // namespace grmoe
