#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "grmoe/errors.hpp"
#include "grmoe/matrix.hpp"
#include "grmoe/qr.hpp"
#include "grmoe/rng.hpp"

#include <nlohmann/json.hpp>

namespace grmoe {

// An orthonormal d×k frame representing a point on the Stiefel manifold;
// routing treats frames as Grassmannian representatives (subspace = column
// span, defined up to right rotation by any O ∈ O(k)).
struct Frame {
    int d = 0;
    int k = 0;
    Matrix basis;  // d×k, orthonormal columns

    Frame() = default;
    Frame(int d_, int k_, Matrix b) : d(d_), k(k_), basis(std::move(b)) {
        if (k < 1 || k > d) throw InvalidArgument("frame requires 1 <= k <= d");
        if (basis.rows != d || basis.cols != k) throw DimensionMismatch("frame basis shape");
    }
};

struct Tangent {
    Frame base;
    Matrix direction;  // d×k with sym(baseᵀ·direction) = 0
};

inline double ortho_defect(const Matrix& basis) {
    Matrix g = matmul_tn(basis, basis);
    for (int i = 0; i < g.cols; ++i) g(i, i) -= 1.0;
    return frob(g);
}

// Haar-distributed frame: Q factor of a Gaussian d×k matrix. The sign-fixed
// QR makes the draw a deterministic function of the stream.
inline Frame haar_frame(int d, int k, Rng& rng) {
    if (k < 1 || k > d) throw InvalidArgument("haar_frame requires 1 <= k <= d");
    for (int attempt = 0; attempt < 2; ++attempt) {
        Matrix g = gaussian_matrix(d, k, rng);
        try {
            return Frame(d, k, qr_positive(g).q);
        } catch (const RankDeficient&) {
            // Probability-zero event for Gaussian input; retry once.
        }
    }
    throw RankDeficient("haar_frame: degenerate Gaussian draw twice in a row");
}

// Squared projection of x onto span(f): a(x) = ‖fᵀx‖². O(dk); the d×d
// projector is never formed.
inline double affinity(const Frame& f, const std::vector<double>& x) {
    if (static_cast<int>(x.size()) != f.d) throw DimensionMismatch("affinity input length");
    double s = 0.0;
    for (int j = 0; j < f.k; ++j) {
        double c = 0.0;
        for (int i = 0; i < f.d; ++i) c += f.basis(i, j) * x[i];
        s += c * c;
    }
    return s;
}

// ‖aᵀb‖_F² ∈ [0, min(k_a, k_b)]; k for identical spans, 0 for orthogonal ones.
inline double overlap(const Frame& a, const Frame& b) {
    if (a.d != b.d) throw DimensionMismatch("overlap ambient dimension");
    return frob2(matmul_tn(a.basis, b.basis));
}

// Projection distance sqrt(k − ‖aᵀb‖_F²). Tiny negative radicands (≤ 1e-12)
// are floating-point noise and clamp to zero; larger ones indicate a broken
// frame and raise NumericalError.
inline double grassmann_distance(const Frame& a, const Frame& b) {
    if (a.d != b.d || a.k != b.k) throw DimensionMismatch("grassmann_distance shapes");
    double rad = static_cast<double>(a.k) - overlap(a, b);
    if (rad < 0.0) {
        if (rad < -1e-12) throw NumericalError("grassmann_distance: negative radicand");
        rad = 0.0;
    }
    return std::sqrt(rad);
}

// Euclidean-metric Stiefel tangent projection: ξ = G − U·sym(UᵀG).
inline Tangent tangent_project(const Frame& f, const Matrix& g) {
    if (g.rows != f.d || g.cols != f.k) throw DimensionMismatch("tangent_project shape");
    Matrix utg = matmul_tn(f.basis, g);
    Matrix sym(f.k, f.k);
    for (int i = 0; i < f.k; ++i)
        for (int j = 0; j < f.k; ++j) sym(i, j) = 0.5 * (utg(i, j) + utg(j, i));
    Matrix dir = g - matmul(f.basis, sym);
    return Tangent{f, std::move(dir)};
}

// QR retraction: Q factor of (base + direction). A zero direction returns
// the base frame bit-identically — optimizer no-op steps must be no-ops.
inline Frame retract(const Tangent& t) {
    bool zero = true;
    for (double v : t.direction.a)
        if (v != 0.0) {
            zero = false;
            break;
        }
    if (zero) return t.base;
    Matrix stepped = t.base.basis + t.direction;
    return Frame(t.base.d, t.base.k, qr_positive(stepped).q);
}

// --- serialization ----------------------------------------------------------

inline nlohmann::json frame_to_json(const Frame& f) {
    return nlohmann::json{{"d", f.d}, {"k", f.k}, {"basis", f.basis.a}};
}

// Loads a frame, re-validating orthonormality: defects ≤ 1e-6 are repaired by
// re-orthonormalization (qr_positive), anything worse is rejected.
inline Frame frame_from_json(const nlohmann::json& j) {
    const int d = j.at("d").get<int>();
    const int k = j.at("k").get<int>();
    if (k < 1 || k > d) throw InvalidArgument("frame json: bad dimensions");
    std::vector<double> entries = j.at("basis").get<std::vector<double>>();
    if (static_cast<int>(entries.size()) != d * k)
        throw DimensionMismatch("frame json: basis entry count");
    Matrix b(d, k);
    b.a = std::move(entries);
    if (!all_finite(b)) throw NumericalError("frame json: non-finite basis");
    const double defect = ortho_defect(b);
    if (defect > 1e-6) throw InvalidArgument("frame json: orthonormality defect above 1e-6");
    if (defect > 1e-12) b = qr_positive(b).q;
    return Frame(d, k, std::move(b));
}

}  // namespace grmoe
