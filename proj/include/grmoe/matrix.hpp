#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "grmoe/errors.hpp"
#include "grmoe/rng.hpp"

namespace grmoe {

// Dense row-major matrix over double. Dimensions here are tiny (d ≤ 768,
// k ≤ 48), so clarity wins over blocking/vectorization tricks.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {
        if (r < 0 || c < 0) throw InvalidArgument("matrix dimensions must be nonnegative");
    }

    double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

inline bool all_finite(const Matrix& m) {
    for (double v : m.a)
        if (!std::isfinite(v)) return false;
    return true;
}

inline Matrix operator+(const Matrix& x, const Matrix& y) {
    if (x.rows != y.rows || x.cols != y.cols) throw DimensionMismatch("matrix add shape");
    Matrix r = x;
    for (std::size_t i = 0; i < r.a.size(); ++i) r.a[i] += y.a[i];
    return r;
}

inline Matrix operator-(const Matrix& x, const Matrix& y) {
    if (x.rows != y.rows || x.cols != y.cols) throw DimensionMismatch("matrix sub shape");
    Matrix r = x;
    for (std::size_t i = 0; i < r.a.size(); ++i) r.a[i] -= y.a[i];
    return r;
}

inline Matrix operator*(double s, const Matrix& x) {
    Matrix r = x;
    for (double& v : r.a) v *= s;
    return r;
}

// A += s·B
inline void add_scaled(Matrix& x, const Matrix& y, double s) {
    if (x.rows != y.rows || x.cols != y.cols) throw DimensionMismatch("add_scaled shape");
    for (std::size_t i = 0; i < x.a.size(); ++i) x.a[i] += s * y.a[i];
}

// A·B
inline Matrix matmul(const Matrix& x, const Matrix& y) {
    if (x.cols != y.rows) throw DimensionMismatch("matmul inner dimension");
    Matrix r(x.rows, y.cols);
    for (int i = 0; i < x.rows; ++i)
        for (int l = 0; l < x.cols; ++l) {
            const double xv = x(i, l);
            if (xv == 0.0) continue;
            for (int j = 0; j < y.cols; ++j) r(i, j) += xv * y(l, j);
        }
    return r;
}

// Aᵀ·B
inline Matrix matmul_tn(const Matrix& x, const Matrix& y) {
    if (x.rows != y.rows) throw DimensionMismatch("matmul_tn inner dimension");
    Matrix r(x.cols, y.cols);
    for (int l = 0; l < x.rows; ++l)
        for (int i = 0; i < x.cols; ++i) {
            const double xv = x(l, i);
            if (xv == 0.0) continue;
            for (int j = 0; j < y.cols; ++j) r(i, j) += xv * y(l, j);
        }
    return r;
}

// A·Bᵀ
inline Matrix matmul_nt(const Matrix& x, const Matrix& y) {
    if (x.cols != y.cols) throw DimensionMismatch("matmul_nt inner dimension");
    Matrix r(x.rows, y.rows);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < y.rows; ++j) {
            double s = 0.0;
            for (int l = 0; l < x.cols; ++l) s += x(i, l) * y(j, l);
            r(i, j) = s;
        }
    return r;
}

inline Matrix transpose(const Matrix& x) {
    Matrix r(x.cols, x.rows);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) r(j, i) = x(i, j);
    return r;
}

inline double frob2(const Matrix& x) {
    double s = 0.0;
    for (double v : x.a) s += v * v;
    return s;
}

inline double frob(const Matrix& x) { return std::sqrt(frob2(x)); }

// A·v
inline std::vector<double> matvec(const Matrix& x, const std::vector<double>& v) {
    if (x.cols != static_cast<int>(v.size())) throw DimensionMismatch("matvec shape");
    std::vector<double> r(x.rows, 0.0);
    for (int i = 0; i < x.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < x.cols; ++j) s += x(i, j) * v[j];
        r[i] = s;
    }
    return r;
}

// Aᵀ·v
inline std::vector<double> matvec_t(const Matrix& x, const std::vector<double>& v) {
    if (x.rows != static_cast<int>(v.size())) throw DimensionMismatch("matvec_t shape");
    std::vector<double> r(x.cols, 0.0);
    for (int i = 0; i < x.rows; ++i) {
        const double vi = v[i];
        if (vi == 0.0) continue;
        for (int j = 0; j < x.cols; ++j) r[j] += x(i, j) * vi;
    }
    return r;
}

// A += s·u·vᵀ
inline void add_outer(Matrix& x, const std::vector<double>& u, const std::vector<double>& v,
                      double s) {
    if (x.rows != static_cast<int>(u.size()) || x.cols != static_cast<int>(v.size()))
        throw DimensionMismatch("add_outer shape");
    for (int i = 0; i < x.rows; ++i) {
        const double su = s * u[i];
        if (su == 0.0) continue;
        for (int j = 0; j < x.cols; ++j) x(i, j) += su * v[j];
    }
}

inline double dot(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw DimensionMismatch("dot length");
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

inline double norm2(const std::vector<double>& x) { return dot(x, x); }

inline Matrix gaussian_matrix(int rows, int cols, Rng& rng) {
    if (rows < 1 || cols < 1) throw InvalidArgument("gaussian_matrix needs positive dims");
    Matrix m(rows, cols);
    for (double& v : m.a) v = rng.gaussian();
    return m;
}

inline std::vector<double> gaussian_vector(int n, Rng& rng) {
    if (n < 1) throw InvalidArgument("gaussian_vector needs positive length");
    std::vector<double> v(n);
    for (double& x : v) x = rng.gaussian();
    return v;
}

inline std::vector<double> sphere_uniform(int d, Rng& rng) {
    if (d < 1) throw InvalidArgument("sphere_uniform needs d >= 1");
    // Normalizing a Gaussian vector gives the rotation-invariant law; a
    // resample guards the measure-zero chance of a nearly-degenerate draw.
    for (;;) {
        std::vector<double> v = gaussian_vector(d, rng);
        const double n = std::sqrt(norm2(v));
        if (n > 1e-8) {
            for (double& x : v) x /= n;
            return v;
        }
    }
}

}  // namespace grmoe
