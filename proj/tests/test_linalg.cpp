#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "grmoe/matrix.hpp"
#include "grmoe/qr.hpp"
#include "grmoe/rng.hpp"

using namespace grmoe;

namespace {

double ortho_defect(const Matrix& q) {
    Matrix g = matmul_tn(q, q);
    for (int i = 0; i < g.rows; ++i) g(i, i) -= 1.0;
    return frob(g);
}

}  // namespace

TEST_CASE("qr_positive of the identity is exact") {
    Matrix m = Matrix::identity(3);
    QrResult f = qr_positive(m);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            REQUIRE(f.q(i, j) == (i == j ? 1.0 : 0.0));
            REQUIRE(f.r(i, j) == (i == j ? 1.0 : 0.0));
        }
}

TEST_CASE("qr_positive on axis-aligned columns") {
    Matrix m(3, 2);
    m(0, 0) = 2.0;
    m(2, 1) = 3.0;
    QrResult f = qr_positive(m);
    REQUIRE(f.q(0, 0) == Catch::Approx(1.0).margin(1e-14));
    REQUIRE(f.q(1, 0) == Catch::Approx(0.0).margin(1e-14));
    REQUIRE(f.q(2, 0) == Catch::Approx(0.0).margin(1e-14));
    REQUIRE(f.q(0, 1) == Catch::Approx(0.0).margin(1e-14));
    REQUIRE(f.q(1, 1) == Catch::Approx(0.0).margin(1e-14));
    REQUIRE(f.q(2, 1) == Catch::Approx(1.0).margin(1e-14));
    REQUIRE(f.r(0, 0) == Catch::Approx(2.0).margin(1e-14));
    REQUIRE(f.r(1, 1) == Catch::Approx(3.0).margin(1e-14));
    REQUIRE(f.r(0, 1) == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("qr_positive random 8x3 instance meets tolerances") {
    Rng rng(7);
    Matrix m = gaussian_matrix(8, 3, rng);
    QrResult f = qr_positive(m);
    REQUIRE(ortho_defect(f.q) < 1e-12);
    Matrix rec = matmul(f.q, f.r);
    REQUIRE(frob(rec - m) / frob(m) < 1e-10);
    for (int j = 0; j < 3; ++j) REQUIRE(f.r(j, j) >= 0.0);
}

TEST_CASE("qr_positive property sweep: reconstruction, orthonormality, sign") {
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        const int d = 2 + static_cast<int>(rng.uniform() * 38);
        const int k = 1 + static_cast<int>(rng.uniform() * d);
        Matrix m = gaussian_matrix(d, std::min(k, d), rng);
        QrResult f = qr_positive(m);
        REQUIRE(ortho_defect(f.q) <= 1e-12);
        REQUIRE(frob(matmul(f.q, f.r) - m) / frob(m) <= 1e-10);
        for (int j = 0; j < f.r.rows; ++j) {
            REQUIRE(f.r(j, j) >= 0.0);
            for (int i = j + 1; i < f.r.rows; ++i) REQUIRE(f.r(i, j) == 0.0);
        }
    }
}

TEST_CASE("qr_positive is unique: refactoring Q returns Q") {
    Rng rng(5);
    Matrix m = gaussian_matrix(12, 4, rng);
    Matrix q = qr_positive(m).q;
    QrResult f = qr_positive(q);
    REQUIRE(frob(f.q - q) < 1e-12);
    REQUIRE(frob(f.r - Matrix::identity(4)) < 1e-12);
}

TEST_CASE("qr_positive rejects rank-deficient input") {
    Matrix m(4, 2);
    for (int i = 0; i < 4; ++i) {
        m(i, 0) = static_cast<double>(i + 1);
        m(i, 1) = 2.0 * (i + 1);  // exact multiple of column 0
    }
    REQUIRE_THROWS_AS(qr_positive(m), RankDeficient);
}

TEST_CASE("qr_positive rejects wide matrices") {
    Matrix m(2, 3);
    REQUIRE_THROWS_AS(qr_positive(m), DimensionMismatch);
}

TEST_CASE("matrix product against hand computation") {
    Matrix a(2, 3);
    a(0, 0) = 1; a(0, 1) = 2; a(0, 2) = 3;
    a(1, 0) = 4; a(1, 1) = 5; a(1, 2) = 6;
    Matrix b(3, 2);
    b(0, 0) = 7; b(0, 1) = 8;
    b(1, 0) = 9; b(1, 1) = 10;
    b(2, 0) = 11; b(2, 1) = 12;
    Matrix c = matmul(a, b);
    REQUIRE(c(0, 0) == 58.0);
    REQUIRE(c(0, 1) == 64.0);
    REQUIRE(c(1, 0) == 139.0);
    REQUIRE(c(1, 1) == 154.0);

    // Aᵀ and ·ᵀ variants agree with explicit transposition.
    REQUIRE(frob(matmul_tn(a, a) - matmul(transpose(a), a)) == 0.0);
    REQUIRE(frob(matmul_nt(a, a) - matmul(a, transpose(a))) == 0.0);
}

TEST_CASE("matvec variants agree with products") {
    Rng rng(11);
    Matrix a = gaussian_matrix(5, 3, rng);
    std::vector<double> x = gaussian_vector(3, rng);
    std::vector<double> y = gaussian_vector(5, rng);
    std::vector<double> ax = matvec(a, x);
    std::vector<double> aty = matvec_t(a, y);
    for (int i = 0; i < 5; ++i) {
        double s = 0.0;
        for (int j = 0; j < 3; ++j) s += a(i, j) * x[j];
        REQUIRE(ax[i] == Catch::Approx(s).margin(1e-15));
    }
    for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int i = 0; i < 5; ++i) s += a(i, j) * y[i];
        REQUIRE(aty[j] == Catch::Approx(s).margin(1e-15));
    }
}

TEST_CASE("shape mismatches are rejected") {
    Matrix a(2, 3), b(2, 3);
    REQUIRE_THROWS_AS(matmul(a, b), DimensionMismatch);
    REQUIRE_THROWS_AS(matvec(a, std::vector<double>(2)), DimensionMismatch);
    REQUIRE_THROWS_AS(a + Matrix(3, 2), DimensionMismatch);
}

TEST_CASE("gaussian_matrix is seed-deterministic and seed-sensitive") {
    Rng r1(0), r2(0);
    Matrix a = gaussian_matrix(1, 1, r1);
    Matrix b = gaussian_matrix(1, 1, r2);
    REQUIRE(a(0, 0) == b(0, 0));

    Rng r3(3), r4(4);
    Matrix c = gaussian_matrix(2, 2, r3);
    Matrix d = gaussian_matrix(2, 2, r4);
    REQUIRE(frob(c - d) > 0.0);
}

TEST_CASE("gaussian_matrix moments at n=1000") {
    Rng rng(1);
    Matrix m = gaussian_matrix(1000, 1, rng);
    double sum = 0.0, sq = 0.0;
    for (double v : m.a) {
        sum += v;
        sq += v * v;
    }
    const double mean = sum / 1000.0;
    REQUIRE(std::abs(mean) < 0.1);
    REQUIRE(std::abs(sq / 1000.0 - mean * mean - 1.0) < 0.15);
}

TEST_CASE("sphere_uniform properties") {
    Rng rng(17);
    {
        // d=1: the 0-sphere is {+1, −1}.
        for (int i = 0; i < 16; ++i) {
            std::vector<double> v = sphere_uniform(1, rng);
            REQUIRE((v[0] == 1.0 || v[0] == -1.0));
        }
    }
    for (int d : {2, 3, 16, 128}) {
        std::vector<double> v = sphere_uniform(d, rng);
        REQUIRE(std::abs(std::sqrt(norm2(v)) - 1.0) <= 1e-12);
    }
    {
        // Symmetry: the mean of many samples is near the origin.
        std::vector<double> mean(3, 0.0);
        const int n = 100000;
        for (int i = 0; i < n; ++i) {
            std::vector<double> v = sphere_uniform(3, rng);
            for (int j = 0; j < 3; ++j) mean[j] += v[j];
        }
        for (double& m : mean) m /= n;
        REQUIRE(std::sqrt(norm2(mean)) < 0.02);
    }
}
