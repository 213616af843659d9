#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "grmoe/bounds.hpp"

using namespace grmoe;

namespace {

ExpertBank random_bank(int n, int d, int k, Rng& rng) {
    ExpertBank bank;
    for (int e = 0; e < n; ++e) {
        bank.frames.push_back(haar_frame(d, k, rng));
        bank.kappas.push_back(0.1 + 4.9 * rng.uniform());
    }
    return bank;
}

}  // namespace

TEST_CASE("concentration_stats on symmetric input") {
    ConcentrationStats s = concentration_stats_from({1.5, 1.5, 1.5, 1.5});
    REQUIRE(s.delta_kappa == 0.0);
    REQUIRE(s.gamma_kappa == 0.0);
    REQUIRE(s.delta_range == 0.0);
    for (double g : s.gaps) REQUIRE(g == 0.0);
}

TEST_CASE("concentration_stats hand example") {
    ConcentrationStats s = concentration_stats_from({3.0, 1.0});
    REQUIRE(s.delta_kappa == Catch::Approx(1.0).margin(1e-15));
    REQUIRE(s.delta_range == Catch::Approx(2.0).margin(1e-15));
    REQUIRE(s.gamma_kappa == Catch::Approx(1.0).margin(1e-15));
    REQUIRE(s.gaps.size() == 1);
    REQUIRE(s.gaps[0] == Catch::Approx(2.0).margin(1e-15));
}

TEST_CASE("concentration_stats is permutation invariant") {
    const std::vector<double> base = {0.3, 2.2, 1.1, 4.0, 0.9};
    ConcentrationStats a = concentration_stats_from(base);
    std::vector<double> perm = {4.0, 0.3, 0.9, 2.2, 1.1};
    ConcentrationStats b = concentration_stats_from(perm);
    REQUIRE(a.delta_kappa == b.delta_kappa);
    REQUIRE(a.gamma_kappa == Catch::Approx(b.gamma_kappa).margin(1e-15));
    REQUIRE(a.delta_range == b.delta_range);
    for (std::size_t i = 0; i < a.gaps.size(); ++i)
        REQUIRE(a.gaps[i] == Catch::Approx(b.gaps[i]).margin(1e-15));
}

TEST_CASE("concentration_stats from a bank matches direct affinity computation") {
    Rng rng(3);
    ExpertBank bank = random_bank(4, 12, 3, rng);
    std::vector<double> x = gaussian_vector(12, rng);
    ConcentrationStats s = concentration_stats(bank, x);
    for (int e = 0; e < 4; ++e)
        REQUIRE(s.tilde_kappa[e] ==
                Catch::Approx(bank.kappas[e] * affinity(bank.frames[e], x)).margin(1e-12));
}

TEST_CASE("entropy_bounds at alpha=0 collapse to log N") {
    ConcentrationStats s = concentration_stats_from({3.0, 1.0, 0.5});
    auto [lo, hi] = entropy_bounds(s, 0.0, 3);
    REQUIRE(lo == std::log(3.0));
    REQUIRE(hi == std::log(3.0));
}

TEST_CASE("entropy_bounds degenerate stats collapse to log N") {
    ConcentrationStats s = concentration_stats_from({2.0, 2.0, 2.0, 2.0});
    auto [lo, hi] = entropy_bounds(s, 1.7, 4);
    REQUIRE(lo == Catch::Approx(std::log(4.0)).margin(1e-15));
    REQUIRE(hi == Catch::Approx(std::log(4.0)).margin(1e-15));
}

TEST_CASE("entropy_bounds two-expert hand example") {
    ConcentrationStats s = concentration_stats_from({3.0, 1.0});
    auto [lo, hi] = entropy_bounds(s, 1.0, 2);
    REQUIRE(lo == Catch::Approx(-0.3068528194400547).margin(1e-12));
    REQUIRE(hi == Catch::Approx(0.625479538941639).margin(1e-12));

    // Observed entropy of softmax(3, 1) sits inside the interval.
    RoutingDistribution rd;
    rd.probs = {0.8807970779778824, 0.1192029220221176};
    const double h = entropy(rd);
    REQUIRE(h == Catch::Approx(0.36533385508720767).margin(1e-12));
    REQUIRE(h >= lo);
    REQUIRE(h <= hi);
}

TEST_CASE("topk_mass_bound anchors") {
    // Zero gap: vacuous bound 1 − (N−k).
    ConcentrationStats s0 = concentration_stats_from({2.0, 2.0, 2.0});
    TopkBound b0 = topk_mass_bound(s0, 1.5, 1, 3);
    REQUIRE(b0.raw == Catch::Approx(-1.0).margin(1e-15));
    REQUIRE(b0.clamped == 0.0);

    // Large α with a positive gap: bound approaches 1.
    ConcentrationStats s1 = concentration_stats_from({3.0, 1.0});
    TopkBound b1 = topk_mass_bound(s1, 50.0, 1, 2);
    REQUIRE(b1.raw == Catch::Approx(1.0).margin(1e-12));

    // Hand example: N=2, k=1, tilde=(3,1), α=1.
    TopkBound b2 = topk_mass_bound(s1, 1.0, 1, 2);
    REQUIRE(b2.raw == Catch::Approx(0.8646647167633873).margin(1e-12));
    REQUIRE(0.8807970779778824 >= b2.raw);

    REQUIRE_THROWS_AS(topk_mass_bound(s1, 1.0, 0, 2), InvalidArgument);
    REQUIRE_THROWS_AS(topk_mass_bound(s1, 1.0, 2, 2), InvalidArgument);
}

TEST_CASE("cv_bound anchors") {
    REQUIRE(cv_bound(8, 1.0, 1.0, 0.0, 1.0, 1.0) ==
            Catch::Approx(2.5751560882000963).margin(1e-12));
    REQUIRE(cv_bound(8, 0.0, 1.0, 0.0, 1.0, 1.0) == 7.0);
    REQUIRE_THROWS_AS(cv_bound(8, 1.0, 1.0, 0.5, 1.0, 2.0), AssumptionViolated);
    REQUIRE_THROWS_AS(cv_bound(8, 1.0, 1.0, 1.0, 1.0, 1.0), AssumptionViolated);
}

TEST_CASE("check_instance at alpha=0 is tight and satisfied") {
    Rng rng(5);
    ExpertBank bank = random_bank(6, 8, 2, rng);
    std::vector<double> x = gaussian_vector(8, rng);
    BoundReport r = check_instance(bank, x, 0.0, 5);
    REQUIRE(r.all_ok);
    REQUIRE(r.observed_entropy == Catch::Approx(std::log(6.0)).margin(1e-12));
    REQUIRE(r.entropy_lower == Catch::Approx(r.entropy_upper).margin(1e-15));
}

TEST_CASE("randomized bound sweep: zero violations in 1000 instances") {
    Rng root(20260817);
    int checked = 0;
    for (int i = 0; i < 1000; ++i) {
        Rng rng = root.substream("bounds-" + std::to_string(i));
        const int n = std::vector<int>{2, 4, 8, 16}[static_cast<int>(rng.uniform() * 4)];
        const int d = rng.uniform() < 0.5 ? 8 : 32;
        const int k = 1 + static_cast<int>(rng.uniform() * (d / 2));
        ExpertBank bank = random_bank(n, d, k, rng);
        std::vector<double> x = gaussian_vector(d, rng);
        const double alpha = 5.0 * rng.uniform();
        BoundReport r = check_instance(bank, x, alpha, n - 1);
        REQUIRE(r.all_ok);
        // Upper bound never exceeds log N.
        REQUIRE(r.entropy_upper <= std::log(static_cast<double>(n)) + 1e-15);
        ++checked;
    }
    REQUIRE(checked == 1000);
}

TEST_CASE("near-tie adversarial instances: zero violations") {
    Rng root(777);
    for (int i = 0; i < 200; ++i) {
        Rng rng = root.substream("tie-" + std::to_string(i));
        const int n = 2 + static_cast<int>(rng.uniform() * 7);
        // Identical frames force equal affinities; κ's differ at the 1e-7
        // level, so the κ̃ spread is ~1e-6.
        Frame f = haar_frame(16, 4, rng);
        ExpertBank bank;
        for (int e = 0; e < n; ++e) {
            bank.frames.push_back(f);
            bank.kappas.push_back(1.0 + 1e-7 * rng.uniform());
        }
        std::vector<double> x = gaussian_vector(16, rng);
        for (double alpha : {0.0, 0.5, 1.0, 2.5, 5.0}) {
            BoundReport r = check_instance(bank, x, alpha, n - 1);
            REQUIRE(r.all_ok);
        }
    }
}
