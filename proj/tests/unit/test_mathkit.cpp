#include "heatsim/mathkit.hpp"
#include "heatsim/rng.hpp"

#include "doctest.h"

#include <cmath>
#include <vector>

using namespace heatsim;

TEST_CASE("normal quantile inverts the cdf") {
    CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
    CHECK(normal_quantile(1e-9) == doctest::Approx(-5.9978070150076865).epsilon(1e-10));
    for (double p : {1e-7, 0.01, 0.3, 0.5, 0.77, 0.999}) {
        CHECK(normal_cdf(normal_quantile(p)) == doctest::Approx(p).epsilon(1e-10));
    }
    CHECK(normal_quantile(0.5) == 0.0);
}

TEST_CASE("owen t reference values") {
    // reference values from an independent implementation
    CHECK(owen_t(1.2, 0.7) == doctest::Approx(0.0427974426030885).epsilon(1e-10));
    CHECK(owen_t(0.3, 2.5) == doctest::Approx(0.1727035640063457).epsilon(1e-10));
    CHECK(owen_t(1.2, 0.0) == 0.0);
    // T(h, 1) = Phi(h)(1 - Phi(h)) / 2
    const double h = 0.9;
    CHECK(owen_t(h, 1.0) ==
          doctest::Approx(normal_cdf(h) * (1.0 - normal_cdf(h)) / 2.0).epsilon(1e-12));
    CHECK(owen_t(-h, 0.6) == doctest::Approx(owen_t(h, 0.6)).epsilon(1e-13));
}

TEST_CASE("skew normal density, distribution, quantile") {
    const SkewNormal sn{0.5, 1.6, 4.0};
    CHECK(sn.pdf(1.3) == doctest::Approx(0.430069742657541).epsilon(1e-10));
    CHECK(sn.cdf(1.3) == doctest::Approx(0.3843496785881372).epsilon(1e-10));
    CHECK(sn.quantile(0.9) == doctest::Approx(3.131765803121059).epsilon(1e-9));
    CHECK(sn.mean() == doctest::Approx(1.7384987562314431).epsilon(1e-12));
    for (double p : {0.01, 0.2, 0.5, 0.8, 0.99})
        CHECK(sn.cdf(sn.quantile(p)) == doctest::Approx(p).epsilon(1e-9));
    const SkewNormal sym{0.0, 1.0, 0.0};
    CHECK(sym.cdf(0.7) == doctest::Approx(normal_cdf(0.7)).epsilon(1e-12));
}

TEST_CASE("correlation kernels") {
    CHECK(matern_corr(3.0, 5.0, 0.8) == doctest::Approx(0.6324969374681773).epsilon(1e-9));
    CHECK(matern_corr(0.7, 2.0, 1.5) == doctest::Approx(0.8760469700684449).epsilon(1e-9));
    CHECK(matern_corr(0.0, 5.0, 0.8) == 1.0);
    CHECK(cauchy_corr(0.0, 100.0) == 1.0);
    CHECK(cauchy_corr(100.0, 100.0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(cauchy_corr(300.0, 100.0) == doctest::Approx(0.1).epsilon(1e-14));
}

TEST_CASE("ranks and quantiles") {
    const std::vector<double> x = {3.0, 1.0, 4.0, 1.0, 5.0};
    const std::vector<double> r = average_ranks(x);
    CHECK(r == std::vector<double>{3.0, 1.5, 4.0, 1.5, 5.0});

    std::vector<double> s = {1.0, 2.0, 3.0, 4.0};
    CHECK(empirical_quantile(s, 0.5) == 2.0);
    CHECK(empirical_quantile(s, 0.75) == 3.0);
    CHECK(empirical_quantile(s, 1.0) == 4.0);
    CHECK(empirical_quantile_sorted(s, 0.25) == 1.0);
}

TEST_CASE("ks statistics") {
    std::vector<double> u;
    for (int i = 0; i < 1000; ++i) u.push_back((i + 0.5) / 1000.0);
    CHECK(ks_uniform(u) == doctest::Approx(0.0005).epsilon(1e-9));
    Rng rng(3);
    std::vector<double> a, b;
    for (int i = 0; i < 4000; ++i) {
        a.push_back(rng.normal());
        b.push_back(rng.normal());
    }
    CHECK(ks_two_sample(a, b) < 0.05);
    for (double& v : b) v += 2.0;
    CHECK(ks_two_sample(a, b) > 0.5);
}

TEST_CASE("pinball loss") {
    CHECK(pinball_loss(0.3, 2.0) == doctest::Approx(0.6));
    CHECK(pinball_loss(0.3, -2.0) == doctest::Approx(1.4));
    CHECK(pinball_loss(0.5, 1.0) == doctest::Approx(0.5));
}

TEST_CASE("bernstein tail sums are binomial survival values") {
    const int M = 15;
    const double t = 0.35;
    const std::vector<double> g = bernstein_tail_row(M, t);
    REQUIRE(static_cast<int>(g.size()) == M);
    CHECK(g[0] == doctest::Approx(0.9984379305110446).epsilon(1e-12));   // l = 1
    CHECK(g[4] == doctest::Approx(0.6480565722237327).epsilon(1e-12));   // l = 5
    CHECK(g[10] == doctest::Approx(0.0028314247867545373).epsilon(1e-9)); // l = 11
    for (std::size_t l = 1; l < g.size(); ++l) CHECK(g[l] <= g[l - 1]);
    const std::vector<double> b = bernstein_row(M, t);
    double sum = 0.0;
    for (double v : b) sum += v;
    // basis omits m=0, so the rows sum to 1 - (1-t)^M
    CHECK(sum == doctest::Approx(1.0 - std::pow(1.0 - t, M)).epsilon(1e-12));
}

TEST_CASE("split rhat separates mixed from shifted chains") {
    Rng rng(9);
    std::vector<std::vector<double>> good(4), bad(4);
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < 500; ++i) {
            good[c].push_back(rng.normal());
            bad[c].push_back(rng.normal() + 3.0 * c);
        }
    CHECK(split_rhat(good) < 1.02);
    CHECK(split_rhat(bad) > 2.0);
}

TEST_CASE("spearman rho with ties") {
    const std::vector<double> a = {3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0};
    const std::vector<double> b = {2.0, 7.0, 1.0, 8.0, 2.0, 8.0, 1.0, 8.0};
    CHECK(spearman_rho(a, b) == doctest::Approx(0.19885368120992467).epsilon(1e-10));
    CHECK(spearman_rho(a, a) == doctest::Approx(1.0));
}
