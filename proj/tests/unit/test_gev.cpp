#include "heatsim/gev.hpp"
#include "heatsim/rng.hpp"

#include "doctest.h"

#include <cmath>
#include <vector>

using namespace heatsim;

TEST_CASE("gev distribution reference values") {
    // reference values from an independent implementation
    CHECK(gev_cdf(2.2, 1.0, 0.8, 0.15) == doctest::Approx(0.7722248750945316).epsilon(1e-12));
    CHECK(gev_quantile(0.98, 1.0, 0.8, 0.15) ==
          doctest::Approx(5.242736227044352).epsilon(1e-10));
    CHECK(gev_cdf(0.4, 1.0, 0.8, -0.2) == doctest::Approx(0.13380695025934547).epsilon(1e-12));
    CHECK(gev_cdf(1.7, 1.0, 0.8, 0.0) == doctest::Approx(0.6591118581362204).epsilon(1e-12));
    // support edge for positive shape: cdf vanishes below mu - sigma/xi
    CHECK(gev_cdf(1.0 - 0.8 / 0.15 - 0.01, 1.0, 0.8, 0.15) == 0.0);
    CHECK(gev_logpdf(1.0 - 0.8 / 0.15 - 0.01, 1.0, 0.8, 0.15) ==
          -std::numeric_limits<double>::infinity());
}

TEST_CASE("gev quantile cdf roundtrip") {
    double worst = 0.0;
    for (double xi : {-0.3, -0.1, 0.0, 1e-10, 0.1, 0.3})
        for (double p : {0.001, 0.01, 0.5, 0.9, 0.99, 0.9999}) {
            const double z = gev_quantile(p, 1.3, 0.7, xi);
            worst = std::max(worst, std::abs(gev_cdf(z, 1.3, 0.7, xi) - p) / p);
        }
    CHECK(worst < 1e-9);
}

TEST_CASE("icar quadratic form on a two-node graph") {
    const GridDomain dom = project_to_km({10.0, 10.0}, {45.0, 45.9});
    REQUIRE(dom.neighbors[0].size() == 1);
    CHECK(icar_quadform({1.0, -1.0}, dom) == 4.0);
    CHECK(icar_quadform({2.5, 2.5}, dom) == 0.0);
    CHECK(icar_quadform({0.0, 3.0}, dom) == 9.0);
}

TEST_CASE("seasonal maxima pick the hottest day") {
    AnomalyField f;
    f.n = 2;
    f.D = 4;
    f.T = 3;
    f.p = 2;
    f.covariates = {1.0, 0.0, 1.0, 0.5, 1.0, 1.0};
    f.values.assign(2 * 4 * 3, 0.0);
    f.at(0, 2, 1) = 7.5;
    f.at(1, 0, 2) = -1.0;
    for (int d = 0; d < 4; ++d) f.at(1, d, 2) = d == 3 ? 2.5 : -1.0;
    const SeasonalMaxima m = seasonal_maxima_from(f);
    CHECK(m.n == 2);
    CHECK(m.T == 3);
    CHECK(m.p == 2);
    CHECK(m.at(0, 1) == 7.5);
    CHECK(m.at(1, 2) == 2.5);
    CHECK(m.at(0, 0) == 0.0);
    CHECK(m.cov(1)[1] == 0.5);
}

TEST_CASE("field model evaluates coefficient fields") {
    const int n = 3, p = 2;
    GevDraw d;
    d.global = {1.0, 0.5, std::log(0.8), 0.2, 0.1};
    d.scale = {0.1, 0.0, 0.0, 0.0, 0.0};
    d.u.assign(5 * n, 0.0);
    d.u[0 * n + 2] = 2.0;  // mu_0 bump at cell 2
    GevDiagnostics dg;
    dg.converged = true;
    const GevFieldModel model(n, p, GevConfig{}, {d}, dg);
    const double c[2] = {1.0, 0.5};
    double mu, sigma, xi;
    model.params_at(d, 0, c, mu, sigma, xi);
    CHECK(mu == doctest::Approx(1.0 + 0.5 * 0.5));
    CHECK(sigma == doctest::Approx(std::exp(std::log(0.8) + 0.2 * 0.5)));
    CHECK(xi == doctest::Approx(0.1));
    model.params_at(d, 2, c, mu, sigma, xi);
    CHECK(mu == doctest::Approx(1.0 + 0.1 * 2.0 + 0.25));
    // single draw: posterior mean equals the draw
    double mm, ms, mx;
    model.mean_params_at(0, c, mm, ms, mx);
    CHECK(mm == doctest::Approx(1.25));
    CHECK(model.coef_draws(4, 0) == std::vector<double>{0.1});
}

TEST_CASE("gumbel residual ppc is calibrated on its own model") {
    const int n = 4, T = 60;
    GevDraw d;
    d.global = {2.0, std::log(1.1), 0.12};
    d.scale = {0.0, 0.0, 0.0};
    d.u.assign(3 * n, 0.0);
    GevDiagnostics dg;
    dg.converged = true;
    const GevFieldModel model(n, 1, GevConfig{}, {d}, dg);
    SeasonalMaxima mx;
    mx.n = n;
    mx.T = T;
    mx.p = 1;
    mx.covariates.assign(T, 1.0);
    mx.m.resize(static_cast<std::size_t>(n) * T);
    Rng rng(8);
    for (double& v : mx.m) v = gev_quantile(rng.uniform(), 2.0, 1.1, 0.12);
    const PpcResult ppc = ppc_gumbel_residuals(model, mx, 100, 5);
    CHECK(ppc.excluded == 0);
    REQUIRE(ppc.v_sorted.size() == static_cast<std::size_t>(n) * T);
    // residuals of the generating model look standard Gumbel
    const double crit = 1.358 / std::sqrt(static_cast<double>(n) * T);
    double ks = 0.0;
    for (std::size_t i = 0; i < ppc.v_sorted.size(); ++i) {
        const double F = std::exp(-std::exp(-ppc.v_sorted[i]));
        const double lo = static_cast<double>(i) / ppc.v_sorted.size();
        const double hi = static_cast<double>(i + 1) / ppc.v_sorted.size();
        ks = std::max({ks, std::abs(F - lo), std::abs(F - hi)});
    }
    CHECK(ppc.ks == doctest::Approx(ks).epsilon(1e-9));
    CHECK(ppc.ks < crit);
    // envelope brackets the diagonal for most order statistics
    int inside = 0;
    for (std::size_t i = 0; i < ppc.v_sorted.size(); ++i)
        if (ppc.v_sorted[i] >= ppc.env_lo[i] && ppc.v_sorted[i] <= ppc.env_hi[i]) ++inside;
    CHECK(inside > static_cast<int>(0.9 * ppc.v_sorted.size()));
}
