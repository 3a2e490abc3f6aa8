#include "heatsim/bsqr_model.hpp"
#include "heatsim/bsqr_stage1.hpp"
#include "heatsim/bsqr_stage2.hpp"
#include "heatsim/rng.hpp"

#include "doctest.h"

#include <cmath>
#include <vector>

using namespace heatsim;

TEST_CASE("constrained least squares against reference solutions") {
    // reference values from an independent implementation
    const std::vector<double> A = {1.0, 0.3, 0.0, 0.5, 1.0, 0.2,
                                   0.1, 0.4, 1.0, 0.8, 0.2, 0.6};
    {
        const std::vector<double> b = {1.0, -0.5, 0.7, 0.3};
        const std::vector<double> x = nnls(A, b, 4, 3, {true, true, true});
        CHECK(x[0] == doctest::Approx(0.4339279213687659).epsilon(1e-9));
        CHECK(x[1] == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(x[2] == doctest::Approx(0.3463778667637423).epsilon(1e-9));
    }
    {
        const std::vector<double> b = {-1.0, 0.5, 0.7, -0.3};
        const std::vector<double> x = nnls(A, b, 4, 3, {false, true, true});
        CHECK(x[0] == doctest::Approx(-1.1646300162894705).epsilon(1e-8));
        CHECK(x[1] == doctest::Approx(0.9334258829061308).epsilon(1e-8));
        CHECK(x[2] == doctest::Approx(0.528486982417447).epsilon(1e-8));
        const std::vector<double> xp = nnls(A, b, 4, 3, {true, true, true});
        CHECK(xp[0] == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(xp[1] == doctest::Approx(0.10997204100652372).epsilon(1e-8));
        CHECK(xp[2] == doctest::Approx(0.38630009319664504).epsilon(1e-8));
    }
}

TEST_CASE("quantile regression minimizes pinball loss") {
    // reference coefficients and losses from an independent implementation
    const std::vector<double> xs = {0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95};
    const std::vector<double> ys = {0.8, 1.6, 1.2, 2.4, 1.9, 2.2, 3.1, 2.7, 3.6, 3.3,
                                    1.1, 1.3, 1.8, 1.5, 2.6, 2.9, 2.4, 3.4, 2.9, 4.1,
                                    0.6, 1.9, 1.4, 2.0, 2.3, 2.6, 2.8, 3.0, 3.2, 3.9};
    std::vector<double> design;
    std::vector<double> y;
    for (int rep = 0; rep < 3; ++rep)
        for (std::size_t i = 0; i < xs.size(); ++i) {
            design.push_back(1.0);
            design.push_back(xs[i]);
            y.push_back(ys[rep * 10 + i]);
        }
    const struct {
        double tau, b0, b1, loss;
    } cases[] = {{0.3, 0.6600006285714275, 2.7999988571428576, 3.4300001714285715},
                 {0.5, 0.9583323611111104, 2.8333361111111106, 4.191666805555555},
                 {0.8, 1.1499999374999992, 2.9999997983870967, 2.6000003266129044}};
    for (const auto& c : cases) {
        const std::vector<double> beta = fit_qr_site(y, design, 2, c.tau);
        REQUIRE(beta.size() == 2);
        const double loss = qr_objective(y, design, 2, c.tau, beta);
        CHECK(loss <= c.loss + 1e-6);
        CHECK(beta[0] == doctest::Approx(c.b0).epsilon(0.05));
        CHECK(beta[1] == doctest::Approx(c.b1).epsilon(0.05));
    }
}

TEST_CASE("stage one cell fit has the documented layout") {
    Rng rng(12);
    const int N = 600;
    std::vector<double> design, y;
    for (int i = 0; i < N; ++i) {
        const double x = rng.uniform();
        design.push_back(1.0);
        design.push_back(x);
        y.push_back(1.0 + 2.0 * x + (0.5 + x) * rng.normal());
    }
    const QuantileGrid grid = QuantileGrid::regular(19);
    const Stage1Fit fit = fit_stage1_cell(y, design, 2, grid);
    CHECK(fit.p == 2);
    CHECK(fit.K == 19);
    REQUIRE(fit.beta.size() == 2 * 19);
    REQUIRE(fit.sigma.size() == 38 * 38);
    // the median-slope estimate sits near the injected value
    CHECK(fit.beta[9 * 2 + 1] == doctest::Approx(2.0).epsilon(0.35));
    // covariance is symmetric with positive diagonal
    for (int i = 0; i < 38; ++i) {
        CHECK(fit.sigma[static_cast<std::size_t>(i) * 38 + i] > 0.0);
        for (int k = 0; k < 38; ++k)
            CHECK(fit.sigma[static_cast<std::size_t>(i) * 38 + k] ==
                  doctest::Approx(fit.sigma[static_cast<std::size_t>(k) * 38 + i]).epsilon(1e-12));
    }
}

TEST_CASE("noncrossing map zeroes offending columns") {
    const int p = 2, M = 5;
    std::vector<double> ds = {0.5, 0.4, 0.2, 0.1, 0.3,     // intercept row
                              0.2, -0.5, -0.1, 0.2, -0.4}; // slope row
    const std::vector<double> out = noncrossing_map(ds, p, M);
    // column 0 is kept as the anchor
    CHECK(out[0] == 0.5);
    CHECK(out[5] == 0.2);
    // 0.4 - 0.5 < 0 and 0.3 - 0.4 < 0 fail the worst case; both rows zeroed there
    CHECK(out[1] == 0.0);
    CHECK(out[6] == 0.0);
    CHECK(out[4] == 0.0);
    CHECK(out[9] == 0.0);
    // 0.2 - 0.1 >= 0 and 0.1 + 0.2 >= 0 pass untouched
    CHECK(out[2] == 0.2);
    CHECK(out[7] == -0.1);
    CHECK(out[3] == 0.1);
    CHECK(out[8] == 0.2);
}

TEST_CASE("centered base coefficients reproduce the base quantiles") {
    const SkewNormal base{0.3, 1.2, 2.0};
    const QuantileGrid grid = QuantileGrid::regular(19);
    const int M = 15;
    const std::vector<double> d = center_on_base(base, grid, M);
    REQUIRE(d.size() == static_cast<std::size_t>(M));
    for (int m = 1; m < M; ++m) CHECK(d[m] >= 0.0);
    const std::vector<double> G = cumulative_design(grid.levels, M);
    double worst = 0.0;
    for (int k = 0; k < grid.K(); ++k) {
        double q = 0.0;
        for (int m = 0; m < M; ++m) q += G[static_cast<std::size_t>(k) * M + m] * d[m];
        worst = std::max(worst, std::abs(q - base.quantile(grid.levels[k])));
    }
    CHECK(worst < 0.08);
}

TEST_CASE("model evaluation inverts cleanly") {
    BsqrConfig bc;
    const int n = 2, p = 2;
    std::vector<double> ds(static_cast<std::size_t>(n) * p * bc.M, 0.0);
    for (int s = 0; s < n; ++s)
        for (int m = 0; m < bc.M; ++m) {
            ds[(static_cast<std::size_t>(s) * p + 0) * bc.M + m] = 0.4;
            ds[(static_cast<std::size_t>(s) * p + 1) * bc.M + m] = 0.1;
        }
    const BsqrModel model(bc, n, p, ds);
    const double c[2] = {1.0, 0.5};
    CHECK(model.monotone_ok(0));
    CHECK(model.monotone_for(c, 0));
    for (double tau : {0.05, 0.2, 0.5, 0.8, 0.95, 0.99}) {
        const double q = model.quantile_eval(tau, c, 0);
        CHECK(model.quantile_invert(q, c, 0) == doctest::Approx(tau).epsilon(1e-6));
    }
    // outside the window the inverse clamps
    CHECK(model.quantile_invert(-100.0, c, 0) == bc.tau_min);
    CHECK(model.quantile_invert(1e6, c, 0) == bc.tau_max);
    // covariate raises the curve
    const double base[2] = {1.0, 0.0};
    CHECK(model.quantile_eval(0.5, c, 0) > model.quantile_eval(0.5, base, 0));
}

TEST_CASE("monotone start repair lifts the intercept") {
    BsqrConfig bc;
    const int p = 2, M = bc.M;
    std::vector<double> cell(static_cast<std::size_t>(p) * M, 0.0);
    for (int m = 0; m < M; ++m) {
        cell[m] = 0.05;
        cell[M + m] = (m % 2 == 0) ? -0.2 : 0.1;  // strongly crossing slope
    }
    std::vector<double> fine_tau;
    for (double t = bc.tau_min; t <= bc.tau_max + 1e-12; t += bc.mono_step)
        fine_tau.push_back(t);
    const std::vector<double> fine_G = cumulative_design(fine_tau, M);
    int mono_from = 0;
    while (fine_tau[mono_from] < bc.mono_lo - 1e-12) ++mono_from;
    const std::vector<double> rep = repair_monotone_start(cell, p, M, fine_G, mono_from);
    // worst-case increments are nonnegative from mono_lo on
    for (std::size_t i = mono_from + 1; i < fine_tau.size(); ++i) {
        double step0 = 0.0, step1 = 0.0;
        for (int m = 0; m < M; ++m) {
            const double dg = fine_G[i * M + m] - fine_G[(i - 1) * M + m];
            step0 += dg * rep[m];
            step1 += dg * rep[M + m];
        }
        CHECK(step0 + std::min(step1, 0.0) >= -1e-10);
    }
}
