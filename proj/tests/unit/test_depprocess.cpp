#include "heatsim/depprocess.hpp"
#include "heatsim/synthetic.hpp"

#include "doctest.h"

#include <cmath>
#include <vector>

using namespace heatsim;

TEST_CASE("anisotropy matrix geometry") {
    const AnisoMatrix id = aniso_matrix(0.0, 1.0);
    CHECK(id.norm(3.0, 4.0) == doctest::Approx(5.0));
    // eta stretches the axis orthogonal to the main direction
    const AnisoMatrix st = aniso_matrix(0.0, 2.0);
    CHECK(st.norm(1.0, 0.0) == doctest::Approx(1.0));
    CHECK(st.norm(0.0, 1.0) == doctest::Approx(2.0));
    // rotation by pi/2 swaps the roles
    const AnisoMatrix rot = aniso_matrix(kPi / 2.0, 2.0);
    CHECK(rot.norm(1.0, 0.0) == doctest::Approx(2.0));
    CHECK(rot.norm(0.0, 1.0) == doctest::Approx(1.0));
}

TEST_CASE("correlation building blocks") {
    const AnisoMatrix T = aniso_matrix(0.3, 1.5);
    const double c = spatial_corr(0.0, 0.0, 30.0, 40.0, 100.0, T);
    const double d = T.norm(30.0, 40.0);
    CHECK(c == doctest::Approx(1.0 / (1.0 + (d / 100.0) * (d / 100.0))).epsilon(1e-12));
    CHECK(temporal_corr(0.0, 5.0) == 1.0);
    CHECK(temporal_corr(3.0, 5.0) == doctest::Approx(matern_corr(3.0, 5.0, 0.8)).epsilon(1e-12));
}

TEST_CASE("pareto mappings") {
    CHECK(gaussian_to_pareto(0.0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(gaussian_to_pareto(3.0) > gaussian_to_pareto(1.0));
    CHECK(gaussian_to_pareto(-8.0) >= 1.0);
}

TEST_CASE("mixture marginal matches independent integration") {
    // reference values from numeric integration of the unit-Pareto mixture
    CHECK(z_marginal_cdf(1.5, 0.2) == doctest::Approx(0.24069396661292314).epsilon(1e-7));
    CHECK(z_marginal_cdf(3.0, 0.2) == doctest::Approx(0.6636669929339972).epsilon(1e-7));
    CHECK(z_marginal_cdf(10.0, 0.2) == doctest::Approx(0.9250244899746202).epsilon(1e-7));
    CHECK(z_marginal_cdf(1.5, 0.5) == doctest::Approx(0.1951421261260761).epsilon(1e-7));
    CHECK(z_marginal_cdf(3.0, 0.5) == doctest::Approx(0.6447528247404201).epsilon(1e-7));
    CHECK(z_marginal_cdf(10.0, 0.5) == doctest::Approx(0.9439482981401195).epsilon(1e-7));
    CHECK(z_marginal_cdf(1.5, 0.8) == doctest::Approx(0.24069396661292256).epsilon(1e-7));
    // the mixture is symmetric in delta by exchangeability of the components
    CHECK(z_marginal_cdf(4.2, 0.3) == doctest::Approx(z_marginal_cdf(4.2, 0.7)).epsilon(1e-9));
    CHECK(z_marginal_cdf(1.0, 0.5) == doctest::Approx(0.0).epsilon(1e-12));

    for (double delta : {0.2, 0.5, 0.8})
        for (double u : {0.01, 0.3, 0.77, 0.99, 0.9999}) {
            const double z = z_marginal_quantile(u, delta);
            CHECK(z_marginal_cdf(z, delta) == doctest::Approx(u).epsilon(1e-9));
        }
}

TEST_CASE("storm cdf atom and shape") {
    SyntheticSpec spec;
    spec.width = 3;
    spec.D = 6;
    const SyntheticData sd = make_synthetic(spec, 5);
    DepParams p;
    p.lambda = 1.3;
    const StormCdf cdf(sd.domain, spec.D, p);
    CHECK(cdf.atom() == doctest::Approx(std::exp(-1.3)).epsilon(1e-12));
    CHECK(cdf.at(0.0, 0, 0) == doctest::Approx(std::exp(-1.3)).epsilon(1e-12));
    double prev = 0.0;
    for (double x : {0.0, 0.5, 1.0, 2.0, 5.0, 20.0, 200.0}) {
        const double v = cdf.at(x, 4, 3);
        CHECK(v >= prev);
        prev = v;
    }
    CHECK(cdf.at(1e9, 4, 3) == doctest::Approx(1.0).epsilon(1e-6));
    double mean = 0.0;
    for (int s = 0; s < cdf.n(); ++s)
        for (int d = 0; d < cdf.D(); ++d) mean += cdf.at(3.0, s, d);
    mean /= cdf.n() * cdf.D();
    CHECK(cdf.pooled(3.0) == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("year simulator substreams") {
    SyntheticSpec spec;
    spec.width = 3;
    spec.D = 5;
    const SyntheticData sd = make_synthetic(spec, 5);
    const YearSimulator sim(sd.domain, spec.D, DepParams{});
    const YearSimulator sim2(sd.domain, spec.D, DepParams{});
    const auto u1 = sim.uniform_year(9, 0);
    const auto u1b = sim2.uniform_year(9, 0);
    const auto u2 = sim.uniform_year(9, 1);
    const auto u3 = sim.uniform_year(10, 0);
    REQUIRE(u1.size() == static_cast<std::size_t>(sd.domain.n()) * spec.D);
    CHECK(u1 == u1b);
    CHECK(u1 != u2);
    CHECK(u1 != u3);
    for (double v : u1) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    // component mixing is elementwise
    const std::vector<double> R = {2.0, 3.0};
    const std::vector<double> W = {4.0, 5.0};
    const auto Z = mix(R, W, 0.3);
    CHECK(Z[0] == doctest::Approx(std::pow(2.0, 0.3) * std::pow(4.0, 0.7)).epsilon(1e-12));
    CHECK(Z[1] == doctest::Approx(std::pow(3.0, 0.3) * std::pow(5.0, 0.7)).epsilon(1e-12));
}

TEST_CASE("prior box normalization roundtrip") {
    const PriorBox box;
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        const DepParams p = box.sample(rng);
        CHECK(box.contains(p));
        const DepParams q = box.denormalize(box.normalize(p));
        const auto a = p.to_array();
        const auto b = q.to_array();
        for (int k = 0; k < 8; ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-12));
    }
    const DepParams def;
    CHECK(box.contains(def));
}
