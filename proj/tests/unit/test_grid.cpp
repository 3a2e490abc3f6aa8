#include "heatsim/grid.hpp"

#include "doctest.h"

#include <cmath>
#include <vector>

using namespace heatsim;

namespace {

AnomalyField blank_field(int n, int D, int T) {
    AnomalyField f;
    f.n = n;
    f.D = D;
    f.T = T;
    f.p = 1;
    f.values.assign(static_cast<std::size_t>(n) * D * T, 0.0);
    f.covariates.assign(static_cast<std::size_t>(T), 1.0);
    return f;
}

} // namespace

TEST_CASE("projection distances and adjacency") {
    const std::vector<double> lon = {10.0, 11.27, 10.0, 11.27};
    const std::vector<double> lat = {45.0, 45.0, 45.9, 45.9};
    const GridDomain dom = project_to_km(lon, lat);
    REQUIRE(dom.n() == 4);
    // 0.9 degrees of latitude is almost exactly 100 km
    CHECK(dom.dist_km(0, 2) == doctest::Approx(100.07).epsilon(0.01));
    CHECK(dom.dist_km(0, 1) == doctest::Approx(99.8).epsilon(0.02));
    CHECK(dom.dist_km(0, 0) == 0.0);
    CHECK(dom.dist_km(0, 3) > dom.dist_km(0, 1));
    for (int s = 0; s < 4; ++s) CHECK(dom.neighbors[s].size() == 2);
    const auto A = dom.adjacency_matrix();
    for (int i = 0; i < 4; ++i) {
        CHECK(A[static_cast<std::size_t>(i) * 4 + i] == 0);
        for (int k = 0; k < 4; ++k)
            CHECK(A[static_cast<std::size_t>(i) * 4 + k] ==
                  A[static_cast<std::size_t>(k) * 4 + i]);
    }
    CHECK(A[1] == 1);  // 0-1 share a row
    CHECK(A[3] == 0);  // 0-3 is diagonal
    for (double a : dom.area_km2) CHECK(a == doctest::Approx(100.0 * 100.0).epsilon(0.05));
}

TEST_CASE("anomalies subtract the baseline day mean") {
    AnomalyField raw = blank_field(2, 3, 5);
    for (int t = 0; t < 5; ++t) raw.at(0, 1, t) = 10.0 + t;
    const AnomalyField an = compute_anomalies(raw, 2);
    // baseline mean over first two years is 10.5
    CHECK(an.at(0, 1, 0) == doctest::Approx(-0.5));
    CHECK(an.at(0, 1, 4) == doctest::Approx(3.5));
    CHECK(an.at(0, 0, 3) == 0.0);
    CHECK(an.T == 5);
    CHECK(an.scenario == raw.scenario);
}

TEST_CASE("empirical threshold matches the order statistic") {
    AnomalyField f = blank_field(1, 4, 5);  // 20 values per cell
    for (int d = 0; d < 4; ++d)
        for (int t = 0; t < 5; ++t) f.at(0, d, t) = d * 5 + t;  // 0..19
    const ThresholdResult r = empirical_threshold(f, 0.95);
    REQUIRE(r.thresholds.size() == 1);
    CHECK(r.thresholds[0] == 18.0);  // smallest x with fraction <= x at least 0.95
    const ThresholdResult med = empirical_threshold(f, 0.5);
    CHECK(med.thresholds[0] == 9.0);
}

TEST_CASE("planted regional heatwave is recovered") {
    const int n = 2, D = 10, T = 3;
    AnomalyField f = blank_field(n, D, T);
    // both equal-area cells exceed on days 2..6 of year 1 only
    for (int s = 0; s < n; ++s)
        for (int d = 2; d <= 6; ++d) f.at(s, d, 1) = 5.0 + s + d * 0.1;
    const std::vector<double> thr(n, 1.0);
    const std::vector<double> areas(n, 100.0);

    const auto H = local_heatwave(f, thr, 3);
    // run of exceedances starting day 2 marks days 4..6
    CHECK(H[(0 * D + 3) * T + 1] == 0);
    CHECK(H[(0 * D + 4) * T + 1] == 1);
    CHECK(H[(0 * D + 6) * T + 1] == 1);
    CHECK(H[(0 * D + 7) * T + 1] == 0);
    CHECK(H[(0 * D + 4) * T + 0] == 0);

    const auto HR = regional_heatwave(H, n, D, T, areas, 0.6);
    const auto eps = extract_episodes(HR, f);
    REQUIRE(eps.size() == 1);
    CHECK(eps[0].year == 1);
    CHECK(eps[0].start_day == 4);
    CHECK(eps[0].duration == 3);
    CHECK(eps[0].intensity == doctest::Approx(5.0 + 1 + 0.6));  // cell 1, day 6

    // alpha above the one-cell fraction: a single hot cell is not regional
    AnomalyField g = blank_field(n, D, T);
    for (int d = 2; d <= 6; ++d) g.at(0, d, 1) = 5.0;
    const auto H1 = local_heatwave(g, thr, 3);
    const auto HR1 = regional_heatwave(H1, n, D, T, areas, 0.6);
    CHECK(extract_episodes(HR1, g).empty());
}

TEST_CASE("scenario names roundtrip") {
    CHECK(scenario_from_string(to_string(Scenario::factual)) == Scenario::factual);
    CHECK(scenario_from_string(to_string(Scenario::counterfactual)) ==
          Scenario::counterfactual);
    CHECK_THROWS(scenario_from_string("both"));
}

TEST_CASE("field validate rejects bad shapes") {
    AnomalyField f = blank_field(2, 3, 4);
    CHECK_NOTHROW(f.validate());
    f.values[0] = std::nan("");
    CHECK_THROWS(f.validate());
    AnomalyField g = blank_field(2, 2, 4);  // D < 3
    CHECK_THROWS(g.validate());
}
