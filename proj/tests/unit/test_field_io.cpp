#include "heatsim/digest.hpp"
#include "heatsim/field_io.hpp"
#include "heatsim/rng.hpp"
#include "heatsim/synthetic.hpp"

#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

using namespace heatsim;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("binary field roundtrip is exact") {
    SyntheticSpec spec;
    spec.width = 3;
    spec.D = 6;
    spec.T = 5;
    spec.baseline_years = 2;
    const SyntheticData sd = make_synthetic(spec, 77);
    const std::string p = temp_path("hs_field_rt.field");

    write_field(p, sd.factual_raw, sd.domain);
    const auto [f, dom] = read_field(p);
    CHECK(f.values == sd.factual_raw.values);
    CHECK(f.covariates == sd.factual_raw.covariates);
    CHECK(f.n == sd.factual_raw.n);
    CHECK(f.p == sd.factual_raw.p);
    CHECK(f.scenario == Scenario::factual);
    CHECK(dom.lon == sd.domain.lon);
    CHECK(dom.area_km2 == sd.domain.area_km2);
    CHECK(dom.neighbors == sd.domain.neighbors);

    // identical content gives an identical file digest
    const std::string p2 = temp_path("hs_field_rt2.field");
    write_field(p2, sd.factual_raw, sd.domain);
    CHECK(digest_file(p) == digest_file(p2));
    std::remove(p.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("csv import builds the field") {
    const std::string vals = temp_path("hs_vals.csv");
    const std::string cells = temp_path("hs_cells.csv");
    const std::string covs = temp_path("hs_covs.csv");
    {
        std::ofstream v(vals);
        v << "cell_id,day,year,value\n";
        for (int s = 0; s < 2; ++s)
            for (int d = 1; d <= 3; ++d)
                for (int t = 1; t <= 2; ++t)
                    v << s << ',' << d << ',' << t << ',' << (s * 100 + d * 10 + t) << "\n";
        std::ofstream c(cells);
        c << "cell_id,lon,lat\n0,10.0,45.0\n1,10.0,45.9\n";
        std::ofstream w(covs);
        w << "year,c2\n1,0.0\n2,0.5\n";
    }
    const auto [f, dom] = field_from_csv(vals, cells, Scenario::factual, covs);
    CHECK(f.n == 2);
    CHECK(f.D == 3);
    CHECK(f.T == 2);
    CHECK(f.p == 2);
    CHECK(f.at(1, 2, 1) == 132.0);
    CHECK(f.cov(1)[1] == 0.5);
    CHECK(f.cov(0)[0] == 1.0);
    CHECK(dom.n() == 2);

    // a missing observation is rejected
    {
        std::ofstream v(vals, std::ios::trunc);
        v << "cell_id,day,year,value\n0,1,1,1.0\n";
    }
    CHECK_THROWS(field_from_csv(vals, cells, Scenario::factual));
    std::remove(vals.c_str());
    std::remove(cells.c_str());
    std::remove(covs.c_str());
}
