#include "heatsim/rng.hpp"

#include "doctest.h"

#include <cmath>
#include <set>
#include <vector>

using namespace heatsim;

TEST_CASE("streams are deterministic and independent") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        const double x = a.uniform();
        CHECK(x == b.uniform());
        CHECK(x > 0.0);
        CHECK(x < 1.0);
    }
    bool differs = false;
    for (int i = 0; i < 10; ++i) differs = differs || a.uniform() != c.uniform();
    CHECK(differs);

    Rng t1(7, "alpha"), t2(7, "beta"), t3(7, "alpha");
    CHECK(t1.uniform() == t3.uniform());
    CHECK(t1.uniform() != t2.uniform());

    Rng s1(7, std::uint64_t{1}), s2(7, std::uint64_t{2});
    CHECK(s1.uniform() != s2.uniform());
}

TEST_CASE("mix64 and hash_tag spread inputs") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(mix64(i));
    CHECK(seen.size() == 1000);
    CHECK(hash_tag("stage:fit-bsqr") != hash_tag("stage:fit-gev"));
    CHECK(hash_tag("") != 0);
}

TEST_CASE("normal moments") {
    Rng rng(5);
    double m = 0.0, v = 0.0;
    const int N = 200000;
    std::vector<double> xs(N);
    for (double& x : xs) {
        x = rng.normal();
        m += x;
    }
    m /= N;
    for (double x : xs) v += (x - m) * (x - m);
    v /= N - 1;
    CHECK(std::abs(m) < 0.01);
    CHECK(v == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("uniform_index stays in range and covers") {
    Rng rng(11);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 2000; ++i) {
        const std::uint64_t k = rng.uniform_index(7);
        CHECK(k < 7);
        seen.insert(k);
    }
    CHECK(seen.size() == 7);
}
