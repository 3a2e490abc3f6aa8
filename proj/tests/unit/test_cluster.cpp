#include "heatsim/cluster.hpp"
#include "heatsim/rng.hpp"

#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

using namespace heatsim;

namespace {

// chi matrix with high dependence inside blocks and low across
std::vector<double> planted_chi(int n, int split, double hi, double lo, double jitter,
                                std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> chi(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int k = i; k < n; ++k) {
            double v;
            if (i == k) {
                v = 1.0;
            } else {
                const bool same = (i < split) == (k < split);
                v = (same ? hi : lo) + jitter * (rng.uniform() - 0.5);
            }
            chi[static_cast<std::size_t>(i) * n + k] = v;
            chi[static_cast<std::size_t>(k) * n + i] = v;
        }
    return chi;
}

double brute_force_pam2(const DissimilarityMatrix& D, std::vector<int>* best_labels) {
    double best = 1e300;
    for (int a = 0; a < D.n; ++a)
        for (int b = a + 1; b < D.n; ++b) {
            double obj = 0.0;
            std::vector<int> lab(D.n);
            for (int i = 0; i < D.n; ++i) {
                const double da = D.at(i, a), db = D.at(i, b);
                lab[i] = da <= db ? 0 : 1;
                obj += std::min(da, db);
            }
            if (obj < best) {
                best = obj;
                *best_labels = lab;
            }
        }
    return best;
}

} // namespace

TEST_CASE("dissimilarity endpoints are exact") {
    const std::vector<double> chi = {1.0, 1.0, 0.0, 1.0, 1.0, 0.5, 0.0, 0.5, 1.0};
    const DissimilarityMatrix D = dissimilarity(chi, 3, 0.95);
    CHECK(D.at(0, 1) == 0.0);                         // chi = 1
    CHECK(D.at(0, 2) == doctest::Approx(1.0 / 6.0).epsilon(1e-15));  // chi = 0
    CHECK(D.at(1, 2) == doctest::Approx(0.1).epsilon(1e-12));        // chi = 0.5
    CHECK(D.at(0, 0) == 0.0);
    CHECK(D.at(2, 0) == D.at(0, 2));
    // clamping keeps the range even for out-of-range chi estimates
    const std::vector<double> wild = {1.0, 1.4, 1.0, 1.4, 1.0, -0.2, 1.0, -0.2, 1.0};
    const DissimilarityMatrix W = dissimilarity(wild, 3, 0.95);
    CHECK(W.at(0, 1) == 0.0);
    CHECK(W.at(1, 2) == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("rank uniformize and chi on a hand-built field") {
    AnomalyField f;
    f.n = 2;
    f.D = 3;
    f.T = 2;
    f.p = 1;
    f.covariates = {1.0, 1.0};
    // cell 1 is a monotone copy of cell 0, so they exceed together
    f.values = {1.0, 4.0, 2.0, 5.0, 3.0, 6.0,
                10.0, 40.0, 20.0, 50.0, 30.0, 60.0};
    const std::vector<double> U = rank_uniformize(f);
    REQUIRE(U.size() == 12);
    CHECK(U[0] == doctest::Approx(1.0 / 6.0));
    CHECK(U[5] == doctest::Approx(1.0));
    const std::vector<double> chi = chi_pairwise(U, 2, 3, 2, 0.5, 1);
    CHECK(chi[0] == 1.0);
    CHECK(chi[1] == doctest::Approx(chi[2]));
    // three of six values exceed u=0.5 in both cells jointly
    CHECK(chi[1] == doctest::Approx(3.0 / (6.0 * 0.5)));
}

TEST_CASE("planted two-block structure is recovered exactly") {
    const int n = 12, split = 5;
    const std::vector<double> chi = planted_chi(n, split, 0.75, 0.1, 0.08, 4);
    const DissimilarityMatrix D = dissimilarity(chi, n, 0.95);
    const Partition part = k_medoids(D, {2}, 17, 5, 1);
    REQUIRE(part.k == 2);

    std::vector<int> brute;
    const double best = brute_force_pam2(D, &brute);
    CHECK(pam_objective(D, part.medoids) == doctest::Approx(best).epsilon(1e-12));
    // same partition as the exhaustive optimum and as the planted blocks
    for (int i = 1; i < n; ++i) {
        CHECK((part.labels[i] == part.labels[0]) == (brute[i] == brute[0]));
        CHECK((part.labels[i] == part.labels[0]) == ((i < split) == (0 < split)));
    }
    CHECK(part.silhouette == doctest::Approx(mean_silhouette(D, part.labels, 2)));
    CHECK(part.silhouette > 0.5);
}

TEST_CASE("silhouette prefers the planted k") {
    const int n = 15;
    const std::vector<double> chi = planted_chi(n, 7, 0.8, 0.05, 0.05, 9);
    const DissimilarityMatrix D = dissimilarity(chi, n, 0.95);
    const Partition part = k_medoids(D, {2, 3, 4}, 3, 5, 1);
    CHECK(part.k == 2);
}
