#pragma once
#include "heatsim/grid.hpp"

#include <cstdint>
#include <vector>

namespace heatsim {

// per-cell rank pseudo-observations in (0,1]: rank / (D*T), ties averaged
std::vector<double> rank_uniformize(const AnomalyField& field);

// chi_hat(i,k) = (1/(DT(1-u))) sum 1{U_i > u, U_k > u}; diagonal forced to 1
std::vector<double> chi_pairwise(const std::vector<double>& U, int n, int D, int T,
                                 double u, int jobs = 1);

struct DissimilarityMatrix {
    int n = 0;
    double u = 0.0;
    std::vector<double> d;               // n*n row-major, symmetric, zero diagonal
    double at(int i, int k) const { return d[static_cast<std::size_t>(i) * n + k]; }
};

// d = (1 - chi) / (2 (3 - chi)) after clamping chi to [0,1]; range [0, 1/6]
DissimilarityMatrix dissimilarity(const std::vector<double>& chi, int n, double u);

struct Partition {
    std::vector<int> labels;             // cluster id per cell, ids index into medoids
    std::vector<int> medoids;            // cell indices
    double silhouette = 0.0;
    int k = 0;
};

// PAM (build + swap) per k over k_range with restarts; the k with the best
// mean silhouette wins. Deterministic under seed.
Partition k_medoids(const DissimilarityMatrix& D, const std::vector<int>& k_range,
                    std::uint64_t seed, int restarts = 5, int jobs = 1);

// silhouette of an assignment under dissimilarity D (self-pairs excluded)
double mean_silhouette(const DissimilarityMatrix& D, const std::vector<int>& labels, int k);

// PAM objective: sum over cells of dissimilarity to the assigned medoid
double pam_objective(const DissimilarityMatrix& D, const std::vector<int>& medoids);

} // namespace heatsim
