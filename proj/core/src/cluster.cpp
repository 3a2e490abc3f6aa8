#include "heatsim/cluster.hpp"
#include "heatsim/mathkit.hpp"
#include "heatsim/parallel.hpp"
#include "heatsim/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

namespace heatsim {

std::vector<double> rank_uniformize(const AnomalyField& field) {
    const std::size_t DT = static_cast<std::size_t>(field.D) * field.T;
    std::vector<double> U(field.values.size());
    for (int s = 0; s < field.n; ++s) {
        std::vector<double> x(field.values.begin() + field.idx(s, 0, 0),
                              field.values.begin() + field.idx(s, 0, 0) + DT);
        const auto r = average_ranks(x);
        for (std::size_t i = 0; i < DT; ++i)
            U[field.idx(s, 0, 0) + i] = r[i] / static_cast<double>(DT);
    }
    return U;
}

std::vector<double> chi_pairwise(const std::vector<double>& U, int n, int D, int T,
                                 double u, int jobs) {
    if (!(u > 0.0 && u < 1.0)) throw std::invalid_argument("chi_pairwise: u outside (0,1)");
    const std::size_t DT = static_cast<std::size_t>(D) * T;
    if (U.size() != DT * n) throw std::invalid_argument("chi_pairwise: shape mismatch");
    const std::size_t words = (DT + 63) / 64;
    std::vector<std::uint64_t> bits(static_cast<std::size_t>(n) * words, 0);
    std::size_t total = 0;
    for (int s = 0; s < n; ++s)
        for (std::size_t i = 0; i < DT; ++i)
            if (U[static_cast<std::size_t>(s) * DT + i] > u) {
                bits[static_cast<std::size_t>(s) * words + i / 64] |= 1ull << (i % 64);
                ++total;
            }
    if (total == 0) throw std::invalid_argument("chi_pairwise: no exceedances above u");

    std::vector<double> chi(static_cast<std::size_t>(n) * n, 0.0);
    const double denom = static_cast<double>(DT) * (1.0 - u);
    parallel_for(static_cast<std::size_t>(n), jobs, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            chi[i * n + i] = 1.0;
            for (std::size_t k = i + 1; k < static_cast<std::size_t>(n); ++k) {
                std::size_t joint = 0;
                const std::uint64_t* bi = bits.data() + i * words;
                const std::uint64_t* bk = bits.data() + k * words;
                for (std::size_t w = 0; w < words; ++w) joint += std::popcount(bi[w] & bk[w]);
                chi[i * n + k] = chi[k * n + i] = static_cast<double>(joint) / denom;
            }
        }
    });
    return chi;
}

DissimilarityMatrix dissimilarity(const std::vector<double>& chi, int n, double u) {
    DissimilarityMatrix M;
    M.n = n;
    M.u = u;
    M.d.resize(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) {
            if (i == k) { M.d[static_cast<std::size_t>(i) * n + k] = 0.0; continue; }
            const double c = std::clamp(chi[static_cast<std::size_t>(i) * n + k], 0.0, 1.0);
            M.d[static_cast<std::size_t>(i) * n + k] = (1.0 - c) / (2.0 * (3.0 - c));
        }
    return M;
}

double pam_objective(const DissimilarityMatrix& D, const std::vector<int>& medoids) {
    double tot = 0.0;
    for (int i = 0; i < D.n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (int m : medoids) best = std::min(best, D.at(i, m));
        tot += best;
    }
    return tot;
}

double mean_silhouette(const DissimilarityMatrix& D, const std::vector<int>& labels, int k) {
    const int n = D.n;
    std::vector<int> count(k, 0);
    for (int l : labels) ++count[l];
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        if (count[labels[i]] <= 1) continue;           // silhouette 0 for singletons
        std::vector<double> tot(k, 0.0);
        for (int j = 0; j < n; ++j)
            if (j != i) tot[labels[j]] += D.at(i, j);
        const double a = tot[labels[i]] / (count[labels[i]] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c)
            if (c != labels[i] && count[c] > 0) b = std::min(b, tot[c] / count[c]);
        if (std::isfinite(b) && std::max(a, b) > 0.0) sum += (b - a) / std::max(a, b);
    }
    return sum / n;
}

namespace {

std::vector<int> assign_labels(const DissimilarityMatrix& D, const std::vector<int>& medoids) {
    std::vector<int> labels(D.n, 0);
    for (int i = 0; i < D.n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < medoids.size(); ++c)
            if (D.at(i, medoids[c]) < best) {
                best = D.at(i, medoids[c]);
                labels[i] = static_cast<int>(c);
            }
    }
    return labels;
}

std::vector<int> pam_build(const DissimilarityMatrix& D, int k) {
    const int n = D.n;
    std::vector<int> med;
    // first medoid minimizes the total dissimilarity
    double best = std::numeric_limits<double>::infinity();
    int bi = 0;
    for (int i = 0; i < n; ++i) {
        double tot = 0.0;
        for (int j = 0; j < n; ++j) tot += D.at(i, j);
        if (tot < best) { best = tot; bi = i; }
    }
    med.push_back(bi);
    std::vector<double> nearest(n);
    for (int i = 0; i < n; ++i) nearest[i] = D.at(i, bi);
    while (static_cast<int>(med.size()) < k) {
        double bestgain = -1.0;
        int pick = -1;
        for (int c = 0; c < n; ++c) {
            if (std::find(med.begin(), med.end(), c) != med.end()) continue;
            double gain = 0.0;
            for (int j = 0; j < n; ++j) gain += std::max(0.0, nearest[j] - D.at(j, c));
            if (gain > bestgain) { bestgain = gain; pick = c; }
        }
        med.push_back(pick);
        for (int j = 0; j < n; ++j) nearest[j] = std::min(nearest[j], D.at(j, pick));
    }
    return med;
}

// one swap pass to a local optimum; dysma/dysmb hold nearest and second
// nearest medoid distances per cell
bool pam_swap(const DissimilarityMatrix& D, std::vector<int>& med) {
    const int n = D.n;
    const int k = static_cast<int>(med.size());
    bool changed = false;
    for (int iter = 0; iter < 200; ++iter) {
        std::vector<double> dysma(n, std::numeric_limits<double>::infinity());
        std::vector<double> dysmb(n, std::numeric_limits<double>::infinity());
        std::vector<int> which(n, -1);
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < k; ++c) {
                const double d = D.at(i, med[c]);
                if (d < dysma[i]) {
                    dysmb[i] = dysma[i];
                    dysma[i] = d;
                    which[i] = c;
                } else if (d < dysmb[i]) {
                    dysmb[i] = d;
                }
            }
        double bestdelta = -1e-12;
        int bm = -1, bh = -1;
        for (int c = 0; c < k; ++c)
            for (int h = 0; h < n; ++h) {
                if (std::find(med.begin(), med.end(), h) != med.end()) continue;
                double delta = 0.0;
                for (int i = 0; i < n; ++i) {
                    const double dih = D.at(i, h);
                    const double cur = dysma[i];
                    const double nxt = which[i] == c ? std::min(dysmb[i], dih) : std::min(cur, dih);
                    delta += nxt - cur;
                }
                if (delta < bestdelta) { bestdelta = delta; bm = c; bh = h; }
            }
        if (bm < 0) break;
        med[bm] = bh;
        changed = true;
    }
    return changed;
}

} // namespace

Partition k_medoids(const DissimilarityMatrix& D, const std::vector<int>& k_range,
                    std::uint64_t seed, int restarts, int jobs) {
    (void)jobs;
    const int n = D.n;
    Partition best;
    best.silhouette = -std::numeric_limits<double>::infinity();
    for (int k : k_range) {
        if (k < 2 || k >= n) throw std::invalid_argument("k_medoids: need 2 <= k < n");
        std::vector<int> bestmed;
        double bestobj = std::numeric_limits<double>::infinity();
        for (int r = 0; r < std::max(restarts, 1); ++r) {
            std::vector<int> med;
            Rng rng(seed, static_cast<std::uint64_t>(k) * 1000 + r);
            int attempts = 0;
            while (true) {
                if (r == 0 && attempts == 0) {
                    med = pam_build(D, k);
                } else {
                    med.clear();
                    while (static_cast<int>(med.size()) < k) {
                        const int c = static_cast<int>(rng.uniform_index(n));
                        if (std::find(med.begin(), med.end(), c) == med.end()) med.push_back(c);
                    }
                }
                pam_swap(D, med);
                const auto labels = assign_labels(D, med);
                std::vector<int> cnt(k, 0);
                for (int l : labels) ++cnt[l];
                if (std::find(cnt.begin(), cnt.end(), 0) == cnt.end()) break;
                if (++attempts > 20) throw std::runtime_error("k_medoids: persistent empty cluster");
            }
            const double obj = pam_objective(D, med);
            if (obj < bestobj) { bestobj = obj; bestmed = med; }
        }
        std::sort(bestmed.begin(), bestmed.end());
        Partition part;
        part.k = k;
        part.medoids = bestmed;
        part.labels = assign_labels(D, bestmed);
        part.silhouette = mean_silhouette(D, part.labels, k);
        if (part.silhouette > best.silhouette) best = part;
    }
    return best;
}

} // namespace heatsim
