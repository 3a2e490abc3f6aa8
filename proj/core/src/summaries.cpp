#include "heatsim/summaries.hpp"

#include "heatsim/mathkit.hpp"
#include "heatsim/parallel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

namespace heatsim {

namespace {

// Exceedance indicators packed per cell, bit index t*D + d. Lag shifts stay
// inside a year because the validity mask drops the last h days of each year.
struct ExceedPack {
    int n = 0, D = 0, T = 0, words = 0;
    std::vector<std::uint64_t> bits; // n x words

    const std::uint64_t* cell(int s) const { return bits.data() + static_cast<std::size_t>(s) * words; }
};

ExceedPack pack_exceed(const UniformField& U, double u, bool strict) {
    ExceedPack p;
    p.n = U.n;
    p.D = U.D;
    p.T = U.T;
    p.words = (U.T * U.D + 63) / 64;
    p.bits.assign(static_cast<std::size_t>(p.n) * p.words, 0);
    for (int s = 0; s < U.n; ++s) {
        std::uint64_t* w = p.bits.data() + static_cast<std::size_t>(s) * p.words;
        for (int t = 0; t < U.T; ++t)
            for (int d = 0; d < U.D; ++d) {
                const double v = U.at(s, d, t);
                if (strict ? (v > u) : (v >= u)) {
                    const int b = t * U.D + d;
                    w[b >> 6] |= std::uint64_t{1} << (b & 63);
                }
            }
    }
    return p;
}

std::vector<std::uint64_t> lag_mask(int D, int T, int h, int words) {
    std::vector<std::uint64_t> m(words, 0);
    for (int t = 0; t < T; ++t)
        for (int d = 0; d + h < D; ++d) {
            const int b = t * D + d;
            m[b >> 6] |= std::uint64_t{1} << (b & 63);
        }
    return m;
}

// popcount of a & (b >> h) & mask
int joint_count(const std::uint64_t* a, const std::uint64_t* b, const std::uint64_t* mask,
                int words, int h) {
    const int wshift = h >> 6, bshift = h & 63;
    int c = 0;
    for (int w = 0; w < words; ++w) {
        std::uint64_t bw = 0;
        if (w + wshift < words) {
            bw = b[w + wshift] >> bshift;
            if (bshift != 0 && w + wshift + 1 < words) bw |= b[w + wshift + 1] << (64 - bshift);
        }
        c += std::popcount(a[w] & bw & mask[w]);
    }
    return c;
}

int masked_count(const std::uint64_t* a, const std::uint64_t* mask, int words) {
    int c = 0;
    for (int w = 0; w < words; ++w) c += std::popcount(a[w] & mask[w]);
    return c;
}

double safe_log(double v, double eps) { return std::log(v + eps); }

struct PairGeometry {
    int L = 0, side = 0;
    std::vector<int> dist_bin; // n*n ordered pairs, -1 outside range or i==k
    std::vector<int> mado_bin; // n*n, index into side*side or -1
};

PairGeometry pair_geometry(const GridDomain& domain, const SummaryConfig& cfg) {
    const int n = domain.n();
    PairGeometry g;
    g.L = cfg.L;
    g.side = cfg.mado_side();
    const int half = g.side / 2;
    g.dist_bin.assign(static_cast<std::size_t>(n) * n, -1);
    g.mado_bin.assign(static_cast<std::size_t>(n) * n, -1);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) {
            if (i == k) continue;
            const std::size_t e = static_cast<std::size_t>(i) * n + k;
            const int l = static_cast<int>(std::floor(domain.dist_km(i, k) / cfg.bin_km));
            if (l < cfg.L) g.dist_bin[e] = l;
            const double dx = domain.xkm[k] - domain.xkm[i];
            const double dy = domain.ykm[k] - domain.ykm[i];
            const int ax = static_cast<int>(std::lround(dx / cfg.bin_km));
            const int ay = static_cast<int>(std::lround(dy / cfg.bin_km));
            if (std::abs(ax) <= half && std::abs(ay) <= half)
                g.mado_bin[e] = (ay + half) * g.side + (ax + half);
        }
    return g;
}

} // namespace

void UniformField::validate() const {
    if (n <= 0 || D <= 0 || T <= 0) throw std::invalid_argument("UniformField: empty dims");
    if (values.size() != static_cast<std::size_t>(n) * D * T)
        throw std::invalid_argument("UniformField: value count mismatch");
    for (double v : values)
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("UniformField: value outside [0,1]");
}

void SummaryConfig::validate() const {
    if (thresholds.empty() || alphas.empty()) throw std::invalid_argument("SummaryConfig: empty levels");
    for (double u : thresholds)
        if (!(u > 0.0 && u < 1.0)) throw std::invalid_argument("SummaryConfig: threshold outside (0,1)");
    if (max_lag < 0 || L <= 0 || !(bin_km > 0.0) || !(extent_km > 0.0) || !(eps > 0.0))
        throw std::invalid_argument("SummaryConfig: bad geometry");
    if (!(profile_u > 0.0 && profile_u < 1.0)) throw std::invalid_argument("SummaryConfig: bad profile_u");
}

std::size_t SummaryBundle::flat_size() const {
    return chi_grid.size() + atdf.size() + quantile_profile.size() + iqr_profile.size() +
           madogram_map.size();
}

std::vector<double> SummaryBundle::flat() const {
    std::vector<double> out;
    out.reserve(flat_size());
    out.insert(out.end(), chi_grid.begin(), chi_grid.end());
    out.insert(out.end(), atdf.begin(), atdf.end());
    out.insert(out.end(), quantile_profile.begin(), quantile_profile.end());
    out.insert(out.end(), iqr_profile.begin(), iqr_profile.end());
    out.insert(out.end(), madogram_map.begin(), madogram_map.end());
    return out;
}

UniformField uniformize_with_bsqr(const AnomalyField& field, const BsqrModel& bsqr, int jobs) {
    field.validate();
    if (field.n != bsqr.n() || field.p != bsqr.p())
        throw std::invalid_argument("uniformize_with_bsqr: field/model shape mismatch");
    UniformField U;
    U.n = field.n;
    U.D = field.D;
    U.T = field.T;
    U.values.resize(field.values.size());
    parallel_for(field.n, jobs, [&](int s0, int s1) {
        for (int s = s0; s < s1; ++s)
            for (int t = 0; t < field.T; ++t) {
                const double* c = field.cov(t);
                for (int d = 0; d < field.D; ++d)
                    U.at(s, d, t) = bsqr.quantile_invert(field.at(s, d, t), c, s);
            }
    });
    return U;
}

std::vector<double> chi_grid(const UniformField& U, const GridDomain& domain,
                             const SummaryConfig& cfg, std::vector<std::uint8_t>* mask,
                             std::vector<int>* skipped) {
    U.validate();
    cfg.validate();
    if (domain.n() != U.n) throw std::invalid_argument("chi_grid: domain/field mismatch");
    const int n = U.n, H = cfg.max_lag + 1;
    const PairGeometry geo = pair_geometry(domain, cfg);
    const std::size_t cells = cfg.thresholds.size() * static_cast<std::size_t>(cfg.L) * H;
    std::vector<double> sum(cells, 0.0);
    std::vector<int> cnt(cells, 0), skip(cells, 0);
    for (std::size_t ui = 0; ui < cfg.thresholds.size(); ++ui) {
        const ExceedPack pk = pack_exceed(U, cfg.thresholds[ui], true);
        for (int h = 0; h < H; ++h) {
            const auto m = lag_mask(U.D, U.T, h, pk.words);
            std::vector<int> den(n);
            for (int i = 0; i < n; ++i) den[i] = masked_count(pk.cell(i), m.data(), pk.words);
            for (int i = 0; i < n; ++i)
                for (int k = 0; k < n; ++k) {
                    const int l = geo.dist_bin[static_cast<std::size_t>(i) * n + k];
                    if (l < 0) continue;
                    const std::size_t e = (ui * cfg.L + l) * H + h;
                    if (den[i] == 0) {
                        ++skip[e];
                        continue;
                    }
                    sum[e] += static_cast<double>(joint_count(pk.cell(i), pk.cell(k), m.data(),
                                                              pk.words, h)) /
                              den[i];
                    ++cnt[e];
                }
        }
    }
    std::vector<double> out(cells);
    if (mask) mask->assign(cells, 0);
    for (std::size_t e = 0; e < cells; ++e) {
        if (cnt[e] > 0) {
            out[e] = safe_log(sum[e] / cnt[e], cfg.eps);
            if (mask) (*mask)[e] = 1;
        } else {
            out[e] = safe_log(0.0, cfg.eps);
        }
    }
    if (skipped) *skipped = std::move(skip);
    return out;
}

std::vector<double> atdf(const UniformField& U, const SummaryConfig& cfg,
                         std::vector<std::uint8_t>* mask, std::vector<int>* skipped) {
    U.validate();
    cfg.validate();
    const int H = cfg.max_lag + 1;
    const ExceedPack pk = pack_exceed(U, cfg.profile_u, true);
    std::vector<double> out(H);
    if (mask) mask->assign(H, 0);
    std::vector<int> skip(H, 0);
    for (int h = 0; h < H; ++h) {
        const auto m = lag_mask(U.D, U.T, h, pk.words);
        double sum = 0.0;
        int cnt = 0;
        for (int s = 0; s < U.n; ++s) {
            const int den = masked_count(pk.cell(s), m.data(), pk.words);
            if (den == 0) {
                ++skip[h];
                continue;
            }
            sum += static_cast<double>(joint_count(pk.cell(s), pk.cell(s), m.data(), pk.words, h)) /
                   den;
            ++cnt;
        }
        if (cnt > 0) {
            out[h] = safe_log(sum / cnt, cfg.eps);
            if (mask) (*mask)[h] = 1;
        } else {
            out[h] = safe_log(0.0, cfg.eps);
        }
    }
    if (skipped) *skipped = std::move(skip);
    return out;
}

namespace {

// per-bin populations of pairwise lag-0 chi at cfg.profile_u
std::vector<std::vector<double>> lag0_chi_populations(const UniformField& U,
                                                      const GridDomain& domain,
                                                      const SummaryConfig& cfg) {
    const int n = U.n;
    const PairGeometry geo = pair_geometry(domain, cfg);
    const ExceedPack pk = pack_exceed(U, cfg.profile_u, true);
    const auto m = lag_mask(U.D, U.T, 0, pk.words);
    std::vector<int> den(n);
    for (int i = 0; i < n; ++i) den[i] = masked_count(pk.cell(i), m.data(), pk.words);
    std::vector<std::vector<double>> pop(cfg.L);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) {
            const int l = geo.dist_bin[static_cast<std::size_t>(i) * n + k];
            if (l < 0 || den[i] == 0) continue;
            pop[l].push_back(
                static_cast<double>(joint_count(pk.cell(i), pk.cell(k), m.data(), pk.words, 0)) /
                den[i]);
        }
    for (auto& v : pop) std::sort(v.begin(), v.end());
    return pop;
}

} // namespace

std::vector<double> extremogram_quantile_profile(const UniformField& U, const GridDomain& domain,
                                                 const SummaryConfig& cfg,
                                                 std::vector<std::uint8_t>* mask) {
    U.validate();
    cfg.validate();
    if (domain.n() != U.n) throw std::invalid_argument("quantile_profile: domain/field mismatch");
    const auto pop = lag0_chi_populations(U, domain, cfg);
    std::vector<double> out(cfg.alphas.size() * cfg.L);
    if (mask) mask->assign(cfg.L, 0);
    for (std::size_t a = 0; a < cfg.alphas.size(); ++a)
        for (int l = 0; l < cfg.L; ++l) {
            const std::size_t e = a * cfg.L + l;
            if (pop[l].empty()) {
                out[e] = safe_log(0.0, cfg.eps);
            } else {
                out[e] = safe_log(empirical_quantile_sorted(pop[l], cfg.alphas[a]), cfg.eps);
                if (mask) (*mask)[l] = 1;
            }
        }
    return out;
}

std::vector<double> iqr_profile(const UniformField& U, const GridDomain& domain,
                                const SummaryConfig& cfg, std::vector<std::uint8_t>* mask) {
    U.validate();
    cfg.validate();
    if (domain.n() != U.n) throw std::invalid_argument("iqr_profile: domain/field mismatch");
    const auto pop = lag0_chi_populations(U, domain, cfg);
    std::vector<double> out(cfg.L);
    if (mask) mask->assign(cfg.L, 0);
    for (int l = 0; l < cfg.L; ++l) {
        if (pop[l].empty()) {
            out[l] = safe_log(0.0, cfg.eps);
        } else {
            const double iqr = empirical_quantile_sorted(pop[l], 0.75) -
                               empirical_quantile_sorted(pop[l], 0.25);
            out[l] = safe_log(iqr, cfg.eps);
            if (mask) (*mask)[l] = 1;
        }
    }
    return out;
}

std::vector<double> madogram_map(const UniformField& U, const GridDomain& domain,
                                 const SummaryConfig& cfg, std::vector<std::uint8_t>* mask) {
    U.validate();
    cfg.validate();
    if (domain.n() != U.n) throw std::invalid_argument("madogram_map: domain/field mismatch");
    const int n = U.n, side = cfg.mado_side();
    const std::size_t cells = static_cast<std::size_t>(side) * side;
    const PairGeometry geo = pair_geometry(domain, cfg);
    std::vector<double> acc(cells, 0.0);
    std::vector<long> days(cells, 0);
    std::vector<double> day_sum(cells, 0.0);
    std::vector<int> day_cnt(cells, 0);
    std::vector<std::size_t> touched;
    std::vector<int> exceed;
    exceed.reserve(n);
    for (int t = 0; t < U.T; ++t)
        for (int d = 0; d < U.D; ++d) {
            exceed.clear();
            for (int s = 0; s < n; ++s)
                if (U.at(s, d, t) >= cfg.profile_u) exceed.push_back(s);
            if (exceed.size() < 2) continue;
            touched.clear();
            for (int i : exceed)
                for (int k : exceed) {
                    if (i == k) continue;
                    const int b = geo.mado_bin[static_cast<std::size_t>(i) * n + k];
                    if (b < 0) continue;
                    if (day_cnt[b] == 0) touched.push_back(b);
                    day_sum[b] += std::abs(U.at(k, d, t) - U.at(i, d, t));
                    ++day_cnt[b];
                }
            for (std::size_t b : touched) {
                acc[b] += day_sum[b] / (2.0 * day_cnt[b]);
                ++days[b];
                day_sum[b] = 0.0;
                day_cnt[b] = 0;
            }
        }
    std::vector<double> out(cells);
    if (mask) mask->assign(cells, 0);
    for (std::size_t b = 0; b < cells; ++b) {
        if (days[b] > 0) {
            out[b] = safe_log(acc[b] / days[b], cfg.eps);
            if (mask) (*mask)[b] = 1;
        } else {
            out[b] = safe_log(0.0, cfg.eps);
        }
    }
    return out;
}

SummaryBundle summarize(const UniformField& U, const GridDomain& domain, const SummaryConfig& cfg) {
    SummaryBundle b;
    b.chi_grid = chi_grid(U, domain, cfg, &b.chi_mask, &b.chi_skipped);
    b.atdf = atdf(U, cfg, &b.atdf_mask, &b.atdf_skipped);
    b.quantile_profile = extremogram_quantile_profile(U, domain, cfg, &b.profile_mask);
    b.iqr_profile = iqr_profile(U, domain, cfg, nullptr);
    b.madogram_map = madogram_map(U, domain, cfg, &b.mado_mask);
    return b;
}

} // namespace heatsim
