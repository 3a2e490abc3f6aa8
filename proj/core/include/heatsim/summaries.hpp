#pragma once
#include "heatsim/bsqr_model.hpp"
#include "heatsim/grid.hpp"

#include <cstdint>
#include <vector>

namespace heatsim {

// copula-scale field, same (s,d,t) layout as AnomalyField
struct UniformField {
    int n = 0, D = 0, T = 0;
    std::vector<double> values;

    std::size_t idx(int s, int d, int t) const {
        return (static_cast<std::size_t>(s) * D + d) * T + t;
    }
    double at(int s, int d, int t) const { return values[idx(s, d, t)]; }
    double& at(int s, int d, int t) { return values[idx(s, d, t)]; }
    void validate() const;
};

struct SummaryConfig {
    std::vector<double> thresholds{0.90, 0.95, 0.99};
    int max_lag = 10;            // temporal lags 0..max_lag
    double bin_km = 100.0;
    int L = 10;                  // distance bins [bin_km*(l-1), bin_km*l)
    double profile_u = 0.95;
    std::vector<double> alphas{0.1, 0.5, 0.9};
    double extent_km = 1000.0;   // madogram half-extent
    double eps = 1e-6;

    void validate() const;
    int mado_side() const { return 2 * static_cast<int>(extent_km / bin_km) + 1; }
};

// All tensors stored log(. + eps); masks are 1 where the entry had data.
// Skip counters record pairs or cells dropped for lack of exceedances.
struct SummaryBundle {
    std::vector<double> chi_grid;            // |thresholds| x L x (max_lag+1)
    std::vector<double> atdf;                // max_lag+1
    std::vector<double> quantile_profile;    // |alphas| x L
    std::vector<double> iqr_profile;         // L
    std::vector<double> madogram_map;        // side x side, row-major in y then x
    std::vector<std::uint8_t> chi_mask;
    std::vector<std::uint8_t> profile_mask;  // per bin, shared by both profiles
    std::vector<std::uint8_t> mado_mask;
    std::vector<std::uint8_t> atdf_mask;
    std::vector<int> chi_skipped;            // pairs dropped per chi entry
    std::vector<int> atdf_skipped;           // cells dropped per lag

    std::size_t flat_size() const;
    std::vector<double> flat() const;        // chi, atdf, quantiles, iqr, madogram
};

UniformField uniformize_with_bsqr(const AnomalyField& field, const BsqrModel& bsqr, int jobs = 1);

std::vector<double> chi_grid(const UniformField& U, const GridDomain& domain,
                             const SummaryConfig& cfg, std::vector<std::uint8_t>* mask = nullptr,
                             std::vector<int>* skipped = nullptr);
std::vector<double> atdf(const UniformField& U, const SummaryConfig& cfg,
                         std::vector<std::uint8_t>* mask = nullptr,
                         std::vector<int>* skipped = nullptr);
std::vector<double> extremogram_quantile_profile(const UniformField& U, const GridDomain& domain,
                                                 const SummaryConfig& cfg,
                                                 std::vector<std::uint8_t>* mask = nullptr);
std::vector<double> iqr_profile(const UniformField& U, const GridDomain& domain,
                                const SummaryConfig& cfg, std::vector<std::uint8_t>* mask = nullptr);
std::vector<double> madogram_map(const UniformField& U, const GridDomain& domain,
                                 const SummaryConfig& cfg, std::vector<std::uint8_t>* mask = nullptr);

// one pass over shared exceedance structures; identical entries to the
// individual functions above
SummaryBundle summarize(const UniformField& U, const GridDomain& domain,
                        const SummaryConfig& cfg = {});

} // namespace heatsim
