#pragma once
#include <cstdint>
#include <string>
#include <vector>

namespace heatsim {

enum class Scenario { factual, counterfactual };

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);

struct GridDomain {
    std::vector<double> lon, lat;        // degrees
    std::vector<double> area_km2;
    std::vector<double> xkm, ykm;        // tangent-plane projection about the centroid
    std::vector<std::vector<int>> neighbors;   // rook adjacency, symmetric

    int n() const { return static_cast<int>(lon.size()); }
    double dist_km(int i, int k) const;
    std::vector<std::uint8_t> adjacency_matrix() const;   // n*n row-major 0/1
};

// Equirectangular projection about the domain centroid; rook adjacency and,
// if areas are not supplied, cos(lat)-weighted cell areas from the grid steps.
GridDomain project_to_km(const std::vector<double>& lon_deg,
                         const std::vector<double>& lat_deg,
                         const std::vector<double>& areas_km2 = {});

struct AnomalyField {
    int n = 0, D = 0, T = 0, p = 0;
    Scenario scenario = Scenario::counterfactual;
    std::vector<double> values;          // (s,d,t) row-major, t fastest
    std::vector<double> covariates;      // T rows of p entries, c[0] = 1
    std::vector<std::string> provenance;

    std::size_t idx(int s, int d, int t) const {
        return (static_cast<std::size_t>(s) * D + d) * T + t;
    }
    double at(int s, int d, int t) const { return values[idx(s, d, t)]; }
    double& at(int s, int d, int t) { return values[idx(s, d, t)]; }
    const double* cov(int t) const { return covariates.data() + static_cast<std::size_t>(t) * p; }
    void validate() const;               // finite values, D >= 3, covariates in range
};

struct HeatwaveEpisode {
    int year = 0;         // 0-based year index
    int start_day = 0;    // 0-based day index
    int duration = 0;
    double intensity = 0.0;
};

// X(s,d,t) = Y(s,d,t) - mean over the first N years of Y(s,d,.)
AnomalyField compute_anomalies(const AnomalyField& raw, int baseline_years);

struct ThresholdResult {
    std::vector<double> thresholds;      // per cell
    std::vector<std::string> warnings;
};
// inf{x : empirical fraction <= x is >= prob}, pooled over the DT values per cell
ThresholdResult empirical_threshold(const AnomalyField& field, double prob = 0.95);

// H(s,d,t) = 1 iff the anomaly meets the threshold on run_length consecutive days ending at d
std::vector<std::uint8_t> local_heatwave(const AnomalyField& field,
                                         const std::vector<double>& thresholds,
                                         int run_length = 3);

// H_R(d,t) = 1 iff the area-weighted fraction of cells with H=1 reaches alpha
std::vector<std::uint8_t> regional_heatwave(const std::vector<std::uint8_t>& H,
                                            int n, int D, int T,
                                            const std::vector<double>& areas,
                                            double alpha = 0.6);

// maximal runs of H_R = 1 within each year
std::vector<HeatwaveEpisode> extract_episodes(const std::vector<std::uint8_t>& HR,
                                              const AnomalyField& field);

} // namespace heatsim
