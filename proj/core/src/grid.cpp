#include "heatsim/grid.hpp"
#include "heatsim/mathkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace heatsim {

std::string to_string(Scenario s) {
    return s == Scenario::factual ? "factual" : "counterfactual";
}

Scenario scenario_from_string(const std::string& s) {
    if (s == "factual") return Scenario::factual;
    if (s == "counterfactual") return Scenario::counterfactual;
    throw std::invalid_argument("unknown scenario: " + s);
}

double GridDomain::dist_km(int i, int k) const {
    const double dx = xkm[i] - xkm[k], dy = ykm[i] - ykm[k];
    return std::sqrt(dx * dx + dy * dy);
}

std::vector<std::uint8_t> GridDomain::adjacency_matrix() const {
    const int N = n();
    std::vector<std::uint8_t> A(static_cast<std::size_t>(N) * N, 0);
    for (int i = 0; i < N; ++i)
        for (int k : neighbors[i]) A[static_cast<std::size_t>(i) * N + k] = 1;
    return A;
}

namespace {

// snap coordinates to indices along sorted unique axis values
std::vector<int> axis_indices(const std::vector<double>& v, std::vector<double>& uniq) {
    uniq = v;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end(),
                           [](double a, double b) { return std::fabs(a - b) < 1e-9; }),
               uniq.end());
    std::vector<int> idx(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto it = std::lower_bound(uniq.begin(), uniq.end(), v[i] - 1e-9);
        idx[i] = static_cast<int>(it - uniq.begin());
    }
    return idx;
}

double modal_step(const std::vector<double>& uniq) {
    if (uniq.size() < 2) return 1.0;
    std::vector<double> steps;
    for (std::size_t i = 1; i < uniq.size(); ++i) steps.push_back(uniq[i] - uniq[i - 1]);
    std::sort(steps.begin(), steps.end());
    return steps[steps.size() / 2];
}

} // namespace

GridDomain project_to_km(const std::vector<double>& lon_deg,
                         const std::vector<double>& lat_deg,
                         const std::vector<double>& areas_km2) {
    const std::size_t n = lon_deg.size();
    if (n < 2 || lat_deg.size() != n)
        throw std::invalid_argument("project_to_km: need >= 2 cells with matching lon/lat");
    for (double la : lat_deg)
        if (!(la > -90.0 && la < 90.0)) throw std::invalid_argument("project_to_km: latitude out of range");
    {
        std::map<std::pair<double, double>, int> seen;
        for (std::size_t i = 0; i < n; ++i)
            if (++seen[{lon_deg[i], lat_deg[i]}] > 1)
                throw std::invalid_argument("project_to_km: duplicate cell coordinates");
    }

    GridDomain g;
    g.lon = lon_deg;
    g.lat = lat_deg;
    double lon0 = 0.0, lat0 = 0.0;
    for (std::size_t i = 0; i < n; ++i) { lon0 += lon_deg[i]; lat0 += lat_deg[i]; }
    lon0 /= static_cast<double>(n);
    lat0 /= static_cast<double>(n);
    const double rad = kPi / 180.0, clat = std::cos(lat0 * rad);
    g.xkm.resize(n);
    g.ykm.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        g.xkm[i] = kEarthRadiusKm * clat * (lon_deg[i] - lon0) * rad;
        g.ykm[i] = kEarthRadiusKm * (lat_deg[i] - lat0) * rad;
    }

    std::vector<double> ulon, ulat;
    const auto ix = axis_indices(lon_deg, ulon);
    const auto iy = axis_indices(lat_deg, ulat);

    if (areas_km2.empty()) {
        const double dlon = modal_step(ulon) * rad, dlat = modal_step(ulat) * rad;
        g.area_km2.resize(n);
        for (std::size_t i = 0; i < n; ++i)
            g.area_km2[i] = kEarthRadiusKm * kEarthRadiusKm * std::cos(lat_deg[i] * rad) * dlon * dlat;
    } else {
        if (areas_km2.size() != n) throw std::invalid_argument("project_to_km: area count mismatch");
        g.area_km2 = areas_km2;
    }

    g.neighbors.assign(n, {});
    std::map<std::pair<int, int>, int> bypos;
    for (std::size_t i = 0; i < n; ++i) bypos[{ix[i], iy[i]}] = static_cast<int>(i);
    for (std::size_t i = 0; i < n; ++i) {
        const int cand[4][2] = {{ix[i] - 1, iy[i]}, {ix[i] + 1, iy[i]}, {ix[i], iy[i] - 1}, {ix[i], iy[i] + 1}};
        for (const auto& c : cand) {
            const auto it = bypos.find({c[0], c[1]});
            if (it != bypos.end()) g.neighbors[i].push_back(it->second);
        }
        std::sort(g.neighbors[i].begin(), g.neighbors[i].end());
    }
    return g;
}

void AnomalyField::validate() const {
    if (n <= 0 || D < 3 || T <= 0) throw std::invalid_argument("AnomalyField: need n>0, D>=3, T>0");
    if (values.size() != static_cast<std::size_t>(n) * D * T)
        throw std::invalid_argument("AnomalyField: value count mismatch");
    if (p < 1 || covariates.size() != static_cast<std::size_t>(T) * p)
        throw std::invalid_argument("AnomalyField: covariate shape mismatch");
    for (double v : values)
        if (!std::isfinite(v)) throw std::invalid_argument("AnomalyField: non-finite value");
    for (int t = 0; t < T; ++t) {
        if (cov(t)[0] != 1.0) throw std::invalid_argument("AnomalyField: c_1(t) must be 1");
        for (int j = 1; j < p; ++j)
            if (cov(t)[j] < 0.0 || cov(t)[j] > 1.0)
                throw std::invalid_argument("AnomalyField: covariate outside [0,1]");
    }
}

AnomalyField compute_anomalies(const AnomalyField& raw, int baseline_years) {
    if (baseline_years <= 0 || baseline_years > raw.T)
        throw std::invalid_argument("compute_anomalies: baseline_years outside [1,T]");
    AnomalyField out = raw;
    for (int s = 0; s < raw.n; ++s)
        for (int d = 0; d < raw.D; ++d) {
            double m = 0.0;
            for (int t = 0; t < baseline_years; ++t) m += raw.at(s, d, t);
            m /= static_cast<double>(baseline_years);
            for (int t = 0; t < raw.T; ++t) out.at(s, d, t) = raw.at(s, d, t) - m;
        }
    return out;
}

ThresholdResult empirical_threshold(const AnomalyField& field, double prob) {
    if (!(prob > 0.0 && prob < 1.0)) throw std::invalid_argument("empirical_threshold: prob outside (0,1)");
    ThresholdResult r;
    if (field.scenario != Scenario::counterfactual)
        r.warnings.push_back("empirical_threshold: input scenario is not counterfactual");
    r.thresholds.resize(field.n);
    std::vector<double> buf(static_cast<std::size_t>(field.D) * field.T);
    for (int s = 0; s < field.n; ++s) {
        std::copy(field.values.begin() + field.idx(s, 0, 0),
                  field.values.begin() + field.idx(s, 0, 0) + buf.size(), buf.begin());
        std::sort(buf.begin(), buf.end());
        r.thresholds[s] = empirical_quantile_sorted(buf, prob);
    }
    return r;
}

std::vector<std::uint8_t> local_heatwave(const AnomalyField& field,
                                         const std::vector<double>& thresholds,
                                         int run_length) {
    if (run_length < 1 || field.D < run_length)
        throw std::invalid_argument("local_heatwave: need 1 <= run_length <= D");
    if (thresholds.size() != static_cast<std::size_t>(field.n))
        throw std::invalid_argument("local_heatwave: threshold count mismatch");
    std::vector<std::uint8_t> H(field.values.size(), 0);
    for (int s = 0; s < field.n; ++s)
        for (int t = 0; t < field.T; ++t) {
            int run = 0;
            for (int d = 0; d < field.D; ++d) {
                run = field.at(s, d, t) >= thresholds[s] ? run + 1 : 0;
                if (run >= run_length) H[field.idx(s, d, t)] = 1;
            }
        }
    return H;
}

std::vector<std::uint8_t> regional_heatwave(const std::vector<std::uint8_t>& H,
                                            int n, int D, int T,
                                            const std::vector<double>& areas,
                                            double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("regional_heatwave: alpha outside (0,1)");
    if (H.size() != static_cast<std::size_t>(n) * D * T || areas.size() != static_cast<std::size_t>(n))
        throw std::invalid_argument("regional_heatwave: shape mismatch");
    double total = 0.0;
    for (double a : areas) total += a;
    std::vector<std::uint8_t> HR(static_cast<std::size_t>(D) * T, 0);
    for (int d = 0; d < D; ++d)
        for (int t = 0; t < T; ++t) {
            double cov = 0.0;
            for (int s = 0; s < n; ++s)
                if (H[(static_cast<std::size_t>(s) * D + d) * T + t]) cov += areas[s];
            HR[static_cast<std::size_t>(d) * T + t] = cov >= alpha * total ? 1 : 0;
        }
    return HR;
}

std::vector<HeatwaveEpisode> extract_episodes(const std::vector<std::uint8_t>& HR,
                                              const AnomalyField& field) {
    if (HR.size() != static_cast<std::size_t>(field.D) * field.T)
        throw std::invalid_argument("extract_episodes: indicator shape mismatch");
    std::vector<HeatwaveEpisode> eps;
    for (int t = 0; t < field.T; ++t) {
        int d = 0;
        while (d < field.D) {
            if (!HR[static_cast<std::size_t>(d) * field.T + t]) { ++d; continue; }
            int start = d;
            while (d < field.D && HR[static_cast<std::size_t>(d) * field.T + t]) ++d;
            HeatwaveEpisode e;
            e.year = t;
            e.start_day = start;
            e.duration = d - start;
            e.intensity = -std::numeric_limits<double>::infinity();
            for (int dd = start; dd < d; ++dd)
                for (int s = 0; s < field.n; ++s)
                    e.intensity = std::max(e.intensity, field.at(s, dd, t));
            eps.push_back(e);
        }
    }
    return eps;
}

} // namespace heatsim
