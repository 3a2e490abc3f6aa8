#include "heatsim/attribution.hpp"
#include "heatsim/mathkit.hpp"
#include "heatsim/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace heatsim {

namespace {
constexpr double kXiZero = 1e-8;
const double kInf = std::numeric_limits<double>::infinity();
} // namespace

double ScenarioSpec::rescaled() const {
    if (!(g_max > g_min)) throw std::invalid_argument("scenario rescaling range is empty");
    return (gmst - g_min) / (g_max - g_min);
}

void ScenarioSpec::validate() const {
    const double gt = rescaled();
    if (!(gt >= 0.0 && gt <= 1.0))
        throw std::invalid_argument("rescaled GMST anomaly falls outside [0,1]");
}

std::vector<double> ScenarioSpec::covariate_row(int p) const {
    validate();
    if (p < 1) throw std::invalid_argument("covariate count must be positive");
    std::vector<double> c(p, 0.0);
    c[0] = 1.0;
    if (p > 1) c[1] = rescaled();
    return c;
}

double gpd_tail_scale(double mu, double sigma, double xi, double threshold) {
    return sigma + xi * (threshold - mu);
}

SeamParams seam_params(const BsqrModel& bulk, int s, const double* c, double threshold,
                       double mu, double sigma, double xi) {
    SeamParams sp;
    sp.threshold = threshold;
    sp.xi = xi;
    sp.tau = bulk.quantile_invert(threshold, c, s);
    sp.sigma_tilde = gpd_tail_scale(mu, sigma, xi, threshold);
    sp.ok = sp.sigma_tilde > 0.0;
    return sp;
}

double hybrid_value(double u, const SeamParams& sp, const BsqrModel& bulk, int s, const double* c) {
    const BsqrConfig& cfg = bulk.config();
    if (u < sp.tau) return bulk.quantile_eval(std::clamp(u, cfg.tau_min, cfg.tau_max), c, s);
    const double ratio = (1.0 - u) / (1.0 - sp.tau);
    if (std::abs(sp.xi) < kXiZero) return sp.threshold - sp.sigma_tilde * std::log(ratio);
    return sp.threshold + sp.sigma_tilde / sp.xi * (std::pow(ratio, -sp.xi) - 1.0);
}

BackTransformResult back_transform(const UniformField& U, const std::vector<double>& covariates,
                                   int p, const BsqrModel& bulk, const GevFieldModel& gev,
                                   const std::vector<double>& thresholds,
                                   const BackTransformOptions& opt) {
    U.validate();
    if (p != bulk.p() || p != gev.p())
        throw std::invalid_argument("covariate count disagrees with the fitted models");
    if (U.n != bulk.n() || U.n != gev.n() || static_cast<int>(thresholds.size()) != U.n)
        throw std::invalid_argument("cell count disagrees with the fitted models");
    if (covariates.size() != static_cast<std::size_t>(U.T) * p)
        throw std::invalid_argument("covariate rows do not match the year count");
    if (opt.gev_draw >= static_cast<int>(gev.draws().size()))
        throw std::out_of_range("GEV draw index out of range");

    BackTransformResult out;
    out.field.n = U.n;
    out.field.D = U.D;
    out.field.T = U.T;
    out.field.p = p;
    out.field.covariates = covariates;
    out.field.values.assign(static_cast<std::size_t>(U.n) * U.D * U.T, 0.0);
    out.year_ok.assign(U.T, 1);

    std::vector<long> rej(U.T, 0);
    std::vector<std::uint8_t> bad(U.T, 0);
    parallel_for(static_cast<std::size_t>(U.T), opt.jobs, [&](std::size_t t0, std::size_t t1) {
        for (std::size_t t = t0; t < t1; ++t) {
            const double* c = covariates.data() + t * p;
            for (int s = 0; s < U.n; ++s) {
                double mu, sg, xi;
                if (opt.gev_draw < 0) gev.mean_params_at(s, c, mu, sg, xi);
                else gev.params_at(gev.draws()[opt.gev_draw], s, c, mu, sg, xi);
                const SeamParams sp = seam_params(bulk, s, c, thresholds[s], mu, sg, xi);
                if (!sp.ok) ++rej[t];
                for (int d = 0; d < U.D; ++d) {
                    const double u = U.at(s, d, static_cast<int>(t));
                    if (!sp.ok && u >= sp.tau) {
                        bad[t] = 1;
                        out.field.at(s, d, static_cast<int>(t)) = sp.threshold;
                    } else {
                        out.field.at(s, d, static_cast<int>(t)) = hybrid_value(u, sp, bulk, s, c);
                    }
                }
            }
        }
    });
    for (int t = 0; t < U.T; ++t) {
        out.rejected += rej[t];
        if (bad[t]) out.year_ok[t] = 0;
    }
    return out;
}

BackTransformResult back_transform(const UniformField& U, const ScenarioSpec& scenario,
                                   const BsqrModel& bulk, const GevFieldModel& gev,
                                   const std::vector<double>& thresholds,
                                   const BackTransformOptions& opt) {
    const std::vector<double> row = scenario.covariate_row(bulk.p());
    std::vector<double> cov(static_cast<std::size_t>(U.T) * row.size());
    for (int t = 0; t < U.T; ++t)
        std::copy(row.begin(), row.end(), cov.begin() + static_cast<std::size_t>(t) * row.size());
    BackTransformResult out = back_transform(U, cov, bulk.p(), bulk, gev, thresholds, opt);
    out.field.scenario = scenario.scenario;
    return out;
}

std::vector<double> exceedance_shift_map(const BsqrModel& factual, const BsqrModel& counterfactual,
                                         const std::vector<double>& thresholds,
                                         const ScenarioSpec& scenario) {
    if (factual.n() != counterfactual.n() ||
        static_cast<int>(thresholds.size()) != factual.n())
        throw std::invalid_argument("cell count mismatch between the two fits");
    const std::vector<double> f_row = scenario.covariate_row(factual.p());
    std::vector<double> cf_row(counterfactual.p(), 0.0);
    cf_row[0] = 1.0;
    std::vector<double> out(factual.n());
    for (int s = 0; s < factual.n(); ++s) {
        const double pf = 1.0 - factual.quantile_invert(thresholds[s], f_row.data(), s);
        const double pc = 1.0 - counterfactual.quantile_invert(thresholds[s], cf_row.data(), s);
        out[s] = pf - pc;
    }
    return out;
}

ScenarioYears simulate_scenario_years(const DepParams& dep, const BsqrModel& bulk,
                                      const GevFieldModel& gev,
                                      const std::vector<double>& thresholds,
                                      const ScenarioSpec& scenario, const GridDomain& domain,
                                      int D, long J, std::uint64_t seed,
                                      const SimulateOptions& opt) {
    if (J < 1) throw std::invalid_argument("year count must be positive");
    if (D < opt.run_length) throw std::invalid_argument("season shorter than the heatwave window");
    const int n = domain.n();
    if (bulk.n() != n || gev.n() != n || static_cast<int>(thresholds.size()) != n)
        throw std::invalid_argument("cell count disagrees with the fitted models");
    if (bulk.p() != gev.p())
        throw std::invalid_argument("covariate count disagrees between the fitted models");
    const std::vector<double> c = scenario.covariate_row(bulk.p());

    // the covariate row is year-invariant, so the seam is too
    std::vector<SeamParams> seams(n);
    ScenarioYears out;
    out.J = J;
    for (int s = 0; s < n; ++s) {
        double mu, sg, xi;
        if (opt.gev_draw < 0) gev.mean_params_at(s, c.data(), mu, sg, xi);
        else gev.params_at(gev.draws().at(opt.gev_draw), s, c.data(), mu, sg, xi);
        seams[s] = seam_params(bulk, s, c.data(), thresholds[s], mu, sg, xi);
        if (!seams[s].ok) ++out.rejected_cells;
    }

    const YearSimulator sim(domain, D, dep);
    std::vector<double> dur(J, 0.0), inten(J, -kInf);
    std::vector<std::uint8_t> ok(J, 1);
    parallel_for(static_cast<std::size_t>(J), opt.jobs, [&](std::size_t j0, std::size_t j1) {
        AnomalyField f;
        f.n = n;
        f.D = D;
        f.T = 1;
        f.p = bulk.p();
        f.covariates = c;
        f.scenario = scenario.scenario;
        f.values.assign(static_cast<std::size_t>(n) * D, 0.0);
        for (std::size_t j = j0; j < j1; ++j) {
            const std::vector<double> u = sim.uniform_year(seed, j);
            bool bad = false;
            for (int s = 0; s < n && !bad; ++s) {
                const SeamParams& sp = seams[s];
                for (int d = 0; d < D; ++d) {
                    const double uv = u[static_cast<std::size_t>(s) * D + d];
                    if (!sp.ok && uv >= sp.tau) {
                        bad = true;
                        break;
                    }
                    f.at(s, d, 0) = hybrid_value(uv, sp, bulk, s, c.data());
                }
            }
            if (bad) {
                ok[j] = 0;
                continue;
            }
            const auto H = local_heatwave(f, thresholds, opt.run_length);
            const auto HR = regional_heatwave(H, n, D, 1, domain.area_km2, opt.alpha);
            for (const HeatwaveEpisode& e : extract_episodes(HR, f)) {
                dur[j] = std::max(dur[j], static_cast<double>(e.duration));
                inten[j] = std::max(inten[j], e.intensity);
            }
        }
    });
    out.duration.reserve(J);
    out.intensity.reserve(J);
    for (long j = 0; j < J; ++j) {
        if (!ok[j]) {
            ++out.failed_years;
            continue;
        }
        out.duration.push_back(dur[j]);
        out.intensity.push_back(inten[j]);
    }
    out.J_effective = static_cast<long>(out.duration.size());
    return out;
}

ReturnPeriodPoint return_period(const std::vector<double>& properties, double level) {
    if (properties.empty()) throw std::invalid_argument("no simulated years");
    ReturnPeriodPoint pt;
    pt.level = level;
    pt.J = static_cast<long>(properties.size());
    for (double v : properties)
        if (v > level) ++pt.exceed;
    if (pt.exceed == 0) {
        pt.estimate = kInf;
        pt.band_lo = static_cast<double>(pt.J);
        pt.band_hi = kInf;
        return pt;
    }
    pt.estimate = static_cast<double>(pt.J) / pt.exceed;
    const double rel = 1.0 / std::sqrt(static_cast<double>(pt.exceed));
    pt.band_lo = pt.estimate * (1.0 - rel);
    pt.band_hi = pt.estimate * (1.0 + rel);
    return pt;
}

BandResult uncertainty_bands(const std::vector<std::vector<double>>& replicates,
                             const std::vector<double>& levels, double alpha) {
    if (replicates.empty()) throw std::invalid_argument("no replicates");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha outside (0,1)");
    double floor_j = kInf;
    for (const auto& r : replicates) {
        if (r.empty()) throw std::invalid_argument("empty replicate");
        floor_j = std::min(floor_j, static_cast<double>(r.size()));
    }
    BandResult out;
    out.lo.reserve(levels.size());
    out.hi.reserve(levels.size());
    std::vector<double> that(replicates.size());
    for (double z : levels) {
        for (std::size_t b = 0; b < replicates.size(); ++b)
            that[b] = return_period(replicates[b], z).estimate;
        std::sort(that.begin(), that.end());
        double lo = empirical_quantile_sorted(that, alpha / 2.0);
        const double hi = empirical_quantile_sorted(that, 1.0 - alpha / 2.0);
        if (!std::isfinite(lo)) lo = floor_j;
        out.lo.push_back(lo);
        out.hi.push_back(hi);
    }
    return out;
}

ReturnPeriodCurve make_return_period_curve(std::string property, Scenario scenario,
                                           const std::vector<double>& properties,
                                           const std::vector<double>& levels,
                                           const std::vector<std::vector<double>>& replicates,
                                           double alpha) {
    ReturnPeriodCurve cur;
    cur.property = std::move(property);
    cur.scenario = scenario;
    cur.levels = levels;
    cur.J = static_cast<long>(properties.size());
    cur.B = static_cast<int>(replicates.size());
    cur.estimate.reserve(levels.size());
    cur.mc_lo.reserve(levels.size());
    cur.mc_hi.reserve(levels.size());
    for (double z : levels) {
        const ReturnPeriodPoint pt = return_period(properties, z);
        cur.estimate.push_back(pt.estimate);
        cur.mc_lo.push_back(pt.band_lo);
        cur.mc_hi.push_back(pt.band_hi);
    }
    if (!replicates.empty()) {
        const BandResult b = uncertainty_bands(replicates, levels, alpha);
        cur.lo = b.lo;
        cur.hi = b.hi;
    }
    return cur;
}

} // namespace heatsim
