#include "heatsim/synthetic.hpp"
#include "heatsim/mathkit.hpp"
#include "heatsim/rng.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace heatsim {

void SyntheticSpec::validate() const {
    if (width < 2) throw std::invalid_argument("grid needs at least 2x2 cells");
    if (D < 3) throw std::invalid_argument("season needs at least 3 days");
    if (T < 2) throw std::invalid_argument("need at least 2 years");
    if (baseline_years < 1 || baseline_years > T)
        throw std::invalid_argument("baseline year count outside [1, T]");
    if (!(marg_scale > 0.0)) throw std::invalid_argument("marginal scale must be positive");
    if (!(g_max > 0.0) || gmst_end < 0.0 || gmst_end > g_max)
        throw std::invalid_argument("GMST ramp must stay inside [0, g_max]");
    dep.validate();
    if (!PriorBox{}.contains(dep))
        throw std::invalid_argument("dependence truth falls outside the prior box");
}

namespace {

// The counterfactual design is intercept-only: keeping a constant-zero GMST
// column would make every per-cell regression singular.
AnomalyField render(const GridDomain& dom, const SyntheticSpec& spec, const YearSimulator& sim,
                    std::uint64_t stream, const std::vector<double>& gmst) {
    const bool trended = !gmst.empty();
    AnomalyField f;
    f.n = dom.n();
    f.D = spec.D;
    f.T = spec.T;
    f.p = trended ? 2 : 1;
    f.scenario = trended ? Scenario::factual : Scenario::counterfactual;
    f.values.resize(static_cast<std::size_t>(f.n) * spec.D * spec.T);
    f.covariates.assign(static_cast<std::size_t>(spec.T) * f.p, 0.0);
    for (int t = 0; t < spec.T; ++t) {
        const double gt = trended ? gmst[t] / spec.g_max : 0.0;
        f.covariates[static_cast<std::size_t>(f.p) * t] = 1.0;
        if (trended) f.covariates[static_cast<std::size_t>(f.p) * t + 1] = gt;
        const SkewNormal marg{spec.mu_trend * gt, spec.marg_scale * std::exp(spec.sigma_trend * gt),
                              spec.marg_slant};
        const std::vector<double> u = sim.uniform_year(stream, t);
        for (int s = 0; s < f.n; ++s)
            for (int d = 0; d < spec.D; ++d)
                f.at(s, d, t) =
                    spec.base_mean + marg.quantile(u[static_cast<std::size_t>(s) * spec.D + d]);
    }
    f.provenance.push_back("synthetic " + std::string(to_string(f.scenario)));
    return f;
}

} // namespace

SyntheticData make_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    SyntheticData out;
    std::vector<double> lon, lat;
    lon.reserve(static_cast<std::size_t>(spec.width) * spec.width);
    lat.reserve(lon.capacity());
    // ~100 km spacing at mid latitudes so the dependence ranges are exercised
    for (int y = 0; y < spec.width; ++y)
        for (int x = 0; x < spec.width; ++x) {
            lon.push_back(spec.lon0 + 1.27 * x);
            lat.push_back(spec.lat0 + 0.9 * y);
        }
    out.domain = project_to_km(lon, lat);
    out.truth = spec.dep;
    out.gmst.resize(spec.T);
    for (int t = 0; t < spec.T; ++t)
        out.gmst[t] = spec.gmst_end * (spec.T == 1 ? 0.0 : t / static_cast<double>(spec.T - 1));

    const YearSimulator sim(out.domain, spec.D, spec.dep);
    out.factual_raw = render(out.domain, spec, sim, mix64(seed) ^ hash_tag("synthetic-factual"),
                             out.gmst);
    out.counterfactual_raw =
        render(out.domain, spec, sim, mix64(seed) ^ hash_tag("synthetic-counterfactual"), {});
    return out;
}

} // namespace heatsim
