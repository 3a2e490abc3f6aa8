#pragma once
#include "heatsim/depprocess.hpp"
#include "heatsim/grid.hpp"

#include <cstdint>
#include <vector>

namespace heatsim {

// Stand-in for a climate-model run: a square grid, a dependence truth drawn
// from inside the estimation prior, a warm-skewed marginal, and a linear
// GMST ramp that shifts the factual marginal while the counterfactual stays
// stationary. Raw fields carry base_mean so the anomaly step has work to do.
struct SyntheticSpec {
    int width = 6;
    double lon0 = 10.0, lat0 = 45.0;   // degrees, lower-left cell center
    int D = 30, T = 40;
    DepParams dep;
    double base_mean = 20.0;           // degC offset of the raw fields
    double marg_scale = 1.6, marg_slant = 4.0;
    double mu_trend = 2.0;             // degC location shift per unit rescaled GMST
    double sigma_trend = 0.0;          // log-scale shift per unit rescaled GMST
    double gmst_end = 1.5;             // factual GMST anomaly in the last year, degC
    double g_max = 4.0;                // rescaling cap shared with the scenario sweep
    int baseline_years = 10;

    void validate() const;
};

struct SyntheticData {
    GridDomain domain;
    AnomalyField factual_raw;          // scenario tag set, covariates {1, g~(t)}
    AnomalyField counterfactual_raw;   // intercept-only design, covariates {1}
    std::vector<double> gmst;          // factual degC series, linear ramp
    DepParams truth;
};

SyntheticData make_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

} // namespace heatsim
