#pragma once
#include "heatsim/bsqr_model.hpp"
#include "heatsim/depprocess.hpp"
#include "heatsim/gev.hpp"
#include "heatsim/grid.hpp"
#include "heatsim/summaries.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace heatsim {

// One GMST anomaly applied to every simulated year; the covariate seen by the
// fitted models is the anomaly rescaled into [0,1], with g_max capping how far
// the fits are extrapolated.
struct ScenarioSpec {
    Scenario scenario = Scenario::factual;
    double gmst = 0.0;                 // degC anomaly
    double g_min = 0.0, g_max = 4.0;

    double rescaled() const;
    // {1, rescaled, 0, ...} padded to the model covariate count
    std::vector<double> covariate_row(int p) const;
    void validate() const;
};

// sigma + xi (threshold - mu), the scale of the tail exceedance distribution
double gpd_tail_scale(double mu, double sigma, double xi, double threshold);

// Bulk/tail split of one cell-year marginal: bulk quantile curve below the
// seam, generalized Pareto above. ok is false when the tail scale came out
// nonpositive for this parameter combination.
struct SeamParams {
    double tau = 0.0;          // seam on the uniform scale, inside the window
    double threshold = 0.0;    // degC
    double sigma_tilde = 0.0;
    double xi = 0.0;
    bool ok = false;
};

SeamParams seam_params(const BsqrModel& bulk, int s, const double* c, double threshold,
                       double mu, double sigma, double xi);

// q(u | c, s) below the seam, threshold + GPD quantile of the rescaled
// exceedance above it; nondecreasing in u, continuous at the seam
double hybrid_value(double u, const SeamParams& sp, const BsqrModel& bulk, int s, const double* c);

struct BackTransformOptions {
    int gev_draw = -1;         // -1 evaluates posterior-mean coefficients
    int jobs = 1;
};

struct BackTransformResult {
    AnomalyField field;
    std::vector<std::uint8_t> year_ok;  // 0 when a tail value hit a rejected cell-year
    long rejected = 0;                  // cell-years whose tail scale was nonpositive
};

// covariates: T rows of p entries matching both fitted models, c[0] = 1
BackTransformResult back_transform(const UniformField& U, const std::vector<double>& covariates,
                                   int p, const BsqrModel& bulk, const GevFieldModel& gev,
                                   const std::vector<double>& thresholds,
                                   const BackTransformOptions& opt = {});
BackTransformResult back_transform(const UniformField& U, const ScenarioSpec& scenario,
                                   const BsqrModel& bulk, const GevFieldModel& gev,
                                   const std::vector<double>& thresholds,
                                   const BackTransformOptions& opt = {});

// Per-cell change in threshold exceedance probability: the factual fit at the
// scenario GMST minus the counterfactual fit at its baseline.
std::vector<double> exceedance_shift_map(const BsqrModel& factual, const BsqrModel& counterfactual,
                                         const std::vector<double>& thresholds,
                                         const ScenarioSpec& scenario);

struct SimulateOptions {
    int run_length = 3;
    double alpha = 0.6;         // regional area fraction
    int gev_draw = -1;
    int jobs = 1;
};

// Per-year heatwave properties over the effective years; a year is dropped
// when a needed tail evaluation fell on a rejected cell. Years without any
// regional episode carry duration 0 and intensity -inf.
struct ScenarioYears {
    std::vector<double> duration;   // days
    std::vector<double> intensity;  // degC
    long J = 0;                     // requested years
    long J_effective = 0;
    long failed_years = 0;
    long rejected_cells = 0;        // cells with nonpositive tail scale under this scenario
};

ScenarioYears simulate_scenario_years(const DepParams& dep, const BsqrModel& bulk,
                                      const GevFieldModel& gev,
                                      const std::vector<double>& thresholds,
                                      const ScenarioSpec& scenario, const GridDomain& domain,
                                      int D, long J, std::uint64_t seed,
                                      const SimulateOptions& opt = {});

// T_hat = J / #{P_j > level} with the 1/sqrt(J p_hat) relative-error band;
// zero exceedances report an infinite estimate with J as the one-sided floor
struct ReturnPeriodPoint {
    double level = 0.0;
    double estimate = 0.0;
    double band_lo = 0.0, band_hi = 0.0;
    long exceed = 0;
    long J = 0;
};

ReturnPeriodPoint return_period(const std::vector<double>& properties, double level);

// Pointwise percentile bands of the replicate estimates; replicates may use
// fewer years than the primary run. A level every replicate misses reports
// (smallest replicate year count, +inf).
struct BandResult {
    std::vector<double> lo, hi;
};

BandResult uncertainty_bands(const std::vector<std::vector<double>>& replicates,
                             const std::vector<double>& levels, double alpha = 0.05);

struct ReturnPeriodCurve {
    std::string property;       // duration | intensity
    Scenario scenario = Scenario::factual;
    std::vector<double> levels;
    std::vector<double> estimate;
    std::vector<double> mc_lo, mc_hi;   // Monte Carlo counting band at the point estimate
    std::vector<double> lo, hi;         // across-replicate percentile band, empty without replicates
    long J = 0;
    int B = 0;
};

ReturnPeriodCurve make_return_period_curve(std::string property, Scenario scenario,
                                           const std::vector<double>& properties,
                                           const std::vector<double>& levels,
                                           const std::vector<std::vector<double>>& replicates = {},
                                           double alpha = 0.05);

} // namespace heatsim
