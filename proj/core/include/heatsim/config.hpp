#pragma once
#include "heatsim/bsqr_stage2.hpp"
#include "heatsim/gev.hpp"
#include "heatsim/summaries.hpp"
#include "heatsim/synthetic.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace heatsim {

// config/schema problems and broken artifact states, CLI exit code 2
class ValidationError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};
// sampler or training non-convergence, CLI exit code 3
class ConvergenceError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ClusterConfig {
    double u = 0.95;
    std::vector<int> k_range = {2, 3, 4, 5};
    int restarts = 5;

    void validate() const;
};

struct HeatwaveConfig {
    double threshold_prob = 0.95;
    int run_length = 3;
    double alpha = 0.6;           // regional area fraction

    void validate() const;
};

struct NbeConfig {
    int years = 40;               // simulated years per training sample
    int n_train = 20000;
    int n_val = 500;
    int n_holdout = 200;
    int checkpoint_every = 500;
    int max_epochs = 80;       // ~2 min/epoch at the 20k scale keeps the budget
    int batch = 128;
    double lr = 1e-3;
    int patience = 10;
    int bootstrap_B = 200;
    int bootstrap_years = 40;

    void validate() const;
};

struct AttributionConfig {
    long J = 10000;               // simulated years behind each point estimate
    long J_boot = 2000;           // years per replicate parameter triple
    int B = 200;                  // replicate triples
    double alpha_ci = 0.05;
    std::vector<double> scenario_gmst = {0.0, 1.0, 2.0, 3.0};
    std::vector<double> exceedance_gmst = {1.0, 2.0, 3.0, 4.0};
    double g_max = 4.0;
    std::vector<double> duration_levels;   // empty picks 0..D-1
    std::vector<double> intensity_levels;  // empty picks quantiles of the point run

    void validate() const;
};

struct RunConfig {
    std::string out_dir = "out";
    std::uint64_t seed = 1;
    int jobs = 1;
    SyntheticSpec synthetic;
    HeatwaveConfig heatwave;
    ClusterConfig cluster;
    Stage2Config bsqr;
    GevConfig gev;
    SummaryConfig summaries;
    NbeConfig nbe;
    AttributionConfig attribution;

    void validate() const;
};

// format picked by extension: .json, or .toml for the flat table subset
// (tables, scalar and array values) the template uses
RunConfig load_config(const std::string& path);
RunConfig config_from_json_text(const std::string& text);
RunConfig config_from_toml_text(const std::string& text);

// commented template carrying every default, round-trips through the parser
std::string config_template_toml();

} // namespace heatsim
