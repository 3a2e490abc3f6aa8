#pragma once
#include "heatsim/bsqr_model.hpp"
#include "heatsim/bsqr_stage1.hpp"
#include "heatsim/grid.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace heatsim {

struct Stage2Config {
    BsqrConfig model;
    int chains = 2;
    int burnin = 3000;
    int samples = 6000;
    int thin = 6;
    double a_sigma = 0.1, b_sigma = 0.1;      // Inv-Gamma on each GP variance
    double a_rho = 0.1, b_rho = 0.1;          // Gamma on each GP range (km)
    double psi1_sd = 10.0;                    // base location prior sd
    double psi2_lsd = 1.0;                    // base log-scale prior sd
    double psi3_sd = 5.0;                     // base slant prior sd
    double rhat_tol = 1.05;
    std::uint64_t seed = 1;
    int jobs = 1;

    void validate() const;
};

struct Stage2Draw {
    std::vector<double> delta_star;           // n*p*M cell-major
    std::array<double, 3> omega{};            // location, scale, slant
    std::vector<double> sigma2, rho;          // per covariate
};

struct Stage2Diagnostics {
    std::vector<std::string> names;           // monitored scalars
    std::vector<double> rhat;
    bool converged = false;
    double accept_site = 0.0, accept_omega = 0.0, accept_rho = 0.0;
    int repaired_init = 0;                    // cells whose start needed the d1 lift
};

// Truncated posterior over latent increment fields, base params, and GP
// hyperparameters; immutable once fit. Draws are thinned and pooled across
// chains; the mean model falls back to the draw closest to the mean when the
// mean itself fails the worst-case monotonicity check.
class BsqrPosterior {
public:
    BsqrPosterior(Stage2Config cfg, int n_cells, int p,
                  std::vector<Stage2Draw> draws, Stage2Diagnostics diag);

    int n() const { return n_; }
    int p() const { return p_; }
    const Stage2Config& config() const { return cfg_; }
    const std::vector<Stage2Draw>& draws() const { return draws_; }
    const Stage2Diagnostics& diagnostics() const { return diag_; }
    const BsqrModel& mean_model() const { return *mean_; }
    BsqrModel draw_model(int g) const;

private:
    Stage2Config cfg_;
    int n_ = 0, p_ = 0;
    std::vector<Stage2Draw> draws_;
    Stage2Diagnostics diag_;
    std::shared_ptr<BsqrModel> mean_;
};

// raises the intercept increments just enough to make the worst-case fine-grid
// steps nonnegative; used to make sampler starting states admissible
std::vector<double> repair_monotone_start(const std::vector<double>& delta_cell, int p, int M,
                                          const std::vector<double>& fine_G, int mono_from);

BsqrPosterior fit_stage2(const std::vector<Stage1Fit>& fits, const GridDomain& domain,
                         const Stage2Config& cfg);

} // namespace heatsim
