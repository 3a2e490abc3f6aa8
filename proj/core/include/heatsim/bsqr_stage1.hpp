#pragma once
#include "heatsim/grid.hpp"

#include <vector>

namespace heatsim {

struct QuantileGrid {
    std::vector<double> levels;   // strictly increasing, inside (0,1)

    void validate() const;
    int K() const { return static_cast<int>(levels.size()); }
    static QuantileGrid regular(int K = 19);   // k/(K+1), the default 0.05..0.95 grid
};

// per-cell Koenker-Bassett fits stacked over the tau grid with the sandwich
// covariance of the stacked vector
struct Stage1Fit {
    int p = 0, K = 0;
    std::vector<double> beta;     // pK, tau-major: (beta(tau_1), ..., beta(tau_K))
    std::vector<double> sigma;    // pK x pK row-major, symmetric PD after jitter
    std::vector<std::string> warnings;
};

// pinball-loss minimizer via the bounded-dual interior point method;
// design is row-major nobs x p, objective within 1e-8 relative of optimum
std::vector<double> fit_qr_site(const std::vector<double>& x,
                                const std::vector<double>& design, int p, double tau);

double qr_objective(const std::vector<double>& x, const std::vector<double>& design,
                    int p, double tau, const std::vector<double>& beta);

// Hall-Sheather bandwidth for the Hendricks-Koenker density estimate
double hall_sheather_bandwidth(double tau, std::size_t nobs);

// fits all grid levels at one cell and assembles beta / sigma
Stage1Fit fit_stage1_cell(const std::vector<double>& x, const std::vector<double>& design,
                          int p, const QuantileGrid& grid);

// per-cell fits over the whole field; design rows are c(t), replicated over days
std::vector<Stage1Fit> fit_stage1(const AnomalyField& field, const QuantileGrid& grid,
                                  int jobs = 1);

} // namespace heatsim
