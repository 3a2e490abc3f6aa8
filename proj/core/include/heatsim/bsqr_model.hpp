#pragma once
#include "heatsim/bsqr_stage1.hpp"
#include "heatsim/mathkit.hpp"

#include <vector>

namespace heatsim {

// Quantile curves live on an evaluation window away from both endpoints: the
// basis omits m=0, so every curve passes through 0 at tau=0 and the left tail
// cannot be represented there. Monotonicity is enforced from mono_lo upward;
// below mono_lo the generalized inverse in quantile_invert stays well defined.
struct BsqrConfig {
    int M = 15;
    QuantileGrid grid = QuantileGrid::regular(19);
    double tau_min = 0.01, tau_max = 0.99;
    double mono_lo = 0.05;
    double mono_step = 0.01;

    void validate() const;
};

// keeps column m>=2 only when the worst-case admissible covariate keeps the
// increment nonnegative: delta*_1m + sum_j min(delta*_jm, 0) >= 0
std::vector<double> noncrossing_map(const std::vector<double>& delta_star, int p, int M);

// nonnegatively-constrained (m>=2) ridge fit of the cumulative Bernstein
// design to the base quantile function at the grid levels, penalty weight 1
std::vector<double> center_on_base(const SkewNormal& base, const QuantileGrid& grid, int M);

// row-major |taus| x M matrix of basis tail sums G_l(tau), each column increasing
std::vector<double> cumulative_design(const std::vector<double>& taus, int M);

// least squares with x_j >= 0 for j in nonneg set (Lawson-Hanson active set);
// A row-major nrows x ncols
std::vector<double> nnls(const std::vector<double>& A, const std::vector<double>& b,
                         int nrows, int ncols, const std::vector<bool>& nonneg);

// One coefficient state (a posterior draw or the posterior mean): latent
// fields delta*, mapped increments, and quantile evaluation per cell.
class BsqrModel {
public:
    BsqrModel(BsqrConfig cfg, int n_cells, int p, std::vector<double> delta_star);

    int n() const { return n_; }
    int p() const { return p_; }
    const BsqrConfig& config() const { return cfg_; }
    const std::vector<double>& delta_star() const { return dstar_; }
    // mapped increments of one cell, p x M row-major (j-major)
    const double* delta(int s) const { return delta_.data() + static_cast<std::size_t>(s) * p_ * cfg_.M; }

    // q(tau | c, s) = sum_j c_j sum_l G_l(tau) delta_jl; tau must lie in the window
    double quantile_eval(double tau, const double* c, int s) const;
    // generalized inverse, clamped to the window; exact bisection root when the
    // curve is monotone for this c, otherwise the tau-measure of {q <= x}
    double quantile_invert(double x, const double* c, int s) const;

    bool monotone_ok(int s) const;                    // worst-case admissible c
    bool monotone_for(const double* c, int s) const;  // this covariate row only

    std::vector<double> beta_stack(int s) const;      // pK tau-major, stage-1 layout

private:
    std::vector<double> fine_eval(const double* c, int s) const;   // window fine grid

    BsqrConfig cfg_;
    int n_ = 0, p_ = 0;
    std::vector<double> dstar_, delta_;     // n*p*M
    std::vector<double> fine_tau_;          // tau_min..tau_max by mono_step
    std::vector<double> fine_G_;            // |fine| x M cumulative design
    std::vector<double> grid_G_;            // K x M cumulative design
    int mono_from_ = 0;                     // fine index where mono_lo starts
};

} // namespace heatsim
