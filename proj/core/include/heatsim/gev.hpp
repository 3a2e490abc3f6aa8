#pragma once
#include "heatsim/grid.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace heatsim {

// max(1 + xi (z - mu) / sigma, 0)^(-1/xi) with the Gumbel branch at |xi| < 1e-8
double gev_cdf(double z, double mu, double sigma, double xi);
double gev_pdf(double z, double mu, double sigma, double xi);
double gev_logpdf(double z, double mu, double sigma, double xi); // -inf outside support
double gev_quantile(double p, double mu, double sigma, double xi);

struct SeasonalMaxima {
    int n = 0, T = 0, p = 0;
    std::vector<double> m;          // n x T, year fastest
    std::vector<double> covariates; // T x p, first column 1

    double at(int s, int t) const { return m[static_cast<std::size_t>(s) * T + t]; }
    const double* cov(int t) const { return covariates.data() + static_cast<std::size_t>(t) * p; }
    void validate() const;
};

SeasonalMaxima seasonal_maxima_from(const AnomalyField& field);

// u' (diag(deg) - A) u over the domain adjacency
double icar_quadform(const std::vector<double>& u, const GridDomain& domain);

struct GevConfig {
    int chains = 2;
    int burnin = 2500;
    int samples = 5000;
    int thin = 5;
    double xi_lo = -0.4, xi_hi = 0.4;
    double xi_prior_sd = 0.1;
    double slope_mu_sd = 2.0;  // prior sd of global covariate effects on mu
    double slope_sigma_sd = 1.0;
    double rhat_tol = 1.05;
    std::uint64_t seed = 1;
    int jobs = 1;

    void validate() const;
};

// coefficient fields in order mu_0..mu_{p-1}, log sigma_0, sigma_1..sigma_{p-1}, xi
struct GevDraw {
    std::vector<double> global; // F
    std::vector<double> scale;  // F
    std::vector<double> u;      // F x n, centered per graph component
};

struct GevDiagnostics {
    std::vector<std::string> names;
    std::vector<double> rhat;
    bool converged = false;
    double accept_pair = 0, accept_field = 0, accept_global = 0, accept_scale = 0;
    double m0 = 0, s0 = 0; // empirical centering used by the priors
};

class GevFieldModel {
  public:
    GevFieldModel(int n, int p, GevConfig cfg, std::vector<GevDraw> draws, GevDiagnostics diag);

    int n() const { return n_; }
    int p() const { return p_; }
    int n_fields() const { return 2 * p_ + 1; }
    const GevConfig& config() const { return cfg_; }
    const std::vector<GevDraw>& draws() const { return draws_; }
    const GevDiagnostics& diagnostics() const { return diag_; }

    double coef(const GevDraw& d, int field, int cell) const;
    // (mu, sigma, xi) at one cell for covariate row c (length p, c[0]=1)
    void params_at(const GevDraw& d, int cell, const double* c, double& mu, double& sigma,
                   double& xi) const;
    std::vector<double> coef_draws(int field, int cell) const;
    std::vector<double> posterior_mean_coefs() const; // F x n
    // params at posterior-mean coefficients
    void mean_params_at(int cell, const double* c, double& mu, double& sigma, double& xi) const;

  private:
    int n_ = 0, p_ = 0;
    GevConfig cfg_;
    std::vector<GevDraw> draws_;
    GevDiagnostics diag_;
    std::vector<double> mean_coef_;
};

GevFieldModel fit_gev_mcmc(const SeasonalMaxima& maxima, const GridDomain& domain,
                           const GevConfig& cfg = {});

struct PpcResult {
    std::vector<double> v_sorted;  // pooled residuals at posterior-mean parameters
    std::vector<double> gumbel_q;  // theoretical quantiles at rank/(N+1)
    std::vector<double> env_lo, env_hi; // replicate envelope per order statistic
    int excluded = 0;              // residuals with nonpositive log argument
    double ks = 0;                 // vs standard Gumbel
};

PpcResult ppc_gumbel_residuals(const GevFieldModel& model, const SeasonalMaxima& maxima,
                               int n_rep = 200, std::uint64_t seed = 1);

} // namespace heatsim
