#pragma once
#include <cstddef>
#include <vector>

namespace heatsim {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kEarthRadiusKm = 6371.0;

double normal_pdf(double x);
double normal_cdf(double x);
double normal_quantile(double p);        // Wichura AS241, |err| ~ 1e-15

// Owen's T function T(h, a); quadrature plus the standard reduction identities
double owen_t(double h, double a);

// Skew-normal with location/scale/slant (psi1, psi2 > 0, psi3)
struct SkewNormal {
    double loc = 0.0, scale = 1.0, slant = 0.0;
    double pdf(double x) const;
    double cdf(double x) const;
    double quantile(double p) const;     // bracketed bisection/Newton to ~1e-12
    double mean() const;
};

// Matern correlation, unit value at distance 0
double matern_corr(double dist, double range, double nu);
// Cauchy-type spatial correlation 1 / (1 + (d/theta)^2)
double cauchy_corr(double dist, double theta);

// averaged ranks in [1..n], ties get the mean rank
std::vector<double> average_ranks(const std::vector<double>& x);

// empirical quantile, inf{x : fraction of sample <= x is >= p}
double empirical_quantile(std::vector<double> x, double p);
double empirical_quantile_sorted(const std::vector<double>& sorted, double p);

// Kolmogorov-Smirnov statistics
double ks_uniform(std::vector<double> x);                       // sup |F_n - u| vs U(0,1)
double ks_two_sample(std::vector<double> a, std::vector<double> b);

double pinball_loss(double tau, double residual);

// Bernstein basis row with the m=0 term omitted: B_m(t) = C(M,m) t^m (1-t)^(M-m), m=1..M
std::vector<double> bernstein_row(int M, double tau);
// tail sums G_l(t) = sum_{m>=l} B_m(t) = P(Bin(M,t) >= l), l=1..M; increasing in t
std::vector<double> bernstein_tail_row(int M, double tau);

// mean and split-Rhat across chains (each chain one vector, equal lengths)
double split_rhat(const std::vector<std::vector<double>>& chains);

double spearman_rho(const std::vector<double>& a, const std::vector<double>& b);

} // namespace heatsim
