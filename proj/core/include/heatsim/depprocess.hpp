#pragma once
#include "heatsim/grid.hpp"
#include "heatsim/mathkit.hpp"
#include "heatsim/rng.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace heatsim {

// Dependence parameters of the copula process Z = R^delta * W^(1-delta).
// The temporal Matern smoothness nu is fixed.
struct DepParams {
    double delta = 0.5;    // mixture weight in [0,1]
    double theta = 300.0;  // spatial correlation range, km
    double omega = 0.0;    // anisotropy angle, radians in [0,pi]
    double eta = 1.0;      // anisotropy stretch, >= 1
    double kappa = 5.0;    // temporal correlation range, days
    double lambda = 1.0;   // episode rate per year, >= 0
    double rho_s = 100.0;  // episode spatial decay, km
    double rho_t = 2.0;    // episode temporal decay, days

    static constexpr double nu = 0.8;

    void validate() const;
    std::array<double, 8> to_array() const;
    static DepParams from_array(const std::array<double, 8>& a);
    static const std::array<const char*, 8>& names();
};

// rotation(omega) * diag(1, eta) applied to km offsets
struct AnisoMatrix {
    double m00 = 1.0, m01 = 0.0, m10 = 0.0, m11 = 1.0;
    std::array<double, 2> apply(double hx, double hy) const {
        return {m00 * hx + m01 * hy, m10 * hx + m11 * hy};
    }
    double norm(double hx, double hy) const;
};

AnisoMatrix aniso_matrix(double omega, double eta);

// Cauchy-type spatial correlation of the Gaussian component at anisotropic distance
double spatial_corr(double sxi, double syi, double sxk, double syk,
                    double theta, const AnisoMatrix& T);
// Matern temporal correlation, forced to 1 at lag 0
double temporal_corr(double lag, double kappa, double nu = DepParams::nu);

struct StormEpisode {
    double amplitude = 0.0;   // unit-Pareto draw
    int cell = 0;             // peak cell index
    int day = 0;              // peak day index, 0-based
};

// Closed-form marginal distribution of the episodic storm field, one CDF per
// reference point (s,d). Precomputes sorted kernel weights so evaluation is a
// binary search.
class StormCdf {
public:
    StormCdf(const GridDomain& domain, int D, const DepParams& params);

    double at(double x, int s, int d) const;       // F_{s,d}(x)
    double pooled(double x) const;                 // average of at() over the grid
    double atom() const { return atom_; }          // mass at x = 0, exp(-lambda)
    double pareto_floor() const;                   // value of 1/(1-F) at x = 0

    int n() const { return n_; }
    int D() const { return D_; }
    // kernel factors shared with the simulator
    double spatial_kernel(int ci, int s) const { return sker_[static_cast<std::size_t>(ci) * n_ + s]; }
    double temporal_kernel(int td, int d) const { return tker_[static_cast<std::size_t>(td) * D_ + d]; }

private:
    int n_ = 0, D_ = 0;
    double lambda_ = 0.0, atom_ = 1.0;
    std::vector<double> sker_, tker_;              // exp(-dist/rho) factors
    std::vector<double> sorted_, prefix_;          // per (s,d): nD weights ascending + prefix sums
};

// componentwise maps to the unit-Pareto scale
double gaussian_to_pareto(double wstar);
double storm_to_pareto(double rstar, const StormCdf& cdf, int s, int d);
std::vector<double> gaussian_to_pareto(const std::vector<double>& wstar);
std::vector<double> storm_to_pareto(const std::vector<double>& rstar, const StormCdf& cdf);

// Z = R^delta * W^(1-delta), elementwise
std::vector<double> mix(const std::vector<double>& R, const std::vector<double>& W, double delta);

// closed-form marginal CDF of Z when R and W are independent unit Pareto;
// deltas within 1e-4 of 1/2 are routed to the log branch
double z_marginal_cdf(double z, double delta);
double z_marginal_quantile(double u, double delta);   // bisection on [1, 1e12]

struct LatentYear {
    int n = 0, D = 0;
    std::vector<double> z;        // n*D, day fastest
    std::vector<double> u;        // Q(z) in (0,1)
    std::vector<double> r, w;     // retained components when requested
    std::vector<StormEpisode> episodes;
};

// Caches the Kronecker Cholesky factors and the storm CDF for repeated
// simulation at fixed parameters.
class YearSimulator {
public:
    YearSimulator(const GridDomain& domain, int D, const DepParams& params);
    ~YearSimulator();
    YearSimulator(YearSimulator&&) noexcept;
    YearSimulator& operator=(YearSimulator&&) noexcept;

    int n() const;
    int D() const;
    const DepParams& params() const;
    const StormCdf& storm_cdf() const;

    // draw order per year: n*D gaussian variates, then K, then per-episode
    // (amplitude, cell, day); year index selects an independent substream
    std::vector<double> gaussian_year(Rng& rng) const;                 // W*, normal margins
    std::vector<double> storm_year(Rng& rng,
                                   std::vector<StormEpisode>* log = nullptr) const;
    LatentYear latent_year(std::uint64_t seed, std::uint64_t year,
                           bool keep_components = false) const;
    std::vector<double> uniform_year(std::uint64_t seed, std::uint64_t year) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// one-shot conveniences over YearSimulator
std::vector<double> simulate_gaussian(const GridDomain& domain, int D,
                                      const DepParams& params, Rng& rng);
std::vector<double> simulate_storm(const GridDomain& domain, int D,
                                   const DepParams& params, Rng& rng,
                                   std::vector<StormEpisode>* log = nullptr);
double storm_cdf(double x, const GridDomain& domain, int D, const DepParams& params);
std::vector<double> simulate_uniform_year(const GridDomain& domain, int D,
                                          const DepParams& params, std::uint64_t seed);

// prior box used for likelihood-free training draws
struct PriorBox {
    std::array<double, 8> lo{0.0, 50.0, 0.0, 1.0, 1.0, 0.0, 10.0, 0.0};
    std::array<double, 8> hi{1.0, 1000.0, kPi, 5.0, 30.0, 5.0, 400.0, 15.0};

    DepParams sample(Rng& rng) const;
    std::array<double, 8> normalize(const DepParams& p) const;     // to [0,1]^8
    DepParams denormalize(const std::array<double, 8>& z) const;
    bool contains(const DepParams& p) const;
};

} // namespace heatsim
