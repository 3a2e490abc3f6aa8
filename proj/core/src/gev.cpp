#include "heatsim/gev.hpp"

#include "heatsim/mathkit.hpp"
#include "heatsim/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace heatsim {

namespace {
constexpr double kXiGumbel = 1e-8;
}

double gev_cdf(double z, double mu, double sigma, double xi) {
    if (!(sigma > 0.0)) throw std::invalid_argument("gev_cdf: sigma <= 0");
    const double w = (z - mu) / sigma;
    if (std::abs(xi) < kXiGumbel) return std::exp(-std::exp(-w));
    const double h = std::max(1.0 + xi * w, 0.0);
    return std::exp(-std::pow(h, -1.0 / xi));
}

double gev_logpdf(double z, double mu, double sigma, double xi) {
    if (!(sigma > 0.0)) throw std::invalid_argument("gev_logpdf: sigma <= 0");
    const double w = (z - mu) / sigma;
    if (std::abs(xi) < kXiGumbel) return -std::log(sigma) - w - std::exp(-w);
    const double h = 1.0 + xi * w;
    if (h <= 0.0) return -std::numeric_limits<double>::infinity();
    return -std::log(sigma) - (1.0 + 1.0 / xi) * std::log(h) - std::pow(h, -1.0 / xi);
}

double gev_pdf(double z, double mu, double sigma, double xi) {
    const double lp = gev_logpdf(z, mu, sigma, xi);
    return std::isfinite(lp) ? std::exp(lp) : 0.0;
}

double gev_quantile(double p, double mu, double sigma, double xi) {
    if (!(sigma > 0.0)) throw std::invalid_argument("gev_quantile: sigma <= 0");
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("gev_quantile: p outside (0,1)");
    const double l = -std::log(p);
    if (std::abs(xi) < kXiGumbel) return mu - sigma * std::log(l);
    return mu + sigma / xi * (std::pow(l, -xi) - 1.0);
}

void SeasonalMaxima::validate() const {
    if (n <= 0 || T <= 0 || p <= 0) throw std::invalid_argument("SeasonalMaxima: empty dims");
    if (m.size() != static_cast<std::size_t>(n) * T)
        throw std::invalid_argument("SeasonalMaxima: maxima count mismatch");
    if (covariates.size() != static_cast<std::size_t>(T) * p)
        throw std::invalid_argument("SeasonalMaxima: covariate count mismatch");
    for (double v : m)
        if (!std::isfinite(v)) throw std::invalid_argument("SeasonalMaxima: nonfinite maximum");
    for (int t = 0; t < T; ++t)
        if (cov(t)[0] != 1.0) throw std::invalid_argument("SeasonalMaxima: first covariate must be 1");
}

SeasonalMaxima seasonal_maxima_from(const AnomalyField& field) {
    field.validate();
    SeasonalMaxima sm;
    sm.n = field.n;
    sm.T = field.T;
    sm.p = field.p;
    sm.covariates = field.covariates;
    sm.m.resize(static_cast<std::size_t>(field.n) * field.T);
    for (int s = 0; s < field.n; ++s)
        for (int t = 0; t < field.T; ++t) {
            double mx = field.at(s, 0, t);
            for (int d = 1; d < field.D; ++d) mx = std::max(mx, field.at(s, d, t));
            sm.m[static_cast<std::size_t>(s) * field.T + t] = mx;
        }
    return sm;
}

double icar_quadform(const std::vector<double>& u, const GridDomain& domain) {
    const int n = domain.n();
    if (u.size() != static_cast<std::size_t>(n)) throw std::invalid_argument("icar_quadform: size");
    double q = 0.0;
    for (int i = 0; i < n; ++i)
        for (int k : domain.neighbors[i])
            if (k > i) {
                const double d = u[i] - u[k];
                q += d * d;
            }
    return q;
}

void GevConfig::validate() const {
    if (chains < 1 || burnin < 0 || samples <= 0 || thin < 1)
        throw std::invalid_argument("GevConfig: bad chain sizes");
    if (!(xi_lo < xi_hi) || !(xi_prior_sd > 0.0))
        throw std::invalid_argument("GevConfig: bad shape prior");
    if (!(rhat_tol > 1.0)) throw std::invalid_argument("GevConfig: bad rhat tolerance");
}

GevFieldModel::GevFieldModel(int n, int p, GevConfig cfg, std::vector<GevDraw> draws,
                             GevDiagnostics diag)
    : n_(n), p_(p), cfg_(std::move(cfg)), draws_(std::move(draws)), diag_(std::move(diag)) {
    if (draws_.empty()) throw std::invalid_argument("GevFieldModel: no draws");
    const int F = n_fields();
    mean_coef_.assign(static_cast<std::size_t>(F) * n_, 0.0);
    for (const GevDraw& d : draws_)
        for (int f = 0; f < F; ++f)
            for (int s = 0; s < n_; ++s)
                mean_coef_[static_cast<std::size_t>(f) * n_ + s] += coef(d, f, s);
    for (double& v : mean_coef_) v /= static_cast<double>(draws_.size());
}

double GevFieldModel::coef(const GevDraw& d, int field, int cell) const {
    return d.global[field] + d.scale[field] * d.u[static_cast<std::size_t>(field) * n_ + cell];
}

void GevFieldModel::params_at(const GevDraw& d, int cell, const double* c, double& mu,
                              double& sigma, double& xi) const {
    mu = 0.0;
    double lsig = 0.0;
    for (int j = 0; j < p_; ++j) {
        mu += c[j] * coef(d, j, cell);
        lsig += c[j] * coef(d, p_ + j, cell);
    }
    sigma = std::exp(lsig);
    xi = coef(d, 2 * p_, cell);
}

std::vector<double> GevFieldModel::coef_draws(int field, int cell) const {
    std::vector<double> out;
    out.reserve(draws_.size());
    for (const GevDraw& d : draws_) out.push_back(coef(d, field, cell));
    return out;
}

std::vector<double> GevFieldModel::posterior_mean_coefs() const { return mean_coef_; }

void GevFieldModel::mean_params_at(int cell, const double* c, double& mu, double& sigma,
                                   double& xi) const {
    mu = 0.0;
    double lsig = 0.0;
    for (int j = 0; j < p_; ++j) {
        mu += c[j] * mean_coef_[static_cast<std::size_t>(j) * n_ + cell];
        lsig += c[j] * mean_coef_[static_cast<std::size_t>(p_ + j) * n_ + cell];
    }
    sigma = std::exp(lsig);
    xi = mean_coef_[static_cast<std::size_t>(2 * p_) * n_ + cell];
}

namespace {

// V = (1/xi) log(1 + xi (z - mu) / sigma); nonpositive arguments are rejected
bool gumbel_residual(double z, double mu, double sigma, double xi, double& v) {
    if (std::abs(xi) < kXiGumbel) {
        v = (z - mu) / sigma;
        return true;
    }
    const double h = 1.0 + xi * (z - mu) / sigma;
    if (h <= 0.0) return false;
    v = std::log(h) / xi;
    return true;
}

} // namespace

PpcResult ppc_gumbel_residuals(const GevFieldModel& model, const SeasonalMaxima& maxima,
                               int n_rep, std::uint64_t seed) {
    maxima.validate();
    if (maxima.n != model.n() || maxima.p != model.p())
        throw std::invalid_argument("ppc_gumbel_residuals: shape mismatch");
    PpcResult out;
    out.v_sorted.reserve(static_cast<std::size_t>(maxima.n) * maxima.T);
    for (int s = 0; s < maxima.n; ++s)
        for (int t = 0; t < maxima.T; ++t) {
            double mu, sigma, xi, v;
            model.mean_params_at(s, maxima.cov(t), mu, sigma, xi);
            if (gumbel_residual(maxima.at(s, t), mu, sigma, xi, v))
                out.v_sorted.push_back(v);
            else
                ++out.excluded;
        }
    std::sort(out.v_sorted.begin(), out.v_sorted.end());
    const std::size_t N = out.v_sorted.size();
    out.gumbel_q.resize(N);
    for (std::size_t q = 0; q < N; ++q) {
        const double pq = static_cast<double>(q + 1) / (N + 1);
        out.gumbel_q[q] = -std::log(-std::log(pq));
    }
    std::vector<double> pit(N);
    for (std::size_t i = 0; i < N; ++i) pit[i] = std::exp(-std::exp(-out.v_sorted[i]));
    out.ks = ks_uniform(std::move(pit));

    // envelope from replicate datasets simulated at thinned posterior draws
    if (n_rep > 0 && N > 0) {
        Rng rng(seed);
        const auto& draws = model.draws();
        const int use = std::min<int>(n_rep, static_cast<int>(draws.size()));
        std::vector<std::vector<double>> reps;
        reps.reserve(use);
        for (int r = 0; r < use; ++r) {
            const GevDraw& d = draws[static_cast<std::size_t>(r) * draws.size() / use];
            std::vector<double> v;
            v.reserve(N);
            for (int s = 0; s < maxima.n; ++s)
                for (int t = 0; t < maxima.T; ++t) {
                    double mu, sigma, xi, res;
                    model.params_at(d, s, maxima.cov(t), mu, sigma, xi);
                    const double z = gev_quantile(rng.uniform(), mu, sigma, xi);
                    if (gumbel_residual(z, mu, sigma, xi, res)) v.push_back(res);
                }
            std::sort(v.begin(), v.end());
            reps.push_back(std::move(v));
        }
        out.env_lo.resize(N);
        out.env_hi.resize(N);
        std::vector<double> pool;
        for (std::size_t q = 0; q < N; ++q) {
            pool.clear();
            for (const auto& v : reps) {
                // replicate may have fewer points; map rank proportionally
                if (v.empty()) continue;
                const std::size_t j = q * v.size() / N;
                pool.push_back(v[j]);
            }
            std::sort(pool.begin(), pool.end());
            out.env_lo[q] = empirical_quantile_sorted(pool, 0.05);
            out.env_hi[q] = empirical_quantile_sorted(pool, 0.95);
        }
    }
    return out;
}

} // namespace heatsim
