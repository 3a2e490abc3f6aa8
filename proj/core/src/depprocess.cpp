#include "heatsim/depprocess.hpp"
#include "heatsim/mathkit.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace heatsim {

void DepParams::validate() const {
    auto bad = [](const std::string& what) {
        throw std::invalid_argument("DepParams: " + what);
    };
    if (!(delta >= 0.0 && delta <= 1.0)) bad("delta outside [0,1]");
    if (!(theta > 0.0)) bad("theta must be positive");
    if (!(omega >= 0.0 && omega <= kPi)) bad("omega outside [0,pi]");
    if (!(eta >= 1.0)) bad("eta below 1");
    if (!(kappa > 0.0)) bad("kappa must be positive");
    if (!(lambda >= 0.0)) bad("lambda negative");
    if (!(rho_s > 0.0)) bad("rho_s must be positive");
    if (!(rho_t > 0.0)) bad("rho_t must be positive");
}

std::array<double, 8> DepParams::to_array() const {
    return {delta, theta, omega, eta, kappa, lambda, rho_s, rho_t};
}

DepParams DepParams::from_array(const std::array<double, 8>& a) {
    DepParams p;
    p.delta = a[0];
    p.theta = a[1];
    p.omega = a[2];
    p.eta = a[3];
    p.kappa = a[4];
    p.lambda = a[5];
    p.rho_s = a[6];
    p.rho_t = a[7];
    return p;
}

const std::array<const char*, 8>& DepParams::names() {
    static const std::array<const char*, 8> kNames = {
        "delta", "theta", "omega", "eta", "kappa", "lambda", "rho_s", "rho_t"};
    return kNames;
}

double AnisoMatrix::norm(double hx, double hy) const {
    const auto v = apply(hx, hy);
    return std::hypot(v[0], v[1]);
}

AnisoMatrix aniso_matrix(double omega, double eta) {
    if (!(eta >= 1.0)) throw std::invalid_argument("aniso_matrix: eta below 1");
    if (!(omega >= 0.0 && omega <= kPi)) throw std::invalid_argument("aniso_matrix: omega outside [0,pi]");
    const double c = std::cos(omega), s = std::sin(omega);
    AnisoMatrix T;
    T.m00 = c;
    T.m01 = -eta * s;
    T.m10 = s;
    T.m11 = eta * c;
    return T;
}

double spatial_corr(double sxi, double syi, double sxk, double syk,
                    double theta, const AnisoMatrix& T) {
    return cauchy_corr(T.norm(sxi - sxk, syi - syk), theta);
}

double temporal_corr(double lag, double kappa, double nu) {
    if (lag == 0.0) return 1.0;
    return matern_corr(std::abs(lag), kappa, nu);
}

StormCdf::StormCdf(const GridDomain& domain, int D, const DepParams& params) {
    params.validate();
    if (D < 1 || domain.n() < 1) throw std::invalid_argument("StormCdf: empty domain");
    n_ = domain.n();
    D_ = D;
    lambda_ = params.lambda;
    atom_ = std::exp(-lambda_);
    const AnisoMatrix T = aniso_matrix(params.omega, params.eta);

    sker_.resize(static_cast<std::size_t>(n_) * n_);
    for (int i = 0; i < n_; ++i)
        for (int s = 0; s < n_; ++s)
            sker_[static_cast<std::size_t>(i) * n_ + s] =
                std::exp(-T.norm(domain.xkm[s] - domain.xkm[i], domain.ykm[s] - domain.ykm[i]) /
                         params.rho_s);
    tker_.resize(static_cast<std::size_t>(D_) * D_);
    for (int t = 0; t < D_; ++t)
        for (int d = 0; d < D_; ++d)
            tker_[static_cast<std::size_t>(t) * D_ + d] = std::exp(-std::abs(d - t) / params.rho_t);

    const std::size_t nD = static_cast<std::size_t>(n_) * D_;
    sorted_.resize(nD * nD);
    prefix_.resize(nD * nD);
    std::vector<double> buf(nD);
    for (int s = 0; s < n_; ++s)
        for (int d = 0; d < D_; ++d) {
            std::size_t j = 0;
            for (int i = 0; i < n_; ++i) {
                const double a = sker_[static_cast<std::size_t>(i) * n_ + s];
                for (int t = 0; t < D_; ++t)
                    buf[j++] = a * tker_[static_cast<std::size_t>(t) * D_ + d];
            }
            std::sort(buf.begin(), buf.end());
            const std::size_t base = (static_cast<std::size_t>(s) * D_ + d) * nD;
            double acc = 0.0;
            for (std::size_t i = 0; i < nD; ++i) {
                sorted_[base + i] = buf[i];
                acc += buf[i];
                prefix_[base + i] = acc;
            }
        }
}

double StormCdf::at(double x, int s, int d) const {
    if (x < 0.0) return 0.0;
    if (x == 0.0) return atom_;
    const std::size_t nD = static_cast<std::size_t>(n_) * D_;
    const std::size_t base = (static_cast<std::size_t>(s) * D_ + d) * nD;
    const double* lo = sorted_.data() + base;
    const double* hi = lo + nD;
    // weights strictly below x contribute 1 - w/x, the rest contribute 0
    const std::size_t cnt = std::lower_bound(lo, hi, x) - lo;
    const double sum = cnt == 0 ? 0.0 : prefix_[base + cnt - 1];
    const double p = (static_cast<double>(cnt) - sum / x) / static_cast<double>(nD);
    return std::exp(-lambda_ * (1.0 - p));
}

double StormCdf::pooled(double x) const {
    double acc = 0.0;
    for (int s = 0; s < n_; ++s)
        for (int d = 0; d < D_; ++d) acc += at(x, s, d);
    return acc / (static_cast<double>(n_) * D_);
}

double StormCdf::pareto_floor() const { return 1.0 / (1.0 - atom_); }

namespace {
constexpr double kCdfCap = 1.0 - 1e-16;
}

double gaussian_to_pareto(double wstar) {
    const double p = std::min(normal_cdf(wstar), kCdfCap);
    return 1.0 / (1.0 - p);
}

std::vector<double> gaussian_to_pareto(const std::vector<double>& wstar) {
    std::vector<double> out(wstar.size());
    for (std::size_t i = 0; i < wstar.size(); ++i) out[i] = gaussian_to_pareto(wstar[i]);
    return out;
}

double storm_to_pareto(double rstar, const StormCdf& cdf, int s, int d) {
    const double p = std::min(cdf.at(rstar, s, d), kCdfCap);
    return 1.0 / (1.0 - p);
}

std::vector<double> storm_to_pareto(const std::vector<double>& rstar, const StormCdf& cdf) {
    const int n = cdf.n(), D = cdf.D();
    if (rstar.size() != static_cast<std::size_t>(n) * D)
        throw std::invalid_argument("storm_to_pareto: field shape mismatch");
    std::vector<double> out(rstar.size());
    for (int s = 0; s < n; ++s)
        for (int d = 0; d < D; ++d) {
            const std::size_t i = static_cast<std::size_t>(s) * D + d;
            out[i] = storm_to_pareto(rstar[i], cdf, s, d);
        }
    return out;
}

std::vector<double> mix(const std::vector<double>& R, const std::vector<double>& W, double delta) {
    if (R.size() != W.size()) throw std::invalid_argument("mix: size mismatch");
    std::vector<double> z(R.size());
    for (std::size_t i = 0; i < R.size(); ++i)
        z[i] = std::pow(R[i], delta) * std::pow(W[i], 1.0 - delta);
    return z;
}

double z_marginal_cdf(double z, double delta) {
    if (z < 1.0) {
        if (z > 1.0 - 1e-12) z = 1.0;
        else throw std::invalid_argument("z_marginal_cdf: z below 1");
    }
    if (delta < 1e-12 || delta > 1.0 - 1e-12) return 1.0 - 1.0 / z;
    if (std::abs(delta - 0.5) < 1e-4) {
        const double lz = std::log(z);
        return 1.0 - (2.0 * lz + 1.0) / (z * z);
    }
    const double a = delta / (2.0 * delta - 1.0);
    const double b = (1.0 - delta) / (2.0 * delta - 1.0);
    return 1.0 - a * std::pow(z, -1.0 / delta) + b * std::pow(z, -1.0 / (1.0 - delta));
}

double z_marginal_quantile(double u, double delta) {
    if (u <= 0.0) return 1.0;
    constexpr double kZMax = 1e12;
    if (u >= z_marginal_cdf(kZMax, delta)) return kZMax;
    // bisection in log z gives a uniform relative tolerance across the bracket
    double lo = 0.0, hi = std::log(kZMax);
    while (hi - lo > 1e-10) {
        const double mid = 0.5 * (lo + hi);
        if (z_marginal_cdf(std::exp(mid), delta) < u) lo = mid;
        else hi = mid;
    }
    return std::exp(0.5 * (lo + hi));
}

struct YearSimulator::Impl {
    int n = 0, D = 0;
    DepParams params;
    StormCdf scdf;
    Eigen::MatrixXd Ls, Ld;

    Impl(const GridDomain& domain, int D_, const DepParams& p)
        : n(domain.n()), D(D_), params(p), scdf(domain, D_, p) {
        const AnisoMatrix T = aniso_matrix(p.omega, p.eta);
        Eigen::MatrixXd Ss(n, n), Sd(D, D);
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < n; ++k)
                Ss(i, k) = spatial_corr(domain.xkm[i], domain.ykm[i], domain.xkm[k],
                                        domain.ykm[k], p.theta, T);
        for (int j = 0; j < D; ++j)
            for (int l = 0; l < D; ++l) Sd(j, l) = temporal_corr(std::abs(j - l), p.kappa);
        Ls = cholesky(Ss, "spatial");
        Ld = cholesky(Sd, "temporal");
    }

    static Eigen::MatrixXd cholesky(Eigen::MatrixXd S, const char* label) {
        Eigen::LLT<Eigen::MatrixXd> llt(S);
        if (llt.info() == Eigen::Success) return llt.matrixL();
        S.diagonal().array() += 1e-10;
        llt.compute(S);
        if (llt.info() == Eigen::Success) return llt.matrixL();
        throw std::runtime_error(std::string("YearSimulator: ") + label +
                                 " correlation matrix is not positive definite");
    }
};

YearSimulator::YearSimulator(const GridDomain& domain, int D, const DepParams& params)
    : impl_(std::make_unique<Impl>(domain, D, params)) {
    params.validate();
}

YearSimulator::~YearSimulator() = default;
YearSimulator::YearSimulator(YearSimulator&&) noexcept = default;
YearSimulator& YearSimulator::operator=(YearSimulator&&) noexcept = default;

int YearSimulator::n() const { return impl_->n; }
int YearSimulator::D() const { return impl_->D; }
const DepParams& YearSimulator::params() const { return impl_->params; }
const StormCdf& YearSimulator::storm_cdf() const { return impl_->scdf; }

std::vector<double> YearSimulator::gaussian_year(Rng& rng) const {
    const int n = impl_->n, D = impl_->D;
    Eigen::MatrixXd Z(n, D);
    for (int s = 0; s < n; ++s)
        for (int d = 0; d < D; ++d) Z(s, d) = rng.normal();
    const Eigen::MatrixXd W = impl_->Ls * Z * impl_->Ld.transpose();
    std::vector<double> out(static_cast<std::size_t>(n) * D);
    for (int s = 0; s < n; ++s)
        for (int d = 0; d < D; ++d) out[static_cast<std::size_t>(s) * D + d] = W(s, d);
    return out;
}

std::vector<double> YearSimulator::storm_year(Rng& rng, std::vector<StormEpisode>* log) const {
    const int n = impl_->n, D = impl_->D;
    const StormCdf& k = impl_->scdf;
    std::vector<double> field(static_cast<std::size_t>(n) * D, 0.0);
    const long K = rng.poisson(impl_->params.lambda);
    for (long e = 0; e < K; ++e) {
        StormEpisode ep;
        ep.amplitude = rng.pareto1();
        ep.cell = static_cast<int>(rng.uniform_index(n));
        ep.day = static_cast<int>(rng.uniform_index(D));
        if (log) log->push_back(ep);
        for (int s = 0; s < n; ++s) {
            const double sv = ep.amplitude * k.spatial_kernel(ep.cell, s);
            for (int d = 0; d < D; ++d) {
                const double v = sv * k.temporal_kernel(ep.day, d);
                double& cur = field[static_cast<std::size_t>(s) * D + d];
                if (v > cur) cur = v;
            }
        }
    }
    return field;
}

LatentYear YearSimulator::latent_year(std::uint64_t seed, std::uint64_t year,
                                      bool keep_components) const {
    Rng rng(seed, year);
    LatentYear out;
    out.n = impl_->n;
    out.D = impl_->D;
    const auto wstar = gaussian_year(rng);
    const auto rstar = storm_year(rng, keep_components ? &out.episodes : nullptr);
    auto W = gaussian_to_pareto(wstar);
    auto R = storm_to_pareto(rstar, impl_->scdf);
    out.z = mix(R, W, impl_->params.delta);
    out.u.resize(out.z.size());
    for (std::size_t i = 0; i < out.z.size(); ++i)
        out.u[i] = z_marginal_cdf(out.z[i], impl_->params.delta);
    if (keep_components) {
        out.r = std::move(R);
        out.w = std::move(W);
    }
    return out;
}

std::vector<double> YearSimulator::uniform_year(std::uint64_t seed, std::uint64_t year) const {
    return latent_year(seed, year, false).u;
}

std::vector<double> simulate_gaussian(const GridDomain& domain, int D,
                                      const DepParams& params, Rng& rng) {
    YearSimulator sim(domain, D, params);
    return sim.gaussian_year(rng);
}

std::vector<double> simulate_storm(const GridDomain& domain, int D,
                                   const DepParams& params, Rng& rng,
                                   std::vector<StormEpisode>* log) {
    YearSimulator sim(domain, D, params);
    return sim.storm_year(rng, log);
}

double storm_cdf(double x, const GridDomain& domain, int D, const DepParams& params) {
    return StormCdf(domain, D, params).pooled(x);
}

std::vector<double> simulate_uniform_year(const GridDomain& domain, int D,
                                          const DepParams& params, std::uint64_t seed) {
    YearSimulator sim(domain, D, params);
    return sim.uniform_year(seed, 0);
}

DepParams PriorBox::sample(Rng& rng) const {
    std::array<double, 8> a;
    for (int i = 0; i < 8; ++i) a[i] = rng.uniform(lo[i], hi[i]);
    return DepParams::from_array(a);
}

std::array<double, 8> PriorBox::normalize(const DepParams& p) const {
    const auto a = p.to_array();
    std::array<double, 8> z;
    for (int i = 0; i < 8; ++i) z[i] = (a[i] - lo[i]) / (hi[i] - lo[i]);
    return z;
}

DepParams PriorBox::denormalize(const std::array<double, 8>& z) const {
    std::array<double, 8> a;
    for (int i = 0; i < 8; ++i) a[i] = lo[i] + (hi[i] - lo[i]) * z[i];
    return DepParams::from_array(a);
}

bool PriorBox::contains(const DepParams& p) const {
    const auto a = p.to_array();
    for (int i = 0; i < 8; ++i)
        if (a[i] < lo[i] || a[i] > hi[i]) return false;
    return true;
}

} // namespace heatsim
