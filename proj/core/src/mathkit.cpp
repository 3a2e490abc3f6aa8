#include "heatsim/mathkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace heatsim {

double normal_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
}

double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

double normal_quantile(double p) {
    // Wichura (1988), algorithm AS241 PPND16
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_quantile: p outside (0,1)");
    const double q = p - 0.5;
    double r;
    if (std::fabs(q) <= 0.425) {
        r = 0.180625 - q * q;
        return q *
            (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r + 6.7265770927008700853e4) * r +
                  4.5921953931549871457e4) * r + 1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
                1.3314166789178437745e2) * r + 3.3871328727963666080e0) /
            (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r + 3.9307895800092710610e4) * r +
                  2.1213794301586595867e4) * r + 5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
                4.2313330701600911252e1) * r + 1.0);
    }
    r = q < 0.0 ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    double v;
    if (r <= 5.0) {
        r -= 1.6;
        v = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r + 2.41780725177450611770e-1) * r +
                  1.27045825245236838258e0) * r + 3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
                4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
            (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r + 1.51986665636164571966e-2) * r +
                  1.48103976427480074590e-1) * r + 6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
                2.05319162663775882187e0) * r + 1.0);
    } else {
        r -= 5.0;
        v = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 1.24266094738807843860e-3) * r +
                  2.65321895265761230930e-2) * r + 2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
                5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
            (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r + 1.84631831751005468180e-5) * r +
                  7.86869131145613259100e-4) * r + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
                5.99832206555887937690e-1) * r + 1.0);
    }
    return q < 0.0 ? -v : v;
}

namespace {

// Gauss-Legendre 48-point nodes/weights on [0,1] built once
struct GL48 {
    double x[48], w[48];
    GL48() {
        // nodes of P_48 on [-1,1] via Newton on Chebyshev initial guesses
        for (int i = 0; i < 48; ++i) {
            double t = std::cos(kPi * (i + 0.75) / (48.0 + 0.5));
            for (int it = 0; it < 100; ++it) {
                double p0 = 1.0, p1 = 0.0;
                for (int j = 0; j < 48; ++j) {
                    double p2 = p1;
                    p1 = p0;
                    p0 = ((2.0 * j + 1.0) * t * p1 - j * p2) / (j + 1.0);
                }
                double dp = 48.0 * (t * p0 - p1) / (t * t - 1.0);
                double t1 = t - p0 / dp;
                if (std::fabs(t1 - t) < 1e-16) { t = t1; break; }
                t = t1;
            }
            double p0 = 1.0, p1 = 0.0;
            for (int j = 0; j < 48; ++j) {
                double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j + 1.0) * t * p1 - j * p2) / (j + 1.0);
            }
            double dp = 48.0 * (t * p0 - p1) / (t * t - 1.0);
            x[i] = 0.5 * (1.0 + t);
            w[i] = 0.5 * 2.0 / ((1.0 - t * t) * dp * dp);
        }
    }
};
const GL48 gl48;

double owen_t_core(double h, double a) {
    // T(h,a) = 1/(2*pi) * int_0^a exp(-h^2 (1+t^2)/2) / (1+t^2) dt, |a| <= 1
    double s = 0.0;
    const double hh = -0.5 * h * h;
    for (int i = 0; i < 48; ++i) {
        const double t = a * gl48.x[i];
        s += gl48.w[i] * std::exp(hh * (1.0 + t * t)) / (1.0 + t * t);
    }
    return a * s / (2.0 * kPi);
}

} // namespace

double owen_t(double h, double a) {
    if (a == 0.0) return 0.0;
    if (a < 0.0) return -owen_t(h, -a);
    h = std::fabs(h);                                        // T(-h,a) = T(h,a)
    if (a <= 1.0) return owen_t_core(h, a);
    // T(h,a) = Phi(h)/2 + Phi(ah)/2 - Phi(h)Phi(ah) - T(ah, 1/a)
    const double ph = normal_cdf(h), pah = normal_cdf(a * h);
    return 0.5 * ph + 0.5 * pah - ph * pah - owen_t_core(a * h, 1.0 / a);
}

double SkewNormal::pdf(double x) const {
    const double z = (x - loc) / scale;
    return 2.0 / scale * normal_pdf(z) * normal_cdf(slant * z);
}

double SkewNormal::cdf(double x) const {
    const double z = (x - loc) / scale;
    return normal_cdf(z) - 2.0 * owen_t(z, slant);
}

double SkewNormal::mean() const {
    const double d = slant / std::sqrt(1.0 + slant * slant);
    return loc + scale * d * std::sqrt(2.0 / kPi);
}

double SkewNormal::quantile(double p) const {
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("SkewNormal::quantile: p outside (0,1)");
    // bracket in z units, then bisection with a Newton polish
    double lo = -40.0, hi = 40.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        const double c = normal_cdf(mid) - 2.0 * owen_t(mid, slant);
        (c < p ? lo : hi) = mid;
        if (hi - lo < 1e-13 * (1.0 + std::fabs(lo))) break;
    }
    double z = 0.5 * (lo + hi);
    for (int i = 0; i < 4; ++i) {
        const double f = normal_cdf(z) - 2.0 * owen_t(z, slant) - p;
        const double d = 2.0 * normal_pdf(z) * normal_cdf(slant * z);
        if (d > 1e-300) {
            const double step = f / d;
            if (std::fabs(step) < 1.0) z -= step;
        }
    }
    return loc + scale * z;
}

double matern_corr(double dist, double range, double nu) {
    if (dist <= 0.0) return 1.0;
    const double x = std::sqrt(2.0 * nu) * dist / range;
    if (x > 700.0) return 0.0;
    return std::pow(2.0, 1.0 - nu) / std::tgamma(nu) * std::pow(x, nu) * std::cyl_bessel_k(nu, x);
}

double cauchy_corr(double dist, double theta) {
    const double r = dist / theta;
    return 1.0 / (1.0 + r * r);
}

std::vector<double> average_ranks(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
        const double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

double empirical_quantile_sorted(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) throw std::domain_error("empirical_quantile: empty sample");
    const std::size_t n = sorted.size();
    std::size_t k = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n)));
    if (k < 1) k = 1;
    if (k > n) k = n;
    return sorted[k - 1];
}

double empirical_quantile(std::vector<double> x, double p) {
    std::sort(x.begin(), x.end());
    return empirical_quantile_sorted(x, p);
}

double ks_uniform(std::vector<double> x) {
    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        d = std::max(d, std::fabs((i + 1) / n - x[i]));
        d = std::max(d, std::fabs(x[i] - i / n));
    }
    return d;
}

double ks_two_sample(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double d = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] <= b[j]) ++i; else ++j;
        d = std::max(d, std::fabs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
    }
    return d;
}

double pinball_loss(double tau, double residual) {
    return residual >= 0.0 ? tau * residual : (tau - 1.0) * residual;
}

std::vector<double> bernstein_row(int M, double tau) {
    // C(M,m) tau^m (1-tau)^(M-m), m = 1..M
    std::vector<double> b(static_cast<std::size_t>(M));
    double c = 1.0;                      // C(M,m) built incrementally
    for (int m = 1; m <= M; ++m) {
        c = c * static_cast<double>(M - m + 1) / static_cast<double>(m);
        b[static_cast<std::size_t>(m - 1)] =
            c * std::pow(tau, m) * std::pow(1.0 - tau, M - m);
    }
    return b;
}

std::vector<double> bernstein_tail_row(int M, double tau) {
    std::vector<double> b = bernstein_row(M, tau);
    for (int m = M - 2; m >= 0; --m) b[static_cast<std::size_t>(m)] += b[static_cast<std::size_t>(m + 1)];
    return b;
}

double split_rhat(const std::vector<std::vector<double>>& chains) {
    // split each chain in half, then the usual between/within ratio
    std::vector<const double*> seg;
    std::vector<std::size_t> len;
    for (const auto& c : chains) {
        const std::size_t h = c.size() / 2;
        if (h < 2) return std::numeric_limits<double>::infinity();
        seg.push_back(c.data());
        len.push_back(h);
        seg.push_back(c.data() + h);
        len.push_back(c.size() - h);
    }
    const std::size_t m = seg.size();
    const double n = static_cast<double>(*std::min_element(len.begin(), len.end()));
    std::vector<double> mean(m), var(m);
    for (std::size_t k = 0; k < m; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) s += seg[k][i];
        mean[k] = s / n;
        double v = 0.0;
        for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
            const double d = seg[k][i] - mean[k];
            v += d * d;
        }
        var[k] = v / (n - 1.0);
    }
    const double grand = std::accumulate(mean.begin(), mean.end(), 0.0) / m;
    double B = 0.0;
    for (double mu : mean) B += (mu - grand) * (mu - grand);
    B *= n / (m - 1.0);
    const double W = std::accumulate(var.begin(), var.end(), 0.0) / m;
    if (W <= 0.0) return B <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    const double vhat = (n - 1.0) / n * W + B / n;
    return std::sqrt(vhat / W);
}

double spearman_rho(const std::vector<double>& a, const std::vector<double>& b) {
    const auto ra = average_ranks(a), rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) { ma += ra[i]; mb += rb[i]; }
    ma /= n; mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

} // namespace heatsim
