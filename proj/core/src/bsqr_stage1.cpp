#include "heatsim/bsqr_stage1.hpp"
#include "heatsim/mathkit.hpp"
#include "heatsim/parallel.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace heatsim {

void QuantileGrid::validate() const {
    if (levels.size() < 3) throw std::invalid_argument("QuantileGrid: need at least 3 levels");
    double prev = 0.0;
    for (double t : levels) {
        if (!(t > prev && t < 1.0))
            throw std::invalid_argument("QuantileGrid: levels must be strictly increasing in (0,1)");
        prev = t;
    }
}

QuantileGrid QuantileGrid::regular(int K) {
    QuantileGrid g;
    g.levels.resize(K);
    for (int k = 0; k < K; ++k) g.levels[k] = static_cast<double>(k + 1) / (K + 1);
    return g;
}

double qr_objective(const std::vector<double>& x, const std::vector<double>& design,
                    int p, double tau, const std::vector<double>& beta) {
    const std::size_t n = x.size();
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double fit = 0.0;
        for (int j = 0; j < p; ++j) fit += design[i * p + j] * beta[j];
        obj += pinball_loss(tau, x[i] - fit);
    }
    return obj;
}

namespace {

// Interior point solve of the quantile regression dual
//   max y'a  s.t.  X'a = (1-tau) X'1,  a in [0,1]^n
// with Mehrotra predictor-corrector steps. KKT: y - X beta + z - w = 0 with
// z comp. to a >= 0 and w comp. to s = 1-a >= 0; the equality multiplier beta
// converges to the primal coefficient vector.
Eigen::VectorXd qr_interior_point(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                  double tau) {
    const int n = static_cast<int>(X.rows());
    const double scale = 1.0 + y.cwiseAbs().maxCoeff();

    Eigen::VectorXd a = Eigen::VectorXd::Constant(n, 1.0 - tau);
    Eigen::VectorXd s = Eigen::VectorXd::Constant(n, tau);

    Eigen::LLT<Eigen::MatrixXd> xtx(X.transpose() * X);
    if (xtx.info() != Eigen::Success)
        throw std::invalid_argument("fit_qr_site: rank-deficient design");
    Eigen::VectorXd beta = xtx.solve(X.transpose() * y);
    Eigen::VectorXd r = y - X * beta;
    const double eps0 = 1e-5 * scale;
    Eigen::VectorXd z(n), w(n);
    for (int i = 0; i < n; ++i) {
        w[i] = std::max(r[i], 0.0) + eps0;
        z[i] = w[i] - r[i];
    }

    for (int it = 0; it < 120; ++it) {
        const double mu = (a.dot(z) + s.dot(w)) / (2.0 * n);
        const Eigen::VectorXd rd = y - X * beta + z - w;
        if (mu < 1e-13 * scale && rd.cwiseAbs().maxCoeff() < 1e-11 * scale) break;

        const Eigen::VectorXd zi = z.cwiseQuotient(a);
        const Eigen::VectorXd wi = w.cwiseQuotient(s);
        const Eigen::VectorXd d = (zi + wi).cwiseInverse();

        // rc_z, rc_w are the complementarity targets; Newton gives
        // dz = rc_z/a - zi*da, dw = rc_w/s + wi*da and the reduced system
        // (X' D X) dbeta = X' (d * g) with g = rd + rc_z/a - rc_w/s.
        auto solve_step = [&](const Eigen::VectorXd& rza, const Eigen::VectorXd& rws,
                              Eigen::VectorXd& db, Eigen::VectorXd& da,
                              Eigen::VectorXd& dz, Eigen::VectorXd& dw) {
            const Eigen::VectorXd g = rd + rza - rws;
            Eigen::MatrixXd M = X.transpose() * d.asDiagonal() * X;
            Eigen::LLT<Eigen::MatrixXd> llt(M);
            if (llt.info() != Eigen::Success)
                throw std::invalid_argument("fit_qr_site: rank-deficient design");
            db = llt.solve(X.transpose() * (d.cwiseProduct(g)));
            da = d.cwiseProduct(g - X * db);
            dz = rza - zi.cwiseProduct(da);
            dw = rws + wi.cwiseProduct(da);
        };
        auto max_step = [&](const Eigen::VectorXd& v, const Eigen::VectorXd& dv,
                            const Eigen::VectorXd& v2, const Eigen::VectorXd& dv2) {
            double amax = 1.0 / 0.9995;
            for (int i = 0; i < n; ++i) {
                if (dv[i] < 0.0) amax = std::min(amax, -v[i] / dv[i]);
                if (dv2[i] < 0.0) amax = std::min(amax, -v2[i] / dv2[i]);
            }
            return 0.9995 * amax;
        };

        Eigen::VectorXd db, da, dz, dw;
        solve_step(-z, -w, db, da, dz, dw);   // affine: rc_z = -a z, rc_w = -s w
        const double ap_aff = std::min(1.0, max_step(a, da, s, -da));
        const double ad_aff = std::min(1.0, max_step(z, dz, w, dw));
        const double mu_aff = ((a + ap_aff * da).dot(z + ad_aff * dz) +
                               (s - ap_aff * da).dot(w + ad_aff * dw)) /
                              (2.0 * n);
        const double sigma = std::pow(mu_aff / std::max(mu, 1e-300), 3.0);

        const Eigen::VectorXd rza =
            (Eigen::VectorXd::Constant(n, sigma * mu) - da.cwiseProduct(dz)).cwiseQuotient(a) - z;
        const Eigen::VectorXd rws =
            (Eigen::VectorXd::Constant(n, sigma * mu) + da.cwiseProduct(dw)).cwiseQuotient(s) - w;
        solve_step(rza, rws, db, da, dz, dw);
        const double ap = std::min(1.0, max_step(a, da, s, -da));
        const double ad = std::min(1.0, max_step(z, dz, w, dw));

        a += ap * da;
        s -= ap * da;
        z += ad * dz;
        w += ad * dw;
        beta += ad * db;
    }
    return beta;
}

Eigen::MatrixXd as_design(const std::vector<double>& design, std::size_t n, int p) {
    Eigen::MatrixXd X(n, p);
    for (std::size_t i = 0; i < n; ++i)
        for (int j = 0; j < p; ++j) X(i, j) = design[i * p + j];
    return X;
}

} // namespace

std::vector<double> fit_qr_site(const std::vector<double>& x,
                                const std::vector<double>& design, int p, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("fit_qr_site: tau outside (0,1)");
    const std::size_t n = x.size();
    if (design.size() != n * p) throw std::invalid_argument("fit_qr_site: design shape mismatch");
    if (n < static_cast<std::size_t>(10 * p))
        throw std::invalid_argument("fit_qr_site: need at least 10p observations");
    const Eigen::MatrixXd X = as_design(design, n, p);
    const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(x.data(), n);
    const Eigen::VectorXd beta = qr_interior_point(X, y, tau);
    return std::vector<double>(beta.data(), beta.data() + p);
}

double hall_sheather_bandwidth(double tau, std::size_t nobs) {
    const double za = 1.9599639845400545;   // normal 0.975 quantile
    const double q = normal_quantile(tau);
    const double num = 1.5 * normal_pdf(q) * normal_pdf(q);
    const double den = 2.0 * q * q + 1.0;
    return std::pow(static_cast<double>(nobs), -1.0 / 3.0) * std::pow(za, 2.0 / 3.0) *
           std::cbrt(num / den);
}

Stage1Fit fit_stage1_cell(const std::vector<double>& x, const std::vector<double>& design,
                          int p, const QuantileGrid& grid) {
    grid.validate();
    const std::size_t n = x.size();
    const int K = grid.K();
    const Eigen::MatrixXd X = as_design(design, n, p);
    const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(x.data(), n);

    Stage1Fit fit;
    fit.p = p;
    fit.K = K;
    fit.beta.resize(static_cast<std::size_t>(p) * K);

    const Eigen::MatrixXd cct = (X.transpose() * X) / static_cast<double>(n);
    std::vector<Eigen::MatrixXd> Hinv(K);
    for (int k = 0; k < K; ++k) {
        const double tau = grid.levels[k];
        const Eigen::VectorXd bk = qr_interior_point(X, y, tau);
        for (int j = 0; j < p; ++j) fit.beta[static_cast<std::size_t>(k) * p + j] = bk[j];

        double h = hall_sheather_bandwidth(tau, n);
        h = std::min({h, tau - 1e-3, 1.0 - tau - 1e-3});
        if (h <= 0.0) h = std::min(tau, 1.0 - tau) / 2.0;
        const Eigen::VectorXd blo = qr_interior_point(X, y, tau - h);
        const Eigen::VectorXd bhi = qr_interior_point(X, y, tau + h);
        const Eigen::VectorXd dfit = X * (bhi - blo);

        // Hendricks-Koenker difference quotient; nonpositive gaps drop out
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(p, p);
        int used = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (dfit[i] <= 1e-12) continue;
            const double f = 2.0 * h / dfit[i];
            H += f * X.row(i).transpose() * X.row(i);
            ++used;
        }
        H /= static_cast<double>(n);
        if (used < 10 * p)
            fit.warnings.push_back("sparse density information at tau " + std::to_string(tau));

        Eigen::LLT<Eigen::MatrixXd> llt(H);
        double jit = 1e-8 * (1.0 + H.trace() / p);
        while (llt.info() != Eigen::Success) {
            if (jit > 1e3 * (1.0 + H.trace() / p))
                throw std::runtime_error("fit_stage1_cell: sandwich H not invertible");
            H.diagonal().array() += jit;
            llt.compute(H);
            jit *= 10.0;
            fit.warnings.push_back("H jittered at tau " + std::to_string(tau));
        }
        Hinv[k] = llt.solve(Eigen::MatrixXd::Identity(p, p));
    }

    const int pk = p * K;
    Eigen::MatrixXd Sigma(pk, pk);
    for (int k = 0; k < K; ++k)
        for (int l = 0; l < K; ++l) {
            const double tk = grid.levels[k], tl = grid.levels[l];
            const double fac = std::min(tk, tl) - tk * tl;
            const Eigen::MatrixXd block =
                Hinv[k] * (fac * cct) * Hinv[l] / static_cast<double>(n);
            Sigma.block(k * p, l * p, p, p) = block;
        }
    Sigma = ((Sigma + Sigma.transpose()) / 2.0).eval();
    Sigma.diagonal().array() += 1e-8 * Sigma.diagonal().mean();

    fit.sigma.resize(static_cast<std::size_t>(pk) * pk);
    for (int i = 0; i < pk; ++i)
        for (int j = 0; j < pk; ++j) fit.sigma[static_cast<std::size_t>(i) * pk + j] = Sigma(i, j);
    return fit;
}

std::vector<Stage1Fit> fit_stage1(const AnomalyField& field, const QuantileGrid& grid,
                                  int jobs) {
    field.validate();
    const int n = field.n, D = field.D, T = field.T, p = field.p;
    const std::size_t DT = static_cast<std::size_t>(D) * T;
    // design rows are c(t) replicated over days, identical for every cell
    std::vector<double> design(DT * p);
    for (int d = 0; d < D; ++d)
        for (int t = 0; t < T; ++t)
            for (int j = 0; j < p; ++j)
                design[(static_cast<std::size_t>(d) * T + t) * p + j] = field.cov(t)[j];

    std::vector<Stage1Fit> fits(n);
    parallel_for(static_cast<std::size_t>(n), jobs, [&](std::size_t b, std::size_t e) {
        for (std::size_t s = b; s < e; ++s) {
            std::vector<double> x(field.values.begin() + field.idx(static_cast<int>(s), 0, 0),
                                  field.values.begin() + field.idx(static_cast<int>(s), 0, 0) + DT);
            fits[s] = fit_stage1_cell(x, design, p, grid);
        }
    });
    return fits;
}

} // namespace heatsim
