#include "heatsim/bsqr_model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>

namespace heatsim {

namespace {

constexpr double kMonoTol = 1e-12;

} // namespace

void BsqrConfig::validate() const {
    if (M < 2) throw std::invalid_argument("BsqrConfig: M must be at least 2");
    grid.validate();
    if (!(tau_min > 0.0 && tau_min < tau_max && tau_max < 1.0))
        throw std::invalid_argument("BsqrConfig: need 0 < tau_min < tau_max < 1");
    if (!(mono_lo >= tau_min && mono_lo < tau_max))
        throw std::invalid_argument("BsqrConfig: mono_lo outside the window");
    if (!(mono_step > 0.0)) throw std::invalid_argument("BsqrConfig: mono_step must be positive");
    for (double t : grid.levels)
        if (t < tau_min - 1e-12 || t > tau_max + 1e-12)
            throw std::invalid_argument("BsqrConfig: grid level outside the window");
}

std::vector<double> cumulative_design(const std::vector<double>& taus, int M) {
    std::vector<double> G(taus.size() * static_cast<std::size_t>(M));
    for (std::size_t f = 0; f < taus.size(); ++f) {
        std::vector<double> row = bernstein_tail_row(M, taus[f]);
        std::copy(row.begin(), row.end(), G.begin() + f * static_cast<std::size_t>(M));
    }
    return G;
}

std::vector<double> noncrossing_map(const std::vector<double>& delta_star, int p, int M) {
    if (delta_star.size() != static_cast<std::size_t>(p) * M)
        throw std::invalid_argument("noncrossing_map: size mismatch");
    std::vector<double> out = delta_star;
    auto at = [&](int j, int m) -> double& { return out[static_cast<std::size_t>(j) * M + m]; };
    for (int m = 1; m < M; ++m) {            // column m+1 in 1-based terms; m=0 always kept
        double worst = at(0, m);
        for (int j = 1; j < p; ++j) worst += std::min(at(j, m), 0.0);
        if (worst < 0.0)
            for (int j = 0; j < p; ++j) at(j, m) = 0.0;
    }
    return out;
}

std::vector<double> nnls(const std::vector<double>& A, const std::vector<double>& b,
                         int nrows, int ncols, const std::vector<bool>& nonneg) {
    if (A.size() != static_cast<std::size_t>(nrows) * ncols || b.size() != static_cast<std::size_t>(nrows))
        throw std::invalid_argument("nnls: size mismatch");
    if (nonneg.size() != static_cast<std::size_t>(ncols))
        throw std::invalid_argument("nnls: constraint mask size mismatch");

    Eigen::MatrixXd Am(nrows, ncols);
    Eigen::VectorXd bv(nrows);
    for (int i = 0; i < nrows; ++i) {
        bv(i) = b[static_cast<std::size_t>(i)];
        for (int j = 0; j < ncols; ++j) Am(i, j) = A[static_cast<std::size_t>(i) * ncols + j];
    }

    std::vector<char> in_p(static_cast<std::size_t>(ncols), 0);
    for (int j = 0; j < ncols; ++j)
        if (!nonneg[static_cast<std::size_t>(j)]) in_p[static_cast<std::size_t>(j)] = 1;

    Eigen::VectorXd x = Eigen::VectorXd::Zero(ncols);
    const double tol = 1e-12 * std::max(1.0, (Am.transpose() * bv).cwiseAbs().maxCoeff());

    auto solve_passive = [&](Eigen::VectorXd& z) {
        std::vector<int> idx;
        for (int j = 0; j < ncols; ++j)
            if (in_p[static_cast<std::size_t>(j)]) idx.push_back(j);
        z = Eigen::VectorXd::Zero(ncols);
        if (idx.empty()) return;
        Eigen::MatrixXd Ap(nrows, static_cast<int>(idx.size()));
        for (std::size_t q = 0; q < idx.size(); ++q) Ap.col(static_cast<int>(q)) = Am.col(idx[q]);
        Eigen::VectorXd zp = Ap.colPivHouseholderQr().solve(bv);
        for (std::size_t q = 0; q < idx.size(); ++q) z(idx[q]) = zp(static_cast<int>(q));
    };

    // free columns start in the passive set and never leave it
    if (std::any_of(in_p.begin(), in_p.end(), [](char c) { return c != 0; })) {
        Eigen::VectorXd z;
        solve_passive(z);
        x = z;
    }

    for (int outer = 0; outer < 30 * ncols; ++outer) {
        Eigen::VectorXd w = Am.transpose() * (bv - Am * x);
        int jbest = -1;
        double wbest = tol;
        for (int j = 0; j < ncols; ++j)
            if (!in_p[static_cast<std::size_t>(j)] && w(j) > wbest) { wbest = w(j); jbest = j; }
        if (jbest < 0) break;
        in_p[static_cast<std::size_t>(jbest)] = 1;

        for (int inner = 0; inner < 30 * ncols; ++inner) {
            Eigen::VectorXd z;
            solve_passive(z);
            bool feasible = true;
            for (int j = 0; j < ncols; ++j)
                if (in_p[static_cast<std::size_t>(j)] && nonneg[static_cast<std::size_t>(j)] && z(j) <= 0.0) {
                    feasible = false;
                    break;
                }
            if (feasible) { x = z; break; }
            double alpha = 1.0;
            for (int j = 0; j < ncols; ++j) {
                if (!in_p[static_cast<std::size_t>(j)] || !nonneg[static_cast<std::size_t>(j)] || z(j) > 0.0)
                    continue;
                double denom = x(j) - z(j);
                if (denom > 0.0) alpha = std::min(alpha, x(j) / denom);
            }
            x += alpha * (z - x);
            for (int j = 0; j < ncols; ++j)
                if (in_p[static_cast<std::size_t>(j)] && nonneg[static_cast<std::size_t>(j)] && x(j) <= tol) {
                    x(j) = 0.0;
                    in_p[static_cast<std::size_t>(j)] = 0;
                }
        }
    }

    std::vector<double> out(static_cast<std::size_t>(ncols));
    for (int j = 0; j < ncols; ++j) out[static_cast<std::size_t>(j)] = x(j);
    return out;
}

std::vector<double> center_on_base(const SkewNormal& base, const QuantileGrid& grid, int M) {
    grid.validate();
    if (M < 2) throw std::invalid_argument("center_on_base: M must be at least 2");
    const int K = grid.K();
    // columns: d_1 split into positive/negative parts, then d_2..d_M
    const int nc = M + 1;
    const int nr = K + M;
    std::vector<double> A(static_cast<std::size_t>(nr) * nc, 0.0);
    std::vector<double> b(static_cast<std::size_t>(nr), 0.0);
    for (int k = 0; k < K; ++k) {
        std::vector<double> G = bernstein_tail_row(M, grid.levels[static_cast<std::size_t>(k)]);
        double* row = A.data() + static_cast<std::size_t>(k) * nc;
        row[0] = G[0];
        row[1] = -G[0];
        for (int m = 2; m <= M; ++m) row[m] = G[static_cast<std::size_t>(m - 1)];
        b[static_cast<std::size_t>(k)] = base.quantile(grid.levels[static_cast<std::size_t>(k)]);
    }
    for (int m = 1; m <= M; ++m) {           // unit ridge rows, one per increment
        double* row = A.data() + static_cast<std::size_t>(K + m - 1) * nc;
        if (m == 1) { row[0] = 1.0; row[1] = -1.0; }
        else row[m] = 1.0;
    }
    std::vector<bool> nonneg(static_cast<std::size_t>(nc), true);
    std::vector<double> x = nnls(A, b, nr, nc, nonneg);
    std::vector<double> d(static_cast<std::size_t>(M));
    d[0] = x[0] - x[1];
    for (int m = 2; m <= M; ++m) d[static_cast<std::size_t>(m - 1)] = x[static_cast<std::size_t>(m)];
    return d;
}

BsqrModel::BsqrModel(BsqrConfig cfg, int n_cells, int p, std::vector<double> delta_star)
    : cfg_(std::move(cfg)), n_(n_cells), p_(p), dstar_(std::move(delta_star)) {
    cfg_.validate();
    if (n_ < 1 || p_ < 1) throw std::invalid_argument("BsqrModel: need n >= 1 and p >= 1");
    if (dstar_.size() != static_cast<std::size_t>(n_) * p_ * cfg_.M)
        throw std::invalid_argument("BsqrModel: delta_star size mismatch");

    const int M = cfg_.M;
    delta_.resize(dstar_.size());
    std::vector<double> cell(static_cast<std::size_t>(p_) * M);
    for (int s = 0; s < n_; ++s) {
        const double* src = dstar_.data() + static_cast<std::size_t>(s) * p_ * M;
        std::copy(src, src + cell.size(), cell.begin());
        std::vector<double> mapped = noncrossing_map(cell, p_, M);
        std::copy(mapped.begin(), mapped.end(), delta_.begin() + static_cast<std::size_t>(s) * p_ * M);
    }

    const int nfine = static_cast<int>(std::lround((cfg_.tau_max - cfg_.tau_min) / cfg_.mono_step)) + 1;
    fine_tau_.resize(static_cast<std::size_t>(nfine));
    for (int f = 0; f < nfine; ++f)
        fine_tau_[static_cast<std::size_t>(f)] =
            std::min(cfg_.tau_max, cfg_.tau_min + cfg_.mono_step * f);
    mono_from_ = 0;
    while (mono_from_ + 1 < nfine && fine_tau_[static_cast<std::size_t>(mono_from_)] < cfg_.mono_lo - 1e-12)
        ++mono_from_;

    fine_G_ = cumulative_design(fine_tau_, M);
    grid_G_ = cumulative_design(cfg_.grid.levels, M);
}

double BsqrModel::quantile_eval(double tau, const double* c, int s) const {
    if (!(tau >= cfg_.tau_min - 1e-12 && tau <= cfg_.tau_max + 1e-12))
        throw std::domain_error("quantile_eval: tau outside the evaluation window");
    const int M = cfg_.M;
    std::vector<double> G = bernstein_tail_row(M, tau);
    const double* d = delta(s);
    double q = 0.0;
    for (int j = 0; j < p_; ++j) {
        double qj = 0.0;
        const double* dj = d + static_cast<std::size_t>(j) * M;
        for (int m = 0; m < M; ++m) qj += G[static_cast<std::size_t>(m)] * dj[m];
        q += c[j] * qj;
    }
    return q;
}

std::vector<double> BsqrModel::fine_eval(const double* c, int s) const {
    const int M = cfg_.M;
    const int nfine = static_cast<int>(fine_tau_.size());
    const double* d = delta(s);
    std::vector<double> cd(static_cast<std::size_t>(M), 0.0);   // sum_j c_j delta_jm
    for (int j = 0; j < p_; ++j) {
        const double* dj = d + static_cast<std::size_t>(j) * M;
        for (int m = 0; m < M; ++m) cd[static_cast<std::size_t>(m)] += c[j] * dj[m];
    }
    std::vector<double> vals(static_cast<std::size_t>(nfine), 0.0);
    for (int f = 0; f < nfine; ++f) {
        const double* G = fine_G_.data() + static_cast<std::size_t>(f) * M;
        double q = 0.0;
        for (int m = 0; m < M; ++m) q += G[m] * cd[static_cast<std::size_t>(m)];
        vals[static_cast<std::size_t>(f)] = q;
    }
    return vals;
}

bool BsqrModel::monotone_for(const double* c, int s) const {
    std::vector<double> vals = fine_eval(c, s);
    for (std::size_t f = 1; f < vals.size(); ++f)
        if (vals[f] - vals[f - 1] < -kMonoTol) return false;
    return true;
}

bool BsqrModel::monotone_ok(int s) const {
    const int M = cfg_.M;
    const int nfine = static_cast<int>(fine_tau_.size());
    const double* d = delta(s);
    for (int f = mono_from_; f + 1 < nfine; ++f) {
        const double* G0 = fine_G_.data() + static_cast<std::size_t>(f) * M;
        const double* G1 = fine_G_.data() + static_cast<std::size_t>(f + 1) * M;
        double worst = 0.0;
        for (int j = 0; j < p_; ++j) {
            const double* dj = d + static_cast<std::size_t>(j) * M;
            double dq = 0.0;
            for (int m = 0; m < M; ++m) dq += (G1[m] - G0[m]) * dj[m];
            if (j == 0) worst += dq;
            else worst += std::min(dq, 0.0);    // scaled covariates live in [0,1]
        }
        if (worst < -kMonoTol) return false;
    }
    return true;
}

double BsqrModel::quantile_invert(double x, const double* c, int s) const {
    std::vector<double> vals = fine_eval(c, s);
    bool mono = true;
    for (std::size_t f = 1; f < vals.size(); ++f)
        if (vals[f] - vals[f - 1] < -kMonoTol) { mono = false; break; }

    if (mono) {
        if (x <= vals.front()) return cfg_.tau_min;
        if (x >= vals.back()) return cfg_.tau_max;
        double lo = cfg_.tau_min, hi = cfg_.tau_max;
        for (int it = 0; it < 200; ++it) {
            double mid = 0.5 * (lo + hi);
            double q = quantile_eval(mid, c, s);
            if (std::abs(q - x) < 1e-9 * (1.0 + std::abs(x))) return mid;
            if (q < x) lo = mid;
            else hi = mid;
            if (hi - lo < 1e-15) break;
        }
        return 0.5 * (lo + hi);
    }

    // tau-measure of {q <= x} on the window, piecewise linear between fine levels
    double measure = 0.0;
    for (std::size_t f = 0; f + 1 < vals.size(); ++f) {
        double dt = fine_tau_[f + 1] - fine_tau_[f];
        double a = vals[f], bnd = vals[f + 1];
        if (a <= x && bnd <= x) measure += dt;
        else if (a > x && bnd > x) continue;
        else if (a <= x) measure += dt * (x - a) / (bnd - a);
        else measure += dt * (1.0 - (x - a) / (bnd - a));
    }
    return cfg_.tau_min + measure;
}

std::vector<double> BsqrModel::beta_stack(int s) const {
    const int M = cfg_.M;
    const int K = cfg_.grid.K();
    const double* d = delta(s);
    std::vector<double> beta(static_cast<std::size_t>(K) * p_, 0.0);
    for (int k = 0; k < K; ++k) {
        const double* G = grid_G_.data() + static_cast<std::size_t>(k) * M;
        for (int j = 0; j < p_; ++j) {
            const double* dj = d + static_cast<std::size_t>(j) * M;
            double v = 0.0;
            for (int m = 0; m < M; ++m) v += G[m] * dj[m];
            beta[static_cast<std::size_t>(k) * p_ + j] = v;
        }
    }
    return beta;
}

} // namespace heatsim
