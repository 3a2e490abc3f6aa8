#include "heatsim/bsqr_stage2.hpp"

#include "heatsim/mathkit.hpp"
#include "heatsim/parallel.hpp"
#include "heatsim/rng.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <utility>

namespace heatsim {

namespace {

constexpr double kMonoTol = 1e-12;

struct Workspace {
    int n = 0, p = 0, M = 0, K = 0, F = 0;
    const Stage2Config* cfg = nullptr;
    std::vector<double> fine_tau, fine_G, grid_G;
    int mono_from = 0;
    std::vector<Eigen::VectorXd> bhat;      // per cell, pK
    std::vector<Eigen::MatrixXd> prec;      // per cell, pK x pK
    Eigen::MatrixXd dist;                   // n x n, km
};

std::size_t dsi(const Workspace& w, int s, int j, int m) {
    return (static_cast<std::size_t>(s) * w.p + j) * w.M + m;
}

// stacked beta (pK, tau-major) of one cell's mapped increments
void stack_beta(const Workspace& w, const std::vector<double>& mapped, Eigen::VectorXd& out) {
    for (int k = 0; k < w.K; ++k) {
        const double* G = w.grid_G.data() + static_cast<std::size_t>(k) * w.M;
        for (int j = 0; j < w.p; ++j) {
            const double* dj = mapped.data() + static_cast<std::size_t>(j) * w.M;
            double v = 0.0;
            for (int m = 0; m < w.M; ++m) v += G[m] * dj[m];
            out(static_cast<Eigen::Index>(k) * w.p + j) = v;
        }
    }
}

// worst-case step condition over admissible covariates, from mono_from upward
bool mono_ok_cell(const Workspace& w, const std::vector<double>& mapped) {
    for (int f = w.mono_from; f + 1 < w.F; ++f) {
        const double* G0 = w.fine_G.data() + static_cast<std::size_t>(f) * w.M;
        const double* G1 = w.fine_G.data() + static_cast<std::size_t>(f + 1) * w.M;
        double worst = 0.0;
        for (int j = 0; j < w.p; ++j) {
            const double* dj = mapped.data() + static_cast<std::size_t>(j) * w.M;
            double dq = 0.0;
            for (int m = 0; m < w.M; ++m) dq += (G1[m] - G0[m]) * dj[m];
            if (j == 0) worst += dq;
            else worst += std::min(dq, 0.0);
        }
        if (worst < -kMonoTol) return false;
    }
    return true;
}

double cell_loglik(const Workspace& w, int s, const Eigen::VectorXd& beta) {
    Eigen::VectorXd r = w.bhat[static_cast<std::size_t>(s)] - beta;
    return -0.5 * r.dot(w.prec[static_cast<std::size_t>(s)] * r);
}

struct ChainState {
    std::vector<double> dstar;
    std::array<double, 3> omega{};
    std::vector<double> sigma2, rho;
    std::vector<double> dbar1;               // centered intercept increments at omega
    std::vector<Eigen::MatrixXd> rinv;       // per covariate
    std::vector<double> logdet;              // per covariate
    std::vector<Eigen::VectorXd> wvec;       // per (j,m): Rinv_j (v_jm)
    std::vector<double> qform;               // per covariate: sum_m v' Rinv v
    std::vector<double> loglik;              // per cell
};

double prior_mean(const ChainState& st, int j, int m) {
    return j == 0 ? st.dbar1[static_cast<std::size_t>(m)] : 0.0;
}

void corr_factor(const Workspace& w, double rho, Eigen::MatrixXd& rinv, double& logdet) {
    Eigen::MatrixXd R(w.n, w.n);
    for (int a = 0; a < w.n; ++a)
        for (int b = 0; b < w.n; ++b)
            R(a, b) = std::exp(-w.dist(a, b) / rho) + (a == b ? 1e-10 : 0.0);
    Eigen::LLT<Eigen::MatrixXd> llt(R);
    if (llt.info() != Eigen::Success) throw std::runtime_error("stage2: exponential correlation not PD");
    const Eigen::MatrixXd L = llt.matrixL();
    logdet = 0.0;
    for (int a = 0; a < w.n; ++a) logdet += 2.0 * std::log(L(a, a));
    rinv = llt.solve(Eigen::MatrixXd::Identity(w.n, w.n));
}

void refresh_wq(const Workspace& w, ChainState& st, int j) {
    Eigen::VectorXd v(w.n);
    double q = 0.0;
    for (int m = 0; m < w.M; ++m) {
        const double mu = prior_mean(st, j, m);
        for (int s = 0; s < w.n; ++s) v(s) = st.dstar[dsi(w, s, j, m)] - mu;
        Eigen::VectorXd& wv = st.wvec[static_cast<std::size_t>(j) * w.M + m];
        wv = st.rinv[static_cast<std::size_t>(j)] * v;
        q += v.dot(wv);
    }
    st.qform[static_cast<std::size_t>(j)] = std::max(q, 0.0);
}

void refresh_loglik(const Workspace& w, ChainState& st) {
    std::vector<double> cell(static_cast<std::size_t>(w.p) * w.M);
    Eigen::VectorXd beta(static_cast<Eigen::Index>(w.p) * w.K);
    for (int s = 0; s < w.n; ++s) {
        std::copy_n(st.dstar.data() + dsi(w, s, 0, 0), cell.size(), cell.begin());
        std::vector<double> mapped = noncrossing_map(cell, w.p, w.M);
        stack_beta(w, mapped, beta);
        st.loglik[static_cast<std::size_t>(s)] = cell_loglik(w, s, beta);
    }
}

struct ChainOut {
    std::vector<Stage2Draw> draws;
    std::vector<std::vector<double>> monitor;   // per scalar, per kept sweep
    double accept_site = 0.0, accept_omega = 0.0, accept_rho = 0.0;
    int repaired = 0;
};

// rough skew-normal start from the cross-cell mean intercept curve
std::array<double, 3> init_omega(const Workspace& w) {
    const auto& levels = w.cfg->model.grid.levels;
    std::vector<double> qbar(levels.size(), 0.0);
    for (int s = 0; s < w.n; ++s)
        for (std::size_t k = 0; k < levels.size(); ++k)
            qbar[k] += w.bhat[static_cast<std::size_t>(s)](static_cast<Eigen::Index>(k) * w.p) / w.n;
    auto at = [&](double tau) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < levels.size(); ++k)
            if (std::abs(levels[k] - tau) < std::abs(levels[best] - tau)) best = k;
        return qbar[best];
    };
    const double qlo = at(0.05), qmid = at(0.5), qhi = at(0.95);
    const double spread = std::max(qhi - qlo, 1e-3);
    const double bowley = (qhi + qlo - 2.0 * qmid) / spread;
    return {qmid, std::max(spread / 3.29, 1e-2), 5.0 * bowley};
}

void run_chain(const Workspace& w, int chain, ChainOut& out) {
    const Stage2Config& cfg = *w.cfg;
    Rng rng(cfg.seed, static_cast<std::uint64_t>(9000 + chain));
    const int p = w.p, M = w.M, n = w.n;

    ChainState st;
    st.omega = init_omega(w);
    st.omega[0] += 0.2 * rng.normal();
    st.omega[1] *= std::exp(0.1 * rng.normal());
    st.omega[2] += 0.3 * rng.normal();
    st.dbar1 = center_on_base(SkewNormal{st.omega[0], st.omega[1], st.omega[2]},
                              cfg.model.grid, M);
    st.sigma2.assign(static_cast<std::size_t>(p), 0.25);
    const double rho0 = std::max(w.dist.maxCoeff() / 3.0, 1.0);
    st.rho.assign(static_cast<std::size_t>(p), rho0 * std::exp(0.2 * rng.normal()));

    st.dstar.assign(static_cast<std::size_t>(n) * p * M, 0.0);
    std::vector<double> cell(static_cast<std::size_t>(p) * M, 0.0);
    for (int s = 0; s < n; ++s) {
        std::fill(cell.begin(), cell.end(), 0.0);
        for (int m = 0; m < M; ++m)
            cell[static_cast<std::size_t>(m)] = st.dbar1[static_cast<std::size_t>(m)] + 0.01 * rng.normal();
        std::vector<double> repaired = repair_monotone_start(cell, p, M, w.fine_G, w.mono_from);
        if (repaired != cell) ++out.repaired;
        std::copy(repaired.begin(), repaired.end(), st.dstar.begin() + static_cast<std::ptrdiff_t>(dsi(w, s, 0, 0)));
    }

    st.rinv.resize(static_cast<std::size_t>(p));
    st.logdet.resize(static_cast<std::size_t>(p));
    st.wvec.resize(static_cast<std::size_t>(p) * M);
    st.qform.resize(static_cast<std::size_t>(p));
    for (int j = 0; j < p; ++j) {
        corr_factor(w, st.rho[static_cast<std::size_t>(j)], st.rinv[static_cast<std::size_t>(j)],
                    st.logdet[static_cast<std::size_t>(j)]);
        refresh_wq(w, st, j);
    }
    st.loglik.assign(static_cast<std::size_t>(n), 0.0);
    refresh_loglik(w, st);

    // adaptation state; base params get independent scales per component and
    // per move flavor since the posterior is much flatter in some directions
    std::vector<double> lstep(st.dstar.size(), std::log(0.05));
    std::vector<int> acc(st.dstar.size(), 0), att(st.dstar.size(), 0);
    std::array<double, 6> lstep_om;
    lstep_om.fill(std::log(0.2));
    std::array<int, 6> acc_om{}, att_om{};
    // empirical covariance of (psi1, log psi2, psi3) for joint ridge proposals
    Eigen::Vector3d om_sum = Eigen::Vector3d::Zero();
    Eigen::Matrix3d om_sumsq = Eigen::Matrix3d::Zero();
    long om_count = 0;
    Eigen::Matrix3d om_chol = Eigen::Matrix3d::Identity();
    bool om_chol_ready = false;
    std::array<double, 2> lstep_am{std::log(0.5), std::log(0.5)};
    std::array<int, 2> acc_am{}, att_am{};
    std::vector<double> lstep_s2(static_cast<std::size_t>(p), std::log(0.3));
    std::vector<int> acc_s2(static_cast<std::size_t>(p), 0), att_s2(static_cast<std::size_t>(p), 0);
    double lstep_rho = std::log(0.3);
    int acc_rho = 0, att_rho = 0;
    long tot_site = 0, tot_site_acc = 0, tot_om = 0, tot_om_acc = 0, tot_rho = 0, tot_rho_acc = 0;

    const int nmon = 3 + 2 * p;
    out.monitor.assign(static_cast<std::size_t>(nmon), {});

    std::vector<double> prop_cell(static_cast<std::size_t>(p) * M);
    Eigen::VectorXd beta(static_cast<Eigen::Index>(p) * w.K);

    const int total = cfg.burnin + cfg.samples;
    for (int sw = 0; sw < total; ++sw) {
        const bool adapting = sw < cfg.burnin;

        for (int j = 0; j < p; ++j) {
            const double inv_s2 = 1.0 / st.sigma2[static_cast<std::size_t>(j)];
            for (int m = 0; m < M; ++m) {
                Eigen::VectorXd& wv = st.wvec[static_cast<std::size_t>(j) * M + m];
                for (int s = 0; s < n; ++s) {
                    const std::size_t site = dsi(w, s, j, m);
                    ++att[site];
                    ++tot_site;
                    const double cur = st.dstar[site];
                    const double step = std::exp(lstep[site]);
                    const double prop = cur + step * rng.normal();
                    std::copy_n(st.dstar.data() + dsi(w, s, 0, 0), prop_cell.size(), prop_cell.begin());
                    prop_cell[static_cast<std::size_t>(j) * M + m] = prop;
                    std::vector<double> mapped = noncrossing_map(prop_cell, p, M);
                    if (!mono_ok_cell(w, mapped)) continue;
                    stack_beta(w, mapped, beta);
                    const double ll = cell_loglik(w, s, beta);
                    const double d = prop - cur;
                    const double dq = 2.0 * d * wv(s) + d * d * st.rinv[static_cast<std::size_t>(j)](s, s);
                    const double lr = ll - st.loglik[static_cast<std::size_t>(s)] - 0.5 * inv_s2 * dq;
                    if (std::log(rng.uniform()) < lr) {
                        st.dstar[site] = prop;
                        st.loglik[static_cast<std::size_t>(s)] = ll;
                        st.qform[static_cast<std::size_t>(j)] =
                            std::max(st.qform[static_cast<std::size_t>(j)] + dq, 0.0);
                        wv += d * st.rinv[static_cast<std::size_t>(j)].col(s);
                        ++acc[site];
                        ++tot_site_acc;
                    }
                }
            }
        }

        // base-parameter updates, one component at a time: a prior-residual move
        // (field fixed) and a recentring move (intercept field shifts with the
        // base curve so prior residuals stay fixed)
        auto hyper_delta = [&](const std::array<double, 3>& prop) {
            const double ln = std::log(prop[1]), lo = std::log(st.omega[1]);
            double d = -0.5 * (prop[0] * prop[0] - st.omega[0] * st.omega[0]) / (cfg.psi1_sd * cfg.psi1_sd);
            d += -0.5 * (ln * ln - lo * lo) / (cfg.psi2_lsd * cfg.psi2_lsd);
            d += -0.5 * (prop[2] * prop[2] - st.omega[2] * st.omega[2]) / (cfg.psi3_sd * cfg.psi3_sd);
            return d;
        };
        for (int flavor = 0; flavor < 2; ++flavor) {
            for (int comp = 0; comp < 4; ++comp) {
                const bool joint = comp == 3;
                if (joint && !om_chol_ready) continue;
                const std::size_t slot = static_cast<std::size_t>(3 * flavor + comp);
                if (joint) ++att_am[static_cast<std::size_t>(flavor)];
                else ++att_om[slot];
                ++tot_om;
                std::array<double, 3> prop = st.omega;
                if (joint) {
                    const Eigen::Vector3d z(rng.normal(), rng.normal(), rng.normal());
                    const Eigen::Vector3d d = std::exp(lstep_am[static_cast<std::size_t>(flavor)]) * (om_chol * z);
                    prop[0] += d(0);
                    prop[1] = std::exp(std::log(st.omega[1]) + d(1));
                    prop[2] += d(2);
                } else {
                    const double step = std::exp(lstep_om[slot]);
                    if (comp == 1) prop[1] = std::exp(std::log(st.omega[1]) + step * rng.normal());
                    else prop[static_cast<std::size_t>(comp)] += step * rng.normal();
                }
                if (prop[1] < 1e-4 || prop[1] > 1e4) continue;
                std::vector<double> dbar_p = center_on_base(SkewNormal{prop[0], prop[1], prop[2]},
                                                            cfg.model.grid, M);
                if (flavor == 0) {
                    Eigen::VectorXd v(n);
                    double qp = 0.0;
                    for (int m = 0; m < M; ++m) {
                        for (int s = 0; s < n; ++s)
                            v(s) = st.dstar[dsi(w, s, 0, m)] - dbar_p[static_cast<std::size_t>(m)];
                        qp += v.dot(st.rinv[0] * v);
                    }
                    const double lr = -0.5 / st.sigma2[0] * (qp - st.qform[0]) + hyper_delta(prop);
                    if (std::log(rng.uniform()) < lr) {
                        st.omega = prop;
                        st.dbar1 = std::move(dbar_p);
                        refresh_wq(w, st, 0);
                        if (joint) ++acc_am[static_cast<std::size_t>(flavor)];
                        else ++acc_om[slot];
                        ++tot_om_acc;
                    }
                } else {
                    std::vector<double> shift(static_cast<std::size_t>(M));
                    for (int m = 0; m < M; ++m)
                        shift[static_cast<std::size_t>(m)] =
                            dbar_p[static_cast<std::size_t>(m)] - st.dbar1[static_cast<std::size_t>(m)];
                    std::vector<double> ll_new(static_cast<std::size_t>(n));
                    bool ok = true;
                    double dll = 0.0;
                    for (int s = 0; s < n && ok; ++s) {
                        std::copy_n(st.dstar.data() + dsi(w, s, 0, 0), prop_cell.size(), prop_cell.begin());
                        for (int m = 0; m < M; ++m)
                            prop_cell[static_cast<std::size_t>(m)] += shift[static_cast<std::size_t>(m)];
                        std::vector<double> mapped = noncrossing_map(prop_cell, p, M);
                        if (!mono_ok_cell(w, mapped)) { ok = false; break; }
                        stack_beta(w, mapped, beta);
                        ll_new[static_cast<std::size_t>(s)] = cell_loglik(w, s, beta);
                        dll += ll_new[static_cast<std::size_t>(s)] - st.loglik[static_cast<std::size_t>(s)];
                    }
                    if (!ok) continue;
                    const double lr = dll + hyper_delta(prop);
                    if (std::log(rng.uniform()) < lr) {
                        for (int s = 0; s < n; ++s)
                            for (int m = 0; m < M; ++m)
                                st.dstar[dsi(w, s, 0, m)] += shift[static_cast<std::size_t>(m)];
                        st.omega = prop;
                        st.dbar1 = std::move(dbar_p);
                        st.loglik = std::move(ll_new);
                        if (joint) ++acc_am[static_cast<std::size_t>(flavor)];
                        else ++acc_om[slot];
                        ++tot_om_acc;
                    }
                }
            }
        }

        if (adapting) {
            const Eigen::Vector3d x(st.omega[0], std::log(st.omega[1]), st.omega[2]);
            om_sum += x;
            om_sumsq += x * x.transpose();
            ++om_count;
            if (om_count >= 200 && (sw + 1) % 100 == 0) {
                const Eigen::Vector3d mu = om_sum / static_cast<double>(om_count);
                Eigen::Matrix3d cov = om_sumsq / static_cast<double>(om_count) - mu * mu.transpose();
                cov = (2.38 * 2.38 / 3.0) * cov + 1e-10 * Eigen::Matrix3d::Identity();
                Eigen::LLT<Eigen::Matrix3d> llt(cov);
                if (llt.info() == Eigen::Success) {
                    om_chol = llt.matrixL();
                    om_chol_ready = true;
                }
            }
        }

        for (int j = 0; j < p; ++j) {
            const double shape = cfg.a_sigma + 0.5 * n * M;
            const double rate = cfg.b_sigma + 0.5 * st.qform[static_cast<std::size_t>(j)];
            st.sigma2[static_cast<std::size_t>(j)] = std::max(rate / rng.gamma(shape), 1e-8);
        }

        // non-centered companion for the variances: rescale the residual field
        // with the variance so the standardized field is held fixed; Jacobian
        // cancels against the prior, leaving likelihood and hyperprior terms
        for (int j = 0; j < p; ++j) {
            const std::size_t slot = static_cast<std::size_t>(j);
            ++att_s2[slot];
            const double cur = st.sigma2[slot];
            const double prop = cur * std::exp(std::exp(lstep_s2[slot]) * rng.normal());
            if (prop < 1e-8 || prop > 1e6) continue;
            const double c = std::sqrt(prop / cur);
            std::vector<double> ll_new(static_cast<std::size_t>(n));
            bool ok = true;
            double dll = 0.0;
            for (int s = 0; s < n && ok; ++s) {
                std::copy_n(st.dstar.data() + dsi(w, s, 0, 0), prop_cell.size(), prop_cell.begin());
                for (int m = 0; m < M; ++m) {
                    const double mu = prior_mean(st, j, m);
                    double& x = prop_cell[static_cast<std::size_t>(j) * M + m];
                    x = mu + c * (x - mu);
                }
                std::vector<double> mapped = noncrossing_map(prop_cell, p, M);
                if (!mono_ok_cell(w, mapped)) { ok = false; break; }
                stack_beta(w, mapped, beta);
                ll_new[static_cast<std::size_t>(s)] = cell_loglik(w, s, beta);
                dll += ll_new[static_cast<std::size_t>(s)] - st.loglik[static_cast<std::size_t>(s)];
            }
            if (!ok) continue;
            double lr = dll - cfg.a_sigma * std::log(prop / cur) - cfg.b_sigma * (1.0 / prop - 1.0 / cur);
            if (std::log(rng.uniform()) < lr) {
                for (int s = 0; s < n; ++s)
                    for (int m = 0; m < M; ++m) {
                        const double mu = prior_mean(st, j, m);
                        double& x = st.dstar[dsi(w, s, j, m)];
                        x = mu + c * (x - mu);
                    }
                st.sigma2[slot] = prop;
                st.loglik = std::move(ll_new);
                st.qform[slot] *= c * c;
                for (int m = 0; m < M; ++m) st.wvec[slot * M + m] *= c;
                ++acc_s2[slot];
            }
        }

        for (int j = 0; j < p; ++j) {
            ++att_rho;
            ++tot_rho;
            const double cur = st.rho[static_cast<std::size_t>(j)];
            const double prop = cur * std::exp(std::exp(lstep_rho) * rng.normal());
            if (prop < 1e-2 || prop > 1e5) continue;
            Eigen::MatrixXd rinv_p;
            double logdet_p = 0.0;
            corr_factor(w, prop, rinv_p, logdet_p);
            Eigen::VectorXd v(n);
            double qp = 0.0;
            for (int m = 0; m < M; ++m) {
                const double mu = prior_mean(st, j, m);
                for (int s = 0; s < n; ++s) v(s) = st.dstar[dsi(w, s, j, m)] - mu;
                qp += v.dot(rinv_p * v);
            }
            double lr = -0.5 * M * (logdet_p - st.logdet[static_cast<std::size_t>(j)]);
            lr += -0.5 / st.sigma2[static_cast<std::size_t>(j)] * (qp - st.qform[static_cast<std::size_t>(j)]);
            lr += cfg.a_rho * std::log(prop / cur) - cfg.b_rho * (prop - cur);
            if (std::log(rng.uniform()) < lr) {
                st.rho[static_cast<std::size_t>(j)] = prop;
                st.rinv[static_cast<std::size_t>(j)] = std::move(rinv_p);
                st.logdet[static_cast<std::size_t>(j)] = logdet_p;
                refresh_wq(w, st, j);
                ++acc_rho;
                ++tot_rho_acc;
            }
        }

        if (adapting && (sw + 1) % 50 == 0) {
            const double mv = std::min(0.25, 4.0 / std::sqrt(static_cast<double>(sw + 1)));
            for (std::size_t i = 0; i < lstep.size(); ++i) {
                if (att[i] == 0) continue;
                const double rate = static_cast<double>(acc[i]) / att[i];
                lstep[i] += (rate > 0.44 ? mv : -mv);
                acc[i] = att[i] = 0;
            }
            for (std::size_t slot = 0; slot < lstep_om.size(); ++slot) {
                if (att_om[slot] == 0) continue;
                lstep_om[slot] += (static_cast<double>(acc_om[slot]) / att_om[slot] > 0.30 ? mv : -mv);
                acc_om[slot] = att_om[slot] = 0;
            }
            for (std::size_t slot = 0; slot < lstep_s2.size(); ++slot) {
                if (att_s2[slot] == 0) continue;
                lstep_s2[slot] += (static_cast<double>(acc_s2[slot]) / att_s2[slot] > 0.30 ? mv : -mv);
                acc_s2[slot] = att_s2[slot] = 0;
            }
            for (std::size_t slot = 0; slot < lstep_am.size(); ++slot) {
                if (att_am[slot] == 0) continue;
                lstep_am[slot] += (static_cast<double>(acc_am[slot]) / att_am[slot] > 0.30 ? mv : -mv);
                acc_am[slot] = att_am[slot] = 0;
            }
            if (att_rho > 0) {
                lstep_rho += (static_cast<double>(acc_rho) / att_rho > 0.44 ? mv : -mv);
                acc_rho = att_rho = 0;
            }
        }

        // guard against cache drift from the incremental updates
        for (int j = 0; j < p; ++j) refresh_wq(w, st, j);
        refresh_loglik(w, st);

        if (!adapting) {
            int mi = 0;
            out.monitor[static_cast<std::size_t>(mi++)].push_back(st.omega[0]);
            out.monitor[static_cast<std::size_t>(mi++)].push_back(st.omega[1]);
            out.monitor[static_cast<std::size_t>(mi++)].push_back(st.omega[2]);
            for (int j = 0; j < p; ++j) out.monitor[static_cast<std::size_t>(mi++)].push_back(st.sigma2[static_cast<std::size_t>(j)]);
            for (int j = 0; j < p; ++j) out.monitor[static_cast<std::size_t>(mi++)].push_back(st.rho[static_cast<std::size_t>(j)]);
            const int k = sw - cfg.burnin;
            if ((k + 1) % cfg.thin == 0)
                out.draws.push_back(Stage2Draw{st.dstar, st.omega, st.sigma2, st.rho});
        }
    }

    out.accept_site = tot_site ? static_cast<double>(tot_site_acc) / tot_site : 0.0;
    out.accept_omega = tot_om ? static_cast<double>(tot_om_acc) / tot_om : 0.0;
    out.accept_rho = tot_rho ? static_cast<double>(tot_rho_acc) / tot_rho : 0.0;
}

} // namespace

void Stage2Config::validate() const {
    model.validate();
    if (chains < 2) throw std::invalid_argument("Stage2Config: need at least 2 chains");
    if (burnin < 1 || samples < 1 || thin < 1)
        throw std::invalid_argument("Stage2Config: burnin, samples, thin must be positive");
    if (a_sigma <= 0 || b_sigma <= 0 || a_rho <= 0 || b_rho <= 0)
        throw std::invalid_argument("Stage2Config: hyperprior constants must be positive");
    if (psi1_sd <= 0 || psi2_lsd <= 0 || psi3_sd <= 0)
        throw std::invalid_argument("Stage2Config: base prior sds must be positive");
}

std::vector<double> repair_monotone_start(const std::vector<double>& delta_cell, int p, int M,
                                          const std::vector<double>& fine_G, int mono_from) {
    const int F = static_cast<int>(fine_G.size()) / M;
    std::vector<double> out = delta_cell;
    std::vector<double> mapped = noncrossing_map(out, p, M);
    double lift = 0.0;
    for (int f = mono_from; f + 1 < F; ++f) {
        const double* G0 = fine_G.data() + static_cast<std::size_t>(f) * M;
        const double* G1 = fine_G.data() + static_cast<std::size_t>(f + 1) * M;
        double worst = 0.0;
        for (int j = 0; j < p; ++j) {
            const double* dj = mapped.data() + static_cast<std::size_t>(j) * M;
            double dq = 0.0;
            for (int m = 0; m < M; ++m) dq += (G1[m] - G0[m]) * dj[m];
            if (j == 0) worst += dq;
            else worst += std::min(dq, 0.0);
        }
        if (worst < 0.0) lift = std::max(lift, -worst / (G1[0] - G0[0]));
    }
    if (lift > 0.0) out[0] += lift + 1e-9;
    return out;
}

BsqrPosterior::BsqrPosterior(Stage2Config cfg, int n_cells, int p,
                             std::vector<Stage2Draw> draws, Stage2Diagnostics diag)
    : cfg_(std::move(cfg)), n_(n_cells), p_(p), draws_(std::move(draws)), diag_(std::move(diag)) {
    if (draws_.empty()) throw std::invalid_argument("BsqrPosterior: no draws");
    const std::size_t len = static_cast<std::size_t>(n_) * p_ * cfg_.model.M;
    std::vector<double> mean(len, 0.0);
    for (const Stage2Draw& d : draws_) {
        if (d.delta_star.size() != len) throw std::invalid_argument("BsqrPosterior: draw size mismatch");
        for (std::size_t i = 0; i < len; ++i) mean[i] += d.delta_star[i] / draws_.size();
    }
    auto admissible = [&](const std::vector<double>& ds) {
        BsqrModel m(cfg_.model, n_, p_, ds);
        for (int s = 0; s < n_; ++s)
            if (!m.monotone_ok(s)) return false;
        return true;
    };
    if (admissible(mean)) {
        mean_ = std::make_shared<BsqrModel>(cfg_.model, n_, p_, mean);
        return;
    }
    // every kept draw is admissible by construction, take the closest one
    std::size_t best = 0;
    double bestd = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < draws_.size(); ++g) {
        double d2 = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            const double d = draws_[g].delta_star[i] - mean[i];
            d2 += d * d;
        }
        if (d2 < bestd) { bestd = d2; best = g; }
    }
    mean_ = std::make_shared<BsqrModel>(cfg_.model, n_, p_, draws_[best].delta_star);
}

BsqrModel BsqrPosterior::draw_model(int g) const {
    return BsqrModel(cfg_.model, n_, p_, draws_.at(static_cast<std::size_t>(g)).delta_star);
}

BsqrPosterior fit_stage2(const std::vector<Stage1Fit>& fits, const GridDomain& domain,
                         const Stage2Config& cfg) {
    cfg.validate();
    const int n = domain.n();
    if (static_cast<int>(fits.size()) != n)
        throw std::invalid_argument("fit_stage2: one stage-1 fit per cell required");
    if (n < 1) throw std::invalid_argument("fit_stage2: empty domain");
    const int p = fits[0].p, K = fits[0].K;
    if (K != cfg.model.grid.K())
        throw std::invalid_argument("fit_stage2: stage-1 grid does not match the model grid");
    for (const Stage1Fit& f : fits)
        if (f.p != p || f.K != K) throw std::invalid_argument("fit_stage2: inconsistent stage-1 fits");

    Workspace w;
    w.n = n;
    w.p = p;
    w.M = cfg.model.M;
    w.K = K;
    w.cfg = &cfg;
    const int nfine = static_cast<int>(std::lround((cfg.model.tau_max - cfg.model.tau_min) / cfg.model.mono_step)) + 1;
    w.fine_tau.resize(static_cast<std::size_t>(nfine));
    for (int f = 0; f < nfine; ++f)
        w.fine_tau[static_cast<std::size_t>(f)] = std::min(cfg.model.tau_max, cfg.model.tau_min + cfg.model.mono_step * f);
    w.F = nfine;
    w.mono_from = 0;
    while (w.mono_from + 1 < nfine && w.fine_tau[static_cast<std::size_t>(w.mono_from)] < cfg.model.mono_lo - 1e-12)
        ++w.mono_from;
    w.fine_G = cumulative_design(w.fine_tau, w.M);
    w.grid_G = cumulative_design(cfg.model.grid.levels, w.M);

    const Eigen::Index pk = static_cast<Eigen::Index>(p) * K;
    w.bhat.resize(static_cast<std::size_t>(n));
    w.prec.resize(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s) {
        w.bhat[static_cast<std::size_t>(s)] =
            Eigen::Map<const Eigen::VectorXd>(fits[static_cast<std::size_t>(s)].beta.data(), pk);
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> S(
            fits[static_cast<std::size_t>(s)].sigma.data(), pk, pk);
        Eigen::MatrixXd Sd = S;
        Eigen::LLT<Eigen::MatrixXd> llt(Sd);
        double jit = 1e-10 * Sd.diagonal().mean();
        while (llt.info() != Eigen::Success) {
            Sd.diagonal().array() += jit;
            jit *= 10.0;
            if (jit > Sd.diagonal().mean()) throw std::runtime_error("fit_stage2: stage-1 covariance not invertible");
            llt.compute(Sd);
        }
        w.prec[static_cast<std::size_t>(s)] = llt.solve(Eigen::MatrixXd::Identity(pk, pk));
    }
    w.dist.resize(n, n);
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) w.dist(a, b) = domain.dist_km(a, b);

    std::vector<ChainOut> outs(static_cast<std::size_t>(cfg.chains));
    parallel_for(static_cast<std::size_t>(cfg.chains), cfg.jobs, [&](std::size_t b, std::size_t e) {
        for (std::size_t c = b; c < e; ++c) run_chain(w, static_cast<int>(c), outs[c]);
    });

    Stage2Diagnostics diag;
    diag.names = {"psi1", "psi2", "psi3"};
    for (int j = 0; j < p; ++j) diag.names.push_back("sigma2_" + std::to_string(j));
    for (int j = 0; j < p; ++j) diag.names.push_back("rho_" + std::to_string(j));
    diag.converged = true;
    for (std::size_t q = 0; q < diag.names.size(); ++q) {
        std::vector<std::vector<double>> per_chain;
        for (const ChainOut& o : outs) per_chain.push_back(o.monitor[q]);
        const double r = split_rhat(per_chain);
        diag.rhat.push_back(r);
        if (!(r < cfg.rhat_tol)) diag.converged = false;
    }
    for (const ChainOut& o : outs) {
        diag.accept_site += o.accept_site / cfg.chains;
        diag.accept_omega += o.accept_omega / cfg.chains;
        diag.accept_rho += o.accept_rho / cfg.chains;
        diag.repaired_init += o.repaired;
    }

    std::vector<Stage2Draw> pooled;
    for (ChainOut& o : outs)
        for (Stage2Draw& d : o.draws) pooled.push_back(std::move(d));
    return BsqrPosterior(cfg, n, p, std::move(pooled), std::move(diag));
}

} // namespace heatsim
