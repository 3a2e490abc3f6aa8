#include "heatsim/gev.hpp"

#include "heatsim/mathkit.hpp"
#include "heatsim/parallel.hpp"
#include "heatsim/rng.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace heatsim {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Workspace {
    const SeasonalMaxima* mx = nullptr;
    const GridDomain* dom = nullptr;
    GevConfig cfg;
    int n = 0, p = 0, T = 0, F = 0;
    double m0 = 0, s0 = 0;
    std::vector<int> comp_of;
    std::vector<std::vector<int>> comps; // cell lists per component
    int n_free = 0;                      // n minus component count
};

struct ChainState {
    std::vector<double> glob, sc; // F
    std::vector<double> u;        // F x n
    std::vector<double> quad;     // F
    std::vector<double> cll;      // n
    double total = kNegInf;
};

double global_logprior(const Workspace& w, int f, double x) {
    const auto& c = w.cfg;
    double m = 0.0, sd = 1.0;
    if (f == 0) {
        m = w.m0;
        sd = w.s0;
    } else if (f < w.p) {
        sd = c.slope_mu_sd;
    } else if (f == w.p) {
        m = std::log(w.s0);
        sd = 1.0;
    } else if (f < 2 * w.p) {
        sd = c.slope_sigma_sd;
    } else {
        if (x < c.xi_lo || x > c.xi_hi) return kNegInf;
        sd = c.xi_prior_sd;
    }
    const double z = (x - m) / sd;
    return -0.5 * z * z;
}

double cell_ll(const Workspace& w, const ChainState& st, int s) {
    const int p = w.p, T = w.T;
    double mu_c[8], sg_c[8]; // per-field coefficients at this cell; p <= 8 in practice
    for (int j = 0; j < p; ++j) {
        mu_c[j] = st.glob[j] + st.sc[j] * st.u[static_cast<std::size_t>(j) * w.n + s];
        sg_c[j] = st.glob[p + j] + st.sc[p + j] * st.u[static_cast<std::size_t>(p + j) * w.n + s];
    }
    const double xi = st.glob[2 * p] + st.sc[2 * p] * st.u[static_cast<std::size_t>(2 * p) * w.n + s];
    if (xi < w.cfg.xi_lo || xi > w.cfg.xi_hi) return kNegInf;
    double ll = 0.0;
    for (int t = 0; t < T; ++t) {
        const double* c = w.mx->cov(t);
        double mu = 0.0, lsig = 0.0;
        for (int j = 0; j < p; ++j) {
            mu += c[j] * mu_c[j];
            lsig += c[j] * sg_c[j];
        }
        ll += gev_logpdf(w.mx->at(s, t), mu, std::exp(lsig), xi);
        if (ll == kNegInf) return kNegInf;
    }
    return ll;
}

void refresh_lik(const Workspace& w, ChainState& st) {
    st.total = 0.0;
    for (int s = 0; s < w.n; ++s) {
        st.cll[s] = cell_ll(w, st, s);
        st.total += st.cll[s];
    }
}

void refresh_quad(const Workspace& w, ChainState& st) {
    std::vector<double> uf(w.n);
    for (int f = 0; f < w.F; ++f) {
        std::copy_n(st.u.begin() + static_cast<std::size_t>(f) * w.n, w.n, uf.begin());
        st.quad[f] = icar_quadform(uf, *w.dom);
    }
}

// change in u' S u when cell a moves by da (single-cell edit)
double quad_delta(const Workspace& w, const std::vector<double>& u, int f, int a, double da) {
    const std::size_t off = static_cast<std::size_t>(f) * w.n;
    double d = 0.0;
    for (int k : w.dom->neighbors[a]) {
        const double before = u[off + a] - u[off + k];
        const double after = before + da;
        d += after * after - before * before;
    }
    return d;
}

struct ChainOut {
    std::vector<GevDraw> draws;
    std::vector<std::vector<double>> monitor; // 2F series
    double acc_pair = 0, acc_field = 0, acc_global = 0, acc_scale = 0;
};

ChainOut run_chain(const Workspace& w, int chain_id) {
    const GevConfig& cfg = w.cfg;
    const int n = w.n, p = w.p, F = w.F;
    Rng rng(cfg.seed, static_cast<std::uint64_t>(chain_id) + 101);

    ChainState st;
    st.glob.assign(F, 0.0);
    st.sc.assign(F, 0.0);
    st.u.assign(static_cast<std::size_t>(F) * n, 0.0);
    st.quad.assign(F, 0.0);
    st.cll.assign(n, 0.0);
    const double sig_moment = w.s0 * std::sqrt(6.0) / kPi;
    for (int tries = 0; tries < 2; ++tries) {
        const double j = tries == 0 ? 1.0 : 0.0;
        st.glob[0] = w.m0 - 0.5772 * sig_moment + 0.05 * w.s0 * j * rng.normal();
        for (int f = 1; f < p; ++f) st.glob[f] = 0.05 * j * rng.normal();
        st.glob[p] = std::log(sig_moment) + 0.05 * j * rng.normal();
        for (int f = p + 1; f < 2 * p; ++f) st.glob[f] = 0.02 * j * rng.normal();
        st.glob[2 * p] = std::clamp(0.02 * j * rng.normal(), cfg.xi_lo + 0.01, cfg.xi_hi - 0.01);
        for (int f = 0; f < F; ++f) st.sc[f] = 0.05 * (1.0 + 0.5 * j * rng.uniform());
        refresh_lik(w, st);
        if (std::isfinite(st.total)) break;
        if (tries == 1) throw std::runtime_error("fit_gev_mcmc: initial state outside support");
    }

    // step sizes per move family
    std::vector<double> sp_pair(F, 0.5), sp_field(F, 0.1), sp_gco(F, 0.05), sp_scale(F, 0.3),
        sp_resc(F, 0.3);
    sp_gco[0] = 0.1 * w.s0;
    sp_gco[2 * p] = 0.02;
    double sp_joint = 0.2;
    std::vector<long> acc(5, 0), tot(5, 0);
    std::vector<long> bacc(5 * F + 1, 0), btot(5 * F + 1, 0); // per field + joint, batch window

    // adaptive joint-global proposal
    Eigen::VectorXd gsum = Eigen::VectorXd::Zero(F);
    Eigen::MatrixXd gsumsq = Eigen::MatrixXd::Zero(F, F);
    long gcount = 0;
    Eigen::MatrixXd gchol = Eigen::MatrixXd::Identity(F, F);
    bool have_chol = false;

    const int sweeps = cfg.burnin + cfg.samples;
    ChainOut out;
    out.monitor.assign(2 * F, {});
    auto propose_cell_pair = [&](int f) {
        ++tot[0];
        ++btot[f];
        const int a = static_cast<int>(rng.uniform_index(n));
        const auto& comp = w.comps[w.comp_of[a]];
        if (comp.size() < 2) return;
        int b = a;
        while (b == a) b = comp[rng.uniform_index(comp.size())];
        const double e = sp_pair[f] * rng.normal();
        const std::size_t off = static_cast<std::size_t>(f) * n;
        // two-step delta stays exact when a and b share an edge
        double dq = quad_delta(w, st.u, f, a, e);
        st.u[off + a] += e;
        dq += quad_delta(w, st.u, f, b, -e);
        st.u[off + b] -= e;
        const double la = cell_ll(w, st, a), lb = cell_ll(w, st, b);
        const double lr = la + lb - st.cll[a] - st.cll[b] - 0.5 * dq;
        if (std::log(rng.uniform()) < lr) {
            st.total += la + lb - st.cll[a] - st.cll[b];
            st.cll[a] = la;
            st.cll[b] = lb;
            st.quad[f] += dq;
            ++acc[0];
            ++bacc[f];
        } else {
            st.u[off + a] -= e;
            st.u[off + b] += e;
        }
    };

    std::vector<double> prop(n), old_u(n), old_cll(n);
    auto propose_field = [&](int f) {
        ++tot[1];
        ++btot[F + f];
        const std::size_t off = static_cast<std::size_t>(f) * n;
        for (int s = 0; s < n; ++s) prop[s] = st.u[off + s] + sp_field[f] * rng.normal();
        for (const auto& comp : w.comps) {
            double mean = 0.0;
            for (int s : comp) mean += prop[s];
            mean /= static_cast<double>(comp.size());
            for (int s : comp) prop[s] -= mean;
        }
        const double qnew = icar_quadform(prop, *w.dom);
        std::copy_n(st.u.begin() + off, n, old_u.begin());
        old_cll = st.cll;
        const double old_total = st.total;
        std::copy(prop.begin(), prop.end(), st.u.begin() + off);
        refresh_lik(w, st);
        const double lr = st.total - old_total - 0.5 * (qnew - st.quad[f]);
        if (std::log(rng.uniform()) < lr) {
            st.quad[f] = qnew;
            ++acc[1];
            ++bacc[F + f];
        } else {
            std::copy(old_u.begin(), old_u.end(), st.u.begin() + off);
            st.cll = old_cll;
            st.total = old_total;
        }
    };

    auto propose_global_coord = [&](int f) {
        ++tot[2];
        ++btot[2 * F + f];
        const double e = sp_gco[f] * rng.normal();
        const double lp0 = global_logprior(w, f, st.glob[f]);
        const double lp1 = global_logprior(w, f, st.glob[f] + e);
        if (lp1 == kNegInf) return;
        st.glob[f] += e;
        old_cll = st.cll;
        const double old_total = st.total;
        refresh_lik(w, st);
        const double lr = st.total - old_total + lp1 - lp0;
        if (std::log(rng.uniform()) < lr) {
            ++acc[2];
            ++bacc[2 * F + f];
        } else {
            st.glob[f] -= e;
            st.cll = old_cll;
            st.total = old_total;
        }
    };

    auto propose_global_joint = [&]() {
        if (!have_chol) return;
        ++tot[2];
        ++btot[5 * F];
        Eigen::VectorXd z(F);
        for (int f = 0; f < F; ++f) z[f] = rng.normal();
        Eigen::VectorXd step = sp_joint * (gchol * z);
        double dprior = 0.0;
        for (int f = 0; f < F; ++f) {
            const double lp1 = global_logprior(w, f, st.glob[f] + step[f]);
            if (lp1 == kNegInf) return;
            dprior += lp1 - global_logprior(w, f, st.glob[f]);
        }
        for (int f = 0; f < F; ++f) st.glob[f] += step[f];
        old_cll = st.cll;
        const double old_total = st.total;
        refresh_lik(w, st);
        const double lr = st.total - old_total + dprior;
        if (std::log(rng.uniform()) < lr) {
            ++acc[2];
            ++bacc[5 * F];
        } else {
            for (int f = 0; f < F; ++f) st.glob[f] -= step[f];
            st.cll = old_cll;
            st.total = old_total;
        }
    };

    auto propose_scale = [&](int f) {
        ++tot[3];
        ++btot[3 * F + f];
        const double e = sp_scale[f] * rng.normal();
        const double s_old = st.sc[f], s_new = s_old * std::exp(e);
        st.sc[f] = s_new;
        old_cll = st.cll;
        const double old_total = st.total;
        refresh_lik(w, st);
        // HalfNormal(1) prior plus the log-scale Jacobian
        const double lr = st.total - old_total - 0.5 * (s_new * s_new - s_old * s_old) + e;
        if (std::log(rng.uniform()) < lr) {
            ++acc[3];
            ++bacc[3 * F + f];
        } else {
            st.sc[f] = s_old;
            st.cll = old_cll;
            st.total = old_total;
        }
    };

    // gamma-preserving rescale (s, u) -> (cs, u/c); likelihood unchanged
    auto propose_rescale = [&](int f) {
        ++tot[3];
        ++btot[4 * F + f];
        const double e = sp_resc[f] * rng.normal();
        const double c = std::exp(e);
        const double s_old = st.sc[f], s_new = s_old * c;
        const double q_old = st.quad[f], q_new = q_old / (c * c);
        const double lr = -0.5 * (s_new * s_new - s_old * s_old) - 0.5 * (q_new - q_old) +
                          (1.0 - w.n_free) * e;
        if (std::log(rng.uniform()) < lr) {
            st.sc[f] = s_new;
            const std::size_t off = static_cast<std::size_t>(f) * n;
            for (int s = 0; s < n; ++s) st.u[off + s] /= c;
            st.quad[f] = q_new;
            ++acc[3];
            ++bacc[4 * F + f];
        }
    };

    const int keep_every = std::max(1, cfg.thin);
    for (int sw = 0; sw < sweeps; ++sw) {
        for (int f = 0; f < F; ++f)
            for (int r = 0; r < n; ++r) propose_cell_pair(f);
        for (int f = 0; f < F; ++f) propose_field(f);
        for (int f = 0; f < F; ++f) propose_global_coord(f);
        propose_global_joint();
        for (int f = 0; f < F; ++f) {
            propose_scale(f);
            propose_rescale(f);
        }
        refresh_quad(w, st);
        refresh_lik(w, st);

        const bool in_burn = sw < cfg.burnin;
        if (in_burn) {
            if (sw >= 200) {
                Eigen::Map<const Eigen::VectorXd> g(st.glob.data(), F);
                gsum += g;
                gsumsq += g * g.transpose();
                ++gcount;
            }
            if (gcount >= 20 * F && sw % 100 == 99) {
                Eigen::VectorXd mean = gsum / static_cast<double>(gcount);
                Eigen::MatrixXd cov =
                    gsumsq / static_cast<double>(gcount) - mean * mean.transpose();
                cov = (2.38 * 2.38 / F) * cov;
                cov.diagonal().array() += 1e-12;
                Eigen::LLT<Eigen::MatrixXd> llt(cov);
                if (llt.info() == Eigen::Success) {
                    gchol = llt.matrixL();
                    have_chol = true;
                }
            }
            if (sw % 50 == 49) {
                const double mv = std::min(0.25, 4.0 / std::sqrt(sw + 1.0));
                auto tune = [&](double& s, long a, long t, double target) {
                    if (t == 0) return;
                    const double r = static_cast<double>(a) / t;
                    s *= std::exp(r > target ? mv : -mv);
                };
                for (int f = 0; f < F; ++f) {
                    tune(sp_pair[f], bacc[f], btot[f], 0.44);
                    tune(sp_field[f], bacc[F + f], btot[F + f], 0.25);
                    tune(sp_gco[f], bacc[2 * F + f], btot[2 * F + f], 0.44);
                    tune(sp_scale[f], bacc[3 * F + f], btot[3 * F + f], 0.44);
                    tune(sp_resc[f], bacc[4 * F + f], btot[4 * F + f], 0.44);
                }
                tune(sp_joint, bacc[5 * F], btot[5 * F], 0.30);
                std::fill(bacc.begin(), bacc.end(), 0);
                std::fill(btot.begin(), btot.end(), 0);
            }
        } else {
            for (int f = 0; f < F; ++f) {
                out.monitor[f].push_back(st.glob[f]);
                out.monitor[F + f].push_back(st.sc[f]);
            }
            const int k = sw - cfg.burnin;
            if (k % keep_every == keep_every - 1) {
                GevDraw d;
                d.global = st.glob;
                d.scale = st.sc;
                d.u = st.u;
                out.draws.push_back(std::move(d));
            }
        }
    }
    out.acc_pair = tot[0] ? static_cast<double>(acc[0]) / tot[0] : 0.0;
    out.acc_field = tot[1] ? static_cast<double>(acc[1]) / tot[1] : 0.0;
    out.acc_global = tot[2] ? static_cast<double>(acc[2]) / tot[2] : 0.0;
    out.acc_scale = tot[3] ? static_cast<double>(acc[3]) / tot[3] : 0.0;
    return out;
}

std::string field_name(int f, int p) {
    if (f < p) return "mu" + std::to_string(f);
    if (f == p) return "lsigma0";
    if (f < 2 * p) return "sigma" + std::to_string(f - p);
    return "xi";
}

} // namespace

GevFieldModel fit_gev_mcmc(const SeasonalMaxima& maxima, const GridDomain& domain,
                           const GevConfig& cfg) {
    maxima.validate();
    cfg.validate();
    if (domain.n() != maxima.n) throw std::invalid_argument("fit_gev_mcmc: domain/maxima mismatch");

    Workspace w;
    w.mx = &maxima;
    w.dom = &domain;
    w.cfg = cfg;
    w.n = maxima.n;
    w.p = maxima.p;
    w.T = maxima.T;
    w.F = 2 * maxima.p + 1;
    double s = 0.0, ss = 0.0;
    for (double v : maxima.m) {
        s += v;
        ss += v * v;
    }
    const double N = static_cast<double>(maxima.m.size());
    w.m0 = s / N;
    w.s0 = std::sqrt(std::max(ss / N - w.m0 * w.m0, 1e-12));

    w.comp_of.assign(w.n, -1);
    for (int start = 0; start < w.n; ++start) {
        if (w.comp_of[start] >= 0) continue;
        const int c = static_cast<int>(w.comps.size());
        w.comps.push_back({});
        std::vector<int> stack{start};
        w.comp_of[start] = c;
        while (!stack.empty()) {
            const int a = stack.back();
            stack.pop_back();
            w.comps[c].push_back(a);
            for (int k : domain.neighbors[a])
                if (w.comp_of[k] < 0) {
                    w.comp_of[k] = c;
                    stack.push_back(k);
                }
        }
    }
    w.n_free = w.n - static_cast<int>(w.comps.size());

    std::vector<ChainOut> outs(cfg.chains);
    parallel_for(cfg.chains, cfg.jobs, [&](int b, int e) {
        for (int c = b; c < e; ++c) outs[c] = run_chain(w, c);
    });

    GevDiagnostics diag;
    diag.m0 = w.m0;
    diag.s0 = w.s0;
    for (int f = 0; f < w.F; ++f) diag.names.push_back("g_" + field_name(f, w.p));
    for (int f = 0; f < w.F; ++f) diag.names.push_back("s_" + field_name(f, w.p));
    diag.converged = true;
    for (std::size_t q = 0; q < diag.names.size(); ++q) {
        std::vector<std::vector<double>> per_chain;
        for (const auto& o : outs) per_chain.push_back(o.monitor[q]);
        const double r = split_rhat(per_chain);
        diag.rhat.push_back(r);
        if (!(r < cfg.rhat_tol)) diag.converged = false;
    }
    for (const auto& o : outs) {
        diag.accept_pair += o.acc_pair / cfg.chains;
        diag.accept_field += o.acc_field / cfg.chains;
        diag.accept_global += o.acc_global / cfg.chains;
        diag.accept_scale += o.acc_scale / cfg.chains;
    }
    std::vector<GevDraw> pooled;
    for (auto& o : outs)
        for (auto& d : o.draws) pooled.push_back(std::move(d));
    return GevFieldModel(w.n, w.p, cfg, std::move(pooled), std::move(diag));
}

} // namespace heatsim
