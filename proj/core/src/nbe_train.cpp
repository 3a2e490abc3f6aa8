#include "heatsim/nbe_train.hpp"

#include "heatsim/digest.hpp"
#include "heatsim/mathkit.hpp"
#include "heatsim/parallel.hpp"
#include "heatsim/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace heatsim {

std::uint64_t TrainingSet::digest() const {
    Fnv64 f;
    const int meta[4] = {years, n_train, n_val, n_holdout};
    f.update(meta, sizeof(meta));
    f.update(&seed, sizeof(seed));
    f.update(x.data(), x.size() * sizeof(float));
    f.update(y.data(), y.size() * sizeof(float));
    f.update(ok.data(), ok.size());
    return f.value();
}

namespace {

std::uint64_t gen_header_digest(const PriorBox& box, const GridDomain& domain, int D,
                                const GenerateConfig& cfg) {
    Fnv64 f;
    f.update(box.lo.data(), sizeof(box.lo));
    f.update(box.hi.data(), sizeof(box.hi));
    f.update(domain.xkm.data(), domain.xkm.size() * sizeof(double));
    f.update(domain.ykm.data(), domain.ykm.size() * sizeof(double));
    const int meta[5] = {D, cfg.years, cfg.n_train, cfg.n_val, cfg.n_holdout};
    f.update(meta, sizeof(meta));
    f.update(&cfg.seed, sizeof(cfg.seed));
    f.update(cfg.summary.thresholds.data(), cfg.summary.thresholds.size() * sizeof(double));
    const int smeta[2] = {cfg.summary.L, cfg.summary.max_lag};
    f.update(smeta, sizeof(smeta));
    return f.value();
}

constexpr char kCkptMagic[8] = {'H', 'S', 'T', 'S', 'E', 'T', '1', '\0'};

void save_checkpoint(const std::string& path, std::uint64_t header, const TrainingSet& set,
                     const std::vector<std::uint8_t>& done) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("training-set checkpoint: cannot open " + tmp);
        out.write(kCkptMagic, 8);
        out.write(reinterpret_cast<const char*>(&header), sizeof(header));
        const std::uint64_t count = done.size();
        out.write(reinterpret_cast<const char*>(&count), sizeof(count));
        out.write(reinterpret_cast<const char*>(done.data()), done.size());
        out.write(reinterpret_cast<const char*>(set.ok.data()), set.ok.size());
        out.write(reinterpret_cast<const char*>(set.x.data()), set.x.size() * sizeof(float));
        out.write(reinterpret_cast<const char*>(set.y.data()), set.y.size() * sizeof(float));
        if (!out) throw std::runtime_error("training-set checkpoint: write failed");
    }
    std::rename(tmp.c_str(), path.c_str());
}

bool load_checkpoint(const std::string& path, std::uint64_t header, TrainingSet& set,
                     std::vector<std::uint8_t>& done) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    char magic[8];
    in.read(magic, 8);
    if (std::memcmp(magic, kCkptMagic, 8) != 0) return false;
    std::uint64_t h = 0, count = 0;
    in.read(reinterpret_cast<char*>(&h), sizeof(h));
    in.read(reinterpret_cast<char*>(&count), sizeof(count));
    if (h != header || count != done.size()) return false;
    in.read(reinterpret_cast<char*>(done.data()), done.size());
    in.read(reinterpret_cast<char*>(set.ok.data()), set.ok.size());
    in.read(reinterpret_cast<char*>(set.x.data()), set.x.size() * sizeof(float));
    in.read(reinterpret_cast<char*>(set.y.data()), set.y.size() * sizeof(float));
    return static_cast<bool>(in);
}

// one sample: prior draw, simulate, summarize; returns false on simulation failure
bool make_sample(const PriorBox& box, const GridDomain& domain, int D, const GenerateConfig& cfg,
                 int i, float* xrow, float* yrow) {
    Rng prior_rng(cfg.seed, static_cast<std::uint64_t>(i) * 2 + 11);
    const DepParams params = box.sample(prior_rng);
    const auto norm = box.normalize(params);
    for (int j = 0; j < 8; ++j) yrow[j] = static_cast<float>(norm[j]);
    try {
        YearSimulator sim(domain, D, params);
        UniformField U;
        U.n = domain.n();
        U.D = D;
        U.T = cfg.years;
        U.values.resize(static_cast<std::size_t>(U.n) * D * cfg.years);
        const std::uint64_t sim_seed = mix64(cfg.seed) ^ mix64(static_cast<std::uint64_t>(i) * 2 + 12);
        for (int t = 0; t < cfg.years; ++t) {
            const std::vector<double> u = sim.uniform_year(sim_seed, t);
            for (int s = 0; s < U.n; ++s)
                for (int d = 0; d < D; ++d) U.at(s, d, t) = u[static_cast<std::size_t>(s) * D + d];
        }
        const SummaryBundle b = summarize(U, domain, cfg.summary);
        const std::vector<double> flat = b.flat();
        for (std::size_t k = 0; k < flat.size(); ++k) xrow[k] = static_cast<float>(flat[k]);
        return true;
    } catch (const std::exception&) {
        return false;
    }
}

} // namespace

TrainingSet generate_training_set(const PriorBox& box, const GridDomain& domain, int D,
                                  const GenerateConfig& cfg) {
    if (cfg.years < 20) throw std::invalid_argument("generate_training_set: years < 20");
    if (cfg.n_train < 1 || cfg.n_val < 0 || cfg.n_holdout < 0)
        throw std::invalid_argument("generate_training_set: bad split sizes");
    cfg.summary.validate();

    TrainingSet set;
    set.shape = BundleShape::from(cfg.summary);
    set.years = cfg.years;
    set.seed = cfg.seed;
    set.n_train = cfg.n_train;
    set.n_val = cfg.n_val;
    set.n_holdout = cfg.n_holdout;
    const int count = set.count();
    const std::size_t flat = set.shape.flat_len();
    set.x.assign(static_cast<std::size_t>(count) * flat, 0.0f);
    set.y.assign(static_cast<std::size_t>(count) * 8, 0.0f);
    set.ok.assign(count, 0);

    std::vector<std::uint8_t> done(count, 0);
    const std::uint64_t header = gen_header_digest(box, domain, D, cfg);
    if (!cfg.checkpoint_path.empty()) load_checkpoint(cfg.checkpoint_path, header, set, done);

    const int block = std::max(1, cfg.checkpoint_every);
    for (int lo = 0; lo < count; lo += block) {
        const int hi = std::min(count, lo + block);
        bool all_done = true;
        for (int i = lo; i < hi; ++i)
            if (!done[i]) all_done = false;
        if (all_done) continue;
        parallel_for(hi - lo, cfg.jobs, [&](int b, int e) {
            for (int k = b; k < e; ++k) {
                const int i = lo + k;
                if (done[i]) continue;
                float* xrow = set.x.data() + static_cast<std::size_t>(i) * flat;
                float* yrow = set.y.data() + static_cast<std::size_t>(i) * 8;
                set.ok[i] = make_sample(box, domain, D, cfg, i, xrow, yrow) ? 1 : 0;
                done[i] = 1;
            }
        });
        if (!cfg.checkpoint_path.empty()) save_checkpoint(cfg.checkpoint_path, header, set, done);
    }
    for (int i = 0; i < count; ++i)
        if (!set.ok[i]) set.skipped.push_back(i);
    return set;
}

TrainCurves train(EstimatorNet& net, const TrainingSet& set, const TrainConfig& cfg) {
    if (net.shape() != set.shape) throw std::invalid_argument("train: net/set shape mismatch");
    const std::size_t flat = set.shape.flat_len();
    std::vector<int> tr, va;
    for (int i = 0; i < set.n_train; ++i)
        if (set.ok[i]) tr.push_back(i);
    for (int i = set.n_train; i < set.n_train + set.n_val; ++i)
        if (set.ok[i]) va.push_back(i);
    if (tr.empty() || va.empty()) throw std::invalid_argument("train: empty train or val split");

    std::vector<float> bx(static_cast<std::size_t>(cfg.batch) * flat);
    std::vector<float> by(static_cast<std::size_t>(cfg.batch) * 8);
    auto fill = [&](const std::vector<int>& idx, std::size_t from, int m) {
        for (int r = 0; r < m; ++r) {
            const int i = idx[from + r];
            std::memcpy(bx.data() + static_cast<std::size_t>(r) * flat,
                        set.x.data() + static_cast<std::size_t>(i) * flat, flat * sizeof(float));
            std::memcpy(by.data() + static_cast<std::size_t>(r) * 8,
                        set.y.data() + static_cast<std::size_t>(i) * 8, 8 * sizeof(float));
        }
    };
    auto eval_split = [&](const std::vector<int>& idx) {
        double loss = 0.0;
        std::size_t at = 0;
        while (at < idx.size()) {
            const int m = static_cast<int>(std::min<std::size_t>(cfg.batch, idx.size() - at));
            fill(idx, at, m);
            loss += net.eval_batch(bx.data(), by.data(), m) * m;
            at += m;
        }
        return loss / static_cast<double>(idx.size());
    };

    TrainCurves curves;
    EstimatorNet best = net;
    double best_val = eval_split(va);
    int best_epoch = -1, stall = 0;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        Rng shuffle_rng(cfg.seed, static_cast<std::uint64_t>(epoch) + 1000);
        for (std::size_t i = tr.size(); i > 1; --i)
            std::swap(tr[i - 1], tr[shuffle_rng.uniform_index(i)]);
        double tl = 0.0;
        std::size_t at = 0;
        while (at < tr.size()) {
            const int m = static_cast<int>(std::min<std::size_t>(cfg.batch, tr.size() - at));
            fill(tr, at, m);
            tl += net.train_batch(bx.data(), by.data(), m, cfg.lr) * m;
            at += m;
        }
        tl /= static_cast<double>(tr.size());
        const double vl = eval_split(va);
        if (!std::isfinite(tl) || !std::isfinite(vl))
            throw std::runtime_error("train: loss diverged at epoch " + std::to_string(epoch));
        curves.train_loss.push_back(tl);
        curves.val_loss.push_back(vl);
        if (vl < best_val - 1e-7) {
            best_val = vl;
            best_epoch = epoch;
            best = net;
            stall = 0;
        } else if (++stall >= cfg.patience) {
            break;
        }
    }
    net = best;
    curves.best_epoch = best_epoch;
    curves.best_val = best_val;
    return curves;
}

namespace {

double wrapped_angle_err(double a, double b) {
    double d = std::abs(a - b);
    return std::min(d, kPi - d);
}

} // namespace

HoldoutDiagnostics holdout_diagnostics(const EstimatorNet& net, const TrainingSet& set) {
    const std::size_t flat = set.shape.flat_len();
    const PriorBox& box = net.prior_box();
    HoldoutDiagnostics out;
    std::vector<std::array<double, 8>> tn, pn; // normalized
    for (int i = set.n_train + set.n_val; i < set.count(); ++i) {
        if (!set.ok[i]) continue;
        const float* xr = set.x.data() + static_cast<std::size_t>(i) * flat;
        const float* yr = set.y.data() + static_cast<std::size_t>(i) * 8;
        const auto p = net.predict_normalized(xr);
        std::array<double, 8> t{};
        for (int j = 0; j < 8; ++j) t[j] = yr[j];
        tn.push_back(t);
        pn.push_back(p);
        out.truth.push_back(box.denormalize(t).to_array());
        out.pred.push_back(box.denormalize(p).to_array());
    }
    if (tn.empty()) throw std::invalid_argument("holdout_diagnostics: empty holdout");
    const std::size_t H = tn.size();
    for (int j = 0; j < 8; ++j) {
        double se = 0, be = 0, sn = 0;
        std::vector<double> tj(H), pj(H);
        for (std::size_t i = 0; i < H; ++i) {
            const double d = out.pred[i][j] - out.truth[i][j];
            se += d * d;
            be += d;
            const double dn = pn[i][j] - tn[i][j];
            sn += dn * dn;
            tj[i] = out.truth[i][j];
            pj[i] = out.pred[i][j];
        }
        out.rmse[j] = std::sqrt(se / H);
        out.bias[j] = be / H;
        out.mse_norm[j] = sn / H;
        out.rank_corr[j] = spearman_rho(tj, pj);
    }

    // delta terciles
    std::vector<std::size_t> order(H);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return out.truth[a][0] < out.truth[b][0]; });
    for (int terc = 0; terc < 3; ++terc) {
        const std::size_t lo = terc * H / 3, hi = (terc + 1) * H / 3;
        for (int j = 0; j < 8; ++j) {
            std::vector<double> tj, pj;
            for (std::size_t k = lo; k < hi; ++k) {
                tj.push_back(out.truth[order[k]][j]);
                pj.push_back(out.pred[order[k]][j]);
            }
            out.rank_corr_by_delta[j][terc] = tj.size() > 2 ? spearman_rho(tj, pj) : 0.0;
        }
    }

    double elo = 0, ehi = 0;
    int nlo = 0, nhi = 0;
    for (std::size_t i = 0; i < H; ++i) {
        const double err = wrapped_angle_err(out.pred[i][2], out.truth[i][2]);
        if (out.truth[i][3] < 1.5) {
            elo += err;
            ++nlo;
        } else {
            ehi += err;
            ++nhi;
        }
    }
    out.omega_err_low_eta = nlo ? elo / nlo : 0.0;
    out.omega_err_high_eta = nhi ? ehi / nhi : 0.0;
    return out;
}

BootstrapResult parametric_bootstrap(const EstimatorNet& net, const DepParams& fitted, int B,
                                     int years, const GridDomain& domain, int D,
                                     const SummaryConfig& scfg, double alpha,
                                     std::uint64_t seed, int jobs) {
    if (B < 100) throw std::invalid_argument("parametric_bootstrap: B < 100");
    fitted.validate();
    BootstrapResult out;
    out.replicates.assign(B, {});
    YearSimulator sim(domain, D, fitted);
    parallel_for(B, jobs, [&](int b0, int b1) {
        for (int b = b0; b < b1; ++b) {
            UniformField U;
            U.n = domain.n();
            U.D = D;
            U.T = years;
            U.values.resize(static_cast<std::size_t>(U.n) * D * years);
            const std::uint64_t s = mix64(seed) ^ mix64(static_cast<std::uint64_t>(b) + 77);
            for (int t = 0; t < years; ++t) {
                const std::vector<double> u = sim.uniform_year(s, t);
                for (int c = 0; c < U.n; ++c)
                    for (int d = 0; d < D; ++d)
                        U.at(c, d, t) = u[static_cast<std::size_t>(c) * D + d];
            }
            const SummaryBundle bundle = summarize(U, domain, scfg);
            out.replicates[b] = net.predict(bundle.flat()).to_array();
        }
    });
    for (int j = 0; j < 8; ++j) {
        std::vector<double> v(B);
        for (int b = 0; b < B; ++b) v[b] = out.replicates[b][j];
        std::sort(v.begin(), v.end());
        out.lo[j] = empirical_quantile_sorted(v, alpha / 2);
        out.hi[j] = empirical_quantile_sorted(v, 1.0 - alpha / 2);
        out.median[j] = empirical_quantile_sorted(v, 0.5);
    }
    return out;
}

} // namespace heatsim
