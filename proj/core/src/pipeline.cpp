#include "heatsim/pipeline.hpp"

#include "heatsim/attribution.hpp"
#include "heatsim/bsqr_stage1.hpp"
#include "heatsim/bsqr_stage2.hpp"
#include "heatsim/cluster.hpp"
#include "heatsim/digest.hpp"
#include "heatsim/field_io.hpp"
#include "heatsim/gev.hpp"
#include "heatsim/logging.hpp"
#include "heatsim/mathkit.hpp"
#include "heatsim/nbe_train.hpp"
#include "heatsim/rng.hpp"
#include "heatsim/summaries.hpp"
#include "heatsim/synthetic.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace heatsim {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_text(const std::string& path, const std::string& text) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ValidationError("cannot write '" + tmp + "'");
        out << text;
    }
    fs::rename(tmp, path);
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ojson read_json(const std::string& path) {
    ojson j = ojson::parse(read_text(path), nullptr, false);
    if (j.is_discarded()) throw ValidationError("invalid JSON in '" + path + "'");
    return j;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

// binary vector-of-doubles container for exact machine-read artifacts
void write_doubles(const std::string& path, const std::vector<double>& v) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ValidationError("cannot write '" + tmp + "'");
        const char magic[8] = {'H', 'S', 'F', 'L', 'T', '1', '\0', '\0'};
        out.write(magic, 8);
        const std::uint64_t len = v.size();
        out.write(reinterpret_cast<const char*>(&len), 8);
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    fs::rename(tmp, path);
}

std::vector<double> read_doubles(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read '" + path + "'");
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "HSFLT1\0\0", 8) != 0)
        throw ValidationError("'" + path + "' is not a flat double archive");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 8);
    std::vector<double> v(len);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(len * sizeof(double)));
    if (!in) throw ValidationError("'" + path + "' is truncated");
    return v;
}

void write_i32(std::ofstream& out, std::int32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}
std::int32_t read_i32(std::ifstream& in) {
    std::int32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
void write_f64(std::ofstream& out, const double* p, std::size_t len) {
    out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(len * 8));
}
void read_f64(std::ifstream& in, double* p, std::size_t len) {
    in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(len * 8));
}

ojson diag_to_json(const std::vector<std::string>& names, const std::vector<double>& rhat,
                   bool converged) {
    ojson j;
    j["converged"] = converged;
    j["names"] = names;
    j["rhat"] = rhat;
    double worst = 0.0;
    for (double r : rhat) worst = std::max(worst, r);
    j["worst_rhat"] = worst;
    return j;
}

void save_bsqr_posterior(const std::string& path, const BsqrPosterior& post) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ValidationError("cannot write '" + tmp + "'");
        const char magic[8] = {'H', 'S', 'B', 'S', 'Q', '1', '\0', '\0'};
        out.write(magic, 8);
        const BsqrConfig& mc = post.config().model;
        write_i32(out, post.n());
        write_i32(out, post.p());
        write_i32(out, mc.M);
        write_i32(out, mc.grid.K());
        write_i32(out, static_cast<std::int32_t>(post.draws().size()));
        write_f64(out, mc.grid.levels.data(), mc.grid.levels.size());
        for (const Stage2Draw& d : post.draws()) {
            write_f64(out, d.delta_star.data(), d.delta_star.size());
            write_f64(out, d.omega.data(), 3);
            write_f64(out, d.sigma2.data(), d.sigma2.size());
            write_f64(out, d.rho.data(), d.rho.size());
        }
    }
    fs::rename(tmp, path);

    const Stage2Diagnostics& dg = post.diagnostics();
    ojson j = diag_to_json(dg.names, dg.rhat, dg.converged);
    j["accept_site"] = dg.accept_site;
    j["accept_omega"] = dg.accept_omega;
    j["accept_rho"] = dg.accept_rho;
    j["repaired_init"] = dg.repaired_init;
    write_text(path + ".json", j.dump(2) + "\n");
}

BsqrPosterior load_bsqr_posterior(const std::string& path, const Stage2Config& cfg) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read '" + path + "'");
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "HSBSQ1\0\0", 8) != 0)
        throw ValidationError("'" + path + "' is not a quantile posterior archive");
    const int n = read_i32(in), p = read_i32(in), M = read_i32(in), K = read_i32(in);
    const int n_draws = read_i32(in);
    if (M != cfg.model.M || K != cfg.model.grid.K())
        throw ValidationError("'" + path + "' was fitted under a different bsqr config");
    std::vector<double> levels(K);
    read_f64(in, levels.data(), levels.size());
    std::vector<Stage2Draw> draws(n_draws);
    for (Stage2Draw& d : draws) {
        d.delta_star.resize(static_cast<std::size_t>(n) * p * M);
        d.sigma2.resize(p);
        d.rho.resize(p);
        read_f64(in, d.delta_star.data(), d.delta_star.size());
        read_f64(in, d.omega.data(), 3);
        read_f64(in, d.sigma2.data(), d.sigma2.size());
        read_f64(in, d.rho.data(), d.rho.size());
    }
    if (!in) throw ValidationError("'" + path + "' is truncated");

    const ojson j = read_json(path + ".json");
    Stage2Diagnostics dg;
    dg.converged = j.at("converged").get<bool>();
    dg.names = j.at("names").get<std::vector<std::string>>();
    dg.rhat = j.at("rhat").get<std::vector<double>>();
    dg.accept_site = j.at("accept_site").get<double>();
    dg.accept_omega = j.at("accept_omega").get<double>();
    dg.accept_rho = j.at("accept_rho").get<double>();
    dg.repaired_init = j.at("repaired_init").get<int>();
    return BsqrPosterior(cfg, n, p, std::move(draws), std::move(dg));
}

void save_gev_model(const std::string& path, const GevFieldModel& model) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ValidationError("cannot write '" + tmp + "'");
        const char magic[8] = {'H', 'S', 'G', 'E', 'V', '1', '\0', '\0'};
        out.write(magic, 8);
        write_i32(out, model.n());
        write_i32(out, model.p());
        write_i32(out, model.n_fields());
        write_i32(out, static_cast<std::int32_t>(model.draws().size()));
        for (const GevDraw& d : model.draws()) {
            write_f64(out, d.global.data(), d.global.size());
            write_f64(out, d.scale.data(), d.scale.size());
            write_f64(out, d.u.data(), d.u.size());
        }
    }
    fs::rename(tmp, path);

    const GevDiagnostics& dg = model.diagnostics();
    ojson j = diag_to_json(dg.names, dg.rhat, dg.converged);
    j["accept_pair"] = dg.accept_pair;
    j["accept_field"] = dg.accept_field;
    j["accept_global"] = dg.accept_global;
    j["accept_scale"] = dg.accept_scale;
    j["m0"] = dg.m0;
    j["s0"] = dg.s0;
    write_text(path + ".json", j.dump(2) + "\n");
}

GevFieldModel load_gev_model(const std::string& path, const GevConfig& cfg) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read '" + path + "'");
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "HSGEV1\0\0", 8) != 0)
        throw ValidationError("'" + path + "' is not a GEV posterior archive");
    const int n = read_i32(in), p = read_i32(in), F = read_i32(in);
    const int n_draws = read_i32(in);
    if (F != 2 * p + 1) throw ValidationError("'" + path + "' has inconsistent field counts");
    std::vector<GevDraw> draws(n_draws);
    for (GevDraw& d : draws) {
        d.global.resize(F);
        d.scale.resize(F);
        d.u.resize(static_cast<std::size_t>(F) * n);
        read_f64(in, d.global.data(), d.global.size());
        read_f64(in, d.scale.data(), d.scale.size());
        read_f64(in, d.u.data(), d.u.size());
    }
    if (!in) throw ValidationError("'" + path + "' is truncated");

    const ojson j = read_json(path + ".json");
    GevDiagnostics dg;
    dg.converged = j.at("converged").get<bool>();
    dg.names = j.at("names").get<std::vector<std::string>>();
    dg.rhat = j.at("rhat").get<std::vector<double>>();
    dg.accept_pair = j.at("accept_pair").get<double>();
    dg.accept_field = j.at("accept_field").get<double>();
    dg.accept_global = j.at("accept_global").get<double>();
    dg.accept_scale = j.at("accept_scale").get<double>();
    dg.m0 = j.at("m0").get<double>();
    dg.s0 = j.at("s0").get<double>();
    return GevFieldModel(n, p, cfg, std::move(draws), std::move(dg));
}

std::string gev_field_label(int f, int p) {
    if (f < p) return "mu_" + std::to_string(f);
    if (f == p) return "log_sigma_0";
    if (f < 2 * p) return "log_sigma_slope_" + std::to_string(f - p);
    return "xi";
}

std::vector<double> parse_threshold_csv(const std::string& path, int n) {
    std::istringstream in(read_text(path));
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("'" + path + "' is empty");
    std::vector<double> thr(n, 0.0);
    int rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() < 4) throw ValidationError("'" + path + "' has a short row");
        const int cell = std::stoi(f[0]);
        if (cell < 0 || cell >= n) throw ValidationError("'" + path + "' has a bad cell id");
        thr[cell] = std::stod(f[3]);
        ++rows;
    }
    if (rows != n) throw ValidationError("'" + path + "' does not cover every cell");
    return thr;
}

ojson dep_to_json(const DepParams& d) {
    ojson j;
    const auto a = d.to_array();
    for (int i = 0; i < 8; ++i) j[DepParams::names()[i]] = a[i];
    return j;
}

DepParams dep_from_json(const ojson& j) {
    std::array<double, 8> a{};
    for (int i = 0; i < 8; ++i) a[i] = j.at(DepParams::names()[i]).get<double>();
    return DepParams::from_array(a);
}

struct Manifest {
    std::string stage;
    std::string input_digest;
    std::string config_digest;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> outputs; // rel path, digest
    double seconds = 0.0;
};

} // namespace

std::string canonical_config(const RunConfig& c) {
    ojson j;
    j["out_dir"] = c.out_dir;
    j["seed"] = c.seed;
    // jobs intentionally left out: parallelism must not change results
    ojson& sy = j["synthetic"];
    sy["width"] = c.synthetic.width;
    sy["lon0"] = c.synthetic.lon0;
    sy["lat0"] = c.synthetic.lat0;
    sy["days"] = c.synthetic.D;
    sy["years"] = c.synthetic.T;
    {
        ojson& dep = sy["dep"];
        const auto a = c.synthetic.dep.to_array();
        for (int i = 0; i < 8; ++i) dep[DepParams::names()[i]] = a[i];
    }
    sy["base_mean"] = c.synthetic.base_mean;
    sy["marg_scale"] = c.synthetic.marg_scale;
    sy["marg_slant"] = c.synthetic.marg_slant;
    sy["mu_trend"] = c.synthetic.mu_trend;
    sy["sigma_trend"] = c.synthetic.sigma_trend;
    sy["gmst_end"] = c.synthetic.gmst_end;
    sy["g_max"] = c.synthetic.g_max;
    sy["baseline_years"] = c.synthetic.baseline_years;
    ojson& hw = j["heatwave"];
    hw["threshold_prob"] = c.heatwave.threshold_prob;
    hw["run_length"] = c.heatwave.run_length;
    hw["alpha"] = c.heatwave.alpha;
    ojson& cl = j["cluster"];
    cl["u"] = c.cluster.u;
    cl["k_range"] = c.cluster.k_range;
    cl["restarts"] = c.cluster.restarts;
    ojson& bq = j["bsqr"];
    bq["M"] = c.bsqr.model.M;
    bq["tau_levels"] = c.bsqr.model.grid.levels;
    bq["tau_min"] = c.bsqr.model.tau_min;
    bq["tau_max"] = c.bsqr.model.tau_max;
    bq["mono_lo"] = c.bsqr.model.mono_lo;
    bq["mono_step"] = c.bsqr.model.mono_step;
    bq["chains"] = c.bsqr.chains;
    bq["burnin"] = c.bsqr.burnin;
    bq["samples"] = c.bsqr.samples;
    bq["thin"] = c.bsqr.thin;
    bq["a_sigma"] = c.bsqr.a_sigma;
    bq["b_sigma"] = c.bsqr.b_sigma;
    bq["a_rho"] = c.bsqr.a_rho;
    bq["b_rho"] = c.bsqr.b_rho;
    bq["psi1_sd"] = c.bsqr.psi1_sd;
    bq["psi2_lsd"] = c.bsqr.psi2_lsd;
    bq["psi3_sd"] = c.bsqr.psi3_sd;
    bq["rhat_tol"] = c.bsqr.rhat_tol;
    ojson& gv = j["gev"];
    gv["chains"] = c.gev.chains;
    gv["burnin"] = c.gev.burnin;
    gv["samples"] = c.gev.samples;
    gv["thin"] = c.gev.thin;
    gv["xi_lo"] = c.gev.xi_lo;
    gv["xi_hi"] = c.gev.xi_hi;
    gv["xi_prior_sd"] = c.gev.xi_prior_sd;
    gv["slope_mu_sd"] = c.gev.slope_mu_sd;
    gv["slope_sigma_sd"] = c.gev.slope_sigma_sd;
    gv["rhat_tol"] = c.gev.rhat_tol;
    ojson& sm = j["summaries"];
    sm["thresholds"] = c.summaries.thresholds;
    sm["max_lag"] = c.summaries.max_lag;
    sm["bin_km"] = c.summaries.bin_km;
    sm["distance_bins"] = c.summaries.L;
    sm["profile_u"] = c.summaries.profile_u;
    sm["alphas"] = c.summaries.alphas;
    sm["extent_km"] = c.summaries.extent_km;
    sm["eps"] = c.summaries.eps;
    ojson& nb = j["nbe"];
    nb["years"] = c.nbe.years;
    nb["n_train"] = c.nbe.n_train;
    nb["n_val"] = c.nbe.n_val;
    nb["n_holdout"] = c.nbe.n_holdout;
    nb["checkpoint_every"] = c.nbe.checkpoint_every;
    nb["max_epochs"] = c.nbe.max_epochs;
    nb["batch"] = c.nbe.batch;
    nb["lr"] = c.nbe.lr;
    nb["patience"] = c.nbe.patience;
    nb["bootstrap_B"] = c.nbe.bootstrap_B;
    nb["bootstrap_years"] = c.nbe.bootstrap_years;
    ojson& at = j["attribution"];
    at["J"] = c.attribution.J;
    at["J_boot"] = c.attribution.J_boot;
    at["B"] = c.attribution.B;
    at["alpha_ci"] = c.attribution.alpha_ci;
    at["scenario_gmst"] = c.attribution.scenario_gmst;
    at["exceedance_gmst"] = c.attribution.exceedance_gmst;
    at["g_max"] = c.attribution.g_max;
    at["duration_levels"] = c.attribution.duration_levels;
    at["intensity_levels"] = c.attribution.intensity_levels;
    return j.dump();
}

struct Pipeline::Impl {
    const RunConfig& cfg;
    bool force;
    std::string root;
    std::string config_digest;

    Impl(const RunConfig& c, bool f) : cfg(c), force(f), root(c.out_dir) {
        const std::string canon = canonical_config(c);
        config_digest = digest_hex(digest_bytes(canon.data(), canon.size()));
    }

    std::string path(const std::string& rel) const { return (fs::path(root) / rel).string(); }

    std::uint64_t stage_seed(const std::string& stage) const {
        return mix64(cfg.seed) ^ hash_tag("stage:" + stage);
    }

    std::string manifest_path(const std::string& stage) const {
        return path("manifests/" + stage + ".json");
    }

    bool manifest_exists(const std::string& stage) const {
        return fs::exists(manifest_path(stage));
    }

    Manifest read_manifest(const std::string& stage) const {
        const ojson j = read_json(manifest_path(stage));
        Manifest m;
        m.stage = j.at("stage").get<std::string>();
        m.input_digest = j.at("input_digest").get<std::string>();
        m.config_digest = j.at("config_digest").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& o : j.at("outputs"))
            m.outputs.emplace_back(o.at("path").get<std::string>(),
                                   o.at("digest").get<std::string>());
        m.seconds = j.at("seconds").get<double>();
        return m;
    }

    void write_manifest(const Manifest& m) const {
        ojson j;
        j["stage"] = m.stage;
        j["input_digest"] = m.input_digest;
        j["config_digest"] = m.config_digest;
        j["seed"] = m.seed;
        ojson outs = ojson::array();
        for (const auto& [p, d] : m.outputs) {
            ojson o;
            o["path"] = p;
            o["digest"] = d;
            outs.push_back(o);
        }
        j["outputs"] = outs;
        j["seconds"] = m.seconds;
        write_text(manifest_path(m.stage), j.dump(2) + "\n");
    }

    // inputs = canonical config + this stage's name + every dependency's
    // recorded output digests; any upstream change flips this value
    std::string input_digest(const std::string& stage) const {
        Fnv64 h;
        const std::string canon = canonical_config(cfg);
        h.update(canon);
        h.update(stage);
        for (const std::string& dep : Pipeline::stage_deps(stage)) {
            if (!manifest_exists(dep))
                throw ValidationError("stage '" + stage + "' needs '" + dep +
                                      "' to run first");
            const Manifest m = read_manifest(dep);
            h.update(dep);
            for (const auto& [p, d] : m.outputs) {
                h.update(p);
                h.update(d);
            }
        }
        return digest_hex(h.value());
    }

    // true when every recorded output is on disk with its recorded digest
    bool outputs_ok(const Manifest& m, std::string* why) const {
        for (const auto& [rel, dig] : m.outputs) {
            const std::string p = path(rel);
            if (!fs::exists(p)) {
                *why = "missing output '" + rel + "'";
                return false;
            }
            if (digest_file(p) != dig) {
                *why = "output '" + rel + "' changed on disk";
                return false;
            }
        }
        return true;
    }

    void ensure_deps(const std::string& stage) const {
        for (const std::string& dep : Pipeline::stage_deps(stage)) {
            if (!manifest_exists(dep))
                throw ValidationError("stage '" + stage + "' needs '" + dep + "' to run first");
            if (force) continue;
            const Manifest m = read_manifest(dep);
            std::string why;
            if (!outputs_ok(m, &why))
                throw ValidationError("dependency '" + dep + "': " + why +
                                      " (rerun it, or pass --force)");
            if (m.input_digest != input_digest(dep))
                throw ValidationError("dependency '" + dep +
                                      "' is stale (rerun it, or pass --force)");
        }
    }

    void mkdirs() const {
        for (const char* d :
             {"manifests", "synthetic", "cluster", "bsqr", "gev", "summaries", "nbe", "dep",
              "heatwaves", "return_periods", "report"})
            fs::create_directories(fs::path(root) / d);
    }

    using Outputs = std::vector<std::string>;

    // ---- stage bodies ------------------------------------------------------

    Outputs run_make_synthetic() {
        const SyntheticData sd = make_synthetic(cfg.synthetic, stage_seed("make-synthetic"));
        write_field(path("synthetic/factual_raw.field"), sd.factual_raw, sd.domain);
        write_field(path("synthetic/counterfactual_raw.field"), sd.counterfactual_raw, sd.domain);
        const AnomalyField fa = compute_anomalies(sd.factual_raw, cfg.synthetic.baseline_years);
        const AnomalyField ca =
            compute_anomalies(sd.counterfactual_raw, cfg.synthetic.baseline_years);
        write_field(path("synthetic/factual_anom.field"), fa, sd.domain);
        write_field(path("synthetic/counterfactual_anom.field"), ca, sd.domain);

        // thresholds come from the counterfactual anomalies only
        const ThresholdResult thr = empirical_threshold(ca, cfg.heatwave.threshold_prob);
        for (const std::string& w : thr.warnings)
            log_warn("make-synthetic", "threshold", {{"warning", w}});
        {
            std::ostringstream o;
            o << "cell,lon,lat,threshold\n";
            for (int s = 0; s < sd.domain.n(); ++s)
                o << s << ',' << fmt(sd.domain.lon[s]) << ',' << fmt(sd.domain.lat[s]) << ','
                  << fmt(thr.thresholds[s]) << '\n';
            write_text(path("synthetic/thresholds.csv"), o.str());
        }
        {
            std::ostringstream o;
            o << "year,gmst,gtilde\n";
            for (int t = 0; t < cfg.synthetic.T; ++t)
                o << t << ',' << fmt(sd.gmst[t]) << ',' << fmt(sd.gmst[t] / cfg.synthetic.g_max)
                  << '\n';
            write_text(path("synthetic/gmst.csv"), o.str());
        }
        {
            ojson j;
            j["dep"] = dep_to_json(sd.truth);
            j["width"] = cfg.synthetic.width;
            j["days"] = cfg.synthetic.D;
            j["years"] = cfg.synthetic.T;
            j["mu_trend"] = cfg.synthetic.mu_trend;
            j["sigma_trend"] = cfg.synthetic.sigma_trend;
            j["gmst_end"] = cfg.synthetic.gmst_end;
            j["baseline_years"] = cfg.synthetic.baseline_years;
            write_text(path("synthetic/truth.json"), j.dump(2) + "\n");
        }
        return {"synthetic/factual_raw.field", "synthetic/counterfactual_raw.field",
                "synthetic/factual_anom.field", "synthetic/counterfactual_anom.field",
                "synthetic/thresholds.csv", "synthetic/gmst.csv", "synthetic/truth.json"};
    }

    Outputs run_cluster() {
        auto [field, domain] = read_field(path("synthetic/counterfactual_anom.field"));
        const std::vector<double> U = rank_uniformize(field);
        const std::vector<double> chi =
            chi_pairwise(U, field.n, field.D, field.T, cfg.cluster.u, cfg.jobs);
        const DissimilarityMatrix dm = dissimilarity(chi, field.n, cfg.cluster.u);
        const Partition part = k_medoids(dm, cfg.cluster.k_range, stage_seed("cluster"),
                                         cfg.cluster.restarts, cfg.jobs);
        {
            std::ostringstream o;
            o << "cell,lon,lat,label,is_medoid\n";
            for (int s = 0; s < field.n; ++s) {
                const bool med =
                    std::find(part.medoids.begin(), part.medoids.end(), s) != part.medoids.end();
                o << s << ',' << fmt(domain.lon[s]) << ',' << fmt(domain.lat[s]) << ','
                  << part.labels[s] << ',' << (med ? 1 : 0) << '\n';
            }
            write_text(path("cluster/clusters.csv"), o.str());
        }
        {
            ojson j;
            j["k"] = part.k;
            j["silhouette"] = part.silhouette;
            j["medoids"] = part.medoids;
            j["u"] = cfg.cluster.u;
            write_text(path("cluster/cluster.json"), j.dump(2) + "\n");
        }
        return {"cluster/clusters.csv", "cluster/cluster.json"};
    }

    void fit_one_bsqr(const std::string& scen, Outputs& outs) {
        auto [field, domain] = read_field(path("synthetic/" + scen + "_anom.field"));
        const std::vector<Stage1Fit> fits = fit_stage1(field, cfg.bsqr.model.grid, cfg.jobs);
        Stage2Config c2 = cfg.bsqr;
        c2.seed = mix64(stage_seed("fit-bsqr")) ^ hash_tag(scen);
        c2.jobs = cfg.jobs;
        const BsqrPosterior post = fit_stage2(fits, domain, c2);
        const Stage2Diagnostics& dg = post.diagnostics();
        double worst = 0.0;
        for (double r : dg.rhat) worst = std::max(worst, r);
        log_info("fit-bsqr", "fitted",
                 {{"scenario", scen},
                  {"draws", static_cast<std::int64_t>(post.draws().size())},
                  {"worst_rhat", worst},
                  {"converged", dg.converged}});
        if (!dg.converged)
            throw ConvergenceError("bulk quantile sampler did not converge for " + scen +
                                   " (worst split-rhat " + fmt(worst) + ")");
        save_bsqr_posterior(path("bsqr/" + scen + ".post"), post);

        // posterior-mean curves at the design corners for plots
        const BsqrModel& mean = post.mean_model();
        std::ostringstream o;
        o << "cell,covariate,tau,value\n";
        std::vector<std::pair<std::string, std::vector<double>>> rows;
        rows.emplace_back("baseline", std::vector<double>(mean.p(), 0.0));
        rows.back().second[0] = 1.0;
        if (mean.p() > 1) {
            std::vector<double> top(mean.p(), 0.0);
            top[0] = 1.0;
            top[1] = cfg.synthetic.gmst_end / cfg.synthetic.g_max;
            rows.emplace_back("end", std::move(top));
        }
        for (int s = 0; s < mean.n(); ++s)
            for (const auto& [label, c] : rows)
                for (double tau : cfg.bsqr.model.grid.levels)
                    o << s << ',' << label << ',' << fmt(tau) << ','
                      << fmt(mean.quantile_eval(tau, c.data(), s)) << '\n';
        write_text(path("bsqr/" + scen + "_quantiles.csv"), o.str());
        outs.push_back("bsqr/" + scen + ".post");
        outs.push_back("bsqr/" + scen + ".post.json");
        outs.push_back("bsqr/" + scen + "_quantiles.csv");
    }

    Outputs run_fit_bsqr() {
        Outputs outs;
        fit_one_bsqr("counterfactual", outs);
        fit_one_bsqr("factual", outs);
        return outs;
    }

    void fit_one_gev(const std::string& scen, Outputs& outs) {
        auto [field, domain] = read_field(path("synthetic/" + scen + "_anom.field"));
        const SeasonalMaxima mx = seasonal_maxima_from(field);
        GevConfig gc = cfg.gev;
        gc.seed = mix64(stage_seed("fit-gev")) ^ hash_tag(scen);
        gc.jobs = cfg.jobs;
        const GevFieldModel model = fit_gev_mcmc(mx, domain, gc);
        const GevDiagnostics& dg = model.diagnostics();
        double worst = 0.0;
        for (double r : dg.rhat) worst = std::max(worst, r);
        log_info("fit-gev", "fitted",
                 {{"scenario", scen},
                  {"draws", static_cast<std::int64_t>(model.draws().size())},
                  {"worst_rhat", worst},
                  {"converged", dg.converged}});
        if (!dg.converged)
            throw ConvergenceError("extreme value sampler did not converge for " + scen +
                                   " (worst split-rhat " + fmt(worst) + ")");
        save_gev_model(path("gev/" + scen + ".post"), model);

        {
            std::ostringstream o;
            o << "field,cell,mean,lo,hi\n";
            for (int f = 0; f < model.n_fields(); ++f)
                for (int s = 0; s < model.n(); ++s) {
                    std::vector<double> d = model.coef_draws(f, s);
                    std::sort(d.begin(), d.end());
                    double mean = 0.0;
                    for (double v : d) mean += v;
                    mean /= static_cast<double>(d.size());
                    o << gev_field_label(f, model.p()) << ',' << s << ',' << fmt(mean) << ','
                      << fmt(empirical_quantile_sorted(d, 0.05)) << ','
                      << fmt(empirical_quantile_sorted(d, 0.95)) << '\n';
                }
            write_text(path("gev/" + scen + "_caterpillar.csv"), o.str());
        }
        {
            const PpcResult ppc =
                ppc_gumbel_residuals(model, mx, 200, mix64(gc.seed) ^ hash_tag("ppc"));
            std::ostringstream o;
            o << "rank,residual,gumbel_q,env_lo,env_hi\n";
            for (std::size_t i = 0; i < ppc.v_sorted.size(); ++i)
                o << i << ',' << fmt(ppc.v_sorted[i]) << ',' << fmt(ppc.gumbel_q[i]) << ','
                  << fmt(ppc.env_lo[i]) << ',' << fmt(ppc.env_hi[i]) << '\n';
            write_text(path("gev/" + scen + "_ppc.csv"), o.str());
            ojson j;
            j["ks"] = ppc.ks;
            j["excluded"] = ppc.excluded;
            j["n"] = static_cast<std::int64_t>(ppc.v_sorted.size());
            write_text(path("gev/" + scen + "_ppc.json"), j.dump(2) + "\n");
        }
        outs.push_back("gev/" + scen + ".post");
        outs.push_back("gev/" + scen + ".post.json");
        outs.push_back("gev/" + scen + "_caterpillar.csv");
        outs.push_back("gev/" + scen + "_ppc.csv");
        outs.push_back("gev/" + scen + "_ppc.json");
    }

    Outputs run_fit_gev() {
        Outputs outs;
        fit_one_gev("counterfactual", outs);
        fit_one_gev("factual", outs);
        return outs;
    }

    Outputs run_summaries() {
        auto [field, domain] = read_field(path("synthetic/counterfactual_anom.field"));
        const BsqrPosterior post =
            load_bsqr_posterior(path("bsqr/counterfactual.post"), cfg.bsqr);
        const UniformField U = uniformize_with_bsqr(field, post.mean_model(), cfg.jobs);
        const SummaryBundle b = summarize(U, domain, cfg.summaries);
        write_doubles(path("summaries/observed_flat.bin"), b.flat());

        const SummaryConfig& sc = cfg.summaries;
        const int nlag = sc.max_lag + 1;
        const auto raw = [&](double stored) { return std::exp(stored) - sc.eps; };
        {
            std::ostringstream o;
            o << "u,bin_lo_km,lag,chi,mask\n";
            std::size_t i = 0;
            for (double u : sc.thresholds)
                for (int l = 0; l < sc.L; ++l)
                    for (int h = 0; h < nlag; ++h, ++i)
                        o << fmt(u) << ',' << fmt(l * sc.bin_km) << ',' << h << ','
                          << fmt(raw(b.chi_grid[i])) << ',' << int(b.chi_mask[i]) << '\n';
            write_text(path("summaries/chi_curves.csv"), o.str());
        }
        {
            std::ostringstream o;
            o << "lag,value,mask\n";
            for (int h = 0; h < nlag; ++h)
                o << h << ',' << fmt(raw(b.atdf[h])) << ',' << int(b.atdf_mask[h]) << '\n';
            write_text(path("summaries/atdf.csv"), o.str());
        }
        {
            std::ostringstream o;
            o << "kind,bin_lo_km,value,mask\n";
            for (std::size_t a = 0; a < sc.alphas.size(); ++a)
                for (int l = 0; l < sc.L; ++l)
                    o << "alpha_" << fmt(sc.alphas[a]) << ',' << fmt(l * sc.bin_km) << ','
                      << fmt(raw(b.quantile_profile[a * sc.L + l])) << ','
                      << int(b.profile_mask[l]) << '\n';
            for (int l = 0; l < sc.L; ++l)
                o << "iqr," << fmt(l * sc.bin_km) << ',' << fmt(raw(b.iqr_profile[l])) << ','
                  << int(b.profile_mask[l]) << '\n';
            write_text(path("summaries/profiles.csv"), o.str());
        }
        {
            const int side = sc.mado_side();
            const int half = side / 2;
            std::ostringstream o;
            o << "dy_km,dx_km,value,mask\n";
            for (int y = 0; y < side; ++y)
                for (int x = 0; x < side; ++x) {
                    const std::size_t i = static_cast<std::size_t>(y) * side + x;
                    o << fmt((y - half) * sc.bin_km) << ',' << fmt((x - half) * sc.bin_km) << ','
                      << fmt(raw(b.madogram_map[i])) << ',' << int(b.mado_mask[i]) << '\n';
                }
            write_text(path("summaries/madogram.csv"), o.str());
        }
        return {"summaries/observed_flat.bin", "summaries/chi_curves.csv", "summaries/atdf.csv",
                "summaries/profiles.csv", "summaries/madogram.csv"};
    }

    Outputs run_train_nbe() {
        auto [field, domain] = read_field(path("synthetic/counterfactual_anom.field"));
        (void)field;
        const PriorBox box;
        GenerateConfig gc;
        gc.years = cfg.nbe.years;
        gc.n_train = cfg.nbe.n_train;
        gc.n_val = cfg.nbe.n_val;
        gc.n_holdout = cfg.nbe.n_holdout;
        gc.summary = cfg.summaries;
        gc.seed = stage_seed("train-nbe");
        gc.jobs = cfg.jobs;
        gc.checkpoint_path = path("nbe/train_set.ckpt");
        gc.checkpoint_every = cfg.nbe.checkpoint_every;
        const TrainingSet set = generate_training_set(box, domain, cfg.synthetic.D, gc);
        log_info("train-nbe", "generated",
                 {{"count", static_cast<std::int64_t>(set.count())},
                  {"skipped", static_cast<std::int64_t>(set.skipped.size())},
                  {"digest", digest_hex(set.digest())}});

        EstimatorNet net(BundleShape::from(cfg.summaries), box,
                         mix64(gc.seed) ^ hash_tag("init"));
        TrainConfig tc;
        tc.max_epochs = cfg.nbe.max_epochs;
        tc.batch = cfg.nbe.batch;
        tc.lr = cfg.nbe.lr;
        tc.patience = cfg.nbe.patience;
        tc.seed = mix64(gc.seed) ^ hash_tag("train");
        const TrainCurves curves = train(net, set, tc);
        if (!std::isfinite(curves.best_val))
            throw ConvergenceError("estimator training diverged");
        log_info("train-nbe", "trained",
                 {{"epochs", static_cast<std::int64_t>(curves.train_loss.size())},
                  {"best_epoch", static_cast<std::int64_t>(curves.best_epoch)},
                  {"best_val", curves.best_val}});
        net.save(path("nbe/net.bin"));

        {
            std::ostringstream o;
            o << "epoch,train_loss,val_loss\n";
            for (std::size_t e = 0; e < curves.train_loss.size(); ++e)
                o << e << ',' << fmt(curves.train_loss[e]) << ',' << fmt(curves.val_loss[e])
                  << '\n';
            write_text(path("nbe/curves.csv"), o.str());
        }
        const HoldoutDiagnostics hd = holdout_diagnostics(net, set);
        {
            std::ostringstream o;
            o << "parameter,rmse,bias,rank_corr,mse_norm\n";
            for (int i = 0; i < 8; ++i)
                o << DepParams::names()[i] << ',' << fmt(hd.rmse[i]) << ',' << fmt(hd.bias[i])
                  << ',' << fmt(hd.rank_corr[i]) << ',' << fmt(hd.mse_norm[i]) << '\n';
            write_text(path("nbe/holdout.csv"), o.str());
        }
        {
            std::ostringstream o;
            o << "parameter,tercile,rank_corr\n";
            const char* terc[3] = {"low", "mid", "high"};
            for (int i = 0; i < 8; ++i)
                for (int t = 0; t < 3; ++t)
                    o << DepParams::names()[i] << ',' << terc[t] << ','
                      << fmt(hd.rank_corr_by_delta[i][t]) << '\n';
            write_text(path("nbe/holdout_terciles.csv"), o.str());
        }
        {
            ojson j;
            j["omega_err_low_eta"] = hd.omega_err_low_eta;
            j["omega_err_high_eta"] = hd.omega_err_high_eta;
            j["holdout_n"] = static_cast<std::int64_t>(hd.truth.size());
            j["train_set_digest"] = digest_hex(set.digest());
            write_text(path("nbe/holdout_extra.json"), j.dump(2) + "\n");
        }
        {
            std::ostringstream o;
            o << "sample,parameter,truth,pred\n";
            for (std::size_t r = 0; r < hd.truth.size(); ++r)
                for (int i = 0; i < 8; ++i)
                    o << r << ',' << DepParams::names()[i] << ',' << fmt(hd.truth[r][i]) << ','
                      << fmt(hd.pred[r][i]) << '\n';
            write_text(path("nbe/holdout_scatter.csv"), o.str());
        }
        return {"nbe/net.bin", "nbe/net.bin.json", "nbe/curves.csv", "nbe/holdout.csv",
                "nbe/holdout_terciles.csv", "nbe/holdout_extra.json", "nbe/holdout_scatter.csv"};
    }

    Outputs run_estimate_dep() {
        const EstimatorNet net = EstimatorNet::load(path("nbe/net.bin"));
        const std::vector<double> flat = read_doubles(path("summaries/observed_flat.bin"));
        const DepParams est = net.predict(flat);
        ojson j;
        j["params"] = dep_to_json(est);
        {
            const PriorBox box;
            j["normalized"] = box.normalize(est);
        }
        j["net_digest"] = net.weights_digest();
        j["bundle_digest"] = digest_file(path("summaries/observed_flat.bin"));
        write_text(path("dep/estimate.json"), j.dump(2) + "\n");
        log_info("estimate-dep", "estimated", {{"delta", est.delta}, {"theta", est.theta}});
        return {"dep/estimate.json"};
    }

    Outputs run_bootstrap() {
        auto [field, domain] = read_field(path("synthetic/counterfactual_anom.field"));
        (void)field;
        const EstimatorNet net = EstimatorNet::load(path("nbe/net.bin"));
        const DepParams est = dep_from_json(read_json(path("dep/estimate.json")).at("params"));
        const BootstrapResult bs = parametric_bootstrap(
            net, est, cfg.nbe.bootstrap_B, cfg.nbe.bootstrap_years, domain, cfg.synthetic.D,
            cfg.summaries, cfg.attribution.alpha_ci, stage_seed("bootstrap"), cfg.jobs);
        {
            std::ostringstream o;
            o << "replicate";
            for (int i = 0; i < 8; ++i) o << ',' << DepParams::names()[i];
            o << '\n';
            for (std::size_t b = 0; b < bs.replicates.size(); ++b) {
                o << b;
                for (int i = 0; i < 8; ++i) o << ',' << fmt(bs.replicates[b][i]);
                o << '\n';
            }
            write_text(path("dep/bootstrap.csv"), o.str());
        }
        {
            const auto a = est.to_array();
            std::ostringstream o;
            o << "parameter,estimate,lo,hi\n";
            for (int i = 0; i < 8; ++i)
                o << DepParams::names()[i] << ',' << fmt(a[i]) << ',' << fmt(bs.lo[i]) << ','
                  << fmt(bs.hi[i]) << '\n';
            write_text(path("dep/table1.csv"), o.str());
        }
        return {"dep/bootstrap.csv", "dep/table1.csv"};
    }

    Outputs run_detect_heatwaves() {
        auto [field, domain] = read_field(path("synthetic/factual_anom.field"));
        const std::vector<double> thr =
            parse_threshold_csv(path("synthetic/thresholds.csv"), field.n);
        const auto H = local_heatwave(field, thr, cfg.heatwave.run_length);
        const auto HR =
            regional_heatwave(H, field.n, field.D, field.T, domain.area_km2, cfg.heatwave.alpha);
        const std::vector<HeatwaveEpisode> eps = extract_episodes(HR, field);
        {
            std::ostringstream o;
            o << "year,start_day,duration,intensity\n";
            for (const HeatwaveEpisode& e : eps)
                o << e.year << ',' << e.start_day << ',' << e.duration << ','
                  << fmt(e.intensity) << '\n';
            write_text(path("heatwaves/observed_episodes.csv"), o.str());
        }
        {
            std::vector<double> dur(field.T, 0.0), inten(field.T, -kInf);
            for (const HeatwaveEpisode& e : eps) {
                dur[e.year] = std::max(dur[e.year], static_cast<double>(e.duration));
                inten[e.year] = std::max(inten[e.year], e.intensity);
            }
            std::ostringstream o;
            o << "year,max_duration,max_intensity\n";
            for (int t = 0; t < field.T; ++t)
                o << t << ',' << fmt(dur[t]) << ',' << fmt(inten[t]) << '\n';
            write_text(path("heatwaves/observed_properties.csv"), o.str());
        }
        log_info("detect-heatwaves", "episodes",
                 {{"count", static_cast<std::int64_t>(eps.size())}});
        return {"heatwaves/observed_episodes.csv", "heatwaves/observed_properties.csv"};
    }

    Outputs run_return_periods() {
        auto [field, domain] = read_field(path("synthetic/counterfactual_anom.field"));
        (void)field;
        const std::vector<double> thr =
            parse_threshold_csv(path("synthetic/thresholds.csv"), domain.n());
        const BsqrPosterior bq_cf =
            load_bsqr_posterior(path("bsqr/counterfactual.post"), cfg.bsqr);
        const BsqrPosterior bq_f = load_bsqr_posterior(path("bsqr/factual.post"), cfg.bsqr);
        const GevFieldModel gev_cf = load_gev_model(path("gev/counterfactual.post"), cfg.gev);
        const GevFieldModel gev_f = load_gev_model(path("gev/factual.post"), cfg.gev);
        const DepParams est = dep_from_json(read_json(path("dep/estimate.json")).at("params"));
        const BootstrapResult bs = [&] {
            BootstrapResult r;
            std::istringstream in(read_text(path("dep/bootstrap.csv")));
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                const auto f = split_csv_line(line);
                if (f.size() != 9)
                    throw ValidationError("dep/bootstrap.csv has a malformed row");
                std::array<double, 8> a{};
                for (int i = 0; i < 8; ++i) a[i] = std::stod(f[i + 1]);
                r.replicates.push_back(a);
            }
            return r;
        }();
        const int B = cfg.attribution.B;
        if (static_cast<int>(bs.replicates.size()) < B)
            throw ValidationError("need at least attribution.B dependence replicates");

        struct Scen {
            ScenarioSpec spec;
            const BsqrPosterior* bq;
            const GevFieldModel* gev;
            std::string label;
        };
        std::vector<Scen> scens;
        scens.push_back({ScenarioSpec{Scenario::counterfactual, 0.0, 0.0, cfg.attribution.g_max},
                         &bq_cf, &gev_cf, "counterfactual"});
        for (double g : cfg.attribution.scenario_gmst)
            scens.push_back({ScenarioSpec{Scenario::factual, g, 0.0, cfg.attribution.g_max},
                             &bq_f, &gev_f, "factual"});

        const std::uint64_t seed0 = stage_seed("return-periods");
        SimulateOptions opt;
        opt.run_length = cfg.heatwave.run_length;
        opt.alpha = cfg.heatwave.alpha;
        opt.jobs = cfg.jobs;

        // point runs first so the intensity level grid can come from data
        std::vector<ScenarioYears> points;
        points.reserve(scens.size());
        for (std::size_t i = 0; i < scens.size(); ++i) {
            const Scen& sc = scens[i];
            ScenarioYears ys = simulate_scenario_years(
                est, sc.bq->mean_model(), *sc.gev, thr, sc.spec, domain, cfg.synthetic.D,
                cfg.attribution.J, mix64(seed0) ^ mix64(i * 2 + 1), opt);
            log_info("return-periods", "point_run",
                     {{"scenario", sc.label},
                      {"gmst", sc.spec.gmst},
                      {"J_effective", static_cast<std::int64_t>(ys.J_effective)},
                      {"rejected_cells", static_cast<std::int64_t>(ys.rejected_cells)}});
            points.push_back(std::move(ys));
        }

        std::vector<double> dur_levels = cfg.attribution.duration_levels;
        if (dur_levels.empty())
            for (int z = 0; z < cfg.synthetic.D; ++z) dur_levels.push_back(z);
        std::vector<double> int_levels = cfg.attribution.intensity_levels;
        if (int_levels.empty()) {
            std::vector<double> pool;
            for (double v : points.front().intensity)
                if (std::isfinite(v)) pool.push_back(v);
            if (pool.empty())
                for (const ScenarioYears& ys : points)
                    for (double v : ys.intensity)
                        if (std::isfinite(v)) pool.push_back(v);
            if (pool.empty()) throw ConvergenceError("no finite heatwave intensities simulated");
            std::sort(pool.begin(), pool.end());
            for (double q : {0.5, 0.75, 0.9, 0.95, 0.98, 0.99})
                int_levels.push_back(empirical_quantile_sorted(pool, q));
            int_levels.erase(std::unique(int_levels.begin(), int_levels.end()),
                             int_levels.end());
        }

        // replicate parameter triples: independent draws from each posterior
        // plus one dependence replicate per triple
        std::ostringstream curves;
        curves << "property,scenario,gmst,level,estimate,mc_lo,mc_hi,lo,hi\n";
        for (std::size_t i = 0; i < scens.size(); ++i) {
            const Scen& sc = scens[i];
            Rng trng(seed0, "triples-" + sc.label + "-" + fmt(sc.spec.gmst));
            std::vector<std::vector<double>> rep_dur, rep_int;
            rep_dur.reserve(B);
            rep_int.reserve(B);
            for (int b = 0; b < B; ++b) {
                const int ib = static_cast<int>(trng.uniform_index(sc.bq->draws().size()));
                const int ig = static_cast<int>(trng.uniform_index(sc.gev->draws().size()));
                const BsqrModel bulk = sc.bq->draw_model(ib);
                SimulateOptions ropt = opt;
                ropt.gev_draw = ig;
                const DepParams dep_b = DepParams::from_array(bs.replicates[b]);
                ScenarioYears ys = simulate_scenario_years(
                    dep_b, bulk, *sc.gev, thr, sc.spec, domain, cfg.synthetic.D,
                    cfg.attribution.J_boot, mix64(seed0) ^ mix64(i * 1000 + b * 2 + 5), ropt);
                rep_dur.push_back(std::move(ys.duration));
                rep_int.push_back(std::move(ys.intensity));
            }
            const ReturnPeriodCurve cd =
                make_return_period_curve("duration", sc.spec.scenario, points[i].duration,
                                         dur_levels, rep_dur, cfg.attribution.alpha_ci);
            const ReturnPeriodCurve ci =
                make_return_period_curve("intensity", sc.spec.scenario, points[i].intensity,
                                         int_levels, rep_int, cfg.attribution.alpha_ci);
            for (const ReturnPeriodCurve* cur : {&cd, &ci})
                for (std::size_t l = 0; l < cur->levels.size(); ++l)
                    curves << cur->property << ',' << sc.label << ',' << fmt(sc.spec.gmst) << ','
                           << fmt(cur->levels[l]) << ',' << fmt(cur->estimate[l]) << ','
                           << fmt(cur->mc_lo[l]) << ',' << fmt(cur->mc_hi[l]) << ','
                           << fmt(cur->lo[l]) << ',' << fmt(cur->hi[l]) << '\n';
            log_info("return-periods", "curves",
                     {{"scenario", sc.label}, {"gmst", sc.spec.gmst}});
        }
        write_text(path("return_periods/curves.csv"), curves.str());

        {
            std::ostringstream o;
            o << "cell,lon,lat,g,delta_p\n";
            for (double g : cfg.attribution.exceedance_gmst) {
                const ScenarioSpec spec{Scenario::factual, g, 0.0, cfg.attribution.g_max};
                const std::vector<double> dp =
                    exceedance_shift_map(bq_f.mean_model(), bq_cf.mean_model(), thr, spec);
                for (int s = 0; s < domain.n(); ++s)
                    o << s << ',' << fmt(domain.lon[s]) << ',' << fmt(domain.lat[s]) << ','
                      << fmt(g) << ',' << fmt(dp[s]) << '\n';
            }
            write_text(path("return_periods/exceedance_maps.csv"), o.str());
        }
        {
            ojson j;
            j["J"] = cfg.attribution.J;
            j["J_boot"] = cfg.attribution.J_boot;
            j["B"] = B;
            j["alpha_ci"] = cfg.attribution.alpha_ci;
            j["scenario_gmst"] = cfg.attribution.scenario_gmst;
            j["exceedance_gmst"] = cfg.attribution.exceedance_gmst;
            j["duration_levels"] = dur_levels;
            j["intensity_levels"] = int_levels;
            j["seed"] = seed0;
            j["per_year_property"] = "max over episodes";
            write_text(path("return_periods/meta.json"), j.dump(2) + "\n");
        }
        return {"return_periods/curves.csv", "return_periods/exceedance_maps.csv",
                "return_periods/meta.json"};
    }

    Outputs run_report() {
        const ojson truth = read_json(path("synthetic/truth.json"));
        const ojson est = read_json(path("dep/estimate.json"));
        const ojson cl = read_json(path("cluster/cluster.json"));
        std::ostringstream md;
        md << "# heatsim run report\n\n";
        md << "seed " << cfg.seed << ", config digest " << config_digest << ", grid "
           << cfg.synthetic.width << "x" << cfg.synthetic.width << ", " << cfg.synthetic.D
           << " days x " << cfg.synthetic.T << " years\n\n";

        md << "## Dependence parameters\n\n";
        md << "| parameter | truth | estimate | lo | hi |\n";
        md << "|---|---|---|---|---|\n";
        std::ostringstream t1;
        t1 << "parameter,truth,estimate,lo,hi\n";
        {
            std::istringstream in(read_text(path("dep/table1.csv")));
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                const auto f = split_csv_line(line);
                const double tv = truth.at("dep").at(f[0]).get<double>();
                md << "| " << f[0] << " | " << tv << " | " << f[1] << " | " << f[2] << " | "
                   << f[3] << " |\n";
                t1 << f[0] << ',' << fmt(tv) << ',' << f[1] << ',' << f[2] << ',' << f[3]
                   << '\n';
            }
        }
        write_text(path("report/table1.csv"), t1.str());

        md << "\n## Marginal fits\n\n";
        for (const char* scen : {"counterfactual", "factual"}) {
            const ojson bq = read_json(path("bsqr/" + std::string(scen) + ".post.json"));
            const ojson gv = read_json(path("gev/" + std::string(scen) + ".post.json"));
            const ojson ppc = read_json(path("gev/" + std::string(scen) + "_ppc.json"));
            md << "- " << scen << ": bulk worst split-rhat "
               << bq.at("worst_rhat").get<double>() << ", tail worst split-rhat "
               << gv.at("worst_rhat").get<double>() << ", residual KS "
               << ppc.at("ks").get<double>() << "\n";
        }

        md << "\n## Clustering\n\n";
        md << "k = " << cl.at("k").get<int>() << ", mean silhouette "
           << cl.at("silhouette").get<double>() << "\n";

        md << "\n## Estimator holdout\n\n";
        md << "| parameter | rmse | bias | rank corr | mse (normalized) |\n";
        md << "|---|---|---|---|---|\n";
        {
            std::istringstream in(read_text(path("nbe/holdout.csv")));
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                const auto f = split_csv_line(line);
                md << "| " << f[0] << " | " << f[1] << " | " << f[2] << " | " << f[3] << " | "
                   << f[4] << " |\n";
            }
        }

        md << "\n## Observed heatwaves\n\n";
        {
            std::istringstream in(read_text(path("heatwaves/observed_episodes.csv")));
            std::string line;
            std::getline(in, line);
            int count = 0;
            int longest = 0;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                ++count;
                longest = std::max(longest, std::stoi(split_csv_line(line)[2]));
            }
            md << count << " regional episodes detected, longest " << longest << " days\n";
        }

        md << "\n## Return periods\n\nSee return_periods/curves.csv; levels and year counts in "
              "return_periods/meta.json.\n";

        write_text(path("report/report.md"), md.str());

        ojson run;
        run["seed"] = cfg.seed;
        run["config_digest"] = config_digest;
        run["dep_estimate"] = est.at("params");
        ojson arts = ojson::array();
        for (const std::string& st : stage_names()) {
            if (st == "report" || !manifest_exists(st)) continue;
            const Manifest m = read_manifest(st);
            for (const auto& [p, d] : m.outputs) {
                ojson a;
                a["path"] = p;
                a["digest"] = d;
                a["stage"] = st;
                arts.push_back(a);
            }
        }
        run["artifacts"] = arts;
        write_text(path("report/run.json"), run.dump(2) + "\n");
        return {"report/report.md", "report/table1.csv", "report/run.json"};
    }

    Outputs dispatch(const std::string& name) {
        if (name == "make-synthetic") return run_make_synthetic();
        if (name == "cluster") return run_cluster();
        if (name == "fit-bsqr") return run_fit_bsqr();
        if (name == "fit-gev") return run_fit_gev();
        if (name == "summaries") return run_summaries();
        if (name == "train-nbe") return run_train_nbe();
        if (name == "estimate-dep") return run_estimate_dep();
        if (name == "bootstrap") return run_bootstrap();
        if (name == "detect-heatwaves") return run_detect_heatwaves();
        if (name == "return-periods") return run_return_periods();
        if (name == "report") return run_report();
        throw ValidationError("unknown stage '" + name + "'");
    }
};

Pipeline::Pipeline(RunConfig cfg, bool force) : cfg_(std::move(cfg)), force_(force) {
    cfg_.validate();
}

const std::vector<std::string>& Pipeline::stage_names() {
    static const std::vector<std::string> names = {
        "make-synthetic", "cluster",        "fit-bsqr",         "fit-gev",
        "summaries",      "train-nbe",      "estimate-dep",     "bootstrap",
        "detect-heatwaves", "return-periods", "report"};
    return names;
}

const std::vector<std::string>& Pipeline::stage_deps(const std::string& name) {
    static const std::map<std::string, std::vector<std::string>> deps = {
        {"make-synthetic", {}},
        {"cluster", {"make-synthetic"}},
        {"fit-bsqr", {"make-synthetic"}},
        {"fit-gev", {"make-synthetic"}},
        {"summaries", {"make-synthetic", "fit-bsqr"}},
        {"train-nbe", {"make-synthetic"}},
        {"estimate-dep", {"summaries", "train-nbe"}},
        {"bootstrap", {"make-synthetic", "train-nbe", "estimate-dep"}},
        {"detect-heatwaves", {"make-synthetic"}},
        {"return-periods",
         {"make-synthetic", "fit-bsqr", "fit-gev", "estimate-dep", "bootstrap"}},
        {"report",
         {"make-synthetic", "cluster", "fit-bsqr", "fit-gev", "summaries", "train-nbe",
          "estimate-dep", "bootstrap", "detect-heatwaves", "return-periods"}},
    };
    const auto it = deps.find(name);
    if (it == deps.end()) throw ValidationError("unknown stage '" + name + "'");
    return it->second;
}

std::string Pipeline::artifact_path(const std::string& rel) const {
    return (fs::path(cfg_.out_dir) / rel).string();
}

StageStatus Pipeline::run_stage(const std::string& name) {
    Impl impl(cfg_, force_);
    impl.mkdirs();
    StageStatus st;
    st.name = name;

    impl.ensure_deps(name);
    const std::string in_dig = impl.input_digest(name);
    if (impl.manifest_exists(name)) {
        const Manifest m = impl.read_manifest(name);
        std::string why;
        if (m.input_digest == in_dig) {
            if (impl.outputs_ok(m, &why)) {
                log_info(name, "up_to_date", {{"input_digest", in_dig}});
                return st;
            }
            const bool missing = why.rfind("missing", 0) == 0;
            if (!missing && !force_)
                throw ValidationError("stage '" + name + "': " + why +
                                      " (pass --force to rebuild)");
            log_warn(name, "rebuilding", {{"reason", why}});
        } else if (!force_) {
            throw ValidationError("stage '" + name +
                                  "' artifacts are stale (pass --force to rebuild)");
        } else {
            log_warn(name, "rebuilding", {{"reason", std::string("stale inputs")}});
        }
    }

    log_info(name, "start", {{"seed", static_cast<std::int64_t>(impl.stage_seed(name))}});
    const auto t0 = std::chrono::steady_clock::now();
    const Impl::Outputs outs = impl.dispatch(name);
    st.ran = true;
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    Manifest m;
    m.stage = name;
    m.input_digest = in_dig;
    m.config_digest = impl.config_digest;
    m.seed = impl.stage_seed(name);
    for (const std::string& rel : outs)
        m.outputs.emplace_back(rel, digest_file(impl.path(rel)));
    m.seconds = st.seconds;
    impl.write_manifest(m);
    log_info(name, "done", {{"seconds", st.seconds},
                            {"outputs", static_cast<std::int64_t>(outs.size())}});
    return st;
}

std::vector<StageStatus> Pipeline::run_all() {
    std::vector<StageStatus> all;
    for (const std::string& name : stage_names()) all.push_back(run_stage(name));
    return all;
}

int run_cli_stage(const RunConfig& cfg, const std::string& stage, bool force) {
    try {
        Pipeline pipe(cfg, force);
        if (stage == "run-all") {
            pipe.run_all();
        } else {
            pipe.run_stage(stage);
        }
        return 0;
    } catch (const ConvergenceError& e) {
        log_error(stage, "convergence_failure", {{"error", std::string(e.what())}});
        return 3;
    } catch (const ValidationError& e) {
        log_error(stage, "validation_failure", {{"error", std::string(e.what())}});
        return 2;
    } catch (const std::exception& e) {
        log_error(stage, "failure", {{"error", std::string(e.what())}});
        return 2;
    }
}

} // namespace heatsim
