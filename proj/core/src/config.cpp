#include "heatsim/config.hpp"

#include "json.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace heatsim {

using json = nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& msg) { throw ValidationError("config: " + msg); }

// typed key reader over one table; every key read is remembered so finish()
// can reject unknown ones, which keeps typos from silently using defaults
class Section {
public:
    Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) bad("'" + name_ + "' must be a table");
    }

    const json* find(const char* k) {
        seen_.insert(k);
        auto it = j_.find(k);
        return it == j_.end() ? nullptr : &*it;
    }

    void get(const char* k, double& out) {
        if (const json* v = find(k)) {
            if (!v->is_number()) bad(key(k) + " must be a number");
            out = v->get<double>();
        }
    }
    void get(const char* k, int& out) {
        if (const json* v = find(k)) {
            if (!v->is_number_integer()) bad(key(k) + " must be an integer");
            out = static_cast<int>(v->get<long long>());
        }
    }
    void get(const char* k, long& out) {
        if (const json* v = find(k)) {
            if (!v->is_number_integer()) bad(key(k) + " must be an integer");
            out = static_cast<long>(v->get<long long>());
        }
    }
    void get(const char* k, std::uint64_t& out) {
        if (const json* v = find(k)) {
            if (!v->is_number_integer() || v->get<long long>() < 0)
                bad(key(k) + " must be a nonnegative integer");
            out = static_cast<std::uint64_t>(v->get<long long>());
        }
    }
    void get(const char* k, std::string& out) {
        if (const json* v = find(k)) {
            if (!v->is_string()) bad(key(k) + " must be a string");
            out = v->get<std::string>();
        }
    }
    void get(const char* k, std::vector<double>& out) {
        if (const json* v = find(k)) {
            if (!v->is_array()) bad(key(k) + " must be an array of numbers");
            out.clear();
            for (const json& e : *v) {
                if (!e.is_number()) bad(key(k) + " must be an array of numbers");
                out.push_back(e.get<double>());
            }
        }
    }
    void get(const char* k, std::vector<int>& out) {
        if (const json* v = find(k)) {
            if (!v->is_array()) bad(key(k) + " must be an array of integers");
            out.clear();
            for (const json& e : *v) {
                if (!e.is_number_integer()) bad(key(k) + " must be an array of integers");
                out.push_back(static_cast<int>(e.get<long long>()));
            }
        }
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) bad("unknown key '" + name_ + "." + it.key() + "'");
    }

private:
    std::string key(const char* k) const { return "'" + name_ + "." + std::string(k) + "'"; }

    const json& j_;
    std::string name_;
    std::set<std::string> seen_;
};

void apply_dep(const json& j, DepParams& dep) {
    Section s(j, "synthetic.dep");
    s.get("delta", dep.delta);
    s.get("theta", dep.theta);
    s.get("omega", dep.omega);
    s.get("eta", dep.eta);
    s.get("kappa", dep.kappa);
    s.get("lambda", dep.lambda);
    s.get("rho_s", dep.rho_s);
    s.get("rho_t", dep.rho_t);
    s.finish();
}

void apply_synthetic(const json& j, SyntheticSpec& x) {
    Section s(j, "synthetic");
    s.get("width", x.width);
    s.get("lon0", x.lon0);
    s.get("lat0", x.lat0);
    s.get("days", x.D);
    s.get("years", x.T);
    if (const json* v = s.find("dep")) apply_dep(*v, x.dep);
    s.get("base_mean", x.base_mean);
    s.get("marg_scale", x.marg_scale);
    s.get("marg_slant", x.marg_slant);
    s.get("mu_trend", x.mu_trend);
    s.get("sigma_trend", x.sigma_trend);
    s.get("gmst_end", x.gmst_end);
    s.get("g_max", x.g_max);
    s.get("baseline_years", x.baseline_years);
    s.finish();
}

void apply_heatwave(const json& j, HeatwaveConfig& x) {
    Section s(j, "heatwave");
    s.get("threshold_prob", x.threshold_prob);
    s.get("run_length", x.run_length);
    s.get("alpha", x.alpha);
    s.finish();
}

void apply_cluster(const json& j, ClusterConfig& x) {
    Section s(j, "cluster");
    s.get("u", x.u);
    s.get("k_range", x.k_range);
    s.get("restarts", x.restarts);
    s.finish();
}

void apply_bsqr(const json& j, Stage2Config& x) {
    Section s(j, "bsqr");
    s.get("M", x.model.M);
    int K = x.model.grid.K();
    s.get("tau_levels", K);
    if (K != x.model.grid.K()) x.model.grid = QuantileGrid::regular(K);
    s.get("tau_min", x.model.tau_min);
    s.get("tau_max", x.model.tau_max);
    s.get("mono_lo", x.model.mono_lo);
    s.get("mono_step", x.model.mono_step);
    s.get("chains", x.chains);
    s.get("burnin", x.burnin);
    s.get("samples", x.samples);
    s.get("thin", x.thin);
    s.get("a_sigma", x.a_sigma);
    s.get("b_sigma", x.b_sigma);
    s.get("a_rho", x.a_rho);
    s.get("b_rho", x.b_rho);
    s.get("psi1_sd", x.psi1_sd);
    s.get("psi2_lsd", x.psi2_lsd);
    s.get("psi3_sd", x.psi3_sd);
    s.get("rhat_tol", x.rhat_tol);
    s.finish();
}

void apply_gev(const json& j, GevConfig& x) {
    Section s(j, "gev");
    s.get("chains", x.chains);
    s.get("burnin", x.burnin);
    s.get("samples", x.samples);
    s.get("thin", x.thin);
    s.get("xi_lo", x.xi_lo);
    s.get("xi_hi", x.xi_hi);
    s.get("xi_prior_sd", x.xi_prior_sd);
    s.get("slope_mu_sd", x.slope_mu_sd);
    s.get("slope_sigma_sd", x.slope_sigma_sd);
    s.get("rhat_tol", x.rhat_tol);
    s.finish();
}

void apply_summaries(const json& j, SummaryConfig& x) {
    Section s(j, "summaries");
    s.get("thresholds", x.thresholds);
    s.get("max_lag", x.max_lag);
    s.get("bin_km", x.bin_km);
    s.get("distance_bins", x.L);
    s.get("profile_u", x.profile_u);
    s.get("alphas", x.alphas);
    s.get("extent_km", x.extent_km);
    s.get("eps", x.eps);
    s.finish();
}

void apply_nbe(const json& j, NbeConfig& x) {
    Section s(j, "nbe");
    s.get("years", x.years);
    s.get("n_train", x.n_train);
    s.get("n_val", x.n_val);
    s.get("n_holdout", x.n_holdout);
    s.get("checkpoint_every", x.checkpoint_every);
    s.get("max_epochs", x.max_epochs);
    s.get("batch", x.batch);
    s.get("lr", x.lr);
    s.get("patience", x.patience);
    s.get("bootstrap_B", x.bootstrap_B);
    s.get("bootstrap_years", x.bootstrap_years);
    s.finish();
}

void apply_attribution(const json& j, AttributionConfig& x) {
    Section s(j, "attribution");
    s.get("J", x.J);
    s.get("J_boot", x.J_boot);
    s.get("B", x.B);
    s.get("alpha_ci", x.alpha_ci);
    s.get("scenario_gmst", x.scenario_gmst);
    s.get("exceedance_gmst", x.exceedance_gmst);
    s.get("g_max", x.g_max);
    s.get("duration_levels", x.duration_levels);
    s.get("intensity_levels", x.intensity_levels);
    s.finish();
}

RunConfig config_from_json(const json& j) {
    RunConfig cfg;
    Section s(j, "top level");
    s.get("out_dir", cfg.out_dir);
    s.get("seed", cfg.seed);
    s.get("jobs", cfg.jobs);
    if (const json* v = s.find("synthetic")) apply_synthetic(*v, cfg.synthetic);
    if (const json* v = s.find("heatwave")) apply_heatwave(*v, cfg.heatwave);
    if (const json* v = s.find("cluster")) apply_cluster(*v, cfg.cluster);
    if (const json* v = s.find("bsqr")) apply_bsqr(*v, cfg.bsqr);
    if (const json* v = s.find("gev")) apply_gev(*v, cfg.gev);
    if (const json* v = s.find("summaries")) apply_summaries(*v, cfg.summaries);
    if (const json* v = s.find("nbe")) apply_nbe(*v, cfg.nbe);
    if (const json* v = s.find("attribution")) apply_attribution(*v, cfg.attribution);
    s.finish();
    cfg.validate();
    return cfg;
}

// Minimal TOML reader covering what the template emits: [table] headers one
// level deep (dots allowed), key = value lines with strings, numbers,
// booleans, and flat arrays, comments with #.
class TomlParser {
public:
    explicit TomlParser(const std::string& text) : in_(text) {}

    json parse() {
        json root = json::object();
        json* table = &root;
        std::string line;
        int ln = 0;
        while (std::getline(in_, line)) {
            ++ln;
            line_no_ = ln;
            std::string t = strip(line);
            if (t.empty() || t[0] == '#') continue;
            if (t[0] == '[') {
                if (t.back() != ']') err("unterminated table header");
                table = &descend(root, strip(t.substr(1, t.size() - 2)));
                continue;
            }
            const std::size_t eq = find_eq(t);
            if (eq == std::string::npos) err("expected 'key = value'");
            const std::string key = strip(t.substr(0, eq));
            if (key.empty()) err("empty key");
            std::string rest = strip(t.substr(eq + 1));
            if (rest.empty()) err("missing value");
            (*table)[key] = value(rest);
        }
        return root;
    }

private:
    [[noreturn]] void err(const std::string& msg) const {
        bad("toml line " + std::to_string(line_no_) + ": " + msg);
    }

    static std::string strip(const std::string& s) {
        std::size_t a = 0, b = s.size();
        while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
        while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
        return s.substr(a, b - a);
    }

    // first top-level '=' outside a string
    static std::size_t find_eq(const std::string& s) {
        bool q = false;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '"') q = !q;
            else if (s[i] == '=' && !q) return i;
        }
        return std::string::npos;
    }

    json& descend(json& root, const std::string& dotted) {
        if (dotted.empty()) err("empty table name");
        json* t = &root;
        std::size_t pos = 0;
        while (pos <= dotted.size()) {
            const std::size_t dot = dotted.find('.', pos);
            const std::string part =
                strip(dot == std::string::npos ? dotted.substr(pos) : dotted.substr(pos, dot - pos));
            if (part.empty()) err("empty table name part");
            t = &(*t)[part];
            if (t->is_null()) *t = json::object();
            if (dot == std::string::npos) break;
            pos = dot + 1;
        }
        return *t;
    }

    json value(const std::string& raw) {
        std::string t = strip_comment(raw);
        if (t.empty()) err("missing value");
        if (t[0] == '"') {
            if (t.size() < 2 || t.back() != '"') err("unterminated string");
            return unescape(t.substr(1, t.size() - 2));
        }
        if (t[0] == '[') {
            if (t.back() != ']') err("unterminated array");
            json arr = json::array();
            for (const std::string& e : split_array(t.substr(1, t.size() - 2)))
                arr.push_back(value(e));
            return arr;
        }
        if (t == "true") return true;
        if (t == "false") return false;
        return number(t);
    }

    std::string strip_comment(const std::string& s) const {
        bool q = false;
        int depth = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '"') q = !q;
            else if (!q && s[i] == '[') ++depth;
            else if (!q && s[i] == ']') --depth;
            else if (!q && depth == 0 && s[i] == '#') return strip(s.substr(0, i));
        }
        return strip(s);
    }

    std::vector<std::string> split_array(const std::string& body) const {
        std::vector<std::string> out;
        std::string cur;
        bool q = false;
        for (char ch : body) {
            if (ch == '"') q = !q;
            if (ch == ',' && !q) {
                const std::string e = strip(cur);
                if (!e.empty()) out.push_back(e);
                cur.clear();
            } else {
                cur += ch;
            }
        }
        const std::string e = strip(cur);
        if (!e.empty()) out.push_back(e);
        return out;
    }

    std::string unescape(const std::string& s) const {
        std::string out;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] != '\\') {
                out += s[i];
                continue;
            }
            if (++i == s.size()) err("dangling escape");
            switch (s[i]) {
                case 'n': out += '\n'; break;
                case 't': out += '\t'; break;
                case '"': out += '"'; break;
                case '\\': out += '\\'; break;
                default: err("unsupported escape");
            }
        }
        return out;
    }

    json number(const std::string& t) const {
        const bool flt = t.find_first_of(".eE") != std::string::npos &&
                         t.find("0x") == std::string::npos;
        try {
            std::size_t used = 0;
            if (flt) {
                const double v = std::stod(t, &used);
                if (used != t.size()) err("bad number '" + t + "'");
                return v;
            }
            const long long v = std::stoll(t, &used);
            if (used != t.size()) err("bad number '" + t + "'");
            return v;
        } catch (const std::exception&) {
            err("bad number '" + t + "'");
        }
    }

    std::istringstream in_;
    int line_no_ = 0;
};

} // namespace

void ClusterConfig::validate() const {
    if (!(u > 0.0 && u < 1.0)) bad("cluster.u outside (0,1)");
    if (k_range.empty()) bad("cluster.k_range is empty");
    for (int k : k_range)
        if (k < 2) bad("cluster.k_range entries must be at least 2");
    if (restarts < 1) bad("cluster.restarts must be positive");
}

void HeatwaveConfig::validate() const {
    if (!(threshold_prob > 0.0 && threshold_prob < 1.0)) bad("heatwave.threshold_prob outside (0,1)");
    if (run_length < 1) bad("heatwave.run_length must be positive");
    if (!(alpha > 0.0 && alpha <= 1.0)) bad("heatwave.alpha outside (0,1]");
}

void NbeConfig::validate() const {
    if (years < 2) bad("nbe.years must be at least 2");
    if (n_train < 1 || n_val < 1 || n_holdout < 1) bad("nbe split counts must be positive");
    if (checkpoint_every < 1) bad("nbe.checkpoint_every must be positive");
    if (max_epochs < 1 || batch < 1 || patience < 1) bad("nbe training knobs must be positive");
    if (!(lr > 0.0)) bad("nbe.lr must be positive");
    if (bootstrap_B < 2) bad("nbe.bootstrap_B must be at least 2");
    if (bootstrap_years < 2) bad("nbe.bootstrap_years must be at least 2");
}

void AttributionConfig::validate() const {
    if (J < 1 || J_boot < 1) bad("attribution year counts must be positive");
    if (B < 1) bad("attribution.B must be positive");
    if (!(alpha_ci > 0.0 && alpha_ci < 1.0)) bad("attribution.alpha_ci outside (0,1)");
    if (scenario_gmst.empty()) bad("attribution.scenario_gmst is empty");
    if (!(g_max > 0.0)) bad("attribution.g_max must be positive");
    for (double g : scenario_gmst)
        if (g < 0.0 || g > g_max) bad("attribution.scenario_gmst outside [0, g_max]");
    for (double g : exceedance_gmst)
        if (g < 0.0 || g > g_max) bad("attribution.exceedance_gmst outside [0, g_max]");
}

void RunConfig::validate() const {
    if (out_dir.empty()) bad("out_dir is empty");
    if (jobs < 1) bad("jobs must be positive");
    try {
        synthetic.validate();
        bsqr.validate();
        gev.validate();
        summaries.validate();
    } catch (const ValidationError&) {
        throw;
    } catch (const std::exception& e) {
        bad(e.what());
    }
    heatwave.validate();
    cluster.validate();
    nbe.validate();
    attribution.validate();
    if (heatwave.run_length > synthetic.D) bad("heatwave.run_length exceeds the season length");
    if (synthetic.gmst_end > attribution.g_max)
        bad("synthetic.gmst_end exceeds attribution.g_max");
}

RunConfig config_from_json_text(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) bad("invalid JSON");
    return config_from_json(j);
}

RunConfig config_from_toml_text(const std::string& text) {
    return config_from_json(TomlParser(text).parse());
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) bad("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    if (path.size() >= 5 && path.substr(path.size() - 5) == ".toml")
        return config_from_toml_text(text);
    if (path.size() >= 5 && path.substr(path.size() - 5) == ".json")
        return config_from_json_text(text);
    bad("config file must end in .json or .toml");
}

std::string config_template_toml() {
    RunConfig d;
    std::ostringstream o;
    o << "# heatsim run configuration; every key shows its default\n"
      << "out_dir = \"" << d.out_dir << "\"\n"
      << "seed = " << d.seed << "\n"
      << "jobs = " << d.jobs << "\n"
      << "\n[synthetic]\n"
      << "width = " << d.synthetic.width << "          # cells per grid side\n"
      << "lon0 = " << d.synthetic.lon0 << "\n"
      << "lat0 = " << d.synthetic.lat0 << "\n"
      << "days = " << d.synthetic.D << "           # days per summer season\n"
      << "years = " << d.synthetic.T << "\n"
      << "base_mean = " << d.synthetic.base_mean << "\n"
      << "marg_scale = " << d.synthetic.marg_scale << "\n"
      << "marg_slant = " << d.synthetic.marg_slant << "\n"
      << "mu_trend = " << d.synthetic.mu_trend << "        # degC per unit rescaled GMST\n"
      << "sigma_trend = " << d.synthetic.sigma_trend << "\n"
      << "gmst_end = " << d.synthetic.gmst_end << "\n"
      << "g_max = " << d.synthetic.g_max << "\n"
      << "baseline_years = " << d.synthetic.baseline_years << "\n"
      << "\n[synthetic.dep]     # injected dependence truth\n"
      << "delta = " << d.synthetic.dep.delta << "\n"
      << "theta = " << d.synthetic.dep.theta << "\n"
      << "omega = " << d.synthetic.dep.omega << "\n"
      << "eta = " << d.synthetic.dep.eta << "\n"
      << "kappa = " << d.synthetic.dep.kappa << "\n"
      << "lambda = " << d.synthetic.dep.lambda << "\n"
      << "rho_s = " << d.synthetic.dep.rho_s << "\n"
      << "rho_t = " << d.synthetic.dep.rho_t << "\n"
      << "\n[heatwave]\n"
      << "threshold_prob = " << d.heatwave.threshold_prob << "\n"
      << "run_length = " << d.heatwave.run_length << "\n"
      << "alpha = " << d.heatwave.alpha << "         # regional area fraction\n"
      << "\n[cluster]\n"
      << "u = " << d.cluster.u << "\n"
      << "k_range = [2, 3, 4, 5]\n"
      << "restarts = " << d.cluster.restarts << "\n"
      << "\n[bsqr]\n"
      << "M = " << d.bsqr.model.M << "              # Bernstein basis size\n"
      << "tau_levels = " << d.bsqr.model.grid.K() << "\n"
      << "tau_min = " << d.bsqr.model.tau_min << "\n"
      << "tau_max = " << d.bsqr.model.tau_max << "\n"
      << "mono_lo = " << d.bsqr.model.mono_lo << "\n"
      << "mono_step = " << d.bsqr.model.mono_step << "\n"
      << "chains = " << d.bsqr.chains << "\n"
      << "burnin = " << d.bsqr.burnin << "\n"
      << "samples = " << d.bsqr.samples << "\n"
      << "thin = " << d.bsqr.thin << "\n"
      << "a_sigma = " << d.bsqr.a_sigma << "\n"
      << "b_sigma = " << d.bsqr.b_sigma << "\n"
      << "a_rho = " << d.bsqr.a_rho << "\n"
      << "b_rho = " << d.bsqr.b_rho << "\n"
      << "psi1_sd = " << d.bsqr.psi1_sd << "\n"
      << "psi2_lsd = " << d.bsqr.psi2_lsd << "\n"
      << "psi3_sd = " << d.bsqr.psi3_sd << "\n"
      << "rhat_tol = " << d.bsqr.rhat_tol << "\n"
      << "\n[gev]\n"
      << "chains = " << d.gev.chains << "\n"
      << "burnin = " << d.gev.burnin << "\n"
      << "samples = " << d.gev.samples << "\n"
      << "thin = " << d.gev.thin << "\n"
      << "xi_lo = " << d.gev.xi_lo << "\n"
      << "xi_hi = " << d.gev.xi_hi << "\n"
      << "xi_prior_sd = " << d.gev.xi_prior_sd << "\n"
      << "slope_mu_sd = " << d.gev.slope_mu_sd << "\n"
      << "slope_sigma_sd = " << d.gev.slope_sigma_sd << "\n"
      << "rhat_tol = " << d.gev.rhat_tol << "\n"
      << "\n[summaries]\n"
      << "thresholds = [0.9, 0.95, 0.99]\n"
      << "max_lag = " << d.summaries.max_lag << "\n"
      << "bin_km = " << d.summaries.bin_km << "\n"
      << "distance_bins = " << d.summaries.L << "\n"
      << "profile_u = " << d.summaries.profile_u << "\n"
      << "alphas = [0.1, 0.5, 0.9]\n"
      << "extent_km = " << d.summaries.extent_km << "\n"
      << "eps = " << d.summaries.eps << "\n"
      << "\n[nbe]\n"
      << "years = " << d.nbe.years << "\n"
      << "n_train = " << d.nbe.n_train << "\n"
      << "n_val = " << d.nbe.n_val << "\n"
      << "n_holdout = " << d.nbe.n_holdout << "\n"
      << "checkpoint_every = " << d.nbe.checkpoint_every << "\n"
      << "max_epochs = " << d.nbe.max_epochs << "\n"
      << "batch = " << d.nbe.batch << "\n"
      << "lr = " << d.nbe.lr << "\n"
      << "patience = " << d.nbe.patience << "\n"
      << "bootstrap_B = " << d.nbe.bootstrap_B << "\n"
      << "bootstrap_years = " << d.nbe.bootstrap_years << "\n"
      << "\n[attribution]\n"
      << "J = " << d.attribution.J << "            # years behind each return-period point\n"
      << "J_boot = " << d.attribution.J_boot << "\n"
      << "B = " << d.attribution.B << "\n"
      << "alpha_ci = " << d.attribution.alpha_ci << "\n"
      << "scenario_gmst = [0.0, 1.0, 2.0, 3.0]\n"
      << "exceedance_gmst = [1.0, 2.0, 3.0, 4.0]\n"
      << "g_max = " << d.attribution.g_max << "\n"
      << "duration_levels = []    # empty picks 0..days-1\n"
      << "intensity_levels = []   # empty picks quantiles of the point run\n";
    return o.str();
}

} // namespace heatsim
