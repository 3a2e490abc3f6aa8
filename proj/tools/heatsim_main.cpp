#include "heatsim/config.hpp"
#include "heatsim/logging.hpp"
#include "heatsim/pipeline.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

int main(int argc, char** argv) {
    CLI::App app{"heatwave simulation and attribution pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::string log_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    bool force = false;
    app.add_option("-c,--config", config_path, "TOML or JSON run configuration");
    app.add_option("-o,--out", out_dir, "output directory (overrides config)");
    app.add_option("-s,--seed", seed, "master seed (overrides config)");
    app.add_option("-j,--jobs", jobs, "worker threads (overrides config)");
    app.add_option("--log", log_path, "append line-delimited JSON logs here instead of stderr");
    app.add_flag("-f,--force", force, "rebuild stages even when artifacts look stale");

    std::string template_out;
    CLI::App* tmpl = app.add_subcommand("config-template",
                                        "write a commented configuration template");
    tmpl->add_option("path", template_out, "destination file (stdout when omitted)");

    for (const std::string& name : heatsim::Pipeline::stage_names())
        app.add_subcommand(name, "run the " + name + " stage");
    app.add_subcommand("run-all", "run every stage in order");

    CLI11_PARSE(app, argc, argv);

    if (tmpl->parsed()) {
        const std::string text = heatsim::config_template_toml();
        if (template_out.empty()) {
            std::cout << text;
        } else {
            std::ofstream out(template_out, std::ios::trunc);
            if (!out) {
                std::fprintf(stderr, "cannot write %s\n", template_out.c_str());
                return 2;
            }
            out << text;
        }
        return 0;
    }

    std::ofstream log_file;
    if (!log_path.empty()) {
        log_file.open(log_path, std::ios::app);
        if (!log_file) {
            std::fprintf(stderr, "cannot open log file %s\n", log_path.c_str());
            return 2;
        }
        heatsim::set_log_sink(&log_file);
    }

    heatsim::RunConfig cfg;
    try {
        if (!config_path.empty()) cfg = heatsim::load_config(config_path);
    } catch (const std::exception& e) {
        heatsim::log_error("cli", "bad_config", {{"error", std::string(e.what())}});
        return 2;
    }
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (seed) cfg.seed = *seed;
    if (jobs) cfg.jobs = *jobs;

    const std::string stage = app.get_subcommands().front()->get_name();
    return heatsim::run_cli_stage(cfg, stage, force);
}
