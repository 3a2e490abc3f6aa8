#pragma once
#include "heatsim/config.hpp"

#include <string>
#include <vector>

namespace heatsim {

struct StageStatus {
    std::string name;
    bool ran = false;          // false when the stage was already up to date
    double seconds = 0.0;
};

// Runs the workflow stages against one output directory. Every stage writes a
// manifest with a digest of its inputs (canonical config + upstream outputs)
// and digests of its outputs; rerunning with unchanged inputs is a no-op, and
// stale or tampered artifacts are refused unless force is set.
class Pipeline {
public:
    explicit Pipeline(RunConfig cfg, bool force = false);

    static const std::vector<std::string>& stage_names();
    static const std::vector<std::string>& stage_deps(const std::string& name);

    const RunConfig& config() const { return cfg_; }
    std::string artifact_path(const std::string& rel) const;

    StageStatus run_stage(const std::string& name);
    std::vector<StageStatus> run_all();

private:
    struct Impl;
    RunConfig cfg_;
    bool force_ = false;
};

// canonical serialization used for config digests; key order is fixed
std::string canonical_config(const RunConfig& cfg);

// exit-code wrapper for the CLI: 0 success, 2 validation, 3 convergence
int run_cli_stage(const RunConfig& cfg, const std::string& stage, bool force);

} // namespace heatsim
