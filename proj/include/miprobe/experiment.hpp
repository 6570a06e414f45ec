#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "miprobe/models.hpp"
#include "miprobe/probe.hpp"

namespace miprobe::experiment {

using json = nlohmann::json;

// Exit codes shared by the library entry points and the CLI.
inline constexpr int kOk = 0;
inline constexpr int kConfigError = 2;
inline constexpr int kNumericError = 3;
inline constexpr int kPartialProbe = 4;

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };
LogLevel log_level();  // from MI_PROBE_LOG, default info
void log(LogLevel level, const std::string& message);

struct ExperimentSpec {
    std::string name = "experiment";
    models::TaskKind task = models::TaskKind::Reconstruction;
    models::ModelConfig model;
    models::GenConfig data;
    models::TrainConfig train;
    probe::ProbeConfig probe_cfg;
    std::string out_dir = ".";
    std::uint64_t master_seed = 0;

    // Parses a config object, applying dotted-path overrides such as
    // "train.steps=500" on top. Unknown keys are config errors.
    static ExperimentSpec from_json(const json& j,
                                    const std::vector<std::string>& overrides = {});
    json to_json() const;

    // Everything that influences results (out_dir and jobs excluded).
    std::string config_hash() const;
    void validate() const;
};

struct ExperimentResult {
    int exit_code = kOk;
    probe::LayerProbeReport report;
    std::vector<double> loss_history;
};

// End-to-end: generate data, train, probe, write model.bin / report.json /
// report.csv / curve.svg under out_dir. On failure writes a FAILED marker and
// keeps whatever was produced.
ExperimentResult run_experiment(const ExperimentSpec& spec);

// Probe an existing model container against an existing dataset container.
int probe_command(const std::string& model_path, const std::string& data_path,
                  const std::string& out_dir, const probe::ProbeConfig& cfg);

// Side-by-side trend table plus an overlay plot; refuses reports whose layer
// conventions differ.
int compare_runs(const std::vector<std::string>& report_paths, const std::string& out_dir);

// Rebuild report.csv and curve.svg from an existing report.json.
int report_command(const std::string& report_path, const std::string& out_dir);

}  // namespace miprobe::experiment
