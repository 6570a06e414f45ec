#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "miprobe/models.hpp"
#include "miprobe/probe.hpp"

namespace miprobe::io {

using json = nlohmann::json;

// FNV-1a hex digest of a canonical dump; embedded in every artifact so
// compare can refuse to overlay reports from different conventions.
std::string config_hash(const json& j);

// -------- versioned binary container: magic, version, JSON header, doubles --

void save_blob(const std::string& path, const json& header, const Eigen::VectorXd& payload);
std::pair<json, Eigen::VectorXd> load_blob(const std::string& path);

void save_model(const std::string& path, const models::EncoderStack& stack,
                const models::TaskHead& head, const json& extra_meta = json::object());

struct LoadedModel {
    models::EncoderStack stack;
    models::TaskHead head;
    json meta;
};
LoadedModel load_model(const std::string& path);

void save_dataset(const std::string& path, const models::SyntheticDataset& data);
models::SyntheticDataset load_dataset(const std::string& path);

// ---------------------------------------------------------------- reports --

json report_to_json(const probe::LayerProbeReport& report);
std::string report_to_csv(const probe::LayerProbeReport& report);

struct CurveForPlot {
    std::string label;
    std::vector<int> layers;
    std::vector<double> log_values;
};

// Fixed-viewbox line plot, one polyline per curve, integer layer ticks.
std::string curves_svg(const std::vector<CurveForPlot>& curves);

void write_file(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

}  // namespace miprobe::io
