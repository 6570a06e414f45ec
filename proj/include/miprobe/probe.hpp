#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "miprobe/mine.hpp"
#include "miprobe/models.hpp"

namespace miprobe::probe {

enum class Trend { ReconstructionShaped, MonotoneDecreasing, Other };

std::string to_string(Trend t);

struct ProbeConfig {
    int n_samples = 100;
    std::vector<mine::Side> sides = {mine::Side::InputSide};
    mine::MineConfig mine_cfg;
    std::vector<int> tap_points;   // empty: use the model's own tap points
    std::uint64_t seed = 0;
    int jobs = 1;
    double trend_epsilon = 0.1;    // log-nats noise band for classify_trend

    // Std-dev of Gaussian measurement noise added independently to each
    // standardized feature matrix before estimation. Deterministic encoders
    // make the noise-free MI infinite, so estimates saturate the training
    // budget; a noise floor turns them into finite, geometry-sensitive
    // quantities. 0 disables.
    double noise_sigma = 0.0;

    void validate() const;
};

struct FailureRecord {
    int sample_index = 0;
    int layer = 0;
    mine::Side side = mine::Side::InputSide;
    std::string message;
};

struct SideResult {
    mine::Side side = mine::Side::InputSide;
    mine::AveragedCurve curve;                      // log-transformed
    Trend trend = Trend::Other;
    std::vector<mine::MIEstimate> estimates;        // sample-major, layer-minor
};

struct LayerProbeReport {
    std::vector<int> tap_points;
    std::vector<SideResult> sides;
    std::vector<FailureRecord> failures;
    std::string model_config_hash;
    bool partial = false;
};

// Smooths with a 3-point moving average, then labels. A curve whose total
// variation sits inside the noise band is Other, not MonotoneDecreasing.
Trend classify_trend(const std::vector<double>& log_curve, double noise_band);

// Layer-wise MI estimation over the first n_samples dataset entries. X is the
// post-projection feature sequence (tap 0), so the curve has a common anchor.
LayerProbeReport probe_layers(const models::EncoderStack& stack,
                              const models::SyntheticDataset& data, const ProbeConfig& cfg,
                              const std::string& model_config_hash = "");

}  // namespace miprobe::probe
