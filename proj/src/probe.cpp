#include "miprobe/probe.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace miprobe::probe {

std::string to_string(Trend t) {
    switch (t) {
        case Trend::ReconstructionShaped: return "reconstruction_shaped";
        case Trend::MonotoneDecreasing: return "monotone_decreasing";
        case Trend::Other: return "other";
    }
    throw std::logic_error("bad Trend");
}

void ProbeConfig::validate() const {
    if (n_samples < 1) throw std::invalid_argument("ProbeConfig: n_samples must be >= 1");
    if (sides.empty()) throw std::invalid_argument("ProbeConfig: sides must be non-empty");
    if (jobs < 1) throw std::invalid_argument("ProbeConfig: jobs must be >= 1");
    if (noise_sigma < 0.0) throw std::invalid_argument("ProbeConfig: noise_sigma must be >= 0");
    mine_cfg.validate();
}

Trend classify_trend(const std::vector<double>& log_curve, double noise_band) {
    const std::size_t n = log_curve.size();
    if (n < 3) return Trend::Other;

    // 3-point moving average, shrinking at the ends
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = log_curve[i];
        int count = 1;
        if (i > 0) { acc += log_curve[i - 1]; ++count; }
        if (i + 1 < n) { acc += log_curve[i + 1]; ++count; }
        s[i] = acc / count;
    }

    std::size_t min_idx = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (s[i] < s[min_idx]) min_idx = i;

    const bool interior = min_idx > 0 && min_idx + 1 < n;
    if (interior && s.front() - s[min_idx] > noise_band && s.back() - s[min_idx] > noise_band)
        return Trend::ReconstructionShaped;

    bool non_increasing = true;
    for (std::size_t i = 0; i + 1 < n; ++i)
        if (s[i + 1] - s[i] > noise_band) non_increasing = false;
    // a flat curve inside the band carries no trend
    if (non_increasing && s.front() - s.back() > noise_band) return Trend::MonotoneDecreasing;

    return Trend::Other;
}

LayerProbeReport probe_layers(const models::EncoderStack& stack,
                              const models::SyntheticDataset& data, const ProbeConfig& cfg,
                              const std::string& model_config_hash) {
    cfg.validate();
    if (static_cast<std::size_t>(cfg.n_samples) > data.size())
        throw std::invalid_argument("probe_layers: n_samples exceeds dataset size");
    if (data.dim() != stack.input_dim())
        throw std::invalid_argument("probe_layers: dataset width does not match model input");

    std::vector<int> taps = cfg.tap_points.empty() ? stack.tap_points : cfg.tap_points;
    if (std::find(taps.begin(), taps.end(), 0) == taps.end())
        taps.insert(taps.begin(), 0);  // projection anchor
    std::sort(taps.begin(), taps.end());

    LayerProbeReport report;
    report.tap_points = taps;
    report.model_config_hash = model_config_hash;

    const std::size_t n_layers = taps.size();
    const std::size_t n_sides = cfg.sides.size();
    const std::size_t n_samples = static_cast<std::size_t>(cfg.n_samples);

    struct Slot {
        mine::MIEstimate estimate;
        bool ok = false;
        std::string error;
    };
    // grid[(sample * n_layers + layer) * n_sides + side]
    std::vector<Slot> grid(n_samples * n_layers * n_sides);

    // Representations are computed once per sample up front; estimation jobs
    // are then independent and may complete in any order.
    std::vector<std::vector<Eigen::MatrixXd>> tap_features(n_samples);
    std::vector<Eigen::MatrixXd> x_features(n_samples);
    std::vector<Eigen::MatrixXd> y_features(n_samples);
    auto add_noise = [&cfg](Eigen::MatrixXd& m, std::uint64_t sample, const std::string& tag) {
        if (cfg.noise_sigma <= 0.0) return;
        SeededRng noise_rng(derive_seed(cfg.seed, "noise/sample=" + std::to_string(sample) +
                                                      "/" + tag));
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                m(i, j) += cfg.noise_sigma * noise_rng.normal();
    };

    std::vector<std::string> sample_error(n_samples);
    {
        models::EncoderStack tapped = stack;
        tapped.tap_points.clear();
        for (int t : taps) tapped.tap_points.push_back(t);
        for (std::size_t s = 0; s < n_samples; ++s) {
            // a sample whose representations cannot be computed fails all of
            // its cells but does not abort the rest of the grid
            try {
                models::EncoderTaps et = models::encoder_forward(tapped, data.inputs[s]);
                // standardized per column: the estimate is scale-free, the
                // statistics network's optimization is not
                tap_features[s].reserve(et.taps.size());
                for (auto& tap : et.taps)
                    tap_features[s].push_back(
                        mine::standardize_columns(mine::FeatureSequence{std::move(tap)}).values);
                x_features[s] = tap_features[s].front();  // tap 0 = projected local features
                y_features[s] =
                    mine::standardize_columns(mine::FeatureSequence{data.target_matrix(s)}).values;
                // measurement noise is drawn independently per matrix so a
                // layer never shares a realization with the anchor side
                for (std::size_t l = 0; l < tap_features[s].size(); ++l)
                    add_noise(tap_features[s][l], s, "tap=" + std::to_string(taps[l]));
                add_noise(x_features[s], s, "x");
                add_noise(y_features[s], s, "y");
            } catch (const std::exception& e) {
                sample_error[s] = e.what();
            }
        }
    }

    std::atomic<std::size_t> next_task{0};
    const std::size_t total = grid.size();

    auto worker = [&]() {
        for (;;) {
            const std::size_t k = next_task.fetch_add(1);
            if (k >= total) return;
            const std::size_t side_i = k % n_sides;
            const std::size_t layer_i = (k / n_sides) % n_layers;
            const std::size_t sample_i = k / (n_sides * n_layers);

            const mine::Side side = cfg.sides[side_i];
            mine::MineConfig mc = cfg.mine_cfg;
            const std::string role = "mine/sample=" + std::to_string(sample_i) +
                                     "/layer=" + std::to_string(taps[layer_i]) +
                                     "/side=" + mine::to_string(side);
            mc.seed = derive_seed(cfg.seed, role);
            if (mc.batch_size > data.length()) mc.batch_size = static_cast<int>(data.length());

            Slot& slot = grid[k];
            if (!sample_error[sample_i].empty()) {
                slot.error = sample_error[sample_i];
                continue;
            }
            try {
                mine::FeatureSequence t{tap_features[sample_i][layer_i]};
                if (side == mine::Side::InputSide) {
                    mine::FeatureSequence x{x_features[sample_i]};
                    slot.estimate = mine::estimate_mi_sample(x, t, mc, taps[layer_i], side,
                                                             std::to_string(sample_i));
                } else {
                    mine::FeatureSequence y{y_features[sample_i]};
                    slot.estimate = mine::estimate_mi_sample(t, y, mc, taps[layer_i], side,
                                                             std::to_string(sample_i));
                }
                slot.ok = true;
            } catch (const std::exception& e) {
                slot.error = e.what();
            }
        }
    };

    const int n_threads = std::min<int>(cfg.jobs, static_cast<int>(total));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    // deterministic reduction in (sample, layer, side) order
    std::size_t failures = 0;
    for (std::size_t s = 0; s < n_samples; ++s)
        for (std::size_t l = 0; l < n_layers; ++l)
            for (std::size_t d = 0; d < n_sides; ++d) {
                const Slot& slot = grid[(s * n_layers + l) * n_sides + d];
                if (!slot.ok) {
                    ++failures;
                    report.failures.push_back(FailureRecord{static_cast<int>(s),
                                                            taps[l], cfg.sides[d], slot.error});
                }
            }
    report.partial = failures > 0;
    if (failures * 10 > total) {
        throw std::runtime_error("probe_layers: more than 10% of estimates failed (" +
                                 std::to_string(failures) + "/" + std::to_string(total) + ")");
    }

    for (std::size_t d = 0; d < n_sides; ++d) {
        SideResult side_result;
        side_result.side = cfg.sides[d];
        std::vector<std::vector<mine::MIEstimate>> by_layer(n_layers);
        for (std::size_t s = 0; s < n_samples; ++s)
            for (std::size_t l = 0; l < n_layers; ++l) {
                const Slot& slot = grid[(s * n_layers + l) * n_sides + d];
                if (slot.ok) {
                    by_layer[l].push_back(slot.estimate);
                    side_result.estimates.push_back(slot.estimate);
                }
            }

        mine::AveragedCurve curve;
        if (failures == 0) {
            curve = mine::average_mi(by_layer);
        } else {
            // failed estimates are dropped from the mean (bounded above by 10%)
            curve.n_samples = static_cast<int>(n_samples);
            for (const auto& group : by_layer) {
                if (group.empty())
                    throw std::runtime_error("probe_layers: a layer lost every estimate");
                double acc = 0.0;
                for (const auto& e : group) acc += e.value_nats;
                curve.per_layer_mean.push_back(acc / static_cast<double>(group.size()));
            }
        }
        side_result.curve = mine::log_transform(std::move(curve));
        side_result.trend = classify_trend(side_result.curve.log_values, cfg.trend_epsilon);
        report.sides.push_back(std::move(side_result));
    }
    return report;
}

}  // namespace miprobe::probe
