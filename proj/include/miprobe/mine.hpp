#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "miprobe/nn.hpp"
#include "miprobe/rng.hpp"

namespace miprobe::mine {

// L x D matrix of frame features; rows are time steps.
struct FeatureSequence {
    Eigen::MatrixXd values;

    Eigen::Index length() const { return values.rows(); }
    Eigen::Index dim() const { return values.cols(); }
};

enum class Side { InputSide, TargetSide };

std::string to_string(Side s);
Side side_from_string(const std::string& name);

struct MineConfig {
    int batch_size = 256;
    int train_steps = 2000;
    double ema_decay = 0.99;   // 0 recovers the plain batch denominator
    int eval_batches = 32;
    std::uint64_t seed = 0;
    std::vector<int> hidden_sizes = {256, 256};
    nn::Activation activation = nn::Activation::Elu;
    double learning_rate = 1e-3;
    double score_clamp = 50.0;

    void validate() const;
};

struct MIEstimate {
    double value_nats = 0.0;
    int layer_index = 0;
    Side side = Side::InputSide;
    std::string sample_id;
    std::vector<double> final_loss_curve;   // DV objective per training step
    long clamp_events = 0;
};

struct AveragedCurve {
    std::vector<double> per_layer_mean;
    int n_samples = 0;
    std::vector<double> log_values;
    std::vector<bool> clamped;              // per layer, set by log_transform
};

// Column-wise z-scoring. MI is invariant under invertible per-coordinate
// affine maps, but the optimizer is not: wildly scaled features slow the
// statistics network down, so estimation works on standardized copies.
// Near-constant columns are centered only.
FeatureSequence standardize_columns(const FeatureSequence& f);

// Cyclic random permutation (Sattolo): no fixed points, so every produced
// pair (x_j, t_{pi(j)}) is a genuine marginal sample.
std::vector<int> shuffle_marginal_perm(int length, SeededRng& rng);

// Applies shuffle_marginal_perm to the T side of an aligned pair.
std::pair<FeatureSequence, FeatureSequence> shuffle_marginal(const FeatureSequence& x,
                                                             const FeatureSequence& t,
                                                             SeededRng& rng);

// mean(joint) - log(mean(exp(marginal))), max-shifted for stability.
double dv_objective(const Eigen::VectorXd& joint_scores, const Eigen::VectorXd& marginal_scores);

struct MineGradient {
    nn::MlpGrads grads;       // ascent direction of the DV objective
    double updated_ema = 0.0;
    long clamp_events = 0;
    double objective = 0.0;   // DV value of this batch pair (batch denominator)
};

// Batch gradient of the DV objective with the exp-denominator replaced by its
// exponential moving average. Pass ema_decay = 0 to use the raw batch mean.
MineGradient mine_gradient(const Eigen::MatrixXd& joint_batch,
                           const Eigen::MatrixXd& marginal_batch, const nn::MlpParams& net,
                           double ema_denominator, double ema_decay, double score_clamp);

// Trains a fresh statistics network on frame pairs from (x, t) and reports the
// post-training DV objective averaged over fresh evaluation batches.
MIEstimate estimate_mi_sample(const FeatureSequence& x, const FeatureSequence& t,
                              const MineConfig& cfg, int layer_index = 0,
                              Side side = Side::InputSide, const std::string& sample_id = "");

// Arithmetic per-layer mean; estimates[layer] holds that layer's group.
AveragedCurve average_mi(const std::vector<std::vector<MIEstimate>>& estimates_by_layer);

// log_values[i] = ln(max(mean[i], 1e-6)), clamped entries flagged.
AveragedCurve log_transform(AveragedCurve curve);

inline constexpr double kLogFloor = 1e-6;

}  // namespace miprobe::mine
