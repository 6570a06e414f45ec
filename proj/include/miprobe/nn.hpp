#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "miprobe/rng.hpp"

namespace miprobe::nn {

enum class Activation { Relu, Elu };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation a);

// Scalar-output MLP with explicit weights; the statistics network and every
// other dense map in the project live on this.
struct MlpParams {
    std::vector<int> layer_sizes;                 // [in, h1, ..., 1]
    std::vector<Eigen::MatrixXd> weights;         // weights[k]: sizes[k+1] x sizes[k]
    std::vector<Eigen::VectorXd> biases;
    Activation activation = Activation::Elu;

    static MlpParams init(std::vector<int> sizes, Activation act, SeededRng& rng);

    int input_dim() const { return layer_sizes.front(); }
    std::size_t param_count() const;
    Eigen::VectorXd flatten() const;
    void set_from_flat(const Eigen::VectorXd& flat);
};

// Gradient mirror of MlpParams.
struct MlpGrads {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;

    static MlpGrads zeros_like(const MlpParams& p);
    Eigen::VectorXd flatten() const;
};

// Per-batch activations retained for the backward pass.
struct ForwardCache {
    Eigen::MatrixXd input;                        // batch rows x in
    std::vector<Eigen::MatrixXd> pre;             // pre-activation per hidden layer
    std::vector<Eigen::MatrixXd> post;            // post-activation per hidden layer
    bool valid = false;
};

// One scalar score per batch row.
Eigen::VectorXd mlp_forward(const MlpParams& params, const Eigen::MatrixXd& batch,
                            ForwardCache* cache = nullptr);

// Exact gradients of sum_i upstream[i] * score[i].
MlpGrads mlp_backward(const MlpParams& params, const ForwardCache& cache,
                      const Eigen::VectorXd& upstream);

// Bias-corrected adaptive-moment update over a flat parameter vector; every
// structured parameter set funnels through this via flatten().
struct AdamState {
    Eigen::VectorXd first_moment;
    Eigen::VectorXd second_moment;
    long step_count = 0;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static AdamState make(Eigen::Index n, double lr);
};

// Descends: params -= lr * mhat / (sqrt(vhat) + eps).
void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state);

// MlpParams convenience wrapper around the flat update.
void adam_step(MlpParams& params, const MlpGrads& grads, AdamState& state);

}  // namespace miprobe::nn
