#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "miprobe/mine.hpp"
#include "miprobe/nn.hpp"
#include "miprobe/rng.hpp"
#include "miprobe/ssm.hpp"

namespace miprobe::models {

enum class TaskKind { Reconstruction, FrameClassification, DecoderSeq2Seq };

std::string to_string(TaskKind k);
TaskKind task_from_string(const std::string& name);

struct ModelConfig {
    int input_dim = 16;
    int d_model = 12;       // bottleneck: strictly below input_dim by default
    int state_dim = 8;
    int n_layers = 6;
    int decoder_layers = 2;  // used by the DecoderSeq2Seq head
    bool residual = true;    // encoder blocks; a plain (non-residual) stack lets
                             // depth reshape representations instead of
                             // accumulating them on a skip path
    std::vector<int> tap_points;  // 0 = projection output, k = after block k; empty = all
};

struct EncoderStack {
    Eigen::MatrixXd in_w;   // d_model x input_dim
    Eigen::VectorXd in_b;
    std::vector<ssm::BiMambaBlock> layers;
    std::vector<int> tap_points;

    static EncoderStack init(const ModelConfig& cfg, SeededRng& rng);
    Eigen::Index d_model() const { return in_w.rows(); }
    Eigen::Index input_dim() const { return in_w.cols(); }
};

struct TaskHead {
    TaskKind kind = TaskKind::Reconstruction;
    Eigen::MatrixXd out_w;  // output_dim x d_model
    Eigen::VectorXd out_b;
    std::vector<ssm::BiMambaBlock> decoder;  // DecoderSeq2Seq only

    static TaskHead init(TaskKind kind, const ModelConfig& cfg, int output_dim, SeededRng& rng);
};

struct GenConfig {
    TaskKind task = TaskKind::Reconstruction;
    int n_samples = 200;
    int length = 128;
    int dim = 16;
    int class_count = 8;
    int min_segment = 8;
    int max_segment = 24;
    int n_sinusoids = 4;
    double sinusoid_amp = 0.3;
};

struct SyntheticDataset {
    TaskKind task = TaskKind::Reconstruction;
    std::uint64_t seed = 0;
    int class_count = 0;
    Eigen::MatrixXd codewords;                      // class_count x dim
    std::vector<mine::FeatureSequence> inputs;
    std::vector<std::vector<int>> labels;           // per frame, classification only

    std::size_t size() const { return inputs.size(); }
    Eigen::Index length() const { return inputs.empty() ? 0 : inputs.front().length(); }
    Eigen::Index dim() const { return inputs.empty() ? 0 : inputs.front().dim(); }

    // Reconstruction target is the input itself; classification target is the
    // one-hot label matrix. Both double as the probe's target-side features.
    Eigen::MatrixXd target_matrix(std::size_t index) const;
};

SyntheticDataset gen_synthetic_dataset(const GenConfig& cfg, std::uint64_t seed);

struct EncoderTaps {
    Eigen::MatrixXd output;                 // after the last block
    std::vector<Eigen::MatrixXd> taps;      // aligned with stack.tap_points
};

EncoderTaps encoder_forward(const EncoderStack& stack, const mine::FeatureSequence& input);

struct TrainConfig {
    int steps = 2000;
    int batch_size = 8;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
};

// Mini-batch optimization of the task loss; returns the per-step loss history.
std::vector<double> train_task(EncoderStack& stack, TaskHead& head, const SyntheticDataset& data,
                               const TrainConfig& cfg);

// Loss of the current parameters over listed samples (no update). Exposed for
// tests and the chance-level baseline.
double task_loss(const EncoderStack& stack, const TaskHead& head, const SyntheticDataset& data,
                 const std::vector<std::size_t>& sample_indices);

// Flat parameter plumbing shared with the optimizer and the model container.
template <class F>
void for_each_param(EncoderStack& s, TaskHead& h, F&& f) {
    f(s.in_w);
    f(s.in_b);
    for (auto& layer : s.layers) ssm::for_each_param(layer, f);
    f(h.out_w);
    f(h.out_b);
    for (auto& layer : h.decoder) ssm::for_each_param(layer, f);
}
template <class F>
void for_each_param(const EncoderStack& s, const TaskHead& h, F&& f) {
    f(s.in_w);
    f(s.in_b);
    for (const auto& layer : s.layers) ssm::for_each_param(layer, f);
    f(h.out_w);
    f(h.out_b);
    for (const auto& layer : h.decoder) ssm::for_each_param(layer, f);
}

Eigen::VectorXd pack_params(const EncoderStack& s, const TaskHead& h);
void unpack_params(EncoderStack& s, TaskHead& h, const Eigen::VectorXd& flat);

// Gradient of the mean task loss over the listed samples with respect to the
// flat parameter vector. Used by training and by the finite-difference tests.
Eigen::VectorXd task_loss_gradient(const EncoderStack& stack, const TaskHead& head,
                                   const SyntheticDataset& data,
                                   const std::vector<std::size_t>& sample_indices,
                                   double* loss_out = nullptr);

}  // namespace miprobe::models
