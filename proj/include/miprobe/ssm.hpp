#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "miprobe/rng.hpp"

namespace miprobe::ssm {

// ---------------------------------------------------------------------------
// Time-invariant path: continuous dynamics, ZOH discretization, scan.
// ---------------------------------------------------------------------------

// Diagonal continuous-time system h' = a.h + b.x, y = <c,h> + d.x with step
// size delta = exp(log_delta).
struct ContinuousSSM {
    Eigen::VectorXd a;        // diagonal, strictly negative for stability
    Eigen::VectorXd b;
    Eigen::VectorXd c;
    double d = 0.0;
    double log_delta = 0.0;

    double delta() const { return std::exp(log_delta); }
    Eigen::Index state_dim() const { return a.size(); }
};

struct DiscreteSSM {
    Eigen::VectorXd a_bar;
    Eigen::VectorXd b_bar;
};

// Zero-order hold: a_bar = exp(delta.a), b_bar = ((exp(delta.a)-1)/a).b,
// with the analytic limit delta.b at a = 0.
DiscreteSSM discretize_zoh(const ContinuousSSM& cssm);

// One recurrence step: h_next = a_bar.h + b_bar.x, y = <c,h_next> + d.x.
std::pair<Eigen::VectorXd, double> ssm_step(const Eigen::VectorXd& h, double x_t,
                                            const DiscreteSSM& d, const Eigen::VectorXd& c,
                                            double skip_d);

// L applications of ssm_step from h_0 = 0.
Eigen::VectorXd ssm_scan(const DiscreteSSM& d, const Eigen::VectorXd& c, double skip_d,
                         const Eigen::VectorXd& sequence);

// ---------------------------------------------------------------------------
// Selective (time-varying) path.
// ---------------------------------------------------------------------------

// Affine maps from an input frame to the per-step (delta, B, C). delta gets a
// softplus so step sizes stay positive; B and C are shared across channels.
struct SelectiveProjections {
    Eigen::MatrixXd delta_w;   // d_model x d_model
    Eigen::VectorXd delta_b;
    Eigen::MatrixXd b_w;       // state_dim x d_model
    Eigen::VectorXd b_b;
    Eigen::MatrixXd c_w;       // state_dim x d_model
    Eigen::VectorXd c_b;

    Eigen::Index d_model() const { return delta_w.rows(); }
    Eigen::Index state_dim() const { return b_w.rows(); }
};

struct SelectiveStep {
    Eigen::VectorXd delta;     // per channel, > 0
    Eigen::VectorXd b_t;
    Eigen::VectorXd c_t;
};

SelectiveStep selective_params(const Eigen::VectorXd& frame, const SelectiveProjections& proj);

// Per channel c with diagonal state: h_t = exp(delta_t(c) * a(c,:)) o h_{t-1}
// + delta_t(c) * x_t(c) * B_t, y_t(c) = <C_t, h_t(c,:)> + d_skip(c) * x_t(c).
// a is d_model x state_dim, entries negative.
Eigen::MatrixXd selective_scan(const SelectiveProjections& proj, const Eigen::MatrixXd& a,
                               const Eigen::VectorXd& d_skip, const Eigen::MatrixXd& sequence);

// Training variant: retains everything the backward sweep needs.
struct SelectiveScanCache {
    Eigen::MatrixXd input;                 // L x d_model
    Eigen::MatrixXd delta;                 // L x d_model
    Eigen::MatrixXd b_t;                   // L x state_dim
    Eigen::MatrixXd c_t;                   // L x state_dim
    std::vector<Eigen::MatrixXd> h;        // per step, d_model x state_dim
};

Eigen::MatrixXd selective_scan_cached(const SelectiveProjections& proj, const Eigen::MatrixXd& a,
                                      const Eigen::VectorXd& d_skip,
                                      const Eigen::MatrixXd& sequence, SelectiveScanCache& cache);

struct SelectiveScanGrads {
    SelectiveProjections proj;   // gradient mirror of the projections
    Eigen::MatrixXd a;
    Eigen::VectorXd d_skip;

    static SelectiveScanGrads zeros(Eigen::Index d_model, Eigen::Index state_dim);
};

// Accumulates parameter gradients into `grads` and returns dL/d(input).
Eigen::MatrixXd selective_scan_backward(const SelectiveProjections& proj, const Eigen::MatrixXd& a,
                                        const Eigen::VectorXd& d_skip,
                                        const SelectiveScanCache& cache,
                                        const Eigen::MatrixXd& d_output,
                                        SelectiveScanGrads& grads);

// ---------------------------------------------------------------------------
// Bidirectional block.
// ---------------------------------------------------------------------------

// One selective-scan direction with its stability parameterization:
// a = -exp(a_log) keeps every diagonal entry strictly negative under training.
struct SelectiveLayer {
    SelectiveProjections proj;
    Eigen::MatrixXd a_log;     // d_model x state_dim
    Eigen::VectorXd d_skip;

    Eigen::MatrixXd a() const { return (-a_log.array().exp()).matrix(); }
};

// Pre-norm bidirectional block: layernorm -> input mix -> forward scan +
// time-reversed backward scan -> sum -> output mix -> optional residual.
struct BiMambaBlock {
    SelectiveLayer forward_dir;
    SelectiveLayer backward_dir;
    Eigen::MatrixXd in_w;      // d_model x d_model
    Eigen::VectorXd in_b;
    Eigen::MatrixXd out_w;
    Eigen::VectorXd out_b;
    Eigen::VectorXd ln_gain;
    Eigen::VectorXd ln_bias;
    bool residual = true;

    Eigen::Index d_model() const { return in_w.rows(); }

    static BiMambaBlock init(Eigen::Index d_model, Eigen::Index state_dim, SeededRng& rng);
};

Eigen::MatrixXd bimamba_block(const BiMambaBlock& params, const Eigen::MatrixXd& sequence);

struct BiMambaBlockCache {
    Eigen::MatrixXd input;
    Eigen::MatrixXd normed;               // after layernorm
    Eigen::VectorXd inv_std;              // per row
    Eigen::MatrixXd mixed;                // after input affine
    SelectiveScanCache fwd_cache;
    SelectiveScanCache bwd_cache;         // on the time-reversed mixed input
    Eigen::MatrixXd scan_sum;
};

Eigen::MatrixXd bimamba_block_cached(const BiMambaBlock& params, const Eigen::MatrixXd& sequence,
                                     BiMambaBlockCache& cache);

// Gradient mirror shares the parameter layout.
Eigen::MatrixXd bimamba_block_backward(const BiMambaBlock& params, const BiMambaBlockCache& cache,
                                       const Eigen::MatrixXd& d_output, BiMambaBlock& grads);

BiMambaBlock zeros_like(const BiMambaBlock& b);

// Visitation over every trainable dense object, shared by pack/unpack and the
// optimizer glue in the models module.
template <class Block, class F>
void for_each_param(Block&& b, F&& f) {
    f(b.forward_dir.proj.delta_w);
    f(b.forward_dir.proj.delta_b);
    f(b.forward_dir.proj.b_w);
    f(b.forward_dir.proj.b_b);
    f(b.forward_dir.proj.c_w);
    f(b.forward_dir.proj.c_b);
    f(b.forward_dir.a_log);
    f(b.forward_dir.d_skip);
    f(b.backward_dir.proj.delta_w);
    f(b.backward_dir.proj.delta_b);
    f(b.backward_dir.proj.b_w);
    f(b.backward_dir.proj.b_b);
    f(b.backward_dir.proj.c_w);
    f(b.backward_dir.proj.c_b);
    f(b.backward_dir.a_log);
    f(b.backward_dir.d_skip);
    f(b.in_w);
    f(b.in_b);
    f(b.out_w);
    f(b.out_b);
    f(b.ln_gain);
    f(b.ln_bias);
}

}  // namespace miprobe::ssm
