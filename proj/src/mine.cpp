#include "miprobe/mine.hpp"

#include <cmath>
#include <stdexcept>

namespace miprobe::mine {

std::string to_string(Side s) {
    return s == Side::InputSide ? "input_side" : "target_side";
}

Side side_from_string(const std::string& name) {
    if (name == "input_side") return Side::InputSide;
    if (name == "target_side") return Side::TargetSide;
    throw std::invalid_argument("unknown side: " + name);
}

void MineConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("MineConfig: batch_size must be >= 1");
    if (train_steps < 0) throw std::invalid_argument("MineConfig: train_steps must be >= 0");
    if (ema_decay < 0.0 || ema_decay >= 1.0)
        throw std::invalid_argument("MineConfig: ema_decay must lie in [0, 1)");
    if (eval_batches < 1) throw std::invalid_argument("MineConfig: eval_batches must be >= 1");
    if (score_clamp <= 0.0) throw std::invalid_argument("MineConfig: score_clamp must be > 0");
}

FeatureSequence standardize_columns(const FeatureSequence& f) {
    FeatureSequence out = f;
    for (Eigen::Index c = 0; c < out.values.cols(); ++c) {
        const double mu = out.values.col(c).mean();
        const double sd = std::sqrt((out.values.col(c).array() - mu).square().mean());
        out.values.col(c).array() -= mu;
        if (sd > 1e-12) out.values.col(c) /= sd;
    }
    return out;
}

std::vector<int> shuffle_marginal_perm(int length, SeededRng& rng) {
    if (length < 2)
        throw std::invalid_argument("shuffle_marginal: need at least 2 frames, got " +
                                    std::to_string(length));
    std::vector<int> perm(length);
    for (int i = 0; i < length; ++i) perm[i] = i;
    // Sattolo's variant: a uniformly random cyclic permutation, pi(j) != j for all j.
    for (int i = length - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(i)));
        std::swap(perm[i], perm[j]);
    }
    return perm;
}

std::pair<FeatureSequence, FeatureSequence> shuffle_marginal(const FeatureSequence& x,
                                                             const FeatureSequence& t,
                                                             SeededRng& rng) {
    if (x.length() != t.length())
        throw std::invalid_argument("shuffle_marginal: X and T lengths differ");
    const auto perm = shuffle_marginal_perm(static_cast<int>(x.length()), rng);
    FeatureSequence shuffled;
    shuffled.values.resize(t.length(), t.dim());
    for (Eigen::Index j = 0; j < t.length(); ++j) shuffled.values.row(j) = t.values.row(perm[j]);
    return {x, shuffled};
}

double dv_objective(const Eigen::VectorXd& joint_scores, const Eigen::VectorXd& marginal_scores) {
    if (joint_scores.size() == 0 || marginal_scores.size() == 0)
        throw std::invalid_argument("dv_objective: empty score vector");
    const double m = marginal_scores.maxCoeff();
    const double lme =
        m + std::log((marginal_scores.array() - m).exp().mean());  // log mean exp
    return joint_scores.mean() - lme;
}

namespace {

// Clamp scores to [-c, c]; returns how many entries moved.
long clamp_scores(Eigen::VectorXd& scores, double c) {
    long events = 0;
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
        if (scores(i) > c) {
            scores(i) = c;
            ++events;
        } else if (scores(i) < -c) {
            scores(i) = -c;
            ++events;
        }
    }
    return events;
}

void add_grads(nn::MlpGrads& acc, const nn::MlpGrads& g) {
    for (std::size_t k = 0; k < acc.weights.size(); ++k) {
        acc.weights[k] += g.weights[k];
        acc.biases[k] += g.biases[k];
    }
}

}  // namespace

MineGradient mine_gradient(const Eigen::MatrixXd& joint_batch,
                           const Eigen::MatrixXd& marginal_batch, const nn::MlpParams& net,
                           double ema_denominator, double ema_decay, double score_clamp) {
    if (joint_batch.rows() == 0 || marginal_batch.rows() == 0)
        throw std::invalid_argument("mine_gradient: empty batch");

    MineGradient out;

    nn::ForwardCache joint_cache;
    Eigen::VectorXd joint_scores = mlp_forward(net, joint_batch, &joint_cache);
    const double bj = static_cast<double>(joint_batch.rows());
    Eigen::VectorXd joint_upstream = Eigen::VectorXd::Constant(joint_batch.rows(), 1.0 / bj);
    out.grads = mlp_backward(net, joint_cache, joint_upstream);

    nn::ForwardCache marg_cache;
    Eigen::VectorXd marg_scores = mlp_forward(net, marginal_batch, &marg_cache);
    Eigen::VectorXd clamped = marg_scores;
    out.clamp_events = clamp_scores(clamped, score_clamp);
    Eigen::VectorXd exp_scores = clamped.array().exp();
    const double batch_mean = exp_scores.mean();
    if (!std::isfinite(batch_mean))
        throw std::runtime_error("mine_gradient: exp term overflowed despite clamping (mean e^psi = " +
                                 std::to_string(batch_mean) + ")");

    const double denom = (ema_denominator > 0.0)
                             ? ema_decay * ema_denominator + (1.0 - ema_decay) * batch_mean
                             : batch_mean;
    out.updated_ema = denom;

    out.objective = joint_scores.mean() - std::log(batch_mean);

    const double bm = static_cast<double>(marginal_batch.rows());
    Eigen::VectorXd marg_upstream(marginal_batch.rows());
    for (Eigen::Index i = 0; i < marg_upstream.size(); ++i) {
        // clamped entries have zero slope through the clamp
        const bool active = marg_scores(i) == clamped(i);
        marg_upstream(i) = active ? -exp_scores(i) / (bm * denom) : 0.0;
    }
    add_grads(out.grads, mlp_backward(net, marg_cache, marg_upstream));
    return out;
}

namespace {

Eigen::MatrixXd gather_pairs(const FeatureSequence& x, const FeatureSequence& t,
                             const std::vector<int>& x_idx, const std::vector<int>& t_idx) {
    Eigen::MatrixXd batch(static_cast<Eigen::Index>(x_idx.size()), x.dim() + t.dim());
    for (std::size_t i = 0; i < x_idx.size(); ++i) {
        batch.row(static_cast<Eigen::Index>(i)) << x.values.row(x_idx[i]), t.values.row(t_idx[i]);
    }
    return batch;
}

struct BatchSampler {
    const FeatureSequence& x;
    const FeatureSequence& t;
    SeededRng& rng;
    int batch_size;

    Eigen::MatrixXd joint() {
        const int L = static_cast<int>(x.length());
        std::vector<int> idx(batch_size);
        for (int& i : idx) i = static_cast<int>(rng.uniform_index(L));
        return gather_pairs(x, t, idx, idx);
    }

    Eigen::MatrixXd marginal() {
        const int L = static_cast<int>(x.length());
        const auto perm = shuffle_marginal_perm(L, rng);
        std::vector<int> xi(batch_size), ti(batch_size);
        for (int i = 0; i < batch_size; ++i) {
            xi[i] = static_cast<int>(rng.uniform_index(L));
            ti[i] = perm[xi[i]];
        }
        return gather_pairs(x, t, xi, ti);
    }
};

}  // namespace

MIEstimate estimate_mi_sample(const FeatureSequence& x, const FeatureSequence& t,
                              const MineConfig& cfg, int layer_index, Side side,
                              const std::string& sample_id) {
    cfg.validate();
    if (x.length() != t.length())
        throw std::invalid_argument("estimate_mi_sample: X and T lengths differ");
    if (x.length() < 2) throw std::invalid_argument("estimate_mi_sample: need at least 2 frames");
    if (cfg.batch_size > x.length())
        throw std::invalid_argument("estimate_mi_sample: batch_size exceeds sequence length");
    if (!x.values.allFinite() || !t.values.allFinite())
        throw std::invalid_argument("estimate_mi_sample: non-finite input features");

    MIEstimate est;
    est.layer_index = layer_index;
    est.side = side;
    est.sample_id = sample_id;

    SeededRng init_rng(derive_seed(cfg.seed, "mine-net-init"));
    SeededRng sample_rng(derive_seed(cfg.seed, "mine-sampling"));

    std::vector<int> sizes;
    sizes.push_back(static_cast<int>(x.dim() + t.dim()));
    for (int h : cfg.hidden_sizes) sizes.push_back(h);
    sizes.push_back(1);
    nn::MlpParams net = nn::MlpParams::init(sizes, cfg.activation, init_rng);

    nn::AdamState opt = nn::AdamState::make(static_cast<Eigen::Index>(net.param_count()),
                                            cfg.learning_rate);
    BatchSampler sampler{x, t, sample_rng, cfg.batch_size};

    double ema = -1.0;  // uninitialized; first batch seeds it
    Eigen::VectorXd flat = net.flatten();
    est.final_loss_curve.reserve(cfg.train_steps);

    for (int step = 0; step < cfg.train_steps; ++step) {
        const Eigen::MatrixXd joint = sampler.joint();
        const Eigen::MatrixXd marg = sampler.marginal();

        MineGradient g = mine_gradient(joint, marg, net, ema, cfg.ema_decay, cfg.score_clamp);
        ema = g.updated_ema;
        est.clamp_events += g.clamp_events;

        const double obj = g.objective;
        if (!std::isfinite(obj)) {
            throw std::runtime_error("estimate_mi_sample: objective diverged at step " +
                                     std::to_string(step));
        }
        est.final_loss_curve.push_back(obj);

        Eigen::VectorXd grad_flat = -g.grads.flatten();  // ascend the DV bound
        adam_step(flat, grad_flat, opt);
        net.set_from_flat(flat);
    }

    // Post-training average over fresh batches, not the best value seen.
    double acc = 0.0;
    for (int b = 0; b < cfg.eval_batches; ++b) {
        Eigen::VectorXd joint_scores = mlp_forward(net, sampler.joint());
        Eigen::VectorXd marg_scores = mlp_forward(net, sampler.marginal());
        est.clamp_events += clamp_scores(joint_scores, cfg.score_clamp);
        est.clamp_events += clamp_scores(marg_scores, cfg.score_clamp);
        acc += dv_objective(joint_scores, marg_scores);
    }
    est.value_nats = acc / cfg.eval_batches;
    if (!std::isfinite(est.value_nats))
        throw std::runtime_error("estimate_mi_sample: non-finite final estimate");
    return est;
}

AveragedCurve average_mi(const std::vector<std::vector<MIEstimate>>& estimates_by_layer) {
    if (estimates_by_layer.empty())
        throw std::invalid_argument("average_mi: no layer groups");
    const std::size_t n = estimates_by_layer.front().size();
    if (n == 0) throw std::invalid_argument("average_mi: empty layer group");
    AveragedCurve curve;
    curve.n_samples = static_cast<int>(n);
    for (const auto& group : estimates_by_layer) {
        if (group.size() != n)
            throw std::invalid_argument("average_mi: ragged layer groups (" +
                                        std::to_string(group.size()) + " vs " +
                                        std::to_string(n) + ")");
        double acc = 0.0;
        for (const auto& e : group) acc += e.value_nats;
        curve.per_layer_mean.push_back(acc / static_cast<double>(n));
    }
    return curve;
}

AveragedCurve log_transform(AveragedCurve curve) {
    curve.log_values.clear();
    curve.clamped.clear();
    for (double mean : curve.per_layer_mean) {
        const bool clamp = mean < kLogFloor;
        curve.log_values.push_back(std::log(clamp ? kLogFloor : mean));
        curve.clamped.push_back(clamp);
    }
    return curve;
}

}  // namespace miprobe::mine
