#include "miprobe/models.hpp"

#include <cmath>
#include <stdexcept>

namespace miprobe::models {

std::string to_string(TaskKind k) {
    switch (k) {
        case TaskKind::Reconstruction: return "reconstruction";
        case TaskKind::FrameClassification: return "frame_classification";
        case TaskKind::DecoderSeq2Seq: return "decoder_seq2seq";
    }
    throw std::logic_error("bad TaskKind");
}

TaskKind task_from_string(const std::string& name) {
    if (name == "reconstruction") return TaskKind::Reconstruction;
    if (name == "frame_classification") return TaskKind::FrameClassification;
    if (name == "decoder_seq2seq") return TaskKind::DecoderSeq2Seq;
    throw std::invalid_argument("unknown task kind: " + name);
}

EncoderStack EncoderStack::init(const ModelConfig& cfg, SeededRng& rng) {
    if (cfg.n_layers < 2) throw std::invalid_argument("EncoderStack: need at least 2 layers");
    EncoderStack s;
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.input_dim));
    s.in_w.resize(cfg.d_model, cfg.input_dim);
    for (Eigen::Index i = 0; i < s.in_w.rows(); ++i)
        for (Eigen::Index j = 0; j < s.in_w.cols(); ++j)
            s.in_w(i, j) = bound * (2.0 * rng.uniform() - 1.0);
    s.in_b = Eigen::VectorXd::Zero(cfg.d_model);
    for (int k = 0; k < cfg.n_layers; ++k) {
        s.layers.push_back(ssm::BiMambaBlock::init(cfg.d_model, cfg.state_dim, rng));
        s.layers.back().residual = cfg.residual;
    }
    if (cfg.tap_points.empty()) {
        for (int k = 0; k <= cfg.n_layers; ++k) s.tap_points.push_back(k);
    } else {
        s.tap_points = cfg.tap_points;
        for (int t : s.tap_points)
            if (t < 0 || t > cfg.n_layers)
                throw std::invalid_argument("EncoderStack: tap point out of range");
    }
    return s;
}

TaskHead TaskHead::init(TaskKind kind, const ModelConfig& cfg, int output_dim, SeededRng& rng) {
    TaskHead h;
    h.kind = kind;
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    h.out_w.resize(output_dim, cfg.d_model);
    for (Eigen::Index i = 0; i < h.out_w.rows(); ++i)
        for (Eigen::Index j = 0; j < h.out_w.cols(); ++j)
            h.out_w(i, j) = bound * (2.0 * rng.uniform() - 1.0);
    h.out_b = Eigen::VectorXd::Zero(output_dim);
    if (kind == TaskKind::DecoderSeq2Seq) {
        for (int k = 0; k < cfg.decoder_layers; ++k)
            h.decoder.push_back(ssm::BiMambaBlock::init(cfg.d_model, cfg.state_dim, rng));
    }
    return h;
}

Eigen::MatrixXd SyntheticDataset::target_matrix(std::size_t index) const {
    if (task == TaskKind::Reconstruction) return inputs.at(index).values;
    const auto& lab = labels.at(index);
    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(lab.size()),
                                                   class_count);
    for (std::size_t t = 0; t < lab.size(); ++t) onehot(static_cast<Eigen::Index>(t), lab[t]) = 1.0;
    return onehot;
}

SyntheticDataset gen_synthetic_dataset(const GenConfig& cfg, std::uint64_t seed) {
    if (cfg.length < 32 || cfg.dim < 4 || cfg.n_samples < 1)
        throw std::invalid_argument("gen_synthetic_dataset: need length >= 32, dim >= 4, samples >= 1");
    if (cfg.class_count < 2 || cfg.min_segment < 1 || cfg.max_segment < cfg.min_segment)
        throw std::invalid_argument("gen_synthetic_dataset: bad class/segment spec");

    SyntheticDataset ds;
    ds.task = cfg.task;
    ds.seed = seed;
    ds.class_count = cfg.class_count;

    SeededRng code_rng(derive_seed(seed, "codewords"));
    ds.codewords.resize(cfg.class_count, cfg.dim);
    for (Eigen::Index i = 0; i < ds.codewords.rows(); ++i) {
        // resample on collision so classes stay distinct
        for (bool fresh = false; !fresh;) {
            for (Eigen::Index j = 0; j < ds.codewords.cols(); ++j)
                ds.codewords(i, j) = code_rng.uniform() < 0.5 ? -1.0 : 1.0;
            fresh = true;
            for (Eigen::Index k = 0; k < i; ++k)
                if ((ds.codewords.row(i) - ds.codewords.row(k)).norm() < 1e-12) fresh = false;
        }
    }

    SeededRng rng(derive_seed(seed, "samples"));
    for (int s = 0; s < cfg.n_samples; ++s) {
        Eigen::MatrixXd x = Eigen::MatrixXd::Zero(cfg.length, cfg.dim);
        std::vector<int> lab(cfg.length, 0);

        // codeword segments
        int t = 0;
        while (t < cfg.length) {
            const int span = cfg.min_segment +
                             static_cast<int>(rng.uniform_index(
                                 static_cast<std::uint64_t>(cfg.max_segment - cfg.min_segment + 1)));
            const int cls = static_cast<int>(rng.uniform_index(cfg.class_count));
            const int end = std::min(cfg.length, t + span);
            for (; t < end; ++t) {
                x.row(t) = ds.codewords.row(cls);
                lab[t] = cls;
            }
        }

        // damped sinusoid mixture
        for (int k = 0; k < cfg.n_sinusoids; ++k) {
            const double omega = 0.05 + 0.45 * rng.uniform();
            const double phase = 6.283185307179586 * rng.uniform();
            const double decay = 0.02 * rng.uniform();
            Eigen::VectorXd dir(cfg.dim);
            for (Eigen::Index j = 0; j < dir.size(); ++j) dir(j) = rng.normal();
            dir.normalize();
            for (int tt = 0; tt < cfg.length; ++tt) {
                const double v = cfg.sinusoid_amp * std::exp(-decay * tt) *
                                 std::sin(omega * tt + phase);
                x.row(tt) += v * dir.transpose();
            }
        }

        ds.inputs.push_back(mine::FeatureSequence{std::move(x)});
        ds.labels.push_back(std::move(lab));
    }
    return ds;
}

EncoderTaps encoder_forward(const EncoderStack& stack, const mine::FeatureSequence& input) {
    if (input.dim() != stack.input_dim())
        throw std::invalid_argument("encoder_forward: input width mismatch");
    EncoderTaps out;
    Eigen::MatrixXd h = input.values * stack.in_w.transpose();
    h.rowwise() += stack.in_b.transpose();

    std::vector<Eigen::MatrixXd> reps;  // reps[k] after block k, reps[0] = projection
    reps.push_back(h);
    for (const auto& block : stack.layers) {
        h = ssm::bimamba_block(block, h);
        reps.push_back(h);
    }
    out.output = h;
    for (int t : stack.tap_points) out.taps.push_back(reps.at(static_cast<std::size_t>(t)));
    return out;
}

Eigen::VectorXd pack_params(const EncoderStack& s, const TaskHead& h) {
    Eigen::Index n = 0;
    for_each_param(s, h, [&n](const auto& p) { n += p.size(); });
    Eigen::VectorXd flat(n);
    Eigen::Index off = 0;
    for_each_param(s, h, [&flat, &off](const auto& p) {
        flat.segment(off, p.size()) = Eigen::Map<const Eigen::VectorXd>(p.data(), p.size());
        off += p.size();
    });
    return flat;
}

void unpack_params(EncoderStack& s, TaskHead& h, const Eigen::VectorXd& flat) {
    Eigen::Index off = 0;
    for_each_param(s, h, [&flat, &off](auto& p) {
        Eigen::Map<Eigen::VectorXd>(p.data(), p.size()) = flat.segment(off, p.size());
        off += p.size();
    });
    if (off != flat.size())
        throw std::invalid_argument("unpack_params: flat vector size mismatch");
}

namespace {

struct SampleForward {
    Eigen::MatrixXd projected;
    std::vector<ssm::BiMambaBlockCache> enc_caches;
    Eigen::MatrixXd enc_out;
    std::vector<ssm::BiMambaBlockCache> dec_caches;
    Eigen::MatrixXd features;   // what the output affine sees
    Eigen::MatrixXd logits;     // or reconstruction
};

SampleForward model_forward(const EncoderStack& stack, const TaskHead& head,
                            const Eigen::MatrixXd& input) {
    SampleForward f;
    f.projected = input * stack.in_w.transpose();
    f.projected.rowwise() += stack.in_b.transpose();
    Eigen::MatrixXd h = f.projected;
    f.enc_caches.resize(stack.layers.size());
    for (std::size_t k = 0; k < stack.layers.size(); ++k)
        h = ssm::bimamba_block_cached(stack.layers[k], h, f.enc_caches[k]);
    f.enc_out = h;

    if (head.kind == TaskKind::DecoderSeq2Seq) {
        Eigen::MatrixXd d = h;
        f.dec_caches.resize(head.decoder.size());
        for (std::size_t k = 0; k < head.decoder.size(); ++k)
            d = ssm::bimamba_block_cached(head.decoder[k], d, f.dec_caches[k]);
        f.features = d + h;  // additive fusion with the encoder output
    } else {
        f.features = h;
    }
    f.logits = f.features * head.out_w.transpose();
    f.logits.rowwise() += head.out_b.transpose();
    return f;
}

// Loss and dL/dlogits for one sample.
double sample_loss(const TaskHead& head, const Eigen::MatrixXd& logits,
                   const Eigen::MatrixXd& target, const std::vector<int>* labels,
                   Eigen::MatrixXd* d_logits) {
    const Eigen::Index L = logits.rows();
    if (head.kind == TaskKind::Reconstruction) {
        const Eigen::Index D = logits.cols();
        Eigen::MatrixXd diff = logits - target;
        if (d_logits) *d_logits = (2.0 / static_cast<double>(L * D)) * diff;
        return diff.squaredNorm() / static_cast<double>(L * D);
    }
    // cross-entropy with row-wise softmax
    double loss = 0.0;
    if (d_logits) d_logits->resize(L, logits.cols());
    for (Eigen::Index t = 0; t < L; ++t) {
        Eigen::ArrayXd row = logits.row(t).transpose().array();
        const double m = row.maxCoeff();
        Eigen::ArrayXd p = (row - m).exp();
        p /= p.sum();
        const int y = (*labels)[static_cast<std::size_t>(t)];
        loss -= std::log(std::max(p(y), 1e-300));
        if (d_logits) {
            Eigen::ArrayXd g = p;
            g(y) -= 1.0;
            d_logits->row(t) = (g / static_cast<double>(L)).transpose();
        }
    }
    return loss / static_cast<double>(L);
}

void check_head_matches(const TaskHead& head, const SyntheticDataset& data) {
    const bool data_is_recon = data.task == TaskKind::Reconstruction;
    const bool head_is_recon = head.kind == TaskKind::Reconstruction;
    if (data_is_recon != head_is_recon)
        throw std::invalid_argument("task head kind does not match dataset task");
}

}  // namespace

double task_loss(const EncoderStack& stack, const TaskHead& head, const SyntheticDataset& data,
                 const std::vector<std::size_t>& sample_indices) {
    check_head_matches(head, data);
    double acc = 0.0;
    for (std::size_t idx : sample_indices) {
        SampleForward f = model_forward(stack, head, data.inputs.at(idx).values);
        const Eigen::MatrixXd target = data.target_matrix(idx);
        const std::vector<int>* labels =
            head.kind == TaskKind::Reconstruction ? nullptr : &data.labels.at(idx);
        acc += sample_loss(head, f.logits, target, labels, nullptr);
    }
    return acc / static_cast<double>(sample_indices.size());
}

Eigen::VectorXd task_loss_gradient(const EncoderStack& stack, const TaskHead& head,
                                   const SyntheticDataset& data,
                                   const std::vector<std::size_t>& sample_indices,
                                   double* loss_out) {
    check_head_matches(head, data);
    if (sample_indices.empty())
        throw std::invalid_argument("task_loss_gradient: empty sample batch");

    EncoderStack g_stack = stack;
    TaskHead g_head = head;
    for_each_param(g_stack, g_head, [](auto& p) { p.setZero(); });

    double total_loss = 0.0;
    const double inv_b = 1.0 / static_cast<double>(sample_indices.size());

    for (std::size_t idx : sample_indices) {
        const Eigen::MatrixXd& input = data.inputs.at(idx).values;
        SampleForward f = model_forward(stack, head, input);
        const Eigen::MatrixXd target = data.target_matrix(idx);
        const std::vector<int>* labels =
            head.kind == TaskKind::Reconstruction ? nullptr : &data.labels.at(idx);
        Eigen::MatrixXd d_logits;
        total_loss += sample_loss(head, f.logits, target, labels, &d_logits);
        d_logits *= inv_b;

        // output affine
        g_head.out_w += d_logits.transpose() * f.features;
        g_head.out_b += d_logits.colwise().sum().transpose();
        Eigen::MatrixXd d_features = d_logits * head.out_w;

        Eigen::MatrixXd d_enc_out;
        if (head.kind == TaskKind::DecoderSeq2Seq) {
            Eigen::MatrixXd d = d_features;  // into the decoder stack
            for (std::size_t k = head.decoder.size(); k-- > 0;)
                d = ssm::bimamba_block_backward(head.decoder[k], f.dec_caches[k], d,
                                                g_head.decoder[k]);
            d_enc_out = d + d_features;  // fusion adds the direct path
        } else {
            d_enc_out = d_features;
        }

        Eigen::MatrixXd d_h = d_enc_out;
        for (std::size_t k = stack.layers.size(); k-- > 0;)
            d_h = ssm::bimamba_block_backward(stack.layers[k], f.enc_caches[k], d_h,
                                              g_stack.layers[k]);

        g_stack.in_w += d_h.transpose() * input;
        g_stack.in_b += d_h.colwise().sum().transpose();
    }

    if (loss_out) *loss_out = total_loss * inv_b;
    return pack_params(g_stack, g_head);
}

std::vector<double> train_task(EncoderStack& stack, TaskHead& head, const SyntheticDataset& data,
                               const TrainConfig& cfg) {
    check_head_matches(head, data);
    if (cfg.batch_size < 1) throw std::invalid_argument("train_task: batch_size must be >= 1");
    if (data.size() == 0) throw std::invalid_argument("train_task: empty dataset");

    SeededRng rng(derive_seed(cfg.seed, "train-batches"));
    Eigen::VectorXd flat = pack_params(stack, head);
    nn::AdamState opt = nn::AdamState::make(flat.size(), cfg.learning_rate);

    std::vector<double> history;
    history.reserve(cfg.steps);
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<std::size_t> batch(static_cast<std::size_t>(
            std::min<int>(cfg.batch_size, static_cast<int>(data.size()))));
        for (auto& idx : batch) idx = rng.uniform_index(data.size());

        double loss = 0.0;
        Eigen::VectorXd grad = task_loss_gradient(stack, head, data, batch, &loss);
        if (!std::isfinite(loss)) {
            throw std::runtime_error("train_task: loss diverged at step " + std::to_string(step));
        }
        history.push_back(loss);
        adam_step(flat, grad, opt);
        unpack_params(stack, head, flat);
    }
    return history;
}

}  // namespace miprobe::models
