#include "miprobe/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace miprobe::nn {

Activation activation_from_string(const std::string& name) {
    if (name == "relu") return Activation::Relu;
    if (name == "elu") return Activation::Elu;
    throw std::invalid_argument("unknown activation: " + name);
}

std::string to_string(Activation a) {
    return a == Activation::Relu ? "relu" : "elu";
}

namespace {

double act_forward(Activation a, double x) {
    if (a == Activation::Relu) return x > 0.0 ? x : 0.0;
    return x > 0.0 ? x : std::expm1(x);
}

// derivative expressed from the pre-activation value
double act_derivative(Activation a, double x) {
    if (a == Activation::Relu) return x > 0.0 ? 1.0 : 0.0;
    return x > 0.0 ? 1.0 : std::exp(x);
}

}  // namespace

MlpParams MlpParams::init(std::vector<int> sizes, Activation act, SeededRng& rng) {
    if (sizes.size() < 2) throw std::invalid_argument("MLP needs at least input and output sizes");
    if (sizes.back() != 1) throw std::invalid_argument("MLP final layer must produce one scalar");
    MlpParams p;
    p.layer_sizes = std::move(sizes);
    p.activation = act;
    for (std::size_t k = 0; k + 1 < p.layer_sizes.size(); ++k) {
        const int fan_in = p.layer_sizes[k];
        const int fan_out = p.layer_sizes[k + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Eigen::MatrixXd w(fan_out, fan_in);
        for (Eigen::Index i = 0; i < w.rows(); ++i)
            for (Eigen::Index j = 0; j < w.cols(); ++j)
                w(i, j) = bound * (2.0 * rng.uniform() - 1.0);
        Eigen::VectorXd b(fan_out);
        for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = bound * (2.0 * rng.uniform() - 1.0);
        p.weights.push_back(std::move(w));
        p.biases.push_back(std::move(b));
    }
    return p;
}

std::size_t MlpParams::param_count() const {
    std::size_t n = 0;
    for (std::size_t k = 0; k < weights.size(); ++k)
        n += static_cast<std::size_t>(weights[k].size() + biases[k].size());
    return n;
}

Eigen::VectorXd MlpParams::flatten() const {
    Eigen::VectorXd flat(static_cast<Eigen::Index>(param_count()));
    Eigen::Index off = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        flat.segment(off, weights[k].size()) =
            Eigen::Map<const Eigen::VectorXd>(weights[k].data(), weights[k].size());
        off += weights[k].size();
        flat.segment(off, biases[k].size()) = biases[k];
        off += biases[k].size();
    }
    return flat;
}

void MlpParams::set_from_flat(const Eigen::VectorXd& flat) {
    if (flat.size() != static_cast<Eigen::Index>(param_count()))
        throw std::invalid_argument("flat parameter vector size mismatch");
    Eigen::Index off = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        Eigen::Map<Eigen::VectorXd>(weights[k].data(), weights[k].size()) =
            flat.segment(off, weights[k].size());
        off += weights[k].size();
        biases[k] = flat.segment(off, biases[k].size());
        off += biases[k].size();
    }
}

MlpGrads MlpGrads::zeros_like(const MlpParams& p) {
    MlpGrads g;
    for (std::size_t k = 0; k < p.weights.size(); ++k) {
        g.weights.push_back(Eigen::MatrixXd::Zero(p.weights[k].rows(), p.weights[k].cols()));
        g.biases.push_back(Eigen::VectorXd::Zero(p.biases[k].size()));
    }
    return g;
}

Eigen::VectorXd MlpGrads::flatten() const {
    Eigen::Index n = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) n += weights[k].size() + biases[k].size();
    Eigen::VectorXd flat(n);
    Eigen::Index off = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        flat.segment(off, weights[k].size()) =
            Eigen::Map<const Eigen::VectorXd>(weights[k].data(), weights[k].size());
        off += weights[k].size();
        flat.segment(off, biases[k].size()) = biases[k];
        off += biases[k].size();
    }
    return flat;
}

Eigen::VectorXd mlp_forward(const MlpParams& params, const Eigen::MatrixXd& batch,
                            ForwardCache* cache) {
    if (batch.cols() != params.layer_sizes.front())
        throw std::invalid_argument("mlp_forward: batch width " + std::to_string(batch.cols()) +
                                    " does not match layer 0 input size " +
                                    std::to_string(params.layer_sizes.front()));
    if (cache) {
        cache->input = batch;
        cache->pre.clear();
        cache->post.clear();
    }
    Eigen::MatrixXd h = batch;  // rows x width
    const std::size_t n_layers = params.weights.size();
    for (std::size_t k = 0; k < n_layers; ++k) {
        if (h.cols() != params.weights[k].cols())
            throw std::invalid_argument("mlp_forward: width mismatch entering layer " +
                                        std::to_string(k));
        Eigen::MatrixXd z = h * params.weights[k].transpose();
        z.rowwise() += params.biases[k].transpose();
        if (k + 1 < n_layers) {
            if (cache) cache->pre.push_back(z);
            h = z.unaryExpr([&params](double x) { return act_forward(params.activation, x); });
            if (cache) cache->post.push_back(h);
        } else {
            h = std::move(z);
        }
    }
    if (cache) cache->valid = true;
    return h.col(0);
}

MlpGrads mlp_backward(const MlpParams& params, const ForwardCache& cache,
                      const Eigen::VectorXd& upstream) {
    if (!cache.valid) throw std::logic_error("mlp_backward: no forward cache for this batch");
    if (upstream.size() != cache.input.rows())
        throw std::invalid_argument("mlp_backward: upstream length does not match batch rows");

    MlpGrads grads = MlpGrads::zeros_like(params);
    const std::size_t n_layers = params.weights.size();

    // delta: gradient with respect to the pre-activation of the current layer
    Eigen::MatrixXd delta = upstream;  // rows x 1, output layer is linear
    for (std::size_t k = n_layers; k-- > 0;) {
        const Eigen::MatrixXd& layer_in = (k == 0) ? cache.input : cache.post[k - 1];
        grads.weights[k] = delta.transpose() * layer_in;
        grads.biases[k] = delta.colwise().sum().transpose();
        if (k > 0) {
            Eigen::MatrixXd dpost = delta * params.weights[k];
            delta = dpost.cwiseProduct(cache.pre[k - 1].unaryExpr(
                [&params](double x) { return act_derivative(params.activation, x); }));
        }
    }
    return grads;
}

AdamState AdamState::make(Eigen::Index n, double lr) {
    AdamState s;
    s.first_moment = Eigen::VectorXd::Zero(n);
    s.second_moment = Eigen::VectorXd::Zero(n);
    s.learning_rate = lr;
    return s;
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size())
        throw std::invalid_argument("adam_step: shape mismatch");
    if (!grads.allFinite())
        throw std::runtime_error("adam_step: non-finite gradient");
    state.step_count += 1;
    state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads;
    state.second_moment =
        state.beta2 * state.second_moment + (1.0 - state.beta2) * grads.cwiseProduct(grads);
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    params.array() -= state.learning_rate * (state.first_moment.array() / c1) /
                      ((state.second_moment.array() / c2).sqrt() + state.epsilon);
}

void adam_step(MlpParams& params, const MlpGrads& grads, AdamState& state) {
    for (std::size_t k = 0; k < grads.weights.size(); ++k) {
        if (!grads.weights[k].allFinite())
            throw std::runtime_error("adam_step: non-finite gradient in layer " +
                                     std::to_string(k) + " weights");
        if (!grads.biases[k].allFinite())
            throw std::runtime_error("adam_step: non-finite gradient in layer " +
                                     std::to_string(k) + " biases");
    }
    Eigen::VectorXd flat = params.flatten();
    Eigen::VectorXd g = grads.flatten();
    adam_step(flat, g, state);
    params.set_from_flat(flat);
}

}  // namespace miprobe::nn
