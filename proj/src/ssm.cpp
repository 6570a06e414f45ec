#include "miprobe/ssm.hpp"

#include <cmath>
#include <stdexcept>

namespace miprobe::ssm {

DiscreteSSM discretize_zoh(const ContinuousSSM& cssm) {
    const double dt = cssm.delta();
    if (!(dt > 0.0)) throw std::invalid_argument("discretize_zoh: delta must be positive");
    DiscreteSSM d;
    d.a_bar.resize(cssm.state_dim());
    d.b_bar.resize(cssm.state_dim());
    for (Eigen::Index i = 0; i < cssm.state_dim(); ++i) {
        const double a = cssm.a(i);
        d.a_bar(i) = std::exp(dt * a);
        // expm1 keeps the a -> 0 limit exact: (e^{dt a} - 1)/a -> dt
        d.b_bar(i) = (a == 0.0 ? dt : std::expm1(dt * a) / a) * cssm.b(i);
    }
    return d;
}

std::pair<Eigen::VectorXd, double> ssm_step(const Eigen::VectorXd& h, double x_t,
                                            const DiscreteSSM& d, const Eigen::VectorXd& c,
                                            double skip_d) {
    if (h.size() != d.a_bar.size() || c.size() != d.a_bar.size())
        throw std::invalid_argument("ssm_step: state dimension mismatch");
    Eigen::VectorXd h_next = d.a_bar.cwiseProduct(h) + d.b_bar * x_t;
    const double y = c.dot(h_next) + skip_d * x_t;
    return {std::move(h_next), y};
}

Eigen::VectorXd ssm_scan(const DiscreteSSM& d, const Eigen::VectorXd& c, double skip_d,
                         const Eigen::VectorXd& sequence) {
    Eigen::VectorXd h = Eigen::VectorXd::Zero(d.a_bar.size());
    Eigen::VectorXd y(sequence.size());
    for (Eigen::Index t = 0; t < sequence.size(); ++t) {
        h = d.a_bar.cwiseProduct(h) + d.b_bar * sequence(t);
        y(t) = c.dot(h) + skip_d * sequence(t);
    }
    return y;
}

namespace {

inline double softplus(double x) {
    return x > 30.0 ? x : std::log1p(std::exp(x));
}

}  // namespace

SelectiveStep selective_params(const Eigen::VectorXd& frame, const SelectiveProjections& proj) {
    if (frame.size() != proj.d_model())
        throw std::invalid_argument("selective_params: frame width mismatch");
    SelectiveStep s;
    s.delta = (proj.delta_w * frame + proj.delta_b).unaryExpr([](double x) { return softplus(x); });
    s.b_t = proj.b_w * frame + proj.b_b;
    s.c_t = proj.c_w * frame + proj.c_b;
    return s;
}

Eigen::MatrixXd selective_scan_cached(const SelectiveProjections& proj, const Eigen::MatrixXd& a,
                                      const Eigen::VectorXd& d_skip,
                                      const Eigen::MatrixXd& sequence, SelectiveScanCache& cache) {
    const Eigen::Index L = sequence.rows();
    const Eigen::Index dm = proj.d_model();
    const Eigen::Index n = proj.state_dim();
    if (sequence.cols() != dm)
        throw std::invalid_argument("selective_scan: frame width mismatch");
    if (a.rows() != dm || a.cols() != n)
        throw std::invalid_argument("selective_scan: A shape mismatch");
    if (L < 1) throw std::invalid_argument("selective_scan: empty sequence");

    cache.input = sequence;
    cache.delta.resize(L, dm);
    cache.b_t.resize(L, n);
    cache.c_t.resize(L, n);
    cache.h.assign(static_cast<std::size_t>(L), Eigen::MatrixXd());

    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dm, n);
    Eigen::MatrixXd y(L, dm);
    for (Eigen::Index t = 0; t < L; ++t) {
        const Eigen::VectorXd frame = sequence.row(t).transpose();
        SelectiveStep s = selective_params(frame, proj);
        cache.delta.row(t) = s.delta.transpose();
        cache.b_t.row(t) = s.b_t.transpose();
        cache.c_t.row(t) = s.c_t.transpose();

        // h(c,:) = exp(delta(c) a(c,:)) o h(c,:) + delta(c) x(c) B_t
        Eigen::MatrixXd a_bar = (a.array().colwise() * s.delta.array()).exp().matrix();
        h = a_bar.cwiseProduct(h) +
            (s.delta.cwiseProduct(frame)) * s.b_t.transpose();
        if (!h.allFinite())
            throw std::runtime_error("selective_scan: non-finite state at step " +
                                     std::to_string(t));
        cache.h[static_cast<std::size_t>(t)] = h;
        y.row(t) = (h * s.c_t + d_skip.cwiseProduct(frame)).transpose();
    }
    return y;
}

Eigen::MatrixXd selective_scan(const SelectiveProjections& proj, const Eigen::MatrixXd& a,
                               const Eigen::VectorXd& d_skip, const Eigen::MatrixXd& sequence) {
    SelectiveScanCache cache;
    return selective_scan_cached(proj, a, d_skip, sequence, cache);
}

SelectiveScanGrads SelectiveScanGrads::zeros(Eigen::Index d_model, Eigen::Index state_dim) {
    SelectiveScanGrads g;
    g.proj.delta_w = Eigen::MatrixXd::Zero(d_model, d_model);
    g.proj.delta_b = Eigen::VectorXd::Zero(d_model);
    g.proj.b_w = Eigen::MatrixXd::Zero(state_dim, d_model);
    g.proj.b_b = Eigen::VectorXd::Zero(state_dim);
    g.proj.c_w = Eigen::MatrixXd::Zero(state_dim, d_model);
    g.proj.c_b = Eigen::VectorXd::Zero(state_dim);
    g.a = Eigen::MatrixXd::Zero(d_model, state_dim);
    g.d_skip = Eigen::VectorXd::Zero(d_model);
    return g;
}

Eigen::MatrixXd selective_scan_backward(const SelectiveProjections& proj, const Eigen::MatrixXd& a,
                                        const Eigen::VectorXd& d_skip,
                                        const SelectiveScanCache& cache,
                                        const Eigen::MatrixXd& d_output,
                                        SelectiveScanGrads& grads) {
    const Eigen::Index L = cache.input.rows();
    const Eigen::Index dm = proj.d_model();
    const Eigen::Index n = proj.state_dim();

    Eigen::MatrixXd d_input = Eigen::MatrixXd::Zero(L, dm);
    Eigen::MatrixXd g_h = Eigen::MatrixXd::Zero(dm, n);  // dL/dh_t carried backwards

    for (Eigen::Index t = L - 1; t >= 0; --t) {
        const Eigen::VectorXd frame = cache.input.row(t).transpose();
        const Eigen::VectorXd delta = cache.delta.row(t).transpose();
        const Eigen::VectorXd b_t = cache.b_t.row(t).transpose();
        const Eigen::VectorXd c_t = cache.c_t.row(t).transpose();
        const Eigen::MatrixXd& h_t = cache.h[static_cast<std::size_t>(t)];
        const Eigen::VectorXd gy = d_output.row(t).transpose();

        // y_t(c) = <h_t(c,:), C_t> + d_skip(c) x(c)
        g_h += gy * c_t.transpose();
        Eigen::VectorXd d_ct = h_t.transpose() * gy;
        grads.d_skip += gy.cwiseProduct(frame);
        Eigen::VectorXd du = gy.cwiseProduct(d_skip);

        // recurrence h_t = a_bar o h_{t-1} + (delta o x) B_t^T
        const Eigen::MatrixXd a_bar = (a.array().colwise() * delta.array()).exp().matrix();
        const Eigen::MatrixXd h_prev =
            t > 0 ? cache.h[static_cast<std::size_t>(t - 1)] : Eigen::MatrixXd::Zero(dm, n);

        Eigen::MatrixXd d_abar = g_h.cwiseProduct(h_prev);
        Eigen::VectorXd d_bt = g_h.transpose() * delta.cwiseProduct(frame);
        Eigen::VectorXd g_du_times = g_h * b_t;  // d wrt (delta o x), per channel
        Eigen::VectorXd d_delta = g_du_times.cwiseProduct(frame);
        du += g_du_times.cwiseProduct(delta);

        // a_bar = exp(delta(c) a(c,n))
        const Eigen::MatrixXd d_abar_scaled = d_abar.cwiseProduct(a_bar);
        grads.a.array() += d_abar_scaled.array().colwise() * delta.array();
        d_delta += (d_abar_scaled.cwiseProduct(a)).rowwise().sum();

        // hand g_h to step t-1
        g_h = g_h.cwiseProduct(a_bar);

        // projections; softplus'(z) recovered from delta: sigma(z) = 1 - e^{-delta}
        Eigen::VectorXd d_zdelta =
            d_delta.cwiseProduct((1.0 - (-delta.array()).exp()).matrix());
        grads.proj.delta_w += d_zdelta * frame.transpose();
        grads.proj.delta_b += d_zdelta;
        du += proj.delta_w.transpose() * d_zdelta;

        grads.proj.b_w += d_bt * frame.transpose();
        grads.proj.b_b += d_bt;
        du += proj.b_w.transpose() * d_bt;

        grads.proj.c_w += d_ct * frame.transpose();
        grads.proj.c_b += d_ct;
        du += proj.c_w.transpose() * d_ct;

        d_input.row(t) = du.transpose();
    }
    return d_input;
}

// ---------------------------------------------------------------------------
// Bidirectional block.
// ---------------------------------------------------------------------------

namespace {

constexpr double kLnEps = 1e-5;

Eigen::MatrixXd uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound,
                               SeededRng& rng) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = bound * (2.0 * rng.uniform() - 1.0);
    return m;
}

SelectiveLayer init_layer(Eigen::Index dm, Eigen::Index n, SeededRng& rng) {
    SelectiveLayer l;
    const double bound = 1.0 / std::sqrt(static_cast<double>(dm));
    l.proj.delta_w = uniform_matrix(dm, dm, bound, rng);
    l.proj.b_w = uniform_matrix(n, dm, bound, rng);
    l.proj.b_b = Eigen::VectorXd::Zero(n);
    l.proj.c_w = uniform_matrix(n, dm, bound, rng);
    l.proj.c_b = Eigen::VectorXd::Zero(n);
    // step sizes start log-uniform in [1e-3, 1e-1]
    l.proj.delta_b.resize(dm);
    for (Eigen::Index c = 0; c < dm; ++c) {
        const double dt = std::exp(std::log(1e-3) +
                                   rng.uniform() * (std::log(1e-1) - std::log(1e-3)));
        l.proj.delta_b(c) = std::log(std::expm1(dt));
    }
    // S4D-real style spectrum: a(c,n) = -(n+1)
    l.a_log.resize(dm, n);
    for (Eigen::Index c = 0; c < dm; ++c)
        for (Eigen::Index k = 0; k < n; ++k) l.a_log(c, k) = std::log(static_cast<double>(k + 1));
    l.d_skip = Eigen::VectorXd::Ones(dm);
    return l;
}

// Row-wise layernorm. Returns xhat; applies gain/bias into out.
Eigen::MatrixXd layernorm_forward(const Eigen::MatrixXd& x, const Eigen::VectorXd& gain,
                                  const Eigen::VectorXd& bias, Eigen::MatrixXd& out,
                                  Eigen::VectorXd& inv_std) {
    const Eigen::Index L = x.rows();
    const Eigen::Index dm = x.cols();
    Eigen::MatrixXd xhat(L, dm);
    out.resize(L, dm);
    inv_std.resize(L);
    for (Eigen::Index r = 0; r < L; ++r) {
        const double mu = x.row(r).mean();
        const double var = (x.row(r).array() - mu).square().mean();
        const double is = 1.0 / std::sqrt(var + kLnEps);
        inv_std(r) = is;
        xhat.row(r) = (x.row(r).array() - mu) * is;
        out.row(r) = xhat.row(r).cwiseProduct(gain.transpose()) + bias.transpose();
    }
    return xhat;
}

}  // namespace

BiMambaBlock BiMambaBlock::init(Eigen::Index d_model, Eigen::Index state_dim, SeededRng& rng) {
    BiMambaBlock b;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d_model));
    b.forward_dir = init_layer(d_model, state_dim, rng);
    b.backward_dir = init_layer(d_model, state_dim, rng);
    b.in_w = uniform_matrix(d_model, d_model, bound, rng);
    b.in_b = Eigen::VectorXd::Zero(d_model);
    b.out_w = uniform_matrix(d_model, d_model, bound, rng);
    b.out_b = Eigen::VectorXd::Zero(d_model);
    b.ln_gain = Eigen::VectorXd::Ones(d_model);
    b.ln_bias = Eigen::VectorXd::Zero(d_model);
    return b;
}

Eigen::MatrixXd bimamba_block_cached(const BiMambaBlock& params, const Eigen::MatrixXd& sequence,
                                     BiMambaBlockCache& cache) {
    if (sequence.cols() != params.d_model())
        throw std::invalid_argument("bimamba_block: frame width does not equal d_model");
    cache.input = sequence;
    Eigen::MatrixXd ln_out;
    cache.normed = layernorm_forward(sequence, params.ln_gain, params.ln_bias, ln_out,
                                     cache.inv_std);  // cache.normed holds xhat
    cache.mixed = ln_out * params.in_w.transpose();
    cache.mixed.rowwise() += params.in_b.transpose();

    Eigen::MatrixXd y_fwd = selective_scan_cached(params.forward_dir.proj, params.forward_dir.a(),
                                                  params.forward_dir.d_skip, cache.mixed,
                                                  cache.fwd_cache);
    Eigen::MatrixXd y_bwd_rev =
        selective_scan_cached(params.backward_dir.proj, params.backward_dir.a(),
                              params.backward_dir.d_skip, cache.mixed.colwise().reverse(),
                              cache.bwd_cache);
    cache.scan_sum = y_fwd + y_bwd_rev.colwise().reverse();

    Eigen::MatrixXd out = cache.scan_sum * params.out_w.transpose();
    out.rowwise() += params.out_b.transpose();
    if (params.residual) out += sequence;
    return out;
}

Eigen::MatrixXd bimamba_block(const BiMambaBlock& params, const Eigen::MatrixXd& sequence) {
    BiMambaBlockCache cache;
    return bimamba_block_cached(params, sequence, cache);
}

BiMambaBlock zeros_like(const BiMambaBlock& b) {
    BiMambaBlock z = b;
    for_each_param(z, [](auto& p) { p.setZero(); });
    return z;
}

Eigen::MatrixXd bimamba_block_backward(const BiMambaBlock& params, const BiMambaBlockCache& cache,
                                       const Eigen::MatrixXd& d_output, BiMambaBlock& grads) {
    const Eigen::Index L = cache.input.rows();
    const Eigen::Index dm = params.d_model();
    const Eigen::Index n = params.forward_dir.proj.state_dim();

    // output affine
    grads.out_w += d_output.transpose() * cache.scan_sum;
    grads.out_b += d_output.colwise().sum().transpose();
    Eigen::MatrixXd d_sum = d_output * params.out_w;

    // two scan branches
    SelectiveScanGrads g_fwd = SelectiveScanGrads::zeros(dm, n);
    const Eigen::MatrixXd a_fwd = params.forward_dir.a();
    Eigen::MatrixXd d_mixed = selective_scan_backward(params.forward_dir.proj, a_fwd,
                                                      params.forward_dir.d_skip, cache.fwd_cache,
                                                      d_sum, g_fwd);
    SelectiveScanGrads g_bwd = SelectiveScanGrads::zeros(dm, n);
    const Eigen::MatrixXd a_bwd = params.backward_dir.a();
    Eigen::MatrixXd d_mixed_rev = selective_scan_backward(
        params.backward_dir.proj, a_bwd, params.backward_dir.d_skip, cache.bwd_cache,
        d_sum.colwise().reverse(), g_bwd);
    d_mixed += d_mixed_rev.colwise().reverse();

    auto fold_layer = [](SelectiveLayer& dst, const SelectiveScanGrads& src,
                         const Eigen::MatrixXd& a_val) {
        dst.proj.delta_w += src.proj.delta_w;
        dst.proj.delta_b += src.proj.delta_b;
        dst.proj.b_w += src.proj.b_w;
        dst.proj.b_b += src.proj.b_b;
        dst.proj.c_w += src.proj.c_w;
        dst.proj.c_b += src.proj.c_b;
        // a = -exp(a_log)  =>  da_log = da o a
        dst.a_log += src.a.cwiseProduct(a_val);
        dst.d_skip += src.d_skip;
    };
    fold_layer(grads.forward_dir, g_fwd, a_fwd);
    fold_layer(grads.backward_dir, g_bwd, a_bwd);

    // input affine
    Eigen::MatrixXd ln_out = cache.normed;  // xhat -> ln output
    for (Eigen::Index r = 0; r < L; ++r)
        ln_out.row(r) = cache.normed.row(r).cwiseProduct(params.ln_gain.transpose()) +
                        params.ln_bias.transpose();
    grads.in_w += d_mixed.transpose() * ln_out;
    grads.in_b += d_mixed.colwise().sum().transpose();
    Eigen::MatrixXd d_ln = d_mixed * params.in_w;

    // layernorm
    Eigen::MatrixXd d_input(L, dm);
    for (Eigen::Index r = 0; r < L; ++r) {
        const Eigen::ArrayXd xhat = cache.normed.row(r).transpose().array();
        const Eigen::ArrayXd dy = d_ln.row(r).transpose().array();
        grads.ln_gain.array() += dy * xhat;
        grads.ln_bias.array() += dy;
        const Eigen::ArrayXd dxhat = dy * params.ln_gain.array();
        const double m1 = dxhat.mean();
        const double m2 = (dxhat * xhat).mean();
        d_input.row(r) = (cache.inv_std(r) * (dxhat - m1 - xhat * m2)).matrix().transpose();
    }
    if (params.residual) d_input += d_output;
    return d_input;
}

}  // namespace miprobe::ssm
