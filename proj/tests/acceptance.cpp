// Acceptance suite: one test case per criterion, each emitting a single
// PASS/FAIL line. Oracles are analytic (Gaussian MI, discrete entropy, ZOH
// closed forms, finite differences); the trend criterion runs the full
// experiment pipeline at desk scale and records every seed attempted.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include "miprobe/experiment.hpp"
#include "miprobe/mine.hpp"
#include "miprobe/models.hpp"
#include "miprobe/probe.hpp"
#include "miprobe/report_io.hpp"
#include "miprobe/ssm.hpp"

using namespace miprobe;
using mine::FeatureSequence;
namespace fs = std::filesystem;

namespace {

void report(int criterion, const std::string& what, bool ok) {
    std::printf("[criterion %d] %-58s %s\n", criterion, what.c_str(), ok ? "PASS" : "FAIL");
    std::fflush(stdout);
}

FeatureSequence gaussian_seq(int length, int dim, SeededRng& rng) {
    FeatureSequence f;
    f.values.resize(length, dim);
    for (Eigen::Index i = 0; i < f.values.rows(); ++i)
        for (Eigen::Index j = 0; j < f.values.cols(); ++j) f.values(i, j) = rng.normal();
    return f;
}

// y = rho x + sqrt(1 - rho^2) eps, per dimension
std::pair<FeatureSequence, FeatureSequence> correlated_gaussians(int length, int dim, double rho,
                                                                 SeededRng& rng) {
    FeatureSequence x = gaussian_seq(length, dim, rng);
    FeatureSequence y;
    y.values.resize(length, dim);
    const double s = std::sqrt(1.0 - rho * rho);
    for (Eigen::Index i = 0; i < y.values.rows(); ++i)
        for (Eigen::Index j = 0; j < y.values.cols(); ++j)
            y.values(i, j) = rho * x.values(i, j) + s * rng.normal();
    return {std::move(x), std::move(y)};
}

FeatureSequence codeword_seq(int length, int dim, int n_codes, SeededRng& rng) {
    Eigen::MatrixXd codes(n_codes, dim);
    for (Eigen::Index i = 0; i < codes.rows(); ++i) {
        // resample on collision so the codebook entropy is exactly ln(n_codes)
        for (bool fresh = false; !fresh;) {
            for (Eigen::Index j = 0; j < codes.cols(); ++j)
                codes(i, j) = rng.uniform() < 0.5 ? -1.0 : 1.0;
            fresh = true;
            for (Eigen::Index k = 0; k < i; ++k)
                if ((codes.row(i) - codes.row(k)).norm() < 1e-12) fresh = false;
        }
    }
    FeatureSequence f;
    f.values.resize(length, dim);
    for (int t = 0; t < length; ++t)
        f.values.row(t) = codes.row(static_cast<Eigen::Index>(rng.uniform_index(n_codes)));
    return f;
}

mine::MineConfig oracle_mine_cfg(std::uint64_t seed) {
    mine::MineConfig cfg;
    cfg.batch_size = 256;
    cfg.train_steps = 1200;
    cfg.eval_batches = 32;
    cfg.hidden_sizes = {64, 64};
    cfg.seed = seed;
    return cfg;
}

// Mean estimate over 5 seeded (data, estimator) replicates.
double five_seed_mean(double rho, int dim, std::uint64_t base) {
    double acc = 0.0;
    for (int s = 0; s < 5; ++s) {
        SeededRng rng(base + static_cast<std::uint64_t>(s));
        auto [x, y] = correlated_gaussians(4096, dim, rho, rng);
        acc += mine::estimate_mi_sample(x, y, oracle_mine_cfg(base + 100 + s)).value_nats;
    }
    return acc / 5.0;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("miprobe-accept-" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("criterion 1: gaussian MI oracle") {
    using clock = std::chrono::steady_clock;
    bool ok = true;

    struct Setting {
        double rho;
        int dim;
        double expected;
        double tol;
        const char* label;
    };
    const Setting settings[] = {
        {0.5, 1, -0.5 * std::log(1.0 - 0.25), 0.08, "d=1 rho=0.5"},
        {0.9, 1, -0.5 * std::log(1.0 - 0.81), 0.08, "d=1 rho=0.9"},
        {0.5, 4, -2.0 * std::log(1.0 - 0.25), 0.12, "d=4 rho=0.5"},
    };
    std::uint64_t base = 11;
    for (const Setting& s : settings) {
        const auto t0 = clock::now();
        const double mean = five_seed_mean(s.rho, s.dim, base);
        const double secs = std::chrono::duration<double>(clock::now() - t0).count();
        base += 1000;
        INFO(s.label << ": mean " << mean << " expected " << s.expected << " (" << secs << "s)");
        CHECK(std::abs(mean - s.expected) < s.tol);
        CHECK(secs < 120.0);
        ok = ok && std::abs(mean - s.expected) < s.tol && secs < 120.0;
    }
    report(1, "gaussian MI oracle (3 settings, 5 seeds each, <2min)", ok);
}

TEST_CASE("criterion 2: independence null") {
    double acc = 0.0;
    for (int s = 0; s < 5; ++s) {
        SeededRng rng_x(3000 + s);
        SeededRng rng_y(7000 + s);  // fresh stream: X independent of T
        FeatureSequence x = gaussian_seq(4096, 1, rng_x);
        FeatureSequence y = gaussian_seq(4096, 1, rng_y);
        acc += mine::estimate_mi_sample(x, y, oracle_mine_cfg(3100 + s)).value_nats;
    }
    const double mean = acc / 5.0;
    INFO("independent-pair mean estimate " << mean);
    CHECK(std::abs(mean) < 0.05);
    report(2, "independence null (|mean of 5 seeds| < 0.05 nats)", std::abs(mean) < 0.05);
}

TEST_CASE("criterion 3: discrete entropy ceiling") {
    double acc = 0.0;
    for (int s = 0; s < 5; ++s) {
        SeededRng rng(4200 + s);
        FeatureSequence x = codeword_seq(4096, 4, 8, rng);
        acc += mine::estimate_mi_sample(x, x, oracle_mine_cfg(4300 + s)).value_nats;
    }
    const double mean = acc / 5.0;
    INFO("codeword identity mean estimate " << mean << " vs ln 8 = " << std::log(8.0));
    const bool ok = std::abs(mean - std::log(8.0)) < 0.15;
    CHECK(ok);
    report(3, "discrete ceiling (T=X, 8 codewords, ln 8 +/- 0.15)", ok);
}

TEST_CASE("criterion 4: gradient correctness") {
    const double h = 1e-5;
    bool ok = true;

    auto rel_close = [](double a, double b) {
        const double scale = std::max({1.0, std::abs(a), std::abs(b)});
        return std::abs(a - b) / scale < 1e-5;
    };

    for (int s = 0; s < 5; ++s) {
        SeededRng rng(600 + s);
        nn::MlpParams net = nn::MlpParams::init({3, 7, 5, 1}, nn::Activation::Elu, rng);
        Eigen::MatrixXd batch(6, 3);
        for (Eigen::Index i = 0; i < batch.size(); ++i) batch(i) = rng.normal();
        Eigen::VectorXd upstream(6);
        for (Eigen::Index i = 0; i < upstream.size(); ++i) upstream(i) = rng.normal();

        // mlp_backward against FD of the weighted score sum
        nn::ForwardCache cache;
        nn::mlp_forward(net, batch, &cache);
        Eigen::VectorXd analytic = nn::mlp_backward(net, cache, upstream).flatten();
        nn::MlpParams work = net;
        const Eigen::VectorXd flat = net.flatten();
        for (Eigen::Index i = 0; i < flat.size(); ++i) {
            Eigen::VectorXd pert = flat;
            pert(i) = flat(i) + h;
            work.set_from_flat(pert);
            const double up = upstream.dot(nn::mlp_forward(work, batch));
            pert(i) = flat(i) - h;
            work.set_from_flat(pert);
            const double down = upstream.dot(nn::mlp_forward(work, batch));
            if (!rel_close(analytic(i), (up - down) / (2.0 * h))) ok = false;
        }

        // mine_gradient (ema frozen at the batch value) against FD of the DV
        // objective itself
        Eigen::MatrixXd joint(5, 3), marg(5, 3);
        for (Eigen::Index i = 0; i < joint.size(); ++i) joint(i) = rng.normal();
        for (Eigen::Index i = 0; i < marg.size(); ++i) marg(i) = rng.normal();
        Eigen::VectorXd mg = mine::mine_gradient(joint, marg, net, -1.0, 0.0, 50.0).grads.flatten();
        for (Eigen::Index i = 0; i < flat.size(); ++i) {
            Eigen::VectorXd pert = flat;
            pert(i) = flat(i) + h;
            work.set_from_flat(pert);
            const double up =
                mine::dv_objective(nn::mlp_forward(work, joint), nn::mlp_forward(work, marg));
            pert(i) = flat(i) - h;
            work.set_from_flat(pert);
            const double down =
                mine::dv_objective(nn::mlp_forward(work, joint), nn::mlp_forward(work, marg));
            if (!rel_close(mg(i), (up - down) / (2.0 * h))) ok = false;
        }
    }
    CHECK(ok);
    report(4, "gradients match central differences (5 nets, 1e-5 rel)", ok);
}

TEST_CASE("criterion 5: SSM exactness and stability") {
    bool ok = true;
    SeededRng rng(31);

    // ZOH closed forms
    {
        ssm::ContinuousSSM c;
        c.a = Eigen::VectorXd::Constant(1, -1.0);
        c.b = Eigen::VectorXd::Constant(1, 1.0);
        c.c = Eigen::VectorXd::Constant(1, 1.0);
        c.log_delta = std::log(0.1);
        ssm::DiscreteSSM d = ssm::discretize_zoh(c);
        ok = ok && std::abs(d.a_bar(0) - std::exp(-0.1)) < 1e-9;
        ok = ok && std::abs(d.b_bar(0) - (1.0 - std::exp(-0.1))) < 1e-9;

        // random componentwise closed form
        ssm::ContinuousSSM r;
        r.a.resize(6);
        r.b.resize(6);
        r.c = Eigen::VectorXd::Ones(6);
        for (int i = 0; i < 6; ++i) {
            r.a(i) = -std::exp(rng.normal());
            r.b(i) = rng.normal();
        }
        r.log_delta = -1.3;
        ssm::DiscreteSSM rd = ssm::discretize_zoh(r);
        const double delta = std::exp(-1.3);
        for (int i = 0; i < 6; ++i) {
            const double abar = std::exp(delta * r.a(i));
            const double bbar = (abar - 1.0) / r.a(i) * r.b(i);
            ok = ok && std::abs(rd.a_bar(i) - abar) < 1e-9;
            ok = ok && std::abs(rd.b_bar(i) - bbar) < 1e-9;
        }
    }
    CHECK(ok);

    // scan vs naive loop, 1e-12
    {
        ssm::ContinuousSSM c;
        c.a.resize(4);
        c.b.resize(4);
        c.c.resize(4);
        for (int i = 0; i < 4; ++i) {
            c.a(i) = -std::exp(rng.normal());
            c.b(i) = rng.normal();
            c.c(i) = rng.normal();
        }
        c.d = 0.7;
        c.log_delta = -0.5;
        ssm::DiscreteSSM d = ssm::discretize_zoh(c);
        Eigen::VectorXd u(40);
        for (int i = 0; i < 40; ++i) u(i) = rng.normal();
        Eigen::VectorXd y = ssm::ssm_scan(d, c.c, c.d, u);
        Eigen::VectorXd hstate = Eigen::VectorXd::Zero(4);
        for (int t = 0; t < 40; ++t) {
            hstate = d.a_bar.cwiseProduct(hstate) + d.b_bar * u(t);
            const double want = c.c.dot(hstate) + c.d * u(t);
            if (std::abs(y(t) - want) > 1e-12) ok = false;
        }
    }
    CHECK(ok);

    // selective_scan with frozen projections reduces to ssm_scan, 1e-9
    {
        const int dm = 3, n = 4, L = 25;
        ssm::SelectiveProjections proj;
        proj.delta_w = Eigen::MatrixXd::Zero(dm, dm);
        proj.b_w = Eigen::MatrixXd::Zero(n, dm);
        proj.c_w = Eigen::MatrixXd::Zero(n, dm);
        proj.delta_b.resize(dm);
        proj.b_b.resize(n);
        proj.c_b.resize(n);
        for (int i = 0; i < dm; ++i) proj.delta_b(i) = rng.normal();
        for (int i = 0; i < n; ++i) {
            proj.b_b(i) = rng.normal();
            proj.c_b(i) = rng.normal();
        }
        Eigen::MatrixXd a(dm, n);
        for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = -std::exp(rng.normal());
        Eigen::VectorXd d_skip(dm);
        for (int i = 0; i < dm; ++i) d_skip(i) = rng.normal();
        Eigen::MatrixXd seq(L, dm);
        for (Eigen::Index i = 0; i < seq.size(); ++i) seq(i) = rng.normal();

        Eigen::MatrixXd out = ssm::selective_scan(proj, a, d_skip, seq);
        for (int ch = 0; ch < dm; ++ch) {
            const double delta = std::log1p(std::exp(proj.delta_b(ch)));
            ssm::DiscreteSSM d;
            d.a_bar = (delta * a.row(ch).transpose().array()).exp();
            d.b_bar = delta * proj.b_b;
            Eigen::VectorXd y = ssm::ssm_scan(d, proj.c_b, d_skip(ch), seq.col(ch));
            for (int t = 0; t < L; ++t)
                if (std::abs(out(t, ch) - y(t)) > 1e-9) ok = false;
        }
    }
    CHECK(ok);

    // stability over L = 10,000
    {
        ssm::ContinuousSSM c;
        c.a = Eigen::VectorXd::Constant(3, -0.05);
        c.b = Eigen::VectorXd::Ones(3);
        c.c = Eigen::VectorXd::Ones(3);
        c.d = 0.0;
        c.log_delta = std::log(0.5);
        ssm::DiscreteSSM d = ssm::discretize_zoh(c);
        Eigen::VectorXd u(10000);
        SeededRng urng(77);
        for (int i = 0; i < 10000; ++i) u(i) = urng.normal();
        Eigen::VectorXd y = ssm::ssm_scan(d, c.c, c.d, u);
        // geometric series bound on the state response
        const double abar = std::exp(-0.05 * 0.5);
        const double bbar = (abar - 1.0) / (-0.05);
        const double bound = 3.0 * bbar / (1.0 - abar) * u.cwiseAbs().maxCoeff() + 1.0;
        ok = ok && y.allFinite() && y.cwiseAbs().maxCoeff() < bound;
    }
    CHECK(ok);
    report(5, "SSM exactness (ZOH, reduction, naive loop, L=10000)", ok);
}

TEST_CASE("criterion 7: byte-identical re-runs") {
    TempDir a("det-a"), b("det-b");
    experiment::json j;
    j["name"] = "determinism";
    j["task"] = "frame_classification";
    j["seed"] = 99;
    j["model"] = {{"input_dim", 8}, {"d_model", 5}, {"state_dim", 2}, {"n_layers", 2}};
    j["data"] = {{"n_samples", 6}, {"length", 48},       {"dim", 8},
                 {"class_count", 4}, {"min_segment", 4}, {"max_segment", 12}};
    j["train"] = {{"steps", 30}, {"batch_size", 4}, {"learning_rate", 2e-3}};
    j["probe"] = {{"n_samples", 2},
                  {"sides", {"input_side", "target_side"}},
                  {"mine", {{"batch_size", 32}, {"train_steps", 60}, {"eval_batches", 4},
                            {"hidden_sizes", {16}}}}};

    j["out_dir"] = a.path.string();
    experiment::ExperimentSpec spec_a = experiment::ExperimentSpec::from_json(j);
    j["out_dir"] = b.path.string();
    experiment::ExperimentSpec spec_b = experiment::ExperimentSpec::from_json(j);

    bool ok = experiment::run_experiment(spec_a).exit_code == experiment::kOk;
    ok = ok && experiment::run_experiment(spec_b).exit_code == experiment::kOk;
    for (const char* name : {"report.json", "report.csv", "curve.svg"}) {
        const std::string fa = io::read_file((a.path / name).string());
        ok = ok && !fa.empty() && fa == io::read_file((b.path / name).string());
    }
    CHECK(ok);
    report(7, "identical spec re-run gives byte-identical artifacts", ok);
}

TEST_CASE("criterion 8: n_samples=1 curve equals the raw estimates") {
    models::GenConfig g;
    g.task = models::TaskKind::Reconstruction;
    g.n_samples = 2;
    g.length = 64;
    g.dim = 8;
    models::ModelConfig mc;
    mc.input_dim = 8;
    mc.d_model = 5;
    mc.state_dim = 2;
    mc.n_layers = 3;
    SeededRng rng(5);
    models::EncoderStack stack = models::EncoderStack::init(mc, rng);
    models::SyntheticDataset data = models::gen_synthetic_dataset(g, 17);

    probe::ProbeConfig pc;
    pc.n_samples = 1;
    pc.seed = 23;
    pc.sides = {mine::Side::InputSide, mine::Side::TargetSide};
    pc.mine_cfg.batch_size = 32;
    pc.mine_cfg.train_steps = 80;
    pc.mine_cfg.eval_batches = 4;
    pc.mine_cfg.hidden_sizes = {16};
    probe::LayerProbeReport rep = probe::probe_layers(stack, data, pc);

    bool ok = !rep.sides.empty();
    for (const auto& side : rep.sides) {
        ok = ok && side.curve.n_samples == 1 &&
             side.estimates.size() == side.curve.per_layer_mean.size();
        for (std::size_t l = 0; ok && l < side.curve.per_layer_mean.size(); ++l) {
            ok = std::abs(side.curve.per_layer_mean[l] - side.estimates[l].value_nats) <= 1e-12;
            const double expect_log =
                std::log(std::max(side.estimates[l].value_nats, mine::kLogFloor));
            ok = ok && std::abs(side.curve.log_values[l] - expect_log) <= 1e-12;
        }
    }
    CHECK(ok);
    report(8, "single-sample curve equals raw estimates (1e-12)", ok);
}

// Declared last: by far the longest criterion. Runs the full pipeline for
// three task variants over five master seeds and records every attempt.
TEST_CASE("criterion 6: trend reproduction at desk scale") {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();

    // Shared desk-scale settings for all three variants. The load-bearing
    // choices: d_model 6 is a genuine bottleneck for the dataset's content
    // (8 codeword classes plus four high-amplitude sinusoid directions), so
    // middle layers must fold representations nonlinearly instead of staying
    // near-affine, and the estimator's fixed budget then scores them below
    // the two linearly decodable ends; non-residual blocks, because a skip
    // path keeps every tap affinely decodable from tap 0 and no dip can
    // form; and fast codeword segments, which remove the segment-identity
    // shortcut that otherwise pins every layer to the same score.
    auto trend_spec = [](const char* task, std::uint64_t seed, const std::string& out_dir) {
        experiment::json j;
        j["name"] = std::string("trend-") + task;
        j["task"] = task;
        j["seed"] = seed;
        j["out_dir"] = out_dir;
        j["model"] = {{"input_dim", 16}, {"d_model", 6},       {"state_dim", 4},
                      {"n_layers", 8},   {"decoder_layers", 2}, {"residual", false}};
        j["data"] = {{"n_samples", 12},  {"length", 256},    {"dim", 16},
                     {"class_count", 8}, {"min_segment", 1}, {"max_segment", 4},
                     {"n_sinusoids", 4}, {"sinusoid_amp", 1.5}};
        j["train"] = {{"steps", 3000}, {"batch_size", 4}, {"learning_rate", 2e-3}};
        j["probe"] = {{"n_samples", 3},
                      {"sides", {"input_side"}},
                      {"trend_epsilon", 0.05},
                      {"jobs", static_cast<int>(std::thread::hardware_concurrency())},
                      {"mine", {{"batch_size", 128}, {"train_steps", 3000}, {"eval_batches", 16},
                                {"hidden_sizes", {64, 64}}}}};
        return experiment::ExperimentSpec::from_json(j);
    };

    struct Variant {
        const char* task;
        const char* label;
        probe::Trend want;
    };
    const Variant variants[] = {
        {"reconstruction", "(a) reconstruction encoder", probe::Trend::ReconstructionShaped},
        {"frame_classification", "(b) classification encoder-only",
         probe::Trend::MonotoneDecreasing},
        {"decoder_seq2seq", "(c) classification encoder+decoder",
         probe::Trend::ReconstructionShaped},
    };

    int variant_hits[3] = {0, 0, 0};
    int all_three = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        bool seed_ok = true;
        for (int v = 0; v < 3; ++v) {
            TempDir dir("trend-" + std::to_string(seed) + "-" + std::to_string(v));
            experiment::ExperimentSpec spec =
                trend_spec(variants[v].task, seed, dir.path.string());
            experiment::ExperimentResult res = experiment::run_experiment(spec);
            const bool ran = res.exit_code == experiment::kOk && !res.report.sides.empty();
            const probe::Trend got =
                ran ? res.report.sides.front().trend : probe::Trend::Other;
            const bool hit = ran && got == variants[v].want;
            variant_hits[v] += hit ? 1 : 0;
            seed_ok = seed_ok && hit;
            std::printf("[criterion 6]   seed %llu %-36s -> %-22s (want %s)\n",
                        static_cast<unsigned long long>(seed), variants[v].label,
                        ran ? probe::to_string(got).c_str() : "run failed",
                        probe::to_string(variants[v].want).c_str());
            std::fflush(stdout);
        }
        all_three += seed_ok ? 1 : 0;
    }

    const double secs = std::chrono::duration<double>(clock::now() - t0).count();
    std::printf("[criterion 6]   per-variant hits over 5 seeds: (a) %d  (b) %d  (c) %d; "
                "all-three seeds: %d; %.0fs total\n",
                variant_hits[0], variant_hits[1], variant_hits[2], all_three, secs);
    // A systematic miss on (c) is allowed if surfaced as an explicit negative
    // finding with every seed recorded (printed above); (a) and (b) must hit
    // on at least 3 of the 5 master seeds.
    if (variant_hits[2] < 3)
        std::printf("[criterion 6]   NEGATIVE FINDING: encoder+decoder variant (c) reproduced "
                    "the reconstruction shape in only %d/5 seeds (all seeds recorded above); "
                    "at this scale its probed curve is monotone decreasing like (b)\n",
                    variant_hits[2]);

    const bool ok = variant_hits[0] >= 3 && variant_hits[1] >= 3;
    CHECK(variant_hits[0] >= 3);
    CHECK(variant_hits[1] >= 3);
    report(6, "trend reproduction (>=3/5 seeds for (a) and (b); (c) miss surfaced above)", ok);
}
