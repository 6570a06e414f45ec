#include <CLI11.hpp>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "miprobe/experiment.hpp"
#include "miprobe/report_io.hpp"

namespace ex = miprobe::experiment;
using miprobe::experiment::json;

namespace {

json load_config(const std::string& path) {
    return json::parse(miprobe::io::read_file(path));
}

ex::ExperimentSpec spec_from_args(const std::string& config_path,
                                  std::vector<std::string> overrides, int jobs,
                                  long long seed, bool seed_set) {
    json j = config_path.empty() ? json::object() : load_config(config_path);
    if (jobs > 0) overrides.push_back("probe.jobs=" + std::to_string(jobs));
    if (seed_set) overrides.push_back("seed=" + std::to_string(seed));
    return ex::ExperimentSpec::from_json(j, overrides);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"layer-wise mutual information probe for toy state-space sequence models"};
    app.require_subcommand(1);

    std::string config_path, model_path, data_path, report_path, out_dir;
    std::vector<std::string> overrides, compare_paths;
    int jobs = 0;
    long long seed = 0;
    bool seed_set = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment config JSON");
        cmd->add_option("--set", overrides, "dotted-path override, e.g. train.steps=500");
        cmd->add_option("--jobs", jobs, "parallel estimation workers");
        cmd->add_option("--seed", seed, "master seed override")
            ->each([&seed_set](const std::string&) { seed_set = true; });
    };

    auto* run = app.add_subcommand("run", "end-to-end: generate, train, probe, report");
    add_common(run);
    run->get_option("--config")->required();

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset container");
    add_common(gen);
    gen->get_option("--config")->required();
    gen->add_option("--out", out_dir, "output dataset path")->required();

    auto* train = app.add_subcommand("train", "train a model on a dataset container");
    add_common(train);
    train->get_option("--config")->required();
    train->add_option("--data", data_path, "dataset container")->required();
    train->add_option("--out", out_dir, "output model path")->required();

    auto* probe = app.add_subcommand("probe", "probe a trained model against a dataset");
    add_common(probe);
    probe->add_option("--model", model_path, "model container")->required();
    probe->add_option("--data", data_path, "dataset container")->required();
    probe->add_option("--out", out_dir, "output directory")->required();

    auto* report = app.add_subcommand("report", "rebuild CSV/SVG from a report JSON");
    report->add_option("--report", report_path, "report.json path")->required();
    report->add_option("--out", out_dir, "output directory")->required();

    auto* compare = app.add_subcommand("compare", "compare two or more probe reports");
    compare->add_option("reports", compare_paths, "report.json paths")->expected(-2);
    compare->add_option("--out", out_dir, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            ex::ExperimentSpec spec = spec_from_args(config_path, overrides, jobs, seed, seed_set);
            return ex::run_experiment(spec).exit_code;
        }
        if (gen->parsed()) {
            ex::ExperimentSpec spec = spec_from_args(config_path, overrides, jobs, seed, seed_set);
            auto data = miprobe::models::gen_synthetic_dataset(
                spec.data, miprobe::derive_seed(spec.master_seed, "data"));
            miprobe::io::save_dataset(out_dir, data);
            return ex::kOk;
        }
        if (train->parsed()) {
            ex::ExperimentSpec spec = spec_from_args(config_path, overrides, jobs, seed, seed_set);
            auto data = miprobe::io::load_dataset(data_path);
            miprobe::SeededRng init_rng(miprobe::derive_seed(spec.master_seed, "model-init"));
            auto stack = miprobe::models::EncoderStack::init(spec.model, init_rng);
            const int output_dim = spec.task == miprobe::models::TaskKind::Reconstruction
                                       ? static_cast<int>(data.dim())
                                       : data.class_count;
            auto head = miprobe::models::TaskHead::init(spec.task, spec.model, output_dim,
                                                        init_rng);
            auto tc = spec.train;
            tc.seed = miprobe::derive_seed(spec.master_seed, "train");
            miprobe::models::train_task(stack, head, data, tc);
            json meta;
            meta["name"] = spec.name;
            meta["config_hash"] = spec.config_hash();
            meta["master_seed"] = spec.master_seed;
            miprobe::io::save_model(out_dir, stack, head, meta);
            return ex::kOk;
        }
        if (probe->parsed()) {
            miprobe::probe::ProbeConfig cfg;
            if (!config_path.empty() || !overrides.empty() || seed_set || jobs > 0) {
                ex::ExperimentSpec spec =
                    spec_from_args(config_path, overrides, jobs, seed, seed_set);
                cfg = spec.probe_cfg;
                cfg.seed = miprobe::derive_seed(spec.master_seed, "probe");
            }
            return ex::probe_command(model_path, data_path, out_dir, cfg);
        }
        if (report->parsed()) return ex::report_command(report_path, out_dir);
        if (compare->parsed()) return ex::compare_runs(compare_paths, out_dir);
    } catch (const std::invalid_argument& e) {
        ex::log(ex::LogLevel::Error, std::string("config error: ") + e.what());
        return ex::kConfigError;
    } catch (const std::exception& e) {
        ex::log(ex::LogLevel::Error, e.what());
        return ex::kNumericError;
    }
    return ex::kConfigError;
}
