#include "miprobe/experiment.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <stdexcept>

#include "miprobe/report_io.hpp"

namespace miprobe::experiment {

namespace fs = std::filesystem;

LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("MI_PROBE_LOG");
        if (!env) return LogLevel::Info;
        const std::string v(env);
        if (v == "error") return LogLevel::Error;
        if (v == "debug") return LogLevel::Debug;
        return LogLevel::Info;
    }();
    return level;
}

void log(LogLevel level, const std::string& message) {
    if (static_cast<int>(level) <= static_cast<int>(log_level()))
        std::fprintf(stderr, "[mi-probe] %s\n", message.c_str());
}

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, _] : j.items())
        if (!allowed.contains(key))
            throw std::invalid_argument("unknown config key '" + key + "' in " + where);
}

json* navigate(json& root, const std::string& dotted) {
    json* cur = &root;
    std::size_t pos = 0;
    while (true) {
        const std::size_t dot = dotted.find('.', pos);
        const std::string part = dotted.substr(pos, dot - pos);
        if (dot == std::string::npos) {
            return &(*cur)[part];
        }
        cur = &(*cur)[part];
        pos = dot + 1;
    }
}

bool filesystem_safe(const std::string& name) {
    if (name.empty()) return false;
    for (char c : name) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '-' || c == '_' || c == '.';
        if (!ok) return false;
    }
    return true;
}

}  // namespace

ExperimentSpec ExperimentSpec::from_json(const json& input,
                                         const std::vector<std::string>& overrides) {
    json j = input;
    for (const auto& ov : overrides) {
        const std::size_t eq = ov.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("override must look like path=value: " + ov);
        const std::string path = ov.substr(0, eq);
        const std::string value = ov.substr(eq + 1);
        json parsed;
        try {
            parsed = json::parse(value);
        } catch (const json::parse_error&) {
            parsed = value;  // bare strings are taken literally
        }
        *navigate(j, path) = parsed;
    }

    check_keys(j, {"name", "task", "seed", "out_dir", "model", "data", "train", "probe"},
               "experiment");

    ExperimentSpec spec;
    spec.name = j.value("name", spec.name);
    if (!filesystem_safe(spec.name))
        throw std::invalid_argument("experiment name must be nonempty and filesystem-safe");
    spec.task = models::task_from_string(j.value("task", "reconstruction"));
    spec.master_seed = j.value("seed", 0ull);
    spec.out_dir = j.value("out_dir", std::string("."));

    const json m = j.value("model", json::object());
    check_keys(m, {"input_dim", "d_model", "state_dim", "n_layers", "decoder_layers",
                   "residual", "tap_points"}, "model");
    spec.model.input_dim = m.value("input_dim", spec.model.input_dim);
    spec.model.d_model = m.value("d_model", spec.model.d_model);
    spec.model.state_dim = m.value("state_dim", spec.model.state_dim);
    spec.model.n_layers = m.value("n_layers", spec.model.n_layers);
    spec.model.decoder_layers = m.value("decoder_layers", spec.model.decoder_layers);
    spec.model.residual = m.value("residual", spec.model.residual);
    spec.model.tap_points = m.value("tap_points", spec.model.tap_points);

    const json d = j.value("data", json::object());
    check_keys(d, {"n_samples", "length", "dim", "class_count", "min_segment", "max_segment",
                   "n_sinusoids", "sinusoid_amp"}, "data");
    spec.data.n_samples = d.value("n_samples", spec.data.n_samples);
    spec.data.length = d.value("length", spec.data.length);
    spec.data.dim = d.value("dim", spec.model.input_dim);
    spec.data.class_count = d.value("class_count", spec.data.class_count);
    spec.data.min_segment = d.value("min_segment", spec.data.min_segment);
    spec.data.max_segment = d.value("max_segment", spec.data.max_segment);
    spec.data.n_sinusoids = d.value("n_sinusoids", spec.data.n_sinusoids);
    spec.data.sinusoid_amp = d.value("sinusoid_amp", spec.data.sinusoid_amp);
    spec.data.task = spec.task == models::TaskKind::Reconstruction
                         ? models::TaskKind::Reconstruction
                         : models::TaskKind::FrameClassification;

    const json t = j.value("train", json::object());
    check_keys(t, {"steps", "batch_size", "learning_rate"}, "train");
    spec.train.steps = t.value("steps", spec.train.steps);
    spec.train.batch_size = t.value("batch_size", spec.train.batch_size);
    spec.train.learning_rate = t.value("learning_rate", spec.train.learning_rate);

    const json p = j.value("probe", json::object());
    check_keys(p, {"n_samples", "sides", "taps", "jobs", "trend_epsilon", "noise_sigma", "mine"},
               "probe");
    spec.probe_cfg.n_samples = p.value("n_samples", spec.probe_cfg.n_samples);
    if (p.contains("sides")) {
        spec.probe_cfg.sides.clear();
        for (const auto& s : p.at("sides"))
            spec.probe_cfg.sides.push_back(mine::side_from_string(s.get<std::string>()));
    }
    spec.probe_cfg.tap_points = p.value("taps", spec.probe_cfg.tap_points);
    spec.probe_cfg.jobs = p.value("jobs", spec.probe_cfg.jobs);
    spec.probe_cfg.trend_epsilon = p.value("trend_epsilon", spec.probe_cfg.trend_epsilon);
    spec.probe_cfg.noise_sigma = p.value("noise_sigma", spec.probe_cfg.noise_sigma);

    const json mc = p.value("mine", json::object());
    check_keys(mc, {"batch_size", "train_steps", "ema_decay", "eval_batches", "hidden_sizes",
                    "activation", "learning_rate", "score_clamp"}, "probe.mine");
    auto& mcfg = spec.probe_cfg.mine_cfg;
    mcfg.batch_size = mc.value("batch_size", mcfg.batch_size);
    mcfg.train_steps = mc.value("train_steps", mcfg.train_steps);
    mcfg.ema_decay = mc.value("ema_decay", mcfg.ema_decay);
    mcfg.eval_batches = mc.value("eval_batches", mcfg.eval_batches);
    mcfg.hidden_sizes = mc.value("hidden_sizes", mcfg.hidden_sizes);
    if (mc.contains("activation"))
        mcfg.activation = nn::activation_from_string(mc.at("activation").get<std::string>());
    mcfg.learning_rate = mc.value("learning_rate", mcfg.learning_rate);
    mcfg.score_clamp = mc.value("score_clamp", mcfg.score_clamp);

    spec.validate();
    return spec;
}

void ExperimentSpec::validate() const {
    if (!filesystem_safe(name))
        throw std::invalid_argument("experiment name must be nonempty and filesystem-safe");
    if (data.dim != model.input_dim)
        throw std::invalid_argument("data.dim must equal model.input_dim");
    probe_cfg.validate();
    if (probe_cfg.n_samples > data.n_samples)
        throw std::invalid_argument("probe.n_samples exceeds data.n_samples");
    if (probe_cfg.mine_cfg.batch_size > data.length)
        throw std::invalid_argument("probe.mine.batch_size exceeds data.length");
}

json ExperimentSpec::to_json() const {
    json mc;
    mc["batch_size"] = probe_cfg.mine_cfg.batch_size;
    mc["train_steps"] = probe_cfg.mine_cfg.train_steps;
    mc["ema_decay"] = probe_cfg.mine_cfg.ema_decay;
    mc["eval_batches"] = probe_cfg.mine_cfg.eval_batches;
    mc["hidden_sizes"] = probe_cfg.mine_cfg.hidden_sizes;
    mc["activation"] = nn::to_string(probe_cfg.mine_cfg.activation);
    mc["learning_rate"] = probe_cfg.mine_cfg.learning_rate;
    mc["score_clamp"] = probe_cfg.mine_cfg.score_clamp;

    json sides = json::array();
    for (auto s : probe_cfg.sides) sides.push_back(mine::to_string(s));

    return json{
        {"name", name},
        {"task", models::to_string(task)},
        {"seed", master_seed},
        {"out_dir", out_dir},
        {"model",
         {{"input_dim", model.input_dim},
          {"d_model", model.d_model},
          {"state_dim", model.state_dim},
          {"n_layers", model.n_layers},
          {"decoder_layers", model.decoder_layers},
          {"residual", model.residual},
          {"tap_points", model.tap_points}}},
        {"data",
         {{"n_samples", data.n_samples},
          {"length", data.length},
          {"dim", data.dim},
          {"class_count", data.class_count},
          {"min_segment", data.min_segment},
          {"max_segment", data.max_segment},
          {"n_sinusoids", data.n_sinusoids},
          {"sinusoid_amp", data.sinusoid_amp}}},
        {"train",
         {{"steps", train.steps},
          {"batch_size", train.batch_size},
          {"learning_rate", train.learning_rate}}},
        {"probe",
         {{"n_samples", probe_cfg.n_samples},
          {"sides", sides},
          {"taps", probe_cfg.tap_points},
          {"jobs", probe_cfg.jobs},
          {"trend_epsilon", probe_cfg.trend_epsilon},
          {"noise_sigma", probe_cfg.noise_sigma},
          {"mine", mc}}}};
}

std::string ExperimentSpec::config_hash() const {
    json j = to_json();
    j.erase("out_dir");
    j["probe"].erase("jobs");
    return io::config_hash(j);
}

namespace {

void write_report_artifacts(const probe::LayerProbeReport& report, const std::string& out_dir) {
    json rj = io::report_to_json(report);
    io::write_file(out_dir + "/report.json", rj.dump(2) + "\n");
    io::write_file(out_dir + "/report.csv", io::report_to_csv(report));
    std::vector<io::CurveForPlot> curves;
    for (const auto& sr : report.sides)
        curves.push_back({mine::to_string(sr.side) + " (" + probe::to_string(sr.trend) + ")",
                          report.tap_points, sr.curve.log_values});
    io::write_file(out_dir + "/curve.svg", io::curves_svg(curves));
}

}  // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec) {
    ExperimentResult result;
    try {
        spec.validate();
    } catch (const std::exception& e) {
        log(LogLevel::Error, std::string("config error: ") + e.what());
        result.exit_code = kConfigError;
        return result;
    }

    const std::string out = spec.out_dir;
    const std::string marker = out + "/FAILED";
    try {
        fs::create_directories(out);
        if (fs::exists(marker)) fs::remove(marker);

        const std::string hash = spec.config_hash();
        log(LogLevel::Info, "experiment '" + spec.name + "' config " + hash);

        log(LogLevel::Info, "generating dataset");
        models::SyntheticDataset data =
            models::gen_synthetic_dataset(spec.data, derive_seed(spec.master_seed, "data"));

        log(LogLevel::Info, "initializing model");
        SeededRng init_rng(derive_seed(spec.master_seed, "model-init"));
        models::EncoderStack stack = models::EncoderStack::init(spec.model, init_rng);
        const int output_dim = spec.task == models::TaskKind::Reconstruction
                                   ? spec.data.dim
                                   : spec.data.class_count;
        models::TaskHead head = models::TaskHead::init(spec.task, spec.model, output_dim, init_rng);

        log(LogLevel::Info, "training (" + std::to_string(spec.train.steps) + " steps)");
        models::TrainConfig tc = spec.train;
        tc.seed = derive_seed(spec.master_seed, "train");
        result.loss_history = models::train_task(stack, head, data, tc);
        if (!result.loss_history.empty())
            log(LogLevel::Info, "final loss " + std::to_string(result.loss_history.back()));

        json meta;
        meta["name"] = spec.name;
        meta["config_hash"] = hash;
        meta["master_seed"] = spec.master_seed;
        io::save_model(out + "/model.bin", stack, head, meta);

        log(LogLevel::Info, "probing layers");
        probe::ProbeConfig pc = spec.probe_cfg;
        pc.seed = derive_seed(spec.master_seed, "probe");
        result.report = probe::probe_layers(stack, data, pc, hash);

        write_report_artifacts(result.report, out);
        result.exit_code = result.report.partial ? kPartialProbe : kOk;
        if (result.report.partial) {
            log(LogLevel::Error, "probe completed with failures; report is partial");
            io::write_file(marker, "partial probe failure\n");
        }
        return result;
    } catch (const std::exception& e) {
        log(LogLevel::Error, std::string("experiment failed: ") + e.what());
        try {
            io::write_file(marker, std::string(e.what()) + "\n");
        } catch (...) {
        }
        result.exit_code = kNumericError;
        return result;
    }
}

int probe_command(const std::string& model_path, const std::string& data_path,
                  const std::string& out_dir, const probe::ProbeConfig& cfg) {
    try {
        io::LoadedModel model = io::load_model(model_path);
        models::SyntheticDataset data = io::load_dataset(data_path);
        fs::create_directories(out_dir);
        probe::LayerProbeReport report =
            probe::probe_layers(model.stack, data, cfg, model.meta.value("config_hash", ""));
        write_report_artifacts(report, out_dir);
        return report.partial ? kPartialProbe : kOk;
    } catch (const std::invalid_argument& e) {
        log(LogLevel::Error, std::string("config error: ") + e.what());
        return kConfigError;
    } catch (const std::exception& e) {
        log(LogLevel::Error, e.what());
        return kNumericError;
    }
}

int report_command(const std::string& report_path, const std::string& out_dir) {
    try {
        const json rj = json::parse(io::read_file(report_path));
        fs::create_directories(out_dir);
        std::string csv = "layer,side,mean_mi,log_mi,n_samples,flag\n";
        std::vector<io::CurveForPlot> curves;
        const auto taps = rj.at("tap_points").get<std::vector<int>>();
        for (const auto& sr : rj.at("sides")) {
            const auto means = sr.at("per_layer_mean").get<std::vector<double>>();
            const auto logs = sr.at("log_values").get<std::vector<double>>();
            const auto clamped = sr.at("clamped").get<std::vector<bool>>();
            for (std::size_t i = 0; i < means.size(); ++i) {
                char buf[128];
                std::snprintf(buf, sizeof buf, "%d,%s,%.17g,%.17g,%d,%d\n", taps[i],
                              sr.at("side").get<std::string>().c_str(), means[i], logs[i],
                              sr.at("n_samples").get<int>(), clamped[i] ? 1 : 0);
                csv += buf;
            }
            curves.push_back({sr.at("side").get<std::string>() + " (" +
                                  sr.at("trend").get<std::string>() + ")",
                              taps, logs});
        }
        io::write_file(out_dir + "/report.csv", csv);
        io::write_file(out_dir + "/curve.svg", io::curves_svg(curves));
        return kOk;
    } catch (const std::exception& e) {
        log(LogLevel::Error, e.what());
        return kConfigError;
    }
}

int compare_runs(const std::vector<std::string>& report_paths, const std::string& out_dir) {
    try {
        if (report_paths.size() < 2)
            throw std::invalid_argument("compare needs at least two reports");
        std::vector<json> reports;
        for (const auto& p : report_paths) reports.push_back(json::parse(io::read_file(p)));

        const auto taps0 = reports.front().at("tap_points").get<std::vector<int>>();
        for (const auto& r : reports) {
            if (r.at("tap_points").get<std::vector<int>>() != taps0)
                throw std::invalid_argument(
                    "cannot compare: reports use different layer conventions");
        }

        json table = json::array();
        std::vector<io::CurveForPlot> curves;
        std::set<std::string> first_side_labels;
        for (std::size_t i = 0; i < reports.size(); ++i) {
            const auto& r = reports[i];
            json row;
            row["report"] = report_paths[i];
            row["config_hash"] = r.value("model_config_hash", "");
            json trends = json::object();
            for (const auto& sr : r.at("sides"))
                trends[sr.at("side").get<std::string>()] = sr.at("trend").get<std::string>();
            row["trends"] = trends;
            table.push_back(row);

            const auto& first = r.at("sides").at(0);
            first_side_labels.insert(first.at("trend").get<std::string>());
            const std::string base = fs::path(report_paths[i]).parent_path().filename().string();
            curves.push_back({(base.empty() ? report_paths[i] : base) + " (" +
                                  first.at("trend").get<std::string>() + ")",
                              taps0, first.at("log_values").get<std::vector<double>>()});
        }

        json out;
        out["reports"] = table;
        out["labels_differ"] = first_side_labels.size() > 1;

        fs::create_directories(out_dir);
        io::write_file(out_dir + "/comparison.json", out.dump(2) + "\n");
        io::write_file(out_dir + "/overlay.svg", io::curves_svg(curves));
        if (out["labels_differ"].get<bool>())
            log(LogLevel::Info, "trend labels differ across reports");
        return kOk;
    } catch (const std::invalid_argument& e) {
        log(LogLevel::Error, std::string("usage error: ") + e.what());
        return kConfigError;
    } catch (const std::exception& e) {
        log(LogLevel::Error, e.what());
        return kNumericError;
    }
}

}  // namespace miprobe::experiment
