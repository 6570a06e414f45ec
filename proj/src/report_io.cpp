#include "miprobe/report_io.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace miprobe::io {

namespace {

constexpr char kMagic[4] = {'M', 'I', 'P', 'B'};
constexpr std::uint32_t kVersion = 1;

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace

std::string config_hash(const json& j) {
    const std::string dump = j.dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : dump) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return content;
}

void save_blob(const std::string& path, const json& header, const Eigen::VectorXd& payload) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    const std::string head = header.dump();
    const std::uint64_t head_len = head.size();
    const std::uint64_t count = static_cast<std::uint64_t>(payload.size());
    out.write(kMagic, 4);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
    out.write(reinterpret_cast<const char*>(&head_len), sizeof head_len);
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    out.write(reinterpret_cast<const char*>(&count), sizeof count);
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(count * sizeof(double)));
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::pair<json, Eigen::VectorXd> load_blob(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    char magic[4];
    std::uint32_t version = 0;
    std::uint64_t head_len = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&head_len), sizeof head_len);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("not a mi-probe container: " + path);
    if (version != kVersion)
        throw std::runtime_error("unsupported container version " + std::to_string(version));
    std::string head(head_len, '\0');
    in.read(head.data(), static_cast<std::streamsize>(head_len));
    std::uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&count), sizeof count);
    Eigen::VectorXd payload(static_cast<Eigen::Index>(count));
    in.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw std::runtime_error("truncated container: " + path);
    return {json::parse(head), std::move(payload)};
}

void save_model(const std::string& path, const models::EncoderStack& stack,
                const models::TaskHead& head, const json& extra_meta) {
    json header = extra_meta;
    header["kind"] = "model";
    header["task"] = models::to_string(head.kind);
    header["input_dim"] = stack.input_dim();
    header["d_model"] = stack.d_model();
    header["state_dim"] = stack.layers.front().forward_dir.proj.state_dim();
    header["n_layers"] = stack.layers.size();
    header["decoder_layers"] = head.decoder.size();
    header["output_dim"] = head.out_w.rows();
    header["tap_points"] = stack.tap_points;
    save_blob(path, header, models::pack_params(stack, head));
}

LoadedModel load_model(const std::string& path) {
    auto [header, payload] = load_blob(path);
    if (header.value("kind", "") != "model")
        throw std::runtime_error("container is not a model: " + path);
    models::ModelConfig cfg;
    cfg.input_dim = header.at("input_dim").get<int>();
    cfg.d_model = header.at("d_model").get<int>();
    cfg.state_dim = header.at("state_dim").get<int>();
    cfg.n_layers = header.at("n_layers").get<int>();
    cfg.decoder_layers = header.at("decoder_layers").get<int>();
    cfg.tap_points = header.at("tap_points").get<std::vector<int>>();
    SeededRng dummy(0);
    LoadedModel m;
    m.stack = models::EncoderStack::init(cfg, dummy);
    m.head = models::TaskHead::init(models::task_from_string(header.at("task").get<std::string>()),
                                    cfg, header.at("output_dim").get<int>(), dummy);
    models::unpack_params(m.stack, m.head, payload);
    m.meta = std::move(header);
    return m;
}

void save_dataset(const std::string& path, const models::SyntheticDataset& data) {
    json header;
    header["kind"] = "dataset";
    header["task"] = models::to_string(data.task);
    header["seed"] = data.seed;
    header["n_samples"] = data.size();
    header["length"] = data.length();
    header["dim"] = data.dim();
    header["class_count"] = data.class_count;

    const Eigen::Index L = data.length();
    const Eigen::Index D = data.dim();
    const Eigen::Index per_sample = L * D + L;  // features + labels
    Eigen::VectorXd payload(data.class_count * D +
                            static_cast<Eigen::Index>(data.size()) * per_sample);
    Eigen::Index off = 0;
    payload.segment(off, data.class_count * D) =
        Eigen::Map<const Eigen::VectorXd>(data.codewords.data(), data.codewords.size());
    off += data.class_count * D;
    for (std::size_t s = 0; s < data.size(); ++s) {
        const auto& m = data.inputs[s].values;
        payload.segment(off, L * D) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
        off += L * D;
        for (Eigen::Index t = 0; t < L; ++t)
            payload(off + t) = static_cast<double>(data.labels[s][static_cast<std::size_t>(t)]);
        off += L;
    }
    save_blob(path, header, payload);
}

models::SyntheticDataset load_dataset(const std::string& path) {
    auto [header, payload] = load_blob(path);
    if (header.value("kind", "") != "dataset")
        throw std::runtime_error("container is not a dataset: " + path);
    models::SyntheticDataset ds;
    ds.task = models::task_from_string(header.at("task").get<std::string>());
    ds.seed = header.at("seed").get<std::uint64_t>();
    ds.class_count = header.at("class_count").get<int>();
    const Eigen::Index n = header.at("n_samples").get<Eigen::Index>();
    const Eigen::Index L = header.at("length").get<Eigen::Index>();
    const Eigen::Index D = header.at("dim").get<Eigen::Index>();

    Eigen::Index off = 0;
    ds.codewords.resize(ds.class_count, D);
    Eigen::Map<Eigen::VectorXd>(ds.codewords.data(), ds.codewords.size()) =
        payload.segment(off, ds.class_count * D);
    off += ds.class_count * D;
    for (Eigen::Index s = 0; s < n; ++s) {
        Eigen::MatrixXd m(L, D);
        Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = payload.segment(off, L * D);
        off += L * D;
        ds.inputs.push_back(mine::FeatureSequence{std::move(m)});
        std::vector<int> lab(static_cast<std::size_t>(L));
        for (Eigen::Index t = 0; t < L; ++t)
            lab[static_cast<std::size_t>(t)] = static_cast<int>(payload(off + t));
        off += L;
        ds.labels.push_back(std::move(lab));
    }
    return ds;
}

json report_to_json(const probe::LayerProbeReport& report) {
    json j;
    j["tap_points"] = report.tap_points;
    j["model_config_hash"] = report.model_config_hash;
    j["partial"] = report.partial;
    j["failures"] = json::array();
    for (const auto& f : report.failures) {
        j["failures"].push_back({{"sample", f.sample_index},
                                 {"layer", f.layer},
                                 {"side", mine::to_string(f.side)},
                                 {"message", f.message}});
    }
    j["sides"] = json::array();
    for (const auto& sr : report.sides) {
        json s;
        s["side"] = mine::to_string(sr.side);
        s["trend"] = probe::to_string(sr.trend);
        s["n_samples"] = sr.curve.n_samples;
        s["per_layer_mean"] = sr.curve.per_layer_mean;
        s["log_values"] = sr.curve.log_values;
        s["clamped"] = json::array();
        for (bool c : sr.curve.clamped) s["clamped"].push_back(c);
        s["estimates"] = json::array();
        for (const auto& e : sr.estimates) {
            s["estimates"].push_back({{"sample_id", e.sample_id},
                                      {"layer", e.layer_index},
                                      {"value_nats", e.value_nats},
                                      {"clamp_events", e.clamp_events}});
        }
        j["sides"].push_back(std::move(s));
    }
    return j;
}

std::string report_to_csv(const probe::LayerProbeReport& report) {
    std::string csv = "layer,side,mean_mi,log_mi,n_samples,flag\n";
    for (const auto& sr : report.sides) {
        for (std::size_t i = 0; i < sr.curve.per_layer_mean.size(); ++i) {
            csv += std::to_string(report.tap_points[i]);
            csv += ',';
            csv += mine::to_string(sr.side);
            csv += ',';
            csv += fmt17(sr.curve.per_layer_mean[i]);
            csv += ',';
            csv += fmt17(sr.curve.log_values[i]);
            csv += ',';
            csv += std::to_string(sr.curve.n_samples);
            csv += ',';
            csv += sr.curve.clamped[i] ? '1' : '0';
            csv += '\n';
        }
    }
    return csv;
}

std::string curves_svg(const std::vector<CurveForPlot>& curves) {
    constexpr double W = 640.0, H = 400.0;
    constexpr double ML = 60.0, MR = 20.0, MT = 20.0, MB = 50.0;
    static const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                    "#9467bd", "#8c564b"};

    int xmin = 0, xmax = 1;
    double ymin = 0.0, ymax = 1.0;
    bool first = true;
    for (const auto& c : curves)
        for (std::size_t i = 0; i < c.layers.size(); ++i) {
            if (first) {
                xmin = xmax = c.layers[i];
                ymin = ymax = c.log_values[i];
                first = false;
            } else {
                xmin = std::min(xmin, c.layers[i]);
                xmax = std::max(xmax, c.layers[i]);
                ymin = std::min(ymin, c.log_values[i]);
                ymax = std::max(ymax, c.log_values[i]);
            }
        }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax - ymin < 1e-9) ymax = ymin + 1.0;
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    auto sx = [&](double layer) {
        return ML + (layer - xmin) / static_cast<double>(xmax - xmin) * (W - ML - MR);
    };
    auto sy = [&](double v) { return H - MB - (v - ymin) / (ymax - ymin) * (H - MT - MB); };

    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 640 400\">\n";
    svg += "<rect x=\"0\" y=\"0\" width=\"640\" height=\"400\" fill=\"white\"/>\n";
    // axes
    svg += "<line x1=\"" + fmt2(ML) + "\" y1=\"" + fmt2(H - MB) + "\" x2=\"" + fmt2(W - MR) +
           "\" y2=\"" + fmt2(H - MB) + "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + fmt2(ML) + "\" y1=\"" + fmt2(MT) + "\" x2=\"" + fmt2(ML) +
           "\" y2=\"" + fmt2(H - MB) + "\" stroke=\"black\"/>\n";
    for (int l = xmin; l <= xmax; ++l) {
        svg += "<line x1=\"" + fmt2(sx(l)) + "\" y1=\"" + fmt2(H - MB) + "\" x2=\"" +
               fmt2(sx(l)) + "\" y2=\"" + fmt2(H - MB + 5) + "\" stroke=\"black\"/>\n";
        svg += "<text x=\"" + fmt2(sx(l)) + "\" y=\"" + fmt2(H - MB + 18) +
               "\" font-size=\"11\" text-anchor=\"middle\">" + std::to_string(l) + "</text>\n";
    }
    for (int k = 0; k <= 4; ++k) {
        const double v = ymin + (ymax - ymin) * k / 4.0;
        svg += "<line x1=\"" + fmt2(ML - 5) + "\" y1=\"" + fmt2(sy(v)) + "\" x2=\"" + fmt2(ML) +
               "\" y2=\"" + fmt2(sy(v)) + "\" stroke=\"black\"/>\n";
        svg += "<text x=\"" + fmt2(ML - 8) + "\" y=\"" + fmt2(sy(v) + 4) +
               "\" font-size=\"11\" text-anchor=\"end\">" + fmt2(v) + "</text>\n";
    }
    svg += "<text x=\"" + fmt2((ML + W - MR) / 2) + "\" y=\"" + fmt2(H - 10) +
           "\" font-size=\"12\" text-anchor=\"middle\">layer</text>\n";
    svg += "<text x=\"15\" y=\"" + fmt2((MT + H - MB) / 2) +
           "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 15 " +
           fmt2((MT + H - MB) / 2) + ")\">log MI (nats)</text>\n";

    for (std::size_t ci = 0; ci < curves.size(); ++ci) {
        const auto& c = curves[ci];
        const char* color = kColors[ci % 6];
        std::string pts;
        for (std::size_t i = 0; i < c.layers.size(); ++i) {
            if (i) pts += ' ';
            pts += fmt2(sx(c.layers[i])) + "," + fmt2(sy(c.log_values[i]));
        }
        svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
               "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
        svg += "<text x=\"" + fmt2(W - MR - 5) + "\" y=\"" + fmt2(MT + 14 + 14 * ci) +
               "\" font-size=\"11\" text-anchor=\"end\" fill=\"" + color + "\">" + c.label +
               "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace miprobe::io
