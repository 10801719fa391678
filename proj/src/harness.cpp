#include "kernleak/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "kernleak/rng.hpp"
#include "kernleak/sidechannel.hpp"

namespace kernleak {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, std::string_view contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

} // namespace

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

std::string ModelSpec::label() const {
    if (path) return fs::path(*path).stem().string();
    return std::string(to_string(*family)) + "-s" + std::to_string(scale) + "-g" +
           std::to_string(gen_seed);
}

ModelGraph ModelSpec::build() const {
    if (path) return load_model(read_file(*path));
    if (!family) throw ValidationError("model spec needs a family or a path");
    return generate_model(*family, scale, gen_seed);
}

ExperimentConfig default_experiment_config() {
    ExperimentConfig cfg;
    cfg.seed = 1;
    for (ModelFamily f : {ModelFamily::resnet_mini, ModelFamily::densenet_mini,
                          ModelFamily::yolo_mini, ModelFamily::transformer_mini})
        cfg.models.push_back({f, 2, 7, std::nullopt});
    cfg.trial_grid = {0, 1, 2, 4, 8, 16, 32, 64, 128, 256, 512};
    cfg.seeds = {0, 1, 2, 3, 4};
    cfg.noise_sigma = 0.05;
    for (ModelFamily f : {ModelFamily::resnet_mini, ModelFamily::densenet_mini,
                          ModelFamily::yolo_mini})
        for (int scale : {1, 2, 3})
            cfg.corpus.graphs.push_back({f, scale, 7, std::nullopt});
    cfg.corpus.noise_seeds = {100, 101, 102, 103, 104, 105, 106, 107};
    cfg.out_dir = "out";
    return cfg;
}

namespace {

ModelSpec model_spec_from_json(const json& j) {
    ModelSpec spec;
    if (j.contains("path")) {
        spec.path = j.at("path").get<std::string>();
        return spec;
    }
    auto family = family_from_string(j.at("family").get<std::string>());
    if (!family)
        throw ValidationError("unknown model family '" +
                              j.at("family").get<std::string>() + "'");
    spec.family = family;
    spec.scale = j.value("scale", 2);
    spec.gen_seed = j.value("gen_seed", uint64_t{0});
    return spec;
}

json model_spec_to_json(const ModelSpec& spec) {
    json j;
    if (spec.path) {
        j["path"] = *spec.path;
    } else {
        j["family"] = to_string(*spec.family);
        j["scale"] = spec.scale;
        j["gen_seed"] = spec.gen_seed;
    }
    return j;
}

void check_experiment_config(const ExperimentConfig& cfg) {
    if (cfg.models.empty()) throw ValidationError("config needs >= 1 model");
    if (cfg.seeds.empty()) throw ValidationError("config needs >= 1 seed");
    if (cfg.trial_grid.empty() || cfg.trial_grid.front() != 0)
        throw ValidationError("trial_grid must start at 0");
    if (!std::is_sorted(cfg.trial_grid.begin(), cfg.trial_grid.end()) ||
        std::adjacent_find(cfg.trial_grid.begin(), cfg.trial_grid.end()) !=
            cfg.trial_grid.end())
        throw ValidationError("trial_grid must be strictly ascending");
    if (cfg.noise_sigma < 0) throw ValidationError("noise_sigma must be >= 0");
    if (cfg.corpus.graphs.empty()) throw ValidationError("corpus needs >= 1 graph");
    if (cfg.corpus.noise_seeds.empty())
        throw ValidationError("corpus needs >= 1 noise seed");
}

} // namespace

ExperimentConfig load_experiment_config(std::string_view bytes) {
    json doc;
    try {
        doc = json::parse(bytes);
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad config: ") + e.what());
    }
    ExperimentConfig cfg = default_experiment_config();
    try {
        cfg.seed = doc.value("seed", cfg.seed);
        if (doc.contains("models")) {
            cfg.models.clear();
            for (const auto& j : doc.at("models")) cfg.models.push_back(model_spec_from_json(j));
        }
        if (doc.contains("trial_grid"))
            cfg.trial_grid = doc.at("trial_grid").get<std::vector<int>>();
        if (doc.contains("seeds"))
            cfg.seeds = doc.at("seeds").get<std::vector<uint64_t>>();
        cfg.noise_sigma = doc.value("noise_sigma", cfg.noise_sigma);
        cfg.device_profile = doc.value("device_profile", cfg.device_profile);
        if (doc.contains("corpus")) {
            const auto& jc = doc.at("corpus");
            if (jc.contains("graphs")) {
                cfg.corpus.graphs.clear();
                for (const auto& j : jc.at("graphs"))
                    cfg.corpus.graphs.push_back(model_spec_from_json(j));
            }
            if (jc.contains("noise_seeds"))
                cfg.corpus.noise_seeds = jc.at("noise_seeds").get<std::vector<uint64_t>>();
        }
        cfg.out_dir = doc.value("out_dir", cfg.out_dir);
        if (doc.contains("tuner")) {
            const auto& jt = doc.at("tuner");
            cfg.tuner.batch_size = jt.value("batch_size", cfg.tuner.batch_size);
            cfg.tuner.initial_temperature =
                jt.value("initial_temperature", cfg.tuner.initial_temperature);
            cfg.tuner.cooling_rate = jt.value("cooling_rate", cfg.tuner.cooling_rate);
            cfg.tuner.surrogate_warmup =
                jt.value("surrogate_warmup", cfg.tuner.surrogate_warmup);
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad config field: ") + e.what());
    }
    check_experiment_config(cfg);
    return cfg;
}

std::string save_experiment_config(const ExperimentConfig& cfg) {
    json doc;
    doc["seed"] = cfg.seed;
    doc["models"] = json::array();
    for (const auto& m : cfg.models) doc["models"].push_back(model_spec_to_json(m));
    doc["trial_grid"] = cfg.trial_grid;
    doc["seeds"] = cfg.seeds;
    doc["noise_sigma"] = cfg.noise_sigma;
    doc["device_profile"] = cfg.device_profile;
    doc["corpus"]["graphs"] = json::array();
    for (const auto& m : cfg.corpus.graphs)
        doc["corpus"]["graphs"].push_back(model_spec_to_json(m));
    doc["corpus"]["noise_seeds"] = cfg.corpus.noise_seeds;
    doc["out_dir"] = cfg.out_dir;
    doc["tuner"]["batch_size"] = cfg.tuner.batch_size;
    doc["tuner"]["initial_temperature"] = cfg.tuner.initial_temperature;
    doc["tuner"]["cooling_rate"] = cfg.tuner.cooling_rate;
    doc["tuner"]["surrogate_warmup"] = cfg.tuner.surrogate_warmup;
    return doc.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

uint64_t cell_tuner_seed(const ExperimentConfig& cfg, const std::string& label,
                         int trials, uint64_t seed) {
    return derive_seed(cfg.seed, "tune",
                       label + "|t" + std::to_string(trials) + "|s" + std::to_string(seed));
}

uint64_t cell_noise_seed(const ExperimentConfig& cfg, const std::string& label,
                         int trials, uint64_t seed) {
    return derive_seed(cfg.seed, "noise",
                       label + "|t" + std::to_string(trials) + "|s" + std::to_string(seed));
}

SweepResult run_sweep(const ExperimentConfig& cfg) {
    check_experiment_config(cfg);
    DeviceProfile device = cfg.device_profile.empty()
                               ? a100_like_profile()
                               : load_device_profile(read_file(cfg.device_profile));

    fs::path out(cfg.out_dir);
    std::error_code ec;
    fs::create_directories(out / "models", ec);
    fs::create_directories(out / "cells", ec);
    if (ec) throw IoError("cannot create output directory '" + cfg.out_dir + "'");

    // Victims.
    std::vector<std::pair<std::string, ModelGraph>> victims;
    for (const auto& spec : cfg.models) {
        auto graph = spec.build();
        victims.emplace_back(spec.label(), std::move(graph));
        write_file(out / "models" / (spec.label() + ".mgf.json"),
                   save_model(victims.back().second));
    }

    // Signature corpus, built once from default compilations.
    std::vector<ModelGraph> corpus;
    std::vector<std::string> corpus_bytes;
    for (const auto& spec : cfg.corpus.graphs) {
        corpus.push_back(spec.build());
        corpus_bytes.push_back(save_model(corpus.back()));
    }
    SignatureDB db =
        build_signature_db(corpus, device, cfg.noise_sigma, cfg.corpus.noise_seeds);
    write_file(out / "db.json", save_signature_db(db));

    SweepResult result;
    for (const auto& [label, graph] : victims) {
        std::string bytes = save_model(graph);
        if (std::find(corpus_bytes.begin(), corpus_bytes.end(), bytes) !=
            corpus_bytes.end())
            result.overlap_flags.push_back(label);
    }

    for (const auto& [label, graph] : victims) {
        size_t baseline_row = result.rows.size();
        for (int trials : cfg.trial_grid) {
            double fid_sum = 0, fid_min = 1e9, fid_max = -1e9;
            double unknown_sum = 0, latency_sum = 0;
            for (uint64_t seed : cfg.seeds) {
                std::string cell = label + "/t" + std::to_string(trials) + "_s" +
                                   std::to_string(seed);
                try {
                    TunerConfig tcfg = cfg.tuner;
                    tcfg.trials = trials;
                    tcfg.seed = cell_tuner_seed(cfg, label, trials, seed);
                    auto tuned = tune_model(graph, device, tcfg);
                    auto compiled = lower(graph, tuned.schedules);
                    Trace trace = run_inference(compiled, device, cfg.noise_sigma,
                                                cell_noise_seed(cfg, label, trials, seed));
                    auto view = attacker_view(trace);
                    auto pred = predict_architecture(view, db);
                    auto score = fidelity(pred, graph);

                    fs::path cell_dir = out / "cells" / cell;
                    fs::create_directories(cell_dir, ec);
                    if (ec) throw IoError("cannot create '" + cell_dir.string() + "'");
                    write_file(cell_dir / "schedules.json", save_schedules(tuned.schedules));
                    write_file(cell_dir / "trace.csv", export_trace_csv(trace));
                    write_file(cell_dir / "prediction.json", save_prediction(pred, score));

                    fid_sum += score.value;
                    fid_min = std::min(fid_min, score.value);
                    fid_max = std::max(fid_max, score.value);
                    unknown_sum += unknown_fraction(pred);
                    latency_sum += static_cast<double>(total_latency_ns(trace));
                } catch (const std::exception& e) {
                    throw ValidationError("cell " + cell + ": " + e.what());
                }
            }
            double n = static_cast<double>(cfg.seeds.size());
            SweepRow row;
            row.model = label;
            row.trials = trials;
            row.mean_fidelity = fid_sum / n;
            row.min_fidelity = fid_min;
            row.max_fidelity = fid_max;
            row.mean_unknown_fraction = unknown_sum / n;
            row.mean_latency_ns = latency_sum / n;
            result.rows.push_back(row);
        }
        const SweepRow& base = result.rows[baseline_row];
        for (size_t i = baseline_row; i < result.rows.size(); ++i) {
            SweepRow& row = result.rows[i];
            row.rel_fidelity_change =
                base.mean_fidelity == 0
                    ? 0
                    : (row.mean_fidelity - base.mean_fidelity) / base.mean_fidelity;
            row.rel_latency_change =
                base.mean_latency_ns == 0
                    ? 0
                    : (row.mean_latency_ns - base.mean_latency_ns) / base.mean_latency_ns;
        }
    }

    json meta;
    meta["config"] = json::parse(save_experiment_config(cfg));
    meta["device"] = device.name;
    meta["overlap_flags"] = result.overlap_flags;
    write_file(out / "metadata.json", meta.dump(2) + "\n");
    return result;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

std::string sweep_csv(const SweepResult& result) {
    std::string out =
        "model,trials,mean_fidelity,min_fidelity,max_fidelity,mean_unknown_fraction,"
        "mean_latency_ns,rel_fidelity_change,rel_latency_change\n";
    for (const auto& r : result.rows) {
        out += r.model;
        out += ',' + std::to_string(r.trials);
        out += ',' + fmt("%.6f", r.mean_fidelity);
        out += ',' + fmt("%.6f", r.min_fidelity);
        out += ',' + fmt("%.6f", r.max_fidelity);
        out += ',' + fmt("%.6f", r.mean_unknown_fraction);
        out += ',' + fmt("%.1f", r.mean_latency_ns);
        out += ',' + fmt("%.6f", r.rel_fidelity_change);
        out += ',' + fmt("%.6f", r.rel_latency_change);
        out += '\n';
    }
    return out;
}

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

struct SeriesPoint {
    double mean, lo, hi;
};

// Shared plot skeleton: one band polygon + one mean polyline per model,
// x spaced uniformly over the (geometric) trial grid.
std::string render_svg(const SweepResult& result, const std::string& title,
                       double y_max, const std::string& y_label,
                       double (*mean_of)(const SweepRow&),
                       double (*lo_of)(const SweepRow&),
                       double (*hi_of)(const SweepRow&)) {
    std::vector<std::string> models;
    std::vector<int> grid;
    for (const auto& r : result.rows) {
        if (std::find(models.begin(), models.end(), r.model) == models.end())
            models.push_back(r.model);
        if (std::find(grid.begin(), grid.end(), r.trials) == grid.end())
            grid.push_back(r.trials);
    }
    std::sort(grid.begin(), grid.end());

    const double width = 760, height = 480;
    const double left = 70, right = width - 180, top = 40, bottom = height - 60;
    auto x_at = [&](size_t i) {
        if (grid.size() == 1) return (left + right) / 2;
        return left + (right - left) * static_cast<double>(i) /
                          static_cast<double>(grid.size() - 1);
    };
    auto y_at = [&](double v) { return bottom - (bottom - top) * (v / y_max); };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt("%.0f", width) +
           "\" height=\"" + fmt("%.0f", height) + "\" viewBox=\"0 0 " +
           fmt("%.0f", width) + " " + fmt("%.0f", height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + fmt("%.0f", (left + right) / 2) +
           "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"15\">" + title + "</text>\n";

    // Axes and ticks.
    svg += "<line x1=\"" + fmt("%.1f", left) + "\" y1=\"" + fmt("%.1f", bottom) +
           "\" x2=\"" + fmt("%.1f", right) + "\" y2=\"" + fmt("%.1f", bottom) +
           "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + fmt("%.1f", left) + "\" y1=\"" + fmt("%.1f", top) +
           "\" x2=\"" + fmt("%.1f", left) + "\" y2=\"" + fmt("%.1f", bottom) +
           "\" stroke=\"black\"/>\n";
    for (size_t i = 0; i < grid.size(); ++i) {
        svg += "<text x=\"" + fmt("%.1f", x_at(i)) + "\" y=\"" + fmt("%.1f", bottom + 18) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
               std::to_string(grid[i]) + "</text>\n";
    }
    for (int tick = 0; tick <= 4; ++tick) {
        double v = y_max * tick / 4.0;
        svg += "<text x=\"" + fmt("%.1f", left - 8) + "\" y=\"" + fmt("%.1f", y_at(v) + 4) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
               fmt(y_max <= 1.0 ? "%.2f" : "%.0f", v) + "</text>\n";
    }
    svg += "<text x=\"" + fmt("%.0f", (left + right) / 2) + "\" y=\"" +
           fmt("%.0f", height - 16) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">trials "
           "(geometric grid)</text>\n";
    svg += "<text x=\"20\" y=\"" + fmt("%.0f", (top + bottom) / 2) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
           "transform=\"rotate(-90 20 " + fmt("%.0f", (top + bottom) / 2) + ")\">" +
           y_label + "</text>\n";

    for (size_t m = 0; m < models.size(); ++m) {
        std::vector<SeriesPoint> series(grid.size(), {0, 0, 0});
        for (const auto& r : result.rows) {
            if (r.model != models[m]) continue;
            size_t i = static_cast<size_t>(
                std::find(grid.begin(), grid.end(), r.trials) - grid.begin());
            series[i] = {mean_of(r), lo_of(r), hi_of(r)};
        }
        const char* color = kPalette[m % (sizeof(kPalette) / sizeof(kPalette[0]))];

        std::string band;
        for (size_t i = 0; i < grid.size(); ++i)
            band += fmt("%.2f", x_at(i)) + "," + fmt("%.2f", y_at(series[i].hi)) + " ";
        for (size_t i = grid.size(); i > 0; --i)
            band += fmt("%.2f", x_at(i - 1)) + "," + fmt("%.2f", y_at(series[i - 1].lo)) +
                    (i > 1 ? " " : "");
        svg += "<polygon points=\"" + band + "\" fill=\"" + color +
               "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";

        std::string line;
        for (size_t i = 0; i < grid.size(); ++i) {
            line += fmt("%.2f", x_at(i)) + "," + fmt("%.2f", y_at(series[i].mean));
            if (i + 1 < grid.size()) line += " ";
        }
        svg += "<polyline points=\"" + line + "\" fill=\"none\" stroke=\"" + color +
               "\" stroke-width=\"2\"/>\n";

        double ly = top + 18 * static_cast<double>(m);
        svg += "<line x1=\"" + fmt("%.1f", right + 12) + "\" y1=\"" + fmt("%.1f", ly) +
               "\" x2=\"" + fmt("%.1f", right + 36) + "\" y2=\"" + fmt("%.1f", ly) +
               "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
        svg += "<text x=\"" + fmt("%.1f", right + 42) + "\" y=\"" + fmt("%.1f", ly + 4) +
               "\" font-family=\"sans-serif\" font-size=\"11\">" + models[m] + "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

} // namespace

std::string fidelity_svg(const SweepResult& result) {
    return render_svg(
        result, "attack fidelity vs tuning trials", 1.0, "fidelity",
        [](const SweepRow& r) { return r.mean_fidelity; },
        [](const SweepRow& r) { return r.min_fidelity; },
        [](const SweepRow& r) { return r.max_fidelity; });
}

std::string latency_svg(const SweepResult& result) {
    double y_max = 1.0;
    for (const auto& r : result.rows) y_max = std::max(y_max, r.mean_latency_ns / 1000.0);
    auto mean = [](const SweepRow& r) { return r.mean_latency_ns / 1000.0; };
    return render_svg(result, "mean simulated latency vs tuning trials", y_max,
                      "latency (us)", mean, mean, mean);
}

void report(const SweepResult& result, const std::string& out_dir) {
    fs::path out(out_dir);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create output directory '" + out_dir + "'");
    write_file(out / "sweep.csv", sweep_csv(result));
    write_file(out / "fidelity_vs_trials.svg", fidelity_svg(result));
    write_file(out / "latency_vs_trials.svg", latency_svg(result));
}

} // namespace kernleak
