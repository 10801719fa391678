#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "kernleak/harness.hpp"
#include "kernleak/rng.hpp"
#include "kernleak/sidechannel.hpp"

namespace kernleak {

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const std::string& path, std::string_view contents) {
    auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(parent, ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
}

DeviceProfile device_from(const std::string& path) {
    return path.empty() ? a100_like_profile() : load_device_profile(slurp(path));
}

ModelFamily parse_family(const std::string& name) {
    auto f = family_from_string(name);
    if (!f)
        throw ValidationError("unknown family '" + name +
                              "' (resnet_mini | densenet_mini | yolo_mini | transformer_mini)");
    return *f;
}

// ---- calibrate: scan sigma x lambda and print the operating points the
// default config depends on (baseline fidelity seen/unseen, transformer
// behavior, tuned-down fidelity). Used once to freeze defaults.
int cmd_calibrate(double trials_high) {
    DeviceProfile device = a100_like_profile();
    std::vector<ModelSpec> corpus_specs;
    for (ModelFamily f : {ModelFamily::resnet_mini, ModelFamily::densenet_mini,
                          ModelFamily::yolo_mini})
        for (int scale : {1, 2, 3}) corpus_specs.push_back({f, scale, 7, std::nullopt});
    std::vector<ModelGraph> corpus;
    for (const auto& s : corpus_specs) corpus.push_back(s.build());
    std::vector<uint64_t> corpus_seeds = {100, 101, 102, 103, 104, 105, 106, 107};

    std::vector<ModelFamily> conv = {ModelFamily::resnet_mini, ModelFamily::densenet_mini,
                                     ModelFamily::yolo_mini};

    std::printf("sigma  lambda | seen@0  unseen@0 | transf@0 unk%%  | seen@%d  rel\n",
                static_cast<int>(trials_high));
    for (double sigma : {0.02, 0.05, 0.10}) {
        SignatureDB db = build_signature_db(corpus, device, sigma, corpus_seeds);
        for (double lambda : {0.50, 1.00, 1.50}) {
            db.transition_weight = lambda;

            auto attack_mean = [&](ModelFamily fam, uint64_t gen_seed, int trials,
                                   double* unknown_out) {
                ModelGraph g = generate_model(fam, 2, gen_seed);
                double fid = 0, unk = 0;
                int n = 0;
                for (uint64_t seed : {uint64_t{0}, uint64_t{1}}) {
                    TunerConfig tcfg;
                    tcfg.trials = trials;
                    tcfg.seed = derive_seed(seed, "calibrate", g.name);
                    auto tuned = tune_model(g, device, tcfg);
                    auto compiled = lower(g, tuned.schedules);
                    Trace t = run_inference(compiled, device, sigma,
                                            derive_seed(seed, "calibrate-noise", g.name));
                    auto pred = predict_architecture(attacker_view(t), db);
                    fid += fidelity(pred, g).value;
                    unk += unknown_fraction(pred);
                    ++n;
                }
                if (unknown_out) *unknown_out = unk / n;
                return fid / n;
            };

            double seen0 = 0, unseen0 = 0, seen_high = 0;
            for (ModelFamily fam : conv) {
                seen0 += attack_mean(fam, 7, 0, nullptr);
                unseen0 += attack_mean(fam, 13, 0, nullptr);
                seen_high += attack_mean(fam, 7, static_cast<int>(trials_high), nullptr);
            }
            seen0 /= conv.size();
            unseen0 /= conv.size();
            seen_high /= conv.size();
            double unk = 0;
            double transf = attack_mean(ModelFamily::transformer_mini, 7, 0, &unk);

            std::printf("%.2f   %.2f   | %.4f  %.4f  | %.4f  %.3f | %.4f  %+.1f%%\n",
                        sigma, lambda, seen0, unseen0, transf, unk, seen_high,
                        seen0 > 0 ? (seen_high - seen0) / seen0 * 100.0 : 0.0);
        }
    }
    return 0;
}

} // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"tensor-schedule obfuscation workbench: tune, trace, attack, score"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "emit an MGF model from a builtin generator");
    std::string gen_family;
    int gen_scale = 2;
    uint64_t gen_seed = 0;
    std::string gen_out;
    gen->add_option("--family", gen_family, "model family")->required();
    gen->add_option("--scale", gen_scale, "family scale (1..4)");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--out", gen_out, "output MGF path")->required();

    // compile
    auto* compile = app.add_subcommand("compile", "tune a model and emit its schedule assignment");
    std::string compile_model, compile_out, compile_log, compile_device;
    int compile_trials = 0;
    uint64_t compile_seed = 0;
    compile->add_option("--model", compile_model, "MGF model path")->required();
    compile->add_option("--trials", compile_trials, "tuning budget per workload")->required();
    compile->add_option("--seed", compile_seed, "tuner seed");
    compile->add_option("--out", compile_out, "output schedule JSON path")->required();
    compile->add_option("--log", compile_log, "optional tuning log (JSON lines)");
    compile->add_option("--device", compile_device, "device profile JSON path");

    // profile
    auto* profile = app.add_subcommand("profile", "simulate inference and emit a trace CSV");
    std::string profile_model, profile_schedules, profile_device, profile_out;
    double profile_sigma = 0.0;
    uint64_t profile_seed = 0;
    profile->add_option("--model", profile_model, "MGF model path")->required();
    profile->add_option("--schedules", profile_schedules, "schedule JSON path")->required();
    profile->add_option("--sigma", profile_sigma, "observation noise sigma");
    profile->add_option("--seed", profile_seed, "noise seed");
    profile->add_option("--device", profile_device, "device profile JSON path");
    profile->add_option("--out", profile_out, "output trace CSV path")->required();

    // buildb
    auto* buildb = app.add_subcommand("buildb", "build a signature database from corpus models");
    std::vector<std::string> buildb_models;
    double buildb_sigma = 0.05;
    int buildb_seeds = 8;
    uint64_t buildb_seed = 100;
    std::string buildb_device, buildb_out;
    buildb->add_option("--model", buildb_models, "corpus MGF paths")->required();
    buildb->add_option("--sigma", buildb_sigma, "observation noise sigma");
    buildb->add_option("--seeds", buildb_seeds, "noise seeds per corpus graph");
    buildb->add_option("--seed", buildb_seed, "first noise seed");
    buildb->add_option("--device", buildb_device, "device profile JSON path");
    buildb->add_option("--out", buildb_out, "output DB JSON path")->required();

    // attack
    auto* attack_cmd = app.add_subcommand("attack", "predict an architecture from a trace");
    std::string attack_trace, attack_db, attack_model, attack_out;
    attack_cmd->add_option("--trace", attack_trace, "trace CSV path")->required();
    attack_cmd->add_option("--db", attack_db, "signature DB JSON path")->required();
    attack_cmd->add_option("--model", attack_model, "ground-truth MGF path (adds fidelity)");
    attack_cmd->add_option("--out", attack_out, "output prediction JSON path")->required();

    // sweep
    auto* sweep = app.add_subcommand("sweep", "run a full trials sweep from a config file");
    std::string sweep_config, sweep_out;
    sweep->add_option("--config", sweep_config, "experiment config JSON path")->required();
    sweep->add_option("--out", sweep_out, "output directory (overrides config)");

    // calibrate
    auto* calibrate = app.add_subcommand(
        "calibrate", "scan sigma/lambda operating points for the default config");
    int calibrate_trials = 512;
    calibrate->add_option("--trials", calibrate_trials, "high end of the trials axis");

    try {
        app.parse(argc, const_cast<char**>(argv));
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e, std::cout, std::cerr);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) {
            auto graph = generate_model(parse_family(gen_family), gen_scale, gen_seed);
            spit(gen_out, save_model(graph));
        } else if (compile->parsed()) {
            auto graph = load_model(slurp(compile_model));
            TunerConfig tcfg;
            tcfg.trials = compile_trials;
            tcfg.seed = compile_seed;
            auto tuned = tune_model(graph, device_from(compile_device), tcfg);
            spit(compile_out, save_schedules(tuned.schedules));
            if (!compile_log.empty()) spit(compile_log, tuning_log_jsonl(tuned));
        } else if (profile->parsed()) {
            auto graph = load_model(slurp(profile_model));
            auto schedules = load_schedules(slurp(profile_schedules));
            auto compiled = lower(graph, schedules);
            Trace t = run_inference(compiled, device_from(profile_device), profile_sigma,
                                    profile_seed);
            spit(profile_out, export_trace_csv(t));
        } else if (buildb->parsed()) {
            std::vector<ModelGraph> corpus;
            for (const auto& path : buildb_models) corpus.push_back(load_model(slurp(path)));
            if (buildb_seeds < 1) throw ValidationError("--seeds must be >= 1");
            std::vector<uint64_t> seeds;
            for (int i = 0; i < buildb_seeds; ++i) seeds.push_back(buildb_seed + i);
            auto db = build_signature_db(corpus, device_from(buildb_device), buildb_sigma,
                                         seeds);
            spit(buildb_out, save_signature_db(db));
        } else if (attack_cmd->parsed()) {
            Trace t = parse_trace_csv(slurp(attack_trace));
            auto db = load_signature_db(slurp(attack_db));
            auto pred = predict_architecture(attacker_view(t), db);
            std::optional<FidelityScore> score;
            if (!attack_model.empty())
                score = fidelity(pred, load_model(slurp(attack_model)));
            spit(attack_out, save_prediction(pred, score));
        } else if (sweep->parsed()) {
            auto cfg = load_experiment_config(slurp(sweep_config));
            if (!sweep_out.empty()) cfg.out_dir = sweep_out;
            auto result = run_sweep(cfg);
            report(result, cfg.out_dir);
            std::printf("wrote %zu rows under %s\n", result.rows.size(),
                        cfg.out_dir.c_str());
            for (const auto& flag : result.overlap_flags)
                std::printf("note: victim '%s' also appears in the corpus\n", flag.c_str());
        } else if (calibrate->parsed()) {
            return cmd_calibrate(calibrate_trials);
        }
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 2;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

} // namespace kernleak
