#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kernleak/attack.hpp"
#include "kernleak/autotuner.hpp"
#include "kernleak/model_ir.hpp"
#include "kernleak/perfsim.hpp"

// Experiment orchestration: run the trials sweep over victim models,
// aggregate attack fidelity and simulated latency across seeds, and emit
// CSV tables and self-contained SVG plots. The whole sweep is a pure
// function of the config, so reruns reproduce every output byte.

namespace kernleak {

struct ModelSpec {
    // Either a builtin generator...
    std::optional<ModelFamily> family;
    int scale = 2;
    uint64_t gen_seed = 0;
    // ...or an MGF file.
    std::optional<std::string> path;

    std::string label() const;
    ModelGraph build() const;
};

struct CorpusSpec {
    std::vector<ModelSpec> graphs;
    std::vector<uint64_t> noise_seeds;
};

struct ExperimentConfig {
    uint64_t seed = 1;  // master seed; all cell sub-seeds derive from it
    std::vector<ModelSpec> models;
    std::vector<int> trial_grid;   // ascending, starts at 0
    std::vector<uint64_t> seeds;   // replication seeds
    double noise_sigma = 0.05;
    std::string device_profile;    // empty = builtin a100-like, else a JSON path
    CorpusSpec corpus;
    std::string out_dir = "out";
    TunerConfig tuner;             // trials/seed filled per cell
};

// The configuration the acceptance experiments run with: the four
// builtin families as victims, a conv-family corpus, sigma = 0.05,
// trial grid 0,1,2,4,...,512, five replication seeds.
ExperimentConfig default_experiment_config();

ExperimentConfig load_experiment_config(std::string_view bytes);
std::string save_experiment_config(const ExperimentConfig& cfg);

struct SweepRow {
    std::string model;
    int trials = 0;
    double mean_fidelity = 0;
    double min_fidelity = 0;
    double max_fidelity = 0;
    double mean_unknown_fraction = 0;
    double mean_latency_ns = 0;
    double rel_fidelity_change = 0;  // vs the trials = 0 row of the same model
    double rel_latency_change = 0;
};

struct SweepResult {
    std::vector<SweepRow> rows;  // model-major, trials ascending
    std::vector<std::string> overlap_flags;  // victims whose graph is in the corpus
};

// Full pipeline per (model, trials, seed) cell: tune, lower, trace,
// attack, score. Writes models/, db.json, metadata.json and per-cell
// schedules/trace/prediction files under cfg.out_dir.
SweepResult run_sweep(const ExperimentConfig& cfg);

// sweep.csv + fidelity_vs_trials.svg + latency_vs_trials.svg.
void report(const SweepResult& result, const std::string& out_dir);

std::string sweep_csv(const SweepResult& result);
std::string fidelity_svg(const SweepResult& result);
std::string latency_svg(const SweepResult& result);

// Sub-seed derivations shared by the sweep and the CLI stages, so the
// file-based pipeline reproduces in-process cells exactly.
uint64_t cell_tuner_seed(const ExperimentConfig& cfg, const std::string& label,
                         int trials, uint64_t seed);
uint64_t cell_noise_seed(const ExperimentConfig& cfg, const std::string& label,
                         int trials, uint64_t seed);

// Command-line entry point (subcommands: gen, compile, profile, buildb,
// attack, sweep, calibrate). Returns 0 on success, 1 on validation or
// usage errors, 2 on I/O errors.
int run_cli(int argc, const char* const* argv);

} // namespace kernleak
