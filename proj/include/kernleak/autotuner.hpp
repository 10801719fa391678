#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "kernleak/perfsim.hpp"
#include "kernleak/schedule.hpp"

// Simulated-annealing schedule search with an online pairwise-ranking
// surrogate. A "trial" is one simulated measurement of a candidate
// schedule; the budget is spent per deduplicated workload. The search
// is deterministic in (workload, config seed).

namespace kernleak {

struct TunerConfig {
    int trials = 0;        // measurement budget per workload
    int batch_size = 8;    // candidates proposed per round
    double initial_temperature = 0.25;  // fraction of the default-schedule cost
    double cooling_rate = 0.98;
    int surrogate_warmup = 16;  // measurements before the ranker orders candidates
    uint64_t seed = 0;
};

// Schedule feature vector: log2 of the six numeric knobs, then
// log1p(flops) and log1p(ideal bytes moved) of the workload, where
// ideal bytes = ideal read bytes + output bytes.
inline constexpr int kFeatureDims = 8;
using FeatureVec = std::array<double, kFeatureDims>;

FeatureVec featurize(const Schedule& s, const Workload& w);

struct Measurement {
    Schedule schedule;
    double cost_ns = 0;
    double best_cost_ns = 0;  // best seen up to and including this trial
    double temperature = 0;   // temperature when measured
};

struct TunerState {
    Schedule best_schedule;
    double best_cost_ns = 0;
    int trials_used = 0;
    double temperature = 0;
    std::vector<Measurement> history;  // measured candidates, baseline excluded
    FeatureVec ranker_weights{};       // pairwise-rank perceptron weights
};

inline constexpr double kRankerLearningRate = 0.05;

// Perceptron step on one measured pair: when the current weights score
// the cheaper schedule at or below the costlier one, move the weights
// by eta * (f_cheap - f_costly). Equal costs never update.
void rank_update(TunerState& state, const FeatureVec& a_features, double a_cost,
                 const FeatureVec& b_features, double b_cost);

using CostOracle = std::function<double(const Schedule&)>;

// Search within an explicit knob space (tests restrict it); the default
// schedule must be a member.
std::pair<Schedule, TunerState> tune_workload_in_space(const Workload& w,
                                                       const KnobSpace& space,
                                                       const CostOracle& oracle,
                                                       const TunerConfig& cfg);

std::pair<Schedule, TunerState> tune_workload(const Workload& w,
                                              const CostOracle& oracle,
                                              const TunerConfig& cfg);

// Noise-free tuning cost of one workload lowered in isolation.
double workload_cost_ns(const Workload& w, const Schedule& s, const DeviceProfile& d);

struct ModelTuneResult {
    ScheduleMap schedules;
    std::map<std::string, TunerState> states;  // by workload key
};

// Deduplicate workloads and tune each with budget cfg.trials and a
// sub-seed derived from (cfg.seed, workload key).
ModelTuneResult tune_model(const ModelGraph& graph, const DeviceProfile& d,
                           const TunerConfig& cfg);

// JSON-lines tuning log: one record per trial per workload.
std::string tuning_log_jsonl(const ModelTuneResult& result);

} // namespace kernleak
