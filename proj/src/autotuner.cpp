#include "kernleak/autotuner.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "kernleak/rng.hpp"

namespace kernleak {

using nlohmann::json;

namespace {

double log2_pow2(int64_t v) {
    int lg = 0;
    while ((int64_t{1} << lg) < v) ++lg;
    return static_cast<double>(lg);
}

void check_config(const TunerConfig& cfg) {
    if (cfg.trials < 0) throw ValidationError("trials must be >= 0");
    if (cfg.batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (cfg.initial_temperature <= 0)
        throw ValidationError("initial_temperature must be > 0");
    if (cfg.cooling_rate <= 0 || cfg.cooling_rate >= 1)
        throw ValidationError("cooling_rate must be in (0, 1)");
}

double score(const FeatureVec& weights, const FeatureVec& f) {
    double s = 0;
    for (int i = 0; i < kFeatureDims; ++i) s += weights[i] * f[i];
    return s;
}

} // namespace

FeatureVec featurize(const Schedule& s, const Workload& w) {
    return {log2_pow2(s.tile_m),
            log2_pow2(s.tile_n),
            log2_pow2(s.tile_k),
            log2_pow2(s.unroll),
            log2_pow2(s.vector_width),
            log2_pow2(s.split_k),
            std::log1p(static_cast<double>(w.flops())),
            std::log1p(static_cast<double>(w.ideal_read_bytes() + w.output_bytes()))};
}

void rank_update(TunerState& state, const FeatureVec& a_features, double a_cost,
                 const FeatureVec& b_features, double b_cost) {
    if (a_cost == b_cost) return;
    const FeatureVec& cheap = a_cost < b_cost ? a_features : b_features;
    const FeatureVec& costly = a_cost < b_cost ? b_features : a_features;
    if (score(state.ranker_weights, cheap) <= score(state.ranker_weights, costly))
        for (int i = 0; i < kFeatureDims; ++i)
            state.ranker_weights[i] += kRankerLearningRate * (cheap[i] - costly[i]);
}

std::pair<Schedule, TunerState> tune_workload_in_space(const Workload& w,
                                                       const KnobSpace& space,
                                                       const CostOracle& oracle,
                                                       const TunerConfig& cfg) {
    check_config(cfg);
    Schedule def = default_schedule(w);
    if (!space.contains(def))
        throw ValidationError("default schedule not in search space for '" + w.key() + "'");

    TunerState state;
    double def_cost = oracle(def);
    state.best_schedule = def;
    state.best_cost_ns = def_cost;
    state.temperature = cfg.initial_temperature * def_cost;
    if (cfg.trials == 0) return {def, state};

    SplitMix64 rng(derive_seed(cfg.seed, "sa", w.key()));
    Schedule current = def;
    double current_cost = def_cost;

    // Measurement pool the ranker trains against; the baseline is
    // pairing material but never a counted trial.
    std::vector<std::pair<FeatureVec, double>> measured;
    measured.emplace_back(featurize(def, w), def_cost);

    for (int trial = 0; trial < cfg.trials; ++trial) {
        std::vector<std::pair<Schedule, FeatureVec>> batch;
        batch.reserve(cfg.batch_size);
        for (int c = 0; c < cfg.batch_size; ++c) {
            Schedule cand = mutate_in_space(current, space, rng);
            batch.emplace_back(cand, featurize(cand, w));
        }
        // Before warmup the proposal order stands (weights are zero
        // anyway); afterwards the surrogate picks the round's favorite.
        if (static_cast<int>(state.history.size()) >= cfg.surrogate_warmup)
            std::stable_sort(batch.begin(), batch.end(),
                             [&](const auto& a, const auto& b) {
                                 return score(state.ranker_weights, a.second) >
                                        score(state.ranker_weights, b.second);
                             });

        const Schedule& top = batch.front().first;
        const FeatureVec& top_features = batch.front().second;
        double cost = oracle(top);

        if (cost < state.best_cost_ns) {
            state.best_cost_ns = cost;
            state.best_schedule = top;
        }
        state.history.push_back({top, cost, state.best_cost_ns, state.temperature});

        double u = rng.next_unit();
        bool accept = cost <= current_cost ||
                      u < std::exp(-(cost - current_cost) / state.temperature);
        if (accept) {
            current = top;
            current_cost = cost;
        }

        const auto& opponent = measured[rng.next_below(measured.size())];
        rank_update(state, top_features, cost, opponent.first, opponent.second);
        measured.emplace_back(top_features, cost);

        state.temperature *= cfg.cooling_rate;
    }
    state.trials_used = static_cast<int>(state.history.size());
    return {state.best_schedule, state};
}

std::pair<Schedule, TunerState> tune_workload(const Workload& w,
                                              const CostOracle& oracle,
                                              const TunerConfig& cfg) {
    return tune_workload_in_space(w, schedule_space(w), oracle, cfg);
}

double workload_cost_ns(const Workload& w, const Schedule& s, const DeviceProfile& d) {
    int64_t total = 0;
    for (const auto& k : lower_node(w, s)) total += simulate_kernel(k, d).duration_ns;
    return static_cast<double>(total);
}

ModelTuneResult tune_model(const ModelGraph& graph, const DeviceProfile& d,
                           const TunerConfig& cfg) {
    check_config(cfg);
    ModelTuneResult result;
    for (const auto& w : distinct_workloads(graph)) {
        TunerConfig sub = cfg;
        sub.seed = derive_seed(cfg.seed, "tune", w.key());
        auto oracle = [&](const Schedule& s) { return workload_cost_ns(w, s, d); };
        auto [best, state] = tune_workload(w, oracle, sub);
        result.schedules[w.key()] = best;
        result.states[w.key()] = std::move(state);
    }
    return result;
}

std::string tuning_log_jsonl(const ModelTuneResult& result) {
    std::string out;
    for (const auto& [key, state] : result.states) {
        for (size_t i = 0; i < state.history.size(); ++i) {
            const auto& m = state.history[i];
            json rec;
            rec["workload_key"] = key;
            rec["trial_index"] = i;
            json sj;
            sj["tile_m"] = m.schedule.tile_m;
            sj["tile_n"] = m.schedule.tile_n;
            sj["tile_k"] = m.schedule.tile_k;
            sj["unroll"] = m.schedule.unroll;
            sj["vector_width"] = m.schedule.vector_width;
            sj["split_k"] = m.schedule.split_k;
            sj["fuse_epilogue"] = m.schedule.fuse_epilogue;
            rec["schedule"] = std::move(sj);
            rec["cost_ns"] = m.cost_ns;
            rec["best_cost_ns"] = m.best_cost_ns;
            rec["temperature"] = m.temperature;
            out += rec.dump();
            out += '\n';
        }
    }
    return out;
}

} // namespace kernleak
