#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kernleak/model_ir.hpp"
#include "kernleak/rng.hpp"

// Tuning-knob spaces per deduplicated workload, and lowering of
// (graph, schedule assignment) into a concrete kernel sequence. Lowering
// is where a schedule becomes observable: fusion and split-K change the
// kernel count, tiling changes the memory traffic.

namespace kernleak {

// A deduplicated tuning task: two nodes with identical
// (op kind, canonical attrs, input/output shapes) share one Workload.
struct Workload {
    OpKind op = OpKind::conv2d;
    AttrMap attrs;
    std::vector<TensorShape> input_shapes;
    TensorShape output_shape;

    // Canonical string key; used to index schedule assignments.
    std::string key() const;

    // Loop extents seen by the tiling knobs. Non-reduction ops expose a
    // flat M = output elements with N = K = 1.
    struct Extents {
        int64_t m = 1, n = 1, k = 1;
        bool has_reduction = false;
    };
    Extents extents() const;

    // Work model: total flops and the operand byte list. For reduction
    // ops the first operand is the M-side tensor and the second the
    // N-side tensor (weights or the right-hand matrix).
    int64_t flops() const;
    struct Operand {
        int64_t bytes = 0;
        enum class Side { none, m_side, n_side } side = Side::none;
    };
    std::vector<Operand> operands() const;
    int64_t ideal_read_bytes() const;
    int64_t output_bytes() const { return output_shape.byte_size(); }

    bool operator==(const Workload& other) const { return key() == other.key(); }
};

// Build the workload of one node (graph must be shape-inferred).
Workload workload_of(const ModelGraph& graph, const OperatorNode& node);

// Distinct workloads of a graph, in first-occurrence topological order.
std::vector<Workload> distinct_workloads(const ModelGraph& graph);

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

struct Schedule {
    int64_t tile_m = 1;
    int64_t tile_n = 1;
    int64_t tile_k = 1;
    int64_t unroll = 1;        // {1,2,4,8}
    int64_t vector_width = 1;  // {1,2,4}
    int64_t split_k = 1;       // {1,2,4}; >1 only for reduction ops
    bool fuse_epilogue = false;

    bool operator==(const Schedule&) const = default;
    std::string to_string() const;
};

inline constexpr int kKnobCount = 7;

// Enumerable space descriptor: knob names with their ordered legal
// values. Total size is the product of the value-set sizes.
struct KnobSpace {
    struct Knob {
        std::string name;
        std::vector<int64_t> values;  // ordered; fuse_epilogue uses {0,1}
    };
    std::vector<Knob> knobs;  // fixed order: tile_m..fuse_epilogue

    uint64_t size() const;
    Schedule member(uint64_t index) const;  // mixed-radix decode
    bool contains(const Schedule& s) const;
};

int64_t get_knob(const Schedule& s, int knob_index);
void set_knob(Schedule& s, int knob_index, int64_t value);

// Library-default baseline: deterministic, seed-independent, no fusion,
// no split-K, largest legal tile <= 16, unroll = vector = 1.
Schedule default_schedule(const Workload& w);

KnobSpace schedule_space(const Workload& w);

// One-step neighborhood move: exactly one knob steps to an adjacent
// value in its ordered list (boundaries force the inward direction).
Schedule mutate(const Schedule& s, const Workload& w, SplitMix64& rng);
Schedule mutate_in_space(const Schedule& s, const KnobSpace& space, SplitMix64& rng);

// ---------------------------------------------------------------------------
// Lowered kernels
// ---------------------------------------------------------------------------

struct Kernel {
    std::string name;  // content hash of (workload, schedule, role); leaks no op identity
    std::vector<std::string> op_ids;  // length > 1 when an epilogue was fused in
    enum class Role { main, reduce_partials };
    Role role = Role::main;

    // Work descriptor consumed by the hardware model.
    int64_t flops = 0;
    int64_t ideal_read_bytes = 0;
    int64_t actual_read_bytes = 0;  // >= ideal (tiling redundancy)
    int64_t write_bytes = 0;
    int64_t input_bytes = 0;
    int64_t output_bytes = 0;
    double time_efficiency = 1.0;  // from unroll/vector knobs; see perfsim
};

struct CompiledModel {
    std::string graph_name;
    std::vector<Kernel> kernels;
    std::map<std::string, Schedule> schedules;  // assignment used, by workload key
};

using ScheduleMap = std::map<std::string, Schedule>;

// Default assignment for every distinct workload of a graph.
ScheduleMap default_schedules(const ModelGraph& graph);

// Work-time multiplier from the unroll/vectorization knobs: 1.0 at the
// naive point (unroll = 1, vector = 1), falling linearly in log2 steps
// to 0.55 at the modeled sweet spot (unroll = 8, vector = 4).
double time_efficiency_factor(int64_t unroll, int64_t vector_width);

// Lower one workload in isolation: the main kernel plus, when
// split_k > 1, the partial-sum reduction kernel that follows it.
std::vector<Kernel> lower_node(const Workload& w, const Schedule& s);

// Lower a whole graph under a schedule assignment. Per node in
// topological order: one main kernel (+ reduce kernel under split-K);
// an elementwise node (relu, single-input add, batch_norm) whose
// producer has it as unique consumer is absorbed into the producer's
// kernel when its own schedule sets fuse_epilogue, deleting the
// intermediate write/read. Fusion does not cross a split-K boundary.
CompiledModel lower(const ModelGraph& graph, const ScheduleMap& schedules);

// Partition check: op_ids of main kernels cover the node set exactly.
void validate(const CompiledModel& compiled, const ModelGraph& graph);

std::string save_schedules(const ScheduleMap& schedules);
ScheduleMap load_schedules(std::string_view bytes);

} // namespace kernleak
