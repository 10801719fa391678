#include "kernleak/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_map>

#include "json.hpp"

namespace kernleak {

using nlohmann::json;

namespace {

int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

int64_t next_pow2(int64_t v) {
    int64_t p = 1;
    while (p < v) p <<= 1;
    return p;
}

int64_t attr_i(const AttrMap& attrs, const std::string& key) {
    return std::get<int64_t>(attrs.at(key));
}

std::vector<int64_t> attr_v(const AttrMap& attrs, const std::string& key) {
    return std::get<std::vector<int64_t>>(attrs.at(key));
}

std::string attr_value_str(const AttrValue& v) {
    if (const auto* i = std::get_if<int64_t>(&v)) return std::to_string(*i);
    if (const auto* s = std::get_if<std::string>(&v)) return *s;
    const auto& vec = std::get<std::vector<int64_t>>(v);
    std::string out;
    for (size_t i = 0; i < vec.size(); ++i) {
        if (i) out += 'x';
        out += std::to_string(vec[i]);
    }
    return out;
}

bool is_reduction(OpKind op) {
    return op == OpKind::conv2d || op == OpKind::dense || op == OpKind::attention_matmul;
}

} // namespace

// ---------------------------------------------------------------------------
// Workload
// ---------------------------------------------------------------------------

std::string Workload::key() const {
    std::string k = to_string(op);
    for (const auto& [name, value] : attrs) {
        k += ' ';
        k += name;
        k += '=';
        k += attr_value_str(value);
    }
    k += " in=";
    for (size_t i = 0; i < input_shapes.size(); ++i) {
        if (i) k += ',';
        k += input_shapes[i].to_string();
    }
    k += " out=" + output_shape.to_string();
    return k;
}

Workload::Extents Workload::extents() const {
    Extents e;
    const auto& in0 = input_shapes.at(0);
    switch (op) {
        case OpKind::conv2d: {
            e.m = output_shape.dims[0] * output_shape.dims[1] * output_shape.dims[2];
            e.n = output_shape.dims[3];
            auto kernel = attr_v(attrs, "kernel");
            e.k = kernel[0] * kernel[1] * in0.dims[3];
            e.has_reduction = true;
            break;
        }
        case OpKind::dense: {
            e.m = in0.elements() / in0.dims.back();
            e.n = attr_i(attrs, "units");
            e.k = in0.dims.back();
            e.has_reduction = true;
            break;
        }
        case OpKind::attention_matmul: {
            e.m = in0.elements() / in0.dims.back();
            e.n = output_shape.dims.back();
            e.k = in0.dims.back();
            e.has_reduction = true;
            break;
        }
        default:
            e.m = output_shape.elements();
            e.n = 1;
            e.k = 1;
            e.has_reduction = false;
            break;
    }
    return e;
}

int64_t Workload::flops() const {
    int64_t out_elems = output_shape.elements();
    switch (op) {
        case OpKind::conv2d:
        case OpKind::dense:
        case OpKind::attention_matmul: {
            auto e = extents();
            return 2 * e.m * e.n * e.k;
        }
        case OpKind::relu:       return out_elems;
        case OpKind::add:        return out_elems * std::max<int64_t>(1, static_cast<int64_t>(input_shapes.size()) - 1);
        case OpKind::batch_norm: return 2 * out_elems;
        case OpKind::layer_norm: return 6 * out_elems;
        case OpKind::softmax:    return 5 * out_elems;
        case OpKind::pool_max:
        case OpKind::pool_avg: {
            auto kernel = attr_v(attrs, "kernel");
            return kernel[0] * kernel[1] * out_elems;
        }
        case OpKind::concat:
        case OpKind::embedding_lookup:
            return 0;
    }
    return 0;
}

std::vector<Workload::Operand> Workload::operands() const {
    using Side = Operand::Side;
    const auto& in0 = input_shapes.at(0);
    switch (op) {
        case OpKind::conv2d: {
            auto kernel = attr_v(attrs, "kernel");
            int64_t weights = kernel[0] * kernel[1] * in0.dims[3] *
                              attr_i(attrs, "out_channels") * in0.dtype_bytes;
            return {{in0.byte_size(), Side::m_side}, {weights, Side::n_side}};
        }
        case OpKind::dense: {
            int64_t weights = in0.dims.back() * attr_i(attrs, "units") * in0.dtype_bytes;
            return {{in0.byte_size(), Side::m_side}, {weights, Side::n_side}};
        }
        case OpKind::attention_matmul:
            return {{in0.byte_size(), Side::m_side},
                    {input_shapes.at(1).byte_size(), Side::n_side}};
        case OpKind::batch_norm:
            // running mean/var + scale/shift: 4 vectors over the channel dim
            return {{in0.byte_size(), Side::none},
                    {4 * in0.dims.back() * in0.dtype_bytes, Side::none}};
        case OpKind::layer_norm:
            return {{in0.byte_size(), Side::none},
                    {2 * in0.dims.back() * in0.dtype_bytes, Side::none}};
        case OpKind::add: {
            std::vector<Operand> ops;
            for (const auto& s : input_shapes) ops.push_back({s.byte_size(), Side::none});
            if (input_shapes.size() == 1)  // bias-style add: constant vector operand
                ops.push_back({in0.dims.back() * in0.dtype_bytes, Side::none});
            return ops;
        }
        case OpKind::embedding_lookup:
            // index tensor plus the gathered rows
            return {{in0.byte_size(), Side::none}, {output_shape.byte_size(), Side::none}};
        default: {
            std::vector<Operand> ops;
            for (const auto& s : input_shapes) ops.push_back({s.byte_size(), Side::none});
            return ops;
        }
    }
}

int64_t Workload::ideal_read_bytes() const {
    int64_t total = 0;
    for (const auto& o : operands()) total += o.bytes;
    return total;
}

Workload workload_of(const ModelGraph& graph, const OperatorNode& node) {
    std::unordered_map<std::string, const TensorShape*> shapes;
    for (const auto& gi : graph.inputs) shapes[gi.id] = &gi.shape;
    for (const auto& n : graph.nodes)
        if (n.output_shape) shapes[n.id] = &*n.output_shape;

    Workload w;
    w.op = node.op;
    w.attrs = node.attrs;
    for (const auto& in : node.inputs) w.input_shapes.push_back(*shapes.at(in));
    if (!node.output_shape)
        throw ValidationError("node '" + node.id + "': shapes not inferred");
    w.output_shape = *node.output_shape;
    return w;
}

std::vector<Workload> distinct_workloads(const ModelGraph& graph) {
    std::vector<Workload> out;
    std::unordered_map<std::string, bool> seen;
    for (size_t i : topo_order(graph)) {
        Workload w = workload_of(graph, graph.nodes[i]);
        auto key = w.key();
        if (!seen[key]) {
            seen[key] = true;
            out.push_back(std::move(w));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Knob spaces
// ---------------------------------------------------------------------------

std::string Schedule::to_string() const {
    std::string s = "tm" + std::to_string(tile_m) + " tn" + std::to_string(tile_n) +
                    " tk" + std::to_string(tile_k) + " u" + std::to_string(unroll) +
                    " v" + std::to_string(vector_width) + " sk" + std::to_string(split_k) +
                    (fuse_epilogue ? " fuse" : " nofuse");
    return s;
}

int64_t get_knob(const Schedule& s, int knob_index) {
    switch (knob_index) {
        case 0: return s.tile_m;
        case 1: return s.tile_n;
        case 2: return s.tile_k;
        case 3: return s.unroll;
        case 4: return s.vector_width;
        case 5: return s.split_k;
        case 6: return s.fuse_epilogue ? 1 : 0;
    }
    throw ValidationError("knob index out of range");
}

void set_knob(Schedule& s, int knob_index, int64_t value) {
    switch (knob_index) {
        case 0: s.tile_m = value; return;
        case 1: s.tile_n = value; return;
        case 2: s.tile_k = value; return;
        case 3: s.unroll = value; return;
        case 4: s.vector_width = value; return;
        case 5: s.split_k = value; return;
        case 6: s.fuse_epilogue = value != 0; return;
    }
    throw ValidationError("knob index out of range");
}

uint64_t KnobSpace::size() const {
    uint64_t n = 1;
    for (const auto& k : knobs) n *= k.values.size();
    return n;
}

Schedule KnobSpace::member(uint64_t index) const {
    Schedule s;
    for (int i = 0; i < kKnobCount; ++i) {
        uint64_t radix = knobs[i].values.size();
        set_knob(s, i, knobs[i].values[index % radix]);
        index /= radix;
    }
    return s;
}

bool KnobSpace::contains(const Schedule& s) const {
    for (int i = 0; i < kKnobCount; ++i) {
        const auto& vals = knobs[i].values;
        if (std::find(vals.begin(), vals.end(), get_knob(s, i)) == vals.end())
            return false;
    }
    return true;
}

namespace {

std::vector<int64_t> tile_values(int64_t extent) {
    std::vector<int64_t> vals;
    for (int64_t t = 1; t <= next_pow2(extent); t <<= 1) vals.push_back(t);
    return vals;
}

} // namespace

KnobSpace schedule_space(const Workload& w) {
    auto e = w.extents();
    KnobSpace space;
    space.knobs = {
        {"tile_m", tile_values(e.m)},
        {"tile_n", tile_values(e.n)},
        {"tile_k", tile_values(e.k)},
        {"unroll", {1, 2, 4, 8}},
        {"vector_width", {1, 2, 4}},
        {"split_k", e.has_reduction ? std::vector<int64_t>{1, 2, 4} : std::vector<int64_t>{1}},
        {"fuse_epilogue", {0, 1}},
    };
    return space;
}

Schedule default_schedule(const Workload& w) {
    auto e = w.extents();
    Schedule s;
    s.tile_m = std::min<int64_t>(16, next_pow2(e.m));
    s.tile_n = std::min<int64_t>(16, next_pow2(e.n));
    s.tile_k = std::min<int64_t>(16, next_pow2(e.k));
    return s;
}

Schedule mutate_in_space(const Schedule& s, const KnobSpace& space, SplitMix64& rng) {
    std::vector<int> movable;
    for (int i = 0; i < kKnobCount; ++i)
        if (space.knobs[i].values.size() > 1) movable.push_back(i);
    if (movable.empty()) return s;

    int knob = movable[rng.next_below(movable.size())];
    const auto& vals = space.knobs[knob].values;
    auto it = std::find(vals.begin(), vals.end(), get_knob(s, knob));
    if (it == vals.end())
        throw ValidationError("schedule outside its space: " + s.to_string());
    size_t pos = static_cast<size_t>(it - vals.begin());

    size_t next;
    if (pos == 0)
        next = 1;
    else if (pos == vals.size() - 1)
        next = pos - 1;
    else
        next = rng.next_below(2) ? pos + 1 : pos - 1;

    Schedule out = s;
    set_knob(out, knob, vals[next]);
    return out;
}

Schedule mutate(const Schedule& s, const Workload& w, SplitMix64& rng) {
    return mutate_in_space(s, schedule_space(w), rng);
}

// ---------------------------------------------------------------------------
// Lowering
// ---------------------------------------------------------------------------

namespace {

std::string mangle(const Workload& w, const Schedule& s, Kernel::Role role) {
    uint64_t h = stable_hash64(w.key() + "|" + s.to_string() + "|" +
                               (role == Kernel::Role::main ? "m" : "r"));
    char buf[20];
    std::snprintf(buf, sizeof(buf), "k%016llx", static_cast<unsigned long long>(h));
    return buf;
}

double log2i(int64_t v) {
    int lg = 0;
    while ((int64_t{1} << lg) < v) ++lg;
    return static_cast<double>(lg);
}

} // namespace

double time_efficiency_factor(int64_t unroll, int64_t vector_width) {
    // Proximity to the sweet spot, 0 at the far corner and 1 on target.
    double pu = 1.0 - std::min(std::abs(log2i(unroll) - 3.0), 3.0) / 3.0;
    double pv = 1.0 - std::min(std::abs(log2i(vector_width) - 2.0), 2.0) / 2.0;
    return 1.0 - 0.25 * pu - 0.20 * pv;
}

std::vector<Kernel> lower_node(const Workload& w, const Schedule& s) {
    auto e = w.extents();
    Kernel main;
    main.name = mangle(w, s, Kernel::Role::main);
    main.role = Kernel::Role::main;
    main.flops = w.flops();
    main.ideal_read_bytes = w.ideal_read_bytes();

    int64_t actual = 0;
    for (const auto& o : w.operands()) {
        int64_t redundancy = 1;
        if (o.side == Workload::Operand::Side::m_side)
            redundancy = ceil_div(e.n, s.tile_n);
        else if (o.side == Workload::Operand::Side::n_side)
            redundancy = ceil_div(e.m, s.tile_m);
        actual += o.bytes * redundancy;
    }
    main.actual_read_bytes = actual;
    main.input_bytes = main.ideal_read_bytes;
    main.output_bytes = w.output_bytes();
    main.write_bytes = w.output_bytes() * s.split_k;  // partial results under split-K
    main.time_efficiency = time_efficiency_factor(s.unroll, s.vector_width);

    std::vector<Kernel> kernels{main};
    if (s.split_k > 1) {
        Kernel reduce;
        reduce.name = mangle(w, s, Kernel::Role::reduce_partials);
        reduce.role = Kernel::Role::reduce_partials;
        reduce.flops = (s.split_k - 1) * w.output_shape.elements();
        reduce.ideal_read_bytes = w.output_bytes() * s.split_k;
        reduce.actual_read_bytes = reduce.ideal_read_bytes;
        reduce.input_bytes = reduce.ideal_read_bytes;
        reduce.write_bytes = w.output_bytes();
        reduce.output_bytes = w.output_bytes();
        kernels.push_back(reduce);
    }
    return kernels;
}

namespace {

// Epilogue kinds that can be absorbed into their producer's kernel.
bool fusible_epilogue(const OperatorNode& n) {
    switch (n.op) {
        case OpKind::relu:
        case OpKind::batch_norm:
            return true;
        case OpKind::add:
            return n.inputs.size() == 1;  // bias-style add only
        default:
            return false;
    }
}

} // namespace

CompiledModel lower(const ModelGraph& graph, const ScheduleMap& schedules) {
    auto order = topo_order(graph);

    std::unordered_map<std::string, size_t> node_index;
    for (size_t i = 0; i < graph.nodes.size(); ++i) node_index[graph.nodes[i].id] = i;

    std::unordered_map<std::string, int> distinct_consumers;
    for (const auto& n : graph.nodes) {
        std::vector<std::string> seen;
        for (const auto& in : n.inputs) {
            if (!node_index.count(in)) continue;
            if (std::find(seen.begin(), seen.end(), in) == seen.end()) {
                seen.push_back(in);
                ++distinct_consumers[in];
            }
        }
    }

    CompiledModel out;
    out.graph_name = graph.name;
    std::unordered_map<std::string, size_t> kernel_of;  // node id -> kernel index

    auto schedule_for = [&](const Workload& w) -> const Schedule& {
        auto it = schedules.find(w.key());
        if (it == schedules.end())
            throw ValidationError("missing schedule for workload '" + w.key() + "'");
        return it->second;
    };

    for (size_t idx : order) {
        const auto& node = graph.nodes[idx];
        Workload w = workload_of(graph, node);
        const Schedule& sched = schedule_for(w);
        out.schedules[w.key()] = sched;

        // Try to absorb this node into its producer's kernel.
        if (fusible_epilogue(node) && sched.fuse_epilogue &&
            node.inputs.size() == 1 && node_index.count(node.inputs[0])) {
            const auto& producer = graph.nodes[node_index.at(node.inputs[0])];
            Workload pw = workload_of(graph, producer);
            if (distinct_consumers[producer.id] == 1 &&
                schedule_for(pw).split_k == 1) {
                Kernel& k = out.kernels[kernel_of.at(producer.id)];
                int64_t intermediate = producer.output_shape->byte_size();
                int64_t extra_reads = w.ideal_read_bytes() - intermediate;
                k.flops += w.flops();
                k.ideal_read_bytes += extra_reads;
                k.actual_read_bytes += extra_reads;
                k.input_bytes += extra_reads;
                k.write_bytes = w.output_bytes();
                k.output_bytes = w.output_bytes();
                k.op_ids.push_back(node.id);
                kernel_of[node.id] = kernel_of.at(producer.id);
                continue;
            }
        }

        auto kernels = lower_node(w, sched);
        kernels[0].op_ids = {node.id};
        kernel_of[node.id] = out.kernels.size();
        for (auto& k : kernels) {
            if (k.role == Kernel::Role::reduce_partials) k.op_ids = {node.id};
            out.kernels.push_back(std::move(k));
        }
    }
    return out;
}

void validate(const CompiledModel& compiled, const ModelGraph& graph) {
    std::map<std::string, int> owned;
    for (const auto& k : compiled.kernels) {
        if (k.op_ids.empty())
            throw ValidationError("kernel '" + k.name + "' owns no ops");
        if (k.actual_read_bytes < k.ideal_read_bytes)
            throw ValidationError("kernel '" + k.name + "' reads less than ideal");
        if (k.flops < 0)
            throw ValidationError("kernel '" + k.name + "' has negative flops");
        if (k.role == Kernel::Role::main)
            for (const auto& id : k.op_ids) ++owned[id];
    }
    for (const auto& n : graph.nodes) {
        auto it = owned.find(n.id);
        if (it == owned.end())
            throw ValidationError("node '" + n.id + "' was never lowered");
        if (it->second != 1)
            throw ValidationError("node '" + n.id + "' lowered more than once");
        owned.erase(it);
    }
    if (!owned.empty())
        throw ValidationError("kernel owns unknown node '" + owned.begin()->first + "'");
}

ScheduleMap default_schedules(const ModelGraph& graph) {
    ScheduleMap out;
    for (const auto& w : distinct_workloads(graph)) out[w.key()] = default_schedule(w);
    return out;
}

// ---------------------------------------------------------------------------
// Schedule assignment serialization
// ---------------------------------------------------------------------------

namespace {

json schedule_to_json(const Schedule& s) {
    json j;
    j["tile_m"] = s.tile_m;
    j["tile_n"] = s.tile_n;
    j["tile_k"] = s.tile_k;
    j["unroll"] = s.unroll;
    j["vector_width"] = s.vector_width;
    j["split_k"] = s.split_k;
    j["fuse_epilogue"] = s.fuse_epilogue;
    return j;
}

Schedule schedule_from_json(const json& j) {
    Schedule s;
    s.tile_m = j.at("tile_m").get<int64_t>();
    s.tile_n = j.at("tile_n").get<int64_t>();
    s.tile_k = j.at("tile_k").get<int64_t>();
    s.unroll = j.at("unroll").get<int64_t>();
    s.vector_width = j.at("vector_width").get<int64_t>();
    s.split_k = j.at("split_k").get<int64_t>();
    s.fuse_epilogue = j.at("fuse_epilogue").get<bool>();
    return s;
}

} // namespace

std::string save_schedules(const ScheduleMap& schedules) {
    json doc = json::object();
    for (const auto& [key, s] : schedules) doc[key] = schedule_to_json(s);
    return doc.dump(2) + "\n";
}

ScheduleMap load_schedules(std::string_view bytes) {
    json doc;
    try {
        doc = json::parse(bytes);
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad schedule document: ") + e.what());
    }
    if (!doc.is_object()) throw ParseError("schedule document must be a JSON object");
    ScheduleMap out;
    try {
        for (const auto& [key, j] : doc.items()) out[key] = schedule_from_json(j);
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad schedule record: ") + e.what());
    }
    return out;
}

} // namespace kernleak
