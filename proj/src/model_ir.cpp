#include "kernleak/model_ir.hpp"

#include <algorithm>
#include <queue>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace kernleak {

using nlohmann::json;

const char* to_string(OpKind k) {
    switch (k) {
        case OpKind::conv2d:           return "conv2d";
        case OpKind::dense:            return "dense";
        case OpKind::relu:             return "relu";
        case OpKind::add:              return "add";
        case OpKind::concat:           return "concat";
        case OpKind::pool_max:         return "pool_max";
        case OpKind::pool_avg:         return "pool_avg";
        case OpKind::batch_norm:       return "batch_norm";
        case OpKind::softmax:          return "softmax";
        case OpKind::layer_norm:       return "layer_norm";
        case OpKind::attention_matmul: return "attention_matmul";
        case OpKind::embedding_lookup: return "embedding_lookup";
    }
    return "?";
}

std::optional<OpKind> op_kind_from_string(std::string_view s) {
    for (int i = 0; i < kOpKindCount; ++i) {
        OpKind k = static_cast<OpKind>(i);
        if (s == to_string(k)) return k;
    }
    return std::nullopt;
}

const char* to_string(ModelFamily f) {
    switch (f) {
        case ModelFamily::resnet_mini:      return "resnet_mini";
        case ModelFamily::densenet_mini:    return "densenet_mini";
        case ModelFamily::yolo_mini:        return "yolo_mini";
        case ModelFamily::transformer_mini: return "transformer_mini";
    }
    return "?";
}

std::optional<ModelFamily> family_from_string(std::string_view s) {
    for (ModelFamily f : {ModelFamily::resnet_mini, ModelFamily::densenet_mini,
                          ModelFamily::yolo_mini, ModelFamily::transformer_mini}) {
        if (s == to_string(f)) return f;
    }
    return std::nullopt;
}

int64_t TensorShape::elements() const {
    int64_t n = 1;
    for (int64_t d : dims) n *= d;
    return dims.empty() ? 0 : n;
}

std::string TensorShape::to_string() const {
    std::string s;
    for (size_t i = 0; i < dims.size(); ++i) {
        if (i) s += 'x';
        s += std::to_string(dims[i]);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Attribute access helpers
// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void node_error(const std::string& id, const std::string& what) {
    throw ValidationError("node '" + id + "': " + what);
}

int64_t attr_int(const OperatorNode& n, const std::string& key) {
    auto it = n.attrs.find(key);
    if (it == n.attrs.end())
        node_error(n.id, "missing attr '" + key + "'");
    if (const auto* v = std::get_if<int64_t>(&it->second)) return *v;
    node_error(n.id, "attr '" + key + "' must be an integer");
}

int64_t attr_int_or(const OperatorNode& n, const std::string& key, int64_t dflt) {
    return n.attrs.count(key) ? attr_int(n, key) : dflt;
}

std::string attr_str_or(const OperatorNode& n, const std::string& key,
                        const std::string& dflt) {
    auto it = n.attrs.find(key);
    if (it == n.attrs.end()) return dflt;
    if (const auto* v = std::get_if<std::string>(&it->second)) return *v;
    node_error(n.id, "attr '" + key + "' must be a string");
}

std::vector<int64_t> attr_ints_or(const OperatorNode& n, const std::string& key,
                                  std::vector<int64_t> dflt) {
    auto it = n.attrs.find(key);
    if (it == n.attrs.end()) return dflt;
    if (const auto* v = std::get_if<std::vector<int64_t>>(&it->second)) return *v;
    if (const auto* s = std::get_if<int64_t>(&it->second)) return {*s, *s};
    node_error(n.id, "attr '" + key + "' must be an integer list");
}

struct WindowAttrs {
    int64_t kh, kw, sh, sw;
    bool same_padding;
};

WindowAttrs window_attrs(const OperatorNode& n) {
    auto kernel = attr_ints_or(n, "kernel", {});
    if (kernel.size() != 2 || kernel[0] < 1 || kernel[1] < 1)
        node_error(n.id, "attr 'kernel' must be two positive integers");
    auto stride = attr_ints_or(n, "stride", {1, 1});
    if (stride.size() != 2 || stride[0] < 1 || stride[1] < 1)
        node_error(n.id, "attr 'stride' must be two positive integers");
    std::string pad = attr_str_or(n, "padding", "same");
    if (pad != "same" && pad != "valid")
        node_error(n.id, "attr 'padding' must be \"same\" or \"valid\"");
    return {kernel[0], kernel[1], stride[0], stride[1], pad == "same"};
}

int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

int64_t window_out(int64_t extent, int64_t k, int64_t s, bool same,
                   const std::string& id) {
    int64_t out = same ? ceil_div(extent, s) : (extent - k) / s + 1;
    if (!same && extent < k)
        node_error(id, "window larger than input extent");
    if (out < 1) node_error(id, "empty output extent");
    return out;
}

// Legal attr keys per kind; anything else is rejected.
const std::map<OpKind, std::set<std::string>>& legal_attr_keys() {
    static const std::map<OpKind, std::set<std::string>> keys = {
        {OpKind::conv2d,           {"kernel", "stride", "padding", "out_channels"}},
        {OpKind::dense,            {"units"}},
        {OpKind::relu,             {}},
        {OpKind::add,              {}},
        {OpKind::concat,           {"axis"}},
        {OpKind::pool_max,         {"kernel", "stride", "padding"}},
        {OpKind::pool_avg,         {"kernel", "stride", "padding"}},
        {OpKind::batch_norm,       {}},
        {OpKind::softmax,          {"axis"}},
        {OpKind::layer_norm,       {}},
        {OpKind::attention_matmul, {"transpose_b"}},
        {OpKind::embedding_lookup, {"vocab", "dim"}},
    };
    return keys;
}

} // namespace

// ---------------------------------------------------------------------------
// Shape rules
// ---------------------------------------------------------------------------

namespace {

// Infer one node's output shape from its resolved input shapes.
TensorShape infer_one(const OperatorNode& n,
                      const std::vector<TensorShape>& in) {
    auto need_inputs = [&](size_t lo, size_t hi) {
        if (in.size() < lo || in.size() > hi)
            node_error(n.id, "wrong input count for " + std::string(to_string(n.op)));
    };
    for (const auto& s : in) {
        if (s.dims.empty()) node_error(n.id, "input with empty shape");
        for (int64_t d : s.dims)
            if (d < 1) node_error(n.id, "non-positive input dim");
    }

    switch (n.op) {
        case OpKind::conv2d: {
            need_inputs(1, 1);
            if (in[0].dims.size() != 4)
                node_error(n.id, "conv2d expects NHWC rank-4 input");
            auto w = window_attrs(n);
            int64_t co = attr_int(n, "out_channels");
            if (co < 1) node_error(n.id, "out_channels must be positive");
            TensorShape out = in[0];
            out.dims[1] = window_out(in[0].dims[1], w.kh, w.sh, w.same_padding, n.id);
            out.dims[2] = window_out(in[0].dims[2], w.kw, w.sw, w.same_padding, n.id);
            out.dims[3] = co;
            return out;
        }
        case OpKind::pool_max:
        case OpKind::pool_avg: {
            need_inputs(1, 1);
            if (in[0].dims.size() != 4)
                node_error(n.id, "pool expects NHWC rank-4 input");
            auto w = window_attrs(n);
            TensorShape out = in[0];
            out.dims[1] = window_out(in[0].dims[1], w.kh, w.sh, w.same_padding, n.id);
            out.dims[2] = window_out(in[0].dims[2], w.kw, w.sw, w.same_padding, n.id);
            return out;
        }
        case OpKind::dense: {
            need_inputs(1, 1);
            int64_t units = attr_int(n, "units");
            if (units < 1) node_error(n.id, "units must be positive");
            TensorShape out = in[0];
            out.dims.back() = units;
            return out;
        }
        case OpKind::relu:
        case OpKind::batch_norm:
        case OpKind::layer_norm: {
            need_inputs(1, 1);
            return in[0];
        }
        case OpKind::softmax: {
            need_inputs(1, 1);
            int64_t rank = static_cast<int64_t>(in[0].dims.size());
            int64_t axis = attr_int_or(n, "axis", rank - 1);
            if (axis < 0) axis += rank;
            if (axis < 0 || axis >= rank) node_error(n.id, "softmax axis out of range");
            return in[0];
        }
        case OpKind::add: {
            need_inputs(1, 8);
            for (const auto& s : in)
                if (s.dims != in[0].dims)
                    node_error(n.id, "add inputs must share one shape");
            return in[0];
        }
        case OpKind::concat: {
            need_inputs(2, 16);
            int64_t rank = static_cast<int64_t>(in[0].dims.size());
            int64_t axis = attr_int_or(n, "axis", rank - 1);
            if (axis < 0) axis += rank;
            if (axis < 0 || axis >= rank) node_error(n.id, "concat axis out of range");
            TensorShape out = in[0];
            int64_t total = 0;
            for (const auto& s : in) {
                if (static_cast<int64_t>(s.dims.size()) != rank)
                    node_error(n.id, "concat inputs must share rank");
                for (int64_t d = 0; d < rank; ++d)
                    if (d != axis && s.dims[d] != out.dims[d])
                        node_error(n.id, "concat inputs differ off the concat axis");
                total += s.dims[axis];
            }
            out.dims[axis] = total;
            return out;
        }
        case OpKind::attention_matmul: {
            need_inputs(2, 2);
            bool tb = attr_int_or(n, "transpose_b", 0) != 0;
            const auto& a = in[0].dims;
            const auto& b = in[1].dims;
            if (a.size() < 2 || b.size() != a.size())
                node_error(n.id, "attention_matmul expects two equal-rank inputs (rank >= 2)");
            for (size_t d = 0; d + 2 < a.size(); ++d)
                if (a[d] != b[d]) node_error(n.id, "batch dims differ");
            int64_t m = a[a.size() - 2], k = a[a.size() - 1];
            int64_t bk = tb ? b[b.size() - 1] : b[b.size() - 2];
            int64_t bn = tb ? b[b.size() - 2] : b[b.size() - 1];
            if (bk != k) node_error(n.id, "contraction dims differ");
            TensorShape out = in[0];
            out.dims[out.dims.size() - 2] = m;
            out.dims[out.dims.size() - 1] = bn;
            return out;
        }
        case OpKind::embedding_lookup: {
            need_inputs(1, 1);
            int64_t vocab = attr_int(n, "vocab");
            int64_t dim = attr_int(n, "dim");
            if (vocab < 1 || dim < 1) node_error(n.id, "vocab and dim must be positive");
            TensorShape out = in[0];
            out.dims.push_back(dim);
            return out;
        }
    }
    node_error(n.id, "unhandled op kind");
}

} // namespace

// ---------------------------------------------------------------------------
// Validation / inference
// ---------------------------------------------------------------------------

std::vector<size_t> topo_order(const ModelGraph& graph) {
    std::unordered_map<std::string, size_t> node_index;
    for (size_t i = 0; i < graph.nodes.size(); ++i)
        node_index[graph.nodes[i].id] = i;

    std::vector<int> indegree(graph.nodes.size(), 0);
    std::vector<std::vector<size_t>> consumers(graph.nodes.size());
    for (size_t i = 0; i < graph.nodes.size(); ++i) {
        for (const auto& in : graph.nodes[i].inputs) {
            auto it = node_index.find(in);
            if (it == node_index.end()) continue;  // graph input
            consumers[it->second].push_back(i);
            ++indegree[i];
        }
    }

    // Min-heap on original position keeps already-sorted graphs stable.
    std::priority_queue<size_t, std::vector<size_t>, std::greater<>> ready;
    for (size_t i = 0; i < graph.nodes.size(); ++i)
        if (indegree[i] == 0) ready.push(i);

    std::vector<size_t> order;
    order.reserve(graph.nodes.size());
    while (!ready.empty()) {
        size_t i = ready.top();
        ready.pop();
        order.push_back(i);
        for (size_t c : consumers[i])
            if (--indegree[c] == 0) ready.push(c);
    }
    if (order.size() != graph.nodes.size()) {
        for (size_t i = 0; i < graph.nodes.size(); ++i)
            if (indegree[i] > 0)
                node_error(graph.nodes[i].id, "cycle");
    }
    return order;
}

void validate(const ModelGraph& graph) {
    std::unordered_set<std::string> ids;
    for (const auto& gi : graph.inputs) {
        if (gi.id.empty()) throw ValidationError("graph input with empty id");
        if (!ids.insert(gi.id).second)
            throw ValidationError("duplicate id '" + gi.id + "'");
        if (gi.shape.dims.empty())
            throw ValidationError("graph input '" + gi.id + "' has empty shape");
        for (int64_t d : gi.shape.dims)
            if (d < 1) throw ValidationError("graph input '" + gi.id + "' has non-positive dim");
        if (gi.shape.dtype_bytes < 1)
            throw ValidationError("graph input '" + gi.id + "' has non-positive dtype_bytes");
    }
    if (graph.inputs.empty()) throw ValidationError("graph has no inputs");
    if (graph.nodes.empty()) throw ValidationError("graph has no nodes");

    for (const auto& n : graph.nodes) {
        if (n.id.empty()) throw ValidationError("node with empty id");
        if (!ids.insert(n.id).second)
            throw ValidationError("duplicate id '" + n.id + "'");
        const auto& legal = legal_attr_keys().at(n.op);
        for (const auto& [key, _] : n.attrs)
            if (!legal.count(key))
                node_error(n.id, "illegal attr '" + key + "' for " + to_string(n.op));
        if (n.inputs.empty()) node_error(n.id, "no inputs");
    }
    for (const auto& n : graph.nodes)
        for (const auto& in : n.inputs)
            if (!ids.count(in))
                node_error(n.id, "dangling input '" + in + "'");

    // Throws on cycle. Reachability from graph inputs follows: every
    // node has >= 1 input, ids all resolve, and backward paths in a DAG
    // can only terminate at graph inputs.
    topo_order(graph);
}

namespace {

// Canonical attr form: defaults materialized, scalars widened to pairs,
// axes resolved to non-negative indices.
void canonicalize_attrs(OperatorNode& n, const std::vector<TensorShape>& in) {
    switch (n.op) {
        case OpKind::conv2d: {
            auto w = window_attrs(n);
            n.attrs["kernel"] = std::vector<int64_t>{w.kh, w.kw};
            n.attrs["stride"] = std::vector<int64_t>{w.sh, w.sw};
            n.attrs["padding"] = std::string(w.same_padding ? "same" : "valid");
            n.attrs["out_channels"] = attr_int(n, "out_channels");
            break;
        }
        case OpKind::pool_max:
        case OpKind::pool_avg: {
            auto w = window_attrs(n);
            n.attrs["kernel"] = std::vector<int64_t>{w.kh, w.kw};
            n.attrs["stride"] = std::vector<int64_t>{w.sh, w.sw};
            n.attrs["padding"] = std::string(w.same_padding ? "same" : "valid");
            break;
        }
        case OpKind::concat:
        case OpKind::softmax: {
            int64_t rank = static_cast<int64_t>(in[0].dims.size());
            int64_t axis = attr_int_or(n, "axis", rank - 1);
            if (axis < 0) axis += rank;
            n.attrs["axis"] = axis;
            break;
        }
        case OpKind::attention_matmul:
            n.attrs["transpose_b"] = attr_int_or(n, "transpose_b", 0) ? int64_t{1} : int64_t{0};
            break;
        default:
            break;
    }
}

} // namespace

ModelGraph infer_shapes(ModelGraph graph) {
    validate(graph);
    auto order = topo_order(graph);

    // Reorder nodes into the canonical stable topological order.
    std::vector<OperatorNode> sorted;
    sorted.reserve(graph.nodes.size());
    for (size_t i : order) sorted.push_back(std::move(graph.nodes[i]));
    graph.nodes = std::move(sorted);

    std::unordered_map<std::string, TensorShape> shapes;
    for (const auto& gi : graph.inputs) shapes[gi.id] = gi.shape;

    for (auto& n : graph.nodes) {
        std::vector<TensorShape> in;
        in.reserve(n.inputs.size());
        for (const auto& i : n.inputs) in.push_back(shapes.at(i));
        canonicalize_attrs(n, in);
        TensorShape out = infer_one(n, in);
        if (n.output_shape && !(*n.output_shape == out))
            node_error(n.id, "shape mismatch: declared " + n.output_shape->to_string() +
                                 " but inferred " + out.to_string());
        n.output_shape = out;
        shapes[n.id] = out;
    }
    graph.params_count = count_params(graph);
    return graph;
}

int64_t count_params(const ModelGraph& graph) {
    std::unordered_map<std::string, TensorShape> shapes;
    for (const auto& gi : graph.inputs) shapes[gi.id] = gi.shape;
    for (const auto& n : graph.nodes)
        if (n.output_shape) shapes[n.id] = *n.output_shape;

    int64_t total = 0;
    for (const auto& n : graph.nodes) {
        auto in_shape = [&](size_t i) -> const TensorShape& { return shapes.at(n.inputs[i]); };
        switch (n.op) {
            case OpKind::conv2d: {
                auto w = window_attrs(n);
                int64_t ci = in_shape(0).dims[3], co = attr_int(n, "out_channels");
                total += (w.kh * w.kw * ci + 1) * co;
                break;
            }
            case OpKind::dense: {
                int64_t k = in_shape(0).dims.back();
                total += (k + 1) * attr_int(n, "units");
                break;
            }
            case OpKind::batch_norm:
                total += 4 * in_shape(0).dims.back();
                break;
            case OpKind::layer_norm:
                total += 2 * in_shape(0).dims.back();
                break;
            case OpKind::embedding_lookup:
                total += attr_int(n, "vocab") * attr_int(n, "dim");
                break;
            default:
                break;
        }
    }
    return total;
}

std::vector<OpKind> op_sequence(const ModelGraph& graph) {
    std::vector<OpKind> seq;
    seq.reserve(graph.nodes.size());
    for (size_t i : topo_order(graph)) seq.push_back(graph.nodes[i].op);
    return seq;
}

// ---------------------------------------------------------------------------
// MGF serialization
// ---------------------------------------------------------------------------

namespace {

json attr_to_json(const AttrValue& v) {
    if (const auto* i = std::get_if<int64_t>(&v)) return *i;
    if (const auto* s = std::get_if<std::string>(&v)) return *s;
    return std::get<std::vector<int64_t>>(v);
}

AttrValue attr_from_json(const json& j, const std::string& node_id) {
    if (j.is_number_integer()) return j.get<int64_t>();
    if (j.is_boolean()) return static_cast<int64_t>(j.get<bool>() ? 1 : 0);
    if (j.is_string()) return j.get<std::string>();
    if (j.is_array()) {
        std::vector<int64_t> out;
        for (const auto& e : j) {
            if (!e.is_number_integer())
                node_error(node_id, "attr list elements must be integers");
            out.push_back(e.get<int64_t>());
        }
        return out;
    }
    node_error(node_id, "unsupported attr value type");
}

std::vector<int64_t> dims_from_json(const json& j, const std::string& where) {
    if (!j.is_array() || j.empty())
        throw ValidationError(where + ": shape must be a non-empty integer array");
    std::vector<int64_t> dims;
    for (const auto& e : j) {
        if (!e.is_number_integer())
            throw ValidationError(where + ": shape dims must be integers");
        dims.push_back(e.get<int64_t>());
    }
    return dims;
}

} // namespace

ModelGraph load_model(std::string_view bytes) {
    json doc;
    try {
        doc = json::parse(bytes);
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad MGF document: ") + e.what());
    }
    if (!doc.is_object()) throw ParseError("MGF document must be a JSON object");

    ModelGraph g;
    g.name = doc.value("name", std::string("model"));
    if (!doc.contains("inputs") || !doc["inputs"].is_array())
        throw ValidationError("MGF document missing 'inputs' array");
    for (const auto& ji : doc["inputs"]) {
        GraphInput gi;
        gi.id = ji.value("id", std::string());
        gi.shape.dims = dims_from_json(ji.value("shape", json::array()), "input '" + gi.id + "'");
        g.inputs.push_back(std::move(gi));
    }
    if (!doc.contains("nodes") || !doc["nodes"].is_array())
        throw ValidationError("MGF document missing 'nodes' array");
    for (const auto& jn : doc["nodes"]) {
        OperatorNode n;
        n.id = jn.value("id", std::string());
        std::string op = jn.value("op", std::string());
        auto kind = op_kind_from_string(op);
        if (!kind) node_error(n.id, "unknown op '" + op + "'");
        n.op = *kind;
        if (jn.contains("attrs")) {
            if (!jn["attrs"].is_object()) node_error(n.id, "attrs must be an object");
            for (const auto& [k, v] : jn["attrs"].items())
                n.attrs[k] = attr_from_json(v, n.id);
        }
        if (jn.contains("inputs"))
            for (const auto& e : jn["inputs"])
                n.inputs.push_back(e.get<std::string>());
        if (jn.contains("out_shape")) {
            TensorShape s;
            s.dims = dims_from_json(jn["out_shape"], "node '" + n.id + "'");
            n.output_shape = s;
        }
        g.nodes.push_back(std::move(n));
    }
    return infer_shapes(std::move(g));
}

std::string save_model(const ModelGraph& graph) {
    ModelGraph g = infer_shapes(graph);  // canonical order + shapes
    json doc;
    doc["name"] = g.name;
    doc["inputs"] = json::array();
    for (const auto& gi : g.inputs) {
        json ji;
        ji["id"] = gi.id;
        ji["shape"] = gi.shape.dims;
        doc["inputs"].push_back(std::move(ji));
    }
    doc["nodes"] = json::array();
    for (const auto& n : g.nodes) {
        json jn;
        jn["id"] = n.id;
        jn["op"] = to_string(n.op);
        if (!n.attrs.empty()) {
            json ja = json::object();
            for (const auto& [k, v] : n.attrs) ja[k] = attr_to_json(v);
            jn["attrs"] = std::move(ja);
        }
        jn["inputs"] = n.inputs;
        jn["out_shape"] = n.output_shape->dims;
        doc["nodes"].push_back(std::move(jn));
    }
    return doc.dump(2) + "\n";
}

} // namespace kernleak
