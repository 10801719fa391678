#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "kernleak/errors.hpp"

// Victim model graphs: a small operator-level IR with shape inference,
// a canonical JSON serialization (the MGF format), and deterministic
// generators for four miniature architecture families.

namespace kernleak {

// Fixed operator vocabulary. Enum order is the tie-break order used by
// the sequence decoder, so it is part of the observable contract.
enum class OpKind {
    conv2d,
    dense,
    relu,
    add,
    concat,
    pool_max,
    pool_avg,
    batch_norm,
    softmax,
    layer_norm,
    attention_matmul,
    embedding_lookup,
};
inline constexpr int kOpKindCount = 12;

const char* to_string(OpKind k);
std::optional<OpKind> op_kind_from_string(std::string_view s);

struct TensorShape {
    std::vector<int64_t> dims;  // all >= 1
    int64_t dtype_bytes = 4;

    int64_t elements() const;
    int64_t byte_size() const { return elements() * dtype_bytes; }
    std::string to_string() const;  // e.g. "1x8x8x16"

    bool operator==(const TensorShape&) const = default;
};

// Attribute values are integers, strings, or integer lists; the legal
// keys depend on the operator kind (see shape rules in model_ir.cpp).
using AttrValue = std::variant<int64_t, std::string, std::vector<int64_t>>;
using AttrMap = std::map<std::string, AttrValue>;

struct OperatorNode {
    std::string id;
    OpKind op = OpKind::conv2d;
    AttrMap attrs;
    std::vector<std::string> inputs;           // node ids or graph-input ids
    std::optional<TensorShape> output_shape;   // populated by infer_shapes
};

struct GraphInput {
    std::string id;
    TensorShape shape;
};

struct ModelGraph {
    std::string name;
    std::vector<GraphInput> inputs;
    std::vector<OperatorNode> nodes;  // canonical topological order
    int64_t params_count = 0;         // derived from attrs, not serialized
};

// ---------------------------------------------------------------------------
// Core operations
// ---------------------------------------------------------------------------

// Parse + canonicalize + validate an MGF document. The result
// round-trips through save_model byte-identically.
ModelGraph load_model(std::string_view bytes);

// Canonical serialization: nodes in stable topological order, attrs
// with defaults materialized, out_shape always present, keys sorted.
std::string save_model(const ModelGraph& graph);

// Structural validation: unique ids, resolvable inputs, DAG,
// reachability from graph inputs, legal attrs. Throws ValidationError
// naming the offending node.
void validate(const ModelGraph& graph);

// Populate every node's output_shape from the shape rules; verifies any
// declared shapes. Idempotent. Also recomputes params_count.
ModelGraph infer_shapes(ModelGraph graph);

// Stable topological order (Kahn, ties by original position).
// Throws ValidationError on a cycle.
std::vector<size_t> topo_order(const ModelGraph& graph);

// Parameter count implied by the attrs (weights are never materialized;
// only their sizes matter to the cost model).
int64_t count_params(const ModelGraph& graph);

// Operator kinds in canonical order: the ground-truth sequence an
// architecture-extraction attack tries to recover.
std::vector<OpKind> op_sequence(const ModelGraph& graph);

// ---------------------------------------------------------------------------
// Builtin generators
// ---------------------------------------------------------------------------

enum class ModelFamily { resnet_mini, densenet_mini, yolo_mini, transformer_mini };

const char* to_string(ModelFamily f);
std::optional<ModelFamily> family_from_string(std::string_view s);

inline constexpr int kMinScale = 1;
inline constexpr int kMaxScale = 4;

// Deterministic in (family, scale, seed). Node counts stay within
// 20..120 over the documented scale range. The seed varies channel
// widths / embedding dims, so different seeds yield different tensor
// shapes of the same topology family.
ModelGraph generate_model(ModelFamily family, int scale, uint64_t seed);

} // namespace kernleak
