#include <string>
#include <vector>

#include "kernleak/model_ir.hpp"
#include "kernleak/rng.hpp"

// Deterministic miniature architecture generators. The topologies follow
// the usual family idioms (residual adds, dense-block concats, detection
// heads, attention blocks); the seed varies channel widths / embedding
// dims so distinct seeds produce distinct tensor shapes.

namespace kernleak {

namespace {

struct GraphBuilder {
    ModelGraph g;
    int counter = 0;

    std::string fresh(const std::string& stem) {
        return stem + "_" + std::to_string(counter++);
    }

    std::string input(const std::string& id, std::vector<int64_t> dims) {
        g.inputs.push_back({id, TensorShape{std::move(dims), 4}});
        return id;
    }

    std::string node(OpKind op, std::vector<std::string> ins, AttrMap attrs = {}) {
        OperatorNode n;
        n.id = fresh(to_string(op));
        n.op = op;
        n.inputs = std::move(ins);
        n.attrs = std::move(attrs);
        g.nodes.push_back(n);
        return g.nodes.back().id;
    }

    std::string conv(const std::string& in, int64_t k, int64_t stride, int64_t out_ch) {
        return node(OpKind::conv2d, {in},
                    {{"kernel", std::vector<int64_t>{k, k}},
                     {"stride", std::vector<int64_t>{stride, stride}},
                     {"padding", std::string("same")},
                     {"out_channels", out_ch}});
    }

    // conv -> batch_norm -> relu (bias folded into the batch norm)
    std::string conv_bn_relu(const std::string& in, int64_t k, int64_t stride, int64_t out_ch) {
        auto c = conv(in, k, stride, out_ch);
        auto b = node(OpKind::batch_norm, {c});
        return node(OpKind::relu, {b});
    }

    // conv -> bias add -> batch_norm -> relu, the full inference-time
    // epilogue chain (the single-input add carries the bias vector).
    std::string conv_group(const std::string& in, int64_t k, int64_t stride, int64_t out_ch) {
        auto c = conv(in, k, stride, out_ch);
        auto bias = node(OpKind::add, {c});
        auto b = node(OpKind::batch_norm, {bias});
        return node(OpKind::relu, {b});
    }

    std::string pool(OpKind kind, const std::string& in, int64_t k, int64_t stride,
                     const std::string& padding) {
        return node(kind, {in},
                    {{"kernel", std::vector<int64_t>{k, k}},
                     {"stride", std::vector<int64_t>{stride, stride}},
                     {"padding", padding}});
    }

    std::string dense(const std::string& in, int64_t units) {
        return node(OpKind::dense, {in}, {{"units", units}});
    }
};

void check_scale(ModelFamily family, int scale) {
    int hi = max_scale(family);
    if (scale < kMinScale || scale > hi)
        throw ValidationError("scale out of range [" + std::to_string(kMinScale) + ", " +
                              std::to_string(hi) + "] for " + to_string(family));
}

ModelGraph build_resnet(int scale, SplitMix64& rng) {
    GraphBuilder b;
    int64_t base = 16 + 8 * static_cast<int64_t>(rng.next_below(3));  // 16 | 24 | 32
    auto x = b.input("in0", {1, 32, 32, 3});
    x = b.conv_bn_relu(x, 3, 1, base);

    for (int stage = 0; stage < 3; ++stage) {
        int64_t ch = base << stage;
        for (int block = 0; block < scale; ++block) {
            bool down = stage > 0 && block == 0;
            int64_t stride = down ? 2 : 1;
            auto main = b.conv_group(x, 3, stride, ch);
            main = b.conv_group(main, 3, 1, ch);
            auto shortcut = x;
            if (down) {
                // Projection shortcut, bias-free.
                shortcut = b.conv(x, 1, stride, ch);
                shortcut = b.node(OpKind::batch_norm, {shortcut});
            }
            auto sum = b.node(OpKind::add, {main, shortcut});
            x = b.node(OpKind::relu, {sum});
        }
    }
    x = b.pool(OpKind::pool_avg, x, 8, 1, "valid");  // 32/2/2 = 8 spatial left
    x = b.dense(x, 10);
    b.node(OpKind::softmax, {x});
    return b.g;
}

ModelGraph build_densenet(int scale, SplitMix64& rng) {
    GraphBuilder b;
    int64_t growth = 8 + 4 * static_cast<int64_t>(rng.next_below(3));  // 8 | 12 | 16
    auto x = b.input("in0", {1, 32, 32, 3});
    x = b.conv_bn_relu(x, 3, 1, 2 * growth);
    int64_t ch = 2 * growth;

    int layers = 1 + scale;
    for (int block = 0; block < 2; ++block) {
        for (int layer = 0; layer < layers; ++layer) {
            // Bottleneck layer: 1x1 reduction, 3x3 growth, concat.
            auto f = b.conv_group(x, 1, 1, 2 * growth);
            f = b.conv_group(f, 3, 1, growth);
            x = b.node(OpKind::concat, {x, f}, {{"axis", int64_t{3}}});
            ch += growth;
        }
        if (block == 0) {
            ch /= 2;
            x = b.conv(x, 1, 1, ch);
            x = b.pool(OpKind::pool_avg, x, 2, 2, "valid");
        }
    }
    x = b.pool(OpKind::pool_avg, x, 16, 1, "valid");
    x = b.dense(x, 10);
    b.node(OpKind::softmax, {x});
    return b.g;
}

ModelGraph build_yolo(int scale, SplitMix64& rng) {
    GraphBuilder b;
    int64_t base = 16 + 8 * static_cast<int64_t>(rng.next_below(3));
    auto x = b.input("in0", {1, 32, 32, 3});
    x = b.conv_group(x, 3, 1, base);

    for (int stage = 0; stage < 2; ++stage) {
        int64_t ch = base << (stage + 1);
        x = b.conv_group(x, 3, 2, ch);  // downsample
        for (int unit = 0; unit < scale; ++unit) {
            auto inner = b.conv_group(x, 1, 1, ch / 2);
            inner = b.conv_group(inner, 3, 1, ch);
            auto sum = b.node(OpKind::add, {inner, x});
            x = b.node(OpKind::relu, {sum});
        }
    }
    // Spatial-pyramid style route: pool branch concatenated back.
    auto pooled = b.pool(OpKind::pool_max, x, 3, 1, "same");
    x = b.node(OpKind::concat, {x, pooled}, {{"axis", int64_t{3}}});
    x = b.conv_group(x, 1, 1, base << 2);
    // Detection head: plain conv outputs, no classifier stack.
    x = b.conv(x, 3, 1, base << 2);
    b.conv(x, 1, 1, 24);
    return b.g;
}

ModelGraph build_transformer(int scale, SplitMix64& rng) {
    GraphBuilder b;
    int64_t dim = 24 + 16 * static_cast<int64_t>(rng.next_below(2));   // 24 | 40
    int64_t vocab = 128 + 64 * static_cast<int64_t>(rng.next_below(3));
    auto ids = b.input("in0", {1, 16});
    auto x = b.node(OpKind::embedding_lookup, {ids}, {{"vocab", vocab}, {"dim", dim}});

    int blocks = 1 + scale;
    for (int block = 0; block < blocks; ++block) {
        auto norm = b.node(OpKind::layer_norm, {x});
        auto q = b.dense(norm, dim);
        auto k = b.dense(norm, dim);
        auto v = b.dense(norm, dim);
        auto scores = b.node(OpKind::attention_matmul, {q, k}, {{"transpose_b", int64_t{1}}});
        auto weights = b.node(OpKind::softmax, {scores});
        auto ctx = b.node(OpKind::attention_matmul, {weights, v});
        auto proj = b.dense(ctx, dim);
        auto res1 = b.node(OpKind::add, {proj, x});
        auto norm2 = b.node(OpKind::layer_norm, {res1});
        auto ff = b.dense(norm2, 2 * dim);
        ff = b.node(OpKind::relu, {ff});
        ff = b.dense(ff, dim);
        x = b.node(OpKind::add, {ff, res1});
    }
    x = b.node(OpKind::layer_norm, {x});
    x = b.dense(x, vocab);
    b.node(OpKind::softmax, {x});
    return b.g;
}

} // namespace

ModelGraph generate_model(ModelFamily family, int scale, uint64_t seed) {
    check_scale(scale);
    SplitMix64 rng(derive_seed(seed, "generate_model", to_string(family)));
    ModelGraph g;
    switch (family) {
        case ModelFamily::resnet_mini:      g = build_resnet(scale, rng); break;
        case ModelFamily::densenet_mini:    g = build_densenet(scale, rng); break;
        case ModelFamily::yolo_mini:        g = build_yolo(scale, rng); break;
        case ModelFamily::transformer_mini: g = build_transformer(scale, rng); break;
    }
    g.name = std::string(to_string(family)) + "-s" + std::to_string(scale) + "-g" +
             std::to_string(seed);
    return infer_shapes(std::move(g));
}

} // namespace kernleak
