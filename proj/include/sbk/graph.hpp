#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "sbk/rng.hpp"
#include "sbk/tensor.hpp"

namespace sbk {

class Graph;

// Handle to a node on a Graph's tape.
struct Var {
    Graph* g = nullptr;
    int id = -1;
    bool valid() const { return g != nullptr && id >= 0; }
};

enum class OpKind : uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,
    AddScalar,
    MulScalar,
    AddRowVec,     // x[...,d] + v[d]
    AddBcast0,     // x[b, rest...] + s[rest...]
    MatMul,
    TransposeLast2,
    Reshape,
    SplitHeads,
    MergeHeads,
    Softmax,
    Sigmoid,
    Gelu,
    LayerNorm,
    Dropout,
    CosineRows,
    SumAll,
    MeanAll,
    Concat,
    AttentionCore,
};

// Tape-based reverse-mode autodiff over a fixed op set. Nodes are appended
// in execution order, which is already a topological order, and backward()
// walks them once in reverse. A Graph is confined to one thread.
class Graph {
public:
    struct Node {
        OpKind kind = OpKind::Leaf;
        Tensor value;
        std::array<int, 3> in{{-1, -1, -1}};
        int n_in = 0;
        bool requires_grad = false;
        // Op payload; meaning depends on kind:
        //   Dropout: saved = premultiplied keep mask
        //   LayerNorm: saved = xhat, saved2 = per-row 1/std
        //   CosineRows: saved = [norms_a | norms_b | cos] (3n)
        //   AttentionCore: saved = post-mask attention map [B,H,N,N],
        //                  mask = keep bytes (empty = none), i0 = variant
        std::vector<double> saved;
        std::vector<double> saved2;
        std::vector<uint8_t> mask;
        double a0 = 0.0;
        int i0 = 0;
        Shape alt_shape; // Reshape/Concat bookkeeping
    };

    Var leaf(Tensor t, bool requires_grad);

    // NOTE: the reference is invalidated by the next op appended to the
    // graph; copy out anything needed across op calls. shape() returns by
    // value for that reason.
    const Tensor& value(Var v) const { return node(v).value; }
    Shape shape(Var v) const { return node(v).value.shape; }

    // Gradient of the last backward() w.r.t. a leaf. Interior-node buffers
    // are released as backward consumes them; only leaves keep theirs.
    const std::vector<double>& grad(Var v) const;
    bool has_grad(Var v) const;

    // Reverse pass from a scalar loss. Calling it twice on one tape is a
    // contract error; build a fresh Graph per step instead.
    void backward(Var loss);

    size_t size() const { return nodes_.size(); }

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var add_scalar(Var a, double c);
    Var mul_scalar(Var a, double c);
    Var add_rowvec(Var a, Var v);
    Var add_bcast0(Var a, Var s);
    Var matmul(Var a, Var b);
    Var transpose_last2(Var a);
    Var reshape(Var a, Shape s);
    Var split_heads(Var a, size_t n_heads);
    Var merge_heads(Var a);
    Var softmax_lastaxis(Var a);
    Var sigmoid(Var a);
    Var gelu(Var a);
    Var layer_norm(Var x, Var gamma, Var beta, double eps);
    Var dropout(Var x, double rate, bool training, RandomState rng);
    Var cosine_rows(Var a, Var b);
    Var sum_all(Var a);
    Var mean_all(Var a);
    Var concat(Var a, Var b, size_t axis);

    // Fused scaled-dot-product attention with optional N x N keep-mask
    // shared across batch and heads. variant 0 = softmax over surviving
    // entries (throws ContractError on a fully masked row), variant 1 =
    // elementwise sigmoid times mask, unnormalized.
    Var attention_core(Var q, Var k, Var v, const std::vector<uint8_t>& keep, int variant);

    // Post-mask attention map saved by an AttentionCore node, as [B,H,N,N].
    Tensor attention_map(Var attn_out) const;

private:
    const Node& node(Var v) const;
    Node& node(Var v);
    Var push(Node n, const char* opname);
    std::vector<double>& grad_buf(int id);

    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
    bool backward_done_ = false;
};

} // namespace sbk
