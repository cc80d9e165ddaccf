#include "sbk/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sbk/kernels.hpp"

namespace sbk {

namespace {

// Leading-axes product for a shape interpreted as [batch..., r, c].
size_t lead_prod(const Shape& s, size_t keep_last) {
    size_t p = 1;
    for (size_t i = 0; i + keep_last < s.size(); ++i) p *= s[i];
    return p;
}

bool lead_equal(const Shape& a, const Shape& b, size_t keep_last) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i + keep_last < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

} // namespace

const Graph::Node& Graph::node(Var v) const {
    if (v.g != this || v.id < 0 || static_cast<size_t>(v.id) >= nodes_.size())
        throw ContractError("Var does not belong to this graph");
    return nodes_[static_cast<size_t>(v.id)];
}

Graph::Node& Graph::node(Var v) {
    return const_cast<Node&>(static_cast<const Graph*>(this)->node(v));
}

Var Graph::push(Node n, const char* opname) {
    check_finite(n.value, opname);
    nodes_.push_back(std::move(n));
    grads_.emplace_back();
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

std::vector<double>& Graph::grad_buf(int id) {
    auto& g = grads_[static_cast<size_t>(id)];
    if (g.empty()) g.assign(nodes_[static_cast<size_t>(id)].value.numel(), 0.0);
    return g;
}

Var Graph::leaf(Tensor t, bool requires_grad) {
    Node n;
    n.kind = OpKind::Leaf;
    n.value = std::move(t);
    n.requires_grad = requires_grad;
    return push(std::move(n), "leaf");
}

const std::vector<double>& Graph::grad(Var v) const {
    node(v); // validate ownership
    const auto& g = grads_[static_cast<size_t>(v.id)];
    if (g.empty()) throw ContractError("no gradient stored for this node");
    return g;
}

bool Graph::has_grad(Var v) const {
    node(v); // validate
    return !grads_[static_cast<size_t>(v.id)].empty();
}

// ---- forward ops ----

Var Graph::add(Var a, Var b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (!same_shape(na.value.shape, nb.value.shape))
        throw DimensionError("add: shape mismatch " + shape_str(na.value.shape) + " vs " +
                             shape_str(nb.value.shape));
    Node n;
    n.kind = OpKind::Add;
    n.in = {a.id, b.id, -1};
    n.n_in = 2;
    n.requires_grad = na.requires_grad || nb.requires_grad;
    n.value = Tensor(na.value.shape);
    kernels::ew_add(n.value.data.data(), na.value.data.data(), nb.value.data.data(),
                    n.value.numel());
    return push(std::move(n), "add");
}

Var Graph::sub(Var a, Var b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (!same_shape(na.value.shape, nb.value.shape))
        throw DimensionError("sub: shape mismatch " + shape_str(na.value.shape) + " vs " +
                             shape_str(nb.value.shape));
    Node n;
    n.kind = OpKind::Sub;
    n.in = {a.id, b.id, -1};
    n.n_in = 2;
    n.requires_grad = na.requires_grad || nb.requires_grad;
    n.value = Tensor(na.value.shape);
    kernels::ew_sub(n.value.data.data(), na.value.data.data(), nb.value.data.data(),
                    n.value.numel());
    return push(std::move(n), "sub");
}

Var Graph::mul(Var a, Var b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (!same_shape(na.value.shape, nb.value.shape))
        throw DimensionError("mul: shape mismatch " + shape_str(na.value.shape) + " vs " +
                             shape_str(nb.value.shape));
    Node n;
    n.kind = OpKind::Mul;
    n.in = {a.id, b.id, -1};
    n.n_in = 2;
    n.requires_grad = na.requires_grad || nb.requires_grad;
    n.value = Tensor(na.value.shape);
    kernels::ew_mul(n.value.data.data(), na.value.data.data(), nb.value.data.data(),
                    n.value.numel());
    return push(std::move(n), "mul");
}

Var Graph::add_scalar(Var a, double c) {
    const Node& na = node(a);
    Node n;
    n.kind = OpKind::AddScalar;
    n.in = {a.id, -1, -1};
    n.n_in = 1;
    n.requires_grad = na.requires_grad;
    n.a0 = c;
    n.value = Tensor(na.value.shape);
    kernels::ew_add_scalar(n.value.data.data(), na.value.data.data(), c, n.value.numel());
    return push(std::move(n), "add_scalar");
}

Var Graph::mul_scalar(Var a, double c) {
    const Node& na = node(a);
    Node n;
    n.kind = OpKind::MulScalar;
    n.in = {a.id, -1, -1};
    n.n_in = 1;
    n.requires_grad = na.requires_grad;
    n.a0 = c;
    n.value = Tensor(na.value.shape);
    kernels::ew_scale(n.value.data.data(), na.value.data.data(), c, n.value.numel());
    return push(std::move(n), "mul_scalar");
}

Var Graph::add_rowvec(Var a, Var v) {
    const Node& na = node(a);
    const Node& nv = node(v);
    if (na.value.ndim() < 1 || nv.value.ndim() != 1 ||
        na.value.shape.back() != nv.value.shape[0])
        throw DimensionError("add_rowvec: " + shape_str(na.value.shape) + " vs " +
                             shape_str(nv.value.shape));
    Node n;
    n.kind = OpKind::AddRowVec;
    n.in = {a.id, v.id, -1};
    n.n_in = 2;
    n.requires_grad = na.requires_grad || nv.requires_grad;
    n.value = Tensor(na.value.shape);
    const size_t d = nv.value.numel();
    const size_t rows = na.value.numel() / d;
    for (size_t r = 0; r < rows; ++r)
        for (size_t j = 0; j < d; ++j)
            n.value.data[r * d + j] = na.value.data[r * d + j] + nv.value.data[j];
    return push(std::move(n), "add_rowvec");
}

Var Graph::add_bcast0(Var a, Var s) {
    const Node& na = node(a);
    const Node& ns = node(s);
    if (na.value.ndim() < 2 || ns.value.numel() == 0 ||
        na.value.numel() % ns.value.numel() != 0 ||
        !std::equal(ns.value.shape.begin(), ns.value.shape.end(),
                    na.value.shape.end() - static_cast<long>(ns.value.shape.size())))
        throw DimensionError("add_bcast0: " + shape_str(na.value.shape) + " vs " +
                             shape_str(ns.value.shape));
    Node n;
    n.kind = OpKind::AddBcast0;
    n.in = {a.id, s.id, -1};
    n.n_in = 2;
    n.requires_grad = na.requires_grad || ns.requires_grad;
    n.value = Tensor(na.value.shape);
    const size_t m = ns.value.numel();
    const size_t b = na.value.numel() / m;
    for (size_t bi = 0; bi < b; ++bi)
        for (size_t j = 0; j < m; ++j)
            n.value.data[bi * m + j] = na.value.data[bi * m + j] + ns.value.data[j];
    return push(std::move(n), "add_bcast0");
}

Var Graph::matmul(Var a, Var b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    const Shape& sa = na.value.shape;
    const Shape& sb = nb.value.shape;
    if (sa.size() < 2 || sb.size() < 2)
        throw DimensionError("matmul: operands must have >= 2 axes, got " + shape_str(sa) +
                             " and " + shape_str(sb));
    const size_t m = sa[sa.size() - 2];
    const size_t k = sa[sa.size() - 1];
    const size_t k2 = sb[sb.size() - 2];
    const size_t nn = sb[sb.size() - 1];
    const bool b_shared = sb.size() == 2 && sa.size() > 2;
    if (k != k2 || (!b_shared && !lead_equal(sa, sb, 2)))
        throw DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " +
                             shape_str(sb));
    const size_t batch = lead_prod(sa, 2);
    Node n;
    n.kind = OpKind::MatMul;
    n.in = {a.id, b.id, -1};
    n.n_in = 2;
    n.requires_grad = na.requires_grad || nb.requires_grad;
    Shape os(sa.begin(), sa.end() - 1);
    os.push_back(nn);
    n.value = Tensor(os);
    kernels::matmul_nn(n.value.data.data(), na.value.data.data(), nb.value.data.data(), batch,
                       m, k, nn, m * k, b_shared ? 0 : k * nn);
    return push(std::move(n), "matmul");
}

Var Graph::transpose_last2(Var a) {
    const Node& na = node(a);
    const Shape& s = na.value.shape;
    if (s.size() < 2) throw DimensionError("transpose_last2 needs >= 2 axes");
    Node n;
    n.kind = OpKind::TransposeLast2;
    n.in = {a.id, -1, -1};
    n.n_in = 1;
    n.requires_grad = na.requires_grad;
    Shape os = s;
    std::swap(os[os.size() - 1], os[os.size() - 2]);
    n.value = Tensor(os);
    kernels::transpose_last2(n.value.data.data(), na.value.data.data(), lead_prod(s, 2),
                             s[s.size() - 2], s[s.size() - 1]);
    return push(std::move(n), "transpose_last2");
}

Var Graph::reshape(Var a, Shape s) {
    const Node& na = node(a);
    if (shape_numel(s) != na.value.numel())
        throw DimensionError("reshape: cannot view " + shape_str(na.value.shape) + " as " +
                             shape_str(s));
    Node n;
    n.kind = OpKind::Reshape;
    n.in = {a.id, -1, -1};
    n.n_in = 1;
    n.requires_grad = na.requires_grad;
    n.value = Tensor(std::move(s), na.value.data);
    return push(std::move(n), "reshape");
}

Var Graph::split_heads(Var a, size_t n_heads) {
    const Node& na = node(a);
    const Shape& s = na.value.shape;
    if (s.size() != 3 || s[2] % n_heads != 0)
        throw DimensionError("split_heads: want [B,N,H*dk], got " + shape_str(s));
    const size_t dk = s[2] / n_heads;
    Node n;
    n.kind = OpKind::SplitHeads;
    n.in = {a.id, -1, -1};
    n.n_in = 1;
    n.requires_grad = na.requires_grad;
    n.i0 = static_cast<int>(n_heads);
    n.value = Tensor(Shape{s[0], n_heads, s[1], dk});
    kernels::split_heads(n.value.data.data(), na.value.data.data(), s[0], s[1], n_heads, dk);
    return push(std::move(n), "split_heads");
}

Var Graph::merge_heads(Var a) {
    const Node& na = node(a);
    const Shape& s = na.value.shape;
    if (s.size() != 4) throw DimensionError("merge_heads: want [B,H,N,dk], got " + shape_str(s));
    Node n;
    n.kind = OpKind::MergeHeads;
    n.in = {a.id, -1, -1};
    n.n_in = 1;
    n.requires_grad = na.requires_grad;
    n.value = Tensor(Shape{s[0], s[2], s[1] * s[3]});
    kernels::merge_heads(n.value.data.data(), na.value.data.data(), s[0], s[2], s[1], s[3]);
    return push(std::move(n), "merge_heads");
}

Var Graph::softmax_lastaxis(Var a) {
    const Node& na = node(a);
    if (na.value.ndim() < 1 || na.value.shape.back() < 1)
        throw DimensionError("softmax_lastaxis: empty last axis");
    Node n;
    n.kind = OpKind::Softmax;
    n.in = {a.id, -1, -1};
    n.n_in = 1;
    n.requires_grad = na.requires_grad;
    n.value = Tensor(na.value.shape);
    const size_t cols = na.value.shape.back();
    kernels::softmax_rows(n.value.data.data(), na.value.data.data(),
                          na.value.numel() / cols, cols);
    return push(std::move(n), "softmax_lastaxis");
}

Var Graph::sigmoid(Var a) {
    const Node& na = node(a);
    Node n;
    n.kind = OpKind::Sigmoid;
    n.in = {a.id, -1, -1};
    n.n_in = 1;
    n.requires_grad = na.requires_grad;
    n.value = Tensor(na.value.shape);
    kernels::sigmoid_fwd(n.value.data.data(), na.value.data.data(), n.value.numel());
    return push(std::move(n), "sigmoid");
}

Var Graph::gelu(Var a) {
    const Node& na = node(a);
    Node n;
    n.kind = OpKind::Gelu;
    n.in = {a.id, -1, -1};
    n.n_in = 1;
    n.requires_grad = na.requires_grad;
    n.value = Tensor(na.value.shape);
    kernels::gelu_fwd(n.value.data.data(), na.value.data.data(), n.value.numel());
    return push(std::move(n), "gelu");
}

Var Graph::layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Node& nx = node(x);
    const Node& ng = node(gamma);
    const Node& nb = node(beta);
    const size_t d = nx.value.shape.empty() ? 0 : nx.value.shape.back();
    if (ng.value.numel() != d || nb.value.numel() != d)
        throw DimensionError("layer_norm: gamma/beta length must equal last axis " +
                             std::to_string(d));
    Node n;
    n.kind = OpKind::LayerNorm;
    n.in = {x.id, gamma.id, beta.id};
    n.n_in = 3;
    n.requires_grad = nx.requires_grad || ng.requires_grad || nb.requires_grad;
    n.a0 = eps;
    n.value = Tensor(nx.value.shape);
    const size_t rows = nx.value.numel() / d;
    n.saved.resize(nx.value.numel());
    n.saved2.resize(rows);
    kernels::layernorm_rows(n.value.data.data(), n.saved.data(), n.saved2.data(),
                            nx.value.data.data(), ng.value.data.data(), nb.value.data.data(),
                            rows, d, eps);
    return push(std::move(n), "layer_norm");
}

Var Graph::dropout(Var x, double rate, bool training, RandomState rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw ParameterError("dropout rate must be in [0,1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return x; // identity, no node
    const Node& nx = node(x);
    Node n;
    n.kind = OpKind::Dropout;
    n.in = {x.id, -1, -1};
    n.n_in = 1;
    n.requires_grad = nx.requires_grad;
    n.value = Tensor(nx.value.shape);
    n.saved.resize(nx.value.numel());
    const double scale = 1.0 / (1.0 - rate);
    for (size_t i = 0; i < n.saved.size(); ++i) {
        n.saved[i] = rng.next_uniform() < rate ? 0.0 : scale;
        n.value.data[i] = nx.value.data[i] * n.saved[i];
    }
    return push(std::move(n), "dropout");
}

Var Graph::cosine_rows(Var a, Var b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.value.ndim() != 2 || !same_shape(na.value.shape, nb.value.shape))
        throw DimensionError("cosine_rows: want matching [n,d], got " +
                             shape_str(na.value.shape) + " vs " + shape_str(nb.value.shape));
    const size_t rows = na.value.shape[0];
    const size_t d = na.value.shape[1];
    Node n;
    n.kind = OpKind::CosineRows;
    n.in = {a.id, b.id, -1};
    n.n_in = 2;
    n.requires_grad = na.requires_grad || nb.requires_grad;
    n.value = Tensor(Shape{rows});
    n.saved.resize(3 * rows);
    for (size_t r = 0; r < rows; ++r) {
        const double* ar = na.value.data.data() + r * d;
        const double* br = nb.value.data.data() + r * d;
        double qa = 0.0, qb = 0.0, dot = 0.0;
        for (size_t j = 0; j < d; ++j) {
            qa += ar[j] * ar[j];
            qb += br[j] * br[j];
            dot += ar[j] * br[j];
        }
        const double norm_a = std::sqrt(qa);
        const double norm_b = std::sqrt(qb);
        const double cs =
            (norm_a < 1e-12 || norm_b < 1e-12) ? 0.0 : dot / (norm_a * norm_b);
        n.saved[r] = norm_a;
        n.saved[rows + r] = norm_b;
        n.saved[2 * rows + r] = cs;
        n.value.data[r] = cs;
    }
    return push(std::move(n), "cosine_rows");
}

Var Graph::sum_all(Var a) {
    const Node& na = node(a);
    Node n;
    n.kind = OpKind::SumAll;
    n.in = {a.id, -1, -1};
    n.n_in = 1;
    n.requires_grad = na.requires_grad;
    n.value = Tensor(Shape{}, std::vector<double>{
                                  kernels::sum_all(na.value.data.data(), na.value.numel())});
    return push(std::move(n), "sum_all");
}

Var Graph::mean_all(Var a) {
    const Node& na = node(a);
    Node n;
    n.kind = OpKind::MeanAll;
    n.in = {a.id, -1, -1};
    n.n_in = 1;
    n.requires_grad = na.requires_grad;
    n.value = Tensor(
        Shape{}, std::vector<double>{kernels::sum_all(na.value.data.data(), na.value.numel()) /
                                     static_cast<double>(na.value.numel())});
    return push(std::move(n), "mean_all");
}

Var Graph::concat(Var a, Var b, size_t axis) {
    const Node& na = node(a);
    const Node& nb = node(b);
    const Shape& sa = na.value.shape;
    const Shape& sb = nb.value.shape;
    if (sa.size() != sb.size() || axis >= sa.size())
        throw DimensionError("concat: rank mismatch or bad axis");
    for (size_t i = 0; i < sa.size(); ++i)
        if (i != axis && sa[i] != sb[i])
            throw DimensionError("concat: shape mismatch " + shape_str(sa) + " vs " +
                                 shape_str(sb) + " on axis " + std::to_string(axis));
    Node n;
    n.kind = OpKind::Concat;
    n.in = {a.id, b.id, -1};
    n.n_in = 2;
    n.requires_grad = na.requires_grad || nb.requires_grad;
    n.i0 = static_cast<int>(axis);
    Shape os = sa;
    os[axis] += sb[axis];
    n.value = Tensor(os);
    size_t outer = 1;
    for (size_t i = 0; i < axis; ++i) outer *= sa[i];
    size_t inner_a = 1, inner_b = 1;
    for (size_t i = axis; i < sa.size(); ++i) inner_a *= sa[i];
    for (size_t i = axis; i < sb.size(); ++i) inner_b *= sb[i];
    for (size_t o = 0; o < outer; ++o) {
        std::copy_n(na.value.data.data() + o * inner_a, inner_a,
                    n.value.data.data() + o * (inner_a + inner_b));
        std::copy_n(nb.value.data.data() + o * inner_b, inner_b,
                    n.value.data.data() + o * (inner_a + inner_b) + inner_a);
    }
    return push(std::move(n), "concat");
}

Var Graph::attention_core(Var q, Var k, Var v, const std::vector<uint8_t>& keep, int variant) {
    const Node& nq = node(q);
    const Node& nk = node(k);
    const Node& nv = node(v);
    const Shape& s = nq.value.shape;
    if (s.size() != 4 || !same_shape(s, nk.value.shape) || !same_shape(s, nv.value.shape))
        throw DimensionError("attention_core: want matching [B,H,N,dk] operands, got " +
                             shape_str(s) + ", " + shape_str(nk.value.shape) + ", " +
                             shape_str(nv.value.shape));
    const size_t b = s[0], h = s[1], nt = s[2], dk = s[3];
    if (!keep.empty() && keep.size() != nt * nt)
        throw DimensionError("attention_core: mask must be N*N");
    if (variant != 0 && variant != 1) throw ParameterError("attention_core: bad variant");
    if (variant == 0 && !keep.empty()) {
        for (size_t r = 0; r < nt; ++r) {
            bool any = false;
            for (size_t c = 0; c < nt; ++c) any = any || keep[r * nt + c] != 0;
            if (!any)
                throw ContractError("attention row " + std::to_string(r) +
                                    " is fully masked; softmax cannot renormalize");
        }
    }
    Node n;
    n.kind = OpKind::AttentionCore;
    n.in = {q.id, k.id, v.id};
    n.n_in = 3;
    n.requires_grad = nq.requires_grad || nk.requires_grad || nv.requires_grad;
    n.i0 = variant;
    n.mask = keep;
    n.a0 = 1.0 / std::sqrt(static_cast<double>(dk));
    const size_t slabs = b * h;
    n.saved.resize(slabs * nt * nt);
    // scores = alpha * Q K^T
    kernels::matmul_nt(n.saved.data(), nq.value.data.data(), nk.value.data.data(), slabs, nt,
                       dk, nt, nt * dk, nt * dk);
    kernels::ew_scale(n.saved.data(), n.saved.data(), n.a0, n.saved.size());
    double* maps = n.saved.data();
    if (variant == 0) {
        if (keep.empty()) {
            kernels::softmax_rows(maps, maps, slabs * nt, nt);
        } else {
            // Softmax over surviving entries: -inf logits never survive exp.
#pragma omp parallel for schedule(static)
            for (size_t r = 0; r < slabs * nt; ++r) {
                double* row = maps + r * nt;
                const uint8_t* krow = keep.data() + (r % nt) * nt;
                double mx = -1e300;
                for (size_t c = 0; c < nt; ++c)
                    if (krow[c] && row[c] > mx) mx = row[c];
                double sum = 0.0;
                for (size_t c = 0; c < nt; ++c) {
                    row[c] = krow[c] ? std::exp(row[c] - mx) : 0.0;
                    sum += row[c];
                }
                const double inv = 1.0 / sum;
                for (size_t c = 0; c < nt; ++c) row[c] *= inv;
            }
        }
    } else {
        kernels::sigmoid_fwd(maps, maps, n.saved.size());
        if (!keep.empty()) {
#pragma omp parallel for schedule(static)
            for (size_t r = 0; r < slabs * nt; ++r) {
                double* row = maps + r * nt;
                const uint8_t* krow = keep.data() + (r % nt) * nt;
                for (size_t c = 0; c < nt; ++c)
                    if (!krow[c]) row[c] = 0.0;
            }
        }
    }
    n.value = Tensor(s);
    kernels::matmul_nn(n.value.data.data(), n.saved.data(), nv.value.data.data(), slabs, nt,
                       nt, dk, nt * nt, nt * dk);
    check_finite(n.saved, "attention_core map");
    return push(std::move(n), "attention_core");
}

Tensor Graph::attention_map(Var attn_out) const {
    const Node& n = node(attn_out);
    if (n.kind != OpKind::AttentionCore)
        throw ContractError("attention_map: node is not an attention op");
    const Shape& s = n.value.shape;
    return Tensor(Shape{s[0], s[1], s[2], s[2]}, n.saved);
}

// ---- backward ----

void Graph::backward(Var loss) {
    const Node& ln = node(loss);
    if (ln.value.numel() != 1)
        throw ContractError("backward: loss must be scalar, got shape " +
                            shape_str(ln.value.shape));
    if (backward_done_)
        throw ContractError("backward already ran on this graph; build a fresh graph");
    backward_done_ = true;
    if (!ln.requires_grad) return;
    grad_buf(loss.id).assign(1, 1.0);

    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        auto& g = grads_[static_cast<size_t>(id)];
        if (!n.requires_grad || g.empty()) continue;
        const size_t numel = n.value.numel();
        auto in_node = [&](int slot) -> Node& {
            return nodes_[static_cast<size_t>(n.in[static_cast<size_t>(slot)])];
        };
        auto in_grad = [&](int slot) -> std::vector<double>* {
            Node& src = in_node(slot);
            if (!src.requires_grad) return nullptr;
            return &grad_buf(n.in[static_cast<size_t>(slot)]);
        };
        switch (n.kind) {
        case OpKind::Leaf:
            break;
        case OpKind::Add: {
            if (auto* da = in_grad(0)) kernels::ew_axpy(da->data(), 1.0, g.data(), numel);
            if (auto* db = in_grad(1)) kernels::ew_axpy(db->data(), 1.0, g.data(), numel);
            break;
        }
        case OpKind::Sub: {
            if (auto* da = in_grad(0)) kernels::ew_axpy(da->data(), 1.0, g.data(), numel);
            if (auto* db = in_grad(1)) kernels::ew_axpy(db->data(), -1.0, g.data(), numel);
            break;
        }
        case OpKind::Mul: {
            if (auto* da = in_grad(0)) {
                const auto& bv = in_node(1).value.data;
                for (size_t i = 0; i < numel; ++i) (*da)[i] += g[i] * bv[i];
            }
            if (auto* db = in_grad(1)) {
                const auto& av = in_node(0).value.data;
                for (size_t i = 0; i < numel; ++i) (*db)[i] += g[i] * av[i];
            }
            break;
        }
        case OpKind::AddScalar: {
            if (auto* da = in_grad(0)) kernels::ew_axpy(da->data(), 1.0, g.data(), numel);
            break;
        }
        case OpKind::MulScalar: {
            if (auto* da = in_grad(0)) kernels::ew_axpy(da->data(), n.a0, g.data(), numel);
            break;
        }
        case OpKind::AddRowVec: {
            if (auto* da = in_grad(0)) kernels::ew_axpy(da->data(), 1.0, g.data(), numel);
            if (auto* dv = in_grad(1)) {
                const size_t d = in_node(1).value.numel();
                const size_t rows = numel / d;
                for (size_t r = 0; r < rows; ++r)
                    for (size_t j = 0; j < d; ++j) (*dv)[j] += g[r * d + j];
            }
            break;
        }
        case OpKind::AddBcast0: {
            if (auto* da = in_grad(0)) kernels::ew_axpy(da->data(), 1.0, g.data(), numel);
            if (auto* ds = in_grad(1)) {
                const size_t m = in_node(1).value.numel();
                const size_t b = numel / m;
                for (size_t bi = 0; bi < b; ++bi)
                    for (size_t j = 0; j < m; ++j) (*ds)[j] += g[bi * m + j];
            }
            break;
        }
        case OpKind::MatMul: {
            const Node& a = in_node(0);
            const Node& b = in_node(1);
            const Shape& sa = a.value.shape;
            const Shape& sb = b.value.shape;
            const size_t m = sa[sa.size() - 2];
            const size_t kk = sa[sa.size() - 1];
            const size_t nn2 = sb[sb.size() - 1];
            const size_t batch = lead_prod(sa, 2);
            const bool b_shared = sb.size() == 2 && sa.size() > 2;
            if (auto* da = in_grad(0)) {
                // dA += G * B^T
                std::vector<double> tmp(a.value.numel());
                kernels::matmul_nt(tmp.data(), g.data(), b.value.data.data(), batch, m, nn2,
                                   kk, m * nn2, b_shared ? 0 : kk * nn2);
                kernels::ew_axpy(da->data(), 1.0, tmp.data(), tmp.size());
            }
            if (auto* db = in_grad(1)) {
                // dB += A^T * G
                if (b_shared) {
                    std::vector<double> tmp(b.value.numel());
                    kernels::matmul_tn_acc(tmp.data(), a.value.data.data(), g.data(), batch, m,
                                           kk, nn2);
                    kernels::ew_axpy(db->data(), 1.0, tmp.data(), tmp.size());
                } else {
                    std::vector<double> tmp(b.value.numel());
                    kernels::matmul_tn(tmp.data(), a.value.data.data(), g.data(), batch, m, kk,
                                       nn2, m * kk, m * nn2);
                    kernels::ew_axpy(db->data(), 1.0, tmp.data(), tmp.size());
                }
            }
            break;
        }
        case OpKind::TransposeLast2: {
            if (auto* da = in_grad(0)) {
                const Shape& so = n.value.shape;
                std::vector<double> tmp(numel);
                kernels::transpose_last2(tmp.data(), g.data(), lead_prod(so, 2),
                                         so[so.size() - 2], so[so.size() - 1]);
                kernels::ew_axpy(da->data(), 1.0, tmp.data(), numel);
            }
            break;
        }
        case OpKind::Reshape: {
            if (auto* da = in_grad(0)) kernels::ew_axpy(da->data(), 1.0, g.data(), numel);
            break;
        }
        case OpKind::SplitHeads: {
            if (auto* da = in_grad(0)) {
                const Shape& so = n.value.shape; // [B,H,N,dk]
                std::vector<double> tmp(numel);
                kernels::merge_heads(tmp.data(), g.data(), so[0], so[2], so[1], so[3]);
                kernels::ew_axpy(da->data(), 1.0, tmp.data(), numel);
            }
            break;
        }
        case OpKind::MergeHeads: {
            if (auto* da = in_grad(0)) {
                const Shape& si = in_node(0).value.shape; // [B,H,N,dk]
                std::vector<double> tmp(numel);
                kernels::split_heads(tmp.data(), g.data(), si[0], si[2], si[1], si[3]);
                kernels::ew_axpy(da->data(), 1.0, tmp.data(), numel);
            }
            break;
        }
        case OpKind::Softmax: {
            if (auto* da = in_grad(0)) {
                const size_t cols = n.value.shape.back();
                kernels::softmax_bwd_acc(da->data(), g.data(), n.value.data.data(),
                                         numel / cols, cols);
            }
            break;
        }
        case OpKind::Sigmoid: {
            if (auto* da = in_grad(0)) {
                const auto& y = n.value.data;
                for (size_t i = 0; i < numel; ++i) (*da)[i] += g[i] * y[i] * (1.0 - y[i]);
            }
            break;
        }
        case OpKind::Gelu: {
            if (auto* da = in_grad(0))
                kernels::gelu_bwd_acc(da->data(), g.data(), in_node(0).value.data.data(),
                                      numel);
            break;
        }
        case OpKind::LayerNorm: {
            const size_t d = n.value.shape.back();
            const size_t rows = numel / d;
            std::vector<double> dg_local(d, 0.0), db_local(d, 0.0);
            std::vector<double> dx_local(numel, 0.0);
            kernels::layernorm_bwd_acc(dx_local.data(), dg_local.data(), db_local.data(),
                                       g.data(), n.saved.data(), n.saved2.data(),
                                       in_node(1).value.data.data(), rows, d);
            if (auto* dx = in_grad(0)) kernels::ew_axpy(dx->data(), 1.0, dx_local.data(), numel);
            if (auto* dgm = in_grad(1)) kernels::ew_axpy(dgm->data(), 1.0, dg_local.data(), d);
            if (auto* dbt = in_grad(2)) kernels::ew_axpy(dbt->data(), 1.0, db_local.data(), d);
            break;
        }
        case OpKind::Dropout: {
            if (auto* da = in_grad(0))
                for (size_t i = 0; i < numel; ++i) (*da)[i] += g[i] * n.saved[i];
            break;
        }
        case OpKind::CosineRows: {
            const Node& a = in_node(0);
            const Node& b = in_node(1);
            const size_t rows = n.value.numel();
            const size_t d = a.value.shape[1];
            auto* da = in_grad(0);
            auto* db = in_grad(1);
            for (size_t r = 0; r < rows; ++r) {
                const double na_ = n.saved[r];
                const double nb_ = n.saved[rows + r];
                const double cs = n.saved[2 * rows + r];
                if (na_ < 1e-12 || nb_ < 1e-12) continue; // floored: zero gradient
                const double gr = g[r];
                const double* av = a.value.data.data() + r * d;
                const double* bv = b.value.data.data() + r * d;
                if (da)
                    for (size_t j = 0; j < d; ++j)
                        (*da)[r * d + j] +=
                            gr * (bv[j] / (na_ * nb_) - cs * av[j] / (na_ * na_));
                if (db)
                    for (size_t j = 0; j < d; ++j)
                        (*db)[r * d + j] +=
                            gr * (av[j] / (na_ * nb_) - cs * bv[j] / (nb_ * nb_));
            }
            break;
        }
        case OpKind::SumAll: {
            if (auto* da = in_grad(0)) {
                const double gv = g[0];
                auto& buf = *da;
                for (double& x : buf) x += gv;
            }
            break;
        }
        case OpKind::MeanAll: {
            if (auto* da = in_grad(0)) {
                const double gv = g[0] / static_cast<double>(in_node(0).value.numel());
                auto& buf = *da;
                for (double& x : buf) x += gv;
            }
            break;
        }
        case OpKind::Concat: {
            const size_t axis = static_cast<size_t>(n.i0);
            const Shape& sa = in_node(0).value.shape;
            const Shape& sb = in_node(1).value.shape;
            size_t outer = 1;
            for (size_t i = 0; i < axis; ++i) outer *= sa[i];
            size_t inner_a = 1, inner_b = 1;
            for (size_t i = axis; i < sa.size(); ++i) inner_a *= sa[i];
            for (size_t i = axis; i < sb.size(); ++i) inner_b *= sb[i];
            auto* da = in_grad(0);
            auto* db = in_grad(1);
            for (size_t o = 0; o < outer; ++o) {
                const double* src = g.data() + o * (inner_a + inner_b);
                if (da)
                    for (size_t i = 0; i < inner_a; ++i) (*da)[o * inner_a + i] += src[i];
                if (db)
                    for (size_t i = 0; i < inner_b; ++i)
                        (*db)[o * inner_b + i] += src[inner_a + i];
            }
            break;
        }
        case OpKind::AttentionCore: {
            const Node& q = in_node(0);
            const Node& k = in_node(1);
            const Node& v = in_node(2);
            const Shape& s = n.value.shape;
            const size_t slabs = s[0] * s[1];
            const size_t nt = s[2];
            const size_t dk = s[3];
            const double* maps = n.saved.data();
            // dV += P^T G
            if (auto* dv = in_grad(2)) {
                std::vector<double> tmp(v.value.numel());
                kernels::matmul_tn(tmp.data(), maps, g.data(), slabs, nt, nt, dk, nt * nt,
                                   nt * dk);
                kernels::ew_axpy(dv->data(), 1.0, tmp.data(), tmp.size());
            }
            auto* dq = in_grad(0);
            auto* dkk = in_grad(1);
            if (dq || dkk) {
                // dP = G V^T, then dS by variant, then dQ/dK.
                std::vector<double> dp(slabs * nt * nt);
                kernels::matmul_nt(dp.data(), g.data(), v.value.data.data(), slabs, nt, dk, nt,
                                   nt * dk, nt * dk);
                if (n.i0 == 0) {
                    // dS = (dP - rowdot(dP,P)) * P; zeros stay zero at masked entries.
                    std::vector<double> ds(dp.size(), 0.0);
                    kernels::softmax_bwd_acc(ds.data(), dp.data(), maps, slabs * nt, nt);
                    dp.swap(ds);
                } else {
                    // dS = dP * P * (1 - P); P is zero at masked entries.
                    for (size_t i = 0; i < dp.size(); ++i)
                        dp[i] *= maps[i] * (1.0 - maps[i]);
                }
                kernels::ew_scale(dp.data(), dp.data(), n.a0, dp.size());
                if (dq) {
                    std::vector<double> tmp(q.value.numel());
                    kernels::matmul_nn(tmp.data(), dp.data(), k.value.data.data(), slabs, nt,
                                       nt, dk, nt * nt, nt * dk);
                    kernels::ew_axpy(dq->data(), 1.0, tmp.data(), tmp.size());
                }
                if (dkk) {
                    std::vector<double> tmp(k.value.numel());
                    kernels::matmul_tn(tmp.data(), dp.data(), q.value.data.data(), slabs, nt,
                                       nt, dk, nt * nt, nt * dk);
                    kernels::ew_axpy(dkk->data(), 1.0, tmp.data(), tmp.size());
                }
            }
            break;
        }
        }
        if (n.kind != OpKind::Leaf) {
            g.clear();
            g.shrink_to_fit();
        }
    }
}

} // namespace sbk
