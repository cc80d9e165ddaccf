#include "sbk/attention.hpp"

#include <cmath>
#include <string>

namespace sbk {

void AttentionConfig::validate() const {
    if (n_heads == 0 || d_model == 0 || d_model % n_heads != 0)
        throw ParameterError("attention: d_model (" + std::to_string(d_model) +
                             ") must be divisible by n_heads (" + std::to_string(n_heads) +
                             ")");
    if (attn_dropout_rate < 0.0 || attn_dropout_rate >= 1.0)
        throw ParameterError("attention: attn_dropout_rate must be in [0,1)");
    if (neighbor_mask_radius && variant != AttentionVariant::Softmax)
        throw ParameterError("attention: neighbor masking is defined on normalized "
                             "(softmax) attention only");
}

AttentionMask build_gsm_mask(size_t n, bool self_mask, double dropout_rate, bool training,
                             RandomState rng) {
    if (n < 1) throw ParameterError("build_gsm_mask: n must be >= 1");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw ParameterError("build_gsm_mask: dropout_rate must be in [0,1)");
    AttentionMask m;
    m.n = n;
    if (!self_mask && (!training || dropout_rate == 0.0)) return m; // no-op mask
    m.keep.assign(n * n, 1);
    if (self_mask)
        for (size_t i = 0; i < n; ++i) m.keep[i * n + i] = 0;
    if (training && dropout_rate > 0.0) {
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                if (rng.next_uniform() < dropout_rate) m.keep[i * n + j] = 0;
            }
    }
    return m;
}

AttentionMask build_neighbor_mask(size_t grid_h, size_t grid_w, int radius) {
    if (radius < 0) throw ParameterError("build_neighbor_mask: radius must be >= 0");
    const size_t n = grid_h * grid_w;
    AttentionMask m;
    m.n = n;
    m.keep.assign(n * n, 1);
    for (size_t a = 0; a < n; ++a) {
        const long ra = static_cast<long>(a / grid_w);
        const long ca = static_cast<long>(a % grid_w);
        bool any = false;
        for (size_t b = 0; b < n; ++b) {
            const long rb = static_cast<long>(b / grid_w);
            const long cb = static_cast<long>(b % grid_w);
            const long cheb = std::max(std::labs(ra - rb), std::labs(ca - cb));
            if (cheb <= radius)
                m.keep[a * n + b] = 0;
            else
                any = true;
        }
        if (!any)
            throw ContractError("neighbor mask radius " + std::to_string(radius) +
                                " masks the entire attention row of token " +
                                std::to_string(a));
    }
    return m;
}

AttentionMask combine_masks(const AttentionMask& a, const AttentionMask& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    if (a.n != b.n) throw DimensionError("combine_masks: size mismatch");
    AttentionMask m;
    m.n = a.n;
    m.keep.resize(a.keep.size());
    for (size_t i = 0; i < a.keep.size(); ++i) m.keep[i] = a.keep[i] & b.keep[i];
    return m;
}

Var attention_forward(Graph& g, Var q, Var k, Var v, const AttentionConfig& cfg,
                      bool training, RandomState rng, const AttentionMask* static_mask) {
    cfg.validate();
    const Shape s = g.shape(q);
    if (s.size() != 4)
        throw DimensionError("attention_forward: want [B,H,N,dk], got " + shape_str(s));
    const size_t n = s[2];
    if (cfg.self_mask && n < 2)
        throw ContractError("attention_forward: self-masking with N < 2 leaves every row "
                            "fully masked");
    AttentionMask mask =
        build_gsm_mask(n, cfg.self_mask, cfg.attn_dropout_rate, training, rng);
    if (static_mask != nullptr) mask = combine_masks(mask, *static_mask);
    const int variant = cfg.variant == AttentionVariant::Softmax ? 0 : 1;
    Var out = g.attention_core(q, k, v, mask.keep, variant);
    if (cfg.variant == AttentionVariant::Sigmoid &&
        cfg.output_scale_mode == OutputScaleMode::DivideByN)
        out = g.mul_scalar(out, 1.0 / static_cast<double>(n));
    return out;
}

EntropyStats attention_entropy_stats(const Tensor& map) {
    if (map.ndim() != 2) throw DimensionError("attention_entropy_stats: want a 2D map");
    const size_t rows = map.shape[0];
    const size_t cols = map.shape[1];
    EntropyStats st;
    size_t used = 0;
    for (size_t r = 0; r < rows; ++r) {
        double sum = 0.0;
        for (size_t c = 0; c < cols; ++c) {
            const double v = map.data[r * cols + c];
            if (v < 0.0)
                throw ContractError("attention_entropy_stats: map must be nonnegative");
            sum += v;
        }
        if (sum == 0.0) {
            ++st.excluded_rows;
            continue;
        }
        double ent = 0.0, mx = 0.0;
        for (size_t c = 0; c < cols; ++c) {
            const double p = map.data[r * cols + c] / sum;
            if (p > 0.0) ent -= p * std::log(p);
            mx = std::max(mx, p);
        }
        st.mean_row_entropy += ent;
        st.max_row_mass += mx;
        ++used;
    }
    if (used > 0) {
        st.mean_row_entropy /= static_cast<double>(used);
        st.max_row_mass /= static_cast<double>(used);
    }
    return st;
}

} // namespace sbk
