#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "sbk/graph.hpp"
#include "sbk/rng.hpp"

namespace sbk {

enum class AttentionVariant { Softmax, Sigmoid };
enum class OutputScaleMode { None, DivideByN };

// Decoder attention settings. variant=Sigmoid is the global-redistribution
// replacement for softmax; self_mask plus attn_dropout_rate form global-self
// masking; neighbor_mask_radius switches on the NMA comparison baseline.
struct AttentionConfig {
    size_t d_model = 64;
    size_t n_heads = 4;
    AttentionVariant variant = AttentionVariant::Softmax;
    bool self_mask = false;
    double attn_dropout_rate = 0.0;
    std::optional<int> neighbor_mask_radius;
    OutputScaleMode output_scale_mode = OutputScaleMode::None;

    size_t d_k() const { return d_model / n_heads; }
    void validate() const;
};

struct AttentionMask {
    size_t n = 0;
    std::vector<uint8_t> keep; // n*n, 1 = attend; empty = no mask
    bool empty() const { return keep.empty(); }
};

// Diagonal mask (when self_mask) plus, at training time only, independent
// off-diagonal drops with probability dropout_rate.
AttentionMask build_gsm_mask(size_t n, bool self_mask, double dropout_rate, bool training,
                             RandomState rng);

// Token (r,c) may not attend to any token within Chebyshev distance <= radius
// of itself (its own position included). Throws ContractError if some row
// would be masked entirely.
AttentionMask build_neighbor_mask(size_t grid_h, size_t grid_w, int radius);

// Elementwise AND of two keep-masks.
AttentionMask combine_masks(const AttentionMask& a, const AttentionMask& b);

// Scaled dot-product attention over [B,H,N,dk] operands. Builds the GSM mask
// from cfg per forward pass; `static_mask` (the NMA baseline) is ANDed in
// when given. Softmax renormalizes over surviving entries; Sigmoid masks by
// plain multiplication and optionally divides by N.
Var attention_forward(Graph& g, Var q, Var k, Var v, const AttentionConfig& cfg,
                      bool training, RandomState rng,
                      const AttentionMask* static_mask = nullptr);

struct EntropyStats {
    double mean_row_entropy = 0.0; // nats, rows normalized to sum 1
    double max_row_mass = 0.0;     // mean over rows of the largest normalized entry
    size_t excluded_rows = 0;      // all-zero rows skipped
};

// Row statistics of a nonnegative [N,M] map.
EntropyStats attention_entropy_stats(const Tensor& map);

} // namespace sbk
