#pragma once

#include <string>
#include <vector>

#include "sbk/graph.hpp"
#include "sbk/params.hpp"
#include "sbk/rng.hpp"

namespace sbk {

enum class BottleneckKind { None, FeatureJitter, DropoutOnly, LRNB };

BottleneckKind bottleneck_kind_from_string(const std::string& s);
std::string to_string(BottleneckKind k);

struct LrnbConfig {
    size_t d_model = 64;
    size_t depth_i = 2;       // number of down blocks == number of up blocks
    double noise_rate = 0.1;  // dropout probability and gaussian scale factor
    bool gaussian_noise = true;

    void validate() const;
};

// Per-layer plain layer norm (unit gain, zero shift) averaged elementwise.
// The target path is frozen, so this is value-level math.
Tensor fuse_multiscale(const std::vector<Tensor>& features, double eps = 1e-6);

// Registers the g/f block parameters under `prefix` ("<prefix>.down0.ln.gamma",
// "<prefix>.down0.w", ... , "<prefix>.up{i-1}.b").
void register_lrnb_params(ParamStore& ps, const LrnbConfig& cfg, const std::string& prefix);

// Pairwise token merge: [B,N,d] -> [B,N/2,d]. Adjacent pairs are viewed as a
// 2d vector, layer-normed, mapped by a learned affine, and passed through GELU.
Var down_block(Graph& g, Var x, const BoundParams& p, const std::string& prefix);

// Token doubling: [B,M,d] -> [B,2M,d] via layer norm, affine to 2d, GELU,
// then a split into two consecutive tokens.
Var up_block(Graph& g, Var x, const BoundParams& p, const std::string& prefix);

// Full bottleneck: input dropout (training), optional additive gaussian noise
// with per-feature std = noise_rate * batch std of that feature (training),
// then depth_i down blocks and depth_i up blocks.
Var lrnb_forward(Graph& g, Var x, const BoundParams& p, const std::string& prefix,
                 const LrnbConfig& cfg, bool training, RandomState rng);

// UniAD-style jitter baseline: additive gaussian noise, per-token std
// scale * ||token||_2 / d at training time, identity at inference.
Var feature_jitter(Graph& g, Var x, double scale, bool training, RandomState rng);

} // namespace sbk
