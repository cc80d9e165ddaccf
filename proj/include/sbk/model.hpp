#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "sbk/attention.hpp"
#include "sbk/bottleneck.hpp"
#include "sbk/params.hpp"
#include "sbk/synthetic.hpp"

namespace sbk {

// Full model: fuse -> bottleneck variant -> pre-norm transformer decoder.
// Defaults are the complete method: LRNB bottleneck and the perturbation
// attention (sigmoid redistribution, self mask, attention dropout 0.1).
struct ModelConfig {
    size_t d_model = 64;
    size_t n_heads = 4;
    size_t decoder_depth = 4;
    AttentionConfig attention{64,   4,   AttentionVariant::Sigmoid, true,
                              0.1,  {},  OutputScaleMode::DivideByN};
    BottleneckKind bottleneck = BottleneckKind::LRNB;
    LrnbConfig lrnb;
    std::vector<size_t> fusion_layers; // empty = fuse every encoder layer

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static ModelConfig from_json(const nlohmann::ordered_json& j);
};

// Registers every trainable tensor (decoder layers, plus LRNB blocks when
// that variant is active) in a stable order.
void register_model_params(ParamStore& ps, const ModelConfig& cfg);

// Fixed sinusoidal position table [n, d]; added to the attention q/k inputs
// (not to the residual stream).
Tensor sinusoidal_positions(size_t n, size_t d);

struct ForwardResult {
    Var reconstructed; // [B, N, d]
    Var target_leaf;   // same shape, requires_grad == false (frozen targets)
};

// Builds the forward graph for one batch. The reconstruction target is the
// fused encoder features, detached; all stochastic elements are off when
// training == false.
ForwardResult model_forward(Graph& g, const TokenBatch& batch, const ModelConfig& cfg,
                            const BoundParams& params, bool training, RandomState rng);

// Convenience inference pass (no gradients, deterministic).
struct InferenceOutput {
    Tensor reconstructed; // [B, N, d]
    Tensor target;        // [B, N, d]
};
InferenceOutput run_inference(const TokenBatch& batch, const ModelConfig& cfg,
                              const ParamStore& ps);

// Checkpoint container ("SBM1"): config JSON + named f64 parameter payload.
void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ParamStore& ps);
struct Checkpoint {
    ModelConfig config;
    ParamStore params;
};
Checkpoint load_checkpoint(const std::string& path);

} // namespace sbk
