#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "sbk/rng.hpp"
#include "sbk/tensor.hpp"

namespace sbk {

enum class AnomalyKind { PatchSwap, OffManifold, Amplitude };

AnomalyKind anomaly_kind_from_string(const std::string& s);
std::string to_string(AnomalyKind k);

// Generative law for the synthetic multi-class "encoder feature" benchmark.
// Every draw is a pure function of (seed, class, sample index), so parallel
// and serial generation agree bitwise.
struct SyntheticSpec {
    size_t n_classes = 8;
    size_t grid_h = 8;
    size_t grid_w = 8;
    size_t d_model = 64;
    size_t manifold_rank = 6;
    double smoothness = 1.5;       // spatial correlation length, in tokens
    double normal_noise_std = 0.05;
    std::vector<AnomalyKind> anomaly_kinds = {AnomalyKind::PatchSwap,
                                              AnomalyKind::OffManifold,
                                              AnomalyKind::Amplitude};
    double anomaly_area_min = 0.06; // fraction of the grid
    double anomaly_area_max = 0.20;
    size_t n_encoder_layers = 2;
    uint64_t seed = 1;
    // record counts used by the gen command
    size_t train_per_class = 48;
    size_t test_normal_per_class = 16;
    size_t test_anomalous_per_class = 16;

    size_t tokens() const { return grid_h * grid_w; }
    void validate() const; // throws ParameterError listing every bad field

    nlohmann::ordered_json to_json() const;
    static SyntheticSpec from_json(const nlohmann::ordered_json& j);
};

// A batch of samples: per-encoder-layer token tensors plus ground truth.
struct TokenBatch {
    std::vector<Tensor> layers;        // n_layers x [B, N, d]
    std::vector<int> class_ids;        // B
    std::vector<uint8_t> anomaly_mask; // B * N, row-major over the grid
    std::vector<uint8_t> image_label;  // B, OR over the sample's mask
    size_t grid_h = 0, grid_w = 0;

    size_t batch() const { return class_ids.size(); }
    size_t tokens() const { return grid_h * grid_w; }
    bool any_anomalous() const;
    void validate() const; // shape and mask/label consistency invariants
};

// Fixed per-(seed, class) generative fixtures, recomputable anywhere.
struct ClassModel {
    Tensor anchor;              // [d]
    Tensor basis;               // [d, rank], orthonormal columns
};
ClassModel class_model(const SyntheticSpec& spec, int class_id);

// Per-layer fixed affine "encoder" maps shared by all classes.
struct LayerModel {
    Tensor w; // [d, d]
    Tensor b; // [d]
};
LayerModel layer_model(const SyntheticSpec& spec, size_t layer);

// Unit vector orthogonal to every basis column (the OffManifold direction).
std::vector<double> off_manifold_direction(const ClassModel& cm, RandomState rng);

// All-normal batch for one class. Sample i derives its stream from
// rng.split(i); tokens are quantized to f32 so container round-trips are
// bitwise lossless.
TokenBatch generate_normal(const SyntheticSpec& spec, int class_id, size_t count,
                           RandomState rng);

// Injects one anomaly per sample into an all-normal batch: a random
// rectangle whose area is the nearest realizable to a uniform draw in
// [area_min, area_max], with one kind applied inside it.
TokenBatch inject_anomaly(const TokenBatch& batch, const SyntheticSpec& spec, RandomState rng);

// Concatenate batches (equal grid/layer structure) and row-select samples.
TokenBatch merge_batches(const std::vector<TokenBatch>& batches);
TokenBatch select_samples(const TokenBatch& b, const std::vector<size_t>& idx);

// Dataset container I/O ("SBK1"). Lossless round-trip; see README for the
// byte layout.
void write_dataset(const std::vector<TokenBatch>& batches, const std::string& path,
                   const SyntheticSpec* spec = nullptr);
std::vector<TokenBatch> read_dataset(const std::string& path);

} // namespace sbk
