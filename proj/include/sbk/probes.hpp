#pragma once

#include <string>
#include <vector>

#include "sbk/metrics.hpp"
#include "sbk/train.hpp"

namespace sbk {

// ---- Jacobian rank probe -------------------------------------------------

struct RankTrial {
    std::vector<double> singular_values; // descending
    size_t numerical_rank = 0;           // sigma_j / sigma_1 > 1e-6
    double sigma_ratio = 0.0;            // sigma_{bound+1} / sigma_1 (0 if bound >= D)
    double jacobian_agreement = 0.0;     // max scaled error, FD vs reverse rows
};

struct RankProbeReport {
    size_t dim = 0;
    size_t bound = 0; // N*d / 2^depth_i
    std::vector<RankTrial> trials;
    bool pass = false; // every trial's numerical rank <= bound
};

// LRNB at inference over [1, n_tokens, d]; n_inputs random inputs for each of
// n_param_draws random parameter settings. Refuses D > 4096.
RankProbeReport rank_probe_lrnb(const LrnbConfig& cfg, size_t n_tokens, size_t n_inputs,
                                size_t n_param_draws, uint64_t seed);

// Controls: identity map (full rank) and a linear rank-k factorization.
RankProbeReport rank_probe_identity(size_t dim, uint64_t seed);
RankProbeReport rank_probe_linear(size_t dim, size_t k, uint64_t seed);

// ---- Attention spreading probe (softmax vs sigmoid on peaked maps) --------

struct SpreadTrial {
    double softmax_entropy, sigmoid_entropy;
    double softmax_max_mass, sigmoid_max_mass;
};

struct SpreadProbeReport {
    std::vector<SpreadTrial> trials;
    size_t sigmoid_entropy_wins = 0;  // trials with H(sigmoid) > H(softmax)
    size_t softmax_mass_wins = 0;     // trials with maxmass(softmax) > maxmass(sigmoid)
    Tensor raw_panel, softmax_panel, sigmoid_panel; // first-trial grids
};

Tensor gaussian_peak_scores(size_t grid_h, size_t grid_w, double peak, double sigma,
                            size_t peak_r, size_t peak_c);

SpreadProbeReport attention_spread_probe(size_t grid_h, size_t grid_w, double peak,
                                         double sigma, size_t n_trials, uint64_t seed);

// ---- Identity-mapping probe (loss + score-gap per bottleneck variant) -----

struct ScoreSummary {
    double mean_normal_image = 0, mean_abnormal_image = 0, image_gap_ratio = 0;
    double mean_normal_token = 0, mean_abnormal_token = 0, token_gap_ratio = 0;
};

ScoreSummary score_summary(const ModelConfig& cfg, const ParamStore& ps,
                           const std::vector<TokenBatch>& test_set);

struct IdentityVariantReport {
    BottleneckKind variant;
    std::vector<TrainRecordRow> loss_curve;
    double final_loss = 0;
    ScoreSummary scores;
};

struct IdentityProbeReport {
    std::vector<IdentityVariantReport> variants;
};

// Trains one model per variant on identical data and seed; the base model
// config supplies everything except the bottleneck kind. seed_index selects
// the paired dataset/train seeds so a multi-seed sweep stays deterministic.
IdentityProbeReport identity_probe(const std::vector<BottleneckKind>& variants,
                                   const SyntheticSpec& dspec, const ModelConfig& base,
                                   const TrainConfig& tcfg, uint64_t seed_index = 0);

// ---- Ablation grid (component-contribution table shape) -------------------

struct AblationCell {
    std::string label;
    bool lrnb = false, grd = false, gsm = false;
    std::vector<MetricsReport> per_seed;
    double mean(const double MetricsReport::* field) const;
    double stddev(const double MetricsReport::* field) const;
};

struct AblationReport {
    std::vector<AblationCell> table2; // 8 subset rows
    std::vector<AblationCell> table3; // bottleneck comparison, GPA decoder
    std::vector<AblationCell> table4; // decoder comparison, LRNB bottleneck
    size_t n_seeds = 0;
};

// Applies the component flags on top of `base`.
ModelConfig ablation_model(const ModelConfig& base, bool lrnb, bool grd, bool gsm);

AblationReport ablation_grid(const SyntheticSpec& dspec, const ModelConfig& base,
                             const TrainConfig& tcfg, size_t n_seeds, size_t jobs,
                             bool with_table3, bool with_table4);

// Shared by probes and the CLI: train/test split for one probe seed.
struct ProbeData {
    std::vector<TokenBatch> train;
    std::vector<TokenBatch> test;
};
ProbeData make_probe_data(const SyntheticSpec& dspec, uint64_t seed_index);

std::string ablation_csv(const std::vector<AblationCell>& cells);

} // namespace sbk
