#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sbk/model.hpp"

namespace sbk {

struct TrainConfig {
    size_t batch_size = 32;
    size_t total_steps = 5000;
    double lr_start = 2e-3;
    double lr_end = 2e-4;
    size_t warmup_steps = 100;
    double hard_mining_keep = 0.9; // fraction of hardest tokens kept
    double weight_decay = 1e-4;
    bool amsgrad = true;
    uint64_t seed = 0;
    size_t log_interval = 50;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static TrainConfig from_json(const nlohmann::ordered_json& j);
};

// Per-token distance 1 - CS, pooled globally over the batch; only the `keep`
// fraction with the largest distance contributes value and gradient. Ties at
// the cut are resolved by token index, so the selection is deterministic.
Var hard_mining_cosine_loss(Graph& g, Var recon, Var target, double keep);

// Mean 1 - CS over all tokens (the keep = 1 view, logged during training).
Var mean_cosine_distance(Graph& g, Var recon, Var target);

// Warm-start linear ramp to lr_start over warmup_steps, then cosine decay to
// exactly lr_end at total_steps.
double lr_at(size_t step, const TrainConfig& cfg);

// AdamW with decoupled weight decay, optional AMSGrad maximum second moment,
// and elementwise update clipping at +-lr as the stability safeguard.
struct AdamState {
    struct Slot {
        std::vector<double> m, v, vmax;
    };
    std::vector<Slot> slots; // aligned with ParamStore order
    size_t t = 0;
};

void optimizer_step(ParamStore& ps, const std::map<std::string, std::vector<double>>& grads,
                    AdamState& state, const TrainConfig& cfg, size_t step);

struct TrainRecordRow {
    size_t step;
    double lr;
    double loss;
    double mean_normal_distance;
};

struct TrainResult {
    ParamStore params;
    std::vector<TrainRecordRow> log;
};

// Trains on an all-normal dataset (anomalous samples are a contract error).
// Deterministic given cfg.seed.
TrainResult train(const ModelConfig& mcfg, const std::vector<TokenBatch>& dataset,
                  const TrainConfig& cfg);

std::string train_log_csv(const std::vector<TrainRecordRow>& log);

} // namespace sbk
