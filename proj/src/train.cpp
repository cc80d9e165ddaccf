#include "sbk/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "sbk/jsonutil.hpp"

namespace sbk {

void TrainConfig::validate() const {
    std::string bad;
    auto flag = [&](const std::string& m) { bad += (bad.empty() ? "" : "; ") + m; };
    if (batch_size < 1) flag("batch_size must be >= 1");
    if (lr_end > lr_start) flag("lr_end must be <= lr_start");
    if (lr_start <= 0.0) flag("lr_start must be > 0");
    if (!(hard_mining_keep > 0.0) || hard_mining_keep > 1.0)
        flag("hard_mining_keep must be in (0,1]");
    if (weight_decay < 0.0) flag("weight_decay must be >= 0");
    if (warmup_steps > total_steps) flag("warmup_steps must be <= total_steps");
    if (log_interval < 1) flag("log_interval must be >= 1");
    if (!bad.empty()) throw ParameterError("train config invalid: " + bad);
}

nlohmann::ordered_json TrainConfig::to_json() const {
    nlohmann::ordered_json j;
    j["version"] = 1;
    j["batch_size"] = batch_size;
    j["total_steps"] = total_steps;
    j["lr_start"] = lr_start;
    j["lr_end"] = lr_end;
    j["warmup_steps"] = warmup_steps;
    j["hard_mining_keep"] = hard_mining_keep;
    j["weight_decay"] = weight_decay;
    j["amsgrad"] = amsgrad;
    j["seed"] = seed;
    j["log_interval"] = log_interval;
    return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::ordered_json& j) {
    check_config_keys(j,
                      {"version", "batch_size", "total_steps", "lr_start", "lr_end",
                       "warmup_steps", "hard_mining_keep", "weight_decay", "amsgrad", "seed",
                       "log_interval"},
                      "train config");
    TrainConfig c;
    c.batch_size = json_get<size_t>(j, "batch_size", c.batch_size);
    c.total_steps = json_get<size_t>(j, "total_steps", c.total_steps);
    c.lr_start = json_get<double>(j, "lr_start", c.lr_start);
    c.lr_end = json_get<double>(j, "lr_end", c.lr_end);
    c.warmup_steps = json_get<size_t>(j, "warmup_steps", c.warmup_steps);
    c.hard_mining_keep = json_get<double>(j, "hard_mining_keep", c.hard_mining_keep);
    c.weight_decay = json_get<double>(j, "weight_decay", c.weight_decay);
    c.amsgrad = json_get<bool>(j, "amsgrad", c.amsgrad);
    c.seed = json_get<uint64_t>(j, "seed", c.seed);
    c.log_interval = json_get<size_t>(j, "log_interval", c.log_interval);
    c.validate();
    return c;
}

namespace {

Var token_distances(Graph& g, Var recon, Var target) {
    const Shape s = g.shape(recon);
    if (s != g.shape(target))
        throw DimensionError("cosine loss: shape mismatch " + shape_str(s) + " vs " +
                             shape_str(g.shape(target)));
    const size_t d = s.back();
    const size_t rows = shape_numel(s) / d;
    Var r2 = g.reshape(recon, {rows, d});
    Var t2 = g.reshape(target, {rows, d});
    // 1 - CS per token
    return g.add_scalar(g.mul_scalar(g.cosine_rows(r2, t2), -1.0), 1.0);
}

} // namespace

Var hard_mining_cosine_loss(Graph& g, Var recon, Var target, double keep) {
    if (!(keep > 0.0) || keep > 1.0)
        throw ParameterError("hard_mining_cosine_loss: keep must be in (0,1]");
    Var dist = token_distances(g, recon, target);
    const size_t n = g.value(dist).numel();
    if (keep >= 1.0) return g.mean_all(dist);
    const size_t k = std::max<size_t>(
        1, static_cast<size_t>(std::llround(keep * static_cast<double>(n))));
    if (k >= n) return g.mean_all(dist);
    // Select the k hardest tokens on values; gradient flows only into them.
    const auto& dv = g.value(dist).data;
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::nth_element(idx.begin(), idx.begin() + static_cast<long>(k - 1), idx.end(),
                     [&](size_t a, size_t b) {
                         if (dv[a] != dv[b]) return dv[a] > dv[b];
                         return a < b;
                     });
    Tensor w(Shape{n}, 0.0);
    for (size_t i = 0; i < k; ++i) w.data[idx[i]] = 1.0;
    Var weighted = g.mul(dist, g.leaf(std::move(w), false));
    return g.mul_scalar(g.sum_all(weighted), 1.0 / static_cast<double>(k));
}

Var mean_cosine_distance(Graph& g, Var recon, Var target) {
    return g.mean_all(token_distances(g, recon, target));
}

double lr_at(size_t step, const TrainConfig& cfg) {
    if (step > cfg.total_steps)
        throw ContractError("lr_at: step " + std::to_string(step) + " beyond total_steps");
    if (step < cfg.warmup_steps)
        return cfg.lr_start * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    const size_t span = cfg.total_steps - cfg.warmup_steps;
    if (span == 0) return cfg.lr_end;
    const double progress =
        static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(span);
    return cfg.lr_end +
           0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + std::cos(3.14159265358979323846 * progress));
}

void optimizer_step(ParamStore& ps, const std::map<std::string, std::vector<double>>& grads,
                    AdamState& state, const TrainConfig& cfg, size_t step) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    const double lr = lr_at(step, cfg);
    const auto& names = ps.names();
    if (state.slots.empty()) {
        state.slots.resize(names.size());
        for (size_t i = 0; i < names.size(); ++i) {
            const size_t n = ps.at(names[i]).numel();
            state.slots[i].m.assign(n, 0.0);
            state.slots[i].v.assign(n, 0.0);
            state.slots[i].vmax.assign(n, 0.0);
        }
    }
    // Abort before touching any parameter if some gradient is non-finite.
    for (const auto& name : names) {
        auto it = grads.find(name);
        if (it == grads.end()) continue;
        for (double v : it->second)
            if (!std::isfinite(v))
                throw NumericError("non-finite gradient for parameter " + name);
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < names.size(); ++i) {
        auto it = grads.find(names[i]);
        if (it == grads.end()) continue;
        const auto& gr = it->second;
        Tensor& p = ps.at(names[i]);
        auto& slot = state.slots[i];
        for (size_t e = 0; e < gr.size(); ++e) {
            if (cfg.weight_decay > 0.0) p.data[e] -= lr * cfg.weight_decay * p.data[e];
            slot.m[e] = beta1 * slot.m[e] + (1.0 - beta1) * gr[e];
            slot.v[e] = beta2 * slot.v[e] + (1.0 - beta2) * gr[e] * gr[e];
            const double mhat = slot.m[e] / bc1;
            const double vhat = slot.v[e] / bc2;
            double denom_sq = vhat;
            if (cfg.amsgrad) {
                slot.vmax[e] = std::max(slot.vmax[e], vhat);
                denom_sq = slot.vmax[e];
            }
            double upd = lr * mhat / (std::sqrt(denom_sq) + eps);
            upd = std::clamp(upd, -lr, lr);
            p.data[e] -= upd;
        }
    }
}

TrainResult train(const ModelConfig& mcfg, const std::vector<TokenBatch>& dataset,
                  const TrainConfig& cfg) {
    mcfg.validate();
    cfg.validate();
    if (dataset.empty()) throw ContractError("train: empty dataset");
    for (const auto& b : dataset)
        if (b.any_anomalous())
            throw ContractError("train: training data must be all-normal");
    const TokenBatch all = merge_batches(dataset);

    TrainResult res;
    register_model_params(res.params, mcfg);
    init_params(res.params, cfg.seed);
    AdamState state;
    auto root = RandomState::from_seed(cfg.seed);

    for (size_t step = 0; step < cfg.total_steps; ++step) {
        auto srng = root.split(step);
        std::vector<size_t> idx(cfg.batch_size);
        for (auto& i : idx) i = srng.next_u64() % all.batch();
        const TokenBatch batch = select_samples(all, idx);

        Graph g;
        BoundParams bp = bind_params(g, res.params, true);
        auto fr = model_forward(g, batch, mcfg, bp, true, srng.split(1));
        Var loss =
            hard_mining_cosine_loss(g, fr.reconstructed, fr.target_leaf, cfg.hard_mining_keep);
        Var mean_dist = mean_cosine_distance(g, fr.reconstructed, fr.target_leaf);
        const double loss_v = g.value(loss).data[0];
        const double dist_v = g.value(mean_dist).data[0];
        g.backward(loss);

        std::map<std::string, std::vector<double>> grads;
        for (const auto& name : res.params.names())
            if (g.has_grad(bp(name))) grads.emplace(name, g.grad(bp(name)));
        optimizer_step(res.params, grads, state, cfg, step);

        if ((step + 1) % cfg.log_interval == 0)
            res.log.push_back(TrainRecordRow{step + 1, lr_at(step, cfg), loss_v, dist_v});
    }
    return res;
}

std::string train_log_csv(const std::vector<TrainRecordRow>& log) {
    std::string out = "step,lr,loss,mean_normal_distance\n";
    char buf[160];
    for (const auto& r : log) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", r.step, r.lr, r.loss,
                      r.mean_normal_distance);
        out += buf;
    }
    return out;
}

} // namespace sbk
