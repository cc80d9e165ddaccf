#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "sbk/model.hpp"
#include "sbk/synthetic.hpp"
#include "sbk/tensor.hpp"

namespace sbk {

// Threshold convention everywhere: a score s is predicted positive at
// threshold t iff s >= t, with thresholds taken at distinct score values and
// ties grouped, so no result depends on sample order.

struct AnomalyResult {
    Tensor map;         // [h, w], values 1 - CS in [0, 2]
    double image_score; // max over the map
};

// Per-sample token anomaly maps. Optional gaussian smoothing is off by
// default and exists only for parity experiments.
std::vector<AnomalyResult> anomaly_map(const Tensor& recon, const Tensor& target,
                                       size_t grid_h, size_t grid_w,
                                       double smooth_sigma = 0.0);

struct RocPoint {
    double threshold, fpr, tpr;
};
struct PrPoint {
    double threshold, recall, precision;
};
struct ProPoint {
    double threshold, fpr, pro;
};

std::vector<RocPoint> roc_curve(const std::vector<double>& scores,
                                const std::vector<uint8_t>& labels);

// Mann-Whitney AUROC: P(score_pos > score_neg) + 0.5 P(tie).
double auroc(const std::vector<double>& scores, const std::vector<uint8_t>& labels);

double average_precision(const std::vector<double>& scores,
                         const std::vector<uint8_t>& labels);

double f1_max(const std::vector<double>& scores, const std::vector<uint8_t>& labels);

// Per-region-overlap curve: regions are 8-connected mask components; PRO(t)
// is the mean over regions of the fraction of the region at or above t, FPR
// counts normal tokens at or above t. Integrated over FPR in [0, fpr_limit]
// by trapezoid and normalized by the limit.
double aupro(const std::vector<Tensor>& maps, const std::vector<std::vector<uint8_t>>& masks,
             double fpr_limit = 0.3, std::vector<ProPoint>* curve_out = nullptr);

struct MetricsReport {
    double i_auroc = 0, i_ap = 0, i_f1max = 0;
    double p_auroc = 0, p_ap = 0, p_f1max = 0;
    double aupro = 0;
    std::vector<RocPoint> i_roc, p_roc;
    std::vector<PrPoint> i_pr, p_pr;
    std::vector<ProPoint> pro_curve;

    nlohmann::ordered_json to_json() const;
    // flat row in table column order: i_auc,i_ap,i_f1,p_auc,p_ap,p_f1,aupro
    std::string csv_row() const;
    static std::string csv_header();
};

// Pure aggregation from per-sample maps + ground truth.
MetricsReport evaluate_maps(const std::vector<Tensor>& maps,
                            const std::vector<std::vector<uint8_t>>& masks,
                            const std::vector<uint8_t>& image_labels);

struct EvaluateOutput {
    MetricsReport overall;
    std::map<int, MetricsReport> per_class;
    std::vector<double> image_scores;  // per test sample
    std::vector<uint8_t> image_labels; // per test sample
};

// Deterministic inference over the test set (both classes required), maps,
// metrics, and a per-class breakdown.
EvaluateOutput evaluate_model(const ModelConfig& cfg, const ParamStore& ps,
                              const std::vector<TokenBatch>& test_set,
                              size_t eval_batch = 32);

} // namespace sbk
