#include "sbk/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace sbk {

namespace {

// Indices sorted by score descending, index ascending on ties.
std::vector<size_t> order_desc(const std::vector<double>& scores) {
    std::vector<size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    return idx;
}

void require_both_classes(const std::vector<double>& scores,
                          const std::vector<uint8_t>& labels, const char* what) {
    if (scores.size() != labels.size() || scores.empty())
        throw DimensionError(std::string(what) + ": scores/labels size mismatch or empty");
    size_t pos = 0;
    for (uint8_t l : labels) pos += l ? 1 : 0;
    if (pos == 0 || pos == labels.size())
        throw MetricUndefinedError(std::string(what) +
                                   " is undefined with a single class present");
}

void require_positives(const std::vector<double>& scores,
                       const std::vector<uint8_t>& labels, const char* what) {
    if (scores.size() != labels.size() || scores.empty())
        throw DimensionError(std::string(what) + ": scores/labels size mismatch or empty");
    size_t pos = 0;
    for (uint8_t l : labels) pos += l ? 1 : 0;
    if (pos == 0)
        throw MetricUndefinedError(std::string(what) + " is undefined without positives");
}

} // namespace

std::vector<AnomalyResult> anomaly_map(const Tensor& recon, const Tensor& target,
                                       size_t grid_h, size_t grid_w, double smooth_sigma) {
    if (recon.shape != target.shape || recon.ndim() != 3)
        throw DimensionError("anomaly_map: want matching [B,N,d] tensors");
    const size_t b = recon.shape[0], n = recon.shape[1], d = recon.shape[2];
    if (n != grid_h * grid_w)
        throw DimensionError("anomaly_map: N != grid_h * grid_w");
    std::vector<AnomalyResult> out(b);
    for (size_t i = 0; i < b; ++i) {
        Tensor m({grid_h, grid_w});
        for (size_t t = 0; t < n; ++t) {
            const double* a = recon.data.data() + (i * n + t) * d;
            const double* c = target.data.data() + (i * n + t) * d;
            double qa = 0, qc = 0, dot = 0;
            for (size_t j = 0; j < d; ++j) {
                qa += a[j] * a[j];
                qc += c[j] * c[j];
                dot += a[j] * c[j];
            }
            const double na = std::sqrt(qa), nc = std::sqrt(qc);
            const double cs = (na < 1e-12 || nc < 1e-12) ? 0.0 : dot / (na * nc);
            m.data[t] = 1.0 - cs;
        }
        if (smooth_sigma > 0.0) {
            // separable box-of-gaussian smoothing with sum-normalized kernel
            const long radius = std::max<long>(1, static_cast<long>(std::ceil(3 * smooth_sigma)));
            auto pass = [&](const Tensor& src, bool cols) {
                Tensor dst({grid_h, grid_w});
                for (size_t r = 0; r < grid_h; ++r)
                    for (size_t c = 0; c < grid_w; ++c) {
                        double acc = 0, wsum = 0;
                        for (long o = -radius; o <= radius; ++o) {
                            const long rr = cols ? static_cast<long>(r)
                                                 : static_cast<long>(r) + o;
                            const long cc = cols ? static_cast<long>(c) + o
                                                 : static_cast<long>(c);
                            if (rr < 0 || cc < 0 || rr >= static_cast<long>(grid_h) ||
                                cc >= static_cast<long>(grid_w))
                                continue;
                            const double w =
                                std::exp(-0.5 * static_cast<double>(o * o) /
                                         (smooth_sigma * smooth_sigma));
                            acc += w * src.data[static_cast<size_t>(rr) * grid_w +
                                                static_cast<size_t>(cc)];
                            wsum += w;
                        }
                        dst.data[r * grid_w + c] = acc / wsum;
                    }
                return dst;
            };
            m = pass(pass(m, true), false);
        }
        double mx = m.data[0];
        for (double v : m.data) mx = std::max(mx, v);
        out[i].map = std::move(m);
        out[i].image_score = mx;
    }
    return out;
}

std::vector<RocPoint> roc_curve(const std::vector<double>& scores,
                                const std::vector<uint8_t>& labels) {
    require_both_classes(scores, labels, "roc_curve");
    const auto idx = order_desc(scores);
    size_t pos_total = 0;
    for (uint8_t l : labels) pos_total += l ? 1 : 0;
    const size_t neg_total = labels.size() - pos_total;
    std::vector<RocPoint> pts;
    pts.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    size_t tp = 0, fp = 0;
    size_t i = 0;
    while (i < idx.size()) {
        const double t = scores[idx[i]];
        while (i < idx.size() && scores[idx[i]] == t) {
            if (labels[idx[i]]) ++tp;
            else ++fp;
            ++i;
        }
        pts.push_back({t, static_cast<double>(fp) / static_cast<double>(neg_total),
                       static_cast<double>(tp) / static_cast<double>(pos_total)});
    }
    return pts;
}

double auroc(const std::vector<double>& scores, const std::vector<uint8_t>& labels) {
    const auto pts = roc_curve(scores, labels);
    double area = 0.0;
    for (size_t i = 1; i < pts.size(); ++i)
        area += (pts[i].fpr - pts[i - 1].fpr) * 0.5 * (pts[i].tpr + pts[i - 1].tpr);
    return area;
}

double average_precision(const std::vector<double>& scores,
                         const std::vector<uint8_t>& labels) {
    require_positives(scores, labels, "average_precision");
    const auto idx = order_desc(scores);
    size_t pos_total = 0;
    for (uint8_t l : labels) pos_total += l ? 1 : 0;
    double ap = 0.0, prev_recall = 0.0;
    size_t tp = 0, seen = 0;
    size_t i = 0;
    while (i < idx.size()) {
        const double t = scores[idx[i]];
        while (i < idx.size() && scores[idx[i]] == t) {
            if (labels[idx[i]]) ++tp;
            ++seen;
            ++i;
        }
        const double recall = static_cast<double>(tp) / static_cast<double>(pos_total);
        const double precision = static_cast<double>(tp) / static_cast<double>(seen);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return ap;
}

double f1_max(const std::vector<double>& scores, const std::vector<uint8_t>& labels) {
    require_positives(scores, labels, "f1_max");
    const auto idx = order_desc(scores);
    size_t pos_total = 0;
    for (uint8_t l : labels) pos_total += l ? 1 : 0;
    double best = 0.0;
    size_t tp = 0, seen = 0;
    size_t i = 0;
    while (i < idx.size()) {
        const double t = scores[idx[i]];
        while (i < idx.size() && scores[idx[i]] == t) {
            if (labels[idx[i]]) ++tp;
            ++seen;
            ++i;
        }
        const size_t fp = seen - tp;
        const size_t fn = pos_total - tp;
        const double f1 = 2.0 * static_cast<double>(tp) /
                          static_cast<double>(2 * tp + fp + fn);
        best = std::max(best, f1);
    }
    return best;
}

namespace {

// 8-connected components of a [h,w] mask; token -> region id (or -1).
std::vector<int> label_regions(const std::vector<uint8_t>& mask, size_t h, size_t w,
                               int first_id) {
    std::vector<int> region(h * w, -1);
    int next = first_id;
    std::vector<size_t> stack;
    for (size_t start = 0; start < h * w; ++start) {
        if (!mask[start] || region[start] >= 0) continue;
        region[start] = next;
        stack.push_back(start);
        while (!stack.empty()) {
            const size_t t = stack.back();
            stack.pop_back();
            const long r = static_cast<long>(t / w), c = static_cast<long>(t % w);
            for (long dr = -1; dr <= 1; ++dr)
                for (long dc = -1; dc <= 1; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    const long rr = r + dr, cc = c + dc;
                    if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) ||
                        cc >= static_cast<long>(w))
                        continue;
                    const size_t u = static_cast<size_t>(rr) * w + static_cast<size_t>(cc);
                    if (mask[u] && region[u] < 0) {
                        region[u] = next;
                        stack.push_back(u);
                    }
                }
        }
        ++next;
    }
    return region;
}

} // namespace

double aupro(const std::vector<Tensor>& maps, const std::vector<std::vector<uint8_t>>& masks,
             double fpr_limit, std::vector<ProPoint>* curve_out) {
    if (maps.size() != masks.size() || maps.empty())
        throw DimensionError("aupro: maps/masks mismatch or empty");
    if (!(fpr_limit > 0.0) || fpr_limit > 1.0)
        throw ParameterError("aupro: fpr_limit must be in (0,1]");

    // Flatten tokens: per token record (score, region id or -1).
    struct Tok {
        double score;
        int region;
    };
    std::vector<Tok> toks;
    std::vector<size_t> region_size;
    size_t normal_total = 0;
    for (size_t s = 0; s < maps.size(); ++s) {
        const size_t h = maps[s].shape[0], w = maps[s].shape[1];
        if (masks[s].size() != h * w) throw DimensionError("aupro: mask size mismatch");
        const auto region = label_regions(masks[s], h, w, static_cast<int>(region_size.size()));
        int max_id = -1;
        for (int r : region) max_id = std::max(max_id, r);
        if (max_id >= static_cast<int>(region_size.size()))
            region_size.resize(static_cast<size_t>(max_id) + 1, 0);
        for (size_t t = 0; t < h * w; ++t) {
            toks.push_back({maps[s].data[t], region[t]});
            if (region[t] >= 0)
                ++region_size[static_cast<size_t>(region[t])];
            else
                ++normal_total;
        }
    }
    if (region_size.empty())
        throw MetricUndefinedError("aupro is undefined without anomalous regions");
    if (normal_total == 0)
        throw MetricUndefinedError("aupro is undefined without normal tokens");

    std::vector<size_t> idx(toks.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        if (toks[a].score != toks[b].score) return toks[a].score > toks[b].score;
        return a < b;
    });

    std::vector<size_t> region_hit(region_size.size(), 0);
    size_t fp = 0;
    std::vector<ProPoint> pts;
    pts.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    size_t i = 0;
    const double n_regions = static_cast<double>(region_size.size());
    while (i < idx.size()) {
        const double t = toks[idx[i]].score;
        while (i < idx.size() && toks[idx[i]].score == t) {
            const int r = toks[idx[i]].region;
            if (r >= 0)
                ++region_hit[static_cast<size_t>(r)];
            else
                ++fp;
            ++i;
        }
        double pro = 0.0;
        for (size_t r = 0; r < region_size.size(); ++r)
            pro += static_cast<double>(region_hit[r]) / static_cast<double>(region_size[r]);
        pro /= n_regions;
        pts.push_back({t, static_cast<double>(fp) / static_cast<double>(normal_total), pro});
    }
    if (curve_out != nullptr) *curve_out = pts;

    // Trapezoid over FPR in [0, fpr_limit], interpolating at the limit.
    double area = 0.0;
    for (size_t p = 1; p < pts.size(); ++p) {
        double f0 = pts[p - 1].fpr, f1 = pts[p].fpr;
        double y0 = pts[p - 1].pro, y1 = pts[p].pro;
        if (f0 >= fpr_limit) break;
        if (f1 > fpr_limit) {
            const double w = (fpr_limit - f0) / (f1 - f0);
            y1 = y0 + w * (y1 - y0);
            f1 = fpr_limit;
        }
        area += (f1 - f0) * 0.5 * (y0 + y1);
    }
    return area / fpr_limit;
}

nlohmann::ordered_json MetricsReport::to_json() const {
    nlohmann::ordered_json j;
    j["i_auroc"] = i_auroc;
    j["i_ap"] = i_ap;
    j["i_f1max"] = i_f1max;
    j["p_auroc"] = p_auroc;
    j["p_ap"] = p_ap;
    j["p_f1max"] = p_f1max;
    j["aupro"] = aupro;
    auto dump_roc = [](const std::vector<RocPoint>& pts) {
        auto a = nlohmann::ordered_json::array();
        for (const auto& p : pts) a.push_back({p.threshold, p.fpr, p.tpr});
        return a;
    };
    auto dump_pr = [](const std::vector<PrPoint>& pts) {
        auto a = nlohmann::ordered_json::array();
        for (const auto& p : pts) a.push_back({p.threshold, p.recall, p.precision});
        return a;
    };
    auto dump_pro = [](const std::vector<ProPoint>& pts) {
        auto a = nlohmann::ordered_json::array();
        for (const auto& p : pts) a.push_back({p.threshold, p.fpr, p.pro});
        return a;
    };
    j["curves"]["image_roc"] = dump_roc(i_roc);
    j["curves"]["pixel_roc"] = dump_roc(p_roc);
    j["curves"]["image_pr"] = dump_pr(i_pr);
    j["curves"]["pixel_pr"] = dump_pr(p_pr);
    j["curves"]["pro"] = dump_pro(pro_curve);
    return j;
}

std::string MetricsReport::csv_header() { return "i_auc,i_ap,i_f1,p_auc,p_ap,p_f1,aupro"; }

std::string MetricsReport::csv_row() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", i_auroc, i_ap,
                  i_f1max, p_auroc, p_ap, p_f1max, aupro);
    return buf;
}

namespace {

std::vector<PrPoint> pr_curve(const std::vector<double>& scores,
                              const std::vector<uint8_t>& labels) {
    const auto idx = order_desc(scores);
    size_t pos_total = 0;
    for (uint8_t l : labels) pos_total += l ? 1 : 0;
    std::vector<PrPoint> pts;
    size_t tp = 0, seen = 0, i = 0;
    while (i < idx.size()) {
        const double t = scores[idx[i]];
        while (i < idx.size() && scores[idx[i]] == t) {
            if (labels[idx[i]]) ++tp;
            ++seen;
            ++i;
        }
        pts.push_back({t, static_cast<double>(tp) / static_cast<double>(pos_total),
                       static_cast<double>(tp) / static_cast<double>(seen)});
    }
    return pts;
}

} // namespace

MetricsReport evaluate_maps(const std::vector<Tensor>& maps,
                            const std::vector<std::vector<uint8_t>>& masks,
                            const std::vector<uint8_t>& image_labels) {
    if (maps.size() != masks.size() || maps.size() != image_labels.size() || maps.empty())
        throw DimensionError("evaluate_maps: inconsistent inputs");
    MetricsReport rep;
    std::vector<double> iscores(maps.size());
    for (size_t i = 0; i < maps.size(); ++i) {
        double mx = maps[i].data[0];
        for (double v : maps[i].data) mx = std::max(mx, v);
        iscores[i] = mx;
    }
    try {
        rep.i_auroc = auroc(iscores, image_labels);
        rep.i_ap = average_precision(iscores, image_labels);
        rep.i_f1max = f1_max(iscores, image_labels);
        rep.i_roc = roc_curve(iscores, image_labels);
        rep.i_pr = pr_curve(iscores, image_labels);
    } catch (const MetricUndefinedError& e) {
        throw MetricUndefinedError(std::string("image-level metrics: ") + e.what());
    }
    std::vector<double> pscores;
    std::vector<uint8_t> plabels;
    for (size_t i = 0; i < maps.size(); ++i) {
        pscores.insert(pscores.end(), maps[i].data.begin(), maps[i].data.end());
        plabels.insert(plabels.end(), masks[i].begin(), masks[i].end());
    }
    try {
        rep.p_auroc = auroc(pscores, plabels);
        rep.p_ap = average_precision(pscores, plabels);
        rep.p_f1max = f1_max(pscores, plabels);
        rep.p_roc = roc_curve(pscores, plabels);
        rep.p_pr = pr_curve(pscores, plabels);
        rep.aupro = aupro(maps, masks, 0.3, &rep.pro_curve);
    } catch (const MetricUndefinedError& e) {
        throw MetricUndefinedError(std::string("token-level metrics: ") + e.what());
    }
    return rep;
}

EvaluateOutput evaluate_model(const ModelConfig& cfg, const ParamStore& ps,
                              const std::vector<TokenBatch>& test_set, size_t eval_batch) {
    if (test_set.empty()) throw ContractError("evaluate_model: empty test set");
    const TokenBatch all = merge_batches(test_set);
    bool has_pos = false, has_neg = false;
    for (uint8_t l : all.image_label) (l ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg)
        throw MetricUndefinedError(
            "evaluate_model: test set must contain both normal and anomalous samples");

    EvaluateOutput out;
    std::vector<Tensor> maps;
    std::vector<std::vector<uint8_t>> masks;
    const size_t n = all.tokens();
    for (size_t at = 0; at < all.batch(); at += eval_batch) {
        std::vector<size_t> idx;
        for (size_t i = at; i < std::min(all.batch(), at + eval_batch); ++i) idx.push_back(i);
        const TokenBatch chunk = select_samples(all, idx);
        const auto inf = run_inference(chunk, cfg, ps);
        auto res = anomaly_map(inf.reconstructed, inf.target, chunk.grid_h, chunk.grid_w);
        for (size_t i = 0; i < res.size(); ++i) {
            maps.push_back(std::move(res[i].map));
            masks.emplace_back(all.anomaly_mask.begin() + (at + i) * n,
                               all.anomaly_mask.begin() + (at + i + 1) * n);
            out.image_scores.push_back(res[i].image_score);
        }
    }
    out.image_labels = all.image_label;
    out.overall = evaluate_maps(maps, masks, all.image_label);

    // per-class breakdown; classes lacking a class pair are skipped
    std::map<int, std::vector<size_t>> by_class;
    for (size_t i = 0; i < all.batch(); ++i) by_class[all.class_ids[i]].push_back(i);
    for (const auto& [cls, idx] : by_class) {
        std::vector<Tensor> cmaps;
        std::vector<std::vector<uint8_t>> cmasks;
        std::vector<uint8_t> clabels;
        for (size_t i : idx) {
            cmaps.push_back(maps[i]);
            cmasks.push_back(masks[i]);
            clabels.push_back(all.image_label[i]);
        }
        try {
            out.per_class.emplace(cls, evaluate_maps(cmaps, cmasks, clabels));
        } catch (const MetricUndefinedError&) {
            out.per_class.emplace(cls, MetricsReport{}); // undefined: all-zero row
        }
    }
    return out;
}

} // namespace sbk
