#include "sbk/probes.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <thread>

#include <omp.h>

#include "sbk/jacobian.hpp"

namespace sbk {

namespace {

RankProbeReport finish_report(RankProbeReport rep) {
    rep.pass = !rep.trials.empty();
    for (const auto& t : rep.trials) rep.pass = rep.pass && t.numerical_rank <= rep.bound;
    return rep;
}

RankTrial analyze_jacobian(const VectorMap& f, const std::vector<double>& x, size_t bound) {
    RankTrial tr;
    const Tensor jac = fd_jacobian(f, x, 1e-6);
    if (f.vjp) {
        const Tensor jrev = reverse_jacobian(f, x);
        double scale = 1e-12, err = 0.0;
        for (size_t i = 0; i < jac.numel(); ++i) {
            scale = std::max({scale, std::fabs(jac.data[i]), std::fabs(jrev.data[i])});
            err = std::max(err, std::fabs(jac.data[i] - jrev.data[i]));
        }
        tr.jacobian_agreement = err / scale;
    }
    tr.singular_values = singular_values(jac);
    tr.numerical_rank = numerical_rank(tr.singular_values);
    if (bound < tr.singular_values.size() && tr.singular_values[0] > 0.0)
        tr.sigma_ratio = tr.singular_values[bound] / tr.singular_values[0];
    return tr;
}

} // namespace

RankProbeReport rank_probe_lrnb(const LrnbConfig& cfg, size_t n_tokens, size_t n_inputs,
                                size_t n_param_draws, uint64_t seed) {
    cfg.validate();
    const size_t dim = n_tokens * cfg.d_model;
    if (dim > 4096)
        throw ContractError("rank probe refuses D = " + std::to_string(dim) +
                            " > 4096 (desk-scale by design)");
    if (n_tokens % (size_t{1} << cfg.depth_i) != 0)
        throw DimensionError("rank probe: token count not divisible by 2^depth_i");
    RankProbeReport rep;
    rep.dim = dim;
    rep.bound = dim >> cfg.depth_i;
    auto root = RandomState::from_seed(seed);
    for (size_t pd = 0; pd < n_param_draws; ++pd) {
        ParamStore ps;
        register_lrnb_params(ps, cfg, "bn");
        init_params(ps, root.split(1000 + pd).next_u64());
        VectorMap f;
        f.dim = dim;
        f.eval = [&, n_tokens](const std::vector<double>& x) {
            Graph g;
            BoundParams bp = bind_params(g, ps, false);
            Var xv = g.leaf(Tensor({1, n_tokens, cfg.d_model}, x), false);
            Var out = lrnb_forward(g, xv, bp, "bn", cfg, false, RandomState::from_seed(0));
            return g.value(out).data;
        };
        f.vjp = [&, n_tokens](const std::vector<double>& x, const std::vector<double>& v) {
            Graph g;
            BoundParams bp = bind_params(g, ps, false);
            Var xv = g.leaf(Tensor({1, n_tokens, cfg.d_model}, x), true);
            Var out = lrnb_forward(g, xv, bp, "bn", cfg, false, RandomState::from_seed(0));
            Var loss = g.sum_all(g.mul(out, g.leaf(Tensor(g.shape(out), v), false)));
            g.backward(loss);
            return g.grad(xv);
        };
        for (size_t in = 0; in < n_inputs; ++in) {
            auto r = root.split(pd * 7919 + in);
            Tensor x = Tensor::randn({dim}, r);
            rep.trials.push_back(analyze_jacobian(f, x.data, rep.bound));
        }
    }
    return finish_report(std::move(rep));
}

RankProbeReport rank_probe_identity(size_t dim, uint64_t seed) {
    if (dim > 4096) throw ContractError("rank probe refuses D > 4096");
    RankProbeReport rep;
    rep.dim = dim;
    rep.bound = dim; // identity is full rank; bound equals D so pass == full rank seen
    VectorMap f;
    f.dim = dim;
    f.eval = [](const std::vector<double>& x) { return x; };
    auto rng = RandomState::from_seed(seed);
    Tensor x = Tensor::randn({dim}, rng);
    rep.trials.push_back(analyze_jacobian(f, x.data, rep.bound));
    return finish_report(std::move(rep));
}

RankProbeReport rank_probe_linear(size_t dim, size_t k, uint64_t seed) {
    if (dim > 4096) throw ContractError("rank probe refuses D > 4096");
    if (k < 1 || k > dim) throw ParameterError("rank_probe_linear: k must be in [1, dim]");
    auto rng = RandomState::from_seed(seed);
    Tensor down = Tensor::randn({dim, k}, rng);
    Tensor up = Tensor::randn({k, dim}, rng);
    RankProbeReport rep;
    rep.dim = dim;
    rep.bound = k;
    VectorMap f;
    f.dim = dim;
    f.eval = [&](const std::vector<double>& x) {
        std::vector<double> mid(k, 0.0), out(dim, 0.0);
        for (size_t j = 0; j < k; ++j)
            for (size_t i = 0; i < dim; ++i) mid[j] += x[i] * down.data[i * k + j];
        for (size_t j = 0; j < dim; ++j)
            for (size_t m = 0; m < k; ++m) out[j] += mid[m] * up.data[m * dim + j];
        return out;
    };
    Tensor x = Tensor::randn({dim}, rng);
    rep.trials.push_back(analyze_jacobian(f, x.data, rep.bound));
    return finish_report(std::move(rep));
}

// ---- attention spreading ---------------------------------------------------

Tensor gaussian_peak_scores(size_t grid_h, size_t grid_w, double peak, double sigma,
                            size_t peak_r, size_t peak_c) {
    Tensor m({grid_h, grid_w});
    for (size_t r = 0; r < grid_h; ++r)
        for (size_t c = 0; c < grid_w; ++c) {
            const double dr = static_cast<double>(r) - static_cast<double>(peak_r);
            const double dc = static_cast<double>(c) - static_cast<double>(peak_c);
            m.data[r * grid_w + c] =
                peak * std::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma));
        }
    return m;
}

SpreadProbeReport attention_spread_probe(size_t grid_h, size_t grid_w, double peak,
                                         double sigma, size_t n_trials, uint64_t seed) {
    if (sigma <= 0.0) throw ParameterError("attention_spread_probe: sigma must be > 0");
    SpreadProbeReport rep;
    auto root = RandomState::from_seed(seed);
    for (size_t t = 0; t < n_trials; ++t) {
        auto r = root.split(t);
        const size_t pr = r.next_u64() % grid_h;
        const size_t pc = r.next_u64() % grid_w;
        const Tensor scores = gaussian_peak_scores(grid_h, grid_w, peak, sigma, pr, pc);
        Graph g;
        Var x = g.leaf(scores, false);
        const Tensor soft = g.value(g.softmax_lastaxis(x));
        const Tensor sig = g.value(g.sigmoid(x));
        const auto st_soft = attention_entropy_stats(soft);
        const auto st_sig = attention_entropy_stats(sig);
        SpreadTrial st;
        st.softmax_entropy = st_soft.mean_row_entropy;
        st.sigmoid_entropy = st_sig.mean_row_entropy;
        st.softmax_max_mass = st_soft.max_row_mass;
        st.sigmoid_max_mass = st_sig.max_row_mass;
        if (st.sigmoid_entropy > st.softmax_entropy) ++rep.sigmoid_entropy_wins;
        if (st.softmax_max_mass > st.sigmoid_max_mass) ++rep.softmax_mass_wins;
        rep.trials.push_back(st);
        if (t == 0) {
            rep.raw_panel = scores;
            rep.softmax_panel = soft;
            rep.sigmoid_panel = sig;
        }
    }
    return rep;
}

// ---- identity probe ----------------------------------------------------------

ScoreSummary score_summary(const ModelConfig& cfg, const ParamStore& ps,
                           const std::vector<TokenBatch>& test_set) {
    const TokenBatch all = merge_batches(test_set);
    const size_t n = all.tokens();
    ScoreSummary s;
    size_t n_norm_img = 0, n_abn_img = 0, n_norm_tok = 0, n_abn_tok = 0;
    const size_t chunk = 32;
    for (size_t at = 0; at < all.batch(); at += chunk) {
        std::vector<size_t> idx;
        for (size_t i = at; i < std::min(all.batch(), at + chunk); ++i) idx.push_back(i);
        const TokenBatch part = select_samples(all, idx);
        const auto inf = run_inference(part, cfg, ps);
        auto maps = anomaly_map(inf.reconstructed, inf.target, part.grid_h, part.grid_w);
        for (size_t i = 0; i < maps.size(); ++i) {
            const size_t gi = at + i;
            if (all.image_label[gi]) {
                s.mean_abnormal_image += maps[i].image_score;
                ++n_abn_img;
            } else {
                s.mean_normal_image += maps[i].image_score;
                ++n_norm_img;
            }
            for (size_t t = 0; t < n; ++t) {
                if (all.anomaly_mask[gi * n + t]) {
                    s.mean_abnormal_token += maps[i].map.data[t];
                    ++n_abn_tok;
                } else {
                    s.mean_normal_token += maps[i].map.data[t];
                    ++n_norm_tok;
                }
            }
        }
    }
    if (n_norm_img == 0 || n_abn_img == 0)
        throw MetricUndefinedError("score_summary needs both normal and abnormal samples");
    s.mean_normal_image /= static_cast<double>(n_norm_img);
    s.mean_abnormal_image /= static_cast<double>(n_abn_img);
    s.mean_normal_token /= static_cast<double>(n_norm_tok);
    s.mean_abnormal_token /= static_cast<double>(n_abn_tok);
    s.image_gap_ratio = s.mean_abnormal_image / s.mean_normal_image;
    s.token_gap_ratio = s.mean_abnormal_token / s.mean_normal_token;
    return s;
}

ProbeData make_probe_data(const SyntheticSpec& dspec, uint64_t seed_index) {
    SyntheticSpec spec = dspec;
    spec.seed = RandomState::from_seed(dspec.seed).split(seed_index).next_u64();
    spec.validate();
    ProbeData out;
    auto root = RandomState::from_seed(spec.seed);
    for (size_t cls = 0; cls < spec.n_classes; ++cls)
        out.train.push_back(generate_normal(spec, static_cast<int>(cls), spec.train_per_class,
                                            root.split(2 * cls)));
    for (size_t cls = 0; cls < spec.n_classes; ++cls) {
        out.test.push_back(generate_normal(spec, static_cast<int>(cls),
                                           spec.test_normal_per_class,
                                           root.split(1000 + 2 * cls)));
        auto normal = generate_normal(spec, static_cast<int>(cls),
                                      spec.test_anomalous_per_class,
                                      root.split(1000 + 2 * cls + 1));
        out.test.push_back(inject_anomaly(normal, spec, root.split(5000 + cls)));
    }
    return out;
}

IdentityProbeReport identity_probe(const std::vector<BottleneckKind>& variants,
                                   const SyntheticSpec& dspec, const ModelConfig& base,
                                   const TrainConfig& tcfg, uint64_t seed_index) {
    IdentityProbeReport rep;
    const ProbeData data = make_probe_data(dspec, seed_index);
    TrainConfig tc = tcfg;
    tc.seed = RandomState::from_seed(tcfg.seed).split(seed_index).next_u64();
    for (BottleneckKind kind : variants) {
        ModelConfig cfg = base;
        cfg.bottleneck = kind;
        cfg.validate();
        auto res = train(cfg, data.train, tc);
        IdentityVariantReport vr;
        vr.variant = kind;
        vr.loss_curve = res.log;
        vr.final_loss = res.log.empty() ? 0.0 : res.log.back().loss;
        vr.scores = score_summary(cfg, res.params, data.test);
        rep.variants.push_back(std::move(vr));
    }
    return rep;
}

// ---- ablation grid -----------------------------------------------------------

double AblationCell::mean(const double MetricsReport::* field) const {
    double s = 0.0;
    for (const auto& r : per_seed) s += r.*field;
    return per_seed.empty() ? 0.0 : s / static_cast<double>(per_seed.size());
}

double AblationCell::stddev(const double MetricsReport::* field) const {
    if (per_seed.size() < 2) return 0.0;
    const double m = mean(field);
    double s = 0.0;
    for (const auto& r : per_seed) s += (r.*field - m) * (r.*field - m);
    return std::sqrt(s / static_cast<double>(per_seed.size() - 1));
}

ModelConfig ablation_model(const ModelConfig& base, bool lrnb, bool grd, bool gsm) {
    ModelConfig cfg = base;
    cfg.bottleneck = lrnb ? BottleneckKind::LRNB : BottleneckKind::None;
    cfg.attention.variant = grd ? AttentionVariant::Sigmoid : AttentionVariant::Softmax;
    cfg.attention.output_scale_mode = grd ? OutputScaleMode::DivideByN : OutputScaleMode::None;
    cfg.attention.self_mask = gsm;
    cfg.attention.attn_dropout_rate = gsm ? 0.1 : 0.0;
    cfg.attention.neighbor_mask_radius.reset();
    cfg.validate();
    return cfg;
}

namespace {

struct AblationJob {
    size_t cell;
    size_t seed_index;
    ModelConfig cfg;
};

} // namespace

AblationReport ablation_grid(const SyntheticSpec& dspec, const ModelConfig& base,
                             const TrainConfig& tcfg, size_t n_seeds, size_t jobs,
                             bool with_table3, bool with_table4) {
    if (n_seeds < 1) throw ParameterError("ablation_grid: n_seeds must be >= 1");
    AblationReport rep;
    rep.n_seeds = n_seeds;

    // The published table lists 7 configurations; the full 8-row grid adds
    // GRD+GSM without LRNB. Order: baseline, singles, pairs, full.
    const bool ordered[8][3] = {{false, false, false}, {true, false, false},
                                {false, true, false},  {false, false, true},
                                {true, true, false},   {true, false, true},
                                {false, true, true},   {true, true, true}};

    std::vector<AblationCell> cells;
    auto label_of = [](bool l, bool g, bool s) {
        std::string out;
        out += l ? "LRNB" : "-";
        out += "/";
        out += g ? "GRD" : "-";
        out += "/";
        out += s ? "GSM" : "-";
        return out;
    };
    for (const auto& r : ordered) {
        AblationCell c;
        c.lrnb = r[0];
        c.grd = r[1];
        c.gsm = r[2];
        c.label = label_of(r[0], r[1], r[2]);
        c.per_seed.resize(n_seeds);
        cells.push_back(std::move(c));
    }
    const size_t t2_count = cells.size();

    size_t t3_first = 0, t4_first = 0;
    if (with_table3) {
        t3_first = cells.size();
        for (BottleneckKind kind : {BottleneckKind::None, BottleneckKind::FeatureJitter,
                                    BottleneckKind::DropoutOnly, BottleneckKind::LRNB}) {
            AblationCell c;
            c.label = "BN=" + to_string(kind);
            c.grd = c.gsm = true;
            c.lrnb = kind == BottleneckKind::LRNB;
            c.per_seed.resize(n_seeds);
            cells.push_back(std::move(c));
        }
    }
    if (with_table4) {
        t4_first = cells.size();
        for (const char* label : {"decoder=vit", "decoder=nma", "decoder=gpa"}) {
            AblationCell c;
            c.label = label;
            c.lrnb = true;
            c.per_seed.resize(n_seeds);
            cells.push_back(std::move(c));
        }
    }

    auto config_for = [&](size_t cell_idx) {
        if (cell_idx < t2_count)
            return ablation_model(base, cells[cell_idx].lrnb, cells[cell_idx].grd,
                                  cells[cell_idx].gsm);
        if (with_table3 && cell_idx >= t3_first && cell_idx < t3_first + 4) {
            ModelConfig cfg = ablation_model(base, true, true, true);
            static const BottleneckKind kinds[4] = {BottleneckKind::None,
                                                    BottleneckKind::FeatureJitter,
                                                    BottleneckKind::DropoutOnly,
                                                    BottleneckKind::LRNB};
            cfg.bottleneck = kinds[cell_idx - t3_first];
            cfg.validate();
            return cfg;
        }
        // table 4
        const size_t k = cell_idx - t4_first;
        if (k == 0) return ablation_model(base, true, false, false); // plain ViT decoder
        if (k == 1) {
            ModelConfig cfg = ablation_model(base, true, false, false);
            cfg.attention.neighbor_mask_radius = 1;
            cfg.validate();
            return cfg;
        }
        return ablation_model(base, true, true, true); // GPA
    };

    // One dataset per seed, shared by every cell (paired comparisons).
    std::vector<ProbeData> data;
    data.reserve(n_seeds);
    for (size_t s = 0; s < n_seeds; ++s) data.push_back(make_probe_data(dspec, s));

    std::vector<AblationJob> jobs_list;
    for (size_t c = 0; c < cells.size(); ++c)
        for (size_t s = 0; s < n_seeds; ++s) jobs_list.push_back({c, s, config_for(c)});

    const size_t n_workers = std::max<size_t>(1, std::min(jobs, jobs_list.size()));
    const int omp_per_job =
        std::max(1, omp_get_max_threads() / static_cast<int>(n_workers));
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        omp_set_num_threads(omp_per_job);
        for (;;) {
            const size_t j = next.fetch_add(1);
            if (j >= jobs_list.size()) break;
            const AblationJob& job = jobs_list[j];
            TrainConfig tc = tcfg;
            tc.seed = RandomState::from_seed(tcfg.seed).split(job.seed_index).next_u64();
            auto res = train(job.cfg, data[job.seed_index].train, tc);
            auto ev = evaluate_model(job.cfg, res.params, data[job.seed_index].test);
            cells[job.cell].per_seed[job.seed_index] = ev.overall;
        }
    };
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    rep.table2.assign(cells.begin(), cells.begin() + static_cast<long>(t2_count));
    if (with_table3)
        rep.table3.assign(cells.begin() + static_cast<long>(t3_first),
                          cells.begin() + static_cast<long>(t3_first + 4));
    if (with_table4)
        rep.table4.assign(cells.begin() + static_cast<long>(t4_first),
                          cells.begin() + static_cast<long>(t4_first + 3));
    return rep;
}

std::string ablation_csv(const std::vector<AblationCell>& cells) {
    std::string out = "label,lrnb,grd,gsm,i_auc,i_ap,i_f1,p_auc,p_ap,p_f1,aupro\n";
    char buf[512];
    auto cell_fields = [](const AblationCell& c, char* b, size_t bn) {
        const double MetricsReport::* fields[7] = {
            &MetricsReport::i_auroc, &MetricsReport::i_ap,   &MetricsReport::i_f1max,
            &MetricsReport::p_auroc, &MetricsReport::p_ap,   &MetricsReport::p_f1max,
            &MetricsReport::aupro};
        size_t at = 0;
        for (const auto f : fields) {
            at += static_cast<size_t>(std::snprintf(b + at, bn - at, ",%.4f±%.4f",
                                                    c.mean(f), c.stddev(f)));
        }
    };
    for (const auto& c : cells) {
        char fields[384];
        cell_fields(c, fields, sizeof fields);
        std::snprintf(buf, sizeof buf, "%s,%d,%d,%d%s\n", c.label.c_str(), c.lrnb ? 1 : 0,
                      c.grd ? 1 : 0, c.gsm ? 1 : 0, fields);
        out += buf;
    }
    return out;
}

} // namespace sbk
