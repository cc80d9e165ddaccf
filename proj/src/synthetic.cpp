#include "sbk/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "sbk/container.hpp"
#include "sbk/jsonutil.hpp"

namespace sbk {

namespace {

constexpr uint64_t kClassTag = 0xC1A55;
constexpr uint64_t kLayerTag = 0x1A9E6;
constexpr double kAnchorNorm = 2.0;

double q32(double v) { return static_cast<double>(static_cast<float>(v)); }

void quantize_f32(Tensor& t) {
    for (double& v : t.data) v = q32(v);
}

// Per-position L2-normalized separable gaussian smoothing, so the marginal
// variance of an iid field stays 1 everywhere including edges.
void smooth_axis(std::vector<double>& field, size_t rows, size_t cols, double sigma,
                 bool along_cols) {
    if (sigma <= 0.0) return;
    const long radius = std::max<long>(1, static_cast<long>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    for (long o = -radius; o <= radius; ++o)
        kernel[static_cast<size_t>(o + radius)] =
            std::exp(-0.5 * static_cast<double>(o * o) / (sigma * sigma));
    std::vector<double> out(field.size());
    const size_t n_outer = along_cols ? rows : cols;
    const size_t n_inner = along_cols ? cols : rows;
    for (size_t a = 0; a < n_outer; ++a)
        for (size_t b = 0; b < n_inner; ++b) {
            double acc = 0.0, wsq = 0.0;
            for (long o = -radius; o <= radius; ++o) {
                const long bb = static_cast<long>(b) + o;
                if (bb < 0 || bb >= static_cast<long>(n_inner)) continue;
                const double w = kernel[static_cast<size_t>(o + radius)];
                const size_t idx = along_cols ? a * cols + static_cast<size_t>(bb)
                                              : static_cast<size_t>(bb) * cols + a;
                acc += w * field[idx];
                wsq += w * w;
            }
            const size_t idx = along_cols ? a * cols + b : b * cols + a;
            out[idx] = acc / std::sqrt(wsq);
        }
    field.swap(out);
}

// Two modified-Gram-Schmidt passes against the stored basis columns.
std::vector<double> ortho_complement(const Tensor& basis, RandomState& rng) {
    const size_t d = basis.shape[0];
    const size_t r = basis.shape[1];
    std::vector<double> w(d);
    for (auto& v : w) v = rng.next_gauss();
    for (int pass = 0; pass < 2; ++pass)
        for (size_t c = 0; c < r; ++c) {
            double dot = 0.0, nrm = 0.0;
            for (size_t i = 0; i < d; ++i) {
                dot += w[i] * basis.data[i * r + c];
                nrm += basis.data[i * r + c] * basis.data[i * r + c];
            }
            const double coef = dot / nrm;
            for (size_t i = 0; i < d; ++i) w[i] -= coef * basis.data[i * r + c];
        }
    double nn = 0.0;
    for (double v : w) nn += v * v;
    nn = std::sqrt(nn);
    for (double& v : w) v /= nn;
    return w;
}

struct RectChoice {
    size_t r0, c0, h, w;
};

// Rectangle whose area is the nearest realizable to target_area tokens.
RectChoice choose_rectangle(size_t grid_h, size_t grid_w, size_t target_area,
                            RandomState& rng) {
    size_t best_err = static_cast<size_t>(-1);
    std::vector<std::pair<size_t, size_t>> candidates;
    for (size_t h = 1; h <= grid_h; ++h)
        for (size_t w = 1; w <= grid_w; ++w) {
            const size_t area = h * w;
            const size_t err = area > target_area ? area - target_area : target_area - area;
            if (err < best_err) {
                best_err = err;
                candidates.clear();
            }
            if (err == best_err) candidates.emplace_back(h, w);
        }
    const auto pick = candidates[rng.next_u64() % candidates.size()];
    RectChoice rc;
    rc.h = pick.first;
    rc.w = pick.second;
    rc.r0 = rng.next_u64() % (grid_h - rc.h + 1);
    rc.c0 = rng.next_u64() % (grid_w - rc.w + 1);
    return rc;
}

} // namespace

AnomalyKind anomaly_kind_from_string(const std::string& s) {
    if (s == "patch_swap") return AnomalyKind::PatchSwap;
    if (s == "off_manifold") return AnomalyKind::OffManifold;
    if (s == "amplitude") return AnomalyKind::Amplitude;
    throw ParameterError("unknown anomaly kind: " + s);
}

std::string to_string(AnomalyKind k) {
    switch (k) {
    case AnomalyKind::PatchSwap: return "patch_swap";
    case AnomalyKind::OffManifold: return "off_manifold";
    case AnomalyKind::Amplitude: return "amplitude";
    }
    return "?";
}

void SyntheticSpec::validate() const {
    std::string bad;
    auto flag = [&](const std::string& msg) { bad += (bad.empty() ? "" : "; ") + msg; };
    if (n_classes < 1) flag("n_classes must be >= 1");
    if (grid_h < 1 || grid_w < 1) flag("grid_h and grid_w must be >= 1");
    if (d_model < 1) flag("d_model must be >= 1");
    if (manifold_rank >= d_model) flag("manifold_rank must be < d_model");
    if (smoothness < 0.0) flag("smoothness must be >= 0");
    if (normal_noise_std < 0.0) flag("normal_noise_std must be >= 0");
    if (anomaly_kinds.empty()) flag("anomaly_kinds must be nonempty");
    if (!(anomaly_area_min > 0.0) || anomaly_area_min > anomaly_area_max ||
        anomaly_area_max > 0.5)
        flag("anomaly_area_frac must satisfy 0 < min <= max <= 0.5");
    if (n_encoder_layers < 1) flag("n_encoder_layers must be >= 1");
    if (bad.size()) throw ParameterError("synthetic spec invalid: " + bad);
}

nlohmann::ordered_json SyntheticSpec::to_json() const {
    nlohmann::ordered_json j;
    j["version"] = 1;
    j["n_classes"] = n_classes;
    j["grid_h"] = grid_h;
    j["grid_w"] = grid_w;
    j["d_model"] = d_model;
    j["manifold_rank"] = manifold_rank;
    j["smoothness"] = smoothness;
    j["normal_noise_std"] = normal_noise_std;
    auto kinds = nlohmann::ordered_json::array();
    for (auto k : anomaly_kinds) kinds.push_back(to_string(k));
    j["anomaly_kinds"] = kinds;
    j["anomaly_area_frac"] = {anomaly_area_min, anomaly_area_max};
    j["n_encoder_layers"] = n_encoder_layers;
    j["seed"] = seed;
    j["train_per_class"] = train_per_class;
    j["test_normal_per_class"] = test_normal_per_class;
    j["test_anomalous_per_class"] = test_anomalous_per_class;
    return j;
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::ordered_json& j) {
    check_config_keys(j,
                      {"version", "n_classes", "grid_h", "grid_w", "d_model", "manifold_rank",
                       "smoothness", "normal_noise_std", "anomaly_kinds", "anomaly_area_frac",
                       "n_encoder_layers", "seed", "train_per_class", "test_normal_per_class",
                       "test_anomalous_per_class"},
                      "synthetic spec");
    SyntheticSpec s;
    s.n_classes = json_get<size_t>(j, "n_classes", s.n_classes);
    s.grid_h = json_get<size_t>(j, "grid_h", s.grid_h);
    s.grid_w = json_get<size_t>(j, "grid_w", s.grid_w);
    s.d_model = json_get<size_t>(j, "d_model", s.d_model);
    s.manifold_rank = json_get<size_t>(j, "manifold_rank", s.manifold_rank);
    s.smoothness = json_get<double>(j, "smoothness", s.smoothness);
    s.normal_noise_std = json_get<double>(j, "normal_noise_std", s.normal_noise_std);
    if (j.contains("anomaly_kinds")) {
        s.anomaly_kinds.clear();
        for (const auto& k : j.at("anomaly_kinds"))
            s.anomaly_kinds.push_back(anomaly_kind_from_string(k.get<std::string>()));
    }
    if (j.contains("anomaly_area_frac")) {
        const auto& a = j.at("anomaly_area_frac");
        if (!a.is_array() || a.size() != 2)
            throw ParameterError("anomaly_area_frac must be [min, max]");
        s.anomaly_area_min = a[0].get<double>();
        s.anomaly_area_max = a[1].get<double>();
    }
    s.n_encoder_layers = json_get<size_t>(j, "n_encoder_layers", s.n_encoder_layers);
    s.seed = json_get<uint64_t>(j, "seed", s.seed);
    s.train_per_class = json_get<size_t>(j, "train_per_class", s.train_per_class);
    s.test_normal_per_class = json_get<size_t>(j, "test_normal_per_class", s.test_normal_per_class);
    s.test_anomalous_per_class =
        json_get<size_t>(j, "test_anomalous_per_class", s.test_anomalous_per_class);
    s.validate();
    return s;
}

bool TokenBatch::any_anomalous() const {
    for (uint8_t v : image_label)
        if (v) return true;
    return false;
}

void TokenBatch::validate() const {
    const size_t b = batch();
    const size_t n = tokens();
    if (layers.empty()) throw ContractError("token batch has no encoder layers");
    for (const auto& l : layers)
        if (l.shape != Shape{b, n, layers[0].shape[2]})
            throw DimensionError("token batch layer shape mismatch");
    if (anomaly_mask.size() != b * n || image_label.size() != b)
        throw DimensionError("token batch mask/label sizes inconsistent");
    for (size_t i = 0; i < b; ++i) {
        uint8_t any = 0;
        for (size_t t = 0; t < n; ++t) any |= anomaly_mask[i * n + t];
        if (any != image_label[i])
            throw ContractError("image_label must equal OR over the sample mask");
    }
}

std::vector<double> off_manifold_direction(const ClassModel& cm, RandomState rng) {
    return ortho_complement(cm.basis, rng);
}

ClassModel class_model(const SyntheticSpec& spec, int class_id) {
    if (class_id < 0 || static_cast<size_t>(class_id) >= spec.n_classes)
        throw ParameterError("class_id out of range");
    auto rng = RandomState::from_seed(spec.seed).split(kClassTag).split(
        static_cast<uint64_t>(class_id));
    const size_t d = spec.d_model;
    const size_t r = spec.manifold_rank;
    ClassModel cm;
    cm.anchor = Tensor({d});
    double nn = 0.0;
    for (auto& v : cm.anchor.data) {
        v = rng.next_gauss();
        nn += v * v;
    }
    nn = std::sqrt(nn);
    for (auto& v : cm.anchor.data) v = kAnchorNorm * v / nn;
    quantize_f32(cm.anchor);

    cm.basis = Tensor({d, r});
    // Gram-Schmidt columns in f64, then quantize.
    std::vector<std::vector<double>> cols;
    for (size_t c = 0; c < r; ++c) {
        std::vector<double> v(d);
        for (auto& x : v) x = rng.next_gauss();
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& prev : cols) {
                double dot = 0.0;
                for (size_t i = 0; i < d; ++i) dot += v[i] * prev[i];
                for (size_t i = 0; i < d; ++i) v[i] -= dot * prev[i];
            }
        double vn = 0.0;
        for (double x : v) vn += x * x;
        vn = std::sqrt(vn);
        for (double& x : v) x /= vn;
        cols.push_back(v);
    }
    for (size_t c = 0; c < r; ++c)
        for (size_t i = 0; i < d; ++i) cm.basis.data[i * r + c] = q32(cols[c][i]);
    return cm;
}

LayerModel layer_model(const SyntheticSpec& spec, size_t layer) {
    auto rng = RandomState::from_seed(spec.seed).split(kLayerTag).split(layer);
    const size_t d = spec.d_model;
    LayerModel lm;
    lm.w = Tensor({d, d});
    lm.b = Tensor({d});
    if (layer == 0) {
        // Layer 0 is the raw feature space.
        for (size_t i = 0; i < d; ++i) lm.w.data[i * d + i] = 1.0;
        return lm;
    }
    const double scale = 0.3 / std::sqrt(static_cast<double>(d));
    for (size_t i = 0; i < d; ++i)
        for (size_t j = 0; j < d; ++j)
            lm.w.data[i * d + j] = (i == j ? 1.0 : 0.0) + scale * rng.next_gauss();
    for (auto& v : lm.b.data) v = 0.1 * rng.next_gauss();
    quantize_f32(lm.w);
    quantize_f32(lm.b);
    return lm;
}

namespace {

// Base tokens for one sample (before the per-layer encoder maps).
Tensor base_tokens(const SyntheticSpec& spec, const ClassModel& cm, RandomState srng) {
    const size_t h = spec.grid_h, w = spec.grid_w, d = spec.d_model, r = spec.manifold_rank;
    const size_t n = h * w;
    Tensor x({n, d});
    std::vector<std::vector<double>> field(r, std::vector<double>(n));
    auto frng = srng.split(1);
    for (size_t c = 0; c < r; ++c) {
        for (auto& v : field[c]) v = frng.next_gauss();
        smooth_axis(field[c], h, w, spec.smoothness, true);
        smooth_axis(field[c], h, w, spec.smoothness, false);
    }
    auto nrng = srng.split(2);
    for (size_t t = 0; t < n; ++t)
        for (size_t j = 0; j < d; ++j) {
            double v = cm.anchor.data[j];
            for (size_t c = 0; c < r; ++c) v += cm.basis.data[j * r + c] * field[c][t];
            if (spec.normal_noise_std > 0.0) v += spec.normal_noise_std * nrng.next_gauss();
            x.data[t * d + j] = v;
        }
    return x;
}

// Applies layer maps and quantizes to f32 (containers store f32 payloads).
void fill_layers(TokenBatch& tb, const SyntheticSpec& spec, const Tensor& base,
                 size_t sample) {
    const size_t n = spec.tokens(), d = spec.d_model;
    for (size_t l = 0; l < spec.n_encoder_layers; ++l) {
        const LayerModel lm = layer_model(spec, l);
        double* dst = tb.layers[l].data.data() + sample * n * d;
        for (size_t t = 0; t < n; ++t)
            for (size_t i = 0; i < d; ++i) {
                double v = lm.b.data[i];
                for (size_t j = 0; j < d; ++j)
                    v += lm.w.data[i * d + j] * base.data[t * d + j];
                dst[t * d + i] = q32(v);
            }
    }
}

} // namespace

TokenBatch generate_normal(const SyntheticSpec& spec, int class_id, size_t count,
                           RandomState rng) {
    spec.validate();
    const ClassModel cm = class_model(spec, class_id);
    const size_t n = spec.tokens(), d = spec.d_model;
    TokenBatch tb;
    tb.grid_h = spec.grid_h;
    tb.grid_w = spec.grid_w;
    tb.class_ids.assign(count, class_id);
    tb.anomaly_mask.assign(count * n, 0);
    tb.image_label.assign(count, 0);
    tb.layers.assign(spec.n_encoder_layers, Tensor({count, n, d}));
    for (size_t i = 0; i < count; ++i) {
        const Tensor base = base_tokens(spec, cm, rng.split(i));
        fill_layers(tb, spec, base, i);
    }
    tb.validate();
    return tb;
}

TokenBatch inject_anomaly(const TokenBatch& batch, const SyntheticSpec& spec,
                          RandomState rng) {
    batch.validate();
    if (batch.any_anomalous())
        throw ContractError("inject_anomaly: batch already contains anomalous samples");
    TokenBatch out = batch;
    const size_t n = spec.tokens(), d = spec.d_model;
    const size_t w_grid = spec.grid_w;
    for (size_t i = 0; i < out.batch(); ++i) {
        auto srng = rng.split(i);
        const AnomalyKind kind =
            spec.anomaly_kinds[srng.next_u64() % spec.anomaly_kinds.size()];
        const double frac =
            spec.anomaly_area_min +
            (spec.anomaly_area_max - spec.anomaly_area_min) * srng.next_uniform();
        const size_t target =
            std::max<size_t>(1, static_cast<size_t>(std::llround(frac * static_cast<double>(n))));
        const RectChoice rc = choose_rectangle(spec.grid_h, spec.grid_w, target, srng);
        const int host = out.class_ids[i];

        if (kind == AnomalyKind::PatchSwap) {
            if (spec.n_classes < 2)
                throw ContractError("patch_swap needs a donor class but n_classes == 1");
            size_t donor = srng.next_u64() % (spec.n_classes - 1);
            if (donor >= static_cast<size_t>(host)) ++donor;
            TokenBatch donor_batch =
                generate_normal(spec, static_cast<int>(donor), 1, srng.split(7));
            for (size_t l = 0; l < out.layers.size(); ++l) {
                double* dst = out.layers[l].data.data() + i * n * d;
                const double* src = donor_batch.layers[l].data.data();
                for (size_t r = rc.r0; r < rc.r0 + rc.h; ++r)
                    for (size_t c = rc.c0; c < rc.c0 + rc.w; ++c) {
                        const size_t t = r * w_grid + c;
                        std::copy_n(src + t * d, d, dst + t * d);
                    }
            }
        } else if (kind == AnomalyKind::OffManifold) {
            const ClassModel cm = class_model(spec, host);
            auto orng = srng.split(8);
            std::vector<double> w = ortho_complement(cm.basis, orng);
            const double norm = 3.0 * std::sqrt(static_cast<double>(spec.manifold_rank));
            for (double& v : w) v *= norm;
            for (size_t l = 0; l < out.layers.size(); ++l) {
                const LayerModel lm = layer_model(spec, l);
                std::vector<double> wl(d, 0.0); // A_l * w
                for (size_t a = 0; a < d; ++a)
                    for (size_t b = 0; b < d; ++b) wl[a] += lm.w.data[a * d + b] * w[b];
                double* dst = out.layers[l].data.data() + i * n * d;
                for (size_t r = rc.r0; r < rc.r0 + rc.h; ++r)
                    for (size_t c = rc.c0; c < rc.c0 + rc.w; ++c) {
                        const size_t t = r * w_grid + c;
                        for (size_t j = 0; j < d; ++j)
                            dst[t * d + j] = q32(dst[t * d + j] + wl[j]);
                    }
            }
        } else { // Amplitude: scale the deviation from the class anchor by 2.5
            const ClassModel cm = class_model(spec, host);
            for (size_t l = 0; l < out.layers.size(); ++l) {
                const LayerModel lm = layer_model(spec, l);
                std::vector<double> anchor_l(d, 0.0); // A_l * anchor + b_l
                for (size_t a = 0; a < d; ++a) {
                    anchor_l[a] = lm.b.data[a];
                    for (size_t b = 0; b < d; ++b)
                        anchor_l[a] += lm.w.data[a * d + b] * cm.anchor.data[b];
                }
                double* dst = out.layers[l].data.data() + i * n * d;
                for (size_t r = rc.r0; r < rc.r0 + rc.h; ++r)
                    for (size_t c = rc.c0; c < rc.c0 + rc.w; ++c) {
                        const size_t t = r * w_grid + c;
                        for (size_t j = 0; j < d; ++j)
                            dst[t * d + j] =
                                q32(anchor_l[j] + 2.5 * (dst[t * d + j] - anchor_l[j]));
                    }
            }
        }
        for (size_t r = rc.r0; r < rc.r0 + rc.h; ++r)
            for (size_t c = rc.c0; c < rc.c0 + rc.w; ++c)
                out.anomaly_mask[i * n + r * w_grid + c] = 1;
        out.image_label[i] = 1;
    }
    out.validate();
    return out;
}

TokenBatch merge_batches(const std::vector<TokenBatch>& batches) {
    if (batches.empty()) throw ContractError("merge_batches: empty input");
    TokenBatch out;
    out.grid_h = batches[0].grid_h;
    out.grid_w = batches[0].grid_w;
    const size_t n_layers = batches[0].layers.size();
    const size_t n = batches[0].tokens();
    const size_t d = batches[0].layers[0].shape[2];
    size_t total = 0;
    for (const auto& b : batches) {
        b.validate();
        if (b.grid_h != out.grid_h || b.grid_w != out.grid_w || b.layers.size() != n_layers ||
            b.layers[0].shape[2] != d)
            throw DimensionError("merge_batches: incompatible batch structure");
        total += b.batch();
    }
    out.layers.assign(n_layers, Tensor({total, n, d}));
    size_t at = 0;
    for (const auto& b : batches) {
        for (size_t l = 0; l < n_layers; ++l)
            std::copy_n(b.layers[l].data.data(), b.layers[l].numel(),
                        out.layers[l].data.data() + at * n * d);
        out.class_ids.insert(out.class_ids.end(), b.class_ids.begin(), b.class_ids.end());
        out.anomaly_mask.insert(out.anomaly_mask.end(), b.anomaly_mask.begin(),
                                b.anomaly_mask.end());
        out.image_label.insert(out.image_label.end(), b.image_label.begin(),
                               b.image_label.end());
        at += b.batch();
    }
    out.validate();
    return out;
}

TokenBatch select_samples(const TokenBatch& b, const std::vector<size_t>& idx) {
    TokenBatch out;
    out.grid_h = b.grid_h;
    out.grid_w = b.grid_w;
    const size_t n = b.tokens();
    const size_t d = b.layers[0].shape[2];
    out.layers.assign(b.layers.size(), Tensor({idx.size(), n, d}));
    for (size_t k = 0; k < idx.size(); ++k) {
        const size_t i = idx[k];
        if (i >= b.batch()) throw ContractError("select_samples: index out of range");
        for (size_t l = 0; l < b.layers.size(); ++l)
            std::copy_n(b.layers[l].data.data() + i * n * d, n * d,
                        out.layers[l].data.data() + k * n * d);
        out.class_ids.push_back(b.class_ids[i]);
        out.image_label.push_back(b.image_label[i]);
        out.anomaly_mask.insert(out.anomaly_mask.end(), b.anomaly_mask.begin() + i * n,
                                b.anomaly_mask.begin() + (i + 1) * n);
    }
    return out;
}

void write_dataset(const std::vector<TokenBatch>& batches, const std::string& path,
                   const SyntheticSpec* spec) {
    nlohmann::ordered_json header;
    header["format_version"] = 1;
    header["kind"] = "dataset";
    std::vector<uint8_t> payload;
    auto records = nlohmann::ordered_json::array();
    for (const auto& b : batches) {
        b.validate();
        nlohmann::ordered_json rec;
        rec["batch"] = b.batch();
        rec["class_ids"] = b.class_ids;
        rec["offset"] = payload.size();
        for (const auto& layer : b.layers) put_f32(payload, layer.data);
        put_bits(payload, b.anomaly_mask);
        records.push_back(std::move(rec));
    }
    if (!batches.empty()) {
        header["grid_h"] = batches[0].grid_h;
        header["grid_w"] = batches[0].grid_w;
        header["d_model"] = batches[0].layers[0].shape[2];
        header["n_encoder_layers"] = batches[0].layers.size();
    }
    header["n_records"] = batches.size();
    header["records"] = std::move(records);
    header["payload_bytes"] = payload.size();
    if (spec != nullptr) header["spec"] = spec->to_json();
    write_container(path, "SBK1", header, payload);
}

std::vector<TokenBatch> read_dataset(const std::string& path) {
    Container c = read_container(path, "SBK1", 1);
    std::vector<TokenBatch> out;
    const size_t n_records = c.header.at("n_records").get<size_t>();
    if (n_records == 0) return out;
    const size_t gh = c.header.at("grid_h").get<size_t>();
    const size_t gw = c.header.at("grid_w").get<size_t>();
    const size_t d = c.header.at("d_model").get<size_t>();
    const size_t n_layers = c.header.at("n_encoder_layers").get<size_t>();
    const size_t n = gh * gw;
    for (const auto& rec : c.header.at("records")) {
        TokenBatch tb;
        tb.grid_h = gh;
        tb.grid_w = gw;
        const size_t b = rec.at("batch").get<size_t>();
        tb.class_ids = rec.at("class_ids").get<std::vector<int>>();
        if (tb.class_ids.size() != b)
            throw FormatError(path + ": record class_ids length mismatch");
        size_t off = rec.at("offset").get<size_t>();
        for (size_t l = 0; l < n_layers; ++l) {
            tb.layers.emplace_back(Shape{b, n, d}, get_f32(c.payload, off, b * n * d));
            off += b * n * d * 4;
        }
        tb.anomaly_mask = get_bits(c.payload, off, b * n);
        tb.image_label.assign(b, 0);
        for (size_t i = 0; i < b; ++i) {
            uint8_t any = 0;
            for (size_t t = 0; t < n; ++t) any |= tb.anomaly_mask[i * n + t];
            tb.image_label[i] = any;
        }
        tb.validate();
        out.push_back(std::move(tb));
    }
    return out;
}

} // namespace sbk
