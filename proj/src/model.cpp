#include "sbk/model.hpp"

#include <cmath>

#include "sbk/container.hpp"
#include "sbk/jsonutil.hpp"

namespace sbk {

namespace {
constexpr double kLnEps = 1e-6;

std::string attention_variant_str(AttentionVariant v) {
    return v == AttentionVariant::Softmax ? "softmax" : "sigmoid";
}
AttentionVariant attention_variant_from(const std::string& s) {
    if (s == "softmax") return AttentionVariant::Softmax;
    if (s == "sigmoid") return AttentionVariant::Sigmoid;
    throw ParameterError("unknown attention variant: " + s);
}
} // namespace

void ModelConfig::validate() const {
    if (decoder_depth < 1) throw ParameterError("model: decoder_depth must be >= 1");
    if (d_model < 1) throw ParameterError("model: d_model must be >= 1");
    if (attention.d_model != d_model || attention.n_heads != n_heads)
        throw ParameterError("model: attention config must mirror d_model/n_heads");
    attention.validate();
    if (bottleneck == BottleneckKind::LRNB) {
        if (lrnb.d_model != d_model)
            throw ParameterError("model: lrnb.d_model must equal d_model");
        lrnb.validate();
    }
}

nlohmann::ordered_json ModelConfig::to_json() const {
    nlohmann::ordered_json j;
    j["version"] = 1;
    j["d_model"] = d_model;
    j["n_heads"] = n_heads;
    j["decoder_depth"] = decoder_depth;
    nlohmann::ordered_json a;
    a["variant"] = attention_variant_str(attention.variant);
    a["self_mask"] = attention.self_mask;
    a["attn_dropout_rate"] = attention.attn_dropout_rate;
    if (attention.neighbor_mask_radius)
        a["neighbor_mask_radius"] = *attention.neighbor_mask_radius;
    else
        a["neighbor_mask_radius"] = nullptr;
    a["output_scale_mode"] =
        attention.output_scale_mode == OutputScaleMode::DivideByN ? "divide_by_n" : "none";
    j["attention"] = std::move(a);
    j["bottleneck"] = to_string(bottleneck);
    nlohmann::ordered_json l;
    l["depth_i"] = lrnb.depth_i;
    l["noise_rate"] = lrnb.noise_rate;
    l["gaussian_noise"] = lrnb.gaussian_noise;
    j["lrnb"] = std::move(l);
    j["fusion_layers"] = fusion_layers;
    return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::ordered_json& j) {
    check_config_keys(j,
                      {"version", "d_model", "n_heads", "decoder_depth", "attention",
                       "bottleneck", "lrnb", "fusion_layers"},
                      "model config");
    ModelConfig m;
    m.d_model = json_get<size_t>(j, "d_model", m.d_model);
    m.n_heads = json_get<size_t>(j, "n_heads", m.n_heads);
    m.decoder_depth = json_get<size_t>(j, "decoder_depth", m.decoder_depth);
    if (j.contains("attention")) {
        const auto& a = j.at("attention");
        std::string unknown;
        for (const auto& item : a.items())
            if (item.key() != "variant" && item.key() != "self_mask" &&
                item.key() != "attn_dropout_rate" && item.key() != "neighbor_mask_radius" &&
                item.key() != "output_scale_mode")
                unknown += (unknown.empty() ? "" : ", ") + item.key();
        if (!unknown.empty())
            throw ParameterError("model config: unknown attention keys: " + unknown);
        if (a.contains("variant"))
            m.attention.variant = attention_variant_from(a.at("variant").get<std::string>());
        m.attention.self_mask = json_get<bool>(a, "self_mask", m.attention.self_mask);
        m.attention.attn_dropout_rate =
            json_get<double>(a, "attn_dropout_rate", m.attention.attn_dropout_rate);
        if (a.contains("neighbor_mask_radius") && !a.at("neighbor_mask_radius").is_null())
            m.attention.neighbor_mask_radius = a.at("neighbor_mask_radius").get<int>();
        if (a.contains("output_scale_mode")) {
            const std::string s = a.at("output_scale_mode").get<std::string>();
            if (s == "none")
                m.attention.output_scale_mode = OutputScaleMode::None;
            else if (s == "divide_by_n")
                m.attention.output_scale_mode = OutputScaleMode::DivideByN;
            else
                throw ParameterError("unknown output_scale_mode: " + s);
        }
    }
    if (j.contains("bottleneck"))
        m.bottleneck = bottleneck_kind_from_string(j.at("bottleneck").get<std::string>());
    if (j.contains("lrnb")) {
        const auto& l = j.at("lrnb");
        std::string unknown;
        for (const auto& item : l.items())
            if (item.key() != "depth_i" && item.key() != "noise_rate" &&
                item.key() != "gaussian_noise")
                unknown += (unknown.empty() ? "" : ", ") + item.key();
        if (!unknown.empty())
            throw ParameterError("model config: unknown lrnb keys: " + unknown);
        m.lrnb.depth_i = json_get<size_t>(l, "depth_i", m.lrnb.depth_i);
        m.lrnb.noise_rate = json_get<double>(l, "noise_rate", m.lrnb.noise_rate);
        m.lrnb.gaussian_noise = json_get<bool>(l, "gaussian_noise", m.lrnb.gaussian_noise);
    }
    if (j.contains("fusion_layers"))
        m.fusion_layers = j.at("fusion_layers").get<std::vector<size_t>>();
    m.attention.d_model = m.d_model;
    m.attention.n_heads = m.n_heads;
    m.lrnb.d_model = m.d_model;
    m.validate();
    return m;
}

void register_model_params(ParamStore& ps, const ModelConfig& cfg) {
    cfg.validate();
    const size_t d = cfg.d_model;
    if (cfg.bottleneck == BottleneckKind::LRNB) register_lrnb_params(ps, cfg.lrnb, "bn");
    for (size_t l = 0; l < cfg.decoder_depth; ++l) {
        const std::string p = "dec" + std::to_string(l);
        ps.add(p + ".ln1.gamma", Tensor({d}));
        ps.add(p + ".ln1.beta", Tensor({d}));
        for (const char* proj : {"q", "k", "v", "out"}) {
            ps.add(p + ".attn." + proj + ".w", Tensor({d, d}));
            ps.add(p + ".attn." + proj + ".b", Tensor({d}));
        }
        ps.add(p + ".ln2.gamma", Tensor({d}));
        ps.add(p + ".ln2.beta", Tensor({d}));
        ps.add(p + ".mlp.fc1.w", Tensor({d, 4 * d}));
        ps.add(p + ".mlp.fc1.b", Tensor({4 * d}));
        ps.add(p + ".mlp.fc2.w", Tensor({4 * d, d}));
        ps.add(p + ".mlp.fc2.b", Tensor({d}));
    }
}

Tensor sinusoidal_positions(size_t n, size_t d) {
    Tensor pe({n, d});
    for (size_t t = 0; t < n; ++t)
        for (size_t j = 0; j < d; j += 2) {
            const double freq =
                std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(d));
            const double angle = static_cast<double>(t) * freq;
            pe.data[t * d + j] = std::sin(angle);
            if (j + 1 < d) pe.data[t * d + j + 1] = std::cos(angle);
        }
    return pe;
}

ForwardResult model_forward(Graph& g, const TokenBatch& batch, const ModelConfig& cfg,
                            const BoundParams& params, bool training, RandomState rng) {
    cfg.validate();
    batch.validate();
    const size_t d = batch.layers[0].shape[2];
    if (d != cfg.d_model)
        throw DimensionError("model_forward: batch d_model " + std::to_string(d) +
                             " != config d_model " + std::to_string(cfg.d_model));
    // choose fusion layers
    std::vector<Tensor> fused_in;
    if (cfg.fusion_layers.empty()) {
        fused_in = batch.layers;
    } else {
        for (size_t idx : cfg.fusion_layers) {
            if (idx >= batch.layers.size())
                throw DimensionError("model_forward: fusion layer index " +
                                     std::to_string(idx) + " out of range");
            fused_in.push_back(batch.layers[idx]);
        }
    }
    const Tensor target = fuse_multiscale(fused_in);
    Var target_leaf = g.leaf(target, false);

    Var h = target_leaf;
    switch (cfg.bottleneck) {
    case BottleneckKind::None: break;
    case BottleneckKind::FeatureJitter:
        h = feature_jitter(g, h, cfg.lrnb.noise_rate, training, rng.split(1));
        break;
    case BottleneckKind::DropoutOnly:
        h = g.dropout(h, cfg.lrnb.noise_rate, training, rng.split(1));
        break;
    case BottleneckKind::LRNB: {
        const size_t div = size_t{1} << cfg.lrnb.depth_i;
        if (batch.tokens() % div != 0)
            throw DimensionError("model_forward: grid " + std::to_string(batch.tokens()) +
                                 " tokens not divisible by 2^depth_i = " + std::to_string(div));
        h = lrnb_forward(g, h, params, "bn", cfg.lrnb, training, rng.split(1));
        break;
    }
    }

    const size_t n = batch.tokens();
    Var pe = g.leaf(sinusoidal_positions(n, d), false);
    AttentionMask nma;
    if (cfg.attention.neighbor_mask_radius)
        nma = build_neighbor_mask(batch.grid_h, batch.grid_w,
                                  *cfg.attention.neighbor_mask_radius);

    Var x = h;
    for (size_t l = 0; l < cfg.decoder_depth; ++l) {
        const std::string p = "dec" + std::to_string(l);
        Var a = g.layer_norm(x, params(p + ".ln1.gamma"), params(p + ".ln1.beta"), kLnEps);
        Var aqk = g.add_bcast0(a, pe);
        Var q = g.split_heads(
            g.add_rowvec(g.matmul(aqk, params(p + ".attn.q.w")), params(p + ".attn.q.b")),
            cfg.n_heads);
        Var k = g.split_heads(
            g.add_rowvec(g.matmul(aqk, params(p + ".attn.k.w")), params(p + ".attn.k.b")),
            cfg.n_heads);
        Var v = g.split_heads(
            g.add_rowvec(g.matmul(a, params(p + ".attn.v.w")), params(p + ".attn.v.b")),
            cfg.n_heads);
        Var attn = attention_forward(g, q, k, v, cfg.attention, training, rng.split(100 + l),
                                     nma.empty() ? nullptr : &nma);
        Var attn_out = g.add_rowvec(g.matmul(g.merge_heads(attn), params(p + ".attn.out.w")),
                                    params(p + ".attn.out.b"));
        x = g.add(x, attn_out);
        Var m = g.layer_norm(x, params(p + ".ln2.gamma"), params(p + ".ln2.beta"), kLnEps);
        Var mlp = g.add_rowvec(
            g.matmul(g.gelu(g.add_rowvec(g.matmul(m, params(p + ".mlp.fc1.w")),
                                         params(p + ".mlp.fc1.b"))),
                     params(p + ".mlp.fc2.w")),
            params(p + ".mlp.fc2.b"));
        x = g.add(x, mlp);
    }
    return ForwardResult{x, target_leaf};
}

InferenceOutput run_inference(const TokenBatch& batch, const ModelConfig& cfg,
                              const ParamStore& ps) {
    Graph g;
    BoundParams bp = bind_params(g, ps, false);
    auto fr = model_forward(g, batch, cfg, bp, false, RandomState::from_seed(0));
    return InferenceOutput{g.value(fr.reconstructed), g.value(fr.target_leaf)};
}

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ParamStore& ps) {
    nlohmann::ordered_json header;
    header["format_version"] = 1;
    header["kind"] = "model";
    header["model_config"] = cfg.to_json();
    std::vector<uint8_t> payload;
    auto index = nlohmann::ordered_json::array();
    for (const auto& name : ps.names()) {
        const Tensor& t = ps.at(name);
        nlohmann::ordered_json e;
        e["name"] = name;
        e["shape"] = t.shape;
        e["offset"] = payload.size();
        index.push_back(std::move(e));
        put_f64(payload, t.data);
    }
    header["params"] = std::move(index);
    header["payload_bytes"] = payload.size();
    write_container(path, "SBM1", header, payload);
}

Checkpoint load_checkpoint(const std::string& path) {
    Container c = read_container(path, "SBM1", 1);
    Checkpoint ck;
    ck.config = ModelConfig::from_json(c.header.at("model_config"));
    for (const auto& e : c.header.at("params")) {
        const std::string name = e.at("name").get<std::string>();
        const Shape shape = e.at("shape").get<Shape>();
        const size_t offset = e.at("offset").get<size_t>();
        ck.params.add(name, Tensor(shape, get_f64(c.payload, offset, shape_numel(shape))));
    }
    // cross-check against a freshly registered store
    ParamStore expect;
    register_model_params(expect, ck.config);
    if (expect.names() != ck.params.names())
        throw FormatError(path + ": checkpoint parameters do not match its model config");
    for (const auto& name : expect.names())
        if (expect.at(name).shape != ck.params.at(name).shape)
            throw FormatError(path + ": parameter shape mismatch for " + name);
    return ck;
}

} // namespace sbk
