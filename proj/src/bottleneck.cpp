#include "sbk/bottleneck.hpp"

#include <cmath>

#include "sbk/kernels.hpp"

namespace sbk {

namespace {
constexpr double kLnEps = 1e-6;
}

BottleneckKind bottleneck_kind_from_string(const std::string& s) {
    if (s == "none") return BottleneckKind::None;
    if (s == "feature_jitter") return BottleneckKind::FeatureJitter;
    if (s == "dropout_only") return BottleneckKind::DropoutOnly;
    if (s == "lrnb") return BottleneckKind::LRNB;
    throw ParameterError("unknown bottleneck kind: " + s);
}

std::string to_string(BottleneckKind k) {
    switch (k) {
    case BottleneckKind::None: return "none";
    case BottleneckKind::FeatureJitter: return "feature_jitter";
    case BottleneckKind::DropoutOnly: return "dropout_only";
    case BottleneckKind::LRNB: return "lrnb";
    }
    return "?";
}

void LrnbConfig::validate() const {
    if (depth_i < 1) throw ParameterError("lrnb: depth_i must be >= 1");
    if (d_model < 1) throw ParameterError("lrnb: d_model must be >= 1");
    if (noise_rate < 0.0 || noise_rate >= 1.0)
        throw ParameterError("lrnb: noise_rate must be in [0,1)");
}

Tensor fuse_multiscale(const std::vector<Tensor>& features, double eps) {
    if (features.empty()) throw ContractError("fuse_multiscale: empty feature sequence");
    const Shape& s = features[0].shape;
    for (const auto& f : features)
        if (!same_shape(f.shape, s))
            throw DimensionError("fuse_multiscale: shape mismatch " + shape_str(f.shape) +
                                 " vs " + shape_str(s));
    const size_t d = s.back();
    const size_t rows = features[0].numel() / d;
    std::vector<double> ones(d, 1.0), zeros(d, 0.0), xhat(rows * d), istd(rows);
    Tensor out(s, 0.0);
    Tensor tmp(s);
    for (const auto& f : features) {
        kernels::layernorm_rows(tmp.data.data(), xhat.data(), istd.data(), f.data.data(),
                                ones.data(), zeros.data(), rows, d, eps);
        kernels::ew_axpy(out.data.data(), 1.0, tmp.data.data(), out.numel());
    }
    kernels::ew_scale(out.data.data(), out.data.data(),
                      1.0 / static_cast<double>(features.size()), out.numel());
    check_finite(out, "fuse_multiscale");
    return out;
}

void register_lrnb_params(ParamStore& ps, const LrnbConfig& cfg, const std::string& prefix) {
    cfg.validate();
    const size_t d = cfg.d_model;
    for (size_t j = 0; j < cfg.depth_i; ++j) {
        const std::string p = prefix + ".down" + std::to_string(j);
        ps.add(p + ".ln.gamma", Tensor({2 * d}));
        ps.add(p + ".ln.beta", Tensor({2 * d}));
        ps.add(p + ".w", Tensor({2 * d, d}));
        ps.add(p + ".b", Tensor({d}));
    }
    for (size_t j = 0; j < cfg.depth_i; ++j) {
        const std::string p = prefix + ".up" + std::to_string(j);
        ps.add(p + ".ln.gamma", Tensor({d}));
        ps.add(p + ".ln.beta", Tensor({d}));
        ps.add(p + ".w", Tensor({d, 2 * d}));
        ps.add(p + ".b", Tensor({2 * d}));
    }
}

Var down_block(Graph& g, Var x, const BoundParams& p, const std::string& prefix) {
    const Shape s = g.shape(x);
    if (s.size() != 3) throw DimensionError("down_block: want [B,N,d], got " + shape_str(s));
    if (s[1] % 2 != 0)
        throw DimensionError("down_block: token count " + std::to_string(s[1]) +
                             " must be even");
    Var pairs = g.reshape(x, {s[0], s[1] / 2, 2 * s[2]});
    Var ln = g.layer_norm(pairs, p(prefix + ".ln.gamma"), p(prefix + ".ln.beta"), kLnEps);
    Var h = g.add_rowvec(g.matmul(ln, p(prefix + ".w")), p(prefix + ".b"));
    return g.gelu(h);
}

Var up_block(Graph& g, Var x, const BoundParams& p, const std::string& prefix) {
    const Shape s = g.shape(x);
    if (s.size() != 3) throw DimensionError("up_block: want [B,M,d], got " + shape_str(s));
    Var ln = g.layer_norm(x, p(prefix + ".ln.gamma"), p(prefix + ".ln.beta"), kLnEps);
    Var h = g.gelu(g.add_rowvec(g.matmul(ln, p(prefix + ".w")), p(prefix + ".b")));
    return g.reshape(h, {s[0], 2 * s[1], s[2]});
}

Var lrnb_forward(Graph& g, Var x, const BoundParams& p, const std::string& prefix,
                 const LrnbConfig& cfg, bool training, RandomState rng) {
    cfg.validate();
    const Shape s = g.shape(x);
    if (s.size() != 3 || s[2] != cfg.d_model)
        throw DimensionError("lrnb_forward: want [B,N," + std::to_string(cfg.d_model) +
                             "], got " + shape_str(s));
    const size_t div = size_t{1} << cfg.depth_i;
    if (s[1] % div != 0)
        throw DimensionError("lrnb_forward: token count " + std::to_string(s[1]) +
                             " not divisible by 2^depth_i = " + std::to_string(div));
    Var h = x;
    if (training && cfg.noise_rate > 0.0) {
        h = g.dropout(h, cfg.noise_rate, true, rng.split(1));
        if (cfg.gaussian_noise) {
            // Per-feature std over the batch and token axes, from the
            // post-dropout values; the noise itself is a constant leaf.
            const Tensor& hv = g.value(h);
            const size_t d = s[2];
            const size_t rows = hv.numel() / d;
            std::vector<double> mean(d, 0.0), var(d, 0.0);
            for (size_t r = 0; r < rows; ++r)
                for (size_t j = 0; j < d; ++j) mean[j] += hv.data[r * d + j];
            for (size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(rows);
            for (size_t r = 0; r < rows; ++r)
                for (size_t j = 0; j < d; ++j) {
                    const double dv = hv.data[r * d + j] - mean[j];
                    var[j] += dv * dv;
                }
            for (size_t j = 0; j < d; ++j) var[j] /= static_cast<double>(rows);
            Tensor noise(s);
            auto nrng = rng.split(2);
            for (size_t r = 0; r < rows; ++r)
                for (size_t j = 0; j < d; ++j)
                    noise.data[r * d + j] =
                        cfg.noise_rate * std::sqrt(var[j]) * nrng.next_gauss();
            h = g.add(h, g.leaf(std::move(noise), false));
        }
    }
    for (size_t j = 0; j < cfg.depth_i; ++j)
        h = down_block(g, h, p, prefix + ".down" + std::to_string(j));
    for (size_t j = 0; j < cfg.depth_i; ++j)
        h = up_block(g, h, p, prefix + ".up" + std::to_string(j));
    return h;
}

Var feature_jitter(Graph& g, Var x, double scale, bool training, RandomState rng) {
    if (scale < 0.0) throw ParameterError("feature_jitter: scale must be >= 0");
    if (!training || scale == 0.0) return x;
    const Shape s = g.shape(x);
    if (s.size() != 3) throw DimensionError("feature_jitter: want [B,N,d], got " + shape_str(s));
    const size_t d = s[2];
    const size_t tokens = g.value(x).numel() / d;
    Tensor noise(s);
    const auto& xv = g.value(x).data;
    for (size_t t = 0; t < tokens; ++t) {
        double norm2 = 0.0;
        for (size_t j = 0; j < d; ++j) norm2 += xv[t * d + j] * xv[t * d + j];
        const double std = scale * std::sqrt(norm2) / static_cast<double>(d);
        for (size_t j = 0; j < d; ++j) noise.data[t * d + j] = std * rng.next_gauss();
    }
    return g.add(x, g.leaf(std::move(noise), false));
}

} // namespace sbk
