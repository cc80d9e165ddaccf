#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>

#include "sbk/model.hpp"
#include "sbk/train.hpp"

using namespace sbk;

namespace {

ModelConfig small_model(BottleneckKind bn = BottleneckKind::LRNB) {
    ModelConfig m;
    m.d_model = 16;
    m.n_heads = 2;
    m.decoder_depth = 2;
    m.attention.d_model = 16;
    m.attention.n_heads = 2;
    m.bottleneck = bn;
    m.lrnb.d_model = 16;
    m.lrnb.depth_i = 1;
    m.lrnb.noise_rate = 0.1;
    return m;
}

SyntheticSpec small_data_spec() {
    SyntheticSpec s;
    s.n_classes = 2;
    s.grid_h = 4;
    s.grid_w = 4;
    s.d_model = 16;
    s.manifold_rank = 3;
    s.smoothness = 1.0;
    s.seed = 77;
    return s;
}

} // namespace

TEST_CASE("config validation rejects depth 0 and mismatched sub-configs") {
    ModelConfig m = small_model();
    m.decoder_depth = 0;
    CHECK_THROWS_AS(m.validate(), ParameterError);
    ModelConfig m2 = small_model();
    m2.attention.d_model = 32;
    CHECK_THROWS_AS(m2.validate(), ParameterError);
}

TEST_CASE("inference is deterministic bitwise") {
    auto spec = small_data_spec();
    auto batch = generate_normal(spec, 0, 3, RandomState::from_seed(1));
    for (auto bn : {BottleneckKind::None, BottleneckKind::DropoutOnly, BottleneckKind::LRNB}) {
        ModelConfig m = small_model(bn);
        ParamStore ps;
        register_model_params(ps, m);
        init_params(ps, 3);
        auto a = run_inference(batch, m, ps);
        auto b = run_inference(batch, m, ps);
        CHECK(std::memcmp(a.reconstructed.data.data(), b.reconstructed.data.data(),
                          a.reconstructed.numel() * 8) == 0);
        CHECK(a.reconstructed.shape == a.target.shape);
    }
}

TEST_CASE("gradients reach decoder and bottleneck params but not the target leaf") {
    auto spec = small_data_spec();
    auto batch = generate_normal(spec, 0, 2, RandomState::from_seed(2));
    ModelConfig m = small_model(BottleneckKind::LRNB);
    ParamStore ps;
    register_model_params(ps, m);
    init_params(ps, 4);

    Graph g;
    BoundParams bp = bind_params(g, ps, true);
    auto fr = model_forward(g, batch, m, bp, true, RandomState::from_seed(5));
    Var loss = hard_mining_cosine_loss(g, fr.reconstructed, fr.target_leaf, 1.0);
    g.backward(loss);

    CHECK_FALSE(g.has_grad(fr.target_leaf));
    size_t nonzero_params = 0;
    for (const auto& name : ps.names()) {
        REQUIRE(g.has_grad(bp(name)));
        double mag = 0.0;
        for (double v : g.grad(bp(name))) mag += std::fabs(v);
        if (mag > 0.0) ++nonzero_params;
    }
    // every block is on the loss path; allow a few exactly-zero grads (GELU at 0)
    CHECK(nonzero_params > ps.size() * 3 / 4);
}

TEST_CASE("parameter init: determinism, LN gains, weight std") {
    ModelConfig m;
    m.d_model = 64;
    m.n_heads = 4;
    m.decoder_depth = 1;
    m.attention.d_model = 64;
    m.attention.n_heads = 4;
    m.bottleneck = BottleneckKind::None;
    ParamStore a, b;
    register_model_params(a, m);
    register_model_params(b, m);
    init_params(a, 12);
    init_params(b, 12);
    for (const auto& name : a.names())
        CHECK(std::memcmp(a.at(name).data.data(), b.at(name).data.data(),
                          a.at(name).numel() * 8) == 0);

    for (double v : a.at("dec0.ln1.gamma").data) CHECK(v == 1.0);
    for (double v : a.at("dec0.attn.q.b").data) CHECK(v == 0.0);

    const auto& w = a.at("dec0.attn.q.w").data; // 64x64 = 4096 samples
    double mean = 0.0;
    for (double v : w) mean += v;
    mean /= static_cast<double>(w.size());
    double var = 0.0;
    for (double v : w) var += (v - mean) * (v - mean);
    const double std = std::sqrt(var / static_cast<double>(w.size()));
    CHECK(std > 0.018);
    CHECK(std < 0.022);
}

TEST_CASE("overfit sanity: no bottleneck drives loss below 1e-3 quickly") {
    auto spec = small_data_spec();
    ModelConfig m = small_model(BottleneckKind::None);
    m.attention.variant = AttentionVariant::Softmax;
    m.attention.self_mask = false;
    m.attention.attn_dropout_rate = 0.0;
    m.attention.output_scale_mode = OutputScaleMode::None;
    TrainConfig t;
    t.batch_size = 2;
    t.total_steps = 2000;
    t.warmup_steps = 20;
    t.hard_mining_keep = 1.0;
    t.weight_decay = 0.0;
    t.seed = 6;
    t.log_interval = 10;
    auto data = generate_normal(spec, 0, 2, RandomState::from_seed(7));
    auto res = train(m, {data}, t);
    double best = 1e300;
    for (const auto& row : res.log) best = std::min(best, row.loss);
    CHECK(best < 1e-3);
}

TEST_CASE("frozen encoder: training never touches the target path") {
    auto spec = small_data_spec();
    auto batch = generate_normal(spec, 1, 2, RandomState::from_seed(8));
    ModelConfig m = small_model(BottleneckKind::LRNB);
    // target before training
    ParamStore ps;
    register_model_params(ps, m);
    init_params(ps, 9);
    auto before = run_inference(batch, m, ps);
    TrainConfig t;
    t.batch_size = 2;
    t.total_steps = 5;
    t.warmup_steps = 1;
    t.seed = 10;
    auto res = train(m, {batch}, t);
    auto after = run_inference(batch, m, res.params);
    CHECK(std::memcmp(before.target.data.data(), after.target.data.data(),
                      before.target.numel() * 8) == 0);
}

TEST_CASE("checkpoint round-trip is bitwise and validates against its config") {
    ModelConfig m = small_model(BottleneckKind::LRNB);
    ParamStore ps;
    register_model_params(ps, m);
    init_params(ps, 13);
    const std::string path = "/tmp/sbk_test_ckpt.sbm";
    save_checkpoint(path, m, ps);
    auto ck = load_checkpoint(path);
    CHECK(ck.config.to_json() == m.to_json());
    for (const auto& name : ps.names())
        CHECK(std::memcmp(ck.params.at(name).data.data(), ps.at(name).data.data(),
                          ps.at(name).numel() * 8) == 0);
    std::remove(path.c_str());
}

TEST_CASE("model config json: round trip and unknown keys") {
    ModelConfig m = small_model();
    auto j = m.to_json();
    auto m2 = ModelConfig::from_json(j);
    CHECK(m2.to_json() == j);
    j["bogus"] = 1;
    CHECK_THROWS_AS((void)ModelConfig::from_json(j), ParameterError);
    auto j2 = m.to_json();
    j2["attention"]["typo"] = true;
    CHECK_THROWS_AS((void)ModelConfig::from_json(j2), ParameterError);
}

TEST_CASE("model forward gradcheck against finite differences") {
    // one decoder layer + LRNB, full loss path, a couple of parameters probed
    auto spec = small_data_spec();
    auto batch = generate_normal(spec, 0, 1, RandomState::from_seed(14));
    ModelConfig m = small_model(BottleneckKind::LRNB);
    m.decoder_depth = 1;
    m.attention.self_mask = true;
    m.attention.variant = AttentionVariant::Sigmoid;
    m.attention.output_scale_mode = OutputScaleMode::DivideByN;
    m.lrnb.noise_rate = 0.0; // deterministic graph for differencing
    ParamStore ps;
    register_model_params(ps, m);
    init_params(ps, 15);

    auto loss_with = [&](const std::string& probe_name, const std::vector<double>& values) {
        ParamStore local;
        register_model_params(local, m);
        init_params(local, 15);
        local.at(probe_name).data = values;
        Graph g;
        BoundParams bp = bind_params(g, local, true);
        auto fr = model_forward(g, batch, m, bp, true, RandomState::from_seed(16));
        Var loss = hard_mining_cosine_loss(g, fr.reconstructed, fr.target_leaf, 1.0);
        return g.value(loss).data[0];
    };

    for (const std::string probe : {std::string("dec0.attn.q.w"), std::string("bn.down0.w"),
                                    std::string("dec0.mlp.fc1.b"), std::string("bn.up0.ln.gamma")}) {
        Graph g;
        BoundParams bp = bind_params(g, ps, true);
        auto fr = model_forward(g, batch, m, bp, true, RandomState::from_seed(16));
        Var loss = hard_mining_cosine_loss(g, fr.reconstructed, fr.target_leaf, 1.0);
        g.backward(loss);
        const auto& ad = g.grad(bp(probe));

        auto base = ps.at(probe).data;
        const double h = 1e-5;
        double max_err = 0.0, scale = 1e-8;
        // probe a deterministic spread of elements (full FD would be slow)
        for (size_t e = 0; e < base.size(); e += std::max<size_t>(1, base.size() / 17)) {
            auto pert = base;
            pert[e] = base[e] + h;
            const double fp = loss_with(probe, pert);
            pert[e] = base[e] - h;
            const double fm = loss_with(probe, pert);
            const double fd = (fp - fm) / (2.0 * h);
            max_err = std::max(max_err, std::fabs(fd - ad[e]));
            scale = std::max({scale, std::fabs(fd), std::fabs(ad[e])});
        }
        CHECK_MESSAGE(max_err / scale < 1e-4, "param ", probe, " rel err ", max_err / scale);
    }
}
