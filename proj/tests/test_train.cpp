#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "sbk/train.hpp"

using namespace sbk;

namespace {

// recon rows with prescribed cosine distance d to target rows e1.
void build_pair(Graph& g, const std::vector<double>& dists, Var& recon, Var& target) {
    const size_t n = dists.size();
    Tensor r({1, n, 2}), t({1, n, 2});
    for (size_t i = 0; i < n; ++i) {
        const double cs = 1.0 - dists[i];
        t.data[i * 2] = 1.0;
        r.data[i * 2] = cs;
        r.data[i * 2 + 1] = std::sqrt(std::max(0.0, 1.0 - cs * cs));
    }
    recon = g.leaf(r, false);
    target = g.leaf(t, false);
}

// Independent scalar AdamW+AMSGrad+clip reference, stepped by hand.
struct ScalarOracle {
    double m = 0, v = 0, vmax = 0;
    size_t t = 0;
    double step(double& p, double grad, double lr, double wd, bool amsgrad) {
        t += 1;
        if (wd > 0) p -= lr * wd * p;
        m = 0.9 * m + 0.1 * grad;
        v = 0.999 * v + 0.001 * grad * grad;
        const double mhat = m / (1.0 - std::pow(0.9, static_cast<double>(t)));
        const double vhat = v / (1.0 - std::pow(0.999, static_cast<double>(t)));
        double den = vhat;
        if (amsgrad) {
            vmax = std::max(vmax, vhat);
            den = vmax;
        }
        double upd = lr * mhat / (std::sqrt(den) + 1e-8);
        upd = std::min(std::max(upd, -lr), lr);
        p -= upd;
        return upd;
    }
};

TrainConfig scalar_cfg(double wd, bool ams) {
    TrainConfig c;
    c.batch_size = 1;
    c.total_steps = 1000;
    c.warmup_steps = 0;
    c.lr_start = 1e-3;
    c.lr_end = 1e-3;
    c.weight_decay = wd;
    c.amsgrad = ams;
    return c;
}

} // namespace

TEST_CASE("loss examples") {
    {
        Graph g;
        auto rng = RandomState::from_seed(1);
        Tensor x = Tensor::randn({1, 5, 3}, rng);
        Var a = g.leaf(x, false);
        Var b = g.leaf(x, false);
        CHECK(g.value(hard_mining_cosine_loss(g, a, b, 0.7)).data[0] ==
              doctest::Approx(0.0).epsilon(1e-12));
    }
    {
        Graph g;
        Var recon, target;
        build_pair(g, {0.1, 0.2, 0.3, 0.4}, recon, target);
        // keep=1: plain mean
        CHECK(g.value(hard_mining_cosine_loss(g, recon, target, 1.0)).data[0] ==
              doctest::Approx(0.25).epsilon(1e-9));
        // keep=0.5: mean of the two hardest
        CHECK(g.value(hard_mining_cosine_loss(g, recon, target, 0.5)).data[0] ==
              doctest::Approx(0.35).epsilon(1e-9));
    }
}

TEST_CASE("hard mining suppresses gradients of easy tokens") {
    Graph g;
    auto rng = RandomState::from_seed(2);
    Tensor r = Tensor::randn({1, 6, 4}, rng);
    Tensor t = Tensor::randn({1, 6, 4}, rng);
    Var recon = g.leaf(r, true);
    Var target = g.leaf(t, false);
    Var dist_probe = mean_cosine_distance(g, recon, target);
    (void)dist_probe;
    Var loss = hard_mining_cosine_loss(g, recon, target, 0.5);
    g.backward(loss);
    const auto& gr = g.grad(recon);
    // exactly 3 kept tokens -> exactly 3 token-rows with nonzero gradient
    size_t rows_nonzero = 0;
    for (size_t row = 0; row < 6; ++row) {
        double mag = 0.0;
        for (size_t j = 0; j < 4; ++j) mag += std::fabs(gr[row * 4 + j]);
        if (mag > 0.0) ++rows_nonzero;
    }
    CHECK(rows_nonzero == 3);
}

TEST_CASE("loss is invariant to joint positive token rescaling") {
    Graph g;
    auto rng = RandomState::from_seed(3);
    Tensor r = Tensor::randn({1, 8, 5}, rng);
    Tensor t = Tensor::randn({1, 8, 5}, rng);
    Tensor r2 = r, t2 = t;
    auto srng = rng.split(1);
    for (size_t row = 0; row < 8; ++row) {
        const double s = 0.1 + 5.0 * srng.next_uniform();
        for (size_t j = 0; j < 5; ++j) {
            r2.data[row * 5 + j] *= s;
            t2.data[row * 5 + j] *= s;
        }
    }
    const double a = g.value(hard_mining_cosine_loss(g, g.leaf(r, false), g.leaf(t, false),
                                                     0.75))
                         .data[0];
    const double b = g.value(hard_mining_cosine_loss(g, g.leaf(r2, false), g.leaf(t2, false),
                                                     0.75))
                         .data[0];
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("lr schedule endpoints, midpoint, continuity, monotonicity") {
    TrainConfig c;
    c.total_steps = 1000;
    c.warmup_steps = 100;
    c.lr_start = 2e-3;
    c.lr_end = 2e-4;
    CHECK(lr_at(0, c) == 0.0);
    CHECK(lr_at(100, c) == 2e-3);
    CHECK(lr_at(1000, c) == doctest::Approx(2e-4).epsilon(1e-15));
    CHECK(lr_at(550, c) == doctest::Approx(1.1e-3).epsilon(1e-12));
    double prev = lr_at(100, c);
    for (size_t s = 101; s <= 1000; ++s) {
        const double cur = lr_at(s, c);
        CHECK(cur <= prev + 1e-15);
        CHECK(std::fabs(cur - prev) < 1.2 * (2e-3 - 2e-4) * 3.1416 / 900.0);
        prev = cur;
    }
    CHECK_THROWS_AS((void)lr_at(1001, c), ContractError);
}

TEST_CASE("optimizer: zero gradient leaves parameters unchanged") {
    ParamStore ps;
    ps.add("p.w", Tensor({3}, {1.0, -2.0, 0.5}));
    AdamState st;
    TrainConfig c = scalar_cfg(0.0, true);
    std::map<std::string, std::vector<double>> grads{{"p.w", {0.0, 0.0, 0.0}}};
    optimizer_step(ps, grads, st, c, 0);
    CHECK(ps.at("p.w").data == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("optimizer: first-step update magnitude is about lr") {
    ParamStore ps;
    ps.add("p.w", Tensor({1}, {0.0}));
    AdamState st;
    TrainConfig c = scalar_cfg(0.0, true);
    std::map<std::string, std::vector<double>> grads{{"p.w", {1.0}}};
    optimizer_step(ps, grads, st, c, 0);
    CHECK(std::fabs(ps.at("p.w").data[0] + 1e-3) < 1e-8); // moved by ~ -lr
}

TEST_CASE("optimizer matches a hand-stepped scalar oracle over 100 steps") {
    for (bool ams : {false, true}) {
        for (double wd : {0.0, 0.01}) {
            ParamStore ps;
            ps.add("p.w", Tensor({1}, {0.7}));
            AdamState st;
            TrainConfig c = scalar_cfg(wd, ams);
            ScalarOracle oracle;
            double ref = 0.7;
            auto rng = RandomState::from_seed(4);
            for (int step = 0; step < 100; ++step) {
                const double gr = rng.next_gauss() * 3.0;
                std::map<std::string, std::vector<double>> grads{{"p.w", {gr}}};
                optimizer_step(ps, grads, st, c, static_cast<size_t>(step));
                oracle.step(ref, gr, 1e-3, wd, ams);
                CHECK(std::fabs(ps.at("p.w").data[0] - ref) < 1e-12);
            }
        }
    }
}

TEST_CASE("amsgrad denominator is elementwise non-decreasing") {
    ParamStore ps;
    ps.add("p.w", Tensor({2}, {0.0, 0.0}));
    AdamState st;
    TrainConfig c = scalar_cfg(0.0, true);
    auto rng = RandomState::from_seed(5);
    std::vector<double> prev{0.0, 0.0};
    for (int step = 0; step < 50; ++step) {
        std::map<std::string, std::vector<double>> grads{
            {"p.w", {rng.next_gauss(), rng.next_gauss() * 0.1}}};
        optimizer_step(ps, grads, st, c, static_cast<size_t>(step));
        for (size_t e = 0; e < 2; ++e) {
            CHECK(st.slots[0].vmax[e] >= prev[e]);
            prev[e] = st.slots[0].vmax[e];
        }
    }
}

TEST_CASE("non-finite gradient aborts the step naming the parameter") {
    ParamStore ps;
    ps.add("dec0.attn.q.w", Tensor({2}, {1.0, 1.0}));
    AdamState st;
    TrainConfig c = scalar_cfg(0.0, true);
    std::map<std::string, std::vector<double>> grads{
        {"dec0.attn.q.w", {1.0, std::numeric_limits<double>::quiet_NaN()}}};
    try {
        optimizer_step(ps, grads, st, c, 0);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("dec0.attn.q.w") != std::string::npos);
    }
    CHECK(ps.at("dec0.attn.q.w").data == std::vector<double>{1.0, 1.0}); // untouched
}

TEST_CASE("train: zero steps returns initial params and empty log") {
    SyntheticSpec s;
    s.n_classes = 2;
    s.grid_h = 4;
    s.grid_w = 4;
    s.d_model = 16;
    s.manifold_rank = 2;
    s.seed = 6;
    ModelConfig m;
    m.d_model = 16;
    m.n_heads = 2;
    m.decoder_depth = 1;
    m.attention.d_model = 16;
    m.attention.n_heads = 2;
    m.bottleneck = BottleneckKind::None;
    TrainConfig c;
    c.total_steps = 0;
    c.warmup_steps = 0;
    c.seed = 11;
    auto data = generate_normal(s, 0, 4, RandomState::from_seed(7));
    auto res = train(m, {data}, c);
    CHECK(res.log.empty());
    ParamStore fresh;
    register_model_params(fresh, m);
    init_params(fresh, 11);
    for (const auto& name : fresh.names())
        CHECK(std::memcmp(res.params.at(name).data.data(), fresh.at(name).data.data(),
                          fresh.at(name).numel() * 8) == 0);
}

TEST_CASE("train: same seed twice gives bitwise identical results") {
    SyntheticSpec s;
    s.n_classes = 2;
    s.grid_h = 4;
    s.grid_w = 4;
    s.d_model = 16;
    s.manifold_rank = 2;
    s.seed = 8;
    ModelConfig m;
    m.d_model = 16;
    m.n_heads = 2;
    m.decoder_depth = 1;
    m.attention.d_model = 16;
    m.attention.n_heads = 2;
    m.bottleneck = BottleneckKind::LRNB;
    m.lrnb.d_model = 16;
    m.lrnb.depth_i = 1;
    TrainConfig c;
    c.batch_size = 2;
    c.total_steps = 8;
    c.warmup_steps = 2;
    c.seed = 21;
    c.log_interval = 2;
    auto data = generate_normal(s, 1, 4, RandomState::from_seed(9));
    auto r1 = train(m, {data}, c);
    auto r2 = train(m, {data}, c);
    for (const auto& name : r1.params.names())
        CHECK(std::memcmp(r1.params.at(name).data.data(), r2.params.at(name).data.data(),
                          r1.params.at(name).numel() * 8) == 0);
    CHECK(train_log_csv(r1.log) == train_log_csv(r2.log));
    CHECK(r1.log.size() == c.total_steps / c.log_interval);
}

TEST_CASE("train rejects anomalous training data") {
    SyntheticSpec s;
    s.n_classes = 2;
    s.grid_h = 4;
    s.grid_w = 4;
    s.d_model = 16;
    s.manifold_rank = 2;
    s.seed = 10;
    ModelConfig m;
    m.d_model = 16;
    m.n_heads = 2;
    m.decoder_depth = 1;
    m.attention.d_model = 16;
    m.attention.n_heads = 2;
    m.bottleneck = BottleneckKind::None;
    TrainConfig c;
    c.total_steps = 1;
    c.warmup_steps = 0;
    auto normal = generate_normal(s, 0, 2, RandomState::from_seed(11));
    auto anom = inject_anomaly(normal, s, RandomState::from_seed(12));
    CHECK_THROWS_AS((void)train(m, {anom}, c), ContractError);
}
