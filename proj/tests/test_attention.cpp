#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "sbk/attention.hpp"
#include "testutil.hpp"

using namespace sbk;
using testutil::grad_check;

namespace {

Tensor gaussian_peak_map(size_t h, size_t w, double peak, double sigma, size_t pr, size_t pc) {
    Tensor m({h, w});
    for (size_t r = 0; r < h; ++r)
        for (size_t c = 0; c < w; ++c) {
            const double dr = static_cast<double>(r) - static_cast<double>(pr);
            const double dc = static_cast<double>(c) - static_cast<double>(pc);
            m.data[r * w + c] = peak * std::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma));
        }
    return m;
}

} // namespace

TEST_CASE("sigmoid variant with zero scores averages V at 0.5") {
    const size_t n = 4, dk = 3;
    Graph g;
    auto rng = RandomState::from_seed(17);
    Var q = g.leaf(Tensor({1, 1, n, dk}, 0.0), false);
    Var k = g.leaf(Tensor::randn({1, 1, n, dk}, rng), false);
    Tensor vt = Tensor::randn({1, 1, n, dk}, rng);
    Var v = g.leaf(vt, false);

    AttentionConfig cfg;
    cfg.d_model = dk;
    cfg.n_heads = 1;
    cfg.variant = AttentionVariant::Sigmoid;
    cfg.output_scale_mode = OutputScaleMode::None;
    Var out = attention_forward(g, q, k, v, cfg, false, rng.split(1));

    std::vector<double> colsum(dk, 0.0);
    for (size_t t = 0; t < n; ++t)
        for (size_t j = 0; j < dk; ++j) colsum[j] += vt.data[t * dk + j];
    for (size_t t = 0; t < n; ++t)
        for (size_t j = 0; j < dk; ++j)
            CHECK(g.value(out).data[t * dk + j] ==
                  doctest::Approx(0.5 * colsum[j]).epsilon(1e-12));

    cfg.output_scale_mode = OutputScaleMode::DivideByN;
    Var out2 = attention_forward(g, q, k, v, cfg, false, rng.split(2));
    for (size_t t = 0; t < n; ++t)
        for (size_t j = 0; j < dk; ++j)
            CHECK(g.value(out2).data[t * dk + j] ==
                  doctest::Approx(0.5 * colsum[j] / static_cast<double>(n)).epsilon(1e-12));
}

TEST_CASE("softmax hand case: uniform scores average V") {
    Graph g;
    Var q = g.leaf(Tensor({1, 1, 2, 1}, {1, 1}), false);
    Var k = g.leaf(Tensor({1, 1, 2, 1}, {1, 1}), false);
    Var v = g.leaf(Tensor({1, 1, 2, 1}, {3, 5}), false);
    AttentionConfig cfg;
    cfg.d_model = 1;
    cfg.n_heads = 1;
    Var out = attention_forward(g, q, k, v, cfg, false, RandomState::from_seed(0));
    CHECK(g.value(out).data[0] == doctest::Approx(4.0).epsilon(1e-14));
    CHECK(g.value(out).data[1] == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("self-mask zeroes the attention map diagonal exactly, both variants") {
    auto rng = RandomState::from_seed(23);
    for (auto variant : {AttentionVariant::Softmax, AttentionVariant::Sigmoid}) {
        for (bool training : {true, false}) {
            Graph g;
            Var q = g.leaf(Tensor::randn({2, 2, 6, 4}, rng), false);
            Var k = g.leaf(Tensor::randn({2, 2, 6, 4}, rng), false);
            Var v = g.leaf(Tensor::randn({2, 2, 6, 4}, rng), false);
            AttentionConfig cfg;
            cfg.d_model = 8;
            cfg.n_heads = 2;
            cfg.variant = variant;
            cfg.self_mask = true;
            cfg.attn_dropout_rate = 0.1;
            Var out = attention_forward(g, q, k, v, cfg, training, rng.split(7));
            Tensor map = g.attention_map(out);
            for (size_t s = 0; s < 4; ++s)
                for (size_t i = 0; i < 6; ++i)
                    CHECK(map.data[(s * 6 + i) * 6 + i] == 0.0);
        }
    }
}

TEST_CASE("softmax map rows sum to one without mask") {
    auto rng = RandomState::from_seed(29);
    Graph g;
    Var q = g.leaf(Tensor::randn({1, 2, 8, 4}, rng), false);
    Var k = g.leaf(Tensor::randn({1, 2, 8, 4}, rng), false);
    Var v = g.leaf(Tensor::randn({1, 2, 8, 4}, rng), false);
    AttentionConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    Var out = attention_forward(g, q, k, v, cfg, false, rng.split(1));
    Tensor map = g.attention_map(out);
    for (size_t r = 0; r < 2 * 8; ++r) {
        double s = 0.0;
        for (size_t c = 0; c < 8; ++c) s += map.data[r * 8 + c];
        CHECK(std::fabs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("gsm mask examples") {
    auto rng = RandomState::from_seed(31);
    auto m = build_gsm_mask(4, true, 0.0, true, rng);
    size_t masked = 0;
    for (size_t i = 0; i < 4; ++i)
        for (size_t j = 0; j < 4; ++j)
            if (!m.keep[i * 4 + j]) {
                ++masked;
                CHECK(i == j);
            }
    CHECK(masked == 4);

    auto m2 = build_gsm_mask(16, true, 0.9, false, rng);
    for (size_t i = 0; i < 16; ++i)
        for (size_t j = 0; j < 16; ++j)
            CHECK(m2.keep[i * 16 + j] == (i == j ? 0 : 1));

    // off-diagonal mask rate concentrates around 0.1
    const size_t n = 64;
    size_t dropped = 0, total = 0;
    for (int draw = 0; draw < 100; ++draw) {
        auto mk = build_gsm_mask(n, true, 0.1, true, rng.split(100 + draw));
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                ++total;
                if (!mk.keep[i * n + j]) ++dropped;
            }
    }
    const double rate = static_cast<double>(dropped) / static_cast<double>(total);
    CHECK(rate > 0.08);
    CHECK(rate < 0.12);
}

TEST_CASE("neighbor mask examples") {
    auto m0 = build_neighbor_mask(3, 3, 0);
    for (size_t i = 0; i < 9; ++i)
        for (size_t j = 0; j < 9; ++j)
            CHECK(m0.keep[i * 9 + j] == (i == j ? 0 : 1));

    CHECK_THROWS_AS((void)build_neighbor_mask(3, 3, 1), ContractError);

    auto m1 = build_neighbor_mask(4, 4, 1);
    // corner token (0,0) masks exactly {(0,0),(0,1),(1,0),(1,1)}
    std::vector<size_t> expect_masked = {0, 1, 4, 5};
    for (size_t b = 0; b < 16; ++b) {
        const bool is_masked =
            std::find(expect_masked.begin(), expect_masked.end(), b) != expect_masked.end();
        CHECK(m1.keep[b] == (is_masked ? 0 : 1));
    }
}

TEST_CASE("entropy stats: uniform and one-hot maps") {
    const size_t n = 10;
    auto st = attention_entropy_stats(Tensor({n, n}, 1.0));
    CHECK(st.mean_row_entropy == doctest::Approx(std::log(static_cast<double>(n))).epsilon(1e-12));
    CHECK(st.max_row_mass == doctest::Approx(1.0 / n).epsilon(1e-12));
    CHECK(st.excluded_rows == 0);

    Tensor onehot({n, n}, 0.0);
    for (size_t i = 0; i < n; ++i) onehot.data[i * n + (i * 3) % n] = 2.5;
    auto st2 = attention_entropy_stats(onehot);
    CHECK(st2.mean_row_entropy == doctest::Approx(0.0));
    CHECK(st2.max_row_mass == doctest::Approx(1.0));

    Tensor with_zero_row({2, 3}, {1, 1, 1, 0, 0, 0});
    auto st3 = attention_entropy_stats(with_zero_row);
    CHECK(st3.excluded_rows == 1);
}

TEST_CASE("sigmoid spreads more than softmax on peaked maps") {
    // Gaussian bump, as in the 16x16 comparison figure.
    auto bump = gaussian_peak_map(16, 16, 5.0, 2.0, 7, 9);
    Graph g;
    Var x = g.leaf(bump, false);
    auto soft = attention_entropy_stats(g.value(g.softmax_lastaxis(x)));
    auto sig = attention_entropy_stats(g.value(g.sigmoid(x)));
    CHECK(sig.mean_row_entropy > soft.mean_row_entropy);
    CHECK(soft.max_row_mass > sig.max_row_mass);

    // Property: 100 random peaked maps, peak magnitude >= 3, all trials strict.
    auto rng = RandomState::from_seed(37);
    int wins = 0;
    for (int t = 0; t < 100; ++t) {
        auto r = rng.split(t);
        const double peak = 3.0 + 5.0 * r.next_uniform();
        const double sigma = 1.0 + 3.0 * r.next_uniform();
        const size_t pr = r.next_u64() % 16, pc = r.next_u64() % 16;
        auto m = gaussian_peak_map(16, 16, peak, sigma, pr, pc);
        Graph gg;
        Var xv = gg.leaf(m, false);
        auto so = attention_entropy_stats(gg.value(gg.softmax_lastaxis(xv)));
        auto si = attention_entropy_stats(gg.value(gg.sigmoid(xv)));
        if (si.mean_row_entropy > so.mean_row_entropy) ++wins;
    }
    CHECK(wins == 100);
}

TEST_CASE("gradcheck: attention_forward, both variants, with and without masks") {
    auto rng = RandomState::from_seed(41);
    for (auto variant : {AttentionVariant::Softmax, AttentionVariant::Sigmoid}) {
        for (bool self_mask : {false, true}) {
            auto r = rng.split(static_cast<uint64_t>(variant == AttentionVariant::Sigmoid) * 2 +
                               static_cast<uint64_t>(self_mask));
            Tensor q = Tensor::randn({1, 2, 5, 3}, r);
            Tensor k = Tensor::randn({1, 2, 5, 3}, r);
            Tensor v = Tensor::randn({1, 2, 5, 3}, r);
            Tensor proj = testutil::random_projection({1, 2, 5, 3}, r);
            AttentionConfig cfg;
            cfg.d_model = 6;
            cfg.n_heads = 2;
            cfg.variant = variant;
            cfg.self_mask = self_mask;
            cfg.attn_dropout_rate = self_mask ? 0.15 : 0.0;
            cfg.output_scale_mode = OutputScaleMode::DivideByN;
            auto mask_rng = r.split(99);
            auto res = grad_check(
                [&](Graph& g, const std::vector<Var>& vars) {
                    Var out = attention_forward(g, vars[0], vars[1], vars[2], cfg, true,
                                                mask_rng);
                    return g.sum_all(g.mul(out, g.leaf(proj, false)));
                },
                {q, k, v}, 1e-4);
            CHECK_MESSAGE(res.ok, "variant/self_mask grad rel err ", res.max_rel_err);
        }
    }
}

TEST_CASE("per-sample outputs are independent of batch composition") {
    auto rng = RandomState::from_seed(47);
    Tensor q = Tensor::randn({2, 2, 4, 3}, rng);
    Tensor k = Tensor::randn({2, 2, 4, 3}, rng);
    Tensor v = Tensor::randn({2, 2, 4, 3}, rng);
    AttentionConfig cfg;
    cfg.d_model = 6;
    cfg.n_heads = 2;
    cfg.variant = AttentionVariant::Sigmoid;
    cfg.self_mask = true;
    cfg.attn_dropout_rate = 0.2;

    auto mask_rng = rng.split(5);
    Graph g;
    Var out = attention_forward(g, g.leaf(q, false), g.leaf(k, false), g.leaf(v, false), cfg,
                                true, mask_rng);
    // First sample alone, same rng, must reproduce the batched rows bitwise.
    auto slice = [](const Tensor& t) {
        Tensor s({1, 2, 4, 3});
        std::copy_n(t.data.begin(), 2 * 4 * 3, s.data.begin());
        return s;
    };
    Graph g2;
    Var out2 = attention_forward(g2, g2.leaf(slice(q), false), g2.leaf(slice(k), false),
                                 g2.leaf(slice(v), false), cfg, true, mask_rng);
    CHECK(std::memcmp(g.value(out).data.data(), g2.value(out2).data.data(),
                      2 * 4 * 3 * sizeof(double)) == 0);
}

TEST_CASE("fully masked softmax row is a contract error") {
    Graph g;
    auto rng = RandomState::from_seed(53);
    Var q = g.leaf(Tensor::randn({1, 1, 1, 2}, rng), false);
    Var k = g.leaf(Tensor::randn({1, 1, 1, 2}, rng), false);
    Var v = g.leaf(Tensor::randn({1, 1, 1, 2}, rng), false);
    AttentionConfig cfg;
    cfg.d_model = 2;
    cfg.n_heads = 1;
    cfg.self_mask = true; // N=1 with self mask masks the whole row
    CHECK_THROWS_AS((void)attention_forward(g, q, k, v, cfg, false, rng), ContractError);
}

TEST_CASE("NMA requires the softmax variant") {
    AttentionConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.variant = AttentionVariant::Sigmoid;
    cfg.neighbor_mask_radius = 1;
    CHECK_THROWS_AS(cfg.validate(), ParameterError);
}
