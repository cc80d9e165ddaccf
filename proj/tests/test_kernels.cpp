#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <vector>

#include "sbk/kernels.hpp"
#include "sbk/rng.hpp"
#include "sbk/tensor.hpp"

using namespace sbk;
namespace K = sbk::kernels;

// The OpenMP kernels must match the serial reference bitwise: parallelism is
// over independent output elements and each element accumulates in the same
// order, so there is no rounding drift to tolerate.

namespace {
std::vector<double> randvec(size_t n, RandomState& r) {
    std::vector<double> v(n);
    for (auto& x : v) x = r.next_gauss();
    return v;
}
bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * 8) == 0;
}
} // namespace

TEST_CASE("matmul_nn parallel == serial bitwise") {
    for (int t = 0; t < 30; ++t) {
        auto r = RandomState::from_seed(10 + t);
        size_t batch = 1 + r.next_u64() % 4, m = 1 + r.next_u64() % 17,
               k = 1 + r.next_u64() % 17, n = 1 + r.next_u64() % 17;
        auto a = randvec(batch * m * k, r);
        auto b = randvec(batch * k * n, r);
        std::vector<double> c1(batch * m * n), c2(batch * m * n);
        K::matmul_nn(c1.data(), a.data(), b.data(), batch, m, k, n, m * k, k * n);
        K::serial::matmul_nn(c2.data(), a.data(), b.data(), batch, m, k, n, m * k, k * n);
        CHECK(bits_equal(c1, c2));
        // shared B
        K::matmul_nn(c1.data(), a.data(), b.data(), batch, m, k, n, m * k, 0);
        K::serial::matmul_nn(c2.data(), a.data(), b.data(), batch, m, k, n, m * k, 0);
        CHECK(bits_equal(c1, c2));
    }
}

TEST_CASE("matmul_nt parallel == serial bitwise") {
    for (int t = 0; t < 30; ++t) {
        auto r = RandomState::from_seed(50 + t);
        size_t batch = 1 + r.next_u64() % 4, m = 1 + r.next_u64() % 17,
               k = 1 + r.next_u64() % 17, n = 1 + r.next_u64() % 17;
        auto a = randvec(batch * m * k, r);
        auto b = randvec(batch * n * k, r);
        std::vector<double> c1(batch * m * n), c2(batch * m * n);
        K::matmul_nt(c1.data(), a.data(), b.data(), batch, m, k, n, m * k, n * k);
        K::serial::matmul_nt(c2.data(), a.data(), b.data(), batch, m, k, n, m * k, n * k);
        CHECK(bits_equal(c1, c2));
    }
}

TEST_CASE("matmul_tn parallel == serial bitwise") {
    for (int t = 0; t < 30; ++t) {
        auto r = RandomState::from_seed(90 + t);
        size_t batch = 1 + r.next_u64() % 4, m = 1 + r.next_u64() % 17,
               k = 1 + r.next_u64() % 17, n = 1 + r.next_u64() % 17;
        auto a = randvec(batch * m * k, r);
        auto b = randvec(batch * m * n, r);
        std::vector<double> c1(batch * k * n), c2(batch * k * n);
        K::matmul_tn(c1.data(), a.data(), b.data(), batch, m, k, n, m * k, m * n);
        K::serial::matmul_tn(c2.data(), a.data(), b.data(), batch, m, k, n, m * k, m * n);
        CHECK(bits_equal(c1, c2));
    }
}

TEST_CASE("softmax/layernorm/elementwise parallel == serial bitwise") {
    for (int t = 0; t < 20; ++t) {
        auto r = RandomState::from_seed(130 + t);
        size_t rows = 1 + r.next_u64() % 33, cols = 1 + r.next_u64() % 33;
        auto x = randvec(rows * cols, r);
        std::vector<double> y1(rows * cols), y2(rows * cols);
        K::softmax_rows(y1.data(), x.data(), rows, cols);
        K::serial::softmax_rows(y2.data(), x.data(), rows, cols);
        CHECK(bits_equal(y1, y2));

        auto gamma = randvec(cols, r);
        auto beta = randvec(cols, r);
        std::vector<double> h1(rows * cols), h2(rows * cols), s1(rows), s2(rows);
        K::layernorm_rows(y1.data(), h1.data(), s1.data(), x.data(), gamma.data(),
                          beta.data(), rows, cols, 1e-6);
        K::serial::layernorm_rows(y2.data(), h2.data(), s2.data(), x.data(), gamma.data(),
                                  beta.data(), rows, cols, 1e-6);
        CHECK(bits_equal(y1, y2));
        CHECK(bits_equal(h1, h2));

        auto b = randvec(rows * cols, r);
        K::ew_mul(y1.data(), x.data(), b.data(), x.size());
        K::serial::ew_mul(y2.data(), x.data(), b.data(), x.size());
        CHECK(bits_equal(y1, y2));

        K::gelu_fwd(y1.data(), x.data(), x.size());
        K::serial::gelu_fwd(y2.data(), x.data(), x.size());
        CHECK(bits_equal(y1, y2));
    }
}
