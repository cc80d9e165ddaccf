// Times the OpenMP kernels against the serial reference and reports GFLOP/s.

#include <chrono>
#include <cstdio>
#include <vector>

#include <omp.h>

#include "sbk/kernels.hpp"
#include "sbk/rng.hpp"

namespace K = sbk::kernels;

namespace {

double now_s() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

template <typename F>
double time_best_of(F&& fn, int reps) {
    double best = 1e300;
    for (int i = 0; i < reps; ++i) {
        const double t0 = now_s();
        fn();
        best = std::min(best, now_s() - t0);
    }
    return best;
}

std::vector<double> randvec(size_t n, sbk::RandomState& r) {
    std::vector<double> v(n);
    for (auto& x : v) x = r.next_gauss();
    return v;
}

void bench_matmul(size_t batch, size_t m, size_t k, size_t n) {
    auto rng = sbk::RandomState::from_seed(1);
    auto a = randvec(batch * m * k, rng);
    auto b = randvec(batch * k * n, rng);
    std::vector<double> c(batch * m * n);
    const double flops = 2.0 * static_cast<double>(batch * m * k * n);
    const double ts = time_best_of(
        [&] { K::serial::matmul_nn(c.data(), a.data(), b.data(), batch, m, k, n, m * k, k * n); },
        3);
    const double tp = time_best_of(
        [&] { K::matmul_nn(c.data(), a.data(), b.data(), batch, m, k, n, m * k, k * n); }, 3);
    std::printf("matmul_nn  %zux[%zux%zux%zu]  serial %7.2f GF/s  parallel %7.2f GF/s  speedup %.2fx\n",
                batch, m, k, n, flops / ts * 1e-9, flops / tp * 1e-9, ts / tp);
}

void bench_softmax(size_t rows, size_t cols) {
    auto rng = sbk::RandomState::from_seed(2);
    auto x = randvec(rows * cols, rng);
    std::vector<double> y(rows * cols);
    const double flops = 4.0 * static_cast<double>(rows * cols);
    const double ts =
        time_best_of([&] { K::serial::softmax_rows(y.data(), x.data(), rows, cols); }, 5);
    const double tp = time_best_of([&] { K::softmax_rows(y.data(), x.data(), rows, cols); }, 5);
    std::printf("softmax    [%zux%zu]        serial %7.2f GF/s  parallel %7.2f GF/s  speedup %.2fx\n",
                rows, cols, flops / ts * 1e-9, flops / tp * 1e-9, ts / tp);
}

void bench_layernorm(size_t rows, size_t cols) {
    auto rng = sbk::RandomState::from_seed(3);
    auto x = randvec(rows * cols, rng);
    std::vector<double> y(rows * cols), h(rows * cols), s(rows);
    std::vector<double> gamma(cols, 1.0), beta(cols, 0.0);
    const double flops = 8.0 * static_cast<double>(rows * cols);
    const double ts = time_best_of(
        [&] {
            K::serial::layernorm_rows(y.data(), h.data(), s.data(), x.data(), gamma.data(),
                                      beta.data(), rows, cols, 1e-6);
        },
        5);
    const double tp = time_best_of(
        [&] {
            K::layernorm_rows(y.data(), h.data(), s.data(), x.data(), gamma.data(),
                              beta.data(), rows, cols, 1e-6);
        },
        5);
    std::printf("layernorm  [%zux%zu]        serial %7.2f GF/s  parallel %7.2f GF/s  speedup %.2fx\n",
                rows, cols, flops / ts * 1e-9, flops / tp * 1e-9, ts / tp);
}

} // namespace

int main() {
    std::printf("threads: %d\n", omp_get_max_threads());
    bench_matmul(32, 64, 64, 64);
    bench_matmul(32, 64, 64, 256);
    bench_matmul(8, 256, 64, 256);
    bench_matmul(1, 512, 512, 512);
    bench_softmax(8192, 64);
    bench_softmax(2048, 256);
    bench_layernorm(16384, 64);
    return 0;
}
