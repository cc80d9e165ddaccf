#include "sbk/kernels.hpp"

#include <cmath>
#include <vector>

namespace sbk::kernels {

namespace {
constexpr double kInvSqrt2 = 0.707106781186547524;
} // namespace

void matmul_nn(double* c, const double* a, const double* b,
               size_t batch, size_t m, size_t k, size_t n,
               size_t stride_a, size_t stride_b) {
#pragma omp parallel for collapse(2) schedule(static)
    for (size_t bi = 0; bi < batch; ++bi) {
        for (size_t i = 0; i < m; ++i) {
            const double* ab = a + bi * stride_a + i * k;
            const double* bb = b + bi * stride_b;
            double* cb = c + (bi * m + i) * n;
            for (size_t j = 0; j < n; ++j) cb[j] = 0.0;
            for (size_t l = 0; l < k; ++l) {
                const double av = ab[l];
                const double* br = bb + l * n;
#pragma omp simd
                for (size_t j = 0; j < n; ++j) cb[j] = std::fma(av, br[j], cb[j]);
            }
        }
    }
}

void matmul_nt(double* c, const double* a, const double* b,
               size_t batch, size_t m, size_t k, size_t n,
               size_t stride_a, size_t stride_b) {
    // Transpose each B slab and run the saxpy form so every output element
    // accumulates in ascending l order (same rounding as the serial dot).
#pragma omp parallel for schedule(static)
    for (size_t bi = 0; bi < batch; ++bi) {
        const double* bb = b + bi * stride_b;
        std::vector<double> bt(k * n);
        for (size_t j = 0; j < n; ++j)
            for (size_t l = 0; l < k; ++l) bt[l * n + j] = bb[j * k + l];
        for (size_t i = 0; i < m; ++i) {
            const double* ar = a + bi * stride_a + i * k;
            double* cb = c + (bi * m + i) * n;
            for (size_t j = 0; j < n; ++j) cb[j] = 0.0;
            for (size_t l = 0; l < k; ++l) {
                const double av = ar[l];
                const double* br = bt.data() + l * n;
#pragma omp simd
                for (size_t j = 0; j < n; ++j) cb[j] = std::fma(av, br[j], cb[j]);
            }
        }
    }
}

void matmul_tn(double* c, const double* a, const double* b,
               size_t batch, size_t m, size_t k, size_t n,
               size_t stride_a, size_t stride_b) {
#pragma omp parallel for collapse(2) schedule(static)
    for (size_t bi = 0; bi < batch; ++bi) {
        for (size_t l = 0; l < k; ++l) {
            const double* ab = a + bi * stride_a;
            const double* bb = b + bi * stride_b;
            double* cb = c + (bi * k + l) * n;
            for (size_t j = 0; j < n; ++j) cb[j] = 0.0;
            for (size_t i = 0; i < m; ++i) {
                const double av = ab[i * k + l];
                const double* br = bb + i * n;
#pragma omp simd
                for (size_t j = 0; j < n; ++j) cb[j] = std::fma(av, br[j], cb[j]);
            }
        }
    }
}

void matmul_tn_acc(double* c, const double* a, const double* b,
                   size_t batch, size_t m, size_t k, size_t n) {
#pragma omp parallel for schedule(static)
    for (size_t l = 0; l < k; ++l) {
        double* cb = c + l * n;
        for (size_t j = 0; j < n; ++j) cb[j] = 0.0;
        for (size_t bi = 0; bi < batch; ++bi) {
            const double* ab = a + bi * m * k;
            const double* bb = b + bi * m * n;
            for (size_t i = 0; i < m; ++i) {
                const double av = ab[i * k + l];
                const double* br = bb + i * n;
#pragma omp simd
                for (size_t j = 0; j < n; ++j) cb[j] = std::fma(av, br[j], cb[j]);
            }
        }
    }
}

void ew_add(double* out, const double* a, const double* b, size_t n) {
#pragma omp parallel for simd schedule(static)
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void ew_sub(double* out, const double* a, const double* b, size_t n) {
#pragma omp parallel for simd schedule(static)
    for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void ew_mul(double* out, const double* a, const double* b, size_t n) {
#pragma omp parallel for simd schedule(static)
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void ew_axpy(double* out, double alpha, const double* x, size_t n) {
#pragma omp parallel for simd schedule(static)
    for (size_t i = 0; i < n; ++i) out[i] += alpha * x[i];
}

void ew_scale(double* out, const double* a, double alpha, size_t n) {
#pragma omp parallel for simd schedule(static)
    for (size_t i = 0; i < n; ++i) out[i] = alpha * a[i];
}

void ew_add_scalar(double* out, const double* a, double c, size_t n) {
#pragma omp parallel for simd schedule(static)
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + c;
}

void sigmoid_fwd(double* out, const double* x, size_t n) {
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < n; ++i) {
        const double v = x[i];
        // Branch on sign so exp() never overflows.
        out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                          : std::exp(v) / (1.0 + std::exp(v));
    }
}

void gelu_fwd(double* out, const double* x, size_t n) {
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < n; ++i)
        out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * kInvSqrt2));
}

void gelu_bwd_acc(double* dx, const double* g, const double* x, size_t n) {
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < n; ++i) {
        const double v = x[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = 0.3989422804014326779 * std::exp(-0.5 * v * v);
        dx[i] += g[i] * (cdf + v * pdf);
    }
}

void softmax_rows(double* out, const double* x, size_t rows, size_t cols) {
#pragma omp parallel for schedule(static)
    for (size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * cols;
        double* yr = out + r * cols;
        double mx = xr[0];
        for (size_t j = 1; j < cols; ++j) mx = xr[j] > mx ? xr[j] : mx;
        double s = 0.0;
        for (size_t j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            s += yr[j];
        }
        const double inv = 1.0 / s;
        for (size_t j = 0; j < cols; ++j) yr[j] *= inv;
    }
}

void softmax_bwd_acc(double* dx, const double* g, const double* y,
                     size_t rows, size_t cols) {
#pragma omp parallel for schedule(static)
    for (size_t r = 0; r < rows; ++r) {
        const double* gr = g + r * cols;
        const double* yr = y + r * cols;
        double* dr = dx + r * cols;
        double dot = 0.0;
        for (size_t j = 0; j < cols; ++j) dot += gr[j] * yr[j];
        for (size_t j = 0; j < cols; ++j) dr[j] += (gr[j] - dot) * yr[j];
    }
}

void layernorm_rows(double* y, double* xhat, double* inv_std,
                    const double* x, const double* gamma, const double* beta,
                    size_t rows, size_t cols, double eps) {
#pragma omp parallel for schedule(static)
    for (size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * cols;
        double* yr = y + r * cols;
        double* hr = xhat + r * cols;
        double mean = 0.0;
        for (size_t j = 0; j < cols; ++j) mean += xr[j];
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (size_t j = 0; j < cols; ++j) {
            const double d = xr[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[r] = istd;
        for (size_t j = 0; j < cols; ++j) {
            hr[j] = (xr[j] - mean) * istd;
            yr[j] = gamma[j] * hr[j] + beta[j];
        }
    }
}

void layernorm_bwd_acc(double* dx, double* dgamma, double* dbeta,
                       const double* g, const double* xhat, const double* inv_std,
                       const double* gamma, size_t rows, size_t cols) {
#pragma omp parallel for schedule(static)
    for (size_t r = 0; r < rows; ++r) {
        const double* gr = g + r * cols;
        const double* hr = xhat + r * cols;
        double* dr = dx + r * cols;
        double m1 = 0.0, m2 = 0.0;
        for (size_t j = 0; j < cols; ++j) {
            const double gg = gr[j] * gamma[j];
            m1 += gg;
            m2 += gg * hr[j];
        }
        m1 /= static_cast<double>(cols);
        m2 /= static_cast<double>(cols);
        for (size_t j = 0; j < cols; ++j)
            dr[j] += (gr[j] * gamma[j] - m1 - hr[j] * m2) * inv_std[r];
    }
    // Column reductions, parallel over columns so each sum keeps row order.
#pragma omp parallel for schedule(static)
    for (size_t j = 0; j < cols; ++j) {
        double sg = 0.0, sb = 0.0;
        for (size_t r = 0; r < rows; ++r) {
            sg += g[r * cols + j] * xhat[r * cols + j];
            sb += g[r * cols + j];
        }
        dgamma[j] += sg;
        dbeta[j] += sb;
    }
}

double sum_all(const double* x, size_t n) {
    // Serial on purpose: a fixed summation order keeps runs bit-identical.
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += x[i];
    return s;
}

void split_heads(double* out, const double* x, size_t b, size_t n, size_t h, size_t dk) {
#pragma omp parallel for collapse(2) schedule(static)
    for (size_t bi = 0; bi < b; ++bi) {
        for (size_t hi = 0; hi < h; ++hi) {
            for (size_t t = 0; t < n; ++t) {
                const double* src = x + (bi * n + t) * h * dk + hi * dk;
                double* dst = out + ((bi * h + hi) * n + t) * dk;
                for (size_t j = 0; j < dk; ++j) dst[j] = src[j];
            }
        }
    }
}

void merge_heads(double* out, const double* x, size_t b, size_t n, size_t h, size_t dk) {
#pragma omp parallel for collapse(2) schedule(static)
    for (size_t bi = 0; bi < b; ++bi) {
        for (size_t t = 0; t < n; ++t) {
            for (size_t hi = 0; hi < h; ++hi) {
                const double* src = x + ((bi * h + hi) * n + t) * dk;
                double* dst = out + (bi * n + t) * h * dk + hi * dk;
                for (size_t j = 0; j < dk; ++j) dst[j] = src[j];
            }
        }
    }
}

void transpose_last2(double* out, const double* x, size_t batch, size_t r, size_t c) {
#pragma omp parallel for schedule(static)
    for (size_t bi = 0; bi < batch; ++bi) {
        const double* xb = x + bi * r * c;
        double* ob = out + bi * r * c;
        for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < c; ++j) ob[j * r + i] = xb[i * c + j];
    }
}

namespace serial {

void matmul_nn(double* c, const double* a, const double* b,
               size_t batch, size_t m, size_t k, size_t n,
               size_t stride_a, size_t stride_b) {
    for (size_t bi = 0; bi < batch; ++bi)
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (size_t l = 0; l < k; ++l)
                    s = std::fma(a[bi * stride_a + i * k + l], b[bi * stride_b + l * n + j], s);
                c[(bi * m + i) * n + j] = s;
            }
}

void matmul_nt(double* c, const double* a, const double* b,
               size_t batch, size_t m, size_t k, size_t n,
               size_t stride_a, size_t stride_b) {
    for (size_t bi = 0; bi < batch; ++bi)
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (size_t l = 0; l < k; ++l)
                    s = std::fma(a[bi * stride_a + i * k + l], b[bi * stride_b + j * k + l], s);
                c[(bi * m + i) * n + j] = s;
            }
}

void matmul_tn(double* c, const double* a, const double* b,
               size_t batch, size_t m, size_t k, size_t n,
               size_t stride_a, size_t stride_b) {
    for (size_t bi = 0; bi < batch; ++bi)
        for (size_t l = 0; l < k; ++l)
            for (size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (size_t i = 0; i < m; ++i)
                    s = std::fma(a[bi * stride_a + i * k + l], b[bi * stride_b + i * n + j], s);
                c[(bi * k + l) * n + j] = s;
            }
}

void softmax_rows(double* out, const double* x, size_t rows, size_t cols) {
    for (size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * cols;
        double* yr = out + r * cols;
        double mx = xr[0];
        for (size_t j = 1; j < cols; ++j) mx = xr[j] > mx ? xr[j] : mx;
        double s = 0.0;
        for (size_t j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            s += yr[j];
        }
        const double inv = 1.0 / s;
        for (size_t j = 0; j < cols; ++j) yr[j] *= inv;
    }
}

void layernorm_rows(double* y, double* xhat, double* inv_std,
                    const double* x, const double* gamma, const double* beta,
                    size_t rows, size_t cols, double eps) {
    for (size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * cols;
        double mean = 0.0;
        for (size_t j = 0; j < cols; ++j) mean += xr[j];
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (size_t j = 0; j < cols; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<double>(cols);
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[r] = istd;
        for (size_t j = 0; j < cols; ++j) {
            xhat[r * cols + j] = (xr[j] - mean) * istd;
            y[r * cols + j] = gamma[j] * xhat[r * cols + j] + beta[j];
        }
    }
}

void ew_mul(double* out, const double* a, const double* b, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void gelu_fwd(double* out, const double* x, size_t n) {
    for (size_t i = 0; i < n; ++i)
        out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * kInvSqrt2));
}

} // namespace serial

} // namespace sbk::kernels
