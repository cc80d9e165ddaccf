#pragma once

#include <cstddef>

namespace sbk::kernels {

// Numeric inner loops shared by the autodiff ops. The parallel versions
// split work over independent output elements only; every output element is
// accumulated in the same fixed order as in the serial reference, so results
// are bitwise identical at any thread count. kernels::serial holds the
// straightforward reference implementations used by the equivalence tests
// and the benchmark.

// C[b] = A[b] * B[b], A: [m,k], B: [k,n], C: [m,n], `batch` slabs.
// strideA/strideB are 0 when that operand is shared across the batch.
void matmul_nn(double* c, const double* a, const double* b,
               size_t batch, size_t m, size_t k, size_t n,
               size_t stride_a, size_t stride_b);

// C[b] = A[b] * B[b]^T, A: [m,k], B: [n,k], C: [m,n].
void matmul_nt(double* c, const double* a, const double* b,
               size_t batch, size_t m, size_t k, size_t n,
               size_t stride_a, size_t stride_b);

// C[b] = A[b]^T * B[b], A: [m,k], B: [m,n], C: [k,n].
void matmul_tn(double* c, const double* a, const double* b,
               size_t batch, size_t m, size_t k, size_t n,
               size_t stride_a, size_t stride_b);

// Like matmul_tn but sums the per-slab products into a single [k,n] result
// (weight gradients). Slabs are accumulated in ascending order.
void matmul_tn_acc(double* c, const double* a, const double* b,
                   size_t batch, size_t m, size_t k, size_t n);

void ew_add(double* out, const double* a, const double* b, size_t n);
void ew_sub(double* out, const double* a, const double* b, size_t n);
void ew_mul(double* out, const double* a, const double* b, size_t n);
void ew_axpy(double* out, double alpha, const double* x, size_t n); // out += alpha*x
void ew_scale(double* out, const double* a, double alpha, size_t n);
void ew_add_scalar(double* out, const double* a, double c, size_t n);

void sigmoid_fwd(double* out, const double* x, size_t n);
void gelu_fwd(double* out, const double* x, size_t n);
// dx += g * gelu'(x)
void gelu_bwd_acc(double* dx, const double* g, const double* x, size_t n);

// Row-wise softmax with max subtraction; rows of length `cols`.
void softmax_rows(double* out, const double* x, size_t rows, size_t cols);
// dx += (g - sum(g*y)) * y per row.
void softmax_bwd_acc(double* dx, const double* g, const double* y,
                     size_t rows, size_t cols);

// y = gamma * (x - mean) / sqrt(var + eps) + beta per row; saves xhat and
// inv_std for the backward pass.
void layernorm_rows(double* y, double* xhat, double* inv_std,
                    const double* x, const double* gamma, const double* beta,
                    size_t rows, size_t cols, double eps);
void layernorm_bwd_acc(double* dx, double* dgamma, double* dbeta,
                       const double* g, const double* xhat, const double* inv_std,
                       const double* gamma, size_t rows, size_t cols);

double sum_all(const double* x, size_t n);

// [B, N, H*dk] -> [B, H, N, dk] and back.
void split_heads(double* out, const double* x, size_t b, size_t n, size_t h, size_t dk);
void merge_heads(double* out, const double* x, size_t b, size_t n, size_t h, size_t dk);

// Swap the last two axes of `batch` [r, c] slabs.
void transpose_last2(double* out, const double* x, size_t batch, size_t r, size_t c);

namespace serial {
void matmul_nn(double* c, const double* a, const double* b,
               size_t batch, size_t m, size_t k, size_t n,
               size_t stride_a, size_t stride_b);
void matmul_nt(double* c, const double* a, const double* b,
               size_t batch, size_t m, size_t k, size_t n,
               size_t stride_a, size_t stride_b);
void matmul_tn(double* c, const double* a, const double* b,
               size_t batch, size_t m, size_t k, size_t n,
               size_t stride_a, size_t stride_b);
void softmax_rows(double* out, const double* x, size_t rows, size_t cols);
void layernorm_rows(double* y, double* xhat, double* inv_std,
                    const double* x, const double* gamma, const double* beta,
                    size_t rows, size_t cols, double eps);
void ew_mul(double* out, const double* a, const double* b, size_t n);
void gelu_fwd(double* out, const double* x, size_t n);
} // namespace serial

} // namespace sbk::kernels
