#pragma once

#include <functional>
#include <vector>

#include "sbk/tensor.hpp"

namespace sbk {

// A differentiable map R^D -> R^D packaged for probing.
struct VectorMap {
    size_t dim = 0;
    // forward value
    std::function<std::vector<double>(const std::vector<double>&)> eval;
    // vector-Jacobian product v^T J at x (reverse mode); optional
    std::function<std::vector<double>(const std::vector<double>&, const std::vector<double>&)>
        vjp;
};

// Full D x D Jacobian by central differencing one input column at a time.
Tensor fd_jacobian(const VectorMap& f, const std::vector<double>& x, double h = 1e-6);

// Full Jacobian from D reverse-mode passes (row i = e_i^T J).
Tensor reverse_jacobian(const VectorMap& f, const std::vector<double>& x);

// Singular values, descending.
std::vector<double> singular_values(const Tensor& m);

// Count of singular values with sigma_j / sigma_1 > rel_tol.
size_t numerical_rank(const std::vector<double>& sigma, double rel_tol = 1e-6);

} // namespace sbk
