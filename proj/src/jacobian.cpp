#include "sbk/jacobian.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "sbk/errors.hpp"

namespace sbk {

Tensor fd_jacobian(const VectorMap& f, const std::vector<double>& x, double h) {
    const size_t d = f.dim;
    if (x.size() != d) throw DimensionError("fd_jacobian: input size mismatch");
    Tensor jac({d, d});
    std::vector<double> xp = x;
    for (size_t c = 0; c < d; ++c) {
        const double orig = xp[c];
        xp[c] = orig + h;
        const auto fp = f.eval(xp);
        xp[c] = orig - h;
        const auto fm = f.eval(xp);
        xp[c] = orig;
        for (size_t r = 0; r < d; ++r) jac.data[r * d + c] = (fp[r] - fm[r]) / (2.0 * h);
    }
    return jac;
}

Tensor reverse_jacobian(const VectorMap& f, const std::vector<double>& x) {
    const size_t d = f.dim;
    if (!f.vjp) throw ContractError("reverse_jacobian: map has no vjp");
    Tensor jac({d, d});
    std::vector<double> e(d, 0.0);
    for (size_t r = 0; r < d; ++r) {
        e[r] = 1.0;
        const auto row = f.vjp(x, e);
        e[r] = 0.0;
        for (size_t c = 0; c < d; ++c) jac.data[r * d + c] = row[c];
    }
    return jac;
}

std::vector<double> singular_values(const Tensor& m) {
    if (m.ndim() != 2) throw DimensionError("singular_values: want a matrix");
    const auto rows = static_cast<Eigen::Index>(m.shape[0]);
    const auto cols = static_cast<Eigen::Index>(m.shape[1]);
    Eigen::MatrixXd a(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
            a(r, c) = m.data[static_cast<size_t>(r) * m.shape[1] + static_cast<size_t>(c)];
    Eigen::BDCSVD<Eigen::MatrixXd> svd(a);
    const auto& sv = svd.singularValues();
    return std::vector<double>(sv.data(), sv.data() + sv.size());
}

size_t numerical_rank(const std::vector<double>& sigma, double rel_tol) {
    if (sigma.empty() || sigma[0] <= 0.0) return 0;
    size_t rank = 0;
    for (double s : sigma)
        if (s / sigma[0] > rel_tol) ++rank;
    return rank;
}

} // namespace sbk
